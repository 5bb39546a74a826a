#pragma once

// Circuit construction with constant folding, and generators for the AES-256
// block cipher and the SHA-256 compression function.
//
// I/O conventions of the generated circuits (bits MSB-first within each byte,
// bytes in natural order):
//   AES-256:  inputs (key 256, block 128)          -> ciphertext 128
//   SHA-256:  inputs (block 512, chaining value 256) -> next chaining value 256

#include <array>
#include <cstdint>
#include <vector>

#include "shapmkt/bristol.h"

namespace shapmkt {

class CircuitBuilder {
 public:
  // A wire, or a known constant.
  struct Bit {
    std::int64_t wire = -1;
    bool value = false;
    bool is_const() const { return wire < 0; }
  };
  static Bit Const(bool v) { return Bit{-1, v}; }

  explicit CircuitBuilder(std::vector<std::uint32_t> input_sizes);

  // Bits of input group g, in file order.
  std::vector<Bit> Input(std::size_t g) const;

  Bit Xor(Bit a, Bit b);
  Bit And(Bit a, Bit b);
  Bit Not(Bit a);

  BristolCircuit Finish(const std::vector<std::vector<Bit>>& outputs);

 private:
  std::uint32_t NewWire() { return next_wire_++; }

  std::vector<std::uint32_t> input_sizes_;
  std::vector<std::uint32_t> input_base_;
  std::uint32_t next_wire_ = 0;
  std::vector<Gate> gates_;
};

const BristolCircuit& Aes256Circuit();
const BristolCircuit& Sha256CompressCircuit();

BristolCircuit BuildAes256Circuit();
BristolCircuit BuildSha256CompressCircuit();

inline constexpr std::array<std::uint32_t, 8> kSha256Iv = {
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};

}  // namespace shapmkt
