#pragma once

// Bristol Fashion boolean circuits: parsing, validation, serialisation and
// bitsliced plaintext evaluation (64 independent instances per word).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shapmkt {

enum class GateKind : std::uint8_t { kXor, kAnd, kInv, kEq, kEqw };
const char* GateKindName(GateKind k);

struct Gate {
  GateKind kind = GateKind::kXor;
  std::uint32_t in0 = 0;  // constant bit for kEq
  std::uint32_t in1 = 0;  // kXor / kAnd only
  std::uint32_t out = 0;
  bool operator==(const Gate&) const = default;
};

struct BristolCircuit {
  std::uint32_t wire_count = 0;
  std::vector<std::uint32_t> input_sizes;
  std::vector<std::uint32_t> output_sizes;
  std::vector<Gate> gates;

  std::size_t gate_count() const { return gates.size(); }
  std::uint32_t input_bits() const;
  std::uint32_t output_bits() const;
  bool operator==(const BristolCircuit&) const = default;
};

struct CircuitStats {
  std::size_t xor_gates = 0, and_gates = 0, inv_gates = 0, eq_gates = 0, eqw_gates = 0;
  std::size_t and_depth = 0;
};

// Gates grouped for round-based evaluation: round r first evaluates the AND
// gates of depth r (whose inputs are all ready), then the free gates whose
// inputs became ready at depth r, in file order.
struct CircuitSchedule {
  std::vector<std::vector<std::uint32_t>> and_levels;   // index r-1 for depth r >= 1
  std::vector<std::vector<std::uint32_t>> free_levels;  // index r for depth r >= 0
};

BristolCircuit ParseBristol(std::string_view text);
BristolCircuit LoadBristol(const std::string& path);
std::string SerializeBristol(const BristolCircuit& c);
void SaveBristol(const BristolCircuit& c, const std::string& path);

// Throws a validation error describing the first violated rule.
void ValidateBristol(const BristolCircuit& c);

CircuitStats ComputeStats(const BristolCircuit& c);
CircuitSchedule ComputeSchedule(const BristolCircuit& c);

// Lane layout: a group of b bits over W words is stored [bit][word].
using Lanes = std::vector<std::uint64_t>;
inline std::size_t WordsFor(std::size_t instances) { return (instances + 63) / 64; }

std::vector<Lanes> EvalPlainLanes(const BristolCircuit& c, std::span<const Lanes> inputs,
                                  std::size_t words);
// Single instance, one byte (0 or 1) per bit.
std::vector<std::vector<std::uint8_t>> EvalPlain(const BristolCircuit& c,
                                                 std::span<const std::vector<std::uint8_t>> inputs);

// Bit vectors with the most significant bit of each byte first.
std::vector<std::uint8_t> BytesToBits(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> BitsToBytes(std::span<const std::uint8_t> bits);

}  // namespace shapmkt
