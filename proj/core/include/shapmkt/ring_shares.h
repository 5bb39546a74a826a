#pragma once

// Fixed-point encoding over Z_{2^k} and additive secret sharing.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "shapmkt/rng.h"

namespace shapmkt {

// Ring width and fraction bits. Constructing an invalid configuration throws.
class FixCfg {
 public:
  static constexpr unsigned kMinHeadroom = 8;

  FixCfg() : FixCfg(64, 16) {}
  FixCfg(unsigned k, unsigned f);

  unsigned k() const { return k_; }
  unsigned f() const { return f_; }
  std::uint64_t mask() const { return mask_; }
  std::size_t element_bytes() const { return (k_ + 7) / 8; }

  std::uint64_t Reduce(std::uint64_t v) const { return v & mask_; }
  std::uint64_t Add(std::uint64_t a, std::uint64_t b) const { return (a + b) & mask_; }
  std::uint64_t Sub(std::uint64_t a, std::uint64_t b) const { return (a - b) & mask_; }
  std::uint64_t Mul(std::uint64_t a, std::uint64_t b) const { return (a * b) & mask_; }
  std::uint64_t Neg(std::uint64_t a) const { return (0 - a) & mask_; }

  // Two's-complement view of a ring element.
  std::int64_t Signed(std::uint64_t v) const;
  std::uint64_t FromSigned(std::int64_t v) const { return static_cast<std::uint64_t>(v) & mask_; }
  // floor(signed(v) / 2^bits), reduced back into the ring.
  std::uint64_t ArithShift(std::uint64_t v, unsigned bits) const;

  // Largest magnitude accepted by fx_encode: 2^(k-f-1).
  double EncodeBound() const;

  bool operator==(const FixCfg&) const = default;

 private:
  unsigned k_;
  unsigned f_;
  std::uint64_t mask_;
};

struct RingVal {
  std::uint64_t v = 0;
  bool operator==(const RingVal&) const = default;
};

// n additive pieces; piece i belongs to party i. `party_count` is the declared
// sharing arity, so a short `pieces` list is detectable.
struct ShareSet {
  std::size_t party_count = 0;
  std::vector<RingVal> pieces;
};

RingVal FxEncode(double x, const FixCfg& cfg = {});
double FxDecode(RingVal v, const FixCfg& cfg = {});

ShareSet ShareN(RingVal x, std::size_t n, Rng& rng, const FixCfg& cfg = {});
RingVal Reconstruct(const ShareSet& s, const FixCfg& cfg = {});

// Protocol for lifting a two-party sharing (a held by one party, b by
// another) to an n-party sharing: each holder reshares its piece into n
// sub-pieces and party t keeps the sum of the two sub-pieces addressed to it.
std::vector<RingVal> Convert2ToN(RingVal a, RingVal b, std::size_t n, Rng& rng,
                                 const FixCfg& cfg = {});

// Vector forms used by the engine. Result is indexed [party][coordinate].
std::vector<std::vector<std::uint64_t>> ShareVector(std::span<const std::uint64_t> values,
                                                    std::size_t n, Rng& rng,
                                                    const FixCfg& cfg);
std::vector<std::uint64_t> ReconstructVector(
    std::span<const std::vector<std::uint64_t>> pieces, const FixCfg& cfg);

}  // namespace shapmkt
