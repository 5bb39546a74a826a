#pragma once

// Semi-honest arithmetic MPC over additive shares with a trusted dealer.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapmkt/ring_shares.h"
#include "shapmkt/rng.h"
#include "shapmkt/transport.h"

namespace shapmkt {

using Shape = std::vector<std::size_t>;
std::size_t ShapeSize(const Shape& s);

// A tensor whose coordinates are additively shared among `holders`.
// pieces[i] is the piece tensor of holders[i]; holders[0] absorbs public
// constants.
struct SharedTensor {
  Shape shape;
  std::vector<PartyId> holders;
  std::vector<std::vector<std::uint64_t>> pieces;
  FixCfg cfg;

  std::size_t size() const { return ShapeSize(shape); }
  std::size_t party_count() const { return holders.size(); }
  void CheckConsistent() const;
};

// Correlated randomness for the online phase. Values are drawn fresh on
// every request, so nothing is ever reused.
class Dealer {
 public:
  struct Triples {
    std::vector<std::vector<std::uint64_t>> a, b, c;  // [party][coordinate]
  };
  struct Squares {
    std::vector<std::vector<std::uint64_t>> a, aa;
  };
  // r uniform in the ring, r >> shift, and the k bits of r, all shared.
  struct TruncTuples {
    unsigned shift = 0;
    std::vector<std::vector<std::uint64_t>> r, r_hi;
    std::vector<std::vector<std::vector<std::uint64_t>>> bits;  // [bit][party][coordinate]
  };
  // r uniform below 2^(k-1) and r >> shift; the one-opening truncation.
  struct TruncPairs {
    unsigned shift = 0;
    std::vector<std::vector<std::uint64_t>> r, r_hi;
  };
  struct BitTriples {
    std::vector<std::uint64_t> a0, b0, c0, a1, b1, c1;  // 64 lanes per word
  };

  explicit Dealer(FixCfg cfg, Rng rng, std::optional<std::uint64_t> triple_budget = std::nullopt);

  Triples IssueTriples(std::size_t parties, std::size_t count);
  Squares IssueSquares(std::size_t parties, std::size_t count);
  TruncTuples IssueTruncTuples(std::size_t parties, std::size_t count, unsigned shift);
  TruncPairs IssueTruncPairs(std::size_t parties, std::size_t count, unsigned shift);
  // `words` 64-lane words of boolean AND triples; `instances` counts real lanes.
  BitTriples IssueBitTriples(std::size_t words, std::uint64_t instances);

  std::uint64_t triples_issued() const { return triples_; }
  std::uint64_t squares_issued() const { return squares_; }
  std::uint64_t trunc_issued() const { return truncs_; }
  std::uint64_t trunc_pairs_issued() const { return trunc_pairs_; }
  std::uint64_t bit_triples_issued() const { return bit_triples_; }

  const FixCfg& cfg() const { return cfg_; }

 private:
  std::vector<std::vector<std::uint64_t>> Share(std::span<const std::uint64_t> v,
                                                std::size_t parties);

  FixCfg cfg_;
  Rng rng_;
  std::optional<std::uint64_t> budget_;
  std::uint64_t triples_ = 0;
  std::uint64_t squares_ = 0;
  std::uint64_t truncs_ = 0;
  std::uint64_t trunc_pairs_ = 0;
  std::uint64_t bit_triples_ = 0;
};

struct TranscriptEntry {
  std::string op;
  Phase phase = Phase::kSetup;
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
  std::uint64_t rounds = 0;
  double seconds = 0.0;
};

class Transcript {
 public:
  void Add(TranscriptEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<TranscriptEntry>& entries() const { return entries_; }
  std::uint64_t TotalBytes() const;
  std::map<std::string, std::uint64_t> BytesByOp() const;
  void Append(const Transcript& other);
  void WriteReport(std::ostream& os) const;
  bool operator==(const Transcript&) const = default;

 private:
  std::vector<TranscriptEntry> entries_;
};

bool operator==(const TranscriptEntry& a, const TranscriptEntry& b);

// Values a party learned from openings. Final openings keep their values;
// masked intermediate openings keep only their size.
struct ViewEntry {
  std::string op;
  std::size_t count = 0;
  std::vector<std::uint64_t> values;
};

enum class TruncMode { kExact, kLocal };

struct LinTerm {
  double coefficient = 1.0;
  const SharedTensor* tensor = nullptr;
};

class Engine {
 public:
  Engine(FixCfg cfg, Network& net, Dealer& dealer, TruncMode mode = TruncMode::kExact,
         Rng rng = Rng(0x5eed));

  const FixCfg& cfg() const { return cfg_; }
  TruncMode trunc_mode() const { return mode_; }
  Network& network() { return net_; }
  Dealer& dealer() { return dealer_; }

  // `owner` encodes and shares its plaintext; the others receive pieces.
  SharedTensor InputTensor(PartyId owner, std::span<const double> values, Shape shape,
                           std::vector<PartyId> holders);
  SharedTensor InputRing(PartyId owner, std::span<const std::uint64_t> values, Shape shape,
                         std::vector<PartyId> holders);
  // Public values held as a trivial sharing (no communication).
  SharedTensor PublicTensor(std::span<const std::uint64_t> values, Shape shape,
                            std::vector<PartyId> holders) const;

  // Open to `to` (or to every holder when empty).
  std::vector<std::uint64_t> Open(const SharedTensor& t,
                                  std::optional<PartyId> to = std::nullopt);

  SharedTensor Lincomb(std::span<const LinTerm> terms, std::span<const double> public_offset = {});
  SharedTensor Add(const SharedTensor& x, const SharedTensor& y) const;
  SharedTensor Sub(const SharedTensor& x, const SharedTensor& y) const;
  SharedTensor AddPublic(const SharedTensor& x, std::span<const std::uint64_t> c) const;
  SharedTensor MulPublicInt(const SharedTensor& x, std::uint64_t c) const;

  // Beaver product without truncation (result carries 2f fraction bits).
  SharedTensor MulRaw(const SharedTensor& x, const SharedTensor& y);
  SharedTensor BeaverMul(const SharedTensor& x, const SharedTensor& y);
  SharedTensor Square(const SharedTensor& x);
  SharedTensor SquareRaw(const SharedTensor& x);
  SharedTensor Truncate(const SharedTensor& x, unsigned bits);
  SharedTensor Truncate(const SharedTensor& x, unsigned bits, TruncMode mode);

  // W [out, in] times x [in] or [batch, in], plus b [out]; one truncation per
  // output coordinate.
  SharedTensor MatVecAffine(const SharedTensor& w, const SharedTensor& x, const SharedTensor& b);

  // reps are per-owner sums of representations (all shape [r]); counts are
  // the public per-owner sample counts.
  SharedTensor MeanReadout(std::span<const SharedTensor> reps, std::span<const std::size_t> counts);

  SharedTensor SumRows(const SharedTensor& x) const;
  // Local rearrangement: out[i] = x[index[i]], or zero where index[i] < 0.
  SharedTensor Gather(const SharedTensor& x, std::span<const std::int64_t> index, Shape shape) const;
  SharedTensor Concat(std::span<const SharedTensor> parts) const;  // along the flat axis

  // Lift a two-holder sharing to `targets` (which must contain both holders).
  SharedTensor Convert2ToN(const SharedTensor& x, const std::vector<PartyId>& targets);

  void FailParty(PartyId p) { failed_.push_back(p); }

  const Transcript& transcript() const { return transcript_; }
  const std::vector<ViewEntry>& View(PartyId p) const;

 private:
  class OpScope;
  friend class OpScope;

  // All holders publish their pieces of each tensor to every other holder.
  std::vector<std::vector<std::uint64_t>> OpenMasked(std::span<const SharedTensor* const> ts,
                                                     const char* label);
  void CheckAlive(const std::vector<PartyId>& holders) const;
  void CheckSameContext(const SharedTensor& x, const SharedTensor& y) const;
  SharedTensor TruncateExact(const SharedTensor& x, unsigned bits);
  SharedTensor TruncateLocal(const SharedTensor& x, unsigned bits);
  SharedTensor Zeros(const Shape& shape, const std::vector<PartyId>& holders) const;

  FixCfg cfg_;
  Network& net_;
  Dealer& dealer_;
  TruncMode mode_;
  Rng rng_;
  std::vector<PartyId> failed_;
  Transcript transcript_;
  std::map<PartyId, std::vector<ViewEntry>> views_;

  struct ScopeFrame {
    std::string op;
    std::uint64_t bytes0, messages0, rounds0;
    double seconds0;
    std::uint64_t child_bytes = 0, child_messages = 0, child_rounds = 0;
    double child_seconds = 0.0;
  };
  std::vector<ScopeFrame> scopes_;
};

// Plaintext fixed-point interpreter. Runs the same operation sequence as the
// Engine on unshared ring tensors and serves as its bit-exact oracle.
struct RingTensor {
  Shape shape;
  std::vector<std::uint64_t> v;
};

class FixedPointInterpreter {
 public:
  explicit FixedPointInterpreter(FixCfg cfg) : cfg_(cfg) {}
  const FixCfg& cfg() const { return cfg_; }

  RingTensor Encode(std::span<const double> values, Shape shape) const;
  std::vector<double> Decode(const RingTensor& t) const;

  RingTensor Lincomb(std::span<const std::pair<double, const RingTensor*>> terms,
                     std::span<const double> public_offset = {}) const;
  RingTensor Add(const RingTensor& x, const RingTensor& y) const;
  RingTensor Mul(const RingTensor& x, const RingTensor& y) const;  // truncated
  RingTensor Square(const RingTensor& x) const;
  RingTensor Truncate(const RingTensor& x, unsigned bits) const;
  RingTensor MatVecAffine(const RingTensor& w, const RingTensor& x, const RingTensor& b) const;
  RingTensor MeanReadout(std::span<const RingTensor> reps, std::span<const std::size_t> counts) const;
  RingTensor SumRows(const RingTensor& x) const;
  RingTensor Gather(const RingTensor& x, std::span<const std::int64_t> index, Shape shape) const;

 private:
  FixCfg cfg_;
};

// Shared by the engine and the interpreter so both apply identical public
// scaling in the mean readout.
struct MeanScale {
  unsigned shift;
  std::uint64_t multiplier;
};
inline constexpr unsigned kMeanExtraBits = 20;
MeanScale MeanReadoutScale(std::size_t total, const FixCfg& cfg);

// Static triple count consumed by one exact truncation of one value.
std::uint64_t ExactTruncTriples(const FixCfg& cfg, unsigned bits);

}  // namespace shapmkt
