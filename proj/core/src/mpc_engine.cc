#include "shapmkt/mpc_engine.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "shapmkt/error.h"

namespace shapmkt {

std::size_t ShapeSize(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void SharedTensor::CheckConsistent() const {
  if (pieces.size() != holders.size()) {
    throw Error(ErrorCode::kIncompleteShares, "piece count differs from holder count");
  }
  const std::size_t n = size();
  for (const auto& p : pieces) {
    if (p.size() != n) throw Error(ErrorCode::kShape, "piece tensor size differs from shape");
  }
}

// ---------------------------------------------------------------------------
// Dealer

Dealer::Dealer(FixCfg cfg, Rng rng, std::optional<std::uint64_t> triple_budget)
    : cfg_(cfg), rng_(std::move(rng)), budget_(triple_budget) {}

std::vector<std::vector<std::uint64_t>> Dealer::Share(std::span<const std::uint64_t> v,
                                                      std::size_t parties) {
  return ShareVector(v, parties, rng_, cfg_);
}

Dealer::Triples Dealer::IssueTriples(std::size_t parties, std::size_t count) {
  if (budget_ && triples_ + count > *budget_) {
    throw Error(ErrorCode::kDealerExhausted,
                "triple budget " + std::to_string(*budget_) + " exceeded");
  }
  std::vector<std::uint64_t> a(count), b(count), c(count);
  for (std::size_t i = 0; i < count; ++i) {
    a[i] = cfg_.Reduce(rng_());
    b[i] = cfg_.Reduce(rng_());
    c[i] = cfg_.Mul(a[i], b[i]);
  }
  triples_ += count;
  return Triples{Share(a, parties), Share(b, parties), Share(c, parties)};
}

Dealer::Squares Dealer::IssueSquares(std::size_t parties, std::size_t count) {
  std::vector<std::uint64_t> a(count), aa(count);
  for (std::size_t i = 0; i < count; ++i) {
    a[i] = cfg_.Reduce(rng_());
    aa[i] = cfg_.Mul(a[i], a[i]);
  }
  squares_ += count;
  return Squares{Share(a, parties), Share(aa, parties)};
}

Dealer::TruncTuples Dealer::IssueTruncTuples(std::size_t parties, std::size_t count,
                                             unsigned shift) {
  const unsigned k = cfg_.k();
  std::vector<std::uint64_t> r(count), hi(count);
  for (std::size_t i = 0; i < count; ++i) {
    r[i] = cfg_.Reduce(rng_());
    hi[i] = r[i] >> shift;
  }
  TruncTuples t;
  t.shift = shift;
  t.r = Share(r, parties);
  t.r_hi = Share(hi, parties);
  t.bits.resize(k);
  std::vector<std::uint64_t> bit(count);
  for (unsigned j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < count; ++i) bit[i] = (r[i] >> j) & 1U;
    t.bits[j] = Share(bit, parties);
  }
  truncs_ += count;
  return t;
}

Dealer::TruncPairs Dealer::IssueTruncPairs(std::size_t parties, std::size_t count,
                                           unsigned shift) {
  const std::uint64_t below = (1ULL << (cfg_.k() - 1)) - 1;
  std::vector<std::uint64_t> r(count), hi(count);
  for (std::size_t i = 0; i < count; ++i) {
    r[i] = rng_() & below;
    hi[i] = r[i] >> shift;
  }
  trunc_pairs_ += count;
  return TruncPairs{shift, Share(r, parties), Share(hi, parties)};
}

Dealer::BitTriples Dealer::IssueBitTriples(std::size_t words, std::uint64_t instances) {
  BitTriples t;
  t.a0.resize(words);
  t.b0.resize(words);
  t.c0.resize(words);
  t.a1.resize(words);
  t.b1.resize(words);
  t.c1.resize(words);
  for (std::size_t i = 0; i < words; ++i) {
    t.a0[i] = rng_();
    t.a1[i] = rng_();
    t.b0[i] = rng_();
    t.b1[i] = rng_();
    t.c0[i] = rng_();
    t.c1[i] = ((t.a0[i] ^ t.a1[i]) & (t.b0[i] ^ t.b1[i])) ^ t.c0[i];
  }
  bit_triples_ += instances;
  return t;
}

// ---------------------------------------------------------------------------
// Transcript

bool operator==(const TranscriptEntry& a, const TranscriptEntry& b) {
  return a.op == b.op && a.phase == b.phase && a.bytes == b.bytes && a.messages == b.messages &&
         a.rounds == b.rounds && a.seconds == b.seconds;
}

std::uint64_t Transcript::TotalBytes() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.bytes;
  return t;
}

std::map<std::string, std::uint64_t> Transcript::BytesByOp() const {
  std::map<std::string, std::uint64_t> m;
  for (const auto& e : entries_) m[e.op] += e.bytes;
  return m;
}

void Transcript::Append(const Transcript& other) {
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

void Transcript::WriteReport(std::ostream& os) const {
  os << "# op\tphase\tbytes\trounds\tseconds\n";
  for (const auto& e : entries_) {
    os << e.op << '\t' << PhaseName(e.phase) << '\t' << e.bytes << '\t' << e.rounds << '\t'
       << e.seconds << '\n';
  }
}

// ---------------------------------------------------------------------------
// Engine

class Engine::OpScope {
 public:
  OpScope(Engine& e, std::string op) : e_(e) {
    e_.scopes_.push_back(ScopeFrame{std::move(op), e_.net_.total_bytes(),
                                    e_.net_.total_messages(), e_.net_.CriticalRounds(),
                                    e_.net_.Now()});
  }
  ~OpScope() {
    ScopeFrame f = std::move(e_.scopes_.back());
    e_.scopes_.pop_back();
    const std::uint64_t bytes = e_.net_.total_bytes() - f.bytes0;
    const std::uint64_t msgs = e_.net_.total_messages() - f.messages0;
    const std::uint64_t rounds = e_.net_.CriticalRounds() - f.rounds0;
    const double secs = e_.net_.Now() - f.seconds0;
    e_.transcript_.Add(TranscriptEntry{f.op, e_.net_.phase(), bytes - f.child_bytes,
                                       msgs - f.child_messages, rounds - f.child_rounds,
                                       secs - f.child_seconds});
    if (!e_.scopes_.empty()) {
      ScopeFrame& parent = e_.scopes_.back();
      parent.child_bytes += bytes;
      parent.child_messages += msgs;
      parent.child_rounds += rounds;
      parent.child_seconds += secs;
    }
  }
  OpScope(const OpScope&) = delete;
  OpScope& operator=(const OpScope&) = delete;

 private:
  Engine& e_;
};

namespace {

bool IsIntegral(double c) { return std::nearbyint(c) == c && std::fabs(c) < 0x1p52; }

std::uint64_t EncodeCoefficient(double c, const FixCfg& cfg, bool integral) {
  if (integral) return cfg.FromSigned(static_cast<std::int64_t>(c));
  return FxEncode(c, cfg).v;
}

// Splits a flat concatenation back into pieces of the given sizes.
std::vector<SharedTensor> SplitFlat(const SharedTensor& flat, std::span<const std::size_t> sizes) {
  std::vector<SharedTensor> out;
  std::size_t off = 0;
  for (std::size_t sz : sizes) {
    SharedTensor t;
    t.shape = {sz};
    t.holders = flat.holders;
    t.cfg = flat.cfg;
    t.pieces.resize(flat.party_count());
    for (std::size_t p = 0; p < flat.party_count(); ++p) {
      t.pieces[p].assign(flat.pieces[p].begin() + static_cast<std::ptrdiff_t>(off),
                         flat.pieces[p].begin() + static_cast<std::ptrdiff_t>(off + sz));
    }
    off += sz;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

MeanScale MeanReadoutScale(std::size_t total, const FixCfg& cfg) {
  if (total == 0) throw Error(ErrorCode::kParameter, "mean over zero samples");
  if (total > (std::size_t{1} << kMeanExtraBits)) {
    throw Error(ErrorCode::kRange, "mean readout supports at most 2^" +
                                       std::to_string(kMeanExtraBits) + " samples");
  }
  const unsigned shift = cfg.f() + kMeanExtraBits;
  const double m = std::round(std::ldexp(1.0, static_cast<int>(shift)) / static_cast<double>(total));
  return MeanScale{shift, static_cast<std::uint64_t>(m)};
}

std::uint64_t ExactTruncTriples(const FixCfg& cfg, unsigned bits) {
  if (bits == 0) return 0;
  const std::uint64_t k = cfg.k();
  const std::uint64_t s = bits;
  const std::uint64_t prefix = (k >= 2 ? k - 2 : 0) + (s >= 2 ? s - 2 : 0);
  const std::uint64_t terms = (k - 1) + (s >= 1 ? s - 1 : 0);
  return prefix + terms;
}

Engine::Engine(FixCfg cfg, Network& net, Dealer& dealer, TruncMode mode, Rng rng)
    : cfg_(cfg), net_(net), dealer_(dealer), mode_(mode), rng_(std::move(rng)) {
  if (!(dealer_.cfg() == cfg_)) throw Error(ErrorCode::kParameter, "dealer ring differs");
}

const std::vector<ViewEntry>& Engine::View(PartyId p) const {
  static const std::vector<ViewEntry> kEmpty;
  auto it = views_.find(p);
  return it == views_.end() ? kEmpty : it->second;
}

void Engine::CheckAlive(const std::vector<PartyId>& holders) const {
  for (PartyId p : holders) {
    if (std::find(failed_.begin(), failed_.end(), p) != failed_.end()) {
      throw Error(ErrorCode::kAbort, "party " + std::to_string(p) + " failed");
    }
  }
}

void Engine::CheckSameContext(const SharedTensor& x, const SharedTensor& y) const {
  if (x.holders != y.holders) throw Error(ErrorCode::kParameter, "tensors have different holders");
  if (x.size() != y.size()) throw Error(ErrorCode::kShape, "tensor sizes differ");
}

SharedTensor Engine::Zeros(const Shape& shape, const std::vector<PartyId>& holders) const {
  SharedTensor t{shape, holders, {}, cfg_};
  t.pieces.assign(holders.size(), std::vector<std::uint64_t>(ShapeSize(shape), 0));
  return t;
}

SharedTensor Engine::InputTensor(PartyId owner, std::span<const double> values, Shape shape,
                                 std::vector<PartyId> holders) {
  std::vector<std::uint64_t> enc(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) enc[i] = FxEncode(values[i], cfg_).v;
  return InputRing(owner, enc, std::move(shape), std::move(holders));
}

SharedTensor Engine::InputRing(PartyId owner, std::span<const std::uint64_t> values, Shape shape,
                               std::vector<PartyId> holders) {
  OpScope scope(*this, "input");
  if (ShapeSize(shape) != values.size()) throw Error(ErrorCode::kShape, "input size vs shape");
  CheckAlive(holders);
  SharedTensor t{std::move(shape), std::move(holders), {}, cfg_};
  t.pieces = ShareVector(values, t.holders.size(), rng_, cfg_);
  std::vector<Message> batch;
  for (PartyId h : t.holders) {
    if (h != owner) batch.push_back({owner, h, values.size() * cfg_.element_bytes()});
  }
  net_.RouteBatch(batch);
  return t;
}

SharedTensor Engine::PublicTensor(std::span<const std::uint64_t> values, Shape shape,
                                  std::vector<PartyId> holders) const {
  if (ShapeSize(shape) != values.size()) throw Error(ErrorCode::kShape, "public size vs shape");
  SharedTensor t = Zeros(shape, holders);
  for (std::size_t i = 0; i < values.size(); ++i) t.pieces[0][i] = cfg_.Reduce(values[i]);
  return t;
}

std::vector<std::vector<std::uint64_t>> Engine::OpenMasked(
    std::span<const SharedTensor* const> ts, const char* label) {
  const auto& holders = ts.front()->holders;
  CheckAlive(holders);
  std::size_t total = 0;
  for (const SharedTensor* t : ts) {
    if (t->holders != holders) throw Error(ErrorCode::kParameter, "mixed holder sets in opening");
    total += t->size();
  }
  std::vector<Message> batch;
  for (PartyId from : holders) {
    for (PartyId to : holders) {
      if (from != to) batch.push_back({from, to, total * cfg_.element_bytes()});
    }
  }
  net_.RouteBatch(batch);
  std::vector<std::vector<std::uint64_t>> out;
  out.reserve(ts.size());
  for (const SharedTensor* t : ts) out.push_back(ReconstructVector(t->pieces, cfg_));
  for (PartyId h : holders) views_[h].push_back(ViewEntry{label, total, {}});
  return out;
}

std::vector<std::uint64_t> Engine::Open(const SharedTensor& t, std::optional<PartyId> to) {
  OpScope scope(*this, "open");
  t.CheckConsistent();
  CheckAlive(t.holders);
  std::vector<Message> batch;
  const std::uint64_t bytes = t.size() * cfg_.element_bytes();
  if (to) {
    if (!net_.HasParty(*to)) throw Error(ErrorCode::kUnknownParty, "open receiver not registered");
    CheckAlive({*to});
    for (PartyId h : t.holders) {
      if (h != *to) batch.push_back({h, *to, bytes});
    }
  } else {
    for (PartyId from : t.holders) {
      for (PartyId dst : t.holders) {
        if (from != dst) batch.push_back({from, dst, bytes});
      }
    }
  }
  net_.RouteBatch(batch);
  std::vector<std::uint64_t> values = ReconstructVector(t.pieces, cfg_);
  if (to) {
    views_[*to].push_back(ViewEntry{"open", values.size(), values});
  } else {
    for (PartyId h : t.holders) views_[h].push_back(ViewEntry{"open", values.size(), values});
  }
  return values;
}

SharedTensor Engine::Add(const SharedTensor& x, const SharedTensor& y) const {
  CheckSameContext(x, y);
  SharedTensor z = x;
  for (std::size_t p = 0; p < z.party_count(); ++p) {
    for (std::size_t i = 0; i < z.size(); ++i) z.pieces[p][i] = cfg_.Add(z.pieces[p][i], y.pieces[p][i]);
  }
  return z;
}

SharedTensor Engine::Sub(const SharedTensor& x, const SharedTensor& y) const {
  CheckSameContext(x, y);
  SharedTensor z = x;
  for (std::size_t p = 0; p < z.party_count(); ++p) {
    for (std::size_t i = 0; i < z.size(); ++i) z.pieces[p][i] = cfg_.Sub(z.pieces[p][i], y.pieces[p][i]);
  }
  return z;
}

SharedTensor Engine::AddPublic(const SharedTensor& x, std::span<const std::uint64_t> c) const {
  if (c.size() != x.size()) throw Error(ErrorCode::kShape, "public offset size");
  SharedTensor z = x;
  for (std::size_t i = 0; i < z.size(); ++i) z.pieces[0][i] = cfg_.Add(z.pieces[0][i], c[i]);
  return z;
}

SharedTensor Engine::MulPublicInt(const SharedTensor& x, std::uint64_t c) const {
  SharedTensor z = x;
  for (auto& piece : z.pieces) {
    for (auto& v : piece) v = cfg_.Mul(v, c);
  }
  return z;
}

SharedTensor Engine::Lincomb(std::span<const LinTerm> terms, std::span<const double> public_offset) {
  OpScope scope(*this, "lincomb");
  if (terms.empty()) throw Error(ErrorCode::kParameter, "lincomb needs at least one term");
  const SharedTensor& first = *terms.front().tensor;
  bool integral = true;
  for (const LinTerm& t : terms) {
    CheckSameContext(first, *t.tensor);
    integral = integral && IsIntegral(t.coefficient);
  }
  if (!public_offset.empty() && public_offset.size() != first.size()) {
    throw Error(ErrorCode::kShape, "lincomb offset size");
  }
  SharedTensor acc = Zeros(first.shape, first.holders);
  for (const LinTerm& t : terms) {
    acc = Add(acc, MulPublicInt(*t.tensor, EncodeCoefficient(t.coefficient, cfg_, integral)));
  }
  if (!integral) acc = Truncate(acc, cfg_.f());
  if (!public_offset.empty()) {
    std::vector<std::uint64_t> enc(public_offset.size());
    for (std::size_t i = 0; i < enc.size(); ++i) enc[i] = FxEncode(public_offset[i], cfg_).v;
    acc = AddPublic(acc, enc);
  }
  return acc;
}

SharedTensor Engine::MulRaw(const SharedTensor& x, const SharedTensor& y) {
  OpScope scope(*this, "beaver_mul");
  CheckSameContext(x, y);
  const std::size_t m = x.party_count();
  const std::size_t n = x.size();
  Dealer::Triples tr = dealer_.IssueTriples(m, n);
  SharedTensor d = x, e = y;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      d.pieces[p][i] = cfg_.Sub(x.pieces[p][i], tr.a[p][i]);
      e.pieces[p][i] = cfg_.Sub(y.pieces[p][i], tr.b[p][i]);
    }
  }
  const SharedTensor* both[] = {&d, &e};
  auto opened = OpenMasked(both, "beaver d,e");
  const auto& dv = opened[0];
  const auto& ev = opened[1];
  SharedTensor z = x;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v = tr.c[p][i] + dv[i] * tr.b[p][i] + ev[i] * tr.a[p][i];
      if (p == 0) v += dv[i] * ev[i];
      z.pieces[p][i] = cfg_.Reduce(v);
    }
  }
  return z;
}

SharedTensor Engine::BeaverMul(const SharedTensor& x, const SharedTensor& y) {
  return Truncate(MulRaw(x, y), cfg_.f());
}

SharedTensor Engine::SquareRaw(const SharedTensor& x) {
  OpScope scope(*this, "square");
  x.CheckConsistent();
  const std::size_t m = x.party_count();
  const std::size_t n = x.size();
  Dealer::Squares sq = dealer_.IssueSquares(m, n);
  SharedTensor d = x;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) d.pieces[p][i] = cfg_.Sub(x.pieces[p][i], sq.a[p][i]);
  }
  const SharedTensor* one[] = {&d};
  const auto dv = OpenMasked(one, "square d")[0];
  SharedTensor z = x;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v = sq.aa[p][i] + 2 * dv[i] * sq.a[p][i];
      if (p == 0) v += dv[i] * dv[i];
      z.pieces[p][i] = cfg_.Reduce(v);
    }
  }
  return z;
}

SharedTensor Engine::Square(const SharedTensor& x) { return Truncate(SquareRaw(x), cfg_.f()); }

SharedTensor Engine::Truncate(const SharedTensor& x, unsigned bits) {
  return Truncate(x, bits, mode_);
}

SharedTensor Engine::Truncate(const SharedTensor& x, unsigned bits, TruncMode mode) {
  OpScope scope(*this, "truncate");
  x.CheckConsistent();
  if (bits == 0) return x;
  if (bits >= cfg_.k()) throw Error(ErrorCode::kParameter, "truncation shift >= ring width");
  return mode == TruncMode::kExact ? TruncateExact(x, bits) : TruncateLocal(x, bits);
}

// Two holders shift their own pieces. With more holders the integer sum of
// the pieces wraps an unpredictable number of times, so one masked opening of
// x + 2^(k-2) + r (r < 2^(k-1), no wrap) replaces the local shift.
SharedTensor Engine::TruncateLocal(const SharedTensor& x, unsigned bits) {
  if (x.party_count() == 2) {
    SharedTensor z = x;
    for (std::size_t p = 0; p < z.party_count(); ++p) {
      for (auto& v : z.pieces[p]) {
        v = p == 0 ? (v >> bits) : cfg_.Neg(cfg_.Neg(v) >> bits);
      }
    }
    return z;
  }
  const unsigned k = cfg_.k();
  const std::size_t m = x.party_count();
  const std::size_t n = x.size();
  Dealer::TruncPairs tp = dealer_.IssueTruncPairs(m, n, bits);
  SharedTensor masked = x;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v = x.pieces[p][i] + tp.r[p][i];
      if (p == 0) v += 1ULL << (k - 2);
      masked.pieces[p][i] = cfg_.Reduce(v);
    }
  }
  const SharedTensor* one[] = {&masked};
  const std::vector<std::uint64_t> c = OpenMasked(one, "truncate c")[0];
  SharedTensor z = x;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v = cfg_.Neg(tp.r_hi[p][i]);
      if (p == 0) v += (c[i] >> bits) - (1ULL << (k - 2 - bits));
      z.pieces[p][i] = cfg_.Reduce(v);
    }
  }
  return z;
}

// Exact floor division by 2^s. With x' = x + 2^(k-1) (non-negative), the
// parties open c = x' + r and use
//   floor(x' / 2^s) = c_hi - r_hi + 2^(k-s) [c < r] - [c_lo < r_lo],
// evaluating both comparisons against the shared bits of r.
SharedTensor Engine::TruncateExact(const SharedTensor& x, unsigned s) {
  const unsigned k = cfg_.k();
  const std::size_t m = x.party_count();
  const std::size_t n = x.size();
  Dealer::TruncTuples tt = dealer_.IssueTruncTuples(m, n, s);

  const std::uint64_t half = 1ULL << (k - 1);
  SharedTensor masked = x;
  for (std::size_t i = 0; i < n; ++i) masked.pieces[0][i] = cfg_.Add(masked.pieces[0][i], half);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) masked.pieces[p][i] = cfg_.Add(masked.pieces[p][i], tt.r[p][i]);
  }
  const SharedTensor* one[] = {&masked};
  const std::vector<std::uint64_t> c = OpenMasked(one, "truncate c")[0];

  auto bit_tensor = [&](unsigned j) {
    SharedTensor t{{n}, x.holders, tt.bits[j], cfg_};
    return t;
  };
  // e_j = 1 - (c_j xor r_j) = (1 - c_j) + (2 c_j - 1) r_j
  std::vector<SharedTensor> eq(k);
  for (unsigned j = 0; j < k; ++j) {
    SharedTensor t = bit_tensor(j);
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t cj = (c[i] >> j) & 1U;
        std::uint64_t v = cj ? t.pieces[p][i] : cfg_.Neg(t.pieces[p][i]);
        if (p == 0) v += 1 - cj;
        t.pieces[p][i] = cfg_.Reduce(v);
      }
    }
    eq[j] = std::move(t);
  }

  // Suffix products: full[i] = prod_{j>i} e_j over k bits, low[i] over s bits.
  std::vector<SharedTensor> full(k), low(s);
  if (k >= 2) full[k - 2] = eq[k - 1];
  if (s >= 2) low[s - 2] = eq[s - 1];
  for (int step = 0;; ++step) {
    const int fi = static_cast<int>(k) - 3 - step;
    const int li = static_cast<int>(s) - 3 - step;
    if (fi < 0 && li < 0) break;
    std::vector<SharedTensor> lhs, rhs;
    if (fi >= 0) {
      lhs.push_back(full[fi + 1]);
      rhs.push_back(eq[fi + 1]);
    }
    if (li >= 0) {
      lhs.push_back(low[li + 1]);
      rhs.push_back(eq[li + 1]);
    }
    std::vector<std::size_t> sizes(lhs.size(), n);
    SharedTensor prod = [&] {
      SharedTensor a = Concat(lhs), b = Concat(rhs);
      // Inner products are attributed to the enclosing truncate scope.
      Dealer::Triples tr = dealer_.IssueTriples(m, a.size());
      SharedTensor d = a, e = b;
      for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          d.pieces[p][i] = cfg_.Sub(a.pieces[p][i], tr.a[p][i]);
          e.pieces[p][i] = cfg_.Sub(b.pieces[p][i], tr.b[p][i]);
        }
      }
      const SharedTensor* both[] = {&d, &e};
      auto op = OpenMasked(both, "truncate prefix");
      SharedTensor z = a;
      for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          std::uint64_t v = tr.c[p][i] + op[0][i] * tr.b[p][i] + op[1][i] * tr.a[p][i];
          if (p == 0) v += op[0][i] * op[1][i];
          z.pieces[p][i] = cfg_.Reduce(v);
        }
      }
      return z;
    }();
    auto parts = SplitFlat(prod, sizes);
    std::size_t idx = 0;
    if (fi >= 0) full[fi] = std::move(parts[idx++]);
    if (li >= 0) low[li] = std::move(parts[idx++]);
  }

  // Terms r_i * prefix_i for every position below the top bit.
  std::vector<SharedTensor> lhs, rhs;
  for (unsigned i = 0; i + 1 < k; ++i) {
    lhs.push_back(bit_tensor(i));
    rhs.push_back(full[i]);
  }
  for (unsigned i = 0; i + 1 < s; ++i) {
    lhs.push_back(bit_tensor(i));
    rhs.push_back(low[i]);
  }
  std::vector<SharedTensor> terms;
  if (!lhs.empty()) {
    SharedTensor a = Concat(lhs), b = Concat(rhs);
    Dealer::Triples tr = dealer_.IssueTriples(m, a.size());
    SharedTensor d = a, e = b;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        d.pieces[p][i] = cfg_.Sub(a.pieces[p][i], tr.a[p][i]);
        e.pieces[p][i] = cfg_.Sub(b.pieces[p][i], tr.b[p][i]);
      }
    }
    const SharedTensor* both[] = {&d, &e};
    auto op = OpenMasked(both, "truncate terms");
    SharedTensor z = a;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        std::uint64_t v = tr.c[p][i] + op[0][i] * tr.b[p][i] + op[1][i] * tr.a[p][i];
        if (p == 0) v += op[0][i] * op[1][i];
        z.pieces[p][i] = cfg_.Reduce(v);
      }
    }
    terms = SplitFlat(z, std::vector<std::size_t>(lhs.size(), n));
  }

  // Assemble wrap = [c < r] and borrow = [c_lo < r_lo], then the result.
  SharedTensor out = Zeros({n}, x.holders);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t wrap = 0, borrow = 0;
      for (unsigned j = 0; j < k; ++j) {
        if ((c[i] >> j) & 1U) continue;
        wrap += (j + 1 == k) ? tt.bits[j][p][i] : terms[j].pieces[p][i];
      }
      for (unsigned j = 0; j < s; ++j) {
        if ((c[i] >> j) & 1U) continue;
        borrow += (j + 1 == s) ? tt.bits[j][p][i] : terms[(k - 1) + j].pieces[p][i];
      }
      std::uint64_t v = (wrap << (k - s)) - borrow - tt.r_hi[p][i];
      if (p == 0) v += (c[i] >> s) - (1ULL << (k - 1 - s));
      out.pieces[p][i] = cfg_.Reduce(v);
    }
  }
  out.shape = x.shape;
  return out;
}

SharedTensor Engine::MatVecAffine(const SharedTensor& w, const SharedTensor& x, const SharedTensor& b) {
  OpScope scope(*this, "matvec_affine");
  if (w.shape.size() != 2) throw Error(ErrorCode::kShape, "weight must be a matrix");
  const std::size_t out = w.shape[0], in = w.shape[1];
  const bool batched = x.shape.size() == 2;
  const std::size_t rows = batched ? x.shape[0] : 1;
  if ((batched ? x.shape[1] : x.size()) != in || x.shape.size() > 2) {
    throw Error(ErrorCode::kShape, "matvec input width " + std::to_string(x.size()) +
                                       " does not match weight columns " + std::to_string(in));
  }
  if (b.size() != out) throw Error(ErrorCode::kShape, "bias length differs from weight rows");
  if (w.holders != x.holders || b.holders != x.holders) {
    throw Error(ErrorCode::kParameter, "matvec operands have different holders");
  }
  const std::size_t m = x.party_count();
  const std::size_t terms = rows * out * in;
  std::vector<std::int64_t> wi(terms), xi(terms);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) {
        const std::size_t t = (r * out + o) * in + i;
        wi[t] = static_cast<std::int64_t>(o * in + i);
        xi[t] = static_cast<std::int64_t>(r * in + i);
      }
    }
  }
  SharedTensor prod = MulRaw(Gather(w, wi, {terms}), Gather(x, xi, {terms}));
  SharedTensor acc = Zeros({rows * out}, x.holders);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t t = 0; t < rows * out; ++t) {
      std::uint64_t s = 0;
      for (std::size_t i = 0; i < in; ++i) s += prod.pieces[p][t * in + i];
      acc.pieces[p][t] = cfg_.Reduce(s);
    }
  }
  acc = Truncate(acc, cfg_.f());
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        acc.pieces[p][r * out + o] = cfg_.Add(acc.pieces[p][r * out + o], b.pieces[p][o]);
      }
    }
  }
  acc.shape = batched ? Shape{rows, out} : Shape{out};
  return acc;
}

SharedTensor Engine::MeanReadout(std::span<const SharedTensor> reps,
                                 std::span<const std::size_t> counts) {
  OpScope scope(*this, "mean_readout");
  if (reps.empty()) throw Error(ErrorCode::kParameter, "mean readout over no representations");
  if (reps.size() != counts.size()) throw Error(ErrorCode::kShape, "one count per representation");
  SharedTensor sum = reps.front();
  for (std::size_t i = 1; i < reps.size(); ++i) sum = Add(sum, reps[i]);
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const MeanScale sc = MeanReadoutScale(total, cfg_);
  return Truncate(MulPublicInt(sum, sc.multiplier), sc.shift);
}

SharedTensor Engine::SumRows(const SharedTensor& x) const {
  if (x.shape.size() != 2) return x;
  const std::size_t rows = x.shape[0], cols = x.shape[1];
  SharedTensor z = Zeros({cols}, x.holders);
  for (std::size_t p = 0; p < x.party_count(); ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) z.pieces[p][c] += x.pieces[p][r * cols + c];
    }
    for (auto& v : z.pieces[p]) v = cfg_.Reduce(v);
  }
  return z;
}

SharedTensor Engine::Gather(const SharedTensor& x, std::span<const std::int64_t> index,
                            Shape shape) const {
  if (ShapeSize(shape) != index.size()) throw Error(ErrorCode::kShape, "gather index vs shape");
  SharedTensor z = Zeros(shape, x.holders);
  for (std::size_t p = 0; p < x.party_count(); ++p) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) z.pieces[p][i] = x.pieces[p].at(static_cast<std::size_t>(index[i]));
    }
  }
  return z;
}

SharedTensor Engine::Concat(std::span<const SharedTensor> parts) const {
  if (parts.empty()) throw Error(ErrorCode::kParameter, "concat of nothing");
  std::size_t total = 0;
  for (const auto& t : parts) {
    if (t.holders != parts.front().holders) throw Error(ErrorCode::kParameter, "concat holders");
    total += t.size();
  }
  SharedTensor z{{total}, parts.front().holders, {}, cfg_};
  z.pieces.assign(z.holders.size(), {});
  for (std::size_t p = 0; p < z.holders.size(); ++p) {
    z.pieces[p].reserve(total);
    for (const auto& t : parts) z.pieces[p].insert(z.pieces[p].end(), t.pieces[p].begin(), t.pieces[p].end());
  }
  return z;
}

SharedTensor Engine::Convert2ToN(const SharedTensor& x, const std::vector<PartyId>& targets) {
  OpScope scope(*this, "convert_2_to_n");
  x.CheckConsistent();
  if (x.party_count() != 2) throw Error(ErrorCode::kParameter, "conversion expects a 2-party sharing");
  if (targets.size() < 2) throw Error(ErrorCode::kParameter, "conversion needs n >= 2 targets");
  for (PartyId h : x.holders) {
    if (std::find(targets.begin(), targets.end(), h) == targets.end()) {
      throw Error(ErrorCode::kParameter, "conversion targets must include both holders");
    }
  }
  CheckAlive(targets);
  const std::size_t n = targets.size();
  const std::size_t count = x.size();
  SharedTensor z{x.shape, targets, {}, cfg_};
  z.pieces.assign(n, std::vector<std::uint64_t>(count, 0));
  std::vector<Message> batch;
  for (std::size_t h = 0; h < 2; ++h) {
    auto sub = ShareVector(x.pieces[h], n, rng_, cfg_);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < count; ++i) z.pieces[t][i] = cfg_.Add(z.pieces[t][i], sub[t][i]);
      if (targets[t] != x.holders[h]) {
        batch.push_back({x.holders[h], targets[t], count * cfg_.element_bytes()});
      }
    }
  }
  net_.RouteBatch(batch);
  return z;
}

// ---------------------------------------------------------------------------
// FixedPointInterpreter

RingTensor FixedPointInterpreter::Encode(std::span<const double> values, Shape shape) const {
  if (ShapeSize(shape) != values.size()) throw Error(ErrorCode::kShape, "encode size vs shape");
  RingTensor t{std::move(shape), std::vector<std::uint64_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) t.v[i] = FxEncode(values[i], cfg_).v;
  return t;
}

std::vector<double> FixedPointInterpreter::Decode(const RingTensor& t) const {
  std::vector<double> out(t.v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = FxDecode(RingVal{t.v[i]}, cfg_);
  return out;
}

RingTensor FixedPointInterpreter::Lincomb(std::span<const std::pair<double, const RingTensor*>> terms,
                                          std::span<const double> public_offset) const {
  if (terms.empty()) throw Error(ErrorCode::kParameter, "lincomb needs at least one term");
  bool integral = true;
  for (const auto& [c, t] : terms) {
    if (t->v.size() != terms.front().second->v.size()) throw Error(ErrorCode::kShape, "lincomb sizes");
    integral = integral && IsIntegral(c);
  }
  RingTensor acc{terms.front().second->shape, std::vector<std::uint64_t>(terms.front().second->v.size(), 0)};
  for (const auto& [c, t] : terms) {
    const std::uint64_t enc = EncodeCoefficient(c, cfg_, integral);
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] = cfg_.Add(acc.v[i], cfg_.Mul(enc, t->v[i]));
  }
  if (!integral) acc = Truncate(acc, cfg_.f());
  for (std::size_t i = 0; i < public_offset.size(); ++i) {
    acc.v[i] = cfg_.Add(acc.v[i], FxEncode(public_offset[i], cfg_).v);
  }
  return acc;
}

RingTensor FixedPointInterpreter::Add(const RingTensor& x, const RingTensor& y) const {
  if (x.v.size() != y.v.size()) throw Error(ErrorCode::kShape, "add sizes");
  RingTensor z = x;
  for (std::size_t i = 0; i < z.v.size(); ++i) z.v[i] = cfg_.Add(z.v[i], y.v[i]);
  return z;
}

RingTensor FixedPointInterpreter::Mul(const RingTensor& x, const RingTensor& y) const {
  if (x.v.size() != y.v.size()) throw Error(ErrorCode::kShape, "mul sizes");
  RingTensor z = x;
  for (std::size_t i = 0; i < z.v.size(); ++i) z.v[i] = cfg_.Mul(x.v[i], y.v[i]);
  return Truncate(z, cfg_.f());
}

RingTensor FixedPointInterpreter::Square(const RingTensor& x) const { return Mul(x, x); }

RingTensor FixedPointInterpreter::Truncate(const RingTensor& x, unsigned bits) const {
  RingTensor z = x;
  for (auto& v : z.v) v = cfg_.ArithShift(v, bits);
  return z;
}

RingTensor FixedPointInterpreter::MatVecAffine(const RingTensor& w, const RingTensor& x,
                                               const RingTensor& b) const {
  if (w.shape.size() != 2) throw Error(ErrorCode::kShape, "weight must be a matrix");
  const std::size_t out = w.shape[0], in = w.shape[1];
  const bool batched = x.shape.size() == 2;
  const std::size_t rows = batched ? x.shape[0] : 1;
  if ((batched ? x.shape[1] : x.v.size()) != in) throw Error(ErrorCode::kShape, "matvec width");
  if (b.v.size() != out) throw Error(ErrorCode::kShape, "bias length");
  RingTensor z{batched ? Shape{rows, out} : Shape{out}, std::vector<std::uint64_t>(rows * out)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      std::uint64_t s = 0;
      for (std::size_t i = 0; i < in; ++i) s += w.v[o * in + i] * x.v[r * in + i];
      z.v[r * out + o] = cfg_.Add(cfg_.ArithShift(cfg_.Reduce(s), cfg_.f()), b.v[o]);
    }
  }
  return z;
}

RingTensor FixedPointInterpreter::MeanReadout(std::span<const RingTensor> reps,
                                              std::span<const std::size_t> counts) const {
  if (reps.empty()) throw Error(ErrorCode::kParameter, "mean readout over no representations");
  if (reps.size() != counts.size()) throw Error(ErrorCode::kShape, "one count per representation");
  RingTensor sum = reps.front();
  for (std::size_t i = 1; i < reps.size(); ++i) sum = Add(sum, reps[i]);
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const MeanScale sc = MeanReadoutScale(total, cfg_);
  for (auto& v : sum.v) v = cfg_.Mul(v, sc.multiplier);
  return Truncate(sum, sc.shift);
}

RingTensor FixedPointInterpreter::SumRows(const RingTensor& x) const {
  if (x.shape.size() != 2) return x;
  const std::size_t rows = x.shape[0], cols = x.shape[1];
  RingTensor z{{cols}, std::vector<std::uint64_t>(cols, 0)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) z.v[c] += x.v[r * cols + c];
  }
  for (auto& v : z.v) v = cfg_.Reduce(v);
  return z;
}

RingTensor FixedPointInterpreter::Gather(const RingTensor& x, std::span<const std::int64_t> index,
                                         Shape shape) const {
  if (ShapeSize(shape) != index.size()) throw Error(ErrorCode::kShape, "gather index vs shape");
  RingTensor z{std::move(shape), std::vector<std::uint64_t>(index.size(), 0)};
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= 0) z.v[i] = x.v.at(static_cast<std::size_t>(index[i]));
  }
  return z;
}

}  // namespace shapmkt
