#include "shapmkt/ring_shares.h"

#include <cmath>
#include <string>

#include "shapmkt/error.h"

namespace shapmkt {

FixCfg::FixCfg(unsigned k, unsigned f) : k_(k), f_(f) {
  if (k == 0 || k > 64) {
    throw Error(ErrorCode::kParameter, "ring width must be in [1, 64], got " + std::to_string(k));
  }
  if (f == 0 || f >= k) {
    throw Error(ErrorCode::kParameter, "fraction bits must satisfy 0 < f < k");
  }
  if (2 * f + kMinHeadroom > k) {
    throw Error(ErrorCode::kParameter,
                "2f + " + std::to_string(kMinHeadroom) + " headroom bits exceed k=" +
                    std::to_string(k));
  }
  mask_ = k == 64 ? ~0ULL : ((1ULL << k) - 1);
}

std::int64_t FixCfg::Signed(std::uint64_t v) const {
  v &= mask_;
  if (k_ == 64) return static_cast<std::int64_t>(v);
  const std::uint64_t sign = 1ULL << (k_ - 1);
  if (v & sign) return static_cast<std::int64_t>(v | ~mask_);
  return static_cast<std::int64_t>(v);
}

std::uint64_t FixCfg::ArithShift(std::uint64_t v, unsigned bits) const {
  // >> on a negative int64 is an arithmetic (flooring) shift in C++20.
  return FromSigned(Signed(v) >> bits);
}

double FixCfg::EncodeBound() const { return std::ldexp(1.0, static_cast<int>(k_ - f_ - 1)); }

RingVal FxEncode(double x, const FixCfg& cfg) {
  if (!std::isfinite(x) || std::fabs(x) >= cfg.EncodeBound()) {
    throw Error(ErrorCode::kRange, "value " + std::to_string(x) + " outside fixed-point range");
  }
  const double scaled = std::round(std::ldexp(x, static_cast<int>(cfg.f())));
  return RingVal{cfg.FromSigned(static_cast<std::int64_t>(scaled))};
}

double FxDecode(RingVal v, const FixCfg& cfg) {
  return std::ldexp(static_cast<double>(cfg.Signed(v.v)), -static_cast<int>(cfg.f()));
}

ShareSet ShareN(RingVal x, std::size_t n, Rng& rng, const FixCfg& cfg) {
  if (n < 2) throw Error(ErrorCode::kParameter, "sharing needs at least 2 parties");
  ShareSet out{n, std::vector<RingVal>(n)};
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::uint64_t r = cfg.Reduce(rng());
    out.pieces[i].v = r;
    acc = cfg.Add(acc, r);
  }
  out.pieces[n - 1].v = cfg.Sub(x.v, acc);
  return out;
}

RingVal Reconstruct(const ShareSet& s, const FixCfg& cfg) {
  if (s.party_count < 2 || s.pieces.size() != s.party_count) {
    throw Error(ErrorCode::kIncompleteShares,
                "have " + std::to_string(s.pieces.size()) + " of " +
                    std::to_string(s.party_count) + " pieces");
  }
  std::uint64_t acc = 0;
  for (const RingVal& p : s.pieces) acc = cfg.Add(acc, p.v);
  return RingVal{acc};
}

std::vector<RingVal> Convert2ToN(RingVal a, RingVal b, std::size_t n, Rng& rng,
                                 const FixCfg& cfg) {
  const ShareSet from_first = ShareN(a, n, rng, cfg);
  const ShareSet from_second = ShareN(b, n, rng, cfg);
  std::vector<RingVal> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    out[t].v = cfg.Add(from_first.pieces[t].v, from_second.pieces[t].v);
  }
  return out;
}

std::vector<std::vector<std::uint64_t>> ShareVector(std::span<const std::uint64_t> values,
                                                    std::size_t n, Rng& rng,
                                                    const FixCfg& cfg) {
  if (n < 2) throw Error(ErrorCode::kParameter, "sharing needs at least 2 parties");
  std::vector<std::vector<std::uint64_t>> pieces(n, std::vector<std::uint64_t>(values.size()));
  for (std::size_t j = 0; j < values.size(); ++j) {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::uint64_t r = cfg.Reduce(rng());
      pieces[i][j] = r;
      acc += r;
    }
    pieces[n - 1][j] = cfg.Sub(values[j], acc);
  }
  return pieces;
}

std::vector<std::uint64_t> ReconstructVector(
    std::span<const std::vector<std::uint64_t>> pieces, const FixCfg& cfg) {
  if (pieces.size() < 2) throw Error(ErrorCode::kIncompleteShares, "fewer than 2 pieces");
  std::vector<std::uint64_t> out(pieces[0].size(), 0);
  for (const auto& p : pieces) {
    if (p.size() != out.size()) throw Error(ErrorCode::kShape, "piece lengths differ");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += p[j];
  }
  for (auto& v : out) v = cfg.Reduce(v);
  return out;
}

}  // namespace shapmkt
