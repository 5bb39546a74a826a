#include "shapmkt/valuation.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "shapmkt/error.h"

namespace shapmkt {

// ---------------------------------------------------------------------------
// Proxy learner

LogisticModel LogisticModel::Fit(const Dataset& s, int classes, const ProxyConfig& cfg) {
  if (s.rows() == 0) throw Error(ErrorCode::kParameter, "proxy training set is empty");
  if (!s.labelled()) throw Error(ErrorCode::kParameter, "proxy training set is unlabelled");
  LogisticModel m;
  m.classes_ = std::max(classes, s.classes);
  const std::size_t n = s.rows(), d = s.cols, C = static_cast<std::size_t>(m.classes_);
  if (std::all_of(s.y.begin(), s.y.end(), [&](int v) { return v == s.y[0]; })) {
    m.constant_ = s.y[0];
    return m;
  }
  m.mean_.assign(d, 0.0);
  m.inv_sd_.assign(d, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) m.mean_[j] += s.x[r * d + j];
  }
  for (double& v : m.mean_) v /= static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double c = s.x[r * d + j] - m.mean_[j];
      ss += c * c;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 1e-12) m.inv_sd_[j] = 1.0 / sd;
  }
  std::vector<double> z(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) z[r * d + j] = (s.x[r * d + j] - m.mean_[j]) * m.inv_sd_[j];
  }

  const std::size_t W = d + 1;
  m.w_.assign(C * W, 0.0);
  std::vector<double> grad(C * W), p(C);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double* x = z.data() + r * d;
      double top = -INFINITY;
      for (std::size_t c = 0; c < C; ++c) {
        double a = m.w_[c * W + d];
        for (std::size_t j = 0; j < d; ++j) a += m.w_[c * W + j] * x[j];
        p[c] = a;
        top = std::max(top, a);
      }
      double sum = 0.0;
      for (auto& v : p) sum += (v = std::exp(v - top));
      for (std::size_t c = 0; c < C; ++c) {
        const double g = p[c] / sum - (static_cast<int>(c) == s.y[r] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c * W + j] += g * x[j];
        grad[c * W + d] += g;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < W; ++j) {
        double g = grad[c * W + j] / static_cast<double>(n);
        if (j < d) g += cfg.l2 * m.w_[c * W + j];
        m.w_[c * W + j] -= cfg.learning_rate * g;
      }
    }
  }
  return m;
}

int LogisticModel::Predict(std::span<const double> x) const {
  if (constant_ >= 0) return constant_;
  const std::size_t d = mean_.size(), W = d + 1;
  if (x.size() != d) throw Error(ErrorCode::kShape, "proxy input width");
  int best = 0;
  double top = -INFINITY;
  for (int c = 0; c < classes_; ++c) {
    const std::size_t o = static_cast<std::size_t>(c) * W;
    double a = w_[o + d];
    for (std::size_t j = 0; j < d; ++j) a += w_[o + j] * (x[j] - mean_[j]) * inv_sd_[j];
    if (a > top) {
      top = a;
      best = c;
    }
  }
  return best;
}

double LogisticModel::Accuracy(const Dataset& d) const {
  if (d.rows() == 0 || !d.labelled()) throw Error(ErrorCode::kParameter, "accuracy needs labelled data");
  std::size_t hit = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) hit += Predict(d.row(r)) == d.y[r] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(d.rows());
}

double TrainProxyEval(const Dataset& s, const Dataset& val, const ProxyConfig& cfg) {
  return LogisticModel::Fit(s, std::max(s.classes, val.classes), cfg).Accuracy(val);
}

const char* SubsetKindName(SubsetKind k) {
  return k == SubsetKind::kUniform ? "uniform" : "owner-mixture";
}

SubsetKind ParseSubsetKind(const std::string& s) {
  if (s == "uniform") return SubsetKind::kUniform;
  if (s == "owner-mixture") return SubsetKind::kOwnerMixture;
  throw Error(ErrorCode::kParameter, "unknown subset law '" + s + "'");
}

UtilityDataset BuildUtilityDataset(const Dataset& train, const Dataset& val, std::size_t M,
                                   const SubsetLaw& law, Rng& rng, const ProxyConfig& proxy,
                                   std::vector<std::string>* warnings) {
  if (train.rows() == 0 || val.rows() == 0) throw Error(ErrorCode::kParameter, "empty L_tr or L_val");
  if (!train.labelled() || !val.labelled()) throw Error(ErrorCode::kParameter, "L_tr and L_val must be labelled");
  if (M == 0) throw Error(ErrorCode::kParameter, "M must be at least 1");
  const std::size_t n = train.rows();
  const bool mixture = law.kind == SubsetKind::kOwnerMixture;
  if (mixture && law.groups.size() != n) {
    throw Error(ErrorCode::kParameter, "owner-mixture law needs one group id per pool row");
  }
  const std::size_t hi = law.max_size == 0 ? n : std::min(law.max_size, n);
  const std::size_t lo = std::max<std::size_t>(1, law.min_size);
  if (lo > hi) throw Error(ErrorCode::kParameter, "subset law has an empty size range");
  if (warnings && std::all_of(val.y.begin(), val.y.end(), [&](int v) { return v == val.y[0]; })) {
    warnings->push_back("validation set has a single class; accuracies are degenerate");
  }
  UtilityDataset out;
  out.pool = train;
  out.validation = val;
  std::vector<std::size_t> idx(n);
  const std::size_t n_groups = mixture ? *std::max_element(law.groups.begin(), law.groups.end()) + 1 : 0;
  std::vector<double> rate(n_groups);
  for (std::size_t i = 0; i < M; ++i) {
    SdsEntry e;
    if (mixture) {
      for (auto& q : rate) q = rng.Uniform();
      for (std::size_t r = 0; r < n; ++r) {
        if (rng.Uniform() < rate[law.groups[r]]) e.members.push_back(r);
      }
      if (e.members.empty()) e.members.push_back(rng.UniformInt(0, n - 1));
    } else {
      const std::size_t size = rng.UniformInt(lo, hi);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < size; ++k) std::swap(idx[k], idx[rng.UniformInt(k, n - 1)]);
      e.members.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(size));
    }
    std::sort(e.members.begin(), e.members.end());
    e.utility = TrainProxyEval(train.Subset(e.members), val, proxy);
    out.entries.push_back(std::move(e));
  }
  return out;
}

void WriteUtilityDataset(const UtilityDataset& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path);
  os << "entry,utility,size,members\n";
  os.precision(17);
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    const auto& e = s.entries[i];
    os << i << ',' << e.utility << ',' << e.members.size() << ',';
    for (std::size_t k = 0; k < e.members.size(); ++k) os << (k ? " " : "") << e.members[k];
    os << '\n';
  }
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path);
  WriteCsv(s.pool, path + ".pool.csv");
  if (s.validation.rows() > 0) WriteCsv(s.validation, path + ".val.csv");
}

UtilityDataset ReadUtilityDataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + path);
  UtilityDataset s;
  std::string line;
  std::getline(is, line);
  if (line.rfind("entry,utility,size,members", 0) != 0) {
    throw Error(ErrorCode::kFormat, path + ": missing utility dataset header");
  }
  std::size_t ln = 1;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (int k = 0; k < 4; ++k) {
      if (!std::getline(ss, f[k], k < 3 ? ',' : '\n') && k < 3) {
        throw Error(ErrorCode::kFormat, path + ": line " + std::to_string(ln) + " has too few fields");
      }
    }
    SdsEntry e;
    try {
      e.utility = std::stod(f[1]);
      std::stringstream ms(f[3]);
      for (std::size_t v; ms >> v;) e.members.push_back(v);
      if (e.members.size() != std::stoul(f[2])) throw Error(ErrorCode::kFormat, "size column disagrees");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kFormat, path + ": line " + std::to_string(ln) + " is malformed");
    }
    s.entries.push_back(std::move(e));
  }
  s.pool = ReadCsv(path + ".pool.csv");
  if (std::filesystem::exists(path + ".val.csv")) s.validation = ReadCsv(path + ".val.csv");
  s.Validate();
  return s;
}

// ---------------------------------------------------------------------------
// Games

double UtilityTable::operator()(Coalition c) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memo_.find(c);
    if (it != memo_.end()) return it->second;
  }
  const double v = fn_(c);
  std::lock_guard<std::mutex> lock(mu_);
  memo_.emplace(c, v);
  return v;
}

std::map<Coalition, double> UtilityTable::values() const {
  std::lock_guard<std::mutex> lock(mu_);
  return memo_;
}

std::size_t UtilityTable::evaluations() const {
  std::lock_guard<std::mutex> lock(mu_);
  return memo_.size();
}

std::vector<double> ShapleyExact(const CoalitionFn& u, std::size_t n, std::size_t cap) {
  if (n > cap || n > 30) {
    throw Error(ErrorCode::kParameter, "exact Shapley over " + std::to_string(n) +
                                           " owners exceeds the cap of " + std::to_string(cap) +
                                           "; use Monte Carlo estimation");
  }
  const Coalition full = (Coalition{1} << n);
  std::vector<double> table(full);
  for (Coalition c = 0; c < full; ++c) table[c] = u(c);
  // weight[s] = s! (n - s - 1)! / n!
  std::vector<double> weight(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s + 1)) +
                         std::lgamma(static_cast<double>(n - s)) - std::lgamma(static_cast<double>(n + 1)));
  }
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Coalition bit = Coalition{1} << i;
    for (Coalition c = 0; c < full; ++c) {
      if (c & bit) continue;
      v[i] += weight[static_cast<std::size_t>(std::popcount(c))] * (table[c | bit] - table[c]);
    }
  }
  return v;
}

std::vector<double> LooValues(const CoalitionFn& u, std::size_t n) {
  if (n > 63) throw Error(ErrorCode::kParameter, "at most 63 owners");
  const Coalition all = n == 0 ? 0 : (~Coalition{0} >> (64 - n));
  const double top = u(all);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = top - u(all & ~(Coalition{1} << i));
  return v;
}

std::size_t DefaultMcSamples(std::size_t n) {
  if (n < 2) return 1;
  return static_cast<std::size_t>(std::ceil(10.0 * static_cast<double>(n) * std::log(static_cast<double>(n))));
}

std::vector<std::vector<std::size_t>> SamplePermutations(std::size_t n, std::size_t m, Rng& rng) {
  if (m == 0) throw Error(ErrorCode::kParameter, "sample count must be at least 1");
  std::vector<std::vector<std::size_t>> perms(m, std::vector<std::size_t>(n));
  for (auto& p : perms) {
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t k = n; k > 1; --k) std::swap(p[k - 1], p[rng.UniformInt(0, k - 1)]);
  }
  return perms;
}

std::vector<Coalition> PrefixCoalitions(std::span<const std::vector<std::size_t>> perms) {
  std::vector<Coalition> out{0};
  for (const auto& p : perms) {
    Coalition c = 0;
    for (std::size_t i : p) out.push_back(c |= Coalition{1} << i);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

McEstimate ShapleyFromPermutations(const CoalitionFn& u, std::size_t n,
                                   std::span<const std::vector<std::size_t>> perms) {
  if (perms.empty()) throw Error(ErrorCode::kParameter, "no permutations");
  std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
  const double empty = u(0);
  for (const auto& p : perms) {
    if (p.size() != n) throw Error(ErrorCode::kShape, "permutation length");
    Coalition c = 0;
    double prev = empty;
    for (std::size_t i : p) {
      c |= Coalition{1} << i;
      const double cur = u(c);
      const double d = cur - prev;
      sum[i] += d;
      sumsq[i] += d * d;
      prev = cur;
    }
  }
  McEstimate e;
  const double m = static_cast<double>(perms.size());
  e.samples = perms.size();
  e.value.resize(n);
  e.stderr_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    e.value[i] = sum[i] / m;
    const double var = perms.size() > 1 ? std::max(0.0, (sumsq[i] - m * e.value[i] * e.value[i]) / (m - 1)) : 0.0;
    e.stderr_[i] = std::sqrt(var / m);
  }
  return e;
}

McEstimate ShapleyMc(const CoalitionFn& u, std::size_t n, std::size_t m, Rng& rng) {
  const auto perms = SamplePermutations(n, m == 0 ? DefaultMcSamples(n) : m, rng);
  return ShapleyFromPermutations(u, n, perms);
}

double EffectivenessScore(std::span<const double> acc_low, std::span<const double> acc_rand,
                          std::span<const double> acc_high, RemovalMode mode) {
  const auto& other = mode == RemovalMode::kLow ? acc_low : acc_high;
  if (acc_rand.empty() || other.size() != acc_rand.size()) {
    throw Error(ErrorCode::kShape, "removal curves must have equal non-zero length");
  }
  double s = 0.0;
  for (std::size_t t = 0; t < acc_rand.size(); ++t) {
    s += mode == RemovalMode::kLow ? acc_low[t] - acc_rand[t] : acc_rand[t] - acc_high[t];
  }
  return s / static_cast<double>(acc_rand.size());
}

namespace {

std::vector<double> AverageRanks(std::span<const double> a) {
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x] < a[y]; });
  std::vector<double> r(a.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && a[idx[j + 1]] == a[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double SpearmanRank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::kParameter, "rank correlation needs two equal-length lists of at least 2");
  }
  const auto ra = AverageRanks(a), rb = AverageRanks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::kUndefined, "rank correlation of a constant list");
  return sab / std::sqrt(saa * sbb);
}

ValuationReport Valuate(const CoalitionFn& u, std::size_t n, bool exact, std::size_t mc_samples,
                        std::uint64_t seed) {
  UtilityTable table(u);
  CoalitionFn memo = [&](Coalition c) { return table(c); };
  ValuationReport r;
  r.exact = exact;
  r.seed = seed;
  if (exact) {
    r.shapley = ShapleyExact(memo, n);
    r.shapley_stderr.assign(n, 0.0);
    r.samples = std::size_t{1} << n;
  } else {
    Rng rng = Rng(seed).Split("shapley-mc");
    const auto est = ShapleyMc(memo, n, mc_samples, rng);
    r.shapley = est.value;
    r.shapley_stderr = est.stderr_;
    r.samples = est.samples;
  }
  r.loo = LooValues(memo, n);
  r.coalition_utility = table.values();
  return r;
}

void WriteValuationCsv(const ValuationReport& r, std::ostream& os) {
  os << "owner,shapley,shapley_stderr,loo\n";
  const auto prec = os.precision(17);
  for (std::size_t i = 0; i < r.shapley.size(); ++i) {
    os << i + 1 << ',' << r.shapley[i] << ',' << (i < r.shapley_stderr.size() ? r.shapley_stderr[i] : 0.0)
       << ',' << (i < r.loo.size() ? r.loo[i] : 0.0) << '\n';
  }
  os.precision(prec);
}

std::string CoalitionMembers(Coalition c) {
  std::string s;
  for (std::size_t i = 0; i < 64; ++i) {
    if (c >> i & 1U) s += (s.empty() ? "" : " ") + std::to_string(i + 1);
  }
  return s;
}

void WriteCoalitionCsv(const std::map<Coalition, double>& t, std::ostream& os) {
  os << "coalition,members,utility\n";
  const auto prec = os.precision(17);
  for (const auto& [c, v] : t) os << c << ',' << CoalitionMembers(c) << ',' << v << '\n';
  os.precision(prec);
}

// ---------------------------------------------------------------------------
// Markets

const char* NoiseKindName(NoiseKind k) {
  switch (k) {
    case NoiseKind::kFlip: return "flip";
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kLabelFlip: return "label-flip";
    case NoiseKind::kDirichlet: return "dirichlet";
  }
  return "?";
}

NoiseKind ParseNoiseKind(const std::string& s) {
  for (NoiseKind k : {NoiseKind::kFlip, NoiseKind::kGaussian, NoiseKind::kLabelFlip, NoiseKind::kDirichlet}) {
    if (s == NoiseKindName(k)) return k;
  }
  throw Error(ErrorCode::kParameter, "unknown noise kind '" + s + "'");
}

void MarketSpec::Validate() const {
  if (owners == 0 || owners > 63) throw Error(ErrorCode::kParameter, "owner count must be in [1, 63]");
  if (group_size == 0) throw Error(ErrorCode::kParameter, "group size must be positive");
  if (classes < 2) throw Error(ErrorCode::kParameter, "need at least two classes");
  if (dim == 0) throw Error(ErrorCode::kParameter, "feature dimension must be positive");
  if (!(preshare > 0.0 && preshare <= 1.0)) throw Error(ErrorCode::kParameter, "pre-share fraction must lie in (0, 1]");
  if (val_size == 0) throw Error(ErrorCode::kParameter, "validation size must be positive");
  if (!(separation > 0.0)) throw Error(ErrorCode::kParameter, "separation must be positive");
}

Dataset MarketScenario::PreShared(std::size_t owner) const {
  std::vector<std::size_t> idx(preshare_rows.at(owner));
  std::iota(idx.begin(), idx.end(), 0);
  return owners.at(owner).Subset(idx);
}

Dataset MarketScenario::PreSharedPool() const {
  std::vector<Dataset> parts;
  for (std::size_t i = 0; i < owners.size(); ++i) parts.push_back(PreShared(i));
  Dataset d = Concat(parts);
  d.classes = spec.classes;
  return d;
}

namespace {

struct Blobs {
  std::vector<std::vector<double>> means;
  bool binary = false;

  void Sample(Rng& rng, int c, std::vector<double>& x) const {
    const auto& mu = means[static_cast<std::size_t>(c)];
    x.resize(mu.size());
    for (std::size_t j = 0; j < mu.size(); ++j) {
      x[j] = mu[j] + rng.Normal();
      if (binary) x[j] = x[j] > 0 ? 1.0 : 0.0;
    }
  }
};

Dataset CleanSet(const Blobs& b, Rng& rng, std::size_t n, int classes) {
  Dataset d;
  d.cols = b.means[0].size();
  std::vector<double> x;
  for (std::size_t r = 0; r < n; ++r) {
    const int c = static_cast<int>(rng.UniformInt(0, static_cast<std::uint64_t>(classes - 1)));
    b.Sample(rng, c, x);
    d.Append(x, c);
  }
  d.classes = classes;
  return d;
}

std::vector<std::size_t> RankAscending(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<std::size_t> rank(v.size());
  for (std::size_t k = 0; k < idx.size(); ++k) rank[idx[k]] = k + 1;
  return rank;
}

std::vector<double> ClassProportions(const Dataset& d, int classes) {
  std::vector<double> q(static_cast<std::size_t>(classes), 0.0);
  for (int y : d.y) q[static_cast<std::size_t>(y)] += 1.0;
  for (double& v : q) v /= std::max<double>(1.0, static_cast<double>(d.rows()));
  return q;
}

double ImbalanceOf(std::span<const double> q) {
  double tv = 0.0;
  for (double v : q) tv += std::abs(v - 1.0 / static_cast<double>(q.size()));
  return 0.5 * tv;
}

void Shuffle(Dataset& d, Rng& rng) {
  std::vector<std::size_t> idx(d.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int classes = d.classes;
  d = d.Subset(idx);
  d.classes = classes;
}

}  // namespace

MarketScenario GenMarket(const MarketSpec& spec) {
  spec.Validate();
  MarketScenario s;
  s.spec = spec;
  const Rng root(spec.seed);
  Rng mrng = root.Split("means");
  Blobs blobs;
  blobs.binary = spec.noise == NoiseKind::kFlip;
  blobs.means.assign(static_cast<std::size_t>(spec.classes), std::vector<double>(spec.dim));
  for (auto& mu : blobs.means) {
    for (double& v : mu) v = spec.separation * mrng.Normal();
  }
  const std::size_t N = spec.owners;
  const double Nd = static_cast<double>(N);

  if (spec.noise == NoiseKind::kDirichlet) {
    Rng drng = root.Split("dirichlet");
    const std::size_t total = N * spec.group_size;
    s.owners.assign(N, Dataset{});
    for (auto& o : s.owners) {
      o.cols = spec.dim;
      o.classes = spec.classes;
    }
    std::vector<double> x;
    for (int c = 0; c < spec.classes; ++c) {
      const std::size_t count = total / static_cast<std::size_t>(spec.classes) +
                                (static_cast<std::size_t>(c) < total % static_cast<std::size_t>(spec.classes) ? 1 : 0);
      const bool wide = drng.Uniform() < 0.2;
      std::vector<double> p(N);
      double sum = 0.0;
      for (auto& v : p) {
        const double alpha = wide ? 20.0 + 80.0 * drng.Uniform() : 80.0 + 20.0 * drng.Uniform();
        v = std::gamma_distribution<double>(alpha, 1.0)(drng);
        sum += v;
      }
      for (auto& v : p) v /= sum;
      // Largest-remainder apportionment of this class's samples.
      std::vector<std::size_t> take(N);
      std::vector<std::pair<double, std::size_t>> rem;
      std::size_t given = 0;
      for (std::size_t j = 0; j < N; ++j) {
        const double exact = p[j] * static_cast<double>(count);
        take[j] = static_cast<std::size_t>(std::floor(exact));
        given += take[j];
        rem.push_back({exact - std::floor(exact), j});
      }
      std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      for (std::size_t k = 0; given < count; ++k, ++given) ++take[rem[k % N].second];
      for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t r = 0; r < take[j]; ++r) {
          blobs.Sample(drng, c, x);
          s.owners[j].Append(x, c);
        }
      }
    }
    for (auto& o : s.owners) {
      o.classes = spec.classes;
      Shuffle(o, drng);
      s.class_proportions.push_back(ClassProportions(o, spec.classes));
      s.noise_level.push_back(ImbalanceOf(s.class_proportions.back()));
    }
  } else {
    for (std::size_t i = 1; i <= N; ++i) {
      Rng orng = root.Split("owner").Split(i);
      Dataset d = CleanSet(blobs, orng, spec.group_size, spec.classes);
      const double frac = static_cast<double>(i - 1) / Nd;
      switch (spec.noise) {
        case NoiseKind::kFlip: {
          const double keep = frac;
          for (double& v : d.x) {
            if (orng.Uniform() >= keep) v = 1.0 - v;
          }
          s.keep_probability.push_back(keep);
          s.noise_level.push_back(1.0 - keep);
          break;
        }
        case NoiseKind::kGaussian: {
          const double sigma = 1.0 + 9.0 * static_cast<double>(i) / Nd;
          for (double& v : d.x) v += sigma * orng.Normal();
          s.noise_level.push_back(sigma);
          break;
        }
        case NoiseKind::kLabelFlip: {
          const double keep = N == 1 ? 1.0 : 1.0 - 0.4 * static_cast<double>(i - 1) / (Nd - 1.0);
          for (int& y : d.y) {
            if (orng.Uniform() < keep) continue;
            const int other = static_cast<int>(orng.UniformInt(0, static_cast<std::uint64_t>(spec.classes - 2)));
            y = other >= y ? other + 1 : other;
          }
          s.keep_probability.push_back(keep);
          s.noise_level.push_back(1.0 - keep);
          break;
        }
        case NoiseKind::kDirichlet:
          break;
      }
      s.owners.push_back(std::move(d));
    }
  }
  for (const auto& o : s.owners) {
    const double want = std::ceil(spec.preshare * static_cast<double>(o.rows()));
    s.preshare_rows.push_back(std::min(o.rows(), std::max<std::size_t>(1, static_cast<std::size_t>(want))));
  }
  s.noise_rank = RankAscending(s.noise_level);
  Rng vrng = root.Split("validation");
  s.validation = CleanSet(blobs, vrng, spec.val_size, spec.classes);
  Rng trng = root.Split("test");
  s.test = CleanSet(blobs, trng, spec.val_size, spec.classes);
  return s;
}

void SaveScenario(const MarketScenario& s, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  for (std::size_t i = 0; i < s.owners.size(); ++i) {
    WriteCsv(s.owners[i], (base / ("owner_" + std::to_string(i + 1) + ".csv")).string());
  }
  WriteCsv(s.validation, (base / "validation.csv").string());
  WriteCsv(s.test, (base / "test.csv").string());
  std::ofstream os(base / "market.csv");
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + (base / "market.csv").string());
  os.precision(17);
  os << "# owners=" << s.spec.owners << " group_size=" << s.spec.group_size << " noise="
     << NoiseKindName(s.spec.noise) << " classes=" << s.spec.classes << " dim=" << s.spec.dim
     << " separation=" << s.spec.separation << " preshare=" << s.spec.preshare
     << " val_size=" << s.spec.val_size << " seed=" << s.spec.seed << '\n';
  os << "owner,rows,preshare_rows,noise_level,noise_rank,keep_probability\n";
  for (std::size_t i = 0; i < s.owners.size(); ++i) {
    os << i + 1 << ',' << s.owners[i].rows() << ',' << s.preshare_rows[i] << ',' << s.noise_level[i] << ','
       << s.noise_rank[i] << ',' << (i < s.keep_probability.size() ? s.keep_probability[i] : 1.0) << '\n';
  }
}

MarketScenario LoadScenario(const std::string& dir) {
  const std::filesystem::path base(dir);
  std::ifstream is(base / "market.csv");
  if (!is) throw Error(ErrorCode::kIo, "cannot open " + (base / "market.csv").string());
  MarketScenario s;
  std::string line;
  std::getline(is, line);
  if (line.rfind("# ", 0) != 0) throw Error(ErrorCode::kFormat, "market.csv: missing spec line");
  std::stringstream hs(line.substr(2));
  for (std::string kv; hs >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "market.csv: bad spec field " + kv);
    const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    try {
      if (k == "owners") s.spec.owners = std::stoul(v);
      else if (k == "group_size") s.spec.group_size = std::stoul(v);
      else if (k == "noise") s.spec.noise = ParseNoiseKind(v);
      else if (k == "classes") s.spec.classes = std::stoi(v);
      else if (k == "dim") s.spec.dim = std::stoul(v);
      else if (k == "separation") s.spec.separation = std::stod(v);
      else if (k == "preshare") s.spec.preshare = std::stod(v);
      else if (k == "val_size") s.spec.val_size = std::stoul(v);
      else if (k == "seed") s.spec.seed = std::stoull(v);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kFormat, "market.csv: bad value for " + k);
    }
  }
  std::getline(is, line);
  for (std::size_t ln = 3; std::getline(is, line); ++ln) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f) std::getline(ss, x, ',');
    try {
      const std::size_t id = std::stoul(f[0]);
      if (id != s.owners.size() + 1) throw Error(ErrorCode::kFormat, "owners out of order");
      s.owners.push_back(ReadCsv((base / ("owner_" + f[0] + ".csv")).string()));
      s.owners.back().classes = std::max(s.owners.back().classes, s.spec.classes);
      s.preshare_rows.push_back(std::stoul(f[2]));
      s.noise_level.push_back(std::stod(f[3]));
      s.noise_rank.push_back(std::stoul(f[4]));
      if (s.spec.noise == NoiseKind::kFlip || s.spec.noise == NoiseKind::kLabelFlip) {
        s.keep_probability.push_back(std::stod(f[5]));
      }
      if (s.spec.noise == NoiseKind::kDirichlet) {
        s.class_proportions.push_back(ClassProportions(s.owners.back(), s.spec.classes));
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kFormat, "market.csv: line " + std::to_string(ln) + " is malformed");
    }
  }
  s.validation = ReadCsv((base / "validation.csv").string());
  s.test = ReadCsv((base / "test.csv").string());
  s.validation.classes = std::max(s.validation.classes, s.spec.classes);
  s.test.classes = std::max(s.test.classes, s.spec.classes);
  return s;
}

RemovalCurves RemovalExperiment(std::span<const Dataset> owners, const Dataset& test,
                                std::span<const double> values, std::size_t random_orders,
                                Rng& rng, const ProxyConfig& proxy) {
  const std::size_t n = owners.size();
  if (n < 2 || values.size() != n) throw Error(ErrorCode::kParameter, "removal needs >= 2 owners and one value each");
  if (random_orders == 0) throw Error(ErrorCode::kParameter, "need at least one random order");
  int classes = test.classes;
  for (const auto& o : owners) classes = std::max(classes, o.classes);
  auto curve = [&](const std::vector<std::size_t>& order) {
    std::vector<double> acc;
    for (std::size_t t = 1; t < n; ++t) {
      std::vector<Dataset> keep;
      for (std::size_t k = t; k < n; ++k) keep.push_back(owners[order[k]]);
      acc.push_back(LogisticModel::Fit(Concat(keep), classes, proxy).Accuracy(test));
    }
    return acc;
  };
  std::vector<std::size_t> low(n);
  std::iota(low.begin(), low.end(), 0);
  std::stable_sort(low.begin(), low.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> high(low.rbegin(), low.rend());
  RemovalCurves r;
  r.low = curve(low);
  r.high = curve(high);
  r.random.assign(n - 1, 0.0);
  for (std::size_t k = 0; k < random_orders; ++k) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto c = curve(order);
    for (std::size_t t = 0; t < c.size(); ++t) r.random[t] += c[t] / static_cast<double>(random_orders);
  }
  r.score_low = EffectivenessScore(r.low, r.random, r.high, RemovalMode::kLow);
  r.score_high = EffectivenessScore(r.low, r.random, r.high, RemovalMode::kHigh);
  return r;
}

}  // namespace shapmkt
