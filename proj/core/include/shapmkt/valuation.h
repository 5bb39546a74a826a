#pragma once

// Utility-dataset construction with a proxy learner, Shapley and
// leave-one-out values, Monte Carlo estimation, evaluation metrics and
// synthetic market generation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "shapmkt/dataset.h"
#include "shapmkt/rng.h"
#include "shapmkt/utility_model.h"

namespace shapmkt {

// ---------------------------------------------------------------------------
// Proxy learner: multinomial logistic regression on standardised features.

struct ProxyConfig {
  double learning_rate = 0.1;
  std::size_t iterations = 200;
  double l2 = 1e-4;
};

class LogisticModel {
 public:
  static LogisticModel Fit(const Dataset& s, int classes, const ProxyConfig& cfg = {});
  int Predict(std::span<const double> x) const;
  double Accuracy(const Dataset& d) const;

 private:
  int classes_ = 0;
  int constant_ = -1;  // set when the training labels have one class
  std::vector<double> mean_, inv_sd_;
  std::vector<double> w_;  // [classes, cols + 1], bias last
};

double TrainProxyEval(const Dataset& s, const Dataset& val, const ProxyConfig& cfg = {});

// kUniform: size uniform on [min_size, max_size] (0 = |L_tr|), then a uniform
// subset of that size.
// kOwnerMixture: every group draws a rate q ~ U[0,1] and each of its rows
// joins with probability q; groups[r] is the source of row r. An empty draw
// falls back to one uniform row.
enum class SubsetKind { kUniform, kOwnerMixture };
const char* SubsetKindName(SubsetKind k);
SubsetKind ParseSubsetKind(const std::string& s);

struct SubsetLaw {
  SubsetKind kind = SubsetKind::kUniform;
  std::size_t min_size = 1;
  std::size_t max_size = 0;
  std::vector<std::size_t> groups;
};

UtilityDataset BuildUtilityDataset(const Dataset& train, const Dataset& val, std::size_t M,
                                   const SubsetLaw& law, Rng& rng, const ProxyConfig& proxy = {},
                                   std::vector<std::string>* warnings = nullptr);

void WriteUtilityDataset(const UtilityDataset& s, const std::string& path);
UtilityDataset ReadUtilityDataset(const std::string& path);

// ---------------------------------------------------------------------------
// Cooperative games. Coalitions are bitmasks over owners 0..N-1.

using Coalition = std::uint64_t;
using CoalitionFn = std::function<double(Coalition)>;

// Memoised, thread-safe view of a coalition function.
class UtilityTable {
 public:
  explicit UtilityTable(CoalitionFn fn) : fn_(std::move(fn)) {}
  double operator()(Coalition c);
  std::map<Coalition, double> values() const;
  std::size_t evaluations() const;

 private:
  CoalitionFn fn_;
  mutable std::mutex mu_;
  std::map<Coalition, double> memo_;
};

inline constexpr std::size_t kExactCap = 12;

std::vector<double> ShapleyExact(const CoalitionFn& u, std::size_t n, std::size_t cap = kExactCap);
std::vector<double> LooValues(const CoalitionFn& u, std::size_t n);

struct McEstimate {
  std::vector<double> value;
  std::vector<double> stderr_;
  std::size_t samples = 0;
};

std::size_t DefaultMcSamples(std::size_t n);  // ceil(10 n ln n), at least 1
std::vector<std::vector<std::size_t>> SamplePermutations(std::size_t n, std::size_t m, Rng& rng);
// Every coalition a permutation prefix visits, including the empty set.
std::vector<Coalition> PrefixCoalitions(std::span<const std::vector<std::size_t>> perms);
McEstimate ShapleyFromPermutations(const CoalitionFn& u, std::size_t n,
                                   std::span<const std::vector<std::size_t>> perms);
McEstimate ShapleyMc(const CoalitionFn& u, std::size_t n, std::size_t m, Rng& rng);

enum class RemovalMode { kLow, kHigh };
double EffectivenessScore(std::span<const double> acc_low, std::span<const double> acc_rand,
                          std::span<const double> acc_high, RemovalMode mode);
double SpearmanRank(std::span<const double> a, std::span<const double> b);

struct ValuationReport {
  std::vector<double> shapley;
  std::vector<double> shapley_stderr;  // zeros when exact
  std::vector<double> loo;
  std::map<Coalition, double> coalition_utility;
  bool exact = true;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

// Exact for n <= cap, otherwise Monte Carlo with `mc_samples` (0 = default).
ValuationReport Valuate(const CoalitionFn& u, std::size_t n, bool exact, std::size_t mc_samples,
                        std::uint64_t seed);

// owner,shapley,shapley_stderr,loo
void WriteValuationCsv(const ValuationReport& r, std::ostream& os);
// coalition,members,utility (members separated by spaces, 1-based)
void WriteCoalitionCsv(const std::map<Coalition, double>& t, std::ostream& os);
std::string CoalitionMembers(Coalition c);

// ---------------------------------------------------------------------------
// Synthetic markets

enum class NoiseKind { kFlip, kGaussian, kLabelFlip, kDirichlet };
const char* NoiseKindName(NoiseKind k);
NoiseKind ParseNoiseKind(const std::string& s);

struct MarketSpec {
  std::size_t owners = 8;
  std::size_t group_size = 200;  // samples per owner (average for dirichlet)
  NoiseKind noise = NoiseKind::kGaussian;
  int classes = 2;
  std::size_t dim = 10;
  double separation = 0.5;  // class means ~ N(0, separation^2 I)
  double preshare = 0.3;
  std::size_t val_size = 300;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct MarketScenario {
  MarketSpec spec;
  std::vector<Dataset> owners;
  std::vector<std::size_t> preshare_rows;  // leading rows of each owner
  Dataset validation;
  Dataset test;
  std::vector<double> noise_level;  // larger is noisier
  std::vector<std::size_t> noise_rank;  // 1 = least noisy
  std::vector<double> keep_probability;  // flip and label-flip
  std::vector<std::vector<double>> class_proportions;  // dirichlet: [owner][class]

  Dataset PreShared(std::size_t owner) const;
  Dataset PreSharedPool() const;
};

MarketScenario GenMarket(const MarketSpec& spec);

// Directory with owner_<i>.csv, validation.csv, test.csv and market.csv.
void SaveScenario(const MarketScenario& s, const std::string& dir);
MarketScenario LoadScenario(const std::string& dir);

// Accuracy of the proxy trained on the remaining owners after removing
// 1..n-1 owners in value order (low first, high first) and in random orders.
struct RemovalCurves {
  std::vector<double> low, high, random;
  double score_low = 0.0, score_high = 0.0;
};

RemovalCurves RemovalExperiment(std::span<const Dataset> owners, const Dataset& test,
                                std::span<const double> values, std::size_t random_orders,
                                Rng& rng, const ProxyConfig& proxy = {});

}  // namespace shapmkt
