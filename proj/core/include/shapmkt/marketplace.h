#pragma once

// End-to-end market runs: pre-share and utility-model training, secure
// valuation, hash-locked payment and delivery; the plaintext reference
// pipeline; cost benchmarks; key=value configuration.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "shapmkt/error.h"
#include "shapmkt/fair_payment.h"
#include "shapmkt/mpc_engine.h"
#include "shapmkt/transport.h"
#include "shapmkt/utility_model.h"
#include "shapmkt/valuation.h"

namespace shapmkt {

// ---------------------------------------------------------------------------
// key=value configuration

class KeyValueConfig {
 public:
  static KeyValueConfig Parse(std::istream& is, const std::string& source = "<config>");
  static KeyValueConfig Load(const std::string& path);

  bool Has(const std::string& key) const { return values_.count(key) != 0; }
  void Set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string String(const std::string& key, const std::string& fallback) const;
  std::uint64_t Unsigned(const std::string& key, std::uint64_t fallback) const;
  double Real(const std::string& key, double fallback) const;
  bool Bool(const std::string& key, bool fallback) const;
  std::vector<std::uint64_t> UnsignedList(const std::string& key) const;
  std::vector<std::string> StringList(const std::string& key) const;
  // Config error naming every key not in `known`.
  void RejectUnknown(const std::set<std::string>& known) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
};

enum class ValuationMode { kExact, kMonteCarlo };

struct ProtocolConfig {
  std::string scenario_dir;  // empty: generate from `market`
  MarketSpec market;
  std::string model_preset = "mlp-synthetic";
  std::string model_file;  // when set, the buyer skips training and uses it
  bool label_aware = true;
  std::size_t sds_size = 200;
  SubsetLaw subset_law{SubsetKind::kOwnerMixture, 1, 0, {}};
  ProxyConfig proxy;
  TrainConfig train;
  ValuationMode valuation = ValuationMode::kExact;
  std::size_t mc_samples = 0;  // 0 = default
  NetConfig net = NetConfig::Domestic();
  std::string net_name = "domestic";
  std::uint64_t budget = 1000000;
  std::uint64_t seed = 1;
  TruncMode trunc = TruncMode::kExact;
  unsigned fraction_bits = 16;
  std::size_t crypto_blocks = 0;  // AES blocks per owner done in 2PC; 0 = all
  std::uint64_t deadline_blocks = 10;
  std::set<PartyId> refuse_redeem;  // owners that never reveal their key
  std::optional<PartyId> drop_owner;  // owner that goes offline during valuation
  bool parallel_owners = false;
  std::size_t removal_orders = 5;

  // Throws a config error on an inconsistent setting.
  void Validate() const;
  static ProtocolConfig FromKeyValues(const KeyValueConfig& kv);
};

// ---------------------------------------------------------------------------
// Reports

struct OwnerOutcome {
  PartyId party = 0;
  std::size_t rows = 0;
  std::size_t preshared_rows = 0;
  double noise_level = 0.0;
  std::size_t noise_rank = 0;
  double shapley = 0.0;
  double shapley_stderr = 0.0;
  double loo = 0.0;
  std::uint64_t offer = 0;
  std::uint64_t tx_id = 0;
  TxState state = TxState::kOpen;
  std::string original_checksum;   // SHA-256 of the canonical encoding
  std::string delivered_checksum;  // of the buyer's decryption; empty if none
  std::size_t crypto_blocks_2pc = 0;
  std::size_t crypto_blocks_local = 0;
};

struct CoalitionOutcome {
  double pre_sigmoid = 0.0;
  double utility = 0.0;
};

struct RunReport {
  bool secure = true;
  std::vector<OwnerOutcome> owners;
  std::map<Coalition, CoalitionOutcome> coalitions;
  bool exact = true;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  CostStats stats;
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
  std::vector<LedgerEvent> ledger_log;
  std::uint64_t buyer_deposit = 0;
  std::uint64_t buyer_balance = 0;
  std::string aborted_phase;  // empty when the run completed
  std::string abort_message;

  std::vector<double> shapley() const;
};

// Raised when a protocol step fails; carries the report up to that point.
class ProtocolAbort : public Error {
 public:
  ProtocolAbort(std::string phase, const std::string& message, RunReport partial)
      : Error(ErrorCode::kAbort, "[" + phase + "] " + message),
        phase_(std::move(phase)),
        partial_(std::move(partial)) {}
  const std::string& phase() const { return phase_; }
  const RunReport& partial() const { return partial_; }

 private:
  std::string phase_;
  RunReport partial_;
};

// owner,party,rows,preshared,noise_level,noise_rank,shapley,shapley_stderr,
// loo,offer,tx,state,original_checksum,delivered_checksum
void WriteOwnerCsv(const RunReport& r, std::ostream& os);
// coalition,members,pre_sigmoid,utility
void WriteCoalitionScoresCsv(const RunReport& r, std::ostream& os);
void WriteSummary(const RunReport& r, std::ostream& os);
// owners.csv, coalitions.csv, costs.txt, ledger.tsv, summary.txt
void WriteReportDir(const RunReport& r, const std::string& dir);

// ---------------------------------------------------------------------------
// Pipelines

MarketScenario LoadOrGenerate(const ProtocolConfig& cfg);

// Utility dataset from the pre-shared pool under the configured subset law.
UtilityDataset BuildMarketSds(const ProtocolConfig& cfg, const MarketScenario& s,
                              std::vector<std::string>* warnings = nullptr);

// Step 1 as the buyer runs it: utility dataset from the pre-shared pool and
// a trained (or loaded) model.
struct BuyerModel {
  UtilityModel model;
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
};
BuyerModel PrepareModel(const ProtocolConfig& cfg, const MarketScenario& s);

// Coalitions whose utilities the valuation needs.
std::vector<Coalition> CoalitionPlan(const ProtocolConfig& cfg, std::size_t n);

RunReport RunProtocol(const ProtocolConfig& cfg);
RunReport RunProtocol(const ProtocolConfig& cfg, const MarketScenario& s);
RunReport RunPlaintextPipeline(const ProtocolConfig& cfg);
RunReport RunPlaintextPipeline(const ProtocolConfig& cfg, const MarketScenario& s);

// Valuation with a given model: plaintext float scoring, or the secure
// encode / lift / map path without payment.
RunReport ValuatePlaintext(const ProtocolConfig& cfg, const MarketScenario& s, const UtilityModel& m);
RunReport ValuateSecure(const ProtocolConfig& cfg, const MarketScenario& s, const UtilityModel& m);

// ---------------------------------------------------------------------------
// Cost benchmark

struct BenchGrid {
  std::vector<std::size_t> owners;
  std::vector<std::size_t> samples;
  std::vector<std::string> presets = {"domestic"};
  std::size_t dim = 10;
  std::string model_preset = "mlp-synthetic";
  TruncMode trunc = TruncMode::kExact;
  std::size_t crypto_blocks = 0;
  std::uint64_t seed = 1;

  static BenchGrid FromKeyValues(const KeyValueConfig& kv);
};

struct BenchRow {
  std::size_t owners = 0;
  std::size_t samples = 0;
  std::string preset;
  std::uint64_t twopc_bytes = 0;            // all owners
  std::uint64_t twopc_bytes_per_owner = 0;  // owner 1
  std::uint64_t mpc_bytes = 0;              // lifting plus one grand-coalition score
  double twopc_seconds = 0.0;
  double mpc_seconds = 0.0;
};

std::vector<BenchRow> Bench(const BenchGrid& grid);
// owners,samples,preset,twopc_bytes,twopc_bytes_per_owner,mpc_bytes,twopc_seconds,mpc_seconds
void WriteBenchCsv(std::span<const BenchRow> rows, std::ostream& os);

// Least-squares fit y = a + b x; returns (a, b, r2).
struct LinearFit {
  double intercept = 0.0, slope = 0.0, r2 = 0.0;
};
LinearFit FitLine(std::span<const double> x, std::span<const double> y);

}  // namespace shapmkt
