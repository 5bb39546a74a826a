// shapmkt: data-market command line.
//
// Exit codes: 0 success, 2 configuration or input error, 3 protocol abort,
// 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "shapmkt/bristol.h"
#include "shapmkt/error.h"
#include "shapmkt/marketplace.h"

namespace fs = std::filesystem;
using namespace shapmkt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

KeyValueConfig LoadConfig(const Common& c) {
  std::istringstream none;
  KeyValueConfig kv = c.config.empty() ? KeyValueConfig::Parse(none, "command line") : KeyValueConfig::Load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::kConfig, "--set expects key=value, got '" + s + "'");
    kv.Set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

std::ofstream OpenOut(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  return os;
}

void AddCommon(CLI::App* app, Common& c, const std::string& out_default) {
  app->add_option("-c,--config", c.config, "key=value config file");
  app->add_option("-s,--set", c.sets, "override one config key (key=value)");
  app->add_option("-o,--out", c.out, "output path")->default_val(out_default);
}

int GenMarketCmd(const Common& c) {
  const auto cfg = ProtocolConfig::FromKeyValues(LoadConfig(c));
  const auto s = GenMarket(cfg.market);
  SaveScenario(s, c.out);
  std::cout << "wrote " << s.owners.size() << " owners (" << NoiseKindName(s.spec.noise) << " noise) to " << c.out
            << '\n';
  for (std::size_t i = 0; i < s.owners.size(); ++i) {
    std::cout << "  owner " << i + 1 << ": " << s.owners[i].rows() << " rows, noise " << s.noise_level[i]
              << ", pre-shared " << s.preshare_rows[i] << '\n';
  }
  return 0;
}

int BuildSdsCmd(const Common& c) {
  const auto cfg = ProtocolConfig::FromKeyValues(LoadConfig(c));
  const auto s = LoadOrGenerate(cfg);
  std::vector<std::string> warnings;
  const auto sds = BuildMarketSds(cfg, s, &warnings);
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  WriteUtilityDataset(sds, c.out);
  double lo = 1.0, hi = 0.0, mean = 0.0;
  for (const auto& e : sds.entries) {
    lo = std::min(lo, e.utility);
    hi = std::max(hi, e.utility);
    mean += e.utility / static_cast<double>(sds.M());
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << sds.M() << " entries over a pool of " << sds.pool.rows() << " rows to " << c.out
            << "\nutility min " << lo << ", mean " << mean << ", max " << hi << '\n';
  return 0;
}

int TrainUtilityCmd(const Common& c, const std::string& sds_path) {
  const auto cfg = ProtocolConfig::FromKeyValues(LoadConfig(c));
  BuyerModel bm;
  if (sds_path.empty()) {
    bm = PrepareModel(cfg, LoadOrGenerate(cfg));
  } else {
    const auto sds = ReadUtilityDataset(sds_path);
    PresetOptions opt;
    opt.input_dim = sds.pool.cols;
    opt.classes = std::max(sds.pool.classes, sds.validation.classes);
    opt.label_aware = cfg.label_aware;
    opt.seed = cfg.train.seed;
    auto m = BuildPreset(cfg.model_preset, opt);
    m.fraction_bits = cfg.fraction_bits;
    auto tr = TrainUtility(std::move(m), sds, cfg.train);
    bm.model = std::move(tr.model);
    bm.loss_history = std::move(tr.loss_history);
  }
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  SaveModel(bm.model, c.out);
  {
    auto os = OpenOut(c.out + ".loss.csv");
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < bm.loss_history.size(); ++i) os << i + 1 << ',' << bm.loss_history[i] << '\n';
  }
  for (const auto& w : bm.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "model with " << bm.model.parameter_count() << " parameters written to " << c.out << '\n';
  if (!bm.loss_history.empty()) {
    std::cout << "training loss " << bm.loss_history.front() << " -> " << bm.loss_history.back() << " over "
              << bm.loss_history.size() << " epochs\n";
  }
  return 0;
}

int ValuateCmd(const Common& c, bool mpc, bool removal) {
  const auto cfg = ProtocolConfig::FromKeyValues(LoadConfig(c));
  const auto s = LoadOrGenerate(cfg);
  BuyerModel bm = PrepareModel(cfg, s);
  RunReport r = mpc ? ValuateSecure(cfg, s, bm.model) : ValuatePlaintext(cfg, s, bm.model);
  r.loss_history = bm.loss_history;
  r.warnings = bm.warnings;
  WriteReportDir(r, c.out);
  if (removal) {
    Rng rng = Rng(cfg.seed).Split("removal");
    const auto curves = RemovalExperiment(s.owners, s.test, r.shapley(), cfg.removal_orders, rng, cfg.proxy);
    auto os = OpenOut(fs::path(c.out) / "removal.csv");
    os << "removed,low_first,random,high_first\n";
    for (std::size_t t = 0; t < curves.low.size(); ++t) {
      os << t + 1 << ',' << curves.low[t] << ',' << curves.random[t] << ',' << curves.high[t] << '\n';
    }
    std::cout << "removal effectiveness: low-first " << curves.score_low << ", high-first " << curves.score_high
              << '\n';
  }
  WriteSummary(r, std::cout);
  return 0;
}

int RunProtocolCmd(const Common& c) {
  const auto cfg = ProtocolConfig::FromKeyValues(LoadConfig(c));
  try {
    const auto r = RunProtocol(cfg);
    WriteReportDir(r, c.out);
    WriteSummary(r, std::cout);
    return 0;
  } catch (const ProtocolAbort& e) {
    WriteReportDir(e.partial(), c.out);
    WriteSummary(e.partial(), std::cout);
    std::cerr << "shapmkt: protocol aborted: " << e.what() << '\n';
    return kExitAbort;
  }
}

int ParseCircuitCmd(const std::string& path) {
  BristolCircuit circuit;
  try {
    circuit = LoadBristol(path);
    ValidateBristol(circuit);
  } catch (const Error& e) {
    std::cerr << "shapmkt: " << path << ": " << e.what() << '\n';
    return kExitConfig;
  }
  const auto st = ComputeStats(circuit);
  std::cout << path << '\n'
            << "  wires " << circuit.wire_count << ", gates " << circuit.gate_count() << '\n'
            << "  inputs";
  for (auto v : circuit.input_sizes) std::cout << ' ' << v;
  std::cout << " (" << circuit.input_bits() << " bits)\n  outputs";
  for (auto v : circuit.output_sizes) std::cout << ' ' << v;
  std::cout << " (" << circuit.output_bits() << " bits)\n"
            << "  XOR " << st.xor_gates << ", AND " << st.and_gates << ", INV " << st.inv_gates << ", EQ "
            << st.eq_gates << ", EQW " << st.eqw_gates << '\n'
            << "  AND depth " << st.and_depth << '\n';
  return 0;
}

int BenchCmd(const Common& c) {
  const auto grid = BenchGrid::FromKeyValues(LoadConfig(c));
  const auto rows = Bench(grid);
  {
    auto os = OpenOut(c.out);
    WriteBenchCsv(rows, os);
  }
  std::cout << "wrote " << rows.size() << " rows to " << c.out << '\n';
  // Per preset and owner count: fits of 2PC and MPC bytes against samples.
  for (const auto& preset : grid.presets) {
    for (std::size_t n : grid.owners) {
      std::vector<double> x, two, multi;
      for (const auto& r : rows) {
        if (r.preset != preset || r.owners != n) continue;
        x.push_back(static_cast<double>(r.samples));
        two.push_back(static_cast<double>(r.twopc_bytes));
        multi.push_back(static_cast<double>(r.mpc_bytes));
      }
      if (x.size() < 2) continue;
      const auto f = FitLine(x, two);
      const auto [lo, hi] = std::minmax_element(multi.begin(), multi.end());
      std::cout << preset << ", " << n << " owners: 2PC bytes = " << f.intercept << " + " << f.slope
                << " * samples (R2 " << f.r2 << "); MPC bytes " << *lo << ".." << *hi << '\n';
    }
  }
  return 0;
}

int ExitCodeFor(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kAbort:
      return kExitAbort;
    case ErrorCode::kConfig:
    case ErrorCode::kIo:
    case ErrorCode::kParse:
    case ErrorCode::kFormat:
    case ErrorCode::kVersion:
    case ErrorCode::kValidation:
    case ErrorCode::kParameter:
      return kExitConfig;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley-value data market: valuation under MPC with hash-locked payment"};
  app.require_subcommand(1);

  Common gen, sds, train, val, run, bench;
  auto* gen_cmd = app.add_subcommand("gen-market", "generate a synthetic market scenario directory");
  AddCommon(gen_cmd, gen, "market");
  auto* sds_cmd = app.add_subcommand("build-sds", "build the utility dataset from the pre-shared pool");
  AddCommon(sds_cmd, sds, "sds.csv");
  auto* train_cmd = app.add_subcommand("train-utility", "train the data utility model");
  AddCommon(train_cmd, train, "model.txt");
  std::string sds_path;
  train_cmd->add_option("--sds", sds_path, "train on an existing utility dataset")->check(CLI::ExistingFile);
  auto* val_cmd = app.add_subcommand("valuate", "Shapley and leave-one-out values for every owner");
  AddCommon(val_cmd, val, "valuation");
  bool plaintext = false, mpc = false, removal = false;
  auto* pt_flag = val_cmd->add_flag("--plaintext", plaintext, "float scoring, no sharing");
  auto* mpc_flag = val_cmd->add_flag("--mpc", mpc, "secure encoding and mapping phases");
  pt_flag->excludes(mpc_flag);
  val_cmd->add_flag("--removal", removal, "also run the owner removal experiment");
  auto* run_cmd = app.add_subcommand("run-protocol", "full protocol: valuation, payment and delivery");
  AddCommon(run_cmd, run, "report");
  auto* parse_cmd = app.add_subcommand("parse-circuit", "validate a Bristol Fashion circuit and print statistics");
  std::string circuit_path;
  parse_cmd->add_option("file", circuit_path, "circuit file")->required();
  auto* bench_cmd = app.add_subcommand("bench", "communication cost grid (bench_owners, bench_samples, bench_presets)");
  AddCommon(bench_cmd, bench, "bench.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen_cmd) return GenMarketCmd(gen);
    if (*sds_cmd) return BuildSdsCmd(sds);
    if (*train_cmd) return TrainUtilityCmd(train, sds_path);
    if (*val_cmd) {
      if (!plaintext && !mpc) throw Error(ErrorCode::kConfig, "valuate needs --plaintext or --mpc");
      return ValuateCmd(val, mpc, removal);
    }
    if (*run_cmd) return RunProtocolCmd(run);
    if (*parse_cmd) return ParseCircuitCmd(circuit_path);
    if (*bench_cmd) return BenchCmd(bench);
  } catch (const Error& e) {
    std::cerr << "shapmkt: " << e.what() << '\n';
    return ExitCodeFor(e);
  } catch (const std::exception& e) {
    std::cerr << "shapmkt: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
