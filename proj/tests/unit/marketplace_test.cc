#include "shapmkt/marketplace.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "shapmkt/error.h"

namespace shapmkt {
namespace {

std::optional<ErrorCode> CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

KeyValueConfig Kv(const std::string& text) {
  std::istringstream is(text);
  return KeyValueConfig::Parse(is, "test");
}

ProtocolConfig Small(std::size_t owners, std::size_t rows, std::uint64_t seed = 1) {
  ProtocolConfig c;
  c.market.owners = owners;
  c.market.group_size = rows;
  c.market.val_size = 100;
  c.market.seed = seed;
  c.seed = seed;
  c.sds_size = 60;
  c.train.epochs = 15;
  return c;
}

std::filesystem::path TempDir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

// ---------------------------------------------------------------------------
// Config

TEST(KeyValueConfig, ParsesValuesCommentsAndLists) {
  const auto kv = Kv("# market\nowners = 5\nseparation=0.75  # blobs\n\nbench_owners = 3, 4 8\nlabel_aware=no\n");
  EXPECT_EQ(kv.Unsigned("owners", 0), 5u);
  EXPECT_DOUBLE_EQ(kv.Real("separation", 0), 0.75);
  EXPECT_EQ(kv.UnsignedList("bench_owners"), (std::vector<std::uint64_t>{3, 4, 8}));
  EXPECT_FALSE(kv.Bool("label_aware", true));
  EXPECT_EQ(kv.String("absent", "x"), "x");
  EXPECT_TRUE(kv.StringList("absent").empty());
}

TEST(KeyValueConfig, MalformedInputIsAConfigError) {
  EXPECT_EQ(CodeOf([] { Kv("owners 5\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("=5\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("a=1\na=2\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("owners=-1").Unsigned("owners", 0); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("sep=abc").Real("sep", 0); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("b=maybe").Bool("b", false); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { Kv("l=1,x").UnsignedList("l"); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { KeyValueConfig::Load("/nonexistent/shapmkt.cfg"); }), ErrorCode::kConfig);
}

TEST(ProtocolConfig, ReadsEveryKeyAndRejectsUnknownOnes) {
  const auto c = ProtocolConfig::FromKeyValues(
      Kv("owners=6\nnoise=flip\nvaluation=mc\nmc_samples=50\nnet=cross-border\nrefuse_redeem=2 3\n"
         "drop_owner=4\nsubset_law=uniform\ntrunc=local\nparallel_owners=true\nbudget=77\n"));
  EXPECT_EQ(c.market.owners, 6u);
  EXPECT_EQ(c.market.noise, NoiseKind::kFlip);
  EXPECT_EQ(c.valuation, ValuationMode::kMonteCarlo);
  EXPECT_EQ(c.mc_samples, 50u);
  EXPECT_EQ(c.net_name, "cross-border");
  EXPECT_EQ(c.refuse_redeem, (std::set<PartyId>{2, 3}));
  EXPECT_EQ(c.drop_owner, PartyId{4});
  EXPECT_EQ(c.subset_law.kind, SubsetKind::kUniform);
  EXPECT_EQ(c.trunc, TruncMode::kLocal);
  EXPECT_TRUE(c.parallel_owners);
  EXPECT_EQ(c.budget, 77u);

  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("ownerz=3")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("valuation=guess")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("noise=pink")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("subset_law=odd")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("net=moon")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("owners=20")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("owners=3\ndrop_owner=4")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("preshare=0")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("model=resnet")); }), ErrorCode::kConfig);
  EXPECT_FALSE(CodeOf([] { ProtocolConfig::FromKeyValues(Kv("owners=20\nvaluation=mc")); }));
}

TEST(CoalitionPlan, ExactEnumeratesAndMcCoversLooNeeds) {
  ProtocolConfig c;
  EXPECT_EQ(CoalitionPlan(c, 4).size(), 16u);
  c.valuation = ValuationMode::kMonteCarlo;
  c.mc_samples = 3;
  const auto plan = CoalitionPlan(c, 10);
  EXPECT_TRUE(std::is_sorted(plan.begin(), plan.end()));
  const Coalition all = (Coalition{1} << 10) - 1;
  EXPECT_TRUE(std::binary_search(plan.begin(), plan.end(), Coalition{0}));
  EXPECT_TRUE(std::binary_search(plan.begin(), plan.end(), all));
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_TRUE(std::binary_search(plan.begin(), plan.end(), all & ~(Coalition{1} << i)));
  }
  EXPECT_LE(plan.size(), 3u * 9u + 2u + 10u);
}

// ---------------------------------------------------------------------------
// Protocol runs

TEST(RunProtocol, SingleOwnerGetsTheWholeGain) {
  const auto r = RunProtocol(Small(1, 40));
  ASSERT_EQ(r.owners.size(), 1u);
  const double gain = r.coalitions.at(1).utility - r.coalitions.at(0).utility;
  EXPECT_NEAR(r.owners[0].shapley, gain, 1e-12);
  EXPECT_NEAR(r.owners[0].loo, gain, 1e-12);
  EXPECT_EQ(r.owners[0].state, TxState::kRedeemed);
  EXPECT_EQ(r.owners[0].delivered_checksum, r.owners[0].original_checksum);
  EXPECT_TRUE(r.aborted_phase.empty());
}

TEST(RunProtocol, MatchesPlaintextPipelineOnFourOwners) {
  const auto cfg = Small(4, 60);
  const auto secure = RunProtocol(cfg);
  const auto plain = RunPlaintextPipeline(cfg);
  ASSERT_EQ(secure.owners.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(secure.owners[i].shapley, plain.owners[i].shapley, 1e-3) << "owner " << i + 1;
    EXPECT_EQ(secure.owners[i].state, TxState::kRedeemed);
    EXPECT_EQ(secure.owners[i].delivered_checksum, secure.owners[i].original_checksum);
  }
  for (const auto& [c, v] : plain.coalitions) EXPECT_NEAR(secure.coalitions.at(c).utility, v.utility, 1e-3);
  EXPECT_GT(secure.stats.phase(Phase::kSetup).bytes, 0u);
  EXPECT_GT(secure.stats.phase(Phase::kTwoParty).bytes, 0u);
  EXPECT_GT(secure.stats.phase(Phase::kMultiParty).bytes, 0u);
  EXPECT_EQ(plain.stats.bytes, 0u);
  EXPECT_FALSE(secure.loss_history.empty());
}

TEST(RunProtocol, SettlementMatchesLedgerLogAndPaysOffers) {
  auto cfg = Small(3, 30);
  cfg.budget = 900;
  const auto r = RunProtocol(cfg);
  std::uint64_t paid = 0;
  for (const auto& o : r.owners) {
    ASSERT_NE(o.tx_id, 0u);
    EXPECT_EQ(o.state, TxState::kRedeemed);
    paid += o.offer;
    const auto redeem = std::count_if(r.ledger_log.begin(), r.ledger_log.end(), [&](const LedgerEvent& e) {
      return e.tx_id == o.tx_id && e.event == "redeem";
    });
    EXPECT_EQ(redeem, 1);
  }
  EXPECT_LE(paid, cfg.budget);
  EXPECT_EQ(r.buyer_deposit, cfg.budget + 3);
  EXPECT_EQ(r.buyer_balance, r.buyer_deposit - paid);
}

TEST(RunProtocol, RefusedRedemptionIsRefundedAndNothingDelivered) {
  auto cfg = Small(3, 30);
  cfg.refuse_redeem = {2};
  const auto r = RunProtocol(cfg);
  EXPECT_EQ(r.owners[1].state, TxState::kRefunded);
  EXPECT_TRUE(r.owners[1].delivered_checksum.empty());
  EXPECT_EQ(r.owners[0].state, TxState::kRedeemed);
  EXPECT_EQ(r.owners[2].state, TxState::kRedeemed);
  const std::uint64_t paid = r.owners[0].offer + r.owners[2].offer;
  EXPECT_EQ(r.buyer_balance, r.buyer_deposit - paid);
  const bool refunded = std::any_of(r.ledger_log.begin(), r.ledger_log.end(), [&](const LedgerEvent& e) {
    return e.tx_id == r.owners[1].tx_id && e.event == "refund";
  });
  EXPECT_TRUE(refunded);
}

TEST(RunProtocol, OfflineOwnerAbortsValuationWithPartialReport) {
  auto cfg = Small(3, 20);
  cfg.drop_owner = 2;
  try {
    RunProtocol(cfg);
    FAIL() << "expected an abort";
  } catch (const ProtocolAbort& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAbort);
    EXPECT_EQ(e.phase(), "valuation");
    EXPECT_NE(std::string(e.what()).find("[valuation]"), std::string::npos);
    EXPECT_EQ(e.partial().aborted_phase, "valuation");
    EXPECT_EQ(e.partial().owners.size(), 3u);
    for (const auto& o : e.partial().owners) EXPECT_EQ(o.tx_id, 0u);
  }
}

TEST(RunProtocol, SameSeedGivesIdenticalReports) {
  const auto cfg = Small(3, 30, 5);
  const auto a = RunProtocol(cfg), b = RunProtocol(cfg);
  EXPECT_EQ(a.shapley(), b.shapley());
  EXPECT_EQ(a.stats.bytes, b.stats.bytes);
  EXPECT_EQ(a.stats.rounds, b.stats.rounds);
  EXPECT_EQ(a.stats.seconds, b.stats.seconds);
  std::ostringstream sa, sb;
  WriteOwnerCsv(a, sa);
  WriteOwnerCsv(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  const auto p = RunPlaintextPipeline(cfg), q = RunPlaintextPipeline(cfg);
  EXPECT_EQ(p.shapley(), q.shapley());
  EXPECT_EQ(p.loss_history, q.loss_history);
}

TEST(RunProtocol, ParallelOwnersMatchSequential) {
  auto cfg = Small(4, 30);
  const auto seq = RunProtocol(cfg);
  cfg.parallel_owners = true;
  const auto par = RunProtocol(cfg);
  EXPECT_EQ(seq.shapley(), par.shapley());
  EXPECT_EQ(seq.stats.phase(Phase::kTwoParty).bytes, par.stats.phase(Phase::kTwoParty).bytes);
  EXPECT_LT(par.stats.seconds, seq.stats.seconds);
}

TEST(RunProtocol, CryptoBlockBudgetStillDeliversTheData) {
  auto cfg = Small(2, 30);
  const auto full = RunProtocol(cfg);
  cfg.crypto_blocks = 3;
  const auto part = RunProtocol(cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(part.owners[i].crypto_blocks_2pc, 3u);
    EXPECT_EQ(part.owners[i].crypto_blocks_local + 3, full.owners[i].crypto_blocks_2pc);
    EXPECT_EQ(full.owners[i].crypto_blocks_local, 0u);
    EXPECT_EQ(part.owners[i].delivered_checksum, part.owners[i].original_checksum);
  }
  EXPECT_EQ(part.shapley(), full.shapley());
  EXPECT_LT(part.stats.phase(Phase::kTwoParty).bytes, full.stats.phase(Phase::kTwoParty).bytes);
}

TEST(RunProtocol, SavedScenarioReproducesGeneratedOne) {
  const auto cfg = Small(3, 30);
  const auto dir = TempDir("shapmkt_market_test");
  SaveScenario(GenMarket(cfg.market), dir.string());
  auto from_dir = cfg;
  from_dir.scenario_dir = dir.string();
  const auto a = RunPlaintextPipeline(cfg), b = RunPlaintextPipeline(from_dir);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.owners[i].shapley, b.owners[i].shapley, 1e-9);
  std::filesystem::remove_all(dir);
}

TEST(RunProtocol, ExactModeOverCapIsAConfigError) {
  ProtocolConfig cfg;
  cfg.market.owners = 13;
  EXPECT_EQ(CodeOf([&] { RunProtocol(cfg); }), ErrorCode::kConfig);
}

// ---------------------------------------------------------------------------
// Plaintext pipeline

TEST(PlaintextPipeline, MonteCarloTracksExactOnSixOwners) {
  const auto cfg = Small(6, 40);
  const auto s = LoadOrGenerate(cfg);
  const auto model = PrepareModel(cfg, s).model;
  const auto exact = ValuatePlaintext(cfg, s, model);
  auto mc_cfg = cfg;
  mc_cfg.valuation = ValuationMode::kMonteCarlo;
  mc_cfg.mc_samples = 20000;
  const auto mc = ValuatePlaintext(mc_cfg, s, model);
  EXPECT_FALSE(mc.exact);
  EXPECT_EQ(mc.samples, 20000u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(mc.owners[i].shapley, exact.owners[i].shapley, 0.02);
}

TEST(PlaintextPipeline, LowValueRemovalBeatsRandomOnGaussianNoise) {
  ProtocolConfig cfg;
  const auto s = LoadOrGenerate(cfg);
  const auto r = RunPlaintextPipeline(cfg, s);
  Rng rng = Rng(cfg.seed).Split("removal");
  const auto curves = RemovalExperiment(s.owners, s.test, r.shapley(), cfg.removal_orders, rng);
  EXPECT_GT(curves.score_low, 0.0);
}

TEST(Reports, DirectoryHoldsCsvsAndSummary) {
  auto cfg = Small(2, 20);
  cfg.refuse_redeem = {1};
  const auto r = RunProtocol(cfg);
  const auto dir = TempDir("shapmkt_report_test");
  WriteReportDir(r, dir.string());
  for (const char* f : {"owners.csv", "coalitions.csv", "costs.txt", "ledger.tsv", "summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream owners(dir / "owners.csv");
  std::string header;
  std::getline(owners, header);
  EXPECT_EQ(header.rfind("owner,party,rows,preshared,noise_level,noise_rank,shapley", 0), 0u);
  std::size_t lines = 0;
  for (std::string l; std::getline(owners, l);) ++lines;
  EXPECT_EQ(lines, 2u);
  std::ostringstream summary;
  WriteSummary(r, summary);
  EXPECT_NE(summary.str().find("verified"), std::string::npos);
  EXPECT_NE(summary.str().find("refunded"), std::string::npos);
  std::ostringstream coal;
  WriteCoalitionScoresCsv(r, coal);
  const std::string text = coal.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Bench

TEST(Bench, DoublingSamplesDoublesTwoPartyBytes) {
  BenchGrid g;
  g.owners = {3};
  g.samples = {20, 40};
  const auto rows = Bench(g);
  ASSERT_EQ(rows.size(), 2u);
  const double ratio = static_cast<double>(rows[1].twopc_bytes) / static_cast<double>(rows[0].twopc_bytes);
  EXPECT_GE(ratio, 1.9);
  EXPECT_LE(ratio, 2.1);
  EXPECT_EQ(rows[0].mpc_bytes, rows[1].mpc_bytes);
}

TEST(Bench, MoreOwnersGrowMpcBytesOnly) {
  BenchGrid g;
  g.owners = {3, 8};
  g.samples = {10};
  const auto rows = Bench(g);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[1].mpc_bytes, rows[0].mpc_bytes);
  EXPECT_EQ(rows[1].twopc_bytes_per_owner, rows[0].twopc_bytes_per_owner);
  std::ostringstream os;
  WriteBenchCsv(rows, os);
  const std::string text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(Bench, EmptyGridGivesEmptyTable) {
  EXPECT_TRUE(Bench(BenchGrid{}).empty());
  const auto g = BenchGrid::FromKeyValues(Kv("bench_owners=3,4\nbench_samples=10\nbench_presets=domestic,cross-border"));
  EXPECT_EQ(g.owners.size(), 2u);
  EXPECT_EQ(g.presets.size(), 2u);
  EXPECT_EQ(CodeOf([] { BenchGrid::FromKeyValues(Kv("bench_owners=0")); }), ErrorCode::kConfig);
  EXPECT_EQ(CodeOf([] { BenchGrid::FromKeyValues(Kv("bench_presets=moon")); }), ErrorCode::kConfig);
}

TEST(FitLine, RecoversAnExactLine) {
  const std::vector<double> x = {1, 2, 3, 4}, y = {3, 5, 7, 9};
  const auto f = FitLine(x, y);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  const std::vector<double> c = {2, 2};
  EXPECT_EQ(CodeOf([&] { FitLine(c, std::vector<double>{1, 2}); }), ErrorCode::kUndefined);
  EXPECT_EQ(CodeOf([&] { FitLine(std::vector<double>{1}, std::vector<double>{1}); }), ErrorCode::kParameter);
}

}  // namespace
}  // namespace shapmkt
