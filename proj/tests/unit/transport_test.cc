#include "shapmkt/transport.h"

#include <gtest/gtest.h>

#include <sstream>

#include "shapmkt/error.h"

namespace shapmkt {
namespace {

TEST(NetConfigTest, Presets) {
  EXPECT_DOUBLE_EQ(NetConfig::FromName("domestic").latency_ms, 20.0);
  EXPECT_DOUBLE_EQ(NetConfig::FromName("cross-border").latency_ms, 120.0);
  EXPECT_DOUBLE_EQ(NetConfig::FromName("domestic").bandwidth_bps, 100e6);
  EXPECT_THROW(NetConfig::FromName("lunar"), Error);
  EXPECT_THROW(Network(NetConfig{-1.0, 1.0}, {0, 1}), Error);
  EXPECT_THROW(Network(NetConfig{1.0, 0.0}, {0, 1}), Error);
}

TEST(NetworkTest, EmptyPayloadCostsLatencyPlusFrame) {
  Network net(NetConfig{20.0, 100e6}, {0, 1});
  Receipt r = net.RouteMessage(0, 1, 0);
  EXPECT_EQ(r.wire_bytes, kFrameBytes);
  EXPECT_NEAR(r.arrive_s - r.depart_s, 0.020 + kFrameBytes * 8 / 100e6, 1e-15);
}

TEST(NetworkTest, BandwidthDefinition) {
  Network net(NetConfig{0.0, 100e6}, {0, 1});
  // 100 Mb of wire bytes, framing included.
  Receipt r = net.RouteMessage(0, 1, 12'500'000 - kFrameBytes);
  EXPECT_DOUBLE_EQ(r.arrive_s, 1.0);
}

TEST(NetworkTest, DependentVersusIndependentRounds) {
  Network a(NetConfig::Domestic(), {0, 1, 2});
  Receipt first = a.RouteMessage(0, 1, 10);
  a.RouteMessage(1, 2, 10, std::span<const Receipt>(&first, 1));
  EXPECT_EQ(a.CriticalRounds(), 2u);

  Network b(NetConfig::Domestic(), {0, 1, 2});
  std::vector<Message> batch = {{0, 1, 10}, {1, 2, 10}};
  b.RouteBatch(batch);
  EXPECT_EQ(b.CriticalRounds(), 1u);
}

TEST(NetworkTest, ReceiverClockCarriesImplicitDependency) {
  Network net(NetConfig::Domestic(), {0, 1, 2});
  net.RouteMessage(0, 1, 10);
  Receipt r = net.RouteMessage(1, 2, 10);
  EXPECT_EQ(r.round, 2u);
  EXPECT_NEAR(r.arrive_s, 2 * (0.020 + 18 * 8 / 100e6), 1e-12);
}

TEST(NetworkTest, UnknownPartyThrows) {
  Network net(NetConfig::Domestic(), {0, 1});
  try {
    net.RouteMessage(0, 7, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownParty);
  }
}

TEST(NetworkTest, EmptyRunHasZeroStats) {
  Network net(NetConfig::Domestic(), {0, 1});
  CostStats s = net.CollectStats();
  EXPECT_EQ(s.bytes, 0u);
  EXPECT_EQ(s.rounds, 0u);
  EXPECT_EQ(s.seconds, 0.0);
  EXPECT_TRUE(s.bytes_per_pair.empty());
}

TEST(NetworkTest, PhasesPartitionTotals) {
  Network net(NetConfig::Domestic(), {0, 1, 2});
  net.RouteMessage(0, 1, 100);
  net.SetPhase(Phase::kTwoParty);
  net.RouteMessage(1, 0, 300);
  net.RouteMessage(0, 1, 30);
  net.SetPhase(Phase::kMultiParty);
  std::vector<Message> batch = {{0, 2, 5}, {2, 1, 7}};
  net.RouteBatch(batch);
  CostStats s = net.CollectStats();
  std::uint64_t bytes = 0, rounds = 0;
  double secs = 0.0;
  for (const auto& p : s.per_phase) {
    bytes += p.bytes;
    rounds += p.rounds;
    secs += p.seconds;
  }
  EXPECT_EQ(bytes, s.bytes);
  EXPECT_EQ(rounds, s.rounds);
  EXPECT_NEAR(secs, s.seconds, 1e-12);
  EXPECT_EQ(s.phase(Phase::kTwoParty).bytes, 330u + 2 * kFrameBytes);
  EXPECT_EQ(s.bytes_per_pair.at({0, 1}), 130u + 2 * kFrameBytes);
}

TEST(NetworkTest, Deterministic) {
  auto run = [] {
    Network net(NetConfig::CrossBorder(), {0, 1, 2, 3});
    for (int i = 0; i < 20; ++i) net.RouteMessage(i % 4, (i + 1) % 4, 1000u * i);
    return net.CollectStats();
  };
  CostStats a = run(), b = run();
  EXPECT_EQ(a.bytes, b.bytes);
  EXPECT_EQ(a.rounds, b.rounds);
  EXPECT_EQ(a.seconds, b.seconds);
}

TEST(NetworkTest, LinkSerializesBackToBackMessages) {
  Network net(NetConfig{0.0, 8e3}, {0, 1});  // 1000 bytes per second
  std::vector<Message> batch = {{0, 1, 992}, {0, 1, 992}};
  auto r = net.RouteBatch(batch);
  EXPECT_DOUBLE_EQ(r[0].arrive_s, 1.0);
  EXPECT_DOUBLE_EQ(r[1].arrive_s, 2.0);
}

TEST(CostStatsTest, MergeParallelTakesCriticalPath) {
  CostStats a, b;
  a.bytes = 10;
  a.seconds = 1.0;
  a.rounds = 3;
  b.bytes = 5;
  b.seconds = 2.0;
  b.rounds = 1;
  CostStats p = a;
  p.MergeParallel(b);
  EXPECT_EQ(p.bytes, 15u);
  EXPECT_EQ(p.seconds, 2.0);
  EXPECT_EQ(p.rounds, 3u);
  CostStats s = a;
  s.MergeSequential(b);
  EXPECT_EQ(s.seconds, 3.0);
  EXPECT_EQ(s.rounds, 4u);
}

TEST(CostStatsTest, ReportHasTotalLine) {
  Network net(NetConfig::Domestic(), {0, 1});
  net.RouteMessage(0, 1, 92);
  std::ostringstream os;
  net.CollectStats().WriteReport(os);
  EXPECT_NE(os.str().find("total\tall\t100\t1\t"), std::string::npos);
}

}  // namespace
}  // namespace shapmkt
