#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "shapmkt/boolean2pc.h"
#include "shapmkt/circuits.h"
#include "shapmkt/marketplace.h"
#include "shapmkt/mpc_engine.h"
#include "shapmkt/ring_shares.h"
#include "shapmkt/utility_model.h"
#include "shapmkt/valuation.h"

using namespace shapmkt;

namespace {

std::vector<PartyId> Iota(std::size_t n) {
  std::vector<PartyId> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

void BM_ShareReconstruct(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  for (auto _ : state) {
    const RingVal x{rng()};
    benchmark::DoNotOptimize(Reconstruct(ShareN(x, n, rng)));
  }
}
BENCHMARK(BM_ShareReconstruct)->Arg(2)->Arg(8)->Arg(16);

void BM_Convert2ToN(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(Convert2ToN(RingVal{rng()}, RingVal{rng()}, n, rng));
}
BENCHMARK(BM_Convert2ToN)->Arg(2)->Arg(8)->Arg(16);

// range(2): 0 raw product, 1 exact truncation, 2 local truncation
void BM_BeaverMul(benchmark::State& state) {
  const std::size_t parties = state.range(0), len = state.range(1);
  const FixCfg cfg;
  Network net(NetConfig::Domestic(), Iota(parties));
  Dealer dealer(cfg, Rng(3));
  const TruncMode mode = state.range(2) == 2 ? TruncMode::kLocal : TruncMode::kExact;
  Engine eng(cfg, net, dealer, mode, Rng(4));
  std::vector<double> v(len, 1.25);
  const auto x = eng.InputTensor(0, v, {len}, Iota(parties));
  const auto y = eng.InputTensor(1, v, {len}, Iota(parties));
  for (auto _ : state) {
    if (state.range(2) == 0)
      benchmark::DoNotOptimize(eng.MulRaw(x, y));
    else
      benchmark::DoNotOptimize(eng.BeaverMul(x, y));
  }
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_BeaverMul)->ArgsProduct({{2, 8}, {1024}, {0, 1, 2}});

void BM_TwoPartyCircuit(benchmark::State& state, const BristolCircuit& c) {
  const std::size_t inst = state.range(0);
  Network net(NetConfig::Domestic(), {0, 1});
  Dealer dealer(FixCfg(), Rng(5));
  BooleanSession s(net, dealer, 0, 1);
  Rng rng(6);
  std::vector<BitShares> in;
  for (std::uint32_t sz : c.input_sizes) {
    BitShares b;
    b.bits = sz;
    b.instances = inst;
    b.p0.resize(sz * b.words());
    b.p1.resize(sz * b.words());
    for (auto& w : b.p0) w = rng();
    for (auto& w : b.p1) w = rng();
    in.push_back(std::move(b));
  }
  const CircuitSchedule sched = ComputeSchedule(c);
  for (auto _ : state) benchmark::DoNotOptimize(s.Eval(c, sched, in));
  state.SetItemsProcessed(state.iterations() * inst);
}
BENCHMARK_CAPTURE(BM_TwoPartyCircuit, aes256, Aes256Circuit())->Arg(1)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_TwoPartyCircuit, sha256, Sha256CompressCircuit())->Arg(1)->Arg(64);

MarketScenario SmallMarket(std::size_t owners) {
  MarketSpec spec;
  spec.owners = owners;
  spec.group_size = 50;
  spec.val_size = 100;
  return GenMarket(spec);
}

void BM_ScoreCoalitionFloat(benchmark::State& state) {
  const auto s = SmallMarket(4);
  const auto m = BuildPreset("mlp-synthetic", {.label_aware = true});
  std::vector<const Dataset*> groups;
  for (const auto& d : s.owners) groups.push_back(&d);
  for (auto _ : state) benchmark::DoNotOptimize(ScoreCoalition(m, groups));
}
BENCHMARK(BM_ScoreCoalitionFloat);

void BM_ScoreCoalitionMpc(benchmark::State& state) {
  const std::size_t owners = state.range(0);
  const auto s = SmallMarket(owners);
  const auto m = BuildPreset("mlp-synthetic", {.label_aware = true});
  std::vector<const Dataset*> groups;
  for (const auto& d : s.owners) groups.push_back(&d);
  const FixCfg cfg;
  Network net(NetConfig::Domestic(), Iota(owners + 1));
  Dealer dealer(cfg, Rng(7));
  Engine eng(cfg, net, dealer, TruncMode::kExact, Rng(8));
  for (auto _ : state) benchmark::DoNotOptimize(MpcScoreCoalition(eng, m, groups));
}
BENCHMARK(BM_ScoreCoalitionMpc)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ShapleyExact(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const CoalitionFn u = [](Coalition c) { return static_cast<double>(std::popcount(c)) / (1.0 + (c & 1)); };
  for (auto _ : state) benchmark::DoNotOptimize(ShapleyExact(u, n));
}
BENCHMARK(BM_ShapleyExact)->DenseRange(4, 12, 4);

void BM_ShapleyMc(benchmark::State& state) {
  const std::size_t n = 16;
  const CoalitionFn u = [](Coalition c) { return static_cast<double>(std::popcount(c)); };
  Rng rng(9);
  for (auto _ : state) benchmark::DoNotOptimize(ShapleyMc(u, n, state.range(0), rng));
}
BENCHMARK(BM_ShapleyMc)->Arg(100)->Arg(1000);

void BM_CostBench(benchmark::State& state) {
  BenchGrid grid;
  grid.owners = {static_cast<std::size_t>(state.range(0))};
  grid.samples = {50};
  for (auto _ : state) benchmark::DoNotOptimize(Bench(grid));
}
BENCHMARK(BM_CostBench)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
