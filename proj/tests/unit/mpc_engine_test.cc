#include "shapmkt/mpc_engine.h"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "../support/random_circuit.h"
#include "shapmkt/error.h"

namespace shapmkt {
namespace {

struct Ctx {
  explicit Ctx(std::size_t n, TruncMode mode = TruncMode::kExact, std::uint64_t seed = 1,
               FixCfg cfg = FixCfg())
      : cfg(cfg), parties(n), net(NetConfig::Domestic(), Parties(n)), dealer(cfg, Rng(seed).Split("dealer")),
        eng(cfg, net, dealer, mode, Rng(seed).Split("engine")) {
    std::iota(parties.begin(), parties.end(), 0);
  }
  static std::vector<PartyId> Parties(std::size_t n) {
    std::vector<PartyId> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
  }
  SharedTensor In(std::vector<double> v, Shape shape = {}) {
    if (shape.empty()) shape = {v.size()};
    return eng.InputTensor(0, v, shape, parties);
  }
  std::vector<double> OpenF(const SharedTensor& t) {
    std::vector<double> out;
    for (auto v : eng.Open(t)) out.push_back(FxDecode(RingVal{v}, cfg));
    return out;
  }

  FixCfg cfg;
  std::vector<PartyId> parties;
  Network net;
  Dealer dealer;
  Engine eng;
};

const double kUlp = std::ldexp(1.0, -16);

TEST(InputTensorTest, ZeroAndKnownValues) {
  Ctx c(3);
  auto z = c.eng.Open(c.In({0.0, 0.0, 0.0}));
  for (auto v : z) EXPECT_EQ(v, 0u);
  auto t = c.eng.Open(c.In({1.0, -2.5}));
  EXPECT_EQ(t[0], FxEncode(1.0).v);
  EXPECT_EQ(t[1], FxEncode(-2.5).v);
}

TEST(InputTensorTest, RandomRoundTrip) {
  Ctx c(5);
  Rng rng(4);
  std::vector<double> v(16);
  for (auto& x : v) x = rng.Normal() * 100;
  auto back = c.OpenF(c.eng.InputTensor(3, v, {4, 4}, c.parties));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::fabs(back[i] - v[i]), std::ldexp(1.0, -17));
}

TEST(InputTensorTest, OverflowIsRangeError) {
  Ctx c(2);
  try {
    c.In({1e20});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRange);
  }
}

TEST(OpenTest, ScopedToReceiver) {
  Ctx c(3);
  SharedTensor x = c.In({1.0, 2.0});
  const auto before1 = c.eng.View(1).size();
  const auto before2 = c.eng.View(2).size();
  c.eng.Open(x, 0);
  EXPECT_EQ(c.eng.View(1).size(), before1);
  EXPECT_EQ(c.eng.View(2).size(), before2);
  ASSERT_FALSE(c.eng.View(0).empty());
  EXPECT_EQ(c.eng.View(0).back().values[1], FxEncode(2.0).v);
}

TEST(OpenTest, FailedPartyAborts) {
  Ctx c(3);
  SharedTensor x = c.In({1.0});
  c.eng.FailParty(2);
  try {
    c.eng.Open(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAbort);
  }
}

TEST(LincombTest, IdentitySumAndHalf) {
  Ctx c(3);
  SharedTensor x = c.In({1.25, -3.0, 7.5});
  SharedTensor y = c.In({2.0, 0.5, -1.0});
  LinTerm id[] = {{1.0, &x}};
  EXPECT_EQ(c.eng.Open(c.eng.Lincomb(id)), c.eng.Open(x));
  LinTerm sum[] = {{1.0, &x}, {1.0, &y}};
  auto s = c.OpenF(c.eng.Lincomb(sum));
  EXPECT_EQ(s, (std::vector<double>{3.25, -2.5, 6.5}));
  LinTerm half[] = {{0.5, &x}};
  auto h = c.OpenF(c.eng.Lincomb(half));
  EXPECT_NEAR(h[0], 0.625, kUlp);
  EXPECT_NEAR(h[1], -1.5, kUlp);
  EXPECT_NEAR(h[2], 3.75, kUlp);
}

TEST(LincombTest, SendsNothingItself) {
  Ctx c(4);
  SharedTensor x = c.In({1.0, 2.0});
  const auto bytes0 = c.net.total_bytes();
  LinTerm t[] = {{3.0, &x}, {-2.0, &x}};
  const double off[] = {1.0, 1.0};
  c.eng.Lincomb(t, off);
  EXPECT_EQ(c.net.total_bytes(), bytes0);
  LinTerm frac[] = {{0.3, &x}};
  c.eng.Lincomb(frac);
  for (const auto& e : c.eng.transcript().entries()) {
    if (e.op == "lincomb") EXPECT_EQ(e.bytes, 0u);
  }
}

TEST(LincombTest, ShapeMismatch) {
  Ctx c(2);
  SharedTensor x = c.In({1.0, 2.0});
  SharedTensor y = c.In({1.0});
  LinTerm t[] = {{1.0, &x}, {1.0, &y}};
  EXPECT_THROW(c.eng.Lincomb(t), Error);
}

TEST(BeaverMulTest, ExactProducts) {
  Ctx c(3);
  SharedTensor x = c.In({5.0, 3.0, 1.5, -2.25});
  SharedTensor y = c.In({0.0, 4.0, 2.0, 3.0});
  auto z = c.eng.Open(c.eng.BeaverMul(x, y));
  EXPECT_EQ(z[0], 0u);
  EXPECT_EQ(z[1], FxEncode(12.0).v);
  EXPECT_EQ(z[2], FxEncode(3.0).v);
  EXPECT_EQ(z[3], FxEncode(-6.75).v);
}

TEST(BeaverMulTest, OpensTwoElementsPerPairPerCoordinate) {
  const std::size_t n = 4, count = 10;
  Ctx c(n);
  SharedTensor x = c.In(std::vector<double>(count, 1.0));
  SharedTensor y = c.In(std::vector<double>(count, 2.0));
  const auto bytes0 = c.net.total_bytes();
  c.eng.MulRaw(x, y);
  EXPECT_EQ(c.net.total_bytes() - bytes0, n * (n - 1) * (2 * count * 8 + kFrameBytes));
  EXPECT_EQ(c.dealer.triples_issued(), count);
}

TEST(BeaverMulTest, DealerExhaustion) {
  FixCfg cfg;
  Network net(NetConfig::Domestic(), {0, 1});
  Dealer dealer(cfg, Rng(1), 3);
  Engine eng(cfg, net, dealer, TruncMode::kLocal);
  std::vector<double> v(4, 1.0);
  SharedTensor x = eng.InputTensor(0, v, {4}, {0, 1});
  try {
    eng.MulRaw(x, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDealerExhausted);
  }
}

TEST(SquareTest, KnownAndRandom) {
  Ctx c(3);
  auto z = c.eng.Open(c.eng.Square(c.In({0.0, -3.0})));
  EXPECT_EQ(z[0], 0u);
  EXPECT_EQ(z[1], FxEncode(9.0).v);
  Rng rng(8);
  std::vector<double> v(32);
  for (auto& x : v) x = rng.Normal() * 3;
  SharedTensor x = c.In(v);
  auto xs = c.eng.Open(x);
  auto sq = c.eng.Open(c.eng.Square(x));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xv = FxDecode(RingVal{xs[i]});
    EXPECT_NEAR(FxDecode(RingVal{sq[i]}), xv * xv, kUlp);
  }
}

TEST(SquareTest, OpensHalfOfBeaver) {
  Ctx c(3);
  SharedTensor x = c.In(std::vector<double>(8, 1.5));
  const auto b0 = c.net.total_bytes();
  c.eng.SquareRaw(x);
  const auto b1 = c.net.total_bytes();
  c.eng.MulRaw(x, x);
  const auto b2 = c.net.total_bytes();
  EXPECT_EQ(b1 - b0, 6 * (8 * 8 + kFrameBytes));
  EXPECT_EQ(b2 - b1, 6 * (16 * 8 + kFrameBytes));
}

TEST(MatVecAffineTest, IdentityAndSmallMatrix) {
  Ctx c(3);
  SharedTensor eye = c.In({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
  SharedTensor x = c.In({0.5, -1.25, 4.0});
  SharedTensor zero = c.In({0, 0, 0});
  EXPECT_EQ(c.eng.Open(c.eng.MatVecAffine(eye, x, zero)), c.eng.Open(x));
  SharedTensor w = c.In({1, 2, 3, 4}, {2, 2});
  SharedTensor ones = c.In({1, 1});
  SharedTensor b = c.In({0, 0});
  EXPECT_EQ(c.OpenF(c.eng.MatVecAffine(w, ones, b)), (std::vector<double>{3.0, 7.0}));
}

TEST(MatVecAffineTest, RandomLayerAgainstFloat) {
  Ctx c(4);
  Rng rng(21);
  const std::size_t out = 8, in = 16;
  std::vector<double> w(out * in), x(in), b(out);
  for (auto& v : w) v = rng.Uniform() * 2 - 1;
  for (auto& v : x) v = rng.Uniform() * 2 - 1;
  for (auto& v : b) v = rng.Uniform() * 2 - 1;
  auto y = c.OpenF(c.eng.MatVecAffine(c.In(w, {out, in}), c.In(x), c.In(b)));
  for (std::size_t o = 0; o < out; ++o) {
    double ref = b[o];
    for (std::size_t i = 0; i < in; ++i) ref += w[o * in + i] * x[i];
    EXPECT_LE(std::fabs(y[o] - ref), 16 * kUlp);
  }
}

TEST(MatVecAffineTest, BatchedRowsAndShapeErrors) {
  Ctx c(2);
  SharedTensor w = c.In({1, 2, 3, 4}, {2, 2});
  SharedTensor xs = c.In({1, 1, 2, 0}, {2, 2});
  SharedTensor b = c.In({1, 0});
  SharedTensor y = c.eng.MatVecAffine(w, xs, b);
  EXPECT_EQ(y.shape, (Shape{2, 2}));
  EXPECT_EQ(c.OpenF(y), (std::vector<double>{4, 7, 3, 6}));
  EXPECT_THROW(c.eng.MatVecAffine(w, c.In({1, 2, 3}), b), Error);
  EXPECT_THROW(c.eng.MatVecAffine(w, xs, c.In({1})), Error);
}

TEST(MeanReadoutTest, SingleAndEqual) {
  Ctx c(3);
  SharedTensor r = c.In({0.75, -2.0});
  SharedTensor one[] = {r};
  const std::size_t cnt1[] = {1};
  EXPECT_EQ(c.OpenF(c.eng.MeanReadout(one, cnt1)), (std::vector<double>{0.75, -2.0}));
  // Two owners each holding one copy of the same representation.
  SharedTensor two[] = {r, r};
  const std::size_t cnt2[] = {1, 1};
  EXPECT_EQ(c.OpenF(c.eng.MeanReadout(two, cnt2)), (std::vector<double>{0.75, -2.0}));
}

TEST(MeanReadoutTest, WeightedOwners) {
  Ctx c(4);
  // Owners with 2, 3 and 5 samples; reps are per-owner sums.
  const std::vector<std::vector<double>> samples = {{1.0, 2.0}, {0.5, -1.0, 3.0}, {1, 1, 1, 1, -2.0}};
  std::vector<SharedTensor> reps;
  std::vector<std::size_t> counts;
  double total = 0;
  for (std::size_t o = 0; o < samples.size(); ++o) {
    double s = 0;
    for (double v : samples[o]) s += v;
    total += s;
    reps.push_back(c.eng.InputTensor(static_cast<PartyId>(o + 1), std::vector<double>{s}, {1}, c.parties));
    counts.push_back(samples[o].size());
  }
  EXPECT_NEAR(c.OpenF(c.eng.MeanReadout(reps, counts))[0], total / 10.0, kUlp);
  EXPECT_THROW(c.eng.MeanReadout(std::span<const SharedTensor>(), std::span<const std::size_t>()), Error);
}

TEST(TruncateTest, ScaledInteger) {
  Ctx c(3);
  SharedTensor x = c.eng.InputRing(0, std::vector<std::uint64_t>{5ULL << 32}, {1}, c.parties);
  EXPECT_EQ(c.eng.Open(c.eng.Truncate(x, 16))[0], 5ULL << 16);
}

TEST(TruncateTest, ExactMatchesShiftOracle) {
  Ctx c(3);
  Rng rng(99);
  std::vector<std::uint64_t> v(10000);
  for (auto& x : v) x = rng();
  v[0] = 0;
  v[1] = ~0ULL;
  v[2] = 1ULL << 63;
  v[3] = (1ULL << 63) - 1;
  SharedTensor x = c.eng.InputRing(1, v, {v.size()}, c.parties);
  for (unsigned s : {1u, 16u, 40u}) {
    auto got = c.eng.Open(c.eng.Truncate(x, s, TruncMode::kExact));
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(got[i], c.cfg.ArithShift(v[i], s)) << i;
  }
}

TEST(TruncateTest, ExactNarrowRing) {
  Ctx c(2, TruncMode::kExact, 3, FixCfg(32, 8));
  Rng rng(7);
  std::vector<std::uint64_t> v(2000);
  for (auto& x : v) x = c.cfg.Reduce(rng());
  SharedTensor x = c.eng.InputRing(0, v, {v.size()}, c.parties);
  auto got = c.eng.Open(c.eng.Truncate(x, 8));
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(got[i], c.cfg.ArithShift(v[i], 8));
}

TEST(TruncateTest, ExactTripleCountIsStatic) {
  Ctx c(3);
  SharedTensor x = c.eng.InputRing(0, std::vector<std::uint64_t>(7, 12345), {7}, c.parties);
  c.eng.Truncate(x, 16);
  EXPECT_EQ(c.dealer.triples_issued(), 7 * ExactTruncTriples(c.cfg, 16));
  EXPECT_EQ(ExactTruncTriples(c.cfg, 16), 154u);
  EXPECT_EQ(c.dealer.trunc_issued(), 7u);
}

TEST(TruncateTest, LocalErrorHistogram) {
  for (std::size_t n : {2u, 3u}) {
    Ctx c(n, TruncMode::kLocal, 5);
    Rng rng(1234);
    std::vector<std::uint64_t> v(10000);
    for (auto& x : v) x = c.cfg.FromSigned(static_cast<std::int64_t>(rng.UniformInt(0, 1ULL << 21)) - (1LL << 20));
    SharedTensor x = c.eng.InputRing(0, v, {v.size()}, c.parties);
    auto got = c.eng.Open(c.eng.Truncate(x, 16));
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::int64_t err = c.cfg.Signed(got[i]) - c.cfg.Signed(c.cfg.ArithShift(v[i], 16));
      worst = std::max<std::int64_t>(worst, std::llabs(err));
    }
    EXPECT_LE(worst, 2) << "n=" << n;
    EXPECT_EQ(c.net.total_bytes() > 0, true);
  }
}

TEST(Convert2ToNTest, LiftsPairSharing) {
  FixCfg cfg;
  Network net(NetConfig::Domestic(), {0, 1, 2, 3, 4});
  Dealer dealer(cfg, Rng(1));
  Engine eng(cfg, net, dealer);
  std::vector<double> v = {1.5, -2.0, 3.25};
  SharedTensor pair = eng.InputTensor(2, v, {3}, {0, 2});
  SharedTensor all = eng.Convert2ToN(pair, {0, 1, 2, 3, 4});
  EXPECT_EQ(all.party_count(), 5u);
  EXPECT_EQ(eng.Open(all), eng.Open(pair));
  EXPECT_THROW(eng.Convert2ToN(pair, {0, 1, 3}), Error);
}

TEST(TranscriptTest, LeafAttribution) {
  Ctx c(3);
  SharedTensor x = c.In({1.0, 2.0});
  c.eng.BeaverMul(x, x);
  std::uint64_t sum = 0;
  for (const auto& e : c.eng.transcript().entries()) sum += e.bytes;
  EXPECT_EQ(sum, c.net.total_bytes());
  auto by = c.eng.transcript().BytesByOp();
  EXPECT_GT(by["beaver_mul"], 0u);
  EXPECT_GT(by["truncate"], 0u);
  std::ostringstream os;
  c.eng.transcript().WriteReport(os);
  EXPECT_NE(os.str().find("beaver_mul\tsetup\t"), std::string::npos);
}

TEST(TranscriptTest, DeterministicUnderSeed) {
  auto run = [] {
    Ctx c(4, TruncMode::kExact, 77);
    Rng rng(3);
    testing::RandomCircuit circ = testing::MakeRandomCircuit(rng, 3, 2, 6, c.cfg);
    auto regs = testing::RunEngine(circ, c.eng, c.parties);
    c.eng.Open(regs.back());
    return std::make_pair(c.eng.transcript(), c.net.CollectStats().seconds);
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(PlaintextOracleTest, RandomCircuitsBitExact) {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.UniformInt(0, 3);
    Ctx c(n, TruncMode::kExact, 100 + trial);
    testing::RandomCircuit circ = testing::MakeRandomCircuit(rng, 4, 3, 8, c.cfg);
    auto shared = testing::RunEngine(circ, c.eng, c.parties);
    auto plain = testing::RunInterpreter(circ, FixedPointInterpreter(c.cfg));
    auto fl = testing::RunFloat(circ, c.cfg);
    ASSERT_EQ(shared.size(), plain.size());
    for (std::size_t r = 0; r < shared.size(); ++r) {
      auto opened = c.eng.Open(shared[r]);
      ASSERT_EQ(opened, plain[r].v) << "trial " << trial << " reg " << r;
      for (std::size_t i = 0; i < opened.size(); ++i) {
        EXPECT_LE(std::fabs(FxDecode(RingVal{opened[i]}) - fl.regs[r][i]), fl.bound[r][i]);
      }
    }
  }
}

}  // namespace
}  // namespace shapmkt
