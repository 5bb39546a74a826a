#include "shapmkt/boolean2pc.h"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "shapmkt/circuits.h"
#include "shapmkt/error.h"

namespace shapmkt {
namespace {

std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kUndefined;
}

template <std::size_t N>
std::array<std::uint8_t, N> RandomBytes(Rng& rng) {
  std::array<std::uint8_t, N> a{};
  for (auto& b : a) b = static_cast<std::uint8_t>(rng());
  return a;
}

TEST(ParseBristolTest, SingleXor) {
  BristolCircuit c = ParseBristol("1 3\n2 1 1\n1 1\n\n2 1 0 1 2 XOR\n");
  EXPECT_EQ(c.gate_count(), 1u);
  const std::vector<std::uint8_t> in[] = {{0}, {1}};
  EXPECT_EQ(EvalPlain(c, in)[0], (std::vector<std::uint8_t>{1}));
}

TEST(ParseBristolTest, TinyFixture) {
  BristolCircuit c = LoadBristol(std::string(SHAPMKT_TEST_DATA) + "/tiny_xor_and.txt");
  EXPECT_EQ(c.gate_count(), 4u);
  CircuitStats s = ComputeStats(c);
  EXPECT_EQ(s.and_gates, 1u);
  EXPECT_EQ(s.and_depth, 1u);
  // out = [ !((a ^ b) & c), a ^ b ]
  for (int v = 0; v < 8; ++v) {
    const std::uint8_t a = v & 1, b = (v >> 1) & 1, cc = (v >> 2) & 1;
    const std::vector<std::uint8_t> in[] = {{a, b}, {cc}};
    const auto out = EvalPlain(c, in)[0];
    EXPECT_EQ(out[0], !((a ^ b) & cc));
    EXPECT_EQ(out[1], a ^ b);
  }
}

TEST(ParseBristolTest, Errors) {
  EXPECT_EQ(CodeOf([] { ParseBristol("1 3\n2 1 1\n1 1\n2 1 0 1 9 XOR\n"); }), ErrorCode::kValidation);
  EXPECT_EQ(CodeOf([] { ParseBristol("1 3\n2 1 1\n1 1\n2 1 0 7 2 XOR\n"); }), ErrorCode::kValidation);
  EXPECT_EQ(CodeOf([] { ParseBristol("1 4\n2 1 1\n1 1\n2 1 0 2 3 AND\n"); }), ErrorCode::kValidation);
  EXPECT_EQ(CodeOf([] { ParseBristol("2 3\n2 1 1\n1 1\n2 1 0 1 2 XOR\n"); }), ErrorCode::kValidation);
  EXPECT_EQ(CodeOf([] { ParseBristol("1 3\n2 1 1\n1 1\n2 1 0 1 2 NAND\n"); }), ErrorCode::kUnsupportedGate);
  EXPECT_EQ(CodeOf([] { ParseBristol("1 5\n2 2 1\n1 2\n4 2 0 1 2 0 3 4 MAND\n"); }),
            ErrorCode::kUnsupportedGate);
  EXPECT_EQ(CodeOf([] { ParseBristol("1 3\n2 1 1\n1 1\n2 1 0 x 2 XOR\n"); }), ErrorCode::kParse);
  EXPECT_EQ(CodeOf([] { ParseBristol(""); }), ErrorCode::kParse);
  try {
    ParseBristol("1 3\n2 1 1\n1 1\n\n2 1 0 x 2 XOR\n");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos);
  }
}

TEST(ParseBristolTest, SerializeRoundTrip) {
  for (const BristolCircuit* c : {&Aes256Circuit(), &Sha256CompressCircuit()}) {
    EXPECT_EQ(ParseBristol(SerializeBristol(*c)), *c);
  }
}

TEST(ParseBristolTest, GeneratedFilesMatchHeaders) {
  for (const char* name : {"aes_256.txt", "sha256.txt"}) {
    const std::string text = ReadFile(std::string(SHAPMKT_CIRCUIT_DIR) + "/" + name);
    ASSERT_FALSE(text.empty()) << name;
    std::istringstream head(text);
    std::size_t gates = 0, wires = 0;
    head >> gates >> wires;
    BristolCircuit c = ParseBristol(text);
    EXPECT_EQ(c.gate_count(), gates);
    EXPECT_EQ(c.wire_count, wires);
  }
  EXPECT_EQ(LoadBristol(std::string(SHAPMKT_CIRCUIT_DIR) + "/aes_256.txt"), Aes256Circuit());
}

TEST(EvalPlainTest, LengthMismatch) {
  const std::vector<std::uint8_t> in[] = {{1, 0}};
  EXPECT_EQ(CodeOf([&] { EvalPlain(Aes256Circuit(), in); }), ErrorCode::kShape);
}

TEST(EvalPlainTest, AesMatchesReference) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Key256 key = RandomBytes<32>(rng);
    const Block128 msg = RandomBytes<16>(rng);
    const std::vector<std::uint8_t> in[] = {BytesToBits(key), BytesToBits(msg)};
    const auto out = BitsToBytes(EvalPlain(Aes256Circuit(), in)[0]);
    const Block128 ref = Aes256EncryptBlock(key, msg);
    ASSERT_EQ(out, std::vector<std::uint8_t>(ref.begin(), ref.end())) << i;
  }
}

TEST(EvalPlainTest, Sha256EmptyMessage) {
  std::vector<std::uint8_t> block(64, 0);
  block[0] = 0x80;
  std::vector<std::uint8_t> iv;
  for (std::uint32_t w : kSha256Iv) {
    for (int s = 24; s >= 0; s -= 8) iv.push_back(static_cast<std::uint8_t>(w >> s));
  }
  const std::vector<std::uint8_t> in[] = {BytesToBits(block), BytesToBits(iv)};
  EXPECT_EQ(ToHex(BitsToBytes(EvalPlain(Sha256CompressCircuit(), in)[0])),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(EvalPlainTest, Sha256MatchesReference) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t len = rng.UniformInt(0, 55);
    std::vector<std::uint8_t> msg(len);
    for (auto& b : msg) b = static_cast<std::uint8_t>(rng());
    std::vector<std::uint8_t> block = msg;
    block.push_back(0x80);
    block.resize(56, 0);
    const std::uint64_t bits = len * 8;
    for (int s = 56; s >= 0; s -= 8) block.push_back(static_cast<std::uint8_t>(bits >> s));
    std::vector<std::uint8_t> iv;
    for (std::uint32_t w : kSha256Iv) {
      for (int s = 24; s >= 0; s -= 8) iv.push_back(static_cast<std::uint8_t>(w >> s));
    }
    const std::vector<std::uint8_t> in[] = {BytesToBits(block), BytesToBits(iv)};
    const auto out = BitsToBytes(EvalPlain(Sha256CompressCircuit(), in)[0]);
    const Digest256 ref = Sha256(msg);
    ASSERT_EQ(out, std::vector<std::uint8_t>(ref.begin(), ref.end()));
  }
}

struct Session {
  Session() : net(NetConfig::Domestic(), {0, 1}), dealer(FixCfg(), Rng(3)), s(net, dealer, 0, 1) {}
  Network net;
  Dealer dealer;
  BooleanSession s;
};

BitShares RandomShares(std::size_t bits, std::size_t instances, Rng& rng) {
  BitShares b;
  b.bits = bits;
  b.instances = instances;
  b.p0.resize(bits * b.words());
  b.p1.resize(bits * b.words());
  for (auto& v : b.p0) v = rng();
  for (auto& v : b.p1) v = rng();
  return b;
}

TEST(Eval2pcTest, ZerosReconstructToPlain) {
  Session t;
  const BristolCircuit& c = Aes256Circuit();
  const BitShares in[] = {PublicBits(std::vector<std::uint8_t>(256, 0)),
                          PublicBits(std::vector<std::uint8_t>(128, 0))};
  const auto out = t.s.Eval(c, in)[0].RevealBits();
  const std::vector<std::uint8_t> plain_in[] = {std::vector<std::uint8_t>(256, 0),
                                                std::vector<std::uint8_t>(128, 0)};
  EXPECT_EQ(out, EvalPlain(c, plain_in)[0]);
}

TEST(Eval2pcTest, SharedEqualsPlainOnManyInputs) {
  Rng rng(4);
  for (const BristolCircuit* c : {&Aes256Circuit(), &Sha256CompressCircuit()}) {
    Session t;
    const std::size_t inst = 130;
    std::vector<BitShares> in;
    std::vector<Lanes> plain;
    for (std::uint32_t sz : c->input_sizes) {
      in.push_back(RandomShares(sz, inst, rng));
      plain.push_back(in.back().Reconstruct());
    }
    const auto shared = t.s.Eval(*c, in);
    const auto ref = EvalPlainLanes(*c, plain, WordsFor(inst));
    BitShares want;
    want.bits = c->output_bits();
    want.instances = inst;
    want.p0 = ref[0];
    want.p1.assign(ref[0].size(), 0);
    EXPECT_EQ(shared[0].Reconstruct(), want.Reconstruct());
  }
}

TEST(Eval2pcTest, CommunicationAudit) {
  Rng rng(5);
  for (std::size_t inst : {1u, 64u, 100u}) {
    Session t;
    const BristolCircuit& c = Sha256CompressCircuit();
    const CircuitSchedule sched = ComputeSchedule(c);
    const BitShares in[] = {RandomShares(512, inst, rng), RandomShares(256, inst, rng)};
    t.s.Eval(c, sched, in);
    const TwoPartyCost want = PredictEvalCost(sched, c, inst);
    EXPECT_EQ(want.and_gates, ComputeStats(c).and_gates);
    EXPECT_EQ(t.net.total_bytes(), want.bytes);
    EXPECT_EQ(t.net.total_messages(), want.messages);
    EXPECT_EQ(t.dealer.bit_triples_issued(), want.and_gates * inst);
    // Payload is 4 bits per AND per instance before per-level rounding.
    const std::uint64_t payload = want.bytes - want.messages * kFrameBytes;
    EXPECT_GE(payload * 8, 4 * want.and_gates * inst);
    EXPECT_LT(payload * 8, 4 * want.and_gates * inst + 16 * want.levels);
  }
}

TEST(Eval2pcTest, XorOnlyCircuitIsFree) {
  Session t;
  BristolCircuit c = ParseBristol("2 4\n2 1 1\n1 1\n2 1 0 1 2 XOR\n1 1 2 3 INV\n");
  Rng rng(6);
  const BitShares in[] = {RandomShares(1, 10, rng), RandomShares(1, 10, rng)};
  t.s.Eval(c, in);
  EXPECT_EQ(t.net.total_bytes(), 0u);
}

TEST(CtrEncryptTest, EmptyAndReference) {
  Session t;
  NonceRegistry nonces;
  Rng rng(7);
  const Key256 key = RandomBytes<32>(rng);
  const BitShares k = ShareBits(BytesToBits(key), rng);
  EXPECT_TRUE(t.s.CtrEncrypt(k, RandomBytes<16>(rng), ShareBits({}, rng), 0, nonces).empty());

  const Block128 nonce = RandomBytes<16>(rng);
  std::vector<std::uint8_t> data(16);
  for (auto& b : data) b = static_cast<std::uint8_t>(rng());
  const auto ct = t.s.CtrEncrypt(k, nonce, ShareBits(BytesToBits(data), rng), 0, nonces);
  const Block128 ks = Aes256EncryptBlock(key, nonce);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(ct[i] ^ ks[i], data[i]);
}

TEST(CtrEncryptTest, FiveBlocksRoundTripAndMatchesOpenSsl) {
  Session t;
  NonceRegistry nonces;
  Rng rng(8);
  const Key256 key = RandomBytes<32>(rng);
  Block128 nonce = RandomBytes<16>(rng);
  nonce[15] = 0xFE;  // counter carries across a byte boundary
  nonce[14] = 0xFF;
  std::vector<std::uint8_t> data(80);
  for (auto& b : data) b = static_cast<std::uint8_t>(rng());
  const auto ct = t.s.CtrEncrypt(ShareBits(BytesToBits(key), rng), nonce,
                                 ShareBits(BytesToBits(data), rng), 0, nonces);
  EXPECT_EQ(ct, Aes256Ctr(key, nonce, data));
  EXPECT_EQ(Aes256Ctr(key, nonce, ct), data);
}

TEST(CtrEncryptTest, NonceReuseRefused) {
  Session t;
  NonceRegistry nonces;
  Rng rng(9);
  const BitShares k = ShareBits(std::vector<std::uint8_t>(256, 1), rng);
  const Block128 nonce{};
  const BitShares d = ShareBits(std::vector<std::uint8_t>(128, 0), rng);
  t.s.CtrEncrypt(k, nonce, d, 0, nonces);
  EXPECT_EQ(CodeOf([&] { t.s.CtrEncrypt(k, nonce, d, 0, nonces); }), ErrorCode::kNonceReuse);
}

TEST(Sha256KeyTest, ZeroAndRandomKeys) {
  Session t;
  Rng rng(10);
  const Key256 zero{};
  EXPECT_EQ(t.s.Sha256Key(ShareBits(BytesToBits(zero), rng), 0), Sha256(zero));
  Digest256 prev{};
  for (int i = 0; i < 20; ++i) {
    const Key256 key = RandomBytes<32>(rng);
    const Digest256 d = t.s.Sha256Key(ShareBits(BytesToBits(key), rng), 1);
    EXPECT_EQ(d, Sha256(key));
    EXPECT_NE(d, prev);
    prev = d;
  }
}

}  // namespace
}  // namespace shapmkt
