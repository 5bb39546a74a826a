#include "shapmkt/boolean2pc.h"

#include <algorithm>

#include "shapmkt/circuits.h"
#include "shapmkt/error.h"

namespace shapmkt {

namespace {

std::uint64_t LaneMask(std::size_t instances, std::size_t word) {
  const std::size_t lo = word * 64;
  if (instances >= lo + 64) return ~0ULL;
  if (instances <= lo) return 0;
  return (1ULL << (instances - lo)) - 1;
}

std::uint64_t BytesForBits(std::uint64_t bits) { return (bits + 7) / 8; }

}  // namespace

Lanes BitShares::Reconstruct() const {
  const std::size_t w = words();
  Lanes out(p0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (p0[i] ^ p1[i]) & LaneMask(instances, i % w);
  return out;
}

std::vector<std::uint8_t> BitShares::RevealBits() const {
  const Lanes l = Reconstruct();
  std::vector<std::uint8_t> out(bits);
  for (std::size_t b = 0; b < bits; ++b) out[b] = static_cast<std::uint8_t>(l[b * words()] & 1U);
  return out;
}

BitShares ShareBits(std::span<const std::uint8_t> bits, Rng& rng) {
  BitShares s;
  s.bits = bits.size();
  s.instances = 1;
  s.p0.resize(bits.size());
  s.p1.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const std::uint64_t mask = rng() & 1U;
    s.p0[i] = mask;
    s.p1[i] = mask ^ (bits[i] & 1U);
  }
  return s;
}

BitShares PublicBits(std::span<const std::uint8_t> bits, std::size_t instances) {
  BitShares s;
  s.bits = bits.size();
  s.instances = instances;
  const std::size_t w = s.words();
  s.p0.assign(bits.size() * w, 0);
  s.p1.assign(bits.size() * w, 0);
  for (std::size_t b = 0; b < bits.size(); ++b) {
    if (bits[b] & 1U) {
      for (std::size_t i = 0; i < w; ++i) s.p0[b * w + i] = LaneMask(instances, i);
    }
  }
  return s;
}

BitShares Broadcast(const BitShares& s, std::size_t instances) {
  if (s.instances != 1) throw Error(ErrorCode::kShape, "broadcast expects a single-instance sharing");
  BitShares out;
  out.bits = s.bits;
  out.instances = instances;
  const std::size_t w = out.words();
  out.p0.resize(s.bits * w);
  out.p1.resize(s.bits * w);
  for (std::size_t b = 0; b < s.bits; ++b) {
    for (std::size_t i = 0; i < w; ++i) {
      const std::uint64_t m = LaneMask(instances, i);
      out.p0[b * w + i] = (s.p0[b] & 1U) ? m : 0;
      out.p1[b * w + i] = (s.p1[b] & 1U) ? m : 0;
    }
  }
  return out;
}

TwoPartyCost PredictEvalCost(const CircuitSchedule& s, const BristolCircuit&, std::size_t instances) {
  TwoPartyCost c;
  for (const auto& level : s.and_levels) {
    if (level.empty()) continue;
    c.and_gates += level.size();
    c.levels += 1;
    c.messages += 2;
    c.bytes += 2 * (BytesForBits(2ULL * level.size() * instances) + kFrameBytes);
  }
  return c;
}

void NonceRegistry::Claim(const Block128& nonce) {
  if (!used_.insert(nonce).second) {
    throw Error(ErrorCode::kNonceReuse, "nonce " + ToHex(nonce) + " was already used in this run");
  }
}

BooleanSession::BooleanSession(Network& net, Dealer& dealer, PartyId first, PartyId second)
    : net_(net), dealer_(dealer), first_(first), second_(second) {
  if (first == second) throw Error(ErrorCode::kParameter, "a 2PC session needs two distinct parties");
  if (!net.HasParty(first) || !net.HasParty(second)) {
    throw Error(ErrorCode::kUnknownParty, "2PC party is not registered on the network");
  }
}

std::vector<BitShares> BooleanSession::Eval(const BristolCircuit& c, std::span<const BitShares> inputs) {
  return Eval(c, ComputeSchedule(c), inputs);
}

std::vector<BitShares> BooleanSession::Eval(const BristolCircuit& c, const CircuitSchedule& sched,
                                            std::span<const BitShares> inputs) {
  if (inputs.size() != c.input_sizes.size()) {
    throw Error(ErrorCode::kShape, "circuit expects " + std::to_string(c.input_sizes.size()) +
                                       " input groups, got " + std::to_string(inputs.size()));
  }
  const std::size_t instances = inputs.empty() ? 1 : inputs[0].instances;
  const std::size_t W = WordsFor(instances);
  std::vector<std::uint64_t> s0(static_cast<std::size_t>(c.wire_count) * W, 0);
  std::vector<std::uint64_t> s1(s0.size(), 0);
  std::size_t base = 0;
  for (std::size_t g = 0; g < inputs.size(); ++g) {
    const BitShares& in = inputs[g];
    if (in.instances != instances || in.bits != c.input_sizes[g] || in.p0.size() != in.bits * W ||
        in.p1.size() != in.bits * W) {
      throw Error(ErrorCode::kShape, "input group " + std::to_string(g) + " has wrong length");
    }
    std::copy(in.p0.begin(), in.p0.end(), s0.begin() + static_cast<std::ptrdiff_t>(base * W));
    std::copy(in.p1.begin(), in.p1.end(), s1.begin() + static_cast<std::ptrdiff_t>(base * W));
    base += in.bits;
  }

  auto run_free = [&](const std::vector<std::uint32_t>& gates) {
    for (std::uint32_t gi : gates) {
      const Gate& g = c.gates[gi];
      std::uint64_t* o0 = &s0[g.out * W];
      std::uint64_t* o1 = &s1[g.out * W];
      const std::uint64_t* a0 = &s0[g.in0 * W];
      const std::uint64_t* a1 = &s1[g.in0 * W];
      switch (g.kind) {
        case GateKind::kXor: {
          const std::uint64_t* b0 = &s0[g.in1 * W];
          const std::uint64_t* b1 = &s1[g.in1 * W];
          for (std::size_t i = 0; i < W; ++i) {
            o0[i] = a0[i] ^ b0[i];
            o1[i] = a1[i] ^ b1[i];
          }
          break;
        }
        case GateKind::kInv:
          for (std::size_t i = 0; i < W; ++i) {
            o0[i] = ~a0[i];
            o1[i] = a1[i];
          }
          break;
        case GateKind::kEqw:
          for (std::size_t i = 0; i < W; ++i) {
            o0[i] = a0[i];
            o1[i] = a1[i];
          }
          break;
        case GateKind::kEq:
          for (std::size_t i = 0; i < W; ++i) {
            o0[i] = g.in0 ? ~0ULL : 0ULL;
            o1[i] = 0;
          }
          break;
        case GateKind::kAnd:
          break;
      }
    }
  };

  run_free(sched.free_levels[0]);
  for (std::size_t lvl = 0; lvl < sched.and_levels.size(); ++lvl) {
    const auto& ands = sched.and_levels[lvl];
    if (!ands.empty()) {
      const std::size_t n = ands.size();
      Dealer::BitTriples t = dealer_.IssueBitTriples(n * W, static_cast<std::uint64_t>(n) * instances);
      // Each party publishes its shares of d = x ^ a and e = y ^ b.
      const std::uint64_t payload = BytesForBits(2ULL * n * instances);
      const Message msgs[] = {{first_, second_, payload}, {second_, first_, payload}};
      net_.RouteBatch(msgs);
      for (std::size_t j = 0; j < n; ++j) {
        const Gate& g = c.gates[ands[j]];
        for (std::size_t i = 0; i < W; ++i) {
          const std::size_t ti = j * W + i;
          const std::uint64_t x0 = s0[g.in0 * W + i], x1 = s1[g.in0 * W + i];
          const std::uint64_t y0 = s0[g.in1 * W + i], y1 = s1[g.in1 * W + i];
          const std::uint64_t d = x0 ^ t.a0[ti] ^ x1 ^ t.a1[ti];
          const std::uint64_t e = y0 ^ t.b0[ti] ^ y1 ^ t.b1[ti];
          s0[g.out * W + i] = t.c0[ti] ^ (d & t.b0[ti]) ^ (e & t.a0[ti]) ^ (d & e);
          s1[g.out * W + i] = t.c1[ti] ^ (d & t.b1[ti]) ^ (e & t.a1[ti]);
        }
      }
      ands_ += static_cast<std::uint64_t>(n) * instances;
    }
    run_free(sched.free_levels[lvl + 1]);
  }

  std::vector<BitShares> outs;
  std::size_t wire = c.wire_count - c.output_bits();
  for (std::uint32_t sz : c.output_sizes) {
    BitShares o;
    o.bits = sz;
    o.instances = instances;
    o.p0.assign(s0.begin() + static_cast<std::ptrdiff_t>(wire * W), s0.begin() + static_cast<std::ptrdiff_t>((wire + sz) * W));
    o.p1.assign(s1.begin() + static_cast<std::ptrdiff_t>(wire * W), s1.begin() + static_cast<std::ptrdiff_t>((wire + sz) * W));
    outs.push_back(std::move(o));
    wire += sz;
  }
  return outs;
}

Lanes BooleanSession::Open(const BitShares& s, PartyId to) {
  if (to != first_ && to != second_) throw Error(ErrorCode::kUnknownParty, "receiver is not in the session");
  const PartyId from = to == first_ ? second_ : first_;
  net_.RouteMessage(from, to, BytesForBits(static_cast<std::uint64_t>(s.bits) * s.instances));
  return s.Reconstruct();
}

std::vector<std::uint8_t> BooleanSession::CtrEncrypt(const BitShares& key, const Block128& nonce,
                                                     const BitShares& data, PartyId to,
                                                     NonceRegistry& nonces) {
  if (key.bits != 256 || key.instances != 1) throw Error(ErrorCode::kShape, "key must be 256 shared bits");
  if (data.instances != 1 || data.bits % 128 != 0) {
    throw Error(ErrorCode::kShape, "data must be padded to whole 128-bit blocks");
  }
  nonces.Claim(nonce);
  const std::size_t blocks = data.bits / 128;
  if (blocks == 0) return {};

  // Counter blocks are public; block j occupies lane j.
  BitShares ctr;
  ctr.bits = 128;
  ctr.instances = blocks;
  const std::size_t W = ctr.words();
  ctr.p0.assign(128 * W, 0);
  ctr.p1.assign(128 * W, 0);
  for (std::size_t j = 0; j < blocks; ++j) {
    const Block128 cb = CounterBlock(nonce, j);
    const auto bits = BytesToBits(cb);
    for (std::size_t b = 0; b < 128; ++b) {
      if (bits[b]) ctr.p0[b * W + j / 64] |= 1ULL << (j % 64);
    }
  }
  const BitShares inputs[] = {Broadcast(key, blocks), ctr};
  const BitShares ks = Eval(Aes256Circuit(), inputs)[0];

  // Local XOR of the keystream shares onto the data shares, then one opening.
  BitShares ct;
  ct.bits = data.bits;
  ct.instances = 1;
  ct.p0.resize(data.bits);
  ct.p1.resize(data.bits);
  for (std::size_t j = 0; j < blocks; ++j) {
    for (std::size_t b = 0; b < 128; ++b) {
      const std::size_t bit = j * 128 + b;
      const std::uint64_t lane = 1ULL << (j % 64);
      const std::size_t idx = b * W + j / 64;
      ct.p0[bit] = (data.p0[bit] & 1U) ^ ((ks.p0[idx] & lane) ? 1U : 0U);
      ct.p1[bit] = (data.p1[bit] & 1U) ^ ((ks.p1[idx] & lane) ? 1U : 0U);
    }
  }
  Open(ct, to);
  return BitsToBytes(ct.RevealBits());
}

Digest256 BooleanSession::Sha256Key(const BitShares& key, PartyId to) {
  if (key.bits != 256 || key.instances != 1) throw Error(ErrorCode::kShape, "key must be 256 shared bits");
  // Padding of a 32-byte message: 0x80, zeros, 64-bit length 256.
  std::vector<std::uint8_t> pad(32, 0);
  pad[0] = 0x80;
  pad[30] = 0x01;
  const BitShares tail = PublicBits(BytesToBits(pad));
  BitShares block;
  block.bits = 512;
  block.instances = 1;
  block.p0 = key.p0;
  block.p1 = key.p1;
  block.p0.insert(block.p0.end(), tail.p0.begin(), tail.p0.end());
  block.p1.insert(block.p1.end(), tail.p1.begin(), tail.p1.end());
  std::vector<std::uint8_t> iv;
  for (std::uint32_t w : kSha256Iv) {
    for (int s = 24; s >= 0; s -= 8) iv.push_back(static_cast<std::uint8_t>(w >> s));
  }
  const BitShares inputs[] = {block, PublicBits(BytesToBits(iv))};
  const BitShares digest = Eval(Sha256CompressCircuit(), inputs)[0];
  Open(digest, to);
  const auto bytes = BitsToBytes(digest.RevealBits());
  Digest256 d{};
  std::copy(bytes.begin(), bytes.end(), d.begin());
  return d;
}

}  // namespace shapmkt
