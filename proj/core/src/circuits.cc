#include "shapmkt/circuits.h"

#include "shapmkt/error.h"

namespace shapmkt {

CircuitBuilder::CircuitBuilder(std::vector<std::uint32_t> input_sizes)
    : input_sizes_(std::move(input_sizes)) {
  for (std::uint32_t s : input_sizes_) {
    input_base_.push_back(next_wire_);
    next_wire_ += s;
  }
}

std::vector<CircuitBuilder::Bit> CircuitBuilder::Input(std::size_t g) const {
  std::vector<Bit> bits(input_sizes_.at(g));
  for (std::uint32_t i = 0; i < bits.size(); ++i) bits[i] = Bit{input_base_[g] + i, false};
  return bits;
}

CircuitBuilder::Bit CircuitBuilder::Xor(Bit a, Bit b) {
  if (a.is_const() && b.is_const()) return Const(a.value != b.value);
  if (a.is_const()) std::swap(a, b);
  if (b.is_const()) return b.value ? Not(a) : a;
  if (a.wire == b.wire) return Const(false);
  const std::uint32_t out = NewWire();
  gates_.push_back({GateKind::kXor, static_cast<std::uint32_t>(a.wire), static_cast<std::uint32_t>(b.wire), out});
  return Bit{out, false};
}

CircuitBuilder::Bit CircuitBuilder::And(Bit a, Bit b) {
  if (a.is_const() && b.is_const()) return Const(a.value && b.value);
  if (a.is_const()) std::swap(a, b);
  if (b.is_const()) return b.value ? a : Const(false);
  if (a.wire == b.wire) return a;
  const std::uint32_t out = NewWire();
  gates_.push_back({GateKind::kAnd, static_cast<std::uint32_t>(a.wire), static_cast<std::uint32_t>(b.wire), out});
  return Bit{out, false};
}

CircuitBuilder::Bit CircuitBuilder::Not(Bit a) {
  if (a.is_const()) return Const(!a.value);
  const std::uint32_t out = NewWire();
  gates_.push_back({GateKind::kInv, static_cast<std::uint32_t>(a.wire), 0, out});
  return Bit{out, false};
}

BristolCircuit CircuitBuilder::Finish(const std::vector<std::vector<Bit>>& outputs) {
  BristolCircuit c;
  c.input_sizes = input_sizes_;
  for (const auto& group : outputs) {
    c.output_sizes.push_back(static_cast<std::uint32_t>(group.size()));
    for (const Bit& b : group) {
      const std::uint32_t out = NewWire();
      if (b.is_const()) {
        gates_.push_back({GateKind::kEq, b.value ? 1u : 0u, 0, out});
      } else {
        gates_.push_back({GateKind::kEqw, static_cast<std::uint32_t>(b.wire), 0, out});
      }
    }
  }
  c.wire_count = next_wire_;
  c.gates = std::move(gates_);
  gates_.clear();
  ValidateBristol(c);
  return c;
}

namespace {

using Bit = CircuitBuilder::Bit;
// Byte as polynomial coefficients: b[i] is the coefficient of x^i.
using Byte = std::array<Bit, 8>;

Byte ByteFromMsbFirst(const std::vector<Bit>& bits, std::size_t byte) {
  Byte b;
  for (int i = 0; i < 8; ++i) b[i] = bits[byte * 8 + (7 - i)];
  return b;
}

void AppendMsbFirst(std::vector<Bit>& out, const Byte& b) {
  for (int i = 7; i >= 0; --i) out.push_back(b[i]);
}

Byte ConstByte(std::uint8_t v) {
  Byte b;
  for (int i = 0; i < 8; ++i) b[i] = CircuitBuilder::Const((v >> i) & 1U);
  return b;
}

Byte XorBytes(CircuitBuilder& cb, const Byte& a, const Byte& b) {
  Byte r;
  for (int i = 0; i < 8; ++i) r[i] = cb.Xor(a[i], b[i]);
  return r;
}

std::uint8_t GfMulPlain(std::uint8_t a, std::uint8_t b) {
  std::uint8_t p = 0;
  while (b) {
    if (b & 1) p ^= a;
    a = static_cast<std::uint8_t>((a << 1) ^ ((a & 0x80) ? 0x1B : 0));
    b >>= 1;
  }
  return p;
}

// Any GF(2)-linear map given by the images of the basis bytes x^i.
Byte LinearMap(CircuitBuilder& cb, const Byte& a, const std::array<std::uint8_t, 8>& image) {
  Byte r;
  for (int j = 0; j < 8; ++j) {
    Bit acc = CircuitBuilder::Const(false);
    for (int i = 0; i < 8; ++i) {
      if ((image[i] >> j) & 1U) acc = cb.Xor(acc, a[i]);
    }
    r[j] = acc;
  }
  return r;
}

Byte GfSquare(CircuitBuilder& cb, const Byte& a) {
  std::array<std::uint8_t, 8> image{};
  for (int i = 0; i < 8; ++i) {
    const std::uint8_t xi = static_cast<std::uint8_t>(1U << i);
    image[i] = GfMulPlain(xi, xi);
  }
  return LinearMap(cb, a, image);
}

Byte GfMul(CircuitBuilder& cb, const Byte& a, const Byte& b) {
  std::array<Bit, 15> p;
  p.fill(CircuitBuilder::Const(false));
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) p[i + j] = cb.Xor(p[i + j], cb.And(a[i], b[j]));
  }
  // x^8 = x^4 + x^3 + x + 1
  for (int k = 14; k >= 8; --k) {
    for (int t : {4, 3, 1, 0}) p[k - 8 + t] = cb.Xor(p[k - 8 + t], p[k]);
  }
  Byte r;
  for (int i = 0; i < 8; ++i) r[i] = p[i];
  return r;
}

Byte SBox(CircuitBuilder& cb, const Byte& x) {
  const Byte x2 = GfSquare(cb, x);
  const Byte x3 = GfMul(cb, x2, x);
  const Byte x12 = GfSquare(cb, GfSquare(cb, x3));
  const Byte x15 = GfMul(cb, x12, x3);
  const Byte x14 = GfMul(cb, x12, x2);
  Byte x240 = x15;
  for (int i = 0; i < 4; ++i) x240 = GfSquare(cb, x240);
  const Byte inv = GfMul(cb, x240, x14);
  Byte out;
  for (int i = 0; i < 8; ++i) {
    Bit acc = inv[i];
    for (int s : {4, 5, 6, 7}) acc = cb.Xor(acc, inv[(i + s) % 8]);
    out[i] = cb.Xor(acc, CircuitBuilder::Const((0x63 >> i) & 1U));
  }
  return out;
}

Byte XTime(CircuitBuilder& cb, const Byte& a) {
  std::array<std::uint8_t, 8> image{};
  for (int i = 0; i < 8; ++i) image[i] = GfMulPlain(static_cast<std::uint8_t>(1U << i), 2);
  return LinearMap(cb, a, image);
}

using Word = std::array<Byte, 4>;

}  // namespace

BristolCircuit BuildAes256Circuit() {
  CircuitBuilder cb({256, 128});
  const auto key_bits = cb.Input(0);
  const auto in_bits = cb.Input(1);

  std::vector<Word> w(60);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 4; ++j) w[i][j] = ByteFromMsbFirst(key_bits, 4 * i + j);
  }
  std::uint8_t rcon = 1;
  for (int i = 8; i < 60; ++i) {
    Word t = w[i - 1];
    if (i % 8 == 0) {
      t = {SBox(cb, t[1]), SBox(cb, t[2]), SBox(cb, t[3]), SBox(cb, t[0])};
      t[0] = XorBytes(cb, t[0], ConstByte(rcon));
      rcon = GfMulPlain(rcon, 2);
    } else if (i % 8 == 4) {
      for (auto& b : t) b = SBox(cb, b);
    }
    for (int j = 0; j < 4; ++j) w[i][j] = XorBytes(cb, w[i - 8][j], t[j]);
  }

  // state[r + 4c]
  std::array<Byte, 16> s;
  for (int i = 0; i < 16; ++i) s[i] = ByteFromMsbFirst(in_bits, i);
  auto add_round_key = [&](int round) {
    for (int c = 0; c < 4; ++c) {
      for (int r = 0; r < 4; ++r) s[r + 4 * c] = XorBytes(cb, s[r + 4 * c], w[4 * round + c][r]);
    }
  };
  add_round_key(0);
  for (int round = 1; round <= 14; ++round) {
    for (auto& b : s) b = SBox(cb, b);
    std::array<Byte, 16> t;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) t[r + 4 * c] = s[r + 4 * ((c + r) % 4)];
    }
    s = t;
    if (round != 14) {
      for (int c = 0; c < 4; ++c) {
        Byte* col = &s[4 * c];
        const Byte all = XorBytes(cb, XorBytes(cb, col[0], col[1]), XorBytes(cb, col[2], col[3]));
        std::array<Byte, 4> out;
        for (int r = 0; r < 4; ++r) {
          const Byte pair = XTime(cb, XorBytes(cb, col[r], col[(r + 1) % 4]));
          out[r] = XorBytes(cb, XorBytes(cb, col[r], all), pair);
        }
        for (int r = 0; r < 4; ++r) col[r] = out[r];
      }
    }
    add_round_key(round);
  }
  std::vector<Bit> out;
  for (const Byte& b : s) AppendMsbFirst(out, b);
  return cb.Finish({out});
}

namespace {

// 32-bit word, index 0 = least significant bit.
using Word32 = std::array<Bit, 32>;

Word32 WordFromMsbFirst(const std::vector<Bit>& bits, std::size_t word) {
  Word32 w;
  for (int i = 0; i < 32; ++i) w[i] = bits[word * 32 + (31 - i)];
  return w;
}

Word32 ConstWord(std::uint32_t v) {
  Word32 w;
  for (int i = 0; i < 32; ++i) w[i] = CircuitBuilder::Const((v >> i) & 1U);
  return w;
}

Word32 Rotr(const Word32& a, int n) {
  Word32 r;
  for (int i = 0; i < 32; ++i) r[i] = a[(i + n) % 32];
  return r;
}

Word32 Shr(const Word32& a, int n) {
  Word32 r;
  for (int i = 0; i < 32; ++i) r[i] = i + n < 32 ? a[i + n] : CircuitBuilder::Const(false);
  return r;
}

Word32 XorW(CircuitBuilder& cb, const Word32& a, const Word32& b) {
  Word32 r;
  for (int i = 0; i < 32; ++i) r[i] = cb.Xor(a[i], b[i]);
  return r;
}

Word32 AddW(CircuitBuilder& cb, const Word32& a, const Word32& b) {
  Word32 r;
  Bit carry = CircuitBuilder::Const(false);
  for (int i = 0; i < 32; ++i) {
    const Bit ac = cb.Xor(a[i], carry);
    const Bit bc = cb.Xor(b[i], carry);
    r[i] = cb.Xor(ac, b[i]);
    if (i < 31) carry = cb.Xor(carry, cb.And(ac, bc));
  }
  return r;
}

// g ^ (e & (f ^ g))
Word32 Ch(CircuitBuilder& cb, const Word32& e, const Word32& f, const Word32& g) {
  Word32 r;
  for (int i = 0; i < 32; ++i) r[i] = cb.Xor(g[i], cb.And(e[i], cb.Xor(f[i], g[i])));
  return r;
}

// b ^ ((a ^ b) & (b ^ c))
Word32 Maj(CircuitBuilder& cb, const Word32& a, const Word32& b, const Word32& c) {
  Word32 r;
  for (int i = 0; i < 32; ++i) r[i] = cb.Xor(b[i], cb.And(cb.Xor(a[i], b[i]), cb.Xor(b[i], c[i])));
  return r;
}

constexpr std::array<std::uint32_t, 64> kK = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

}  // namespace

BristolCircuit BuildSha256CompressCircuit() {
  CircuitBuilder cb({512, 256});
  const auto block = cb.Input(0);
  const auto chain = cb.Input(1);
  std::array<Word32, 64> w;
  for (int t = 0; t < 16; ++t) w[t] = WordFromMsbFirst(block, t);
  for (int t = 16; t < 64; ++t) {
    const Word32 s0 = XorW(cb, XorW(cb, Rotr(w[t - 15], 7), Rotr(w[t - 15], 18)), Shr(w[t - 15], 3));
    const Word32 s1 = XorW(cb, XorW(cb, Rotr(w[t - 2], 17), Rotr(w[t - 2], 19)), Shr(w[t - 2], 10));
    w[t] = AddW(cb, AddW(cb, w[t - 16], s0), AddW(cb, w[t - 7], s1));
  }
  std::array<Word32, 8> h;
  for (int i = 0; i < 8; ++i) h[i] = WordFromMsbFirst(chain, i);
  auto [a, b, c, d, e, f, g, hh] = h;
  for (int t = 0; t < 64; ++t) {
    const Word32 S1 = XorW(cb, XorW(cb, Rotr(e, 6), Rotr(e, 11)), Rotr(e, 25));
    const Word32 t1 = AddW(cb, AddW(cb, AddW(cb, hh, S1), Ch(cb, e, f, g)), AddW(cb, ConstWord(kK[t]), w[t]));
    const Word32 S0 = XorW(cb, XorW(cb, Rotr(a, 2), Rotr(a, 13)), Rotr(a, 22));
    const Word32 t2 = AddW(cb, S0, Maj(cb, a, b, c));
    hh = g;
    g = f;
    f = e;
    e = AddW(cb, d, t1);
    d = c;
    c = b;
    b = a;
    a = AddW(cb, t1, t2);
  }
  const std::array<Word32, 8> fin = {a, b, c, d, e, f, g, hh};
  std::vector<Bit> out;
  for (int i = 0; i < 8; ++i) {
    const Word32 v = AddW(cb, h[i], fin[i]);
    for (int j = 31; j >= 0; --j) out.push_back(v[j]);
  }
  return cb.Finish({out});
}

const BristolCircuit& Aes256Circuit() {
  static const BristolCircuit c = BuildAes256Circuit();
  return c;
}

const BristolCircuit& Sha256CompressCircuit() {
  static const BristolCircuit c = BuildSha256CompressCircuit();
  return c;
}

}  // namespace shapmkt
