#include "shapmkt/bristol.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shapmkt/error.h"

namespace shapmkt {

const char* GateKindName(GateKind k) {
  switch (k) {
    case GateKind::kXor: return "XOR";
    case GateKind::kAnd: return "AND";
    case GateKind::kInv: return "INV";
    case GateKind::kEq: return "EQ";
    case GateKind::kEqw: return "EQW";
  }
  return "?";
}

std::uint32_t BristolCircuit::input_bits() const {
  return std::accumulate(input_sizes.begin(), input_sizes.end(), 0u);
}

std::uint32_t BristolCircuit::output_bits() const {
  return std::accumulate(output_sizes.begin(), output_sizes.end(), 0u);
}

namespace {

struct LineReader {
  explicit LineReader(std::string_view t) : text(t) {}

  // Next non-blank line split into tokens; false at end of input.
  bool Next(std::vector<std::string_view>& tokens) {
    while (pos <= text.size()) {
      if (pos == text.size()) return false;
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      tokens.clear();
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens.push_back(line.substr(i, j - i));
        i = j;
      }
      if (!tokens.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void Fail(const std::string& msg) const {
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + msg);
  }

  std::uint32_t Num(std::string_view tok) const {
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      Fail("expected a non-negative integer, got '" + std::string(tok) + "'");
    }
    return v;
  }

  std::string_view text;
  std::size_t pos = 0;
  std::size_t line_no = 0;
};

std::vector<std::uint32_t> ParseGroups(LineReader& r, const char* what) {
  std::vector<std::string_view> tok;
  if (!r.Next(tok)) r.Fail(std::string("missing ") + what + " header");
  const std::uint32_t n = r.Num(tok[0]);
  if (tok.size() != n + 1) {
    r.Fail(std::string(what) + " header declares " + std::to_string(n) + " groups but lists " +
           std::to_string(tok.size() - 1));
  }
  std::vector<std::uint32_t> sizes;
  for (std::size_t i = 1; i < tok.size(); ++i) sizes.push_back(r.Num(tok[i]));
  return sizes;
}

}  // namespace

BristolCircuit ParseBristol(std::string_view text) {
  LineReader r(text);
  std::vector<std::string_view> tok;
  if (!r.Next(tok)) r.Fail("empty circuit");
  if (tok.size() != 2) r.Fail("header must be '<gates> <wires>'");
  const std::uint32_t declared_gates = r.Num(tok[0]);
  BristolCircuit c;
  c.wire_count = r.Num(tok[1]);
  c.input_sizes = ParseGroups(r, "input");
  c.output_sizes = ParseGroups(r, "output");
  c.gates.reserve(declared_gates);
  while (r.Next(tok)) {
    if (tok.size() < 4) r.Fail("gate line too short");
    const std::string_view kind = tok.back();
    const std::uint32_t nin = r.Num(tok[0]);
    const std::uint32_t nout = r.Num(tok[1]);
    if (tok.size() != 3 + nin + nout) r.Fail("gate arity does not match its wire list");
    Gate g;
    if (kind == "XOR" || kind == "AND") {
      if (nin != 2 || nout != 1) r.Fail(std::string(kind) + " gate must be '2 1'");
      g.kind = kind == "XOR" ? GateKind::kXor : GateKind::kAnd;
      g.in0 = r.Num(tok[2]);
      g.in1 = r.Num(tok[3]);
      g.out = r.Num(tok[4]);
    } else if (kind == "INV" || kind == "EQW" || kind == "EQ") {
      if (nin != 1 || nout != 1) r.Fail(std::string(kind) + " gate must be '1 1'");
      g.kind = kind == "INV" ? GateKind::kInv : kind == "EQW" ? GateKind::kEqw : GateKind::kEq;
      g.in0 = r.Num(tok[2]);
      g.out = r.Num(tok[3]);
      if (g.kind == GateKind::kEq && g.in0 > 1) r.Fail("EQ constant must be 0 or 1");
    } else {
      throw Error(ErrorCode::kUnsupportedGate,
                  "line " + std::to_string(r.line_no) + ": unsupported gate kind '" + std::string(kind) + "'");
    }
    c.gates.push_back(g);
  }
  if (c.gates.size() != declared_gates) {
    throw Error(ErrorCode::kValidation, "header declares " + std::to_string(declared_gates) +
                                            " gates but the body has " + std::to_string(c.gates.size()));
  }
  ValidateBristol(c);
  return c;
}

BristolCircuit LoadBristol(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open circuit file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseBristol(ss.str());
}

std::string SerializeBristol(const BristolCircuit& c) {
  std::ostringstream os;
  os << c.gates.size() << ' ' << c.wire_count << '\n';
  os << c.input_sizes.size();
  for (auto s : c.input_sizes) os << ' ' << s;
  os << '\n' << c.output_sizes.size();
  for (auto s : c.output_sizes) os << ' ' << s;
  os << "\n\n";
  for (const Gate& g : c.gates) {
    switch (g.kind) {
      case GateKind::kXor:
      case GateKind::kAnd:
        os << "2 1 " << g.in0 << ' ' << g.in1 << ' ' << g.out << ' ' << GateKindName(g.kind) << '\n';
        break;
      default:
        os << "1 1 " << g.in0 << ' ' << g.out << ' ' << GateKindName(g.kind) << '\n';
        break;
    }
  }
  return os.str();
}

void SaveBristol(const BristolCircuit& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write circuit file '" + path + "'");
  out << SerializeBristol(c);
}

void ValidateBristol(const BristolCircuit& c) {
  auto fail = [](std::size_t gi, const std::string& msg) {
    throw Error(ErrorCode::kValidation, "gate " + std::to_string(gi) + ": " + msg);
  };
  const std::uint64_t nin = c.input_bits();
  const std::uint64_t nout = c.output_bits();
  if (nin + nout > c.wire_count) {
    throw Error(ErrorCode::kValidation, "wire count smaller than inputs plus outputs");
  }
  std::vector<std::uint8_t> ready(c.wire_count, 0);
  std::fill(ready.begin(), ready.begin() + static_cast<std::ptrdiff_t>(nin), 1);
  for (std::size_t gi = 0; gi < c.gates.size(); ++gi) {
    const Gate& g = c.gates[gi];
    auto need = [&](std::uint32_t w) {
      if (w >= c.wire_count) fail(gi, "wire " + std::to_string(w) + " out of range");
      if (!ready[w]) fail(gi, "wire " + std::to_string(w) + " used before it is assigned");
    };
    if (g.kind != GateKind::kEq) need(g.in0);
    if (g.kind == GateKind::kXor || g.kind == GateKind::kAnd) need(g.in1);
    if (g.out >= c.wire_count) fail(gi, "output wire " + std::to_string(g.out) + " out of range");
    if (ready[g.out]) fail(gi, "wire " + std::to_string(g.out) + " assigned twice");
    ready[g.out] = 1;
  }
  for (std::uint64_t w = c.wire_count - nout; w < c.wire_count; ++w) {
    if (!ready[w]) throw Error(ErrorCode::kValidation, "output wire " + std::to_string(w) + " is never assigned");
  }
}

CircuitStats ComputeStats(const BristolCircuit& c) {
  CircuitStats s;
  for (const Gate& g : c.gates) {
    switch (g.kind) {
      case GateKind::kXor: ++s.xor_gates; break;
      case GateKind::kAnd: ++s.and_gates; break;
      case GateKind::kInv: ++s.inv_gates; break;
      case GateKind::kEq: ++s.eq_gates; break;
      case GateKind::kEqw: ++s.eqw_gates; break;
    }
  }
  s.and_depth = ComputeSchedule(c).and_levels.size();
  return s;
}

CircuitSchedule ComputeSchedule(const BristolCircuit& c) {
  std::vector<std::uint32_t> depth(c.wire_count, 0);
  CircuitSchedule s;
  s.free_levels.emplace_back();
  for (std::uint32_t gi = 0; gi < c.gates.size(); ++gi) {
    const Gate& g = c.gates[gi];
    std::uint32_t d = 0;
    if (g.kind != GateKind::kEq) d = depth[g.in0];
    if (g.kind == GateKind::kXor || g.kind == GateKind::kAnd) d = std::max(d, depth[g.in1]);
    if (g.kind == GateKind::kAnd) {
      ++d;
      if (s.and_levels.size() < d) s.and_levels.resize(d);
      s.and_levels[d - 1].push_back(gi);
    } else {
      if (s.free_levels.size() <= d) s.free_levels.resize(d + 1);
      s.free_levels[d].push_back(gi);
    }
    depth[g.out] = d;
  }
  s.free_levels.resize(s.and_levels.size() + 1);
  return s;
}

std::vector<Lanes> EvalPlainLanes(const BristolCircuit& c, std::span<const Lanes> inputs,
                                  std::size_t words) {
  if (inputs.size() != c.input_sizes.size()) {
    throw Error(ErrorCode::kShape, "circuit expects " + std::to_string(c.input_sizes.size()) +
                                       " input groups, got " + std::to_string(inputs.size()));
  }
  std::vector<std::uint64_t> w(static_cast<std::size_t>(c.wire_count) * words, 0);
  std::size_t base = 0;
  for (std::size_t g = 0; g < inputs.size(); ++g) {
    if (inputs[g].size() != c.input_sizes[g] * words) {
      throw Error(ErrorCode::kShape, "input group " + std::to_string(g) + " has wrong length");
    }
    std::copy(inputs[g].begin(), inputs[g].end(), w.begin() + static_cast<std::ptrdiff_t>(base * words));
    base += c.input_sizes[g];
  }
  for (const Gate& g : c.gates) {
    std::uint64_t* out = &w[g.out * words];
    const std::uint64_t* a = &w[g.in0 * words];
    switch (g.kind) {
      case GateKind::kXor: {
        const std::uint64_t* b = &w[g.in1 * words];
        for (std::size_t i = 0; i < words; ++i) out[i] = a[i] ^ b[i];
        break;
      }
      case GateKind::kAnd: {
        const std::uint64_t* b = &w[g.in1 * words];
        for (std::size_t i = 0; i < words; ++i) out[i] = a[i] & b[i];
        break;
      }
      case GateKind::kInv:
        for (std::size_t i = 0; i < words; ++i) out[i] = ~a[i];
        break;
      case GateKind::kEqw:
        for (std::size_t i = 0; i < words; ++i) out[i] = a[i];
        break;
      case GateKind::kEq:
        for (std::size_t i = 0; i < words; ++i) out[i] = g.in0 ? ~0ULL : 0ULL;
        break;
    }
  }
  std::vector<Lanes> outs;
  std::size_t wire = c.wire_count - c.output_bits();
  for (std::uint32_t sz : c.output_sizes) {
    outs.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(wire * words),
                      w.begin() + static_cast<std::ptrdiff_t>((wire + sz) * words));
    wire += sz;
  }
  return outs;
}

std::vector<std::vector<std::uint8_t>> EvalPlain(const BristolCircuit& c,
                                                 std::span<const std::vector<std::uint8_t>> inputs) {
  std::vector<Lanes> lanes;
  for (const auto& g : inputs) {
    Lanes l(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) l[i] = g[i] & 1U;
    lanes.push_back(std::move(l));
  }
  auto out = EvalPlainLanes(c, lanes, 1);
  std::vector<std::vector<std::uint8_t>> bits;
  for (const auto& l : out) {
    std::vector<std::uint8_t> b(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) b[i] = static_cast<std::uint8_t>(l[i] & 1U);
    bits.push_back(std::move(b));
  }
  return bits;
}

std::vector<std::uint8_t> BytesToBits(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> bits(bytes.size() * 8);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (bytes[i / 8] >> (7 - i % 8)) & 1U;
  return bits;
}

std::vector<std::uint8_t> BitsToBytes(std::span<const std::uint8_t> bits) {
  if (bits.size() % 8 != 0) throw Error(ErrorCode::kShape, "bit count is not a multiple of 8");
  std::vector<std::uint8_t> bytes(bits.size() / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] | ((bits[i] & 1U) << (7 - i % 8)));
  }
  return bytes;
}

}  // namespace shapmkt
