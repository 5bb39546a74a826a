#include "shapmkt/marketplace.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "shapmkt/boolean2pc.h"
#include "shapmkt/crypto.h"
#include "shapmkt/dataset.h"

namespace shapmkt {

// ---------------------------------------------------------------------------
// KeyValueConfig

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::Parse(std::istream& is, const std::string& source) {
  KeyValueConfig c;
  c.source_ = source;
  std::string line;
  for (std::size_t ln = 1; std::getline(is, line); ++ln) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, source + ":" + std::to_string(ln) + ": expected key=value");
    }
    const std::string key = Trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::kConfig, source + ":" + std::to_string(ln) + ": empty key");
    if (c.values_.count(key)) {
      throw Error(ErrorCode::kConfig, source + ":" + std::to_string(ln) + ": duplicate key '" + key + "'");
    }
    c.values_[key] = Trim(line.substr(eq + 1));
  }
  return c;
}

KeyValueConfig KeyValueConfig::Load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kConfig, "cannot open config file " + path);
  return Parse(is, path);
}

std::string KeyValueConfig::String(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::uint64_t KeyValueConfig::Unsigned(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(ErrorCode::kConfig, source_ + ": '" + key + "' needs a non-negative integer, got '" + s + "'");
  }
  return v;
}

double KeyValueConfig::Real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  double v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kConfig, source_ + ": '" + key + "' needs a number, got '" + s + "'");
  }
  return v;
}

bool KeyValueConfig::Bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error(ErrorCode::kConfig, source_ + ": '" + key + "' needs true or false, got '" + s + "'");
}

std::vector<std::uint64_t> KeyValueConfig::UnsignedList(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : StringList(key)) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw Error(ErrorCode::kConfig, source_ + ": '" + key + "' has a bad list item '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::StringList(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? std::vector<std::string>{} : SplitList(it->second);
}

void KeyValueConfig::RejectUnknown(const std::set<std::string>& known) const {
  std::string bad;
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) bad += (bad.empty() ? "" : ", ") + k;
  }
  if (!bad.empty()) throw Error(ErrorCode::kConfig, source_ + ": unknown keys: " + bad);
}

// ---------------------------------------------------------------------------
// ProtocolConfig

namespace {

const std::set<std::string>& KnownKeys() {
  static const std::set<std::string> keys = {
      "scenario_dir", "owners", "group_size", "noise", "classes", "dim", "separation", "preshare",
      "val_size", "market_seed", "model", "model_file", "label_aware", "sds_size", "subset_law", "subset_min",
      "subset_max", "proxy_lr", "proxy_iterations", "proxy_l2", "epochs", "inner_steps", "lr_ds",
      "lr_gf", "batch_size", "train_seed", "clip", "momentum", "weight_decay", "valuation",
      "mc_samples", "net", "budget", "seed", "trunc", "fraction_bits", "crypto_blocks",
      "deadline_blocks", "refuse_redeem", "drop_owner", "parallel_owners", "removal_orders",
      "bench_owners", "bench_samples", "bench_presets"};
  return keys;
}

TruncMode ParseTrunc(const std::string& s) {
  if (s == "exact") return TruncMode::kExact;
  if (s == "local") return TruncMode::kLocal;
  throw Error(ErrorCode::kConfig, "trunc must be exact or local, got '" + s + "'");
}

// Library validation errors become config errors at the config boundary.
template <class F>
void AsConfigError(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    throw Error(ErrorCode::kConfig, e.what());
  }
}

}  // namespace

void ProtocolConfig::Validate() const {
  AsConfigError([&] {
    if (scenario_dir.empty()) market.Validate();
    train.Validate();
    net.Validate();
    FixCfg(64, fraction_bits);
  });
  if (!(market.preshare > 0.0 && market.preshare <= 1.0)) {
    throw Error(ErrorCode::kConfig, "preshare must lie in (0, 1]");
  }
  if (sds_size == 0) throw Error(ErrorCode::kConfig, "sds_size must be at least 1");
  if (subset_law.max_size != 0 && subset_law.min_size > subset_law.max_size) {
    throw Error(ErrorCode::kConfig, "subset_min exceeds subset_max");
  }
  if (proxy.iterations == 0 || !(proxy.learning_rate > 0)) throw Error(ErrorCode::kConfig, "bad proxy settings");
  if (model_file.empty() && model_preset != "mnist-like" && model_preset != "cifar-like" &&
      model_preset != "mlp-synthetic") {
    throw Error(ErrorCode::kConfig, "unknown model preset '" + model_preset + "'");
  }
  if (scenario_dir.empty() && valuation == ValuationMode::kExact && market.owners > kExactCap) {
    throw Error(ErrorCode::kConfig, "exact valuation supports at most " + std::to_string(kExactCap) +
                                        " owners; use valuation=mc");
  }
  if (deadline_blocks == 0) throw Error(ErrorCode::kConfig, "deadline_blocks must be at least 1");
  if (removal_orders == 0) throw Error(ErrorCode::kConfig, "removal_orders must be at least 1");
  if (scenario_dir.empty()) {
    const auto in_range = [&](PartyId p) { return p >= 1 && static_cast<std::size_t>(p) <= market.owners; };
    for (PartyId p : refuse_redeem) {
      if (!in_range(p)) throw Error(ErrorCode::kConfig, "refuse_redeem names unknown owner " + std::to_string(p));
    }
    if (drop_owner && !in_range(*drop_owner)) {
      throw Error(ErrorCode::kConfig, "drop_owner names unknown owner " + std::to_string(*drop_owner));
    }
  }
}

ProtocolConfig ProtocolConfig::FromKeyValues(const KeyValueConfig& kv) {
  kv.RejectUnknown(KnownKeys());
  ProtocolConfig c;
  c.scenario_dir = kv.String("scenario_dir", "");
  c.market.owners = kv.Unsigned("owners", c.market.owners);
  c.market.group_size = kv.Unsigned("group_size", c.market.group_size);
  AsConfigError([&] { c.market.noise = ParseNoiseKind(kv.String("noise", NoiseKindName(c.market.noise))); });
  c.market.classes = static_cast<int>(kv.Unsigned("classes", static_cast<std::uint64_t>(c.market.classes)));
  c.market.dim = kv.Unsigned("dim", c.market.dim);
  c.market.separation = kv.Real("separation", c.market.separation);
  c.market.preshare = kv.Real("preshare", c.market.preshare);
  c.market.val_size = kv.Unsigned("val_size", c.market.val_size);
  c.market.seed = kv.Unsigned("market_seed", c.market.seed);
  c.model_preset = kv.String("model", c.model_preset);
  c.model_file = kv.String("model_file", "");
  c.label_aware = kv.Bool("label_aware", c.label_aware);
  c.sds_size = kv.Unsigned("sds_size", c.sds_size);
  AsConfigError([&] { c.subset_law.kind = ParseSubsetKind(kv.String("subset_law", SubsetKindName(c.subset_law.kind))); });
  c.subset_law.min_size = kv.Unsigned("subset_min", c.subset_law.min_size);
  c.subset_law.max_size = kv.Unsigned("subset_max", c.subset_law.max_size);
  c.proxy.learning_rate = kv.Real("proxy_lr", c.proxy.learning_rate);
  c.proxy.iterations = kv.Unsigned("proxy_iterations", c.proxy.iterations);
  c.proxy.l2 = kv.Real("proxy_l2", c.proxy.l2);
  c.train.epochs = kv.Unsigned("epochs", c.train.epochs);
  c.train.inner_steps = kv.Unsigned("inner_steps", c.train.inner_steps);
  c.train.lr_ds = kv.Real("lr_ds", c.train.lr_ds);
  c.train.lr_gf = kv.Real("lr_gf", c.train.lr_gf);
  c.train.batch_size = kv.Unsigned("batch_size", c.train.batch_size);
  c.train.seed = kv.Unsigned("train_seed", c.train.seed);
  c.train.clip = kv.Real("clip", c.train.clip);
  c.train.momentum = kv.Real("momentum", c.train.momentum);
  c.train.weight_decay = kv.Real("weight_decay", c.train.weight_decay);
  const std::string mode = kv.String("valuation", "exact");
  if (mode == "exact") {
    c.valuation = ValuationMode::kExact;
  } else if (mode == "mc") {
    c.valuation = ValuationMode::kMonteCarlo;
  } else {
    throw Error(ErrorCode::kConfig, "valuation must be exact or mc, got '" + mode + "'");
  }
  c.mc_samples = kv.Unsigned("mc_samples", c.mc_samples);
  c.net_name = kv.String("net", c.net_name);
  c.net = NetConfig::FromName(c.net_name);
  c.budget = kv.Unsigned("budget", c.budget);
  c.seed = kv.Unsigned("seed", c.seed);
  c.trunc = ParseTrunc(kv.String("trunc", "exact"));
  c.fraction_bits = static_cast<unsigned>(kv.Unsigned("fraction_bits", c.fraction_bits));
  c.crypto_blocks = kv.Unsigned("crypto_blocks", c.crypto_blocks);
  c.deadline_blocks = kv.Unsigned("deadline_blocks", c.deadline_blocks);
  for (auto p : kv.UnsignedList("refuse_redeem")) c.refuse_redeem.insert(static_cast<PartyId>(p));
  if (kv.Has("drop_owner")) c.drop_owner = static_cast<PartyId>(kv.Unsigned("drop_owner", 0));
  c.parallel_owners = kv.Bool("parallel_owners", c.parallel_owners);
  c.removal_orders = kv.Unsigned("removal_orders", c.removal_orders);
  c.Validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<double> RunReport::shapley() const {
  std::vector<double> v;
  for (const auto& o : owners) v.push_back(o.shapley);
  return v;
}

void WriteOwnerCsv(const RunReport& r, std::ostream& os) {
  os << "owner,party,rows,preshared,noise_level,noise_rank,shapley,shapley_stderr,loo,offer,tx,state,"
        "original_checksum,delivered_checksum\n";
  const auto prec = os.precision(17);
  for (std::size_t i = 0; i < r.owners.size(); ++i) {
    const auto& o = r.owners[i];
    os << i + 1 << ',' << o.party << ',' << o.rows << ',' << o.preshared_rows << ',' << o.noise_level << ','
       << o.noise_rank << ',' << o.shapley << ',' << o.shapley_stderr << ',' << o.loo << ',' << o.offer << ','
       << o.tx_id << ',' << (o.tx_id ? TxStateName(o.state) : "none") << ',' << o.original_checksum << ','
       << o.delivered_checksum << '\n';
  }
  os.precision(prec);
}

void WriteCoalitionScoresCsv(const RunReport& r, std::ostream& os) {
  os << "coalition,members,pre_sigmoid,utility\n";
  const auto prec = os.precision(17);
  for (const auto& [c, v] : r.coalitions) {
    os << c << ',' << CoalitionMembers(c) << ',' << v.pre_sigmoid << ',' << v.utility << '\n';
  }
  os.precision(prec);
}

void WriteSummary(const RunReport& r, std::ostream& os) {
  os << (r.secure ? "secure protocol run" : "plaintext pipeline run") << ", " << r.owners.size()
     << " owners, seed " << r.seed << '\n';
  if (!r.aborted_phase.empty()) os << "ABORTED in " << r.aborted_phase << ": " << r.abort_message << '\n';
  os << "valuation: " << (r.exact ? "exact" : "monte carlo") << ", " << r.samples
     << (r.exact ? " coalitions" : " permutations") << ", " << r.coalitions.size() << " coalition scores\n";
  if (!r.loss_history.empty()) {
    os << "utility model: final training loss " << r.loss_history.back() << " after "
       << r.loss_history.size() << " epochs\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  os << '\n' << std::left << std::setw(7) << "owner" << std::setw(8) << "rank" << std::setw(14) << "shapley"
     << std::setw(14) << "loo" << std::setw(10) << "offer" << std::setw(10) << "state" << "delivery\n";
  for (std::size_t i = 0; i < r.owners.size(); ++i) {
    const auto& o = r.owners[i];
    std::ostringstream sv, loo;
    sv << std::setprecision(6) << o.shapley;
    loo << std::setprecision(6) << o.loo;
    std::string delivery = "-";
    if (!o.delivered_checksum.empty()) {
      delivery = o.delivered_checksum == o.original_checksum ? "verified" : "MISMATCH";
    }
    os << std::setw(7) << i + 1 << std::setw(8) << o.noise_rank << std::setw(14) << sv.str() << std::setw(14)
       << loo.str() << std::setw(10) << o.offer << std::setw(10) << (o.tx_id ? TxStateName(o.state) : "-")
       << delivery << '\n';
  }
  os << std::right << '\n';
  if (r.secure) {
    os << "communication: setup " << r.stats.phase(Phase::kSetup).bytes << " B, 2pc "
       << r.stats.phase(Phase::kTwoParty).bytes << " B, mpc " << r.stats.phase(Phase::kMultiParty).bytes
       << " B, total " << r.stats.bytes << " B over " << r.stats.rounds << " rounds\n";
    os << "simulated time: " << r.stats.seconds << " s\n";
    if (r.buyer_deposit > 0) os << "buyer: deposited " << r.buyer_deposit << ", balance after settlement " << r.buyer_balance << '\n';
  }
}

void WriteReportDir(const RunReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  auto open = [&](const char* name) {
    std::ofstream os(base / name);
    if (!os) throw Error(ErrorCode::kIo, "cannot write " + (base / name).string());
    return os;
  };
  {
    auto os = open("owners.csv");
    WriteOwnerCsv(r, os);
  }
  {
    auto os = open("coalitions.csv");
    WriteCoalitionScoresCsv(r, os);
  }
  {
    auto os = open("costs.txt");
    r.stats.WriteReport(os);
  }
  {
    auto os = open("ledger.tsv");
    os << "# height\ttx\tevent\tamount\thash\tpreimage\n";
    for (const auto& e : r.ledger_log) {
      os << e.height << '\t' << e.tx_id << '\t' << e.event << '\t' << e.amount << '\t'
         << (e.event == "deposit" ? "-" : ToHex(e.hash)) << '\t' << (e.preimage.empty() ? "-" : ToHex(e.preimage))
         << '\n';
    }
  }
  {
    auto os = open("summary.txt");
    WriteSummary(r, os);
  }
}

// ---------------------------------------------------------------------------
// Pipeline pieces

MarketScenario LoadOrGenerate(const ProtocolConfig& cfg) {
  if (cfg.scenario_dir.empty()) return GenMarket(cfg.market);
  MarketScenario s = LoadScenario(cfg.scenario_dir);
  if (s.owners.empty()) throw Error(ErrorCode::kConfig, "scenario has no owners");
  // The run's pre-share fraction overrides the one stored with the scenario.
  s.spec.preshare = cfg.market.preshare;
  s.preshare_rows.clear();
  for (const auto& o : s.owners) {
    const double want = std::ceil(cfg.market.preshare * static_cast<double>(o.rows()));
    s.preshare_rows.push_back(std::min(o.rows(), std::max<std::size_t>(1, static_cast<std::size_t>(want))));
  }
  return s;
}

namespace {

void CheckScenario(const ProtocolConfig& cfg, const MarketScenario& s) {
  const std::size_t n = s.owners.size();
  if (n == 0 || n > 63) throw Error(ErrorCode::kConfig, "owner count must be in [1, 63]");
  if (cfg.valuation == ValuationMode::kExact && n > kExactCap) {
    throw Error(ErrorCode::kConfig, "exact valuation supports at most " + std::to_string(kExactCap) +
                                        " owners; use valuation=mc");
  }
  const auto in_range = [&](PartyId p) { return p >= 1 && static_cast<std::size_t>(p) <= n; };
  for (PartyId p : cfg.refuse_redeem) {
    if (!in_range(p)) throw Error(ErrorCode::kConfig, "refuse_redeem names unknown owner " + std::to_string(p));
  }
  if (cfg.drop_owner && !in_range(*cfg.drop_owner)) {
    throw Error(ErrorCode::kConfig, "drop_owner names unknown owner " + std::to_string(*cfg.drop_owner));
  }
  for (const auto& o : s.owners) {
    if (o.rows() == 0) throw Error(ErrorCode::kConfig, "every owner needs at least one sample");
    if (o.cols != s.validation.cols) throw Error(ErrorCode::kConfig, "owner and validation widths differ");
  }
}

std::vector<std::vector<std::size_t>> PlanPermutations(const ProtocolConfig& cfg, std::size_t n) {
  Rng rng = Rng(cfg.seed).Split("shapley-mc");
  return SamplePermutations(n, cfg.mc_samples == 0 ? DefaultMcSamples(n) : cfg.mc_samples, rng);
}

RunReport BaseReport(const ProtocolConfig& cfg, const MarketScenario& s, bool secure) {
  RunReport r;
  r.secure = secure;
  r.seed = cfg.seed;
  r.exact = cfg.valuation == ValuationMode::kExact;
  for (std::size_t i = 0; i < s.owners.size(); ++i) {
    OwnerOutcome o;
    o.party = static_cast<PartyId>(i + 1);
    o.rows = s.owners[i].rows();
    o.preshared_rows = s.preshare_rows[i];
    o.noise_level = i < s.noise_level.size() ? s.noise_level[i] : 0.0;
    o.noise_rank = i < s.noise_rank.size() ? s.noise_rank[i] : 0;
    o.original_checksum = ToHex(Sha256(EncodeCanonical(s.owners[i])));
    r.owners.push_back(std::move(o));
  }
  return r;
}

void FillValuation(const ProtocolConfig& cfg, RunReport& r) {
  const std::size_t n = r.owners.size();
  const CoalitionFn u = [&](Coalition c) {
    auto it = r.coalitions.find(c);
    if (it == r.coalitions.end()) throw Error(ErrorCode::kParameter, "coalition " + std::to_string(c) + " not scored");
    return it->second.utility;
  };
  const auto v = Valuate(u, n, r.exact, cfg.mc_samples, cfg.seed);
  r.samples = v.samples;
  const auto offers = PriceOffers(cfg.budget, v.shapley);
  for (std::size_t i = 0; i < n; ++i) {
    r.owners[i].shapley = v.shapley[i];
    r.owners[i].shapley_stderr = v.shapley_stderr[i];
    r.owners[i].loo = v.loo[i];
    r.owners[i].offer = offers[i];
  }
}

// Runs `f`, turning any failure into a phase-tagged abort carrying `r`.
template <class F>
void Step(const char* phase, RunReport& r, F&& f) {
  try {
    f();
  } catch (const ProtocolAbort&) {
    throw;
  } catch (const std::exception& e) {
    r.aborted_phase = phase;
    r.abort_message = e.what();
    throw ProtocolAbort(phase, e.what(), r);
  }
}

struct OwnerTwoParty {
  OwnerRepr repr;
  Block128 nonce{};
  Key256 key{};
  std::vector<std::uint8_t> ciphertext;
  Digest256 lock{};
  std::size_t blocks_2pc = 0, blocks_local = 0;
  CostStats stats;
};

Rng OwnerRng(std::uint64_t seed, PartyId owner) { return Rng(seed).Split("owner").Split(static_cast<std::uint64_t>(owner)); }

// Buyer and one owner on their own link: the encoding phase, then the
// in-circuit encryption of the owner's canonical bytes and the key hash.
OwnerTwoParty RunOwnerTwoParty(const NetConfig& net_cfg, std::uint64_t seed, TruncMode trunc,
                               std::size_t crypto_blocks, bool with_crypto, const UtilityModel& m,
                               PartyId owner, const Dataset& data) {
  const FixCfg fx(64, m.fraction_bits);
  Network net(net_cfg, {kBuyer, owner});
  net.SetPhase(Phase::kTwoParty);
  const Rng base = OwnerRng(seed, owner);
  Dealer dealer(fx, base.Split("dealer"));
  Engine e(fx, net, dealer, trunc, base.Split("engine"));
  OwnerTwoParty out;
  out.repr = EncodeOwner(e, m, owner, data);
  if (with_crypto) {
    Rng krng = base.Split("key");
    for (auto& b : out.key) b = static_cast<std::uint8_t>(krng());
    // Owner id in the leading bytes keeps nonces distinct across owners.
    for (std::size_t b = 0; b < 4; ++b) out.nonce[b] = static_cast<std::uint8_t>(static_cast<std::uint32_t>(owner) >> (24 - 8 * b));
    for (std::size_t b = 4; b < 8; ++b) out.nonce[b] = static_cast<std::uint8_t>(krng());

    const auto bytes = EncodeCanonical(data);
    const std::size_t total_blocks = (bytes.size() + 15) / 16;
    out.blocks_2pc = crypto_blocks == 0 ? total_blocks : std::min(total_blocks, crypto_blocks);
    out.blocks_local = total_blocks - out.blocks_2pc;
    const std::size_t split = std::min(bytes.size(), out.blocks_2pc * 16);

    BooleanSession bs(net, dealer, kBuyer, owner);
    Rng srng = base.Split("bit-shares");
    const BitShares key = ShareBits(BytesToBits(out.key), srng);
    net.RouteMessage(owner, kBuyer, 32);
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(split));
    prefix.resize(out.blocks_2pc * 16, 0);
    const BitShares d = ShareBits(BytesToBits(prefix), srng);
    net.RouteMessage(owner, kBuyer, prefix.size());
    NonceRegistry local;
    out.ciphertext = bs.CtrEncrypt(key, out.nonce, d, kBuyer, local);
    out.ciphertext.resize(split);
    if (split < bytes.size()) {
      const std::span<const std::uint8_t> tail(bytes.data() + split, bytes.size() - split);
      const auto ct = Aes256Ctr(out.key, CounterBlock(out.nonce, out.blocks_2pc), tail);
      net.RouteMessage(owner, kBuyer, ct.size());
      out.ciphertext.insert(out.ciphertext.end(), ct.begin(), ct.end());
    }
    out.lock = bs.Sha256Key(key, kBuyer);
  }
  out.stats = net.CollectStats();
  return out;
}

std::vector<OwnerTwoParty> RunAllOwners(const ProtocolConfig& cfg, const UtilityModel& m,
                                        const MarketScenario& s, bool with_crypto) {
  const std::size_t n = s.owners.size();
  std::vector<OwnerTwoParty> out(n);
  auto one = [&](std::size_t i) {
    out[i] = RunOwnerTwoParty(cfg.net, cfg.seed, cfg.trunc, cfg.crypto_blocks, with_crypto, m,
                              static_cast<PartyId>(i + 1), s.owners[i]);
  };
  if (!cfg.parallel_owners) {
    for (std::size_t i = 0; i < n; ++i) one(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < n; ++i) {
    workers.emplace_back([&, i] {
      try {
        one(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

CostStats MergeOwners(const ProtocolConfig& cfg, const std::vector<OwnerTwoParty>& owners) {
  CostStats total;
  for (const auto& o : owners) {
    if (cfg.parallel_owners) {
      total.MergeParallel(o.stats);
    } else {
      total.MergeSequential(o.stats);
    }
  }
  return total;
}

std::vector<PartyId> AllParties(std::size_t n) {
  std::vector<PartyId> p{kBuyer};
  for (std::size_t i = 1; i <= n; ++i) p.push_back(static_cast<PartyId>(i));
  return p;
}

// Lifts every owner's sum and scores the plan's coalitions.
void SecureMapping(const ProtocolConfig& cfg, const UtilityModel& m, const std::vector<OwnerTwoParty>& enc,
                   Network& net, const std::vector<Coalition>& plan, RunReport& r) {
  const FixCfg fx(64, m.fraction_bits);
  const Rng base = Rng(cfg.seed).Split("mapping");
  Dealer dealer(fx, base.Split("dealer"));
  Engine e(fx, net, dealer, cfg.trunc, base.Split("engine"));
  if (cfg.drop_owner) e.FailParty(*cfg.drop_owner);
  SecureMapper mapper(e, m, AllParties(enc.size()));
  std::vector<SharedTensor> lifted;
  for (const auto& o : enc) lifted.push_back(mapper.Lift(o.repr));
  const double empty_pre = ScoreCoalition(m, std::span<const Dataset* const>{}).pre_sigmoid;
  for (Coalition c : plan) {
    if (c == 0) {
      r.coalitions[c] = {empty_pre, m.empty_utility};
      continue;
    }
    std::vector<SharedTensor> reps;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      if (c >> i & 1U) {
        reps.push_back(lifted[i]);
        counts.push_back(enc[i].repr.count);
      }
    }
    const double pre = mapper.Score(reps, counts);
    r.coalitions[c] = {pre, m.final_sigmoid ? Sigmoid(pre) : pre};
  }
}

void PlaintextMapping(const UtilityModel& m, const MarketScenario& s, const std::vector<Coalition>& plan,
                      RunReport& r) {
  for (Coalition c : plan) {
    std::vector<const Dataset*> groups;
    for (std::size_t i = 0; i < s.owners.size(); ++i) {
      if (c >> i & 1U) groups.push_back(&s.owners[i]);
    }
    const auto sc = ScoreCoalition(m, groups);
    r.coalitions[c] = {sc.pre_sigmoid, sc.utility};
  }
}

void PreShareTransfer(Network& net, const MarketScenario& s) {
  net.SetPhase(Phase::kSetup);
  for (std::size_t i = 0; i < s.owners.size(); ++i) {
    net.RouteMessage(static_cast<PartyId>(i + 1), kBuyer, EncodeCanonical(s.PreShared(i)).size());
  }
}

}  // namespace

UtilityDataset BuildMarketSds(const ProtocolConfig& cfg, const MarketScenario& s,
                              std::vector<std::string>* warnings) {
  SubsetLaw law = cfg.subset_law;
  law.groups.clear();
  if (law.kind == SubsetKind::kOwnerMixture) {
    for (std::size_t i = 0; i < s.owners.size(); ++i) law.groups.insert(law.groups.end(), s.preshare_rows[i], i);
  }
  Rng rng = Rng(cfg.seed).Split("sds");
  return BuildUtilityDataset(s.PreSharedPool(), s.validation, cfg.sds_size, law, rng, cfg.proxy, warnings);
}

BuyerModel PrepareModel(const ProtocolConfig& cfg, const MarketScenario& s) {
  BuyerModel b;
  const std::size_t dim = s.validation.cols;
  if (!cfg.model_file.empty()) {
    b.model = LoadModel(cfg.model_file);
    if (b.model.input_dim != dim) {
      throw Error(ErrorCode::kConfig, "model expects " + std::to_string(b.model.input_dim) +
                                          " features, data has " + std::to_string(dim));
    }
    if (b.model.fraction_bits != cfg.fraction_bits) {
      throw Error(ErrorCode::kConfig, "model fraction bits differ from fraction_bits");
    }
    return b;
  }
  const UtilityDataset sds = BuildMarketSds(cfg, s, &b.warnings);
  PresetOptions opt;
  opt.input_dim = dim;
  opt.classes = std::max(s.spec.classes, s.validation.classes);
  opt.label_aware = cfg.label_aware;
  opt.seed = cfg.train.seed;
  UtilityModel m;
  try {
    m = BuildPreset(cfg.model_preset, opt);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  if (m.input_dim != dim) {
    throw Error(ErrorCode::kConfig, "preset " + cfg.model_preset + " expects " + std::to_string(m.input_dim) +
                                        " features, data has " + std::to_string(dim));
  }
  m.fraction_bits = cfg.fraction_bits;
  auto trained = TrainUtility(std::move(m), sds, cfg.train);
  b.model = std::move(trained.model);
  b.loss_history = std::move(trained.loss_history);
  return b;
}

std::vector<Coalition> CoalitionPlan(const ProtocolConfig& cfg, std::size_t n) {
  if (n == 0 || n > 63) throw Error(ErrorCode::kParameter, "owner count must be in [1, 63]");
  std::vector<Coalition> plan;
  const Coalition all = ~Coalition{0} >> (64 - n);
  if (cfg.valuation == ValuationMode::kExact) {
    if (n > kExactCap) throw Error(ErrorCode::kConfig, "exact valuation over cap; use valuation=mc");
    plan.resize(std::size_t{1} << n);
    std::iota(plan.begin(), plan.end(), Coalition{0});
    return plan;
  }
  plan = PrefixCoalitions(PlanPermutations(cfg, n));
  plan.push_back(all);
  for (std::size_t i = 0; i < n; ++i) plan.push_back(all & ~(Coalition{1} << i));
  std::sort(plan.begin(), plan.end());
  plan.erase(std::unique(plan.begin(), plan.end()), plan.end());
  return plan;
}

RunReport RunProtocol(const ProtocolConfig& cfg) {
  cfg.Validate();
  return RunProtocol(cfg, LoadOrGenerate(cfg));
}

RunReport RunProtocol(const ProtocolConfig& cfg, const MarketScenario& s) {
  cfg.Validate();
  CheckScenario(cfg, s);
  const std::size_t n = s.owners.size();
  RunReport r = BaseReport(cfg, s, true);
  Network net(cfg.net, AllParties(n));

  // Step 1: pre-share and model.
  BuyerModel bm;
  Step("pre-share", r, [&] {
    PreShareTransfer(net, s);
    bm = PrepareModel(cfg, s);
    r.loss_history = bm.loss_history;
    r.warnings = bm.warnings;
  });

  // Steps 2 and 3a: per-owner input sharing, encoding and encryption.
  std::vector<OwnerTwoParty> enc;
  Step("two-party", r, [&] {
    enc = RunAllOwners(cfg, bm.model, s, true);
    NonceRegistry nonces;
    for (std::size_t i = 0; i < n; ++i) {
      nonces.Claim(enc[i].nonce);
      r.owners[i].crypto_blocks_2pc = enc[i].blocks_2pc;
      r.owners[i].crypto_blocks_local = enc[i].blocks_local;
    }
  });

  // Step 3b: conversion, mapping phase, valuation.
  Step("valuation", r, [&] {
    SecureMapping(cfg, bm.model, enc, net, CoalitionPlan(cfg, n), r);
    FillValuation(cfg, r);
  });
  r.stats = net.CollectStats();
  r.stats.MergeSequential(MergeOwners(cfg, enc));

  // Step 4: hash-locked payment.
  Ledger ledger;
  Step("payment", r, [&] {
    r.buyer_deposit = cfg.budget + n;
    ledger.Deposit(kBuyer, r.buyer_deposit);
    for (std::size_t i = 0; i < n; ++i) {
      r.owners[i].tx_id = ledger.SubmitHashlock(kBuyer, r.owners[i].party, r.owners[i].offer, enc[i].lock,
                                                ledger.height() + cfg.deadline_blocks);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const PartyId p = r.owners[i].party;
      if (cfg.refuse_redeem.count(p)) continue;
      if (Sha256(enc[i].key) != enc[i].lock) throw Error(ErrorCode::kAbort, "owner " + std::to_string(p) + " lock hash mismatch");
      if (!ledger.Redeem(r.owners[i].tx_id, enc[i].key)) {
        throw Error(ErrorCode::kAbort, "owner " + std::to_string(p) + " key rejected by the ledger");
      }
    }
    ledger.AdvanceAndRefund(cfg.deadline_blocks + 1);
    for (auto& o : r.owners) o.state = ledger.tx(o.tx_id).state;
    r.ledger_log = ledger.log();
    r.buyer_balance = ledger.Balance(kBuyer);
  });

  // Step 5: the buyer decrypts what it paid for.
  Step("delivery", r, [&] {
    for (std::size_t i = 0; i < n; ++i) {
      auto& o = r.owners[i];
      const auto& tx = ledger.tx(o.tx_id);
      if (tx.state != TxState::kRedeemed) continue;
      Key256 key{};
      std::copy(tx.revealed_preimage->begin(), tx.revealed_preimage->end(), key.begin());
      const auto plain = DecryptData(key, enc[i].nonce, enc[i].ciphertext);
      DecodeCanonical(plain);
      o.delivered_checksum = ToHex(Sha256(plain));
      if (o.delivered_checksum != o.original_checksum) {
        throw Error(ErrorCode::kAbort, "owner " + std::to_string(o.party) + " delivery checksum mismatch");
      }
    }
  });
  return r;
}

RunReport RunPlaintextPipeline(const ProtocolConfig& cfg) {
  cfg.Validate();
  return RunPlaintextPipeline(cfg, LoadOrGenerate(cfg));
}

RunReport RunPlaintextPipeline(const ProtocolConfig& cfg, const MarketScenario& s) {
  cfg.Validate();
  CheckScenario(cfg, s);
  BuyerModel bm = PrepareModel(cfg, s);
  RunReport r = ValuatePlaintext(cfg, s, bm.model);
  r.loss_history = std::move(bm.loss_history);
  r.warnings = std::move(bm.warnings);
  return r;
}

RunReport ValuatePlaintext(const ProtocolConfig& cfg, const MarketScenario& s, const UtilityModel& m) {
  CheckScenario(cfg, s);
  RunReport r = BaseReport(cfg, s, false);
  PlaintextMapping(m, s, CoalitionPlan(cfg, s.owners.size()), r);
  FillValuation(cfg, r);
  return r;
}

RunReport ValuateSecure(const ProtocolConfig& cfg, const MarketScenario& s, const UtilityModel& m) {
  CheckScenario(cfg, s);
  const std::size_t n = s.owners.size();
  RunReport r = BaseReport(cfg, s, true);
  Network net(cfg.net, AllParties(n));
  std::vector<OwnerTwoParty> enc;
  Step("two-party", r, [&] { enc = RunAllOwners(cfg, m, s, false); });
  Step("valuation", r, [&] {
    SecureMapping(cfg, m, enc, net, CoalitionPlan(cfg, n), r);
    FillValuation(cfg, r);
  });
  r.stats = net.CollectStats();
  r.stats.MergeSequential(MergeOwners(cfg, enc));
  return r;
}

// ---------------------------------------------------------------------------
// Bench

BenchGrid BenchGrid::FromKeyValues(const KeyValueConfig& kv) {
  kv.RejectUnknown(KnownKeys());
  BenchGrid g;
  for (auto v : kv.UnsignedList("bench_owners")) g.owners.push_back(v);
  for (auto v : kv.UnsignedList("bench_samples")) g.samples.push_back(v);
  if (kv.Has("bench_presets")) g.presets = kv.StringList("bench_presets");
  for (const auto& p : g.presets) NetConfig::FromName(p);
  g.dim = kv.Unsigned("dim", g.dim);
  g.model_preset = kv.String("model", g.model_preset);
  g.trunc = ParseTrunc(kv.String("trunc", "exact"));
  g.crypto_blocks = kv.Unsigned("crypto_blocks", g.crypto_blocks);
  g.seed = kv.Unsigned("seed", g.seed);
  for (auto n : g.owners) {
    if (n == 0 || n > 63) throw Error(ErrorCode::kConfig, "bench_owners entries must be in [1, 63]");
  }
  for (auto m : g.samples) {
    if (m == 0) throw Error(ErrorCode::kConfig, "bench_samples entries must be positive");
  }
  return g;
}

std::vector<BenchRow> Bench(const BenchGrid& grid) {
  std::vector<BenchRow> rows;
  for (const auto& preset : grid.presets) {
    for (std::size_t n : grid.owners) {
      for (std::size_t samples : grid.samples) {
        MarketSpec spec;
        spec.owners = n;
        spec.group_size = samples;
        spec.dim = grid.dim;
        spec.seed = grid.seed;
        const MarketScenario s = GenMarket(spec);
        PresetOptions opt;
        opt.input_dim = grid.dim;
        opt.classes = spec.classes;
        opt.seed = grid.seed;
        const UtilityModel m = BuildPreset(grid.model_preset, opt);

        ProtocolConfig cfg;
        cfg.net = NetConfig::FromName(preset);
        cfg.seed = grid.seed;
        cfg.trunc = grid.trunc;
        cfg.crypto_blocks = grid.crypto_blocks;
        cfg.fraction_bits = m.fraction_bits;
        const auto enc = RunAllOwners(cfg, m, s, true);

        Network net(cfg.net, AllParties(n));
        RunReport scratch;
        SecureMapping(cfg, m, enc, net, {~Coalition{0} >> (64 - n)}, scratch);
        const CostStats mpc = net.CollectStats();

        BenchRow row;
        row.owners = n;
        row.samples = samples;
        row.preset = preset;
        for (const auto& o : enc) {
          row.twopc_bytes += o.stats.bytes;
          row.twopc_seconds = std::max(row.twopc_seconds, o.stats.seconds);
        }
        row.twopc_bytes_per_owner = enc.front().stats.bytes;
        row.mpc_bytes = mpc.phase(Phase::kMultiParty).bytes;
        row.mpc_seconds = mpc.seconds;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void WriteBenchCsv(std::span<const BenchRow> rows, std::ostream& os) {
  os << "owners,samples,preset,twopc_bytes,twopc_bytes_per_owner,mpc_bytes,twopc_seconds,mpc_seconds\n";
  for (const auto& r : rows) {
    os << r.owners << ',' << r.samples << ',' << r.preset << ',' << r.twopc_bytes << ','
       << r.twopc_bytes_per_owner << ',' << r.mpc_bytes << ',' << r.twopc_seconds << ',' << r.mpc_seconds << '\n';
  }
}

LinearFit FitLine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::kParameter, "fit needs two or more points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::kUndefined, "fit over a constant x");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace shapmkt
