#include "shapmkt/transport.h"

#include <algorithm>
#include <ostream>

#include "shapmkt/error.h"

namespace shapmkt {

const char* PhaseName(Phase p) {
  switch (p) {
    case Phase::kSetup: return "setup";
    case Phase::kTwoParty: return "2pc";
    case Phase::kMultiParty: return "mpc";
  }
  return "?";
}

NetConfig NetConfig::FromName(const std::string& name) {
  if (name == "domestic") return Domestic();
  if (name == "cross-border") return CrossBorder();
  throw Error(ErrorCode::kConfig, "unknown network preset '" + name + "'");
}

void NetConfig::Validate() const {
  if (!(latency_ms >= 0.0)) throw Error(ErrorCode::kParameter, "latency must be >= 0");
  if (!(bandwidth_bps > 0.0)) throw Error(ErrorCode::kParameter, "bandwidth must be > 0");
}

void CostStats::MergeParallel(const CostStats& other) {
  bytes += other.bytes;
  messages += other.messages;
  rounds = std::max(rounds, other.rounds);
  seconds = std::max(seconds, other.seconds);
  for (const auto& [pair, b] : other.bytes_per_pair) bytes_per_pair[pair] += b;
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    per_phase[i].bytes += other.per_phase[i].bytes;
    per_phase[i].messages += other.per_phase[i].messages;
    per_phase[i].rounds = std::max(per_phase[i].rounds, other.per_phase[i].rounds);
    per_phase[i].seconds = std::max(per_phase[i].seconds, other.per_phase[i].seconds);
  }
}

void CostStats::MergeSequential(const CostStats& other) {
  bytes += other.bytes;
  messages += other.messages;
  rounds += other.rounds;
  seconds += other.seconds;
  for (const auto& [pair, b] : other.bytes_per_pair) bytes_per_pair[pair] += b;
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    per_phase[i].bytes += other.per_phase[i].bytes;
    per_phase[i].messages += other.per_phase[i].messages;
    per_phase[i].rounds += other.per_phase[i].rounds;
    per_phase[i].seconds += other.per_phase[i].seconds;
  }
}

void CostStats::WriteReport(std::ostream& os) const {
  os << "# op\tphase\tbytes\trounds\tseconds\n";
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    const PhaseTotals& t = per_phase[i];
    os << "phase-total\t" << PhaseName(static_cast<Phase>(i)) << '\t' << t.bytes << '\t'
       << t.rounds << '\t' << t.seconds << '\n';
  }
  for (const auto& [pair, b] : bytes_per_pair) {
    os << "pair:" << pair.first << "->" << pair.second << "\t-\t" << b << "\t-\t-\n";
  }
  os << "total\tall\t" << bytes << '\t' << rounds << '\t' << seconds << '\n';
}

Network::Network(NetConfig cfg, std::vector<PartyId> parties)
    : cfg_(cfg), parties_(std::move(parties)), clocks_(parties_.size()) {
  cfg_.Validate();
  std::vector<PartyId> sorted = parties_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::kParameter, "duplicate party id");
  }
}

bool Network::HasParty(PartyId p) const {
  return std::find(parties_.begin(), parties_.end(), p) != parties_.end();
}

std::size_t Network::Index(PartyId p) const {
  auto it = std::find(parties_.begin(), parties_.end(), p);
  if (it == parties_.end()) {
    throw Error(ErrorCode::kUnknownParty, "party " + std::to_string(p) + " is not registered");
  }
  return static_cast<std::size_t>(it - parties_.begin());
}

Receipt Network::RouteMessage(PartyId from, PartyId to, std::uint64_t payload_bytes,
                              std::span<const Receipt> depends_on) {
  const std::size_t fi = Index(from);
  const std::size_t ti = Index(to);
  double depart = clocks_[fi].time;
  std::uint64_t round = clocks_[fi].round;
  for (const Receipt& dep : depends_on) {
    depart = std::max(depart, dep.arrive_s);
    round = std::max(round, dep.round);
  }
  const std::uint64_t wire = payload_bytes + kFrameBytes;
  const double transmit = static_cast<double>(wire) * 8.0 / cfg_.bandwidth_bps;
  double& link = link_free_[{from, to}];
  depart = std::max(depart, link);
  link = depart + transmit;

  Receipt r;
  r.id = next_id_++;
  r.from = from;
  r.to = to;
  r.wire_bytes = wire;
  r.round = round + 1;
  r.depart_s = depart;
  r.arrive_s = depart + cfg_.latency_ms / 1000.0 + transmit;

  clocks_[ti].time = std::max(clocks_[ti].time, r.arrive_s);
  clocks_[ti].round = std::max(clocks_[ti].round, r.round);
  // A sender that depended on something has necessarily observed it.
  clocks_[fi].time = std::max(clocks_[fi].time, depart);
  clocks_[fi].round = std::max(clocks_[fi].round, round);

  stats_.bytes += wire;
  stats_.messages += 1;
  stats_.bytes_per_pair[{from, to}] += wire;
  auto& ph = stats_.per_phase[static_cast<std::size_t>(phase_)];
  ph.bytes += wire;
  ph.messages += 1;
  return r;
}

Receipt Network::RouteMessage(PartyId from, PartyId to, std::span<const std::uint8_t> payload,
                              std::span<const Receipt> depends_on) {
  return RouteMessage(from, to, payload.size(), depends_on);
}

std::vector<Receipt> Network::RouteBatch(std::span<const Message> batch) {
  // Snapshot sender clocks so deliveries inside the batch do not create
  // artificial dependencies between its messages.
  std::vector<PartyClock> before = clocks_;
  std::vector<PartyClock> after = clocks_;
  std::vector<Receipt> out;
  out.reserve(batch.size());
  for (const Message& m : batch) {
    const std::size_t fi = Index(m.from);
    const std::size_t ti = Index(m.to);
    clocks_[fi] = before[fi];
    Receipt r = RouteMessage(m.from, m.to, m.payload_bytes);
    after[ti].time = std::max(after[ti].time, r.arrive_s);
    after[ti].round = std::max(after[ti].round, r.round);
    out.push_back(r);
  }
  clocks_ = std::move(after);
  return out;
}

void Network::CloseSegment() {
  auto& ph = stats_.per_phase[static_cast<std::size_t>(phase_)];
  ph.seconds += Now() - segment_start_time_;
  ph.rounds += CriticalRounds() - segment_start_round_;
  segment_start_time_ = Now();
  segment_start_round_ = CriticalRounds();
}

void Network::SetPhase(Phase p) {
  if (p == phase_) return;
  CloseSegment();
  phase_ = p;
}

void Network::SyncTo(double seconds, std::uint64_t round) {
  for (auto& c : clocks_) {
    c.time = std::max(c.time, seconds);
    c.round = std::max(c.round, round);
  }
}

double Network::Now() const {
  double t = 0.0;
  for (const auto& c : clocks_) t = std::max(t, c.time);
  return t;
}

std::uint64_t Network::CriticalRounds() const {
  std::uint64_t r = 0;
  for (const auto& c : clocks_) r = std::max(r, c.round);
  return r;
}

CostStats Network::CollectStats() const {
  CostStats s = stats_;
  auto& ph = s.per_phase[static_cast<std::size_t>(phase_)];
  ph.seconds += Now() - segment_start_time_;
  ph.rounds += CriticalRounds() - segment_start_round_;
  s.seconds = Now();
  s.rounds = CriticalRounds();
  return s;
}

}  // namespace shapmkt
