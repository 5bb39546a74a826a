#pragma once

// Simulated point-to-point network. Every inter-party message of the
// protocols goes through a Network, which charges latency and bandwidth and
// keeps per-phase and per-pair byte counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shapmkt {

using PartyId = int;

// The buyer is always party 0; data owners are 1..N.
inline constexpr PartyId kBuyer = 0;

enum class Phase : std::uint8_t { kSetup = 0, kTwoParty = 1, kMultiParty = 2 };
inline constexpr std::size_t kPhaseCount = 3;
const char* PhaseName(Phase p);

struct NetConfig {
  double latency_ms = 20.0;
  double bandwidth_bps = 100e6;

  static NetConfig Domestic() { return {20.0, 100e6}; }
  static NetConfig CrossBorder() { return {120.0, 100e6}; }
  static NetConfig FromName(const std::string& name);

  void Validate() const;
};

inline constexpr std::uint64_t kFrameBytes = 8;

struct Message {
  PartyId from = 0;
  PartyId to = 0;
  std::uint64_t payload_bytes = 0;
};

struct Receipt {
  std::uint64_t id = 0;
  PartyId from = 0;
  PartyId to = 0;
  std::uint64_t wire_bytes = 0;  // payload plus framing
  std::uint64_t round = 0;
  double depart_s = 0.0;
  double arrive_s = 0.0;
};

struct PhaseTotals {
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
  std::uint64_t rounds = 0;
  double seconds = 0.0;
};

struct CostStats {
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
  std::uint64_t rounds = 0;
  double seconds = 0.0;
  std::map<std::pair<PartyId, PartyId>, std::uint64_t> bytes_per_pair;
  std::array<PhaseTotals, kPhaseCount> per_phase{};

  const PhaseTotals& phase(Phase p) const { return per_phase[static_cast<std::size_t>(p)]; }

  // Combine two runs that happened concurrently: bytes add, time and rounds
  // take the longer critical path.
  void MergeParallel(const CostStats& other);
  // Combine two runs that happened one after the other.
  void MergeSequential(const CostStats& other);

  // Line-delimited report, same column layout as the engine transcript.
  void WriteReport(std::ostream& os) const;
};

class Network {
 public:
  Network(NetConfig cfg, std::vector<PartyId> parties);

  const NetConfig& config() const { return cfg_; }
  bool HasParty(PartyId p) const;
  const std::vector<PartyId>& parties() const { return parties_; }

  // Deliver one message. A message departs once its sender has caught up
  // with everything it has received and every explicit dependency arrived.
  Receipt RouteMessage(PartyId from, PartyId to, std::uint64_t payload_bytes,
                       std::span<const Receipt> depends_on = {});
  Receipt RouteMessage(PartyId from, PartyId to, std::span<const std::uint8_t> payload,
                       std::span<const Receipt> depends_on = {});

  // Deliver a batch of mutually independent messages: departures are
  // computed from the clocks before any message in the batch lands.
  std::vector<Receipt> RouteBatch(std::span<const Message> batch);

  void SetPhase(Phase p);
  Phase phase() const { return phase_; }

  // Move every party clock forward to at least `seconds` / `round`.
  void SyncTo(double seconds, std::uint64_t round);

  double Now() const;                 // critical-path simulated time
  std::uint64_t CriticalRounds() const;

  CostStats CollectStats() const;
  std::uint64_t total_bytes() const { return stats_.bytes; }
  std::uint64_t total_messages() const { return stats_.messages; }

 private:
  struct PartyClock {
    double time = 0.0;
    std::uint64_t round = 0;
  };

  std::size_t Index(PartyId p) const;
  void CloseSegment();

  NetConfig cfg_;
  std::vector<PartyId> parties_;
  std::vector<PartyClock> clocks_;
  std::map<std::pair<PartyId, PartyId>, double> link_free_;
  Phase phase_ = Phase::kSetup;
  std::uint64_t next_id_ = 1;

  CostStats stats_;
  double segment_start_time_ = 0.0;
  std::uint64_t segment_start_round_ = 0;
};

}  // namespace shapmkt
