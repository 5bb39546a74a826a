#pragma once

// Two-party evaluation of Bristol circuits over XOR shares. AND gates use
// dealer-issued boolean Beaver triples; every other gate is local.

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "shapmkt/bristol.h"
#include "shapmkt/crypto.h"
#include "shapmkt/mpc_engine.h"
#include "shapmkt/transport.h"

namespace shapmkt {

// XOR sharing of `bits` bits for `instances` parallel evaluations, stored
// [bit][word] like Lanes. p0 belongs to the session's first party.
struct BitShares {
  std::size_t bits = 0;
  std::size_t instances = 1;
  Lanes p0, p1;

  std::size_t words() const { return WordsFor(instances); }
  // Reconstructed lanes, unused high lanes cleared.
  Lanes Reconstruct() const;
  // Single-instance bits (instance 0).
  std::vector<std::uint8_t> RevealBits() const;
};

// Shares of a single-instance bit string; the holder's share carries the
// plaintext masked by fresh randomness, the other share the mask.
BitShares ShareBits(std::span<const std::uint8_t> bits, Rng& rng);
// A public value: the first party holds it, the second holds zeros.
BitShares PublicBits(std::span<const std::uint8_t> bits, std::size_t instances = 1);
// Repeat a single-instance sharing across `instances` lanes.
BitShares Broadcast(const BitShares& s, std::size_t instances);

struct TwoPartyCost {
  std::uint64_t and_gates = 0;  // per instance
  std::uint64_t levels = 0;
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
};

// Expected wire bytes of Eval for `instances` parallel evaluations.
TwoPartyCost PredictEvalCost(const CircuitSchedule& s, const BristolCircuit& c, std::size_t instances);

// Refuses a second use of a nonce within one run.
class NonceRegistry {
 public:
  void Claim(const Block128& nonce);
  std::size_t size() const { return used_.size(); }

 private:
  std::set<Block128> used_;
};

class BooleanSession {
 public:
  BooleanSession(Network& net, Dealer& dealer, PartyId first, PartyId second);

  PartyId first() const { return first_; }
  PartyId second() const { return second_; }

  std::vector<BitShares> Eval(const BristolCircuit& c, std::span<const BitShares> inputs);
  std::vector<BitShares> Eval(const BristolCircuit& c, const CircuitSchedule& s,
                              std::span<const BitShares> inputs);

  // Both parties send their shares to `to`, which learns the plaintext lanes.
  Lanes Open(const BitShares& s, PartyId to);

  // AES-256-CTR keystream for blocks nonce+0 .. nonce+blocks-1, computed in
  // the circuit, XORed onto the data shares and opened to `to`. Data bits
  // beyond `blocks` whole blocks are not touched.
  std::vector<std::uint8_t> CtrEncrypt(const BitShares& key, const Block128& nonce,
                                       const BitShares& data, PartyId to, NonceRegistry& nonces);
  // SHA-256 of the 256-bit shared key (one padded block), opened to `to`.
  Digest256 Sha256Key(const BitShares& key, PartyId to);

  std::uint64_t and_gates_evaluated() const { return ands_; }

 private:
  Network& net_;
  Dealer& dealer_;
  PartyId first_, second_;
  std::uint64_t ands_ = 0;
};

}  // namespace shapmkt
