#pragma once

// Simulated ledger with hash-locked, time-locked payments, plus the buyer's
// pricing rule and the reference encryption of sold data.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <span>
#include <vector>

#include "shapmkt/crypto.h"
#include "shapmkt/transport.h"

namespace shapmkt {

std::vector<std::uint8_t> EncryptData(const Key256& key, std::span<const std::uint8_t> data,
                                      const Block128& nonce);
std::vector<std::uint8_t> DecryptData(const Key256& key, const Block128& nonce,
                                      std::span<const std::uint8_t> ciphertext);
Digest256 HashKey(const Key256& key);

enum class TxState { kOpen, kRedeemed, kRefunded };
const char* TxStateName(TxState s);

struct HashLockTx {
  std::uint64_t id = 0;
  PartyId payer = 0;
  PartyId payee = 0;
  std::uint64_t amount = 0;
  Digest256 lock_hash{};
  std::uint64_t deadline_height = 0;  // inclusive
  TxState state = TxState::kOpen;
  std::optional<std::vector<std::uint8_t>> revealed_preimage;
};

struct LedgerEvent {
  std::uint64_t height = 0;
  std::uint64_t tx_id = 0;  // 0 for deposits
  std::string event;        // deposit | submit | redeem | refund
  std::uint64_t amount = 0;
  Digest256 hash{};
  std::vector<std::uint8_t> preimage;
};

class Ledger {
 public:
  void Deposit(PartyId party, std::uint64_t amount);

  std::uint64_t SubmitHashlock(PartyId payer, PartyId payee, std::uint64_t amount,
                               const Digest256& lock_hash, std::uint64_t deadline_height);
  // True on a matching preimage; false (state unchanged) on a mismatch.
  bool Redeem(std::uint64_t tx_id, std::span<const std::uint8_t> preimage);
  std::vector<std::uint64_t> AdvanceAndRefund(std::uint64_t blocks);

  std::uint64_t height() const { return height_; }
  std::uint64_t Balance(PartyId p) const;
  std::uint64_t Escrowed() const;
  std::uint64_t TotalSupply() const;  // balances plus escrow
  const HashLockTx& tx(std::uint64_t id) const;
  const std::vector<HashLockTx>& txs() const { return txs_; }
  const std::vector<LedgerEvent>& log() const { return log_; }

  // One line per event: height, tx id, event, amount, hash hex, preimage hex.
  void WriteLog(std::ostream& os) const;

 private:
  HashLockTx& Find(std::uint64_t id);

  std::uint64_t height_ = 0;
  std::map<PartyId, std::uint64_t> balances_;
  std::vector<HashLockTx> txs_;
  std::vector<LedgerEvent> log_;
};

// amount_i = max(0, round(budget * sv_i / sum_j max(0, sv_j))).
std::vector<std::uint64_t> PriceOffers(std::uint64_t budget, std::span<const double> shapley);

}  // namespace shapmkt
