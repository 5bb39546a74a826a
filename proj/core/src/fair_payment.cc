#include "shapmkt/fair_payment.h"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "shapmkt/error.h"

namespace shapmkt {

std::vector<std::uint8_t> EncryptData(const Key256& key, std::span<const std::uint8_t> data,
                                      const Block128& nonce) {
  return Aes256Ctr(key, nonce, data);
}

std::vector<std::uint8_t> DecryptData(const Key256& key, const Block128& nonce,
                                      std::span<const std::uint8_t> ciphertext) {
  return Aes256Ctr(key, nonce, ciphertext);
}

Digest256 HashKey(const Key256& key) { return Sha256(key); }

const char* TxStateName(TxState s) {
  switch (s) {
    case TxState::kOpen: return "open";
    case TxState::kRedeemed: return "redeemed";
    case TxState::kRefunded: return "refunded";
  }
  return "?";
}

void Ledger::Deposit(PartyId party, std::uint64_t amount) {
  balances_[party] += amount;
  log_.push_back({height_, 0, "deposit", amount, {}, {}});
}

std::uint64_t Ledger::SubmitHashlock(PartyId payer, PartyId payee, std::uint64_t amount,
                                     const Digest256& lock_hash, std::uint64_t deadline_height) {
  std::uint64_t& bal = balances_[payer];
  if (bal < amount) {
    throw Error(ErrorCode::kInsufficientFunds, "payer " + std::to_string(payer) + " has " +
                                                   std::to_string(bal) + ", needs " + std::to_string(amount));
  }
  bal -= amount;
  balances_.try_emplace(payee, 0);
  HashLockTx tx;
  tx.id = txs_.size() + 1;
  tx.payer = payer;
  tx.payee = payee;
  tx.amount = amount;
  tx.lock_hash = lock_hash;
  tx.deadline_height = deadline_height;
  txs_.push_back(tx);
  log_.push_back({height_, tx.id, "submit", amount, lock_hash, {}});
  return tx.id;
}

HashLockTx& Ledger::Find(std::uint64_t id) {
  if (id == 0 || id > txs_.size()) throw Error(ErrorCode::kUnknownTx, "unknown transaction " + std::to_string(id));
  return txs_[id - 1];
}

const HashLockTx& Ledger::tx(std::uint64_t id) const {
  return const_cast<Ledger*>(this)->Find(id);
}

bool Ledger::Redeem(std::uint64_t tx_id, std::span<const std::uint8_t> preimage) {
  HashLockTx& tx = Find(tx_id);
  if (tx.state != TxState::kOpen) {
    throw Error(ErrorCode::kAlreadySettled, "transaction " + std::to_string(tx_id) + " is already " +
                                                TxStateName(tx.state));
  }
  if (height_ > tx.deadline_height) {
    throw Error(ErrorCode::kDeadlinePassed, "transaction " + std::to_string(tx_id) + " expired at height " +
                                                std::to_string(tx.deadline_height));
  }
  if (Sha256(preimage) != tx.lock_hash) return false;
  tx.state = TxState::kRedeemed;
  tx.revealed_preimage.emplace(preimage.begin(), preimage.end());
  balances_[tx.payee] += tx.amount;
  log_.push_back({height_, tx.id, "redeem", tx.amount, tx.lock_hash, *tx.revealed_preimage});
  return true;
}

std::vector<std::uint64_t> Ledger::AdvanceAndRefund(std::uint64_t blocks) {
  if (blocks == 0) throw Error(ErrorCode::kParameter, "advance needs at least one block");
  height_ += blocks;
  std::vector<std::uint64_t> refunded;
  for (HashLockTx& tx : txs_) {
    if (tx.state == TxState::kOpen && tx.deadline_height < height_) {
      tx.state = TxState::kRefunded;
      balances_[tx.payer] += tx.amount;
      log_.push_back({height_, tx.id, "refund", tx.amount, tx.lock_hash, {}});
      refunded.push_back(tx.id);
    }
  }
  return refunded;
}

std::uint64_t Ledger::Balance(PartyId p) const {
  auto it = balances_.find(p);
  return it == balances_.end() ? 0 : it->second;
}

std::uint64_t Ledger::Escrowed() const {
  std::uint64_t s = 0;
  for (const auto& tx : txs_) {
    if (tx.state == TxState::kOpen) s += tx.amount;
  }
  return s;
}

std::uint64_t Ledger::TotalSupply() const {
  std::uint64_t s = Escrowed();
  for (const auto& [p, b] : balances_) s += b;
  return s;
}

void Ledger::WriteLog(std::ostream& os) const {
  os << "# height\ttx\tevent\tamount\thash\tpreimage\n";
  for (const auto& e : log_) {
    const bool has_hash = e.event != "deposit";
    os << e.height << '\t' << e.tx_id << '\t' << e.event << '\t' << e.amount << '\t'
       << (has_hash ? ToHex(e.hash) : "-") << '\t' << (e.preimage.empty() ? "-" : ToHex(e.preimage)) << '\n';
  }
}

std::vector<std::uint64_t> PriceOffers(std::uint64_t budget, std::span<const double> shapley) {
  double pos = 0.0;
  for (double v : shapley) pos += std::max(0.0, v);
  std::vector<std::uint64_t> out(shapley.size(), 0);
  if (pos <= 0.0) return out;
  for (std::size_t i = 0; i < shapley.size(); ++i) {
    const double a = std::round(static_cast<double>(budget) * shapley[i] / pos);
    out[i] = a > 0 ? static_cast<std::uint64_t>(a) : 0;
  }
  return out;
}

}  // namespace shapmkt
