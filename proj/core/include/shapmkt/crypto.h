#pragma once

// Reference AES-256 and SHA-256 (OpenSSL) used for plaintext encryption and
// as the independent oracle for the in-circuit versions.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shapmkt {

using Key256 = std::array<std::uint8_t, 32>;
using Block128 = std::array<std::uint8_t, 16>;
using Digest256 = std::array<std::uint8_t, 32>;

Digest256 Sha256(std::span<const std::uint8_t> data);
Block128 Aes256EncryptBlock(const Key256& key, const Block128& block);
// AES-256-CTR with the 128-bit big-endian counter block starting at `nonce`.
std::vector<std::uint8_t> Aes256Ctr(const Key256& key, const Block128& nonce,
                                    std::span<const std::uint8_t> data);
// nonce + j as a 128-bit big-endian integer.
Block128 CounterBlock(const Block128& nonce, std::uint64_t j);

std::uint32_t Crc32(std::span<const std::uint8_t> data);

std::string ToHex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> FromHex(const std::string& hex);

}  // namespace shapmkt
