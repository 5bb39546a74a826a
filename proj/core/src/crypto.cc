#include "shapmkt/crypto.h"

#include <openssl/evp.h>
#include <zlib.h>

#include <memory>
#include <string>

#include "shapmkt/error.h"

namespace shapmkt {
namespace {

struct CtxFree {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CtxFree>;

std::vector<std::uint8_t> RunCipher(const EVP_CIPHER* cipher, const Key256& key,
                                    const std::uint8_t* iv, std::span<const std::uint8_t> data) {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), cipher, nullptr, key.data(), iv) != 1) {
    throw Error(ErrorCode::kParameter, "cipher initialisation failed");
  }
  EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
  std::vector<std::uint8_t> out(data.size() + 16);
  int len = 0, tail = 0;
  if (!data.empty() &&
      EVP_EncryptUpdate(ctx.get(), out.data(), &len, data.data(), static_cast<int>(data.size())) != 1) {
    throw Error(ErrorCode::kParameter, "cipher update failed");
  }
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &tail) != 1) {
    throw Error(ErrorCode::kParameter, "cipher finalisation failed");
  }
  out.resize(static_cast<std::size_t>(len + tail));
  return out;
}

}  // namespace

Digest256 Sha256(std::span<const std::uint8_t> data) {
  Digest256 d{};
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw Error(ErrorCode::kParameter, "sha256 failed");
  }
  return d;
}

Block128 Aes256EncryptBlock(const Key256& key, const Block128& block) {
  auto out = RunCipher(EVP_aes_256_ecb(), key, nullptr, block);
  Block128 b{};
  std::copy(out.begin(), out.begin() + 16, b.begin());
  return b;
}

std::vector<std::uint8_t> Aes256Ctr(const Key256& key, const Block128& nonce,
                                    std::span<const std::uint8_t> data) {
  if (data.empty()) return {};
  return RunCipher(EVP_aes_256_ctr(), key, nonce.data(), data);
}

Block128 CounterBlock(const Block128& nonce, std::uint64_t j) {
  Block128 b = nonce;
  unsigned carry = 0;
  for (int i = 15; i >= 0; --i) {
    const unsigned add = i >= 8 ? static_cast<unsigned>((j >> (8 * (15 - i))) & 0xFF) : 0;
    const unsigned s = b[i] + add + carry;
    b[i] = static_cast<std::uint8_t>(s & 0xFF);
    carry = s >> 8;
  }
  return b;
}

std::uint32_t Crc32(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string ToHex(std::span<const std::uint8_t> bytes) {
  static const char* kDigits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

std::vector<std::uint8_t> FromHex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::kFormat, "odd-length hex string");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::kFormat, std::string("bad hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

}  // namespace shapmkt
