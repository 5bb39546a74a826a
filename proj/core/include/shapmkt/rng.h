#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shapmkt {

// Seeded, splittable generator. Child streams are derived from the parent
// seed and a label, so adding a consumer never perturbs sibling streams.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(Mix(seed)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t seed() const { return seed_; }

  Rng Split(std::uint64_t stream) const {
    return Rng(Mix(seed_ ^ Mix(stream + 0x9e3779b97f4a7c15ULL)));
  }
  Rng Split(std::string_view label) const { return Split(Hash(label)); }

  double Uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double Normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Uniform integer in [lo, hi].
  std::uint64_t UniformInt(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(engine_);
  }

  static std::uint64_t Mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t Hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace shapmkt
