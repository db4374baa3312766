#pragma once

// Portable seeded randomness. Standard distributions are
// implementation-defined, so datasets and shuffles draw through these
// helpers to stay byte-identical across toolchains.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <random>
#include <vector>

namespace hmmt {

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive combination of seeds/tags into one 64-bit seed.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);
std::uint64_t hash_string(const std::string_view s);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, n).
  std::size_t index(std::size_t n);
  double normal();
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace hmmt
