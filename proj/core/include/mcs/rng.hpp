#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mcs {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable sub-seed derivation: one root seed fans out into independent,
// reproducible streams keyed by a label and up to two indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return splitmix64(splitmix64(splitmix64(root ^ h) + a) + b);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() {  // (0, 1)
    double u;
    do {
      u = std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    } while (u <= 0.0);
    return u;
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  double gumbel() { return -std::log(-std::log(uniform())); }

  // Uniform integer in [0, n)
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mcs
