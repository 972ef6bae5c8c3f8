#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "g2p/errors.hpp"

namespace g2p {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// One deterministic random stream. Draws go through hand-rolled helpers,
// never through std distributions, so replays are identical across
// standard-library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t next() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) fail(ErrorKind::contract, "RngStream::below: n must be > 0");
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (!is) fail(ErrorKind::contract, "RngStream: bad serialized state");
  }

 private:
  std::mt19937_64 eng_;
};

// All randomness in a run flows from one root seed, fanned out by named
// purpose (init / shuffle / dropout / sampling / tie-break) and an optional
// index (e.g. epoch number) so components draw from independent streams.
inline RngStream derive_stream(std::uint64_t root_seed, std::string_view purpose,
                               std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(root_seed) ^ fnv1a(purpose);
  return RngStream(splitmix64(h + 0x9e3779b97f4a7c15ull * (index + 1)));
}

}  // namespace g2p
