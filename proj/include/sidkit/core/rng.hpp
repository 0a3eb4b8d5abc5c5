#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sidkit {

// Deterministic random stream. All draws are explicit functions of the
// mt19937_64 engine state (no library distributions, which may buffer),
// so serializing the engine captures the stream exactly. Named sub-streams
// keep consumers (data order, augmentation, init, ...) independent: adding
// draws to one stream never perturbs another.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : engine_(seed) {}

  static uint64_t derive(uint64_t seed, const std::string& role) {
    // FNV-1a over the role name, folded with the base seed
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : role) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
  }

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(engine_() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // fresh Box-Muller pair per call, second value discarded (stateless)
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

// Root of the RNG hierarchy: one named, independently seeded stream per
// consumer role.
class RngForest {
 public:
  explicit RngForest(uint64_t seed) : seed_(seed) {}
  RngStream stream(const std::string& role) const {
    return RngStream(RngStream::derive(seed_, role));
  }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

}  // namespace sidkit
