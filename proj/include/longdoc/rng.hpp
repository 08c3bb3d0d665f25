#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace longdoc {

// Deterministic random source. All randomness in the project flows through
// one of these; distributions are hand-rolled on top of the raw engine so the
// serialized engine state is the complete RNG state (std::*_distribution
// objects carry hidden caches that would break checkpoint resume).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Box-Muller without the usual cached spare, so the state is just the engine.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double z = r * std::cos(6.283185307179586476925286766559 * u2);
    return mean + stddev * z;
  }

  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  std::int64_t randint(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<std::int64_t>(eng_());  // full range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return lo + static_cast<std::int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace longdoc
