#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tibp {

// Seeded 64-bit Mersenne Twister. Distribution objects are constructed per
// draw so the engine state alone captures the stream position, which keeps
// checkpointed chains resumable bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  // shape / rate parameterization
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }
  double inverse_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<int>(mean)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  // Textual engine state (the standard's operator<< format).
  std::string save_state() const;
  void load_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tibp
