#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "autornn/matrix.hpp"

namespace autornn {

// Deterministic generator: mt19937_64 with hand-rolled distributions so the
// stream is identical across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer uniform in [0, n), n >= 1. Rejection-free modulo is fine here;
  // n is always tiny compared to 2^64 so the bias is unobservable.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    return static_cast<int>(engine_() % static_cast<uint64_t>(n));
  }

  // Box-Muller, one value per call (the twin is cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Index draw from unnormalized nonnegative weights.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("categorical: bad weight");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("categorical: all-zero weights");
    double u = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  Matrix uniform_matrix(int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = uniform(lo, hi);
    return m;
  }

  Matrix normal_matrix(int rows, int cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = stddev * normal();
    return m;
  }

  // Fisher-Yates, uses this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace autornn
