#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace spde {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of path `index` under `master`:
///   splitmix64(master ^ splitmix64(index + 0x9e3779b97f4a7c15)).
/// Depends only on (master, index), never on scheduling.
constexpr std::uint64_t path_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(master ^ splitmix64(index + 0x9e3779b97f4a7c15ULL));
}

/// Count and power sums up to order 4; merging is plain addition, so a
/// reduction in a fixed order gives bit-identical results.
struct PowerSums {
  double n = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double s3 = 0.0;
  double s4 = 0.0;

  void add(double x) noexcept {
    const double x2 = x * x;
    n += 1.0;
    s1 += x;
    s2 += x2;
    s3 += x2 * x;
    s4 += x2 * x2;
  }

  PowerSums& merge(const PowerSums& o) noexcept {
    n += o.n;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
    return *this;
  }

  double mean() const noexcept { return s1 / n; }

  /// Unbiased sample variance.
  double variance() const noexcept {
    const double m = mean();
    return (s2 - n * m * m) / (n - 1.0);
  }

  double standard_error() const noexcept { return std::sqrt(variance() / n); }

  double central_moment(int order) const noexcept {
    const double m = mean();
    const double e1 = m, e2 = s2 / n, e3 = s3 / n, e4 = s4 / n;
    switch (order) {
      case 2: return e2 - e1 * e1;
      case 3: return e3 - 3 * e1 * e2 + 2 * e1 * e1 * e1;
      case 4: return e4 - 4 * e1 * e3 + 6 * e1 * e1 * e2 - 3 * e1 * e1 * e1 * e1;
      default: return 0.0;
    }
  }

  double skewness() const noexcept {
    return central_moment(3) / std::pow(central_moment(2), 1.5);
  }
  double excess_kurtosis() const noexcept {
    const double m2 = central_moment(2);
    return central_moment(4) / (m2 * m2) - 3.0;
  }

  /// Standard error of the (biased) sample variance, sqrt((m4 - m2²)/n).
  double variance_standard_error() const noexcept {
    const double m2 = central_moment(2);
    return std::sqrt(std::max(0.0, central_moment(4) - m2 * m2) / n);
  }
};

/// Mean and standard error of a list of independent replicates.
struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
};

inline Estimate mean_estimate(std::span<const double> xs) {
  PowerSums s;
  for (double x : xs) s.add(x);
  return {s.mean(), xs.size() > 1 ? s.standard_error() : 0.0};
}

/// Fill `out` with independent N(0,1) draws.
inline void fill_standard_normal(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& v : out) v = g(rng);
}

}  // namespace spde
