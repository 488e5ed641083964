#pragma once

// Increments of the cylindrical Wiener process on a periodic lattice.
//
// A field ΔW_n(x) is the increment over [t_n, t_n+dt] tested against the
// normalized indicator of the cell at x. Its covariance is
//
//   E[ΔW(x) ΔW(y)] = dt · L^{-k} Σ_m μ̂_m cos(ξ_m·(x-y)),   μ̂_m = w_m / Δξ,
//
// where w_m = μ̂(ξ_m)·Δξ is the spectral weight of frequency cell m. Fields are
// synthesized as IFFT(g ⊙ FFT(z)) with real white z and g_m = sqrt(dt μ̂_m / h^k).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "spde/covariance.hpp"
#include "spde/errors.hpp"
#include "spde/fft.hpp"
#include "spde/grid.hpp"
#include "spde/stats.hpp"

namespace spde {

/// Spectral weight of every frequency cell, in FFT order.
///
/// Singular cells (ξ = 0 for Riesz, ξ_j = 0 for fractional) get the exact
/// integral of the density over the cell: per axis for fractional, and over
/// the ball of equal volume for Riesz (exact when k = 1).
inline std::vector<double> spectral_weights(const SpatialGrid& grid, const CovarianceModel& model) {
  if (grid.dim() != model.dim())
    throw ShapeError("grid dimension " + std::to_string(grid.dim()) +
                     " does not match covariance dimension " + std::to_string(model.dim()));
  const std::size_t size = grid.size();
  const double cell = grid.frequency_cell();
  const int k = grid.dim();
  std::vector<double> w(size);

  if (model.kind() == CovarianceKind::White) {
    std::fill(w.begin(), w.end(), cell);
    return w;
  }

  const double pi = std::numbers::pi;
  const double half = pi / grid.length();  // half-width of a frequency cell
  const double side = 2.0 * half;

  for (std::size_t m = 0; m < size; ++m) {
    const auto xi = grid.frequency(m);
    const std::span<const double> xs(xi.data(), static_cast<std::size_t>(k));
    double v = 0.0;
    switch (model.kind()) {
      case CovarianceKind::Riesz:
        if (m == 0) {
          const double rc = std::pow(cell / detail::ball_volume(k), 1.0 / k);
          v = detail::sphere_area(k) * std::pow(rc, model.beta()) / model.beta();
        } else {
          v = spectral_density(model, xs) * cell;
        }
        break;
      case CovarianceKind::Fractional: {
        v = 1.0;
        for (int d = 0; d < k; ++d) {
          const double a = 1.0 - 2.0 * model.hurst()[d];
          if (xi[d] == 0.0)
            v *= 2.0 * std::pow(half, a + 1.0) / (a + 1.0);
          else
            v *= std::pow(std::abs(xi[d]), a) * side;
        }
        break;
      }
      default:
        v = spectral_density(model, xs) * cell;
        break;
    }
    if (!(v >= 0.0) || !std::isfinite(v))
      throw NumericalError("spectral weight at frequency index " + std::to_string(m) +
                           " is negative or not finite");
    w[m] = v;
  }
  return w;
}

/// One noise increment on the lattice.
struct NoiseIncrementField {
  SpatialGrid grid;
  double dt = 0.0;
  std::vector<double> values;
};

/// Reusable sampler for one (grid, model, dt).
class NoiseSampler {
 public:
  NoiseSampler(const SpatialGrid& grid, const CovarianceModel& model, double dt)
      : grid_(grid), model_(model), dt_(dt), plan_(fft_plan_for(grid)) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ParameterDomainError("dt must be positive");
    white_ = model.kind() == CovarianceKind::White;
    weights_ = spectral_weights(grid, model);
    const double scale = dt / (grid.frequency_cell() * grid.cell_volume());
    gain_.resize(weights_.size());
    for (std::size_t m = 0; m < weights_.size(); ++m) gain_[m] = std::sqrt(scale * weights_[m]);
    white_gain_ = std::sqrt(dt / grid.cell_volume());
  }

  const SpatialGrid& grid() const noexcept { return grid_; }
  const CovarianceModel& model() const noexcept { return model_; }
  double dt() const noexcept { return dt_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Fourier-side gain g_m (the square root of dt μ̂_m / h^k).
  const std::vector<double>& gains() const noexcept { return gain_; }

  /// Draw one field into `out`; `work` is resized as needed.
  void sample(Rng& rng, std::span<double> out, std::vector<Complex>& work) const {
    require_same_size(grid_.size(), out.size(), "noise field");
    fill_standard_normal(rng, out);
    if (white_) {
      for (double& v : out) v *= white_gain_;
      return;
    }
    work.resize(grid_.size());
    plan_->forward_real(out, work);
    for (std::size_t m = 0; m < work.size(); ++m) work[m] *= gain_[m];
    plan_->inverse_real(work, out);
  }

  NoiseIncrementField sample(Rng& rng) const {
    NoiseIncrementField f{grid_, dt_, std::vector<double>(grid_.size())};
    std::vector<Complex> work;
    sample(rng, f.values, work);
    return f;
  }

 private:
  SpatialGrid grid_;
  CovarianceModel model_;
  double dt_;
  std::shared_ptr<const FftPlan> plan_;
  bool white_ = false;
  std::vector<double> weights_;
  std::vector<double> gain_;
  double white_gain_ = 0.0;
};

inline NoiseIncrementField sample_increment(const SpatialGrid& grid, const CovarianceModel& model,
                                            double dt, Rng& rng) {
  return NoiseSampler(grid, model, dt).sample(rng);
}

/// Covariance of the lattice noise at a lattice lag, dt · L^{-k} Σ_m μ̂_m cos(ξ_m·lag).
inline double periodized_covariance(const SpatialGrid& grid, const CovarianceModel& model, double dt,
                                    const LatticeIndex& lag) {
  const auto w = spectral_weights(grid, model);
  const double h = grid.spacing();
  long double sum = 0.0L;
  for (std::size_t m = 0; m < w.size(); ++m) {
    const auto xi = grid.frequency(m);
    double phase = 0.0;
    for (int d = 0; d < grid.dim(); ++d) phase += xi[d] * static_cast<double>(lag[d]) * h;
    sum += static_cast<long double>(w[m]) * std::cos(phase);
  }
  return dt * static_cast<double>(sum) / (grid.frequency_cell() * grid.box_volume());
}

/// Spatially averaged product ΔW(x)ΔW(x+lag) of one field (mean is known to be 0).
inline double lag_product_average(const SpatialGrid& grid, std::span<const double> v,
                                  const LatticeIndex& lag) {
  require_same_size(grid.size(), v.size(), "noise field");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto idx = grid.unravel(i);
    for (int d = 0; d < grid.dim(); ++d) idx[d] += lag[d];
    acc += static_cast<long double>(v[i]) * v[grid.ravel(idx)];
  }
  return static_cast<double>(acc / static_cast<long double>(v.size()));
}

/// Unbiased covariance estimate at `lag` with its standard error. Each field
/// contributes one spatially averaged product; fields are independent.
inline Estimate empirical_covariance(std::span<const NoiseIncrementField> samples,
                                     const LatticeIndex& lag) {
  if (samples.size() < 2) throw ShapeError("empirical covariance needs at least two samples");
  const SpatialGrid& g = samples.front().grid;
  PowerSums s;
  for (const auto& f : samples) {
    if (!(f.grid == g)) throw ShapeError("samples live on different grids");
    s.add(lag_product_average(g, f.values, lag));
  }
  return {s.mean(), s.standard_error()};
}

struct IsometryResult {
  double mc_variance = 0.0;
  double mc_standard_error = 0.0;
  double analytic_variance = 0.0;
};

using SpaceTimeFunction = std::function<double(double t, std::span<const double> x)>;

/// Sample variance of I = Σ_n Σ_x H(t_n,x) ΔW_n(x) h^k against the lattice
/// Plancherel value Σ_n dt (2π)^{-k} Σ_m |Ĥ_n(ξ_m)|² w_m, Ĥ_n = Σ_x H e^{-iξx} h^k.
/// Sample s uses seed path_seed(seed, s).
inline IsometryResult isometry_check(const SpaceTimeFunction& integrand, const CovarianceModel& model,
                                     const SpatialGrid& grid, const TimeGrid& time,
                                     std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw ShapeError("isometry check needs at least two samples");
  const std::size_t steps = time.steps();
  const std::size_t size = grid.size();
  const double hk = grid.cell_volume();
  const double dt = time.dt();
  const int k = grid.dim();

  // H on the grid at the left endpoint of every step.
  std::vector<double> h(steps * size);
  for (std::size_t n = 0; n < steps; ++n)
    for (std::size_t i = 0; i < size; ++i) {
      const auto x = grid.position(i);
      const double v = integrand(time.time(n), std::span<const double>(x.data(), k));
      if (!std::isfinite(v)) throw ParameterDomainError("integrand is not finite on the grid");
      h[n * size + i] = v;
    }

  NoiseSampler sampler(grid, model, dt);
  const auto plan = fft_plan_for(grid);
  const auto& w = sampler.weights();
  long double analytic = 0.0L;
  std::vector<Complex> hat(size);
  for (std::size_t n = 0; n < steps; ++n) {
    plan->forward_real(std::span<const double>(h.data() + n * size, size), hat);
    long double s = 0.0L;
    for (std::size_t m = 0; m < size; ++m) s += std::norm(hat[m] * hk) * w[m];
    analytic += s;
  }
  const double analytic_variance =
      dt * static_cast<double>(analytic) / std::pow(2.0 * std::numbers::pi, k);

  PowerSums acc;
  std::vector<double> field(size);
  std::vector<Complex> work;
  for (std::size_t s = 0; s < n_samples; ++s) {
    Rng rng(path_seed(seed, s));
    long double integral = 0.0L;
    for (std::size_t n = 0; n < steps; ++n) {
      sampler.sample(rng, field, work);
      const double* hn = h.data() + n * size;
      for (std::size_t i = 0; i < size; ++i) integral += static_cast<long double>(hn[i]) * field[i];
    }
    acc.add(static_cast<double>(integral) * hk);
  }
  const double var = acc.variance();
  return {var, std::max(acc.variance_standard_error(), 0.0), analytic_variance};
}

// Binary dump: 32-byte little-endian header
//   bytes 0-7   magic "SPDENOIS"
//   bytes 8-11  u32 dimension k
//   bytes 12-15 u32 points per axis N
//   bytes 16-23 f64 dt
//   bytes 24-31 u64 number of frames
// followed by frames × N^k little-endian f64 values, frame-major.

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw ShapeError("truncated noise dump");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline constexpr char kDumpMagic[8] = {'S', 'P', 'D', 'E', 'N', 'O', 'I', 'S'};

}  // namespace detail

inline void write_noise_dump(const std::string& path, const SpatialGrid& grid, double dt,
                             std::span<const double> frames) {
  if (frames.size() % grid.size() != 0) throw ShapeError("dump data is not a whole number of frames");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(detail::kDumpMagic, 8);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.dim()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.points_per_axis()));
  detail::write_le<double>(os, dt);
  detail::write_le<std::uint64_t>(os, frames.size() / grid.size());
  for (double v : frames) detail::write_le<double>(os, v);
  if (!os) throw std::runtime_error("failed writing " + path);
}

struct NoiseDump {
  int dim = 0;
  std::size_t points_per_axis = 0;
  double dt = 0.0;
  std::uint64_t frames = 0;
  std::vector<double> values;
};

inline NoiseDump read_noise_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kDumpMagic, 8) != 0)
    throw ShapeError(path + " is not a noise dump");
  NoiseDump d;
  d.dim = static_cast<int>(detail::read_le<std::uint32_t>(is));
  d.points_per_axis = detail::read_le<std::uint32_t>(is);
  d.dt = detail::read_le<double>(is);
  d.frames = detail::read_le<std::uint64_t>(is);
  std::size_t per = 1;
  for (int i = 0; i < d.dim; ++i) per *= d.points_per_axis;
  d.values.resize(per * d.frames);
  for (double& v : d.values) v = detail::read_le<double>(is);
  return d;
}

}  // namespace spde
