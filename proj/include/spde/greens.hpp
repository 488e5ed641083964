#pragma once

// Discrete fundamental solution of
//
//   L u = ∂_t u - Σ a_ij ∂_ij u + Σ b_i ∂_i u + c u
//
// on the periodic lattice. Constant coefficients use exact Fourier
// multipliers exp(-λ(ξ) τ), λ(ξ) = ξᵀaξ + i b·ξ + c; variable coefficients use
// Crank–Nicolson steps with centered differences (cross stencils for a_ij,
// i ≠ j), coefficients frozen at the mid-step time.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spde/errors.hpp"
#include "spde/fft.hpp"
#include "spde/grid.hpp"

namespace spde {

using FieldCoefficient = std::function<double(double t, std::span<const double> x)>;
using Matrix3 = std::array<std::array<double, kMaxDim>, kMaxDim>;
using Vector3 = std::array<double, kMaxDim>;

/// Coefficients of the parabolic operator and its ellipticity constant ρ.
struct OperatorSpec {
  int dim = 1;
  std::array<std::array<FieldCoefficient, kMaxDim>, kMaxDim> a;
  std::array<FieldCoefficient, kMaxDim> b;
  FieldCoefficient c;
  double rho = 1.0;
  bool constant_coefficients = false;
  bool time_homogeneous = false;
  // Valid when constant_coefficients is set.
  Matrix3 a0{};
  Vector3 b0{};
  double c0 = 0.0;
  std::string label = "operator";

  static OperatorSpec constant(int dim, const Matrix3& a, const Vector3& b = {}, double c = 0.0) {
    if (dim < 1 || dim > kMaxDim) throw ParameterDomainError("operator dimension must be 1, 2 or 3");
    OperatorSpec op;
    op.dim = dim;
    op.constant_coefficients = true;
    op.time_homogeneous = true;
    op.a0 = a;
    op.b0 = b;
    op.c0 = c;
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        const double v = a[i][j];
        op.a[i][j] = [v](double, std::span<const double>) { return v; };
      }
      const double bi = b[i];
      op.b[i] = [bi](double, std::span<const double>) { return bi; };
    }
    op.c = [c](double, std::span<const double>) { return c; };
    // Smallest eigenvalue of the symmetric matrix as ρ.
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = 0.5 * (a[i][j] + a[j][i]);
    op.rho = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff();
    if (!(op.rho > 0.0)) throw ParameterDomainError("constant diffusion matrix is not positive definite");
    op.label = "constant";
    return op;
  }

  static OperatorSpec laplacian(int dim, double diffusivity = 1.0, double c = 0.0) {
    Matrix3 a{};
    for (int i = 0; i < dim; ++i) a[i][i] = diffusivity;
    auto op = constant(dim, a, {}, c);
    op.label = "laplacian";
    return op;
  }

  /// Isotropic variable diffusion a_ij = a(t,x) δ_ij with optional drift and
  /// zeroth-order terms.
  static OperatorSpec isotropic(int dim, FieldCoefficient diffusion, double rho,
                                bool time_homogeneous,
                                std::array<FieldCoefficient, kMaxDim> drift = {},
                                FieldCoefficient potential = {}) {
    if (dim < 1 || dim > kMaxDim) throw ParameterDomainError("operator dimension must be 1, 2 or 3");
    OperatorSpec op;
    op.dim = dim;
    op.rho = rho;
    op.time_homogeneous = time_homogeneous;
    auto zero = [](double, std::span<const double>) { return 0.0; };
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) op.a[i][j] = i == j ? diffusion : FieldCoefficient(zero);
      op.b[i] = drift[i] ? drift[i] : FieldCoefficient(zero);
    }
    op.c = potential ? potential : FieldCoefficient(zero);
    op.label = "variable";
    return op;
  }

  /// Spot-check symmetry and Σ a_ij y_i y_j ≥ ρ|y|² at random (t, x, y).
  void validate(double horizon, double box_length, std::uint64_t seed = 0x5eed,
                int samples = 256) const {
    if (!(rho > 0.0)) throw ParameterDomainError("ellipticity constant ρ must be positive");
    for (int i = 0; i < dim; ++i) {
      if (!b[i]) throw ParameterDomainError("missing drift coefficient");
      for (int j = 0; j < dim; ++j)
        if (!a[i][j]) throw ParameterDomainError("missing diffusion coefficient");
    }
    if (!c) throw ParameterDomainError("missing zeroth-order coefficient");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ut(0.0, horizon), ux(0.0, box_length), uy(-1.0, 1.0);
    for (int s = 0; s < samples; ++s) {
      const double t = ut(rng);
      double x[kMaxDim], y[kMaxDim];
      for (int d = 0; d < dim; ++d) {
        x[d] = ux(rng);
        y[d] = uy(rng);
      }
      const std::span<const double> xs(x, static_cast<std::size_t>(dim));
      double q = 0.0, y2 = 0.0;
      for (int i = 0; i < dim; ++i) {
        y2 += y[i] * y[i];
        for (int j = 0; j < dim; ++j) {
          const double aij = a[i][j](t, xs);
          if (j > i && std::abs(aij - a[j][i](t, xs)) > 1e-12 * std::max(1.0, std::abs(aij)))
            throw ParameterDomainError("diffusion matrix is not symmetric");
          q += aij * y[i] * y[j];
        }
      }
      if (q < rho * y2 * (1.0 - 1e-12))
        throw ParameterDomainError("uniform ellipticity fails: Σ a_ij y_i y_j < ρ|y|²");
    }
  }
};

/// (4π a t)^{-k/2} exp(-|x|²/(4 a t)).
inline double heat_kernel_eval(double t, std::span<const double> x, double diffusivity = 1.0) {
  if (!(t > 0.0)) throw ParameterDomainError("heat kernel needs t > 0");
  if (!(diffusivity > 0.0)) throw ParameterDomainError("diffusivity must be positive");
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  const double k = static_cast<double>(x.size());
  return std::pow(4.0 * std::numbers::pi * diffusivity * t, -0.5 * k) *
         std::exp(-r2 / (4.0 * diffusivity * t));
}

inline double heat_kernel_eval(double t, std::initializer_list<double> x, double diffusivity = 1.0) {
  return heat_kernel_eval(t, std::span<const double>(x.begin(), x.size()), diffusivity);
}

enum class PropagatorKind { SpectralMultiplier, StepOperator };

struct PropagatorOptions {
  /// Enforce dt ≤ h.
  bool enforce_step_budget = true;
  /// Dense step matrices up to this many grid points (time-homogeneous operators).
  std::size_t dense_limit = 4096;
  /// Testing aid: multi-step spectral propagators use time (ℓ dt)(1 + defect)
  /// for ℓ ≥ 2, which breaks the semigroup property by a controlled amount.
  double semigroup_defect = 0.0;
};

/// Per-step discrete propagators Γ(t_{j+1}; t_j) on a grid; immutable.
class PropagatorSet {
 public:
  PropagatorSet(const OperatorSpec& op, const SpatialGrid& grid, const TimeGrid& time,
                const PropagatorOptions& options = {})
      : op_(op), grid_(grid), time_(time), options_(options), plan_(fft_plan_for(grid)) {
    if (op.dim != grid.dim()) throw ShapeError("operator and grid dimensions differ");
    if (options.enforce_step_budget && time.dt() > grid.spacing() * (1.0 + 1e-12))
      throw ParameterDomainError("time step " + std::to_string(time.dt()) +
                                 " exceeds the step budget dt <= h = " +
                                 std::to_string(grid.spacing()));
    op.validate(time.horizon(), grid.length());
    if (op.constant_coefficients) {
      kind_ = PropagatorKind::SpectralMultiplier;
      build_spectral();
    } else {
      kind_ = PropagatorKind::StepOperator;
      build_crank_nicolson();
    }
  }

  PropagatorKind kind() const noexcept { return kind_; }
  const SpatialGrid& grid() const noexcept { return grid_; }
  const TimeGrid& time() const noexcept { return time_; }
  const OperatorSpec& op() const noexcept { return op_; }
  const PropagatorOptions& options() const noexcept { return options_; }
  const std::shared_ptr<const FftPlan>& plan() const noexcept { return plan_; }

  /// λ(ξ_m) in FFT order (spectral representation only).
  std::span<const Complex> symbol() const {
    require_spectral("symbol");
    return symbol_;
  }

  /// exp(-λ(ξ_m) ℓ dt) in FFT order (with the configured semigroup defect).
  std::vector<Complex> multiplier(std::size_t lag) const {
    require_spectral("multiplier");
    std::vector<Complex> e(symbol_.size());
    double tau = static_cast<double>(lag) * time_.dt();
    if (lag >= 2) tau *= 1.0 + options_.semigroup_defect;
    for (std::size_t m = 0; m < e.size(); ++m) e[m] = std::exp(-symbol_[m] * tau);
    return e;
  }

  /// Per-mode filter that injects a noise increment over one step with the
  /// exact variance of ∫_0^dt e^{-λ s} dW(s):
  /// e^{-i Im λ dt} · sqrt((1 - e^{-2κ}) / (2κ)), κ = Re λ dt.
  std::vector<Complex> noise_injection_filter() const {
    require_spectral("noise injection filter");
    const double dt = time_.dt();
    std::vector<Complex> k(symbol_.size());
    for (std::size_t m = 0; m < k.size(); ++m) {
      const double kappa = symbol_[m].real() * dt;
      const double gain = kappa == 0.0 ? 1.0 : std::sqrt(-std::expm1(-2.0 * kappa) / (2.0 * kappa));
      k[m] = std::polar(gain, -symbol_[m].imag() * dt);
    }
    return k;
  }

  /// out = Γ(t_{j+1}; t_j) in. `in` and `out` may alias.
  void step(std::size_t j, std::span<const double> in, std::span<double> out) const {
    require_same_size(grid_.size(), in.size(), "propagator input");
    require_same_size(grid_.size(), out.size(), "propagator output");
    if (j >= time_.steps()) throw ShapeError("step index out of range");
    if (kind_ == PropagatorKind::SpectralMultiplier) {
      apply_spectral(step_multiplier_, in, out);
      return;
    }
    cn_step(j, in, out);
  }

  /// out = Γ(t_to; t_from) in, from ≤ to. `in` and `out` may alias.
  void propagate(std::size_t from, std::size_t to, std::span<const double> in,
                 std::span<double> out) const {
    require_same_size(grid_.size(), in.size(), "propagator input");
    require_same_size(grid_.size(), out.size(), "propagator output");
    if (from > to || to > time_.steps()) throw ShapeError("invalid propagation interval");
    if (from == to) {
      if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
      return;
    }
    if (kind_ == PropagatorKind::SpectralMultiplier) {
      if (to - from == 1)
        apply_spectral(step_multiplier_, in, out);
      else
        apply_spectral(multiplier(to - from), in, out);
      return;
    }
    std::vector<double> tmp(in.begin(), in.end());
    for (std::size_t j = from; j < to; ++j) cn_step(j, tmp, tmp);
    std::copy(tmp.begin(), tmp.end(), out.begin());
  }

  /// Dense matrix of one step (columns are delta responses of unit value).
  Eigen::MatrixXd dense_step_matrix(std::size_t j = 0) const {
    const std::size_t n = grid_.size();
    if (n > 4096) throw ShapeError("dense step matrix requested for more than 4096 points");
    if (dense_) return *dense_;
    Eigen::MatrixXd m(n, n);
    std::vector<double> e(n), col(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(e.begin(), e.end(), 0.0);
      e[i] = 1.0;
      step(j, e, col);
      for (std::size_t r = 0; r < n; ++r) m(r, i) = col[r];
    }
    return m;
  }

 private:
  void require_spectral(const char* what) const {
    if (kind_ != PropagatorKind::SpectralMultiplier)
      throw ShapeError(std::string(what) + " is only defined for constant coefficients");
  }

  void build_spectral() {
    const std::size_t n = grid_.size();
    symbol_.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
      const auto xi = grid_.frequency(m);
      double q = 0.0, drift = 0.0;
      for (int i = 0; i < grid_.dim(); ++i) {
        drift += op_.b0[i] * xi[i];
        for (int j = 0; j < grid_.dim(); ++j) q += op_.a0[i][j] * xi[i] * xi[j];
      }
      symbol_[m] = Complex(q + op_.c0, drift);
    }
    step_multiplier_ = multiplier(1);
  }

  void apply_spectral(const std::vector<Complex>& mult, std::span<const double> in,
                      std::span<double> out) const {
    std::vector<Complex> work(grid_.size());
    plan_->forward_real(in, work);
    for (std::size_t m = 0; m < work.size(); ++m) work[m] *= mult[m];
    plan_->inverse_real(work, out);
  }

  struct CnStep {
    Eigen::SparseMatrix<double> explicit_part;  // I + dt/2 A
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> implicit_part;  // I - dt/2 A
    std::shared_ptr<std::mutex> guard;
  };

  /// Generator A(t) = Σ a_ij D_ij - Σ b_i D_i - c on the lattice.
  Eigen::SparseMatrix<double> generator(double t) const {
    const std::size_t n = grid_.size();
    const int k = grid_.dim();
    const double h = grid_.spacing();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(n * (1 + 2 * k + 4 * k * (k - 1) / 2));
    for (std::size_t p = 0; p < n; ++p) {
      const auto pos = grid_.position(p);
      const std::span<const double> xs(pos.data(), static_cast<std::size_t>(k));
      const auto idx = grid_.unravel(p);
      auto shifted = [&](int d1, int s1, int d2 = -1, int s2 = 0) {
        auto q = idx;
        q[d1] += s1;
        if (d2 >= 0) q[d2] += s2;
        return static_cast<int>(grid_.ravel(q));
      };
      const int row = static_cast<int>(p);
      double diag = -op_.c(t, xs);
      for (int i = 0; i < k; ++i) {
        const double aii = op_.a[i][i](t, xs) / (h * h);
        const double bi = op_.b[i](t, xs) / (2.0 * h);
        trip.emplace_back(row, shifted(i, +1), aii - bi);
        trip.emplace_back(row, shifted(i, -1), aii + bi);
        diag -= 2.0 * aii;
        for (int j = i + 1; j < k; ++j) {
          // a_ij ∂_ij + a_ji ∂_ji = 2 a_ij ∂_ij, cross stencil / (4h²).
          const double aij = 2.0 * op_.a[i][j](t, xs) / (4.0 * h * h);
          if (aij == 0.0) continue;
          trip.emplace_back(row, shifted(i, +1, j, +1), aij);
          trip.emplace_back(row, shifted(i, -1, j, -1), aij);
          trip.emplace_back(row, shifted(i, +1, j, -1), -aij);
          trip.emplace_back(row, shifted(i, -1, j, +1), -aij);
        }
      }
      trip.emplace_back(row, row, diag);
    }
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    a.setFromTriplets(trip.begin(), trip.end());  // duplicates are summed (N = 4 wraps)
    return a;
  }

  CnStep make_cn_step(double t_mid) const {
    const auto n = static_cast<Eigen::Index>(grid_.size());
    const double half_dt = 0.5 * time_.dt();
    Eigen::SparseMatrix<double> id(n, n);
    id.setIdentity();
    const Eigen::SparseMatrix<double> a = generator(t_mid);
    CnStep s;
    s.explicit_part = id + half_dt * a;
    Eigen::SparseMatrix<double> lhs = id - half_dt * a;
    lhs.makeCompressed();
    s.implicit_part = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    s.implicit_part->analyzePattern(lhs);
    s.implicit_part->factorize(lhs);
    if (s.implicit_part->info() != Eigen::Success)
      throw NumericalError("Crank–Nicolson factorization failed at t=" + std::to_string(t_mid));
    s.guard = std::make_shared<std::mutex>();
    return s;
  }

  void build_crank_nicolson() {
    const double dt = time_.dt();
    if (op_.time_homogeneous) {
      steps_.push_back(make_cn_step(0.5 * dt));
      if (grid_.size() <= options_.dense_limit) {
        const auto n = static_cast<Eigen::Index>(grid_.size());
        Eigen::MatrixXd rhs = Eigen::MatrixXd(steps_[0].explicit_part);
        Eigen::MatrixXd m(n, n);
        for (Eigen::Index c = 0; c < n; ++c) {
          Eigen::VectorXd col = rhs.col(c);
          m.col(c) = steps_[0].implicit_part->solve(col);
        }
        dense_ = std::make_shared<const Eigen::MatrixXd>(std::move(m));
      }
    } else {
      steps_.reserve(time_.steps());
      for (std::size_t j = 0; j < time_.steps(); ++j)
        steps_.push_back(make_cn_step(time_.time(j) + 0.5 * dt));
    }
  }

  void cn_step(std::size_t j, std::span<const double> in, std::span<double> out) const {
    const auto n = static_cast<Eigen::Index>(grid_.size());
    Eigen::Map<const Eigen::VectorXd> x(in.data(), n);
    if (dense_) {
      Eigen::VectorXd y = (*dense_) * x;
      std::copy(y.data(), y.data() + n, out.begin());
      return;
    }
    const CnStep& s = steps_[op_.time_homogeneous ? 0 : j];
    Eigen::VectorXd rhs = s.explicit_part * x;
    Eigen::VectorXd y;
    {
      std::lock_guard lock(*s.guard);
      y = s.implicit_part->solve(rhs);
    }
    std::copy(y.data(), y.data() + n, out.begin());
  }

  OperatorSpec op_;
  SpatialGrid grid_;
  TimeGrid time_;
  PropagatorOptions options_;
  std::shared_ptr<const FftPlan> plan_;
  PropagatorKind kind_ = PropagatorKind::SpectralMultiplier;
  std::vector<Complex> symbol_;
  std::vector<Complex> step_multiplier_;
  std::vector<CnStep> steps_;
  std::shared_ptr<const Eigen::MatrixXd> dense_;
};

inline PropagatorSet build_propagator(const OperatorSpec& op, const SpatialGrid& grid,
                                      const TimeGrid& time, const PropagatorOptions& options = {}) {
  return PropagatorSet(op, grid, time, options);
}

/// Sum of history terms Σ_l w_l Γ(t_i; t_l) S_l over sources S_l attached to
/// time levels. Spectral propagators keep the sources in Fourier space and use
/// the direct multi-step multipliers; step propagators use a Horner sweep.
class HistoryConvolver {
 public:
  explicit HistoryConvolver(const PropagatorSet& p) : p_(p), levels_(p.time().points()) {
    const std::size_t n = p.grid().size();
    present_.assign(levels_, false);
    if (p.kind() == PropagatorKind::SpectralMultiplier) {
      spectra_.assign(levels_ * n, Complex{});
      multipliers_.resize(levels_ * n);
      for (std::size_t l = 0; l < levels_; ++l) {
        const auto e = p.multiplier(l);
        std::copy(e.begin(), e.end(), multipliers_.begin() + static_cast<std::ptrdiff_t>(l * n));
      }
    } else {
      sources_.assign(levels_ * n, 0.0);
    }
  }

  const PropagatorSet& propagators() const noexcept { return p_; }

  void set_source(std::size_t level, std::span<const double> s) {
    const std::size_t n = p_.grid().size();
    require_same_size(n, s.size(), "history source");
    check_level(level);
    if (p_.kind() == PropagatorKind::SpectralMultiplier) {
      p_.plan()->forward_real(s, std::span<Complex>(spectra_.data() + level * n, n));
    } else {
      std::copy(s.begin(), s.end(), sources_.begin() + static_cast<std::ptrdiff_t>(level * n));
    }
    present_[level] = true;
  }

  /// Source given by its (unnormalized) forward transform; spectral only.
  void set_source_spectrum(std::size_t level, std::span<const Complex> s) {
    const std::size_t n = p_.grid().size();
    require_same_size(n, s.size(), "history source");
    check_level(level);
    if (p_.kind() != PropagatorKind::SpectralMultiplier)
      throw ShapeError("spectral sources need a spectral propagator");
    std::copy(s.begin(), s.end(), spectra_.begin() + static_cast<std::ptrdiff_t>(level * n));
    present_[level] = true;
  }

  /// out = Σ_{l=first}^{first+w.size()-1} w[l-first] Γ(t_i; t_l) S_l; missing sources are 0.
  void evaluate(std::size_t i, std::size_t first, std::span<const double> weights,
                std::span<double> out) const {
    const std::size_t n = p_.grid().size();
    require_same_size(n, out.size(), "history output");
    if (weights.empty()) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const std::size_t last = first + weights.size() - 1;
    if (last > i || i >= levels_) throw ShapeError("history window extends past the target time");

    if (p_.kind() == PropagatorKind::SpectralMultiplier) {
      std::vector<Complex> acc(n, Complex{});
      for (std::size_t l = first; l <= last; ++l) {
        const double w = weights[l - first];
        if (!present_[l] || w == 0.0) continue;
        const Complex* e = multipliers_.data() + (i - l) * n;
        const Complex* s = spectra_.data() + l * n;
        for (std::size_t m = 0; m < n; ++m) acc[m] += w * (e[m] * s[m]);
      }
      p_.plan()->inverse_real(acc, out);
      return;
    }

    std::vector<double> acc(n, 0.0);
    for (std::size_t l = first; l <= last; ++l) {
      if (l > first) p_.step(l - 1, acc, acc);
      const double w = weights[l - first];
      if (!present_[l] || w == 0.0) continue;
      const double* s = sources_.data() + l * n;
      for (std::size_t x = 0; x < n; ++x) acc[x] += w * s[x];
    }
    p_.propagate(last, i, acc, out);
  }

 private:
  void check_level(std::size_t level) const {
    if (level >= levels_) throw ShapeError("history level out of range");
  }

  const PropagatorSet& p_;
  std::size_t levels_;
  std::vector<bool> present_;
  std::vector<Complex> spectra_;
  std::vector<Complex> multipliers_;
  std::vector<double> sources_;
};

/// Lattice delta of unit mass (value h^{-k}) at `site`.
inline std::vector<double> unit_mass_delta(const SpatialGrid& grid, std::size_t site) {
  std::vector<double> d(grid.size(), 0.0);
  d.at(site) = 1.0 / grid.cell_volume();
  return d;
}

inline std::vector<double> delta_response(const PropagatorSet& p, std::size_t from, std::size_t to,
                                          std::size_t site) {
  auto d = unit_mass_delta(p.grid(), site);
  p.propagate(from, to, d, d);
  return d;
}

inline double lattice_mass(const SpatialGrid& grid, std::span<const double> v) {
  long double s = 0.0L;
  for (double x : v) s += x;
  return static_cast<double>(s) * grid.cell_volume();
}

/// Near-positivity slack: 1e-8 times the largest entry.
inline double negativity_slack(std::span<const double> v) {
  return 1e-8 * *std::max_element(v.begin(), v.end());
}

inline bool respects_near_positivity(std::span<const double> v) {
  const double slack = negativity_slack(v);
  return std::all_of(v.begin(), v.end(), [slack](double x) { return x >= -slack; });
}

/// Default probe sites: the origin plus two interior points.
inline std::vector<std::size_t> default_probe_sites(const SpatialGrid& grid) {
  return {0, grid.size() / 3, grid.size() / 2 + grid.size() / 7};
}

/// Spectral: max over unit-mass probes of ‖Γ(t_j;t_i)δ - Γ(t_j;t_r)Γ(t_r;t_i)δ‖_{L¹}.
/// Step operators compose exactly by construction, so the composed propagator
/// is compared with a half-step reference instead. Degenerate triples give 0.
inline double semigroup_residual(const PropagatorSet& p, std::size_t i, std::size_t r, std::size_t j,
                                 std::span<const std::size_t> probes = {}) {
  if (!(i <= r && r <= j) || j > p.time().steps()) throw ShapeError("need i <= r <= j within the time grid");
  if (i == r || r == j) return 0.0;
  std::vector<std::size_t> sites(probes.begin(), probes.end());
  if (sites.empty()) sites = default_probe_sites(p.grid());
  const SpatialGrid& g = p.grid();

  std::optional<PropagatorSet> reference;
  if (p.kind() == PropagatorKind::StepOperator) {
    PropagatorOptions o = p.options();
    reference.emplace(p.op(), g, TimeGrid(p.time().horizon(), 2 * p.time().steps()), o);
  }

  double worst = 0.0;
  for (std::size_t site : sites) {
    auto composed = unit_mass_delta(g, site);
    p.propagate(i, r, composed, composed);
    p.propagate(r, j, composed, composed);
    auto direct = unit_mass_delta(g, site);
    if (reference)
      reference->propagate(2 * i, 2 * j, direct, direct);
    else
      p.propagate(i, j, direct, direct);
    long double s = 0.0L;
    for (std::size_t x = 0; x < direct.size(); ++x) s += std::abs(direct[x] - composed[x]);
    worst = std::max(worst, static_cast<double>(s) * g.cell_volume());
  }
  return worst;
}

struct GaussianBoundOptions {
  double c = 0.0;  // 0: 1/(8Λ), Λ a Gershgorin bound on a over the grid and time levels
  /// Empty: ℓ0·{1,2,4,8,16} with ℓ0 the first lag where (π/h)² τ ≥ 36, so the
  /// lattice kernel is resolved and cutoff ringing is below the floor.
  std::vector<std::size_t> lags;
  std::vector<std::size_t> sites;  // default_probe_sites when empty
  std::size_t start = 0;           // source time index
  double margin = 1.05;            // multiplies the fitted C
  double floor = 1e-12;            // responses below floor·max are not compared
  double far_field_factor = 8.0;   // far field: |x| ≥ factor·sqrt(τ)
};

struct GaussianBoundReport {
  double c = 0.0;
  double fitted_C = 0.0;         // from the fit subset, with margin
  double max_ratio = 0.0;        // sup g/S over all probes (no margin)
  double far_field_max_ratio = 0.0;  // sup g/(C S) in the far field
  std::size_t probes = 0;
  std::size_t points_checked = 0;
  std::size_t violations = 0;    // points with g > C S over all probes
  double worst_violation = 0.0;  // max g/(C S) - 1 over violations
};

/// max over grid points and time levels of the largest Gershgorin row sum of a.
inline double diffusion_upper_bound(const PropagatorSet& p) {
  const SpatialGrid& g = p.grid();
  const int k = g.dim();
  const auto& op = p.op();
  const std::size_t levels = op.time_homogeneous ? 1 : p.time().points();
  double bound = 0.0;
  for (std::size_t i = 0; i < levels; ++i) {
    const double t = p.time().time(i);
    for (std::size_t x = 0; x < g.size(); ++x) {
      const auto pos = g.position(x);
      const std::span<const double> xs(pos.data(), static_cast<std::size_t>(k));
      for (int r = 0; r < k; ++r) {
        double row = 0.0;
        for (int c = 0; c < k; ++c) row += std::abs(op.a[r][c](t, xs));
        bound = std::max(bound, row);
      }
    }
  }
  return bound;
}

/// Fits the smallest C with Γ ≤ C (t-s)^{-k/2} exp(-c|x-y|²/(t-s)) on every
/// other (lag, site) probe and verifies it on all probes.
inline GaussianBoundReport gaussian_bound_check(const PropagatorSet& p,
                                                const GaussianBoundOptions& options = {}) {
  const SpatialGrid& g = p.grid();
  const int k = g.dim();
  std::vector<std::size_t> sites = options.sites.empty() ? default_probe_sites(g) : options.sites;

  struct Probe {
    double tau;
    std::size_t site;
    std::vector<double> response;
  };
  std::vector<std::size_t> lags = options.lags;
  if (lags.empty()) {
    const double xi_max = std::numbers::pi / g.spacing();
    const auto first = static_cast<std::size_t>(std::ceil(36.0 / (xi_max * xi_max * p.time().dt()) - 1e-9));
    for (std::size_t f = 1; f <= 16; f *= 2) lags.push_back(std::max<std::size_t>(first, 1) * f);
  }
  std::vector<Probe> probes;
  for (std::size_t lag : lags) {
    if (options.start + lag > p.time().steps()) continue;
    for (std::size_t site : sites)
      probes.push_back({static_cast<double>(lag) * p.time().dt(), site,
                        delta_response(p, options.start, options.start + lag, site)});
  }
  if (probes.empty()) throw ShapeError("no Gaussian-bound probe fits in the time grid");

  GaussianBoundReport rep;
  rep.c = options.c > 0.0 ? options.c : 1.0 / (8.0 * diffusion_upper_bound(p));
  auto bound = [&](double tau, std::size_t from, std::size_t to) {
    const auto d = g.displacement(from, to);
    double r2 = 0.0;
    for (int i = 0; i < k; ++i) r2 += d[i] * d[i];
    return std::pair{std::pow(tau, -0.5 * k) * std::exp(-rep.c * r2 / tau), r2};
  };
  rep.probes = probes.size();
  double fit = 0.0;
  for (std::size_t q = 0; q < probes.size(); ++q) {
    const auto& pr = probes[q];
    const double peak = *std::max_element(pr.response.begin(), pr.response.end());
    for (std::size_t x = 0; x < pr.response.size(); ++x) {
      if (pr.response[x] <= options.floor * peak) continue;
      const double ratio = pr.response[x] / bound(pr.tau, pr.site, x).first;
      rep.max_ratio = std::max(rep.max_ratio, ratio);
      if (q % 2 == 0) fit = std::max(fit, ratio);
    }
  }
  rep.fitted_C = fit * options.margin;

  for (const auto& pr : probes) {
    const double peak = *std::max_element(pr.response.begin(), pr.response.end());
    for (std::size_t x = 0; x < pr.response.size(); ++x) {
      if (pr.response[x] <= options.floor * peak) continue;
      const auto [s, r2] = bound(pr.tau, pr.site, x);
      const double ratio = pr.response[x] / (rep.fitted_C * s);
      ++rep.points_checked;
      if (ratio > 1.0) {
        ++rep.violations;
        rep.worst_violation = std::max(rep.worst_violation, ratio - 1.0);
      }
      if (r2 >= options.far_field_factor * options.far_field_factor * pr.tau)
        rep.far_field_max_ratio = std::max(rep.far_field_max_ratio, ratio);
    }
  }
  return rep;
}

}  // namespace spde
