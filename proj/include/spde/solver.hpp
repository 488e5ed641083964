#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spde/covariance.hpp"
#include "spde/errors.hpp"
#include "spde/fft.hpp"
#include "spde/greens.hpp"
#include "spde/grid.hpp"
#include "spde/noise.hpp"
#include "spde/parallel.hpp"
#include "spde/stats.hpp"

namespace spde {

using StateCoefficient = std::function<double(double t, std::span<const double> x, double z)>;

/// σ(t,x,z) and b(t,x,z) with their Lipschitz and linear-growth constants.
struct Coefficients {
  StateCoefficient sigma;
  StateCoefficient drift;
  double lipschitz = 0.0;
  double growth = 0.0;
  /// False when neither coefficient depends on z (additive noise).
  bool state_dependent = false;
  std::string label = "custom";

  /// σ ≡ s, b ≡ b0.
  static Coefficients additive(double s, double b0 = 0.0) {
    Coefficients c;
    c.sigma = [s](double, std::span<const double>, double) { return s; };
    c.drift = [b0](double, std::span<const double>, double) { return b0; };
    c.lipschitz = 0.0;
    c.growth = std::abs(s) + std::abs(b0);
    c.label = "additive";
    return c;
  }

  /// Spot-check |σ(z1)-σ(z2)| ≤ C|z1-z2| (same for b) and |σ|+|b| ≤ c̄(1+|z|).
  void validate(double horizon, double box_length, int dim, std::uint64_t seed = 0xc0ef,
                int samples = 256) const {
    if (!sigma || !drift) throw ParameterDomainError("coefficient functions are missing");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ut(0.0, horizon), ux(0.0, box_length), uz(-10.0, 10.0);
    for (int s = 0; s < samples; ++s) {
      const double t = ut(rng);
      double x[kMaxDim];
      for (int d = 0; d < dim; ++d) x[d] = ux(rng);
      const std::span<const double> xs(x, static_cast<std::size_t>(dim));
      const double z1 = uz(rng), z2 = uz(rng);
      const double tol = 1e-12 * (1.0 + std::abs(z1) + std::abs(z2));
      const double ds = std::abs(sigma(t, xs, z1) - sigma(t, xs, z2));
      const double db = std::abs(drift(t, xs, z1) - drift(t, xs, z2));
      if (ds > lipschitz * std::abs(z1 - z2) + tol || db > lipschitz * std::abs(z1 - z2) + tol)
        throw ParameterDomainError("coefficient '" + label + "' violates its Lipschitz constant");
      if (std::abs(sigma(t, xs, z1)) + std::abs(drift(t, xs, z1)) > growth * (1.0 + std::abs(z1)) + tol)
        throw ParameterDomainError("coefficient '" + label + "' violates its linear-growth constant");
    }
  }
};

/// One noise realization of the solution on the space-time lattice.
struct SolutionField {
  SpatialGrid grid;
  TimeGrid time;
  SpaceTimeField values;  // time.points() slices
  std::uint64_t seed = 0;
  SpaceTimeField noise;   // time.steps() slices when recorded, else empty
};

/// How the noise increment enters one exponential-Euler step.
enum class NoiseQuadrature {
  LeftPoint,      // P_step (σ ΔW)
  ExactVariance,  // per-mode filter with the exact one-step variance (spectral only)
};

struct SolveOptions {
  NoiseQuadrature quadrature = NoiseQuadrature::LeftPoint;
  bool record_noise = false;
};

/// I₀(t_i) = Γ(t_i; 0) u0.
inline std::vector<double> initial_field(const PropagatorSet& p, std::span<const double> u0,
                                         std::size_t i) {
  require_same_size(p.grid().size(), u0.size(), "initial datum");
  for (double v : u0)
    if (!std::isfinite(v)) throw ParameterDomainError("initial datum must be bounded");
  std::vector<double> out(u0.size());
  p.propagate(0, i, u0, out);
  return out;
}

namespace detail {

inline void require_finite(std::span<const double> v, std::size_t step, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericalError(std::string(what) + " produced a non-finite value at step " +
                           std::to_string(step));
}

/// Evaluates σ and b on a lattice slice.
struct CoefficientSlice {
  const Coefficients& coeff;
  const std::vector<double>& coords;
  int dim;

  void operator()(double t, std::span<const double> u, std::span<double> sigma,
                  std::span<double> drift) const {
    for (std::size_t i = 0; i < u.size(); ++i) {
      const std::span<const double> x(coords.data() + i * dim, static_cast<std::size_t>(dim));
      sigma[i] = coeff.sigma(t, x, u[i]);
      drift[i] = coeff.drift(t, x, u[i]);
    }
  }
};

/// Fourier-space injection operators of one step: the deterministic part is
/// multiplied by `carry` (= e^{-λ dt}), the noise part by `inject`.
struct StepInjection {
  std::vector<Complex> carry;
  std::vector<Complex> inject;
};

inline StepInjection make_injection(const PropagatorSet& p, NoiseQuadrature q) {
  StepInjection s;
  s.carry = p.multiplier(1);
  s.inject = q == NoiseQuadrature::ExactVariance ? p.noise_injection_filter() : s.carry;
  return s;
}

inline void check_quadrature(const PropagatorSet& p, NoiseQuadrature q) {
  if (q == NoiseQuadrature::ExactVariance && p.kind() != PropagatorKind::SpectralMultiplier)
    throw ParameterDomainError("exact-variance noise quadrature needs constant coefficients");
}

}  // namespace detail

/// Exponential Euler: u_{n+1} = P_step[u_n + b(t_n,·,u_n) dt + σ(t_n,·,u_n) ⊙ ΔW_n].
/// With ExactVariance the noise term is filtered per mode instead of by P_step.
inline SolutionField euler_solve(const PropagatorSet& p, const Coefficients& coeff,
                                 const CovarianceModel& model, std::span<const double> u0,
                                 std::uint64_t seed, const SolveOptions& options = {}) {
  const SpatialGrid& g = p.grid();
  const TimeGrid& tg = p.time();
  const std::size_t n = g.size();
  require_same_size(n, u0.size(), "initial datum");
  detail::check_quadrature(p, options.quadrature);
  coeff.validate(tg.horizon(), g.length(), g.dim());

  SolutionField sol{g, tg, SpaceTimeField(tg.points(), n), seed, {}};
  if (options.record_noise) sol.noise = SpaceTimeField(tg.steps(), n);
  std::copy(u0.begin(), u0.end(), sol.values.slice(0).begin());

  NoiseSampler sampler(g, model, tg.dt());
  Rng rng(seed);
  const auto coords = g.coordinates();
  const detail::CoefficientSlice eval{coeff, coords, g.dim()};
  const bool exact = options.quadrature == NoiseQuadrature::ExactVariance;
  detail::StepInjection inj;
  if (exact) inj = detail::make_injection(p, options.quadrature);

  std::vector<double> dw(n), sig(n), drift(n), v(n), noise_term(n);
  std::vector<Complex> work, a_hat(n), b_hat(n);
  const double dt = tg.dt();
  for (std::size_t step = 0; step < tg.steps(); ++step) {
    const double t = tg.time(step);
    auto u = sol.values.slice(step);
    auto next = sol.values.slice(step + 1);
    sampler.sample(rng, dw, work);
    if (options.record_noise) std::copy(dw.begin(), dw.end(), sol.noise.slice(step).begin());
    eval(t, u, sig, drift);
    if (!exact) {
      for (std::size_t i = 0; i < n; ++i) v[i] = u[i] + drift[i] * dt + sig[i] * dw[i];
      p.step(step, v, next);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = u[i] + drift[i] * dt;
        noise_term[i] = sig[i] * dw[i];
      }
      p.plan()->forward_real(v, a_hat);
      p.plan()->forward_real(noise_term, b_hat);
      for (std::size_t m = 0; m < n; ++m) a_hat[m] = inj.carry[m] * a_hat[m] + inj.inject[m] * b_hat[m];
      p.plan()->inverse_real(a_hat, next);
    }
    detail::require_finite(next, step + 1, "euler_solve");
  }
  return sol;
}

/// Max over the grid of the sample p-th absolute moment across paths.
inline double moment_sup(std::span<const SolutionField> paths, double p) {
  if (paths.size() < 2) throw ShapeError("moment_sup needs at least two paths");
  if (!(p >= 2.0)) throw ParameterDomainError("moment order p must be at least 2");
  const auto& first = paths.front();
  const std::size_t total = first.values.values().size();
  std::vector<double> acc(total, 0.0);
  for (const auto& path : paths) {
    if (!(path.grid == first.grid) || !(path.time == first.time))
      throw ShapeError("paths live on different grids");
    const auto v = path.values.values();
    for (std::size_t i = 0; i < total; ++i) acc[i] += std::pow(std::abs(v[i]), p);
  }
  return *std::max_element(acc.begin(), acc.end()) / static_cast<double>(paths.size());
}

struct PicardTrace {
  /// M_n = max over the grid of the sample p-th moment of |u^{n+1} - u^n|.
  std::vector<double> sup_moment_differences;
  /// Max over the grid of the sample p-th moment of |u^{n}|, n = 0, 1, ...
  std::vector<double> iterate_moment_sup;
  std::size_t iterations = 0;
  bool converged = false;

  /// M_{n+1} / M_n (0/0 is reported as 0).
  std::vector<double> ratios() const {
    std::vector<double> r;
    for (std::size_t i = 1; i < sup_moment_differences.size(); ++i) {
      const double a = sup_moment_differences[i - 1], b = sup_moment_differences[i];
      r.push_back(a == 0.0 ? 0.0 : b / a);
    }
    return r;
  }
};

struct PicardOptions {
  std::size_t max_iter = 50;
  double p = 2.0;
  double tolerance = 1e-6;  // M_n < tolerance · (1 + moment sup of the current iterate)
  NoiseQuadrature quadrature = NoiseQuadrature::LeftPoint;
  std::size_t max_time_steps = 256;
};

/// Iterates of the Picard scheme for a batch of noise paths that share one
/// propagator set. Each path keeps its own fixed noise realization.
class PicardEngine {
 public:
  PicardEngine(const PropagatorSet& p, const Coefficients& coeff, const CovarianceModel& model,
               std::span<const double> u0, const PicardOptions& options)
      : p_(p), coeff_(coeff), options_(options), conv_(p) {
    const auto& tg = p.time();
    if (options.max_iter < 2) throw ParameterDomainError("Picard iteration needs max_iter >= 2");
    if (tg.steps() > options.max_time_steps)
      throw ParameterDomainError("Picard iteration is capped at " +
                                 std::to_string(options.max_time_steps) + " time steps");
    if (!(options.p >= 2.0)) throw ParameterDomainError("moment order p must be at least 2");
    detail::check_quadrature(p, options.quadrature);
    coeff.validate(tg.horizon(), p.grid().length(), p.grid().dim());
    require_same_size(p.grid().size(), u0.size(), "initial datum");
    model_dim_check(model);
    i0_ = SpaceTimeField(tg.points(), p.grid().size());
    for (std::size_t i = 0; i < tg.points(); ++i) {
      const auto v = initial_field(p, u0, i);
      std::copy(v.begin(), v.end(), i0_.slice(i).begin());
    }
    sampler_.emplace(p.grid(), model, tg.dt());
    if (p.kind() == PropagatorKind::SpectralMultiplier) inj_ = detail::make_injection(p, options.quadrature);
    coords_ = p.grid().coordinates();
  }

  const SpaceTimeField& initial() const noexcept { return i0_; }

  /// Noise increments of one path, drawn in the same order as euler_solve.
  SpaceTimeField draw_noise(std::uint64_t seed) const {
    const auto& tg = p_.time();
    SpaceTimeField noise(tg.steps(), p_.grid().size());
    Rng rng(seed);
    std::vector<Complex> work;
    for (std::size_t j = 0; j < tg.steps(); ++j) sampler_->sample(rng, noise.slice(j), work);
    return noise;
  }

  /// u^{n+1} from u^n on the noise `noise`.
  SpaceTimeField iterate(const SpaceTimeField& un, const SpaceTimeField& noise) {
    const auto& tg = p_.time();
    const std::size_t n = p_.grid().size();
    const double dt = tg.dt();
    const detail::CoefficientSlice eval{coeff_, coords_, p_.grid().dim()};
    std::vector<double> sig(n), drift(n), a(n), b(n);
    std::vector<Complex> a_hat(n), b_hat(n);
    for (std::size_t j = 0; j < tg.steps(); ++j) {
      const auto u = un.slice(j);
      const auto dw = noise.slice(j);
      eval(tg.time(j), u, sig, drift);
      if (p_.kind() == PropagatorKind::SpectralMultiplier) {
        for (std::size_t i = 0; i < n; ++i) {
          a[i] = drift[i] * dt;
          b[i] = sig[i] * dw[i];
        }
        p_.plan()->forward_real(a, a_hat);
        p_.plan()->forward_real(b, b_hat);
        for (std::size_t m = 0; m < n; ++m)
          a_hat[m] = inj_.carry[m] * a_hat[m] + inj_.inject[m] * b_hat[m];
        conv_.set_source_spectrum(j + 1, a_hat);
      } else {
        for (std::size_t i = 0; i < n; ++i) a[i] = drift[i] * dt + sig[i] * dw[i];
        p_.step(j, a, b);
        conv_.set_source(j + 1, b);
      }
    }
    SpaceTimeField next(tg.points(), n);
    std::copy(i0_.slice(0).begin(), i0_.slice(0).end(), next.slice(0).begin());
    std::vector<double> ones(tg.steps(), 1.0), hist(n);
    for (std::size_t i = 1; i < tg.points(); ++i) {
      conv_.evaluate(i, 1, std::span<const double>(ones.data(), i), hist);
      auto out = next.slice(i);
      const auto base = i0_.slice(i);
      for (std::size_t x = 0; x < n; ++x) out[x] = base[x] + hist[x];
      detail::require_finite(out, i, "picard iteration");
    }
    return next;
  }

 private:
  void model_dim_check(const CovarianceModel& model) const {
    if (model.dim() != p_.grid().dim()) throw ShapeError("covariance and grid dimensions differ");
  }

  const PropagatorSet& p_;
  Coefficients coeff_;
  PicardOptions options_;
  HistoryConvolver conv_;
  SpaceTimeField i0_;
  std::optional<NoiseSampler> sampler_;
  detail::StepInjection inj_;
  std::vector<double> coords_;
};

/// Picard iteration u⁰ = I₀, u^{n+1} = I₀ + Σ_j Γ(σ(u^n) ΔW_j) + Σ_j dt Γ b(u^n), on one
/// fixed noise realization. Stops once M_n < tol · (1 + sup |u^{n+1}|^p) or at max_iter.
inline std::pair<SolutionField, PicardTrace> picard_solve(const PropagatorSet& p,
                                                          const Coefficients& coeff,
                                                          const CovarianceModel& model,
                                                          std::span<const double> u0,
                                                          std::uint64_t seed,
                                                          const PicardOptions& options = {}) {
  PicardEngine engine(p, coeff, model, u0, options);
  const auto noise = engine.draw_noise(seed);
  SpaceTimeField u = engine.initial();
  PicardTrace trace;
  auto sup_pow = [&](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::pow(std::abs(x), options.p));
    return m;
  };
  trace.iterate_moment_sup.push_back(sup_pow(u.values()));
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    SpaceTimeField next = engine.iterate(u, noise);
    double md = 0.0;
    const auto a = next.values(), b = u.values();
    for (std::size_t i = 0; i < a.size(); ++i) md = std::max(md, std::pow(std::abs(a[i] - b[i]), options.p));
    const double ms = sup_pow(a);
    trace.sup_moment_differences.push_back(md);
    trace.iterate_moment_sup.push_back(ms);
    trace.iterations = it + 1;
    u = std::move(next);
    if (md < options.tolerance * (1.0 + ms)) {
      trace.converged = true;
      break;
    }
  }
  SolutionField sol{p.grid(), p.time(), std::move(u), seed, noise};
  return {std::move(sol), std::move(trace)};
}

/// Picard campaign over `paths` independent noise realizations (path s uses
/// path_seed(master, s)). M_n and the iterate moments are sample moments across
/// paths, maximized over the grid. Returns the final iterates and the trace.
inline std::pair<std::vector<SolutionField>, PicardTrace> picard_campaign(
    const PropagatorSet& p, const Coefficients& coeff, const CovarianceModel& model,
    std::span<const double> u0, std::uint64_t master, std::size_t paths,
    const PicardOptions& options = {}, unsigned threads = 1) {
  if (paths < 2) throw ShapeError("a Picard campaign needs at least two paths");
  std::vector<PicardEngine> engines;
  engines.reserve(paths);
  for (std::size_t s = 0; s < paths; ++s) engines.emplace_back(p, coeff, model, u0, options);
  std::vector<SpaceTimeField> noise(paths), u(paths);
  parallel_for(paths, threads, [&](std::size_t s) {
    noise[s] = engines[s].draw_noise(path_seed(master, s));
    u[s] = engines[s].initial();
  });
  const std::size_t total = u.front().values().size();
  auto sample_sup = [&](auto&& value_of) {
    std::vector<double> acc(total, 0.0);
    for (std::size_t s = 0; s < paths; ++s)
      for (std::size_t i = 0; i < total; ++i) acc[i] += std::pow(std::abs(value_of(s, i)), options.p);
    return *std::max_element(acc.begin(), acc.end()) / static_cast<double>(paths);
  };

  PicardTrace trace;
  trace.iterate_moment_sup.push_back(sample_sup([&](std::size_t s, std::size_t i) { return u[s].values()[i]; }));
  std::vector<SpaceTimeField> next(paths);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    parallel_for(paths, threads, [&](std::size_t s) { next[s] = engines[s].iterate(u[s], noise[s]); });
    const double md = sample_sup([&](std::size_t s, std::size_t i) {
      return next[s].values()[i] - u[s].values()[i];
    });
    std::swap(u, next);
    const double ms = sample_sup([&](std::size_t s, std::size_t i) { return u[s].values()[i]; });
    trace.sup_moment_differences.push_back(md);
    trace.iterate_moment_sup.push_back(ms);
    trace.iterations = it + 1;
    if (md < options.tolerance * (1.0 + ms)) {
      trace.converged = true;
      break;
    }
  }
  std::vector<SolutionField> out;
  out.reserve(paths);
  for (std::size_t s = 0; s < paths; ++s)
    out.push_back(SolutionField{p.grid(), p.time(), std::move(u[s]), path_seed(master, s), std::move(noise[s])});
  return {std::move(out), std::move(trace)};
}

}  // namespace spde
