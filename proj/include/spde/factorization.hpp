#pragma once

// Factorization of the discrete stochastic convolution
//
//   D(t_i) = Σ_{j<i} Γ(t_i; t_j)(Z_j ⊙ ΔW_j)
//
// through the auxiliary field
//
//   Y_δ(t_i) = Σ_{j<i} (t_i - t_j)^{-δ} Γ(t_i; t_j)(Z_j ⊙ ΔW_j)
//
// and the reconstruction (sin πδ / π) ∫_0^t (t-s)^{δ-1} Γ(t; s) Y_δ(s) ds with
// the singular weight integrated exactly over each time cell.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "spde/covariance.hpp"
#include "spde/errors.hpp"
#include "spde/greens.hpp"
#include "spde/grid.hpp"

namespace spde {

/// Value of Y inside a time cell used by the reconstruction.
enum class ProductRule {
  RightEndpoint,  // Y(t_{j+1}) on [t_j, t_{j+1}], propagated from t_{j+1}
  LeftEndpoint,   // Y(t_j) on [t_j, t_{j+1}], propagated from t_j
};

struct FactorizationConfig {
  double delta = 0.0;
  double eta = 0.0;
  ProductRule rule = ProductRule::RightEndpoint;

  /// 0 < δ < (1-η)/2 with η ∈ ]0,1[.
  void validate() const {
    if (!(eta > 0.0 && eta < 1.0))
      throw ConfigError("η must lie in ]0,1[ (got " + std::to_string(eta) + ")");
    if (!(delta > 0.0 && delta < 0.5 * (1.0 - eta)))
      throw ConfigError("δ must lie in ]0,(1-η)/2[ = ]0," + std::to_string(0.5 * (1.0 - eta)) +
                        "[ (got " + std::to_string(delta) + ")");
  }
};

inline double default_delta(double eta) { return std::min(0.9 * (1.0 - eta) / 2.0, 0.45); }

/// η slightly above the critical value of the model: η* + max(0.05, 0.1(1-η*)).
inline double default_eta(const CovarianceModel& model) {
  const auto crit = critical_eta(model);
  if (!crit) throw ConfigError("custom covariance models need an explicit η");
  const double eta = *crit + std::max(0.05, 0.1 * (1.0 - *crit));
  if (!(eta < 1.0)) throw ConfigError("no η < 1 satisfies the integrability condition for " + model.describe());
  return eta;
}

inline FactorizationConfig default_factorization(const CovarianceModel& model) {
  FactorizationConfig cfg;
  cfg.eta = default_eta(model);
  cfg.delta = default_delta(cfg.eta);
  return cfg;
}

/// B(1-δ, δ) = π / sin(πδ).
inline double beta_weight(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterDomainError("δ must lie in ]0,1[");
  return std::numbers::pi / std::sin(std::numbers::pi * delta);
}

/// ∫_0^1 (1-s)^{δ-1} s^{-δ} ds by tanh-sinh quadrature (both endpoints singular).
inline double beta_weight_quadrature(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterDomainError("δ must lie in ]0,1[");
  boost::math::quadrature::tanh_sinh<double> ts;
  // Boost passes xc = a - x (≤ 0) on the left half and b - x (≥ 0) on the
  // right half, which keeps s and 1-s accurate near both endpoints.
  auto f = [delta](double, double xc) {
    const double s = xc <= 0.0 ? -xc : 1.0 - xc;
    const double oms = xc <= 0.0 ? 1.0 + xc : xc;
    return std::pow(oms, delta - 1.0) * std::pow(s, -delta);
  };
  double err = 0.0, l1 = 0.0;
  const double v = ts.integrate(f, 0.0, 1.0, 1e-14, &err, &l1);
  if (!std::isfinite(v) || err > 1e-9 * std::abs(v))
    throw IntegrationError("Beta identity quadrature did not converge", v, err);
  return v;
}

namespace detail {

inline void check_noise_path(const PropagatorSet& p, const SpaceTimeField& z, const SpaceTimeField& noise) {
  const std::size_t n = p.grid().size();
  const std::size_t steps = p.time().steps();
  if (z.slice_size() != n || noise.slice_size() != n) throw ShapeError("field does not match the grid");
  if (z.slices() < steps || noise.slices() < steps)
    throw ShapeError("field has fewer time slices than the time grid has steps");
}

/// Σ_{j<i} c(i,j) Γ(t_i; t_j)(Z_j ⊙ ΔW_j) for every i.
template <class Weight>
SpaceTimeField weighted_convolution(const PropagatorSet& p, const SpaceTimeField& z,
                                    const SpaceTimeField& noise, Weight&& weight) {
  check_noise_path(p, z, noise);
  const std::size_t n = p.grid().size();
  const auto& tg = p.time();
  HistoryConvolver conv(p);
  std::vector<double> prod(n), adv(n);
  for (std::size_t j = 0; j < tg.steps(); ++j) {
    const auto zj = z.slice(j);
    const auto dw = noise.slice(j);
    for (std::size_t x = 0; x < n; ++x) prod[x] = zj[x] * dw[x];
    p.step(j, prod, adv);
    conv.set_source(j + 1, adv);
  }
  SpaceTimeField out(tg.points(), n);
  std::vector<double> w(tg.steps());
  for (std::size_t i = 1; i < tg.points(); ++i) {
    for (std::size_t l = 1; l <= i; ++l) w[l - 1] = weight(i, l - 1);
    conv.evaluate(i, 1, std::span<const double>(w.data(), i), out.slice(i));
  }
  return out;
}

}  // namespace detail

/// Y_δ(t_i) = Σ_{j<i} (t_i - t_j)^{-δ} Γ(t_i; t_j)(Z_j ⊙ ΔW_j); Y_δ(t_0) = 0.
/// `z` and `noise` need one slice per time step.
inline SpaceTimeField compute_Y_delta(const PropagatorSet& p, const SpaceTimeField& z,
                                      const SpaceTimeField& noise, const FactorizationConfig& cfg) {
  cfg.validate();
  const auto& tg = p.time();
  return detail::weighted_convolution(p, z, noise, [&](std::size_t i, std::size_t j) {
    return std::pow(tg.time(i) - tg.time(j), -cfg.delta);
  });
}

/// Plain discrete stochastic convolution Σ_{j<i} Γ(t_i; t_j)(Z_j ⊙ ΔW_j).
inline SpaceTimeField direct_convolution(const PropagatorSet& p, const SpaceTimeField& z,
                                         const SpaceTimeField& noise) {
  return detail::weighted_convolution(p, z, noise, [](std::size_t, std::size_t) { return 1.0; });
}

/// ∫_{t_j}^{t_{j+1}} (t_i - s)^{δ-1} ds = [(t_i - t_j)^δ - (t_i - t_{j+1})^δ] / δ.
inline double product_weight(double ti, double tj, double tj1, double delta) {
  return (std::pow(ti - tj, delta) - std::pow(ti - tj1, delta)) / delta;
}

/// R(t_i) = (sin πδ / π) Σ_{j<i} w_ij Γ(t_i; s_j) Y(s_j), with s_j = t_{j+1}
/// (right endpoint) or t_j (left endpoint).
inline SpaceTimeField reconstruct(const PropagatorSet& p, const SpaceTimeField& y,
                                  const FactorizationConfig& cfg) {
  cfg.validate();
  const std::size_t n = p.grid().size();
  const auto& tg = p.time();
  if (y.slice_size() != n || y.slices() != tg.points()) throw ShapeError("Y does not match the propagator grid");
  HistoryConvolver conv(p);
  for (std::size_t l = 0; l < tg.points(); ++l) conv.set_source(l, y.slice(l));
  const double scale = std::sin(std::numbers::pi * cfg.delta) / std::numbers::pi;
  SpaceTimeField out(tg.points(), n);
  std::vector<double> w(tg.points());
  for (std::size_t i = 1; i < tg.points(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      w[j] = scale * product_weight(tg.time(i), tg.time(j), tg.time(j + 1), cfg.delta);
    if (cfg.rule == ProductRule::RightEndpoint)
      conv.evaluate(i, 1, std::span<const double>(w.data(), i), out.slice(i));
    else
      conv.evaluate(i, 0, std::span<const double>(w.data(), i), out.slice(i));
  }
  return out;
}

/// ‖R - D‖ / ‖D‖ in discrete L² over all grid points with t > 0.
inline double relative_l2_error(const SpaceTimeField& approx, const SpaceTimeField& exact) {
  if (approx.values().size() != exact.values().size()) throw ShapeError("fields differ in shape");
  long double num = 0.0L, den = 0.0L;
  const auto a = approx.values(), e = exact.values();
  for (std::size_t i = exact.slice_size(); i < e.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - e[i];
    num += d * d;
    den += static_cast<long double>(e[i]) * e[i];
  }
  if (den == 0.0L) return num == 0.0L ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(std::sqrt(num / den));
}

struct RoundTrip {
  SpaceTimeField y;
  SpaceTimeField reconstructed;
  SpaceTimeField direct;
  double relative_error = 0.0;
};

inline RoundTrip round_trip(const PropagatorSet& p, const SpaceTimeField& z, const SpaceTimeField& noise,
                            const FactorizationConfig& cfg) {
  RoundTrip r;
  r.y = compute_Y_delta(p, z, noise, cfg);
  r.reconstructed = reconstruct(p, r.y, cfg);
  r.direct = direct_convolution(p, z, noise);
  r.relative_error = relative_l2_error(r.reconstructed, r.direct);
  return r;
}

}  // namespace spde
