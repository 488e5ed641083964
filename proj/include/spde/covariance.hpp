#pragma once

// Spatial covariance models of spatially homogeneous Gaussian noise.
//
// Conventions. Every spectral density carries the multiplicative constant 1:
//
//   White       μ̂(ξ) = 1
//   Riesz       μ̂(ξ) = |ξ|^{β-k}                 0 < β < k
//   Bessel      μ̂(ξ) = (1+|ξ|²)^{-α/2}            α > 0
//   Fractional  μ̂(ξ) = Π_j |ξ_j|^{1-2H_j}         H_j ∈ ]1/2,1[, Σ H_j > k-1
//
// Noise sampled from μ̂ has spatial covariance (2π)^{-k} ∫ e^{iξ·x} μ̂(ξ) dξ.
// covariance_density() returns the classical real-space kernels with unit
// constants (|x|^{-β}, the Bessel integral, c_{k,H} Π|x_j|^{2H_j-2}); the exact
// ratio between the sampled covariance and that kernel is
// realized_covariance_scale(). Exponents and integrability are unaffected.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "spde/errors.hpp"
#include "spde/grid.hpp"

namespace spde {

enum class CovarianceKind { White, Riesz, Bessel, Fractional, CustomSpectral };

inline const char* to_string(CovarianceKind kind) {
  switch (kind) {
    case CovarianceKind::White: return "white";
    case CovarianceKind::Riesz: return "riesz";
    case CovarianceKind::Bessel: return "bessel";
    case CovarianceKind::Fractional: return "fractional";
    case CovarianceKind::CustomSpectral: return "custom";
  }
  return "unknown";
}

using SpectralDensityFn = std::function<double(std::span<const double>)>;

class CovarianceModel {
 public:
  static CovarianceModel white(int dim) {
    CovarianceModel m(CovarianceKind::White, dim);
    return m;
  }

  static CovarianceModel riesz(int dim, double beta) {
    CovarianceModel m(CovarianceKind::Riesz, dim);
    if (!(beta > 0.0 && beta < dim))
      throw ParameterDomainError("β must lie in ]0,k[ (got β=" + std::to_string(beta) +
                                 ", k=" + std::to_string(dim) + ")");
    m.beta_ = beta;
    return m;
  }

  static CovarianceModel bessel(int dim, double alpha) {
    CovarianceModel m(CovarianceKind::Bessel, dim);
    if (!(alpha > 0.0) || !std::isfinite(alpha))
      throw ParameterDomainError("α must be positive (got α=" + std::to_string(alpha) + ")");
    m.alpha_ = alpha;
    return m;
  }

  static CovarianceModel fractional(std::vector<double> hurst) {
    CovarianceModel m(CovarianceKind::Fractional, static_cast<int>(hurst.size()));
    double sum = 0.0;
    for (double h : hurst) {
      if (!(h > 0.5 && h < 1.0))
        throw ParameterDomainError("each Hurst index must lie in ]1/2,1[ (got " +
                                   std::to_string(h) + ")");
      sum += h;
    }
    if (!(sum > static_cast<double>(hurst.size()) - 1.0))
      throw ParameterDomainError("Hurst indices must satisfy Σ H_j > k-1");
    m.hurst_ = std::move(hurst);
    return m;
  }

  /// User-supplied spectral density; must be nonnegative and even in ξ.
  static CovarianceModel custom(int dim, SpectralDensityFn density, std::string name = "custom") {
    CovarianceModel m(CovarianceKind::CustomSpectral, dim);
    if (!density) throw ParameterDomainError("custom spectral density is empty");
    m.custom_ = std::move(density);
    m.name_ = std::move(name);
    m.spot_check_custom();
    return m;
  }

  CovarianceKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }
  double beta() const noexcept { return beta_; }
  double alpha() const noexcept { return alpha_; }
  const std::vector<double>& hurst() const noexcept { return hurst_; }
  const SpectralDensityFn& custom_density() const noexcept { return custom_; }

  std::string describe() const {
    switch (kind_) {
      case CovarianceKind::White: return "white(k=" + std::to_string(dim_) + ")";
      case CovarianceKind::Riesz:
        return "riesz(k=" + std::to_string(dim_) + ", beta=" + std::to_string(beta_) + ")";
      case CovarianceKind::Bessel:
        return "bessel(k=" + std::to_string(dim_) + ", alpha=" + std::to_string(alpha_) + ")";
      case CovarianceKind::Fractional: {
        std::string s = "fractional(H=";
        for (std::size_t j = 0; j < hurst_.size(); ++j)
          s += (j ? "," : "") + std::to_string(hurst_[j]);
        return s + ")";
      }
      case CovarianceKind::CustomSpectral: return name_ + "(k=" + std::to_string(dim_) + ")";
    }
    return "unknown";
  }

 private:
  CovarianceModel(CovarianceKind kind, int dim) : kind_(kind), dim_(dim) {
    if (dim < 1 || dim > kMaxDim)
      throw ParameterDomainError("spatial dimension must be 1, 2 or 3");
  }

  void spot_check_custom() const {
    // Deterministic probe points; symmetry and sign only.
    for (int s = 1; s <= 16; ++s) {
      double xi[kMaxDim], neg[kMaxDim];
      for (int d = 0; d < dim_; ++d) {
        xi[d] = std::sin(1.7 * s + 0.9 * d) * (0.3 + 0.7 * s);
        neg[d] = -xi[d];
      }
      const double a = custom_({xi, static_cast<std::size_t>(dim_)});
      const double b = custom_({neg, static_cast<std::size_t>(dim_)});
      if (!(a >= 0.0)) throw ParameterDomainError("custom spectral density must be nonnegative");
      if (std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a)))
        throw ParameterDomainError("custom spectral density must be symmetric under ξ -> -ξ");
    }
  }

  CovarianceKind kind_;
  int dim_;
  double beta_ = 0.0;
  double alpha_ = 0.0;
  std::vector<double> hurst_;
  SpectralDensityFn custom_;
  std::string name_;
};

namespace detail {

inline void require_dim(const CovarianceModel& model, std::size_t n, const char* what) {
  if (n != static_cast<std::size_t>(model.dim()))
    throw ShapeError(std::string(what) + " has " + std::to_string(n) +
                     " components, model dimension is " + std::to_string(model.dim()));
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double c : v) s += c * c;
  return std::sqrt(s);
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Surface area of the unit sphere S^{k-1}.
inline double sphere_area(int k) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k);
}

/// Volume of the unit ball in R^k.
inline double ball_volume(int k) {
  return std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k + 1.0);
}

}  // namespace detail

/// Density of the spectral measure at ξ; +∞ at the singular frequencies.
inline double spectral_density(const CovarianceModel& model, std::span<const double> xi) {
  detail::require_dim(model, xi.size(), "frequency vector");
  for (double c : xi)
    if (!std::isfinite(c)) throw ParameterDomainError("frequency must be finite");
  switch (model.kind()) {
    case CovarianceKind::White: return 1.0;
    case CovarianceKind::Riesz: {
      const double r = detail::norm(xi);
      if (r == 0.0) return detail::kInf;
      return std::pow(r, model.beta() - model.dim());
    }
    case CovarianceKind::Bessel: {
      const double r = detail::norm(xi);
      return std::pow(1.0 + r * r, -0.5 * model.alpha());
    }
    case CovarianceKind::Fractional: {
      double v = 1.0;
      for (std::size_t j = 0; j < xi.size(); ++j) {
        const double a = std::abs(xi[j]);
        if (a == 0.0) return detail::kInf;
        v *= std::pow(a, 1.0 - 2.0 * model.hurst()[j]);
      }
      return v;
    }
    case CovarianceKind::CustomSpectral: {
      const double v = model.custom_density()(xi);
      if (std::isnan(v) || v < 0.0)
        throw ParameterDomainError("custom spectral density returned a negative or NaN value");
      return v;
    }
  }
  return 0.0;
}

inline double spectral_density(const CovarianceModel& model, std::initializer_list<double> xi) {
  return spectral_density(model, std::span<const double>(xi.begin(), xi.size()));
}

/// Bessel kernel f_α(x) = ∫_0^∞ w^{(α-k-2)/2} e^{-w-|x|²/(4w)} dw for |x| = r > 0,
/// evaluated after w = e^u by adaptive Gauss–Kronrod on u ∈ [-40, 40].
inline double bessel_kernel(double alpha, int dim, double r) {
  if (r == 0.0) {
    if (alpha <= dim) return detail::kInf;
    return std::tgamma(0.5 * (alpha - dim));
  }
  const double nu = 0.5 * (alpha - dim);
  const double q = 0.25 * r * r;
  auto integrand = [nu, q](double u) {
    return std::exp(nu * u - std::exp(u) - q * std::exp(-u));
  };
  double error = 0.0;
  double l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, -40.0, 40.0, 20, 1e-13, &error, &l1);
  if (!(error <= 1e-10 || error <= 1e-11 * std::abs(value)) || !std::isfinite(value))
    throw IntegrationError("Bessel kernel quadrature did not converge at r=" + std::to_string(r),
                           value, error);
  return value;
}

/// Real-space covariance kernel f(x) with unit constants; +∞ on the singular set.
inline double covariance_density(const CovarianceModel& model, std::span<const double> x) {
  detail::require_dim(model, x.size(), "space vector");
  switch (model.kind()) {
    case CovarianceKind::White: return detail::norm(x) == 0.0 ? detail::kInf : 0.0;
    case CovarianceKind::Riesz: {
      const double r = detail::norm(x);
      if (r == 0.0) return detail::kInf;
      return std::pow(r, -model.beta());
    }
    case CovarianceKind::Bessel: return bessel_kernel(model.alpha(), model.dim(), detail::norm(x));
    case CovarianceKind::Fractional: {
      double v = 1.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double h = model.hurst()[j];
        const double a = std::abs(x[j]);
        if (a == 0.0) return detail::kInf;
        v *= h * (2.0 * h - 1.0) * std::pow(a, 2.0 * h - 2.0);
      }
      return v;
    }
    case CovarianceKind::CustomSpectral:
      throw ParameterDomainError("custom spectral models have no closed-form covariance kernel");
  }
  return 0.0;
}

inline double covariance_density(const CovarianceModel& model, std::initializer_list<double> x) {
  return covariance_density(model, std::span<const double>(x.begin(), x.size()));
}

/// κ such that the covariance realized by sampling the unit-constant spectral
/// density equals κ · covariance_density(x). White noise: κ = 1 (f = δ).
inline double realized_covariance_scale(const CovarianceModel& model) {
  const double pi = std::numbers::pi;
  const int k = model.dim();
  switch (model.kind()) {
    case CovarianceKind::White: return 1.0;
    case CovarianceKind::Riesz: {
      const double b = model.beta();
      return std::pow(2.0 * pi, -k) * std::pow(pi, 0.5 * k) * std::pow(2.0, b) *
             std::tgamma(0.5 * b) / std::tgamma(0.5 * (k - b));
    }
    case CovarianceKind::Bessel:
      return 1.0 / (std::tgamma(0.5 * model.alpha()) * std::pow(4.0 * pi, 0.5 * k));
    case CovarianceKind::Fractional: {
      double v = 1.0;
      for (double h : model.hurst())
        v *= std::tgamma(2.0 - 2.0 * h) * std::cos(pi * (1.0 - h)) / (pi * h * (2.0 * h - 1.0));
      return v;
    }
    case CovarianceKind::CustomSpectral: return std::numeric_limits<double>::quiet_NaN();
  }
  return 1.0;
}

/// Infimum of the η for which ∫ μ(dξ)/(1+|ξ|²)^η < ∞ (closed-form models only).
/// The condition holds exactly for η strictly above this value.
inline std::optional<double> critical_eta(const CovarianceModel& model) {
  const double k = model.dim();
  switch (model.kind()) {
    case CovarianceKind::White: return 0.5 * k;
    case CovarianceKind::Riesz: return 0.5 * model.beta();
    case CovarianceKind::Bessel: return std::max(0.0, 0.5 * (k - model.alpha()));
    case CovarianceKind::Fractional: {
      const double sum = std::accumulate(model.hurst().begin(), model.hurst().end(), 0.0);
      return k - sum;
    }
    case CovarianceKind::CustomSpectral: return std::nullopt;
  }
  return std::nullopt;
}

/// Large-|ξ| power e with ∫_{|ξ|<R} μ(dξ)/(1+|ξ|²)^η ~ R^e (e = 0: logarithmic).
inline std::optional<double> tail_exponent(const CovarianceModel& model, double eta) {
  const double k = model.dim();
  switch (model.kind()) {
    case CovarianceKind::White: return k - 2.0 * eta;
    case CovarianceKind::Riesz: return model.beta() - 2.0 * eta;
    case CovarianceKind::Bessel: return k - model.alpha() - 2.0 * eta;
    case CovarianceKind::Fractional: {
      const double sum = std::accumulate(model.hurst().begin(), model.hurst().end(), 0.0);
      return 2.0 * k - 2.0 * sum - 2.0 * eta;
    }
    case CovarianceKind::CustomSpectral: return std::nullopt;
  }
  return std::nullopt;
}

/// ∫_{S^{k-1}} μ̂(r ω) dω: closed form for the named models, a fixed angular
/// rule for custom densities.
inline double spherical_spectral_mass(const CovarianceModel& model, double r) {
  const int k = model.dim();
  switch (model.kind()) {
    case CovarianceKind::White: return detail::sphere_area(k);
    case CovarianceKind::Riesz: return detail::sphere_area(k) * std::pow(r, model.beta() - k);
    case CovarianceKind::Bessel:
      return detail::sphere_area(k) * std::pow(1.0 + r * r, -0.5 * model.alpha());
    case CovarianceKind::Fractional: {
      // ∫_{S^{k-1}} Π|ω_j|^{a_j} dω = 2 Π Γ((a_j+1)/2) / Γ((Σa_j + k)/2).
      double sum_a = 0.0;
      double prod = 2.0;
      for (double h : model.hurst()) {
        const double a = 1.0 - 2.0 * h;
        sum_a += a;
        prod *= std::tgamma(0.5 * (a + 1.0));
      }
      return prod / std::tgamma(0.5 * (sum_a + k)) * std::pow(r, sum_a);
    }
    case CovarianceKind::CustomSpectral: {
      const double pi = std::numbers::pi;
      if (k == 1) return spectral_density(model, {r}) + spectral_density(model, {-r});
      if (k == 2) {
        constexpr int n = 256;
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
          const double th = 2.0 * pi * (i + 0.5) / n;
          s += spectral_density(model, {r * std::cos(th), r * std::sin(th)});
        }
        return s * 2.0 * pi / n;
      }
      // k = 3: midpoint in cos θ, trapezoid in φ.
      constexpr int nt = 64, np = 128;
      double s = 0.0;
      for (int i = 0; i < nt; ++i) {
        const double c = -1.0 + (i + 0.5) * 2.0 / nt;
        const double sn = std::sqrt(1.0 - c * c);
        for (int j = 0; j < np; ++j) {
          const double ph = 2.0 * pi * j / np;
          s += spectral_density(model, {r * sn * std::cos(ph), r * sn * std::sin(ph), r * c});
        }
      }
      return s * (2.0 / nt) * (2.0 * pi / np);
    }
  }
  return 0.0;
}

enum class ConditionRule { WhiteNoise, Riesz, Bessel, Fractional, NumericalOnly };

inline const char* to_string(ConditionRule rule) {
  switch (rule) {
    case ConditionRule::WhiteNoise: return "white: 2*eta > k";
    case ConditionRule::Riesz: return "riesz: beta < min(k, 2*eta)";
    case ConditionRule::Bessel: return "bessel: alpha > k - 2*eta";
    case ConditionRule::Fractional: return "fractional: sum(H) > k - eta";
    case ConditionRule::NumericalOnly: return "numerical-only";
  }
  return "unknown";
}

struct ProbeOptions {
  std::vector<double> radii{16.0, 64.0, 256.0, 1024.0};
  /// Saturated if the last relative growth is below this...
  double saturation_growth = 0.01;
  /// ...or successive increments shrink at least by this ratio.
  double increment_ratio_limit = 0.9;
  /// A diverging probe must grow by more than this factor between radii.
  double divergence_growth = 0.01;
};

struct ConditionVerdict {
  bool holds = false;
  ConditionRule rule = ConditionRule::NumericalOnly;
  double eta = 0.0;
  double truncated_value = 0.0;  // at the largest radius
  std::vector<double> radii;
  std::vector<double> truncated_values;
  double relative_growth = 0.0;  // between the two largest radii
  double increment_ratio = 0.0;  // ΔI_last / ΔI_previous
  bool numerically_saturated = false;
  std::optional<double> tail_exponent;
};

/// ∫_{|ξ| ≤ R} μ(dξ) / (1+|ξ|²)^η for each R in `radii` (increasing).
inline std::vector<double> truncated_condition_integrals(const CovarianceModel& model, double eta,
                                                         std::span<const double> radii) {
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (!(radii[i] > 1.0) || (i > 0 && !(radii[i] > radii[i - 1])))
      throw ParameterDomainError("probe radii must be increasing and larger than 1");
  const int k = model.dim();
  auto radial = [&](double r) {
    if (r == 0.0) return 0.0;
    return std::pow(r, k - 1) * spherical_spectral_mass(model, r) * std::pow(1.0 + r * r, -eta);
  };

  // [0,1]. Power-law masses C r^q (Riesz, fractional) have the singular part
  // integrated exactly: C/(q+1) + C ∫ r^q ((1+r²)^{-η} - 1) dr, the latter
  // regular. Other models are bounded near 0 and go to tanh-sinh.
  double head = 0.0, err = 0.0;
  if (model.kind() == CovarianceKind::Riesz || model.kind() == CovarianceKind::Fractional) {
    const double c = spherical_spectral_mass(model, 1.0);
    double q = k - 1.0;
    if (model.kind() == CovarianceKind::Riesz) q += model.beta() - k;
    for (double h : model.hurst()) q += 1.0 - 2.0 * h;
    if (!(q > -1.0)) throw IntegrationError("probe integral diverges near the origin", detail::kInf, 0.0);
    auto regular = [&](double r) { return std::pow(r, q) * std::expm1(-eta * std::log1p(r * r)); };
    const double rest = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(regular, 0.0, 1.0, 10,
                                                                                       1e-12, &err);
    head = c * (1.0 / (q + 1.0) + rest);
  } else {
    boost::math::quadrature::tanh_sinh<double> ts;
    head = ts.integrate(radial, 0.0, 1.0, 1e-10, &err);
  }
  if (!std::isfinite(head)) throw IntegrationError("probe integral diverges near the origin", head, err);

  std::vector<double> out;
  out.reserve(radii.size());
  double acc = head;
  double lo = 0.0;  // log radius
  for (double radius : radii) {
    const double hi = std::log(radius);
    auto in_log = [&](double s) {
      const double r = std::exp(s);
      return r * radial(r);
    };
    double e = 0.0, l1 = 0.0;
    const double piece = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        in_log, lo, hi, 15, 1e-11, &e, &l1);
    if (!std::isfinite(piece)) throw IntegrationError("probe integral is not finite", piece, e);
    acc += piece;
    out.push_back(acc);
    lo = hi;
  }
  return out;
}

/// Decides ∫ μ(dξ)/(1+|ξ|²)^η < ∞ by the closed-form rule, with a truncated
/// numerical integral as a consistency probe. Custom models are decided by the
/// probe alone.
inline ConditionVerdict decide_condition(const CovarianceModel& model, double eta,
                                         const ProbeOptions& options = {}) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterDomainError("η must lie in ]0,1]");
  if (options.radii.size() < 3) throw ParameterDomainError("the probe needs at least three radii");

  ConditionVerdict v;
  v.eta = eta;
  v.radii = options.radii;
  v.truncated_values = truncated_condition_integrals(model, eta, options.radii);
  v.truncated_value = v.truncated_values.back();
  const std::size_t n = v.truncated_values.size();
  const double d_last = v.truncated_values[n - 1] - v.truncated_values[n - 2];
  const double d_prev = v.truncated_values[n - 2] - v.truncated_values[n - 3];
  v.relative_growth = d_last / v.truncated_values[n - 2];
  v.increment_ratio = d_prev > 0.0 ? d_last / d_prev : 0.0;
  v.numerically_saturated = v.relative_growth < options.saturation_growth ||
                            v.increment_ratio < options.increment_ratio_limit;
  v.tail_exponent = tail_exponent(model, eta);

  const double k = model.dim();
  switch (model.kind()) {
    case CovarianceKind::White:
      v.rule = ConditionRule::WhiteNoise;
      v.holds = 2.0 * eta > k;
      break;
    case CovarianceKind::Riesz:
      v.rule = ConditionRule::Riesz;
      v.holds = model.beta() < std::min(k, 2.0 * eta);
      break;
    case CovarianceKind::Bessel:
      v.rule = ConditionRule::Bessel;
      v.holds = model.alpha() > k - 2.0 * eta;
      break;
    case CovarianceKind::Fractional: {
      v.rule = ConditionRule::Fractional;
      const double sum = std::accumulate(model.hurst().begin(), model.hurst().end(), 0.0);
      v.holds = sum > k - eta;
      break;
    }
    case CovarianceKind::CustomSpectral:
      v.rule = ConditionRule::NumericalOnly;
      v.holds = v.numerically_saturated;
      break;
  }
  return v;
}

/// True when a "fails" verdict shows growth above the divergence threshold
/// between every pair of successive radii (vacuously true for "holds").
inline bool divergence_is_visible(const ConditionVerdict& v, const ProbeOptions& options = {}) {
  if (v.holds) return true;
  for (std::size_t i = 1; i < v.truncated_values.size(); ++i)
    if (!(v.truncated_values[i] > v.truncated_values[i - 1] * (1.0 + options.divergence_growth)))
      return false;
  return true;
}

}  // namespace spde
