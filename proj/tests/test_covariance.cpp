#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/ooura_fourier_integrals.hpp>
#include <gtest/gtest.h>

#include "spde/covariance.hpp"

using namespace spde;

namespace {

constexpr double pi = std::numbers::pi;

// (2π)^{-1} ∫_R e^{iξx} g(|ξ|) dξ = π^{-1} ∫_0^∞ cos(ξx) g(ξ) dξ, by Ooura's
// double-exponential rule for Fourier integrals.
template <class F>
double inverse_transform_1d(F g, double x) {
  boost::math::quadrature::ooura_fourier_cos<double> cosine;
  return cosine.integrate(g, x).first / pi;
}

}  // namespace

TEST(SpectralDensity, ClosedForms) {
  EXPECT_EQ(spectral_density(CovarianceModel::white(2), {3.0, -1.0}), 1.0);
  EXPECT_NEAR(spectral_density(CovarianceModel::riesz(2, 0.5), {3.0, 4.0}), std::pow(5.0, -1.5), 1e-15);
  EXPECT_NEAR(spectral_density(CovarianceModel::bessel(3, 2.0), {1.0, 2.0, 2.0}), 0.1, 1e-15);
  EXPECT_NEAR(spectral_density(CovarianceModel::fractional({0.75, 0.6}), {4.0, 2.0}),
              std::pow(4.0, -0.5) * std::pow(2.0, -0.2), 1e-15);
  EXPECT_TRUE(std::isinf(spectral_density(CovarianceModel::riesz(1, 0.5), {0.0})));
  EXPECT_TRUE(std::isinf(spectral_density(CovarianceModel::fractional({0.7, 0.8}), {1.0, 0.0})));
}

TEST(SpectralDensity, RejectsWrongDimension) {
  EXPECT_THROW(spectral_density(CovarianceModel::riesz(2, 0.5), {1.0}), ShapeError);
}

TEST(CovarianceModel, ParameterDomains) {
  EXPECT_THROW(CovarianceModel::riesz(2, 2.5), ParameterDomainError);
  EXPECT_THROW(CovarianceModel::riesz(1, 0.0), ParameterDomainError);
  EXPECT_THROW(CovarianceModel::bessel(1, -1.0), ParameterDomainError);
  EXPECT_THROW(CovarianceModel::fractional({0.4}), ParameterDomainError);
  EXPECT_THROW(CovarianceModel::fractional({0.55, 0.55, 0.55}), ParameterDomainError);
  EXPECT_THROW(CovarianceModel::custom(1, [](std::span<const double> x) { return x[0]; }), ParameterDomainError);
  try {
    CovarianceModel::riesz(2, 2.5);
  } catch (const ParameterDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("β must lie in ]0,k["), std::string::npos);
  }
}

TEST(CovarianceDensity, RieszAndFractionalKernels) {
  EXPECT_NEAR(covariance_density(CovarianceModel::riesz(2, 0.5), {3.0, 4.0}), std::pow(5.0, -0.5), 1e-15);
  const auto f = CovarianceModel::fractional({0.75});
  EXPECT_NEAR(covariance_density(f, {2.0}), 0.75 * 0.5 * std::pow(2.0, -0.5), 1e-15);
  EXPECT_THROW(covariance_density(CovarianceModel::custom(1, [](auto) { return 1.0; }), {1.0}),
               ParameterDomainError);
}

// α = 2 gives the kernels of (1-Δ)^{-1} up to constants: √π e^{-r} (k = 1), 2√π e^{-r}/r (k = 3).
TEST(BesselKernel, MatchesClosedFormsForAlphaTwo) {
  for (double r : {0.1, 0.5, 1.0, 3.0, 7.0}) {
    EXPECT_NEAR(bessel_kernel(2.0, 1, r), std::sqrt(pi) * std::exp(-r), 1e-11);
    EXPECT_NEAR(bessel_kernel(2.0, 3, r), 2.0 * std::sqrt(pi) * std::exp(-r) / r, 1e-10 * (1.0 + 1.0 / r));
  }
  EXPECT_NEAR(bessel_kernel(3.0, 1, 0.0), 1.0, 1e-15);  // Γ(1)
  EXPECT_TRUE(std::isinf(bessel_kernel(1.0, 1, 0.0)));
}

TEST(RealizedScale, RieszMatchesFourierIntegral) {
  for (double beta : {0.3, 0.5, 0.8}) {
    const auto m = CovarianceModel::riesz(1, beta);
    for (double x : {0.5, 1.0, 2.0}) {
      const double oracle = inverse_transform_1d([beta](double xi) { return std::pow(xi, beta - 1.0); }, x);
      EXPECT_NEAR(realized_covariance_scale(m) * covariance_density(m, {x}), oracle, 1e-7 * std::abs(oracle))
          << "beta=" << beta << " x=" << x;
    }
  }
  EXPECT_NEAR(realized_covariance_scale(CovarianceModel::riesz(1, 0.5)), 0.3989422804014327, 1e-14);
}

TEST(RealizedScale, FractionalAndBesselMatchFourierIntegral) {
  for (double h : {0.6, 0.75, 0.9}) {
    const auto m = CovarianceModel::fractional({h});
    const double x = 1.3;
    const double oracle = inverse_transform_1d([h](double xi) { return std::pow(xi, 1.0 - 2.0 * h); }, x);
    EXPECT_NEAR(realized_covariance_scale(m) * covariance_density(m, {x}), oracle, 1e-7 * std::abs(oracle));
  }
  for (double alpha : {1.5, 2.0, 3.0}) {
    const auto m = CovarianceModel::bessel(1, alpha);
    const double x = 0.8;
    const double oracle =
        inverse_transform_1d([alpha](double xi) { return std::pow(1.0 + xi * xi, -0.5 * alpha); }, x);
    EXPECT_NEAR(realized_covariance_scale(m) * covariance_density(m, {x}), oracle, 1e-8);
  }
}

TEST(TruncatedIntegrals, WhiteNoiseArctangent) {
  const std::vector<double> radii{4.0, 16.0, 64.0};
  const auto v = truncated_condition_integrals(CovarianceModel::white(1), 1.0, radii);
  for (std::size_t i = 0; i < radii.size(); ++i) EXPECT_NEAR(v[i], 2.0 * std::atan(radii[i]), 1e-9);
}

// 2∫_0^∞ r^{-1/2}/(1+r²) dr = √2 π, minus the tail 2∫_R^∞ Σ (-1)^n r^{-5/2-2n} dr.
TEST(TruncatedIntegrals, RieszHasSingularHeadAndConvergentTail) {
  const std::vector<double> radii{16.0, 64.0, 256.0, 1024.0};
  const auto v = truncated_condition_integrals(CovarianceModel::riesz(1, 0.5), 1.0, radii);
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double r = radii[i];
    double tail = 0.0;
    for (int n = 0; n < 6; ++n) tail += 2.0 * (n % 2 ? -1.0 : 1.0) * std::pow(r, -1.5 - 2.0 * n) / (1.5 + 2.0 * n);
    EXPECT_NEAR(v[i], std::sqrt(2.0) * pi - tail, 1e-8);
  }
}

TEST(TruncatedIntegrals, TwoDimensionalRieszHeadIsFinite) {
  const std::vector<double> radii{16.0, 64.0, 256.0};
  // 2π ∫_0^R r^{-1/2}(1+r²)^{-1} dr at k = 2, β = 1/2.
  const auto v = truncated_condition_integrals(CovarianceModel::riesz(2, 0.5), 1.0, radii);
  EXPECT_NEAR(v.back(), 2.0 * pi * (pi / std::sqrt(2.0) - 2.0 / 3.0 * std::pow(256.0, -1.5)), 1e-6);
}

TEST(CriticalEta, ClosedForms) {
  EXPECT_DOUBLE_EQ(*critical_eta(CovarianceModel::white(1)), 0.5);
  EXPECT_DOUBLE_EQ(*critical_eta(CovarianceModel::riesz(2, 0.8)), 0.4);
  EXPECT_DOUBLE_EQ(*critical_eta(CovarianceModel::bessel(3, 1.0)), 1.0);
  EXPECT_DOUBLE_EQ(*critical_eta(CovarianceModel::bessel(1, 4.0)), 0.0);
  EXPECT_NEAR(*critical_eta(CovarianceModel::fractional({0.7, 0.8})), 0.5, 1e-15);
  EXPECT_FALSE(critical_eta(CovarianceModel::custom(1, [](auto) { return 1.0; })).has_value());
}

TEST(DecideCondition, FollowsIffRules) {
  EXPECT_TRUE(decide_condition(CovarianceModel::riesz(1, 0.5), 0.3).holds);
  EXPECT_FALSE(decide_condition(CovarianceModel::riesz(1, 0.5), 0.2).holds);
  EXPECT_TRUE(decide_condition(CovarianceModel::bessel(2, 1.0), 0.6).holds);
  EXPECT_FALSE(decide_condition(CovarianceModel::bessel(2, 1.0), 0.4).holds);
  EXPECT_TRUE(decide_condition(CovarianceModel::fractional({0.7, 0.8}), 0.6).holds);
  EXPECT_FALSE(decide_condition(CovarianceModel::fractional({0.7, 0.8}), 0.4).holds);
  EXPECT_FALSE(decide_condition(CovarianceModel::white(1), 0.5).holds);
  EXPECT_TRUE(decide_condition(CovarianceModel::white(1), 0.75).holds);
  EXPECT_THROW(decide_condition(CovarianceModel::white(1), 1.5), ParameterDomainError);
  EXPECT_THROW(decide_condition(CovarianceModel::white(1), 0.0), ParameterDomainError);
}

TEST(DecideCondition, ProbeSeesSaturationAndDivergence) {
  const auto ok = decide_condition(CovarianceModel::bessel(1, 2.0), 0.5);
  EXPECT_TRUE(ok.numerically_saturated);
  EXPECT_LT(ok.relative_growth, 0.01);

  const auto bad = decide_condition(CovarianceModel::riesz(1, 0.8), 0.2);
  EXPECT_FALSE(bad.holds);
  EXPECT_FALSE(bad.numerically_saturated);
  EXPECT_TRUE(divergence_is_visible(bad));
  // tail exponent 0.4: increments grow by 4^0.4 between successive radii
  EXPECT_NEAR(bad.increment_ratio, std::pow(4.0, 0.4), 0.01);
}

TEST(DecideCondition, CustomModelUsesProbe) {
  const auto gauss = CovarianceModel::custom(1, [](std::span<const double> x) { return std::exp(-x[0] * x[0]); });
  const auto v = decide_condition(gauss, 0.1);
  EXPECT_EQ(v.rule, ConditionRule::NumericalOnly);
  EXPECT_TRUE(v.holds);
  EXPECT_NEAR(v.truncated_value, std::sqrt(pi) * 0.9, 0.2);  // (1+ξ²)^{-0.1} ≈ 0.9 on the bulk
}

TEST(DecideCondition, RandomDrawsAgreeWithProbeAwayFromBoundary) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int agree = 0, counted = 0;
  for (int i = 0; i < 40; ++i) {
    const double beta = 0.05 + 0.9 * u(rng);
    const double eta = 0.05 + 0.95 * u(rng);
    const auto v = decide_condition(CovarianceModel::riesz(1, beta), eta);
    if (std::abs(*v.tail_exponent) < 0.1) continue;
    ++counted;
    agree += v.numerically_saturated == v.holds;
  }
  EXPECT_GE(agree, counted * 95 / 100);
}
