#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "spde/greens.hpp"

using namespace spde;

namespace {

constexpr double pi = std::numbers::pi;

FieldCoefficient constant_fn(double v) {
  return [v](double, std::span<const double>) { return v; };
}

// Same constant operator routed through the Crank–Nicolson path.
OperatorSpec as_variable(double a, double b, double c) {
  return OperatorSpec::isotropic(1, constant_fn(a), a, true, {constant_fn(b), {}, {}}, constant_fn(c));
}

// Exact solution of u_t = a u_xx - b u_x - c u from a Gaussian of width s centred at x0.
double gaussian_solution(double t, double x, double x0, double s, double a, double b, double c) {
  const double v = s * s + 2.0 * a * t;
  const double d = x - x0 - b * t;
  return std::exp(-c * t) * s / std::sqrt(v) * std::exp(-d * d / (2.0 * v));
}

std::vector<double> gaussian_initial(const SpatialGrid& g, double x0, double s) {
  std::vector<double> u(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) u[i] = gaussian_solution(0.0, g.position(i)[0], x0, s, 1, 0, 0);
  return u;
}

double max_abs_error(const SpatialGrid& g, std::span<const double> u, double t, double x0, double s, double a,
                     double b, double c) {
  double e = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    e = std::max(e, std::abs(u[i] - gaussian_solution(t, g.position(i)[0], x0, s, a, b, c)));
  return e;
}

}  // namespace

TEST(HeatKernel, NormalizedAndClosedForm) {
  EXPECT_NEAR(heat_kernel_eval(0.5, {1.0}), std::exp(-0.5) / std::sqrt(2.0 * pi), 1e-15);
  EXPECT_NEAR(heat_kernel_eval(0.25, {0.0, 0.0}, 2.0), 1.0 / (2.0 * pi), 1e-15);
  double mass = 0.0;
  for (int i = -4000; i <= 4000; ++i) mass += heat_kernel_eval(0.3, {i * 0.002}) * 0.002;
  EXPECT_NEAR(mass, 1.0, 1e-12);
  EXPECT_THROW(heat_kernel_eval(0.0, {1.0}), ParameterDomainError);
}

TEST(OperatorSpec, ConstantSetsEllipticityAndValidates) {
  Matrix3 a{};
  a[0][0] = 2.0;
  a[0][1] = a[1][0] = 0.5;
  a[1][1] = 1.0;
  const auto op = OperatorSpec::constant(2, a);
  EXPECT_NEAR(op.rho, 1.5 - std::sqrt(0.5), 1e-12);  // smallest eigenvalue of [[2,.5],[.5,1]]

  Matrix3 bad{};
  bad[0][0] = 1.0;
  bad[0][1] = bad[1][0] = 2.0;
  bad[1][1] = 1.0;
  EXPECT_THROW(OperatorSpec::constant(2, bad), ParameterDomainError);

  auto degenerate = OperatorSpec::isotropic(
      1, [](double, std::span<const double> x) { return std::sin(x[0]); }, 0.1, true);
  EXPECT_THROW(degenerate.validate(1.0, 6.0), ParameterDomainError);
}

TEST(PropagatorSet, EnforcesStepBudget) {
  const SpatialGrid g(1, 32, 4.0);  // h = 0.125
  EXPECT_THROW(PropagatorSet(OperatorSpec::laplacian(1), g, TimeGrid(1.0, 4)), ParameterDomainError);
  PropagatorOptions relaxed;
  relaxed.enforce_step_budget = false;
  EXPECT_NO_THROW(PropagatorSet(OperatorSpec::laplacian(1), g, TimeGrid(1.0, 4), relaxed));
  EXPECT_THROW(PropagatorSet(OperatorSpec::laplacian(2), g, TimeGrid(1.0, 8)), ShapeError);
}

TEST(SpectralPropagator, GaussianWithDriftAndPotentialIsExact) {
  const double L = 32.0, s = 0.5, x0 = 12.0;
  const double a = 0.7, b = 1.5, c = 0.3;
  const SpatialGrid g(1, 256, L);
  const TimeGrid tg(1.0, 16);
  Matrix3 am{};
  am[0][0] = a;
  const PropagatorSet p(OperatorSpec::constant(1, am, {b, 0, 0}, c), g, tg);
  EXPECT_EQ(p.kind(), PropagatorKind::SpectralMultiplier);
  auto u = gaussian_initial(g, x0, s);
  p.propagate(0, 16, u, u);
  EXPECT_LT(max_abs_error(g, u, 1.0, x0, s, a, b, c), 1e-12);

  auto v = gaussian_initial(g, x0, s);
  for (std::size_t j = 0; j < 8; ++j) p.step(j, v, v);
  EXPECT_LT(max_abs_error(g, v, 0.5, x0, s, a, b, c), 1e-12);
}

TEST(CrankNicolson, SecondOrderAgainstExactGaussian) {
  const double L = 32.0, s = 0.6, x0 = 14.0;
  const double a = 0.8, b = 0.5, c = 0.2;
  double previous = 0.0;
  for (int level = 0; level < 3; ++level) {
    const std::size_t n = 256u << level;
    const SpatialGrid g(1, n, L);
    const TimeGrid tg(0.5, 8u << level);
    const PropagatorSet p(as_variable(a, b, c), g, tg);
    EXPECT_EQ(p.kind(), PropagatorKind::StepOperator);
    auto u = gaussian_initial(g, x0, s);
    p.propagate(0, tg.steps(), u, u);
    const double err = max_abs_error(g, u, 0.5, x0, s, a, b, c);
    EXPECT_LT(err, 5e-3);
    if (level > 0) {
      EXPECT_NEAR(previous / err, 4.0, 0.6) << "level " << level;
    }
    previous = err;
  }
}

TEST(CrankNicolson, PreservesConstantsAndMatchesDenseMatrix) {
  const SpatialGrid g(2, 16, 4.0);
  const TimeGrid tg(0.25, 4);
  auto a = [](double, std::span<const double> x) {
    return 1.0 + 0.4 * std::sin(pi * x[0] / 2.0) * std::cos(pi * x[1] / 2.0);
  };
  const PropagatorSet p(OperatorSpec::isotropic(2, a, 0.6, true), g, tg);
  std::vector<double> ones(g.size(), 1.0), out(g.size());
  p.step(0, ones, out);
  for (double v : out) EXPECT_NEAR(v, 1.0, 1e-13);

  const auto m = p.dense_step_matrix();
  std::vector<double> x(g.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::cos(0.37 * static_cast<double>(i));
  p.step(2, x, out);
  for (std::size_t r = 0; r < x.size(); ++r) {
    double y = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) y += m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
    EXPECT_NEAR(out[r], y, 1e-12);
  }
}

TEST(CrankNicolson, TimeDependentCoefficientsMatchSpectralForSpatiallyConstantCase) {
  // a(t) = 1 + t: the exact multiplier is exp(-ξ² (t + t²/2)).
  const SpatialGrid g(1, 512, 32.0);
  const TimeGrid tg(0.5, 64);
  const PropagatorSet p(OperatorSpec::isotropic(1, [](double t, std::span<const double>) { return 1.0 + t; }, 1.0, false),
                        g, tg);
  auto u = gaussian_initial(g, 16.0, 0.7);
  p.propagate(0, tg.steps(), u, u);
  const double eff = 0.5 + 0.125;  // ∫_0^0.5 (1+t) dt
  EXPECT_LT(max_abs_error(g, u, eff, 16.0, 0.7, 1.0, 0.0, 0.0), 2e-4);
}

TEST(Semigroup, SpectralResidualIsRoundoffAndDetectsDefect) {
  const SpatialGrid g(2, 32, 4.0);
  const TimeGrid tg(0.5, 64);
  const PropagatorSet p(OperatorSpec::laplacian(2, 0.8, 0.1), g, tg);
  EXPECT_LT(semigroup_residual(p, 0, 13, 40), 1e-12);
  EXPECT_EQ(semigroup_residual(p, 3, 3, 9), 0.0);
  EXPECT_THROW(semigroup_residual(p, 5, 2, 9), ShapeError);

  // The defect stretches multi-step lags only, so a one-step leg exposes it.
  PropagatorOptions broken;
  broken.semigroup_defect = 1e-3;
  const PropagatorSet q(OperatorSpec::laplacian(2, 0.8, 0.1), g, tg, broken);
  EXPECT_GT(semigroup_residual(q, 0, 1, 40), 1e-6);
}

TEST(Semigroup, MultiplierComposes) {
  const SpatialGrid g(1, 64, 4.0);
  const TimeGrid tg(1.0, 64);
  const PropagatorSet p(OperatorSpec::laplacian(1), g, tg);
  const auto e1 = p.multiplier(3), e2 = p.multiplier(5), e = p.multiplier(8);
  for (std::size_t m = 0; m < e.size(); ++m) EXPECT_NEAR(std::abs(e1[m] * e2[m] - e[m]), 0.0, 1e-15);
}

TEST(NoiseInjection, FilterHasExactStochasticConvolutionVariance) {
  const SpatialGrid g(1, 32, 4.0);
  const TimeGrid tg(0.25, 32);
  Matrix3 a{};
  a[0][0] = 1.0;
  const PropagatorSet p(OperatorSpec::constant(1, a, {0.7, 0, 0}, 0.2), g, tg);
  const auto k = p.noise_injection_filter();
  const double dt = tg.dt();
  for (std::size_t m : {0u, 1u, 7u, 16u}) {
    const double xi = g.frequency(m)[0];
    const double re = xi * xi + 0.2;
    // (1/dt) ∫_0^dt e^{-2 re s} ds
    EXPECT_NEAR(std::norm(k[m]), (1.0 - std::exp(-2.0 * re * dt)) / (2.0 * re * dt), 1e-14);
    EXPECT_NEAR(std::arg(k[m]), std::remainder(-0.7 * xi * dt, 2.0 * pi), 1e-14);
  }
}

TEST(DeltaResponse, SpectralHeatKernelIsNearlyPositiveWithUnitMass) {
  const SpatialGrid g(1, 128, 8.0);  // ξ_max = π/h ≈ 50
  const TimeGrid tg(0.5, 256);
  const PropagatorSet p(OperatorSpec::laplacian(1), g, tg);
  const auto r = delta_response(p, 0, 32, 10);  // τ = 1/16, ξ_max² τ ≈ 154
  EXPECT_NEAR(lattice_mass(g, r), 1.0, 1e-12);
  EXPECT_TRUE(respects_near_positivity(r));
  // The lattice kernel of the periodic heat semigroup equals the Poisson sum of Gaussians.
  const double tau = 32 * tg.dt();
  for (std::size_t x : {10u, 12u, 20u, 60u}) {
    double oracle = 0.0;
    const double d = g.position(x)[0] - g.position(10)[0];
    for (int n = -3; n <= 3; ++n) oracle += heat_kernel_eval(tau, {d + n * 8.0});
    EXPECT_NEAR(r[x], oracle, 1e-10);
  }
}

TEST(GaussianBound, HoldsForLaplacianAndVariableOperator) {
  const SpatialGrid g(1, 128, 8.0);
  const TimeGrid tg(0.5, 1024);  // dt = h²/4 keeps Crank–Nicolson top modes damped
  const PropagatorSet spectral(OperatorSpec::laplacian(1), g, tg);
  const auto rs = gaussian_bound_check(spectral);
  EXPECT_EQ(rs.violations, 0u);
  EXPECT_GT(rs.points_checked, 100u);
  EXPECT_LT(rs.far_field_max_ratio, 1.0);

  auto a = [](double, std::span<const double> x) { return 1.0 + 0.5 * std::sin(2.0 * pi * x[0] / 8.0); };
  const PropagatorSet variable(OperatorSpec::isotropic(1, a, 0.5, true), g, tg);
  const auto rv = gaussian_bound_check(variable);
  EXPECT_NEAR(rv.c, 1.0 / 12.0, 1e-3);  // 1/(8 max a), max a = 1.5
  EXPECT_EQ(rv.violations, 0u);
  EXPECT_TRUE(std::isfinite(rv.fitted_C));

  // Too fast a Gaussian (c above 1/(4 max a)) cannot dominate the far field.
  GaussianBoundOptions tight;
  tight.c = 0.5;
  EXPECT_GT(gaussian_bound_check(variable, tight).violations, 0u);
}

TEST(HistoryConvolver, MatchesDirectPropagationForBothKinds) {
  const SpatialGrid g(1, 32, 4.0);
  const TimeGrid tg(0.5, 8);
  auto a = [](double, std::span<const double> x) { return 1.0 + 0.3 * std::cos(pi * x[0] / 2.0); };
  const PropagatorSet spectral(OperatorSpec::laplacian(1, 0.9), g, tg);
  const PropagatorSet step(OperatorSpec::isotropic(1, a, 0.7, true), g, tg);
  for (const PropagatorSet* p : {&spectral, &step}) {
    HistoryConvolver conv(*p);
    std::vector<std::vector<double>> src(tg.points(), std::vector<double>(g.size()));
    for (std::size_t l = 0; l < tg.points(); ++l) {
      for (std::size_t x = 0; x < g.size(); ++x) src[l][x] = std::sin(0.3 * x + 1.7 * l) + 0.1 * l;
      if (l != 4) conv.set_source(l, src[l]);  // level 4 stays empty
    }
    const std::vector<double> w{0.5, -1.0, 2.0, 0.25, 3.0};
    std::vector<double> got(g.size()), want(g.size(), 0.0), tmp(g.size());
    conv.evaluate(7, 2, w, got);
    for (std::size_t l = 2; l <= 6; ++l) {
      if (l == 4) continue;
      p->propagate(l, 7, src[l], tmp);
      for (std::size_t x = 0; x < g.size(); ++x) want[x] += w[l - 2] * tmp[x];
    }
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(got[x], want[x], 1e-12);
    EXPECT_THROW(conv.evaluate(5, 2, w, got), ShapeError);
  }
}
