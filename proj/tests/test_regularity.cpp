#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "spde/regularity.hpp"

using namespace spde;

namespace {

IncrementMomentTable power_law_table(double p, double gamma, std::vector<double> lags, double rel_se) {
  IncrementMomentTable t;
  t.p = p;
  t.lags = std::move(lags);
  for (double l : t.lags) {
    t.moments.push_back(3.0 * std::pow(l, p * gamma));
    t.standard_errors.push_back(rel_se * t.moments.back());
  }
  return t;
}

// Independent random walks: time increments over λ are N(0, λ).
std::vector<SolutionField> brownian_in_time(std::size_t paths, const SpatialGrid& g, const TimeGrid& tg) {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> n01;
  std::vector<SolutionField> out;
  for (std::size_t s = 0; s < paths; ++s) {
    SolutionField f{g, tg, SpaceTimeField(tg.points(), g.size()), s, {}};
    for (std::size_t i = 1; i < tg.points(); ++i)
      for (std::size_t x = 0; x < g.size(); ++x) f.values.at(i, x) = f.values.at(i - 1, x) + std::sqrt(tg.dt()) * n01(gen);
    out.push_back(std::move(f));
  }
  return out;
}

// Random walk along the first axis with variance h per site, frozen in time.
std::vector<SolutionField> brownian_in_space(std::size_t paths, const SpatialGrid& g, const TimeGrid& tg) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> n01;
  std::vector<SolutionField> out;
  for (std::size_t s = 0; s < paths; ++s) {
    SolutionField f{g, tg, SpaceTimeField(tg.points(), g.size()), s, {}};
    std::vector<double> walk(g.size(), 0.0);
    for (std::size_t x = 1; x < g.size(); ++x) walk[x] = walk[x - 1] + std::sqrt(g.spacing()) * n01(gen);
    for (std::size_t i = 0; i < tg.points(); ++i)
      for (std::size_t x = 0; x < g.size(); ++x) f.values.at(i, x) = walk[x];
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

TEST(FitExponents, ExactPowerLawIsRecovered) {
  for (double rel : {0.0, 0.05}) {
    const auto f = fit_exponents(power_law_table(4.0, 0.37, {0.01, 0.02, 0.04, 0.08, 0.16}, rel));
    EXPECT_NEAR(f.gamma, 0.37, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
    EXPECT_FALSE(f.flagged);
    EXPECT_LE(f.ci_low, 0.37);
    EXPECT_GE(f.ci_high, 0.37);
    for (double r : f.residuals) EXPECT_NEAR(r, 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(f.lag_min, 0.01);
    EXPECT_DOUBLE_EQ(f.lag_max, 0.16);
  }
}

TEST(FitExponents, PerturbedTableGivesFiniteIntervalAroundTruth) {
  auto t = power_law_table(2.0, 0.5, {1, 2, 4, 8, 16, 32}, 0.02);
  for (std::size_t i = 0; i < t.moments.size(); ++i) t.moments[i] *= i % 2 ? 1.01 : 0.99;
  const auto f = fit_exponents(t);
  EXPECT_NEAR(f.gamma, 0.5, 0.01);
  EXPECT_GT(f.standard_error, 0.0);
  EXPECT_LT(f.ci_low, 0.5);
  EXPECT_GT(f.ci_high, 0.5);
  // t_{0.975} with 4 degrees of freedom
  EXPECT_NEAR((f.ci_high - f.gamma) / f.standard_error, 2.7764451051977987, 1e-9);
}

TEST(FitExponents, DegenerateTablesAreRejected) {
  EXPECT_THROW(fit_exponents(power_law_table(2.0, 0.5, {1, 2, 4}, 0.0)), DegenerateDataError);
  EXPECT_THROW(fit_exponents(power_law_table(2.0, 0.5, {1.0, 1.5, 2.0, 3.0}, 0.0)), DegenerateDataError);
  auto t = power_law_table(2.0, 0.5, {1, 2, 4, 8}, 0.0);
  t.moments[2] = 0.0;
  EXPECT_THROW(fit_exponents(t), DegenerateDataError);
}

TEST(IncrementPlan, DefaultLagsAreDyadicWithinRange) {
  const auto lags = default_lags(1.0 / 1024, 1.0);
  ASSERT_EQ(lags.size(), 6u);
  EXPECT_DOUBLE_EQ(lags.front(), 4.0 / 1024);
  EXPECT_DOUBLE_EQ(lags.back(), 0.125);
}

TEST(IncrementPlan, ValidatesLagsAndAnchors) {
  const SpatialGrid g(1, 64, 4.0);
  const TimeGrid tg(1.0, 128);
  const std::vector<double> good{1.0 / 128, 2.0 / 128, 4.0 / 128};
  const auto plan = make_increment_plan(g, tg, Direction::Time, 2.0, good);
  EXPECT_EQ(plan.lag_steps, (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(plan.anchor_times.front(), 64u);
  EXPECT_EQ(plan.anchor_times.back(), 124u);
  EXPECT_EQ(plan.anchor_sites.size(), 16u);
  EXPECT_THROW(make_increment_plan(g, tg, Direction::Time, 2.0, std::vector<double>{0.003}), ConfigError);
  EXPECT_THROW(make_increment_plan(g, tg, Direction::Time, 2.0, std::vector<double>{0.02, 0.01}), ConfigError);
  EXPECT_THROW(make_increment_plan(g, tg, Direction::Space, 2.0, std::vector<double>{4.0}), ConfigError);
  EXPECT_THROW(make_increment_plan(g, tg, Direction::Time, 1.5, good), ParameterDomainError);
  EXPECT_THROW(make_increment_plan(g, tg, Direction::Time, 2.0, std::vector<double>{}), ConfigError);
}

TEST(IncrementMoments, BrownianTimeIncrementsGiveHalf) {
  const SpatialGrid g(1, 16, 1.0);
  const TimeGrid tg(1.0, 1024);
  const auto paths = brownian_in_time(300, g, tg);
  const std::vector<double> lags{4.0 / 1024, 8.0 / 1024, 16.0 / 1024, 32.0 / 1024, 64.0 / 1024};
  const auto t2 = increment_moments(paths, 2.0, Direction::Time, lags);
  for (std::size_t i = 0; i < lags.size(); ++i) EXPECT_NEAR(t2.moments[i], lags[i], 4.0 * t2.standard_errors[i]);
  const auto t4 = increment_moments(paths, 4.0, Direction::Time, lags);
  for (std::size_t i = 0; i < lags.size(); ++i)
    EXPECT_NEAR(t4.moments[i], 3.0 * lags[i] * lags[i], 4.0 * t4.standard_errors[i]);
  for (const auto& t : {t2, t4}) {
    const auto f = fit_exponents(t);
    EXPECT_NEAR(f.gamma, 0.5, 0.03) << "p=" << t.p;
    EXPECT_EQ(t.paths, 300u);
  }
}

TEST(IncrementMoments, BrownianSpaceIncrementsGiveHalf) {
  const SpatialGrid g(1, 512, 4.0);
  const TimeGrid tg(1.0, 8);
  const auto paths = brownian_in_space(300, g, tg);
  AnchorPolicy anchors;
  anchors.anchor_sites = 4;  // sites 0, N/4, N/2, 3N/4 keep every lag inside the walk
  const auto h = g.spacing();
  const std::vector<double> lags{4 * h, 8 * h, 16 * h, 32 * h, 64 * h};
  const auto t = increment_moments(paths, 2.0, Direction::Space, lags, anchors);
  for (std::size_t i = 0; i < lags.size(); ++i) EXPECT_NEAR(t.moments[i], lags[i], 4.0 * t.standard_errors[i]);
  EXPECT_NEAR(fit_exponents(t).gamma, 0.5, 0.03);
}

TEST(IncrementMoments, RejectsMixedGrids) {
  const TimeGrid tg(1.0, 64);
  auto a = brownian_in_time(2, SpatialGrid(1, 8, 1.0), tg);
  a.push_back(brownian_in_time(1, SpatialGrid(1, 16, 1.0), tg).front());
  EXPECT_THROW(increment_moments(a, 2.0, Direction::Time, std::vector<double>{4.0 / 64}), ShapeError);
  EXPECT_THROW(increment_moments(std::vector<SolutionField>{}, 2.0, Direction::Time, std::vector<double>{0.1}),
               ShapeError);
}

TEST(ExponentTargets, RieszAndWhite) {
  const auto r = exponent_targets(CovarianceModel::riesz(1, 0.5));
  EXPECT_DOUBLE_EQ(r.time, 0.375);
  EXPECT_DOUBLE_EQ(r.space, 0.75);
  const auto w = exponent_targets(CovarianceModel::white(1));
  EXPECT_DOUBLE_EQ(w.time, 0.25);
  EXPECT_DOUBLE_EQ(w.space, 0.5);
  EXPECT_THROW(exponent_targets(CovarianceModel::custom(1, [](auto) { return 1.0; })), ParameterDomainError);
}

TEST(RunRegularity, ReportIsThreadCountInvariant) {
  const SpatialGrid g(1, 32, 2.0);
  const TimeGrid tg(0.5, 64);
  const auto p = build_propagator(OperatorSpec::laplacian(1), g, tg);
  const std::vector<double> u0(g.size(), 1.0);
  RegularityCampaign c;
  c.p_values = {2.0, 4.0};
  for (double m : {1, 2, 4, 8, 16}) {
    c.time_lags.push_back(m * tg.dt());
    c.space_lags.push_back(m * g.spacing());
  }
  const auto model = CovarianceModel::riesz(1, 0.5);
  const auto one = to_json(run_regularity(p, Coefficients::additive(1.0), model, u0, 3, 12, c, 1));
  const auto two = run_regularity(p, Coefficients::additive(1.0), model, u0, 3, 12, c, 2);
  EXPECT_EQ(one.dump(), to_json(two).dump());
  ASSERT_EQ(two.fits.size(), 4u);
  ASSERT_NE(two.fit(Direction::Space, 4.0), nullptr);
  EXPECT_EQ(two.fit(Direction::Time, 3.0), nullptr);
  EXPECT_DOUBLE_EQ(one["targets"]["time"].get<double>(), 0.375);
  for (const char* key : {"gamma", "standard_error", "ci95", "r_squared", "reduced_chi2", "residuals", "fit_window",
                          "flagged"})
    EXPECT_TRUE(one["fits"][0].contains(key)) << key;
  EXPECT_THROW(run_regularity(p, Coefficients::additive(1.0), model, u0, 3, 1, c), ShapeError);
}

// Additive noise: subtracting I₀ makes increments independent of u0.
TEST(RunRegularity, InitialConditionIsRemoved) {
  const SpatialGrid g(1, 32, 2.0);
  const TimeGrid tg(0.5, 64);
  const auto p = build_propagator(OperatorSpec::laplacian(1), g, tg);
  RegularityCampaign c;
  for (double m : {1, 2, 4, 8}) {
    c.time_lags.push_back(m * tg.dt());
    c.space_lags.push_back(m * g.spacing());
  }
  std::vector<double> bump(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) bump[i] = std::exp(-8.0 * std::pow(g.position(i)[0] - 1.0, 2));
  const auto model = CovarianceModel::white(1);
  const auto a = run_regularity(p, Coefficients::additive(1.0), model, bump, 9, 4, c);
  const auto b = run_regularity(p, Coefficients::additive(1.0), model, std::vector<double>(g.size(), 0.0), 9, 4, c);
  for (std::size_t k = 0; k < a.tables.size(); ++k)
    for (std::size_t l = 0; l < a.tables[k].moments.size(); ++l)
      EXPECT_NEAR(a.tables[k].moments[l], b.tables[k].moments[l], 1e-12 * b.tables[k].moments[l]);
}
