#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include "json.hpp"

#include "spde/covariance.hpp"
#include "spde/errors.hpp"
#include "spde/greens.hpp"
#include "spde/grid.hpp"
#include "spde/parallel.hpp"
#include "spde/solver.hpp"
#include "spde/stats.hpp"

namespace spde {

enum class Direction { Time, Space };

inline const char* to_string(Direction d) { return d == Direction::Time ? "time" : "space"; }

struct AnchorPolicy {
  std::size_t anchor_times = 8;
  std::size_t anchor_sites = 16;
  double burn_in_fraction = 0.5;  // anchors start at this fraction of T
};

/// Lags and anchors of one increment-moment estimate.
struct IncrementPlan {
  Direction direction = Direction::Time;
  double p = 2.0;
  std::vector<std::size_t> lag_steps;  // multiples of dt (time) or h (space, first axis)
  std::vector<double> lags;
  std::vector<std::size_t> anchor_times;
  std::vector<std::size_t> anchor_sites;
};

/// Dyadic lags unit·2^m covering [4·unit, extent/8].
inline std::vector<double> default_lags(double unit, double extent) {
  std::vector<double> lags;
  for (double m = 4.0; m * unit <= extent / 8.0 * (1.0 + 1e-12); m *= 2.0) lags.push_back(m * unit);
  return lags;
}

inline IncrementPlan make_increment_plan(const SpatialGrid& grid, const TimeGrid& time, Direction dir,
                                         double p, std::span<const double> lags,
                                         const AnchorPolicy& policy = {}) {
  if (!(p >= 2.0)) throw ParameterDomainError("moment order p must be at least 2");
  if (lags.empty()) throw ConfigError("no increment lags given");
  IncrementPlan plan;
  plan.direction = dir;
  plan.p = p;
  const double unit = dir == Direction::Time ? time.dt() : grid.spacing();
  const std::size_t limit = dir == Direction::Time ? time.steps() : grid.points_per_axis() / 2;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const double steps = lags[i] / unit;
    const double r = std::round(steps);
    if (!(r >= 1.0) || std::abs(steps - r) > 1e-9 * std::max(1.0, steps) || r > static_cast<double>(limit))
      throw ConfigError(std::string(to_string(dir)) + " lag " + std::to_string(lags[i]) +
                        " is not a positive multiple of " + (dir == Direction::Time ? "dt" : "h") +
                        " on the grid");
    if (i > 0 && !(lags[i] > lags[i - 1])) throw ConfigError("lags must be strictly increasing");
    plan.lag_steps.push_back(static_cast<std::size_t>(r));
    plan.lags.push_back(r * unit);
  }

  const std::size_t first = static_cast<std::size_t>(std::ceil(policy.burn_in_fraction * time.steps() - 1e-9));
  std::size_t last = time.steps();
  if (dir == Direction::Time) {
    if (plan.lag_steps.back() > last) throw ConfigError("time lag exceeds the horizon");
    last -= plan.lag_steps.back();
  }
  if (last < first || policy.anchor_times == 0 || policy.anchor_sites == 0)
    throw ConfigError("no anchor times remain after the burn-in and the largest lag");
  const std::size_t nt = policy.anchor_times;
  for (std::size_t a = 0; a < nt; ++a) {
    const double pos = nt == 1 ? static_cast<double>(last)
                               : first + (static_cast<double>(last - first) * a) / (nt - 1);
    plan.anchor_times.push_back(static_cast<std::size_t>(std::llround(pos)));
  }
  const std::size_t ns = std::min(policy.anchor_sites, grid.size());
  for (std::size_t a = 0; a < ns; ++a) plan.anchor_sites.push_back(a * grid.size() / ns);
  return plan;
}

/// Anchor-averaged |Δ_λ u|^p for every lag of `plan` on one path.
inline std::vector<double> path_increment_powers(const IncrementPlan& plan, const SpatialGrid& grid,
                                                 const SpaceTimeField& u) {
  std::vector<double> out(plan.lag_steps.size(), 0.0);
  const double count = static_cast<double>(plan.anchor_times.size() * plan.anchor_sites.size());
  for (std::size_t l = 0; l < plan.lag_steps.size(); ++l) {
    const std::size_t s = plan.lag_steps[l];
    double acc = 0.0;
    for (std::size_t t : plan.anchor_times) {
      for (std::size_t x : plan.anchor_sites) {
        double d;
        if (plan.direction == Direction::Time) {
          d = u.at(t + s, x) - u.at(t, x);
        } else {
          auto idx = grid.unravel(x);
          idx[0] += static_cast<std::ptrdiff_t>(s);
          d = u.at(t, grid.ravel(idx)) - u.at(t, x);
        }
        acc += std::pow(std::abs(d), plan.p);
      }
    }
    out[l] = acc / count;
  }
  return out;
}

struct IncrementMomentTable {
  double p = 2.0;
  Direction direction = Direction::Time;
  std::vector<double> lags;
  std::vector<double> moments;
  std::vector<double> standard_errors;
  std::size_t paths = 0;
  std::size_t anchor_times = 0;
  std::size_t anchor_sites = 0;
};

/// Mean over paths with path-level standard errors; per-path rows in index order.
inline IncrementMomentTable assemble_table(const IncrementPlan& plan,
                                           std::span<const std::vector<double>> per_path) {
  IncrementMomentTable t;
  t.p = plan.p;
  t.direction = plan.direction;
  t.lags = plan.lags;
  t.paths = per_path.size();
  t.anchor_times = plan.anchor_times.size();
  t.anchor_sites = plan.anchor_sites.size();
  for (std::size_t l = 0; l < plan.lags.size(); ++l) {
    PowerSums s;
    for (const auto& row : per_path) s.add(row.at(l));
    t.moments.push_back(s.mean());
    t.standard_errors.push_back(per_path.size() > 1 ? s.standard_error() : 0.0);
  }
  return t;
}

/// Increment moments over a set of paths (each already minus I₀ if needed).
inline IncrementMomentTable increment_moments(std::span<const SolutionField> paths, double p, Direction dir,
                                              std::span<const double> lags,
                                              const AnchorPolicy& policy = {}) {
  if (paths.empty()) throw ShapeError("no paths given");
  const auto& g = paths.front().grid;
  const auto& tg = paths.front().time;
  const auto plan = make_increment_plan(g, tg, dir, p, lags, policy);
  std::vector<std::vector<double>> rows;
  for (const auto& path : paths) {
    if (!(path.grid == g) || !(path.time == tg)) throw ShapeError("paths live on different grids");
    rows.push_back(path_increment_powers(plan, g, path.values));
  }
  return assemble_table(plan, rows);
}

struct ExponentFit {
  Direction direction = Direction::Time;
  double p = 2.0;
  double gamma = 0.0;
  double standard_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double r_squared = 0.0;
  double reduced_chi2 = 0.0;
  std::vector<double> residuals;
  double lag_min = 0.0;
  double lag_max = 0.0;
  bool flagged = false;  // R² < 0.95
};

/// Weighted least squares of log m against log λ; γ̂ = slope / p. Weights are
/// (m/SE)² when every SE is positive, uniform otherwise. The 95% interval uses
/// Student's t with n-2 degrees of freedom and is widened by the reduced χ²
/// when that exceeds 1.
inline ExponentFit fit_exponents(const IncrementMomentTable& table) {
  const std::size_t n = table.lags.size();
  if (n < 4) throw DegenerateDataError("the fit needs at least 4 lags");
  if (table.lags.back() < 4.0 * table.lags.front() * (1.0 - 1e-12))
    throw DegenerateDataError("lags must span at least two octaves");
  for (double m : table.moments)
    if (!(m > 0.0) || !std::isfinite(m)) throw DegenerateDataError("moments must be positive");
  const bool weighted = std::all_of(table.standard_errors.begin(), table.standard_errors.end(),
                                    [](double s) { return s > 0.0; }) &&
                        table.standard_errors.size() == n;

  std::vector<double> x(n), y(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::log(table.lags[i]);
    y[i] = std::log(table.moments[i]);
    const double rel = weighted ? table.standard_errors[i] / table.moments[i] : 1.0;
    w[i] = 1.0 / (rel * rel);
  }
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xm = sx / sw, ym = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += w[i] * (x[i] - xm) * (x[i] - xm);
    sxy += w[i] * (x[i] - xm) * (y[i] - ym);
    syy += w[i] * (y[i] - ym) * (y[i] - ym);
  }
  const double slope = sxy / sxx;
  const double intercept = ym - slope * xm;

  ExponentFit f;
  f.direction = table.direction;
  f.p = table.p;
  f.gamma = slope / table.p;
  f.lag_min = table.lags.front();
  f.lag_max = table.lags.back();
  double chi2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (intercept + slope * x[i]);
    f.residuals.push_back(r);
    chi2 += w[i] * r * r;
  }
  const double dof = static_cast<double>(n - 2);
  f.reduced_chi2 = chi2 / dof;
  f.r_squared = syy > 0.0 ? 1.0 - chi2 / syy : 1.0;
  // Weighted: cov(slope) = 1/Sxx; unweighted: σ̂²/Sxx with σ̂² = χ²/dof.
  const double var_slope = weighted ? std::max(1.0, f.reduced_chi2) / sxx : f.reduced_chi2 / sxx;
  f.standard_error = std::sqrt(var_slope) / table.p;
  const boost::math::students_t dist(dof);
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_low = f.gamma - q * f.standard_error;
  f.ci_high = f.gamma + q * f.standard_error;
  f.flagged = f.r_squared < 0.95;
  return f;
}

/// Supremal exponents (1-η*)/2 in time and 1-η* in space for the model.
struct ExponentTargets {
  double time = 0.0;
  double space = 0.0;
  double eta = 0.0;
  std::string provenance;
};

inline ExponentTargets exponent_targets(const CovarianceModel& model) {
  const auto crit = critical_eta(model);
  if (!crit) throw ParameterDomainError("custom covariance models have no closed-form exponent target");
  ExponentTargets t;
  t.eta = *crit;
  t.time = 0.5 * (1.0 - *crit);
  t.space = 1.0 - *crit;
  if (model.kind() == CovarianceKind::Riesz)
    t.provenance = "riesz beta=" + std::to_string(model.beta()) + ": (2-beta)/4, (2-beta)/2";
  else
    t.provenance = "critical eta=" + std::to_string(*crit) + ": (1-eta)/2, 1-eta";
  return t;
}

struct RegularityReport {
  std::vector<IncrementMomentTable> tables;
  std::vector<ExponentFit> fits;
  std::optional<ExponentTargets> targets;
  nlohmann::json config;

  const ExponentFit* fit(Direction d, double p) const {
    for (const auto& f : fits)
      if (f.direction == d && f.p == p) return &f;
    return nullptr;
  }
};

inline nlohmann::json to_json(const IncrementMomentTable& t) {
  return {{"p", t.p},
          {"direction", to_string(t.direction)},
          {"lags", t.lags},
          {"moments", t.moments},
          {"standard_errors", t.standard_errors},
          {"paths", t.paths},
          {"anchor_times", t.anchor_times},
          {"anchor_sites", t.anchor_sites}};
}

inline nlohmann::json to_json(const ExponentFit& f) {
  return {{"direction", to_string(f.direction)},
          {"p", f.p},
          {"gamma", f.gamma},
          {"standard_error", f.standard_error},
          {"ci95", {f.ci_low, f.ci_high}},
          {"r_squared", f.r_squared},
          {"reduced_chi2", f.reduced_chi2},
          {"residuals", f.residuals},
          {"fit_window", {f.lag_min, f.lag_max}},
          {"flagged", f.flagged}};
}

inline nlohmann::json to_json(const RegularityReport& r) {
  nlohmann::json j;
  j["tables"] = nlohmann::json::array();
  for (const auto& t : r.tables) j["tables"].push_back(to_json(t));
  j["fits"] = nlohmann::json::array();
  for (const auto& f : r.fits) j["fits"].push_back(to_json(f));
  if (r.targets)
    j["targets"] = {{"time", r.targets->time},
                    {"space", r.targets->space},
                    {"critical_eta", r.targets->eta},
                    {"provenance", r.targets->provenance}};
  j["config"] = r.config;
  return j;
}

struct RegularityCampaign {
  std::vector<double> p_values{2.0};
  std::vector<double> time_lags;   // default_lags(dt, T) when empty
  std::vector<double> space_lags;  // default_lags(h, L) when empty
  AnchorPolicy anchors;
  SolveOptions solve{NoiseQuadrature::ExactVariance, false};
  /// Subtract I₀ before measuring increments (needed when u0 ≠ 0).
  bool subtract_initial = true;
};

/// Solves `paths` realizations (seed path_seed(master, s)) and fits exponents
/// in both directions for every p. Paths are discarded after their increment
/// powers are extracted; rows are reduced in path order.
inline RegularityReport run_regularity(const PropagatorSet& prop, const Coefficients& coeff,
                                       const CovarianceModel& model, std::span<const double> u0,
                                       std::uint64_t master, std::size_t paths,
                                       const RegularityCampaign& campaign, unsigned threads = 1) {
  if (paths < 2) throw ShapeError("a regularity campaign needs at least two paths");
  const auto& g = prop.grid();
  const auto& tg = prop.time();
  const auto tl = campaign.time_lags.empty() ? default_lags(tg.dt(), tg.horizon()) : campaign.time_lags;
  const auto sl = campaign.space_lags.empty() ? default_lags(g.spacing(), g.length()) : campaign.space_lags;

  std::vector<IncrementPlan> plans;
  for (double p : campaign.p_values) {
    plans.push_back(make_increment_plan(g, tg, Direction::Time, p, tl, campaign.anchors));
    plans.push_back(make_increment_plan(g, tg, Direction::Space, p, sl, campaign.anchors));
  }

  SpaceTimeField i0;
  const bool nonzero_u0 = std::any_of(u0.begin(), u0.end(), [](double v) { return v != 0.0; });
  if (campaign.subtract_initial && nonzero_u0) {
    i0 = SpaceTimeField(tg.points(), g.size());
    for (std::size_t i = 0; i < tg.points(); ++i) {
      const auto v = initial_field(prop, u0, i);
      std::copy(v.begin(), v.end(), i0.slice(i).begin());
    }
  }

  std::vector<std::vector<std::vector<double>>> rows(plans.size(), std::vector<std::vector<double>>(paths));
  parallel_for(paths, threads, [&](std::size_t s) {
    auto sol = euler_solve(prop, coeff, model, u0, path_seed(master, s), campaign.solve);
    if (i0.slices() > 0) {
      auto v = sol.values.values();
      const auto b = i0.values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b[i];
    }
    for (std::size_t k = 0; k < plans.size(); ++k) rows[k][s] = path_increment_powers(plans[k], g, sol.values);
  });

  RegularityReport report;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    report.tables.push_back(assemble_table(plans[k], rows[k]));
    report.fits.push_back(fit_exponents(report.tables.back()));
  }
  if (critical_eta(model)) report.targets = exponent_targets(model);
  return report;
}

}  // namespace spde
