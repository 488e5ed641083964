#pragma once

// Experiment configuration: an INI file with one section per module.
// Full-line comments start with '#' or ';'. Unknown sections and keys are
// rejected. See README.md for the schema.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "spde/covariance.hpp"
#include "spde/errors.hpp"
#include "spde/factorization.hpp"
#include "spde/greens.hpp"
#include "spde/grid.hpp"
#include "spde/regularity.hpp"
#include "spde/solver.hpp"

namespace spde {

enum class ExperimentKind { Solve, Picard, Factorization, Regularity, Noise, Condition };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Solve: return "solve";
    case ExperimentKind::Picard: return "picard";
    case ExperimentKind::Factorization: return "factorization";
    case ExperimentKind::Regularity: return "regularity";
    case ExperimentKind::Noise: return "noise";
    case ExperimentKind::Condition: return "condition";
  }
  return "unknown";
}

inline ExperimentKind parse_kind(const std::string& s) {
  if (s == "solve") return ExperimentKind::Solve;
  if (s == "picard") return ExperimentKind::Picard;
  if (s == "factorization" || s == "factorize") return ExperimentKind::Factorization;
  if (s == "regularity") return ExperimentKind::Regularity;
  if (s == "noise" || s == "noise-validate") return ExperimentKind::Noise;
  if (s == "condition" || s == "condition-check" || s == "check") return ExperimentKind::Condition;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

/// A preset written as name(arg, arg, ...); bare names have no arguments.
struct PresetCall {
  std::string name;
  std::vector<double> args;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& text, const std::string& context) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(context + ": '" + t + "' is not a number");
  }
}

inline std::vector<double> parse_number_list(const std::string& text, const std::string& context) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(parse_number(item, context));
  return out;
}

inline PresetCall parse_preset(const std::string& text, const std::string& context) {
  static const std::regex re(R"(^\s*([A-Za-z][A-Za-z0-9_\-]*)\s*(?:\((.*)\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw ConfigError(context + ": cannot parse '" + text + "'");
  PresetCall call{m[1].str(), {}};
  if (m[2].matched) call.args = parse_number_list(m[2].str(), context);
  return call;
}

inline std::vector<PresetCall> parse_preset_list(const std::string& text, const std::string& context) {
  std::vector<PresetCall> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!trim(item).empty()) out.push_back(parse_preset(item, context));
  return out;
}

/// One state coefficient preset with its Lipschitz and growth constants.
struct CoefficientPreset {
  StateCoefficient fn;
  double lipschitz = 0.0;
  double growth = 0.0;
  std::string text;
};

inline CoefficientPreset make_coefficient(const PresetCall& call, const std::string& context) {
  auto need = [&](std::size_t n) {
    if (call.args.size() != n)
      throw ConfigError(context + ": preset '" + call.name + "' takes " + std::to_string(n) + " argument(s)");
  };
  CoefficientPreset c;
  if (call.name == "constant") {
    need(1);
    const double v = call.args[0];
    c.fn = [v](double, std::span<const double>, double) { return v; };
    c.growth = std::abs(v);
  } else if (call.name == "sin") {
    // a + b sin z; bare "sin" is sin z.
    if (!call.args.empty()) need(2);
    const double a = call.args.empty() ? 0.0 : call.args[0];
    const double b = call.args.empty() ? 1.0 : call.args[1];
    c.fn = [a, b](double, std::span<const double>, double z) { return a + b * std::sin(z); };
    c.lipschitz = std::abs(b);
    c.growth = std::abs(a) + std::abs(b);
  } else if (call.name == "affine") {
    need(2);
    const double a = call.args[0], b = call.args[1];
    c.fn = [a, b](double, std::span<const double>, double z) { return a + b * z; };
    c.lipschitz = std::abs(b);
    c.growth = std::max(std::abs(a), std::abs(b));
  } else if (call.name == "clipped-linear") {
    need(3);
    const double a = call.args[0], b = call.args[1], m = call.args[2];
    if (!(m > 0.0)) throw ConfigError(context + ": clipped-linear needs a positive clip level");
    c.fn = [a, b, m](double, std::span<const double>, double z) { return a + b * std::clamp(z, -m, m); };
    c.lipschitz = std::abs(b);
    c.growth = std::max(std::abs(a), std::abs(b));
  } else {
    throw ConfigError(context + ": unknown coefficient preset '" + call.name +
                      "' (constant, sin, affine, clipped-linear)");
  }
  return c;
}

inline CovarianceModel make_model(const PresetCall& call, const std::string& context) {
  try {
    if (call.name == "white" && call.args.size() == 1)
      return CovarianceModel::white(static_cast<int>(call.args[0]));
    if (call.name == "riesz" && call.args.size() == 2)
      return CovarianceModel::riesz(static_cast<int>(call.args[0]), call.args[1]);
    if (call.name == "bessel" && call.args.size() == 2)
      return CovarianceModel::bessel(static_cast<int>(call.args[0]), call.args[1]);
    if (call.name == "fractional" && !call.args.empty()) return CovarianceModel::fractional(call.args);
  } catch (const ParameterDomainError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  throw ConfigError(context + ": expected white(k), riesz(k, beta), bessel(k, alpha) or fractional(H1, ...)");
}

struct ExperimentConfig {
  std::optional<ExperimentKind> kind;
  std::size_t paths = 100;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: all cores
  std::string output = "out";
  std::vector<double> p{2.0};

  int dim = 1;
  std::size_t points = 256;
  double length = 8.0;
  double horizon = 1.0;
  std::size_t steps = 1024;

  std::string covariance = "white";
  double beta = 0.5;
  double alpha = 1.0;
  std::vector<double> hurst;

  std::string operator_preset = "laplacian";
  double diffusivity = 1.0;
  double amplitude = 0.5;
  double drift = 0.0;
  double potential = 0.0;

  std::string sigma = "constant(1)";
  std::string drift_coefficient = "constant(0)";
  std::string initial = "constant(0)";

  std::optional<NoiseQuadrature> quadrature;
  std::size_t picard_max_iter = 50;
  double picard_tolerance = 1e-6;

  std::optional<double> delta;
  std::optional<double> eta;
  ProductRule rule = ProductRule::RightEndpoint;
  bool refine = true;

  std::vector<double> time_lags;
  std::vector<double> space_lags;
  std::size_t anchor_times = 8;
  std::size_t anchor_sites = 16;
  double burn_in = 0.5;

  std::vector<double> condition_etas{0.5, 1.0};
  std::vector<double> radii{16.0, 64.0, 256.0, 1024.0};
  std::string condition_models;

  std::size_t noise_samples = 10000;
  std::vector<double> noise_lags{0, 1, 2, 3, 4};
  std::string noise_dump;
  std::size_t dump_frames = 4;

  /// Normalized "section.key = value" lines as read, for the manifest.
  std::map<std::string, std::string> snapshot;

  SpatialGrid grid() const { return SpatialGrid(dim, points, length); }
  TimeGrid time() const { return TimeGrid(horizon, steps); }

  CovarianceModel model() const {
    try {
      if (covariance == "white") return CovarianceModel::white(dim);
      if (covariance == "riesz") return CovarianceModel::riesz(dim, beta);
      if (covariance == "bessel") return CovarianceModel::bessel(dim, alpha);
      if (covariance == "fractional") {
        auto h = hurst;
        if (h.empty()) h.assign(static_cast<std::size_t>(dim), 0.75);
        if (static_cast<int>(h.size()) != dim)
          throw ConfigError("covariance.hurst needs one value per dimension");
        return CovarianceModel::fractional(h);
      }
    } catch (const ParameterDomainError& e) {
      throw ConfigError(std::string("covariance: ") + e.what());
    }
    throw ConfigError("covariance.model must be white, riesz, bessel or fractional");
  }

  OperatorSpec op() const {
    if (operator_preset == "laplacian") {
      Matrix3 a{};
      Vector3 b{};
      for (int i = 0; i < dim; ++i) {
        a[i][i] = diffusivity;
        b[i] = drift;
      }
      if (!(diffusivity > 0.0)) throw ConfigError("operator.diffusivity must be positive");
      return OperatorSpec::constant(dim, a, b, potential);
    }
    if (operator_preset == "variable-sin") {
      if (!(diffusivity > 0.0) || !(amplitude >= 0.0 && amplitude < 1.0))
        throw ConfigError("variable-sin needs diffusivity > 0 and 0 <= amplitude < 1");
      const double a0 = diffusivity, amp = amplitude, len = length;
      auto a = [a0, amp, len](double, std::span<const double> x) {
        return a0 * (1.0 + amp * std::sin(2.0 * std::numbers::pi * x[0] / len));
      };
      std::array<FieldCoefficient, kMaxDim> b;
      const double d = drift;
      for (int i = 0; i < dim; ++i) b[i] = [d](double, std::span<const double>) { return d; };
      const double c = potential;
      auto spec = OperatorSpec::isotropic(dim, a, a0 * (1.0 - amp), true, b,
                                          [c](double, std::span<const double>) { return c; });
      spec.label = "variable-sin";
      return spec;
    }
    throw ConfigError("operator.preset must be laplacian or variable-sin");
  }

  Coefficients coefficients() const {
    const auto s = make_coefficient(parse_preset(sigma, "coefficients.sigma"), "coefficients.sigma");
    const auto b = make_coefficient(parse_preset(drift_coefficient, "coefficients.drift"), "coefficients.drift");
    Coefficients c;
    c.sigma = s.fn;
    c.drift = b.fn;
    c.lipschitz = std::max(s.lipschitz, b.lipschitz);
    c.growth = s.growth + b.growth;
    c.state_dependent = c.lipschitz > 0.0;
    c.label = sigma + " / " + drift_coefficient;
    return c;
  }

  /// u0 on the grid: constant(v) or gaussian(amplitude, width) centred in the box.
  std::vector<double> initial_values(const SpatialGrid& g) const {
    const auto call = parse_preset(initial, "initial.u0");
    std::vector<double> u(g.size());
    if (call.name == "constant" && call.args.size() == 1) {
      std::fill(u.begin(), u.end(), call.args[0]);
      return u;
    }
    if (call.name == "gaussian" && call.args.size() == 2 && call.args[1] > 0.0) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto x = g.position(i);
        double r2 = 0.0;
        for (int d = 0; d < g.dim(); ++d) r2 += (x[d] - 0.5 * g.length()) * (x[d] - 0.5 * g.length());
        u[i] = call.args[0] * std::exp(-r2 / (2.0 * call.args[1] * call.args[1]));
      }
      return u;
    }
    throw ConfigError("initial.u0 must be constant(v) or gaussian(amplitude, width)");
  }

  NoiseQuadrature quadrature_for(ExperimentKind k) const {
    if (quadrature) return *quadrature;
    return k == ExperimentKind::Regularity && operator_preset == "laplacian" ? NoiseQuadrature::ExactVariance
                                                                               : NoiseQuadrature::LeftPoint;
  }

  FactorizationConfig factorization() const {
    FactorizationConfig f;
    f.eta = eta ? *eta : default_eta(model());
    f.delta = delta ? *delta : default_delta(f.eta);
    f.rule = rule;
    f.validate();
    return f;
  }

  /// Re-validates every module invariant reachable from this configuration.
  void validate() const {
    if (paths < 2 && kind != ExperimentKind::Condition) throw ConfigError("experiment.paths must be at least 2");
    for (double v : p)
      if (!(v >= 2.0)) throw ConfigError("experiment.p values must be at least 2");
    try {
      const auto g = grid();
      const auto t = time();
      const auto m = model();
      if (kind == ExperimentKind::Condition) return;
      const auto o = op();
      o.validate(t.horizon(), g.length());
      if (t.dt() > g.spacing() * (1.0 + 1e-12))
        throw ConfigError("time.steps too small: dt = " + std::to_string(t.dt()) +
                          " exceeds h = " + std::to_string(g.spacing()));
      coefficients().validate(t.horizon(), g.length(), g.dim());
      initial_values(g);
      if (kind == ExperimentKind::Factorization) factorization();
      if (kind == ExperimentKind::Regularity) {
        const AnchorPolicy anchors{anchor_times, anchor_sites, burn_in};
        const auto tl = time_lags.empty() ? default_lags(t.dt(), t.horizon()) : time_lags;
        const auto sl = space_lags.empty() ? default_lags(g.spacing(), g.length()) : space_lags;
        for (const auto* lags : {&tl, &sl})
          if (lags->size() < 4 || lags->back() < 4.0 * lags->front() * (1.0 - 1e-12))
            throw ConfigError(std::string(lags == &tl ? "regularity.time_lags" : "regularity.space_lags") +
                              ": the exponent fit needs at least 4 lags spanning two octaves" +
                              (lags->size() < 4 && (lags == &tl ? time_lags : space_lags).empty()
                                   ? " (the grid is too coarse for the defaults)"
                                   : ""));
        for (double q : p) {
          make_increment_plan(g, t, Direction::Time, q, tl, anchors);
          make_increment_plan(g, t, Direction::Space, q, sl, anchors);
        }
      }
      if (kind == ExperimentKind::Picard && t.steps() > 256)
        throw ConfigError("picard experiments are capped at 256 time steps");
      if (quadrature_for(kind.value_or(ExperimentKind::Solve)) == NoiseQuadrature::ExactVariance &&
          !o.constant_coefficients)
        throw ConfigError("solver.noise_quadrature = exact-variance needs the laplacian operator");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

inline std::size_t to_count(const std::string& v, const std::string& ctx) {
  const double d = parse_number(v, ctx);
  if (!(d >= 0.0) || d != std::floor(d) || d > 9.0e15) throw ConfigError(ctx + ": expected a non-negative integer");
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& v, const std::string& ctx) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(ctx + ": expected true or false");
}

inline std::optional<double> to_auto_number(const std::string& v, const std::string& ctx) {
  if (v == "auto") return std::nullopt;
  return parse_number(v, ctx);
}

inline std::vector<double> to_auto_list(const std::string& v, const std::string& ctx) {
  if (v == "auto") return {};
  return parse_number_list(v, ctx);
}

inline const std::map<std::string, std::map<std::string, Setter>>& schema() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"experiment",
       {{"kind", [](C& c, S v, S) { c.kind = parse_kind(v); }},
        {"paths", [](C& c, S v, S x) { c.paths = to_count(v, x); }},
        {"seed",
         [](C& c, S v, S x) {
           try {
             c.seed = std::stoull(v);
           } catch (const std::exception&) {
             throw ConfigError(x + ": expected an unsigned 64-bit integer");
           }
         }},
        {"threads", [](C& c, S v, S x) { c.threads = static_cast<unsigned>(to_count(v, x)); }},
        {"output", [](C& c, S v, S) { c.output = v; }},
        {"p", [](C& c, S v, S x) { c.p = parse_number_list(v, x); }}}},
      {"grid",
       {{"dim", [](C& c, S v, S x) { c.dim = static_cast<int>(to_count(v, x)); }},
        {"points", [](C& c, S v, S x) { c.points = to_count(v, x); }},
        {"length", [](C& c, S v, S x) { c.length = parse_number(v, x); }}}},
      {"time",
       {{"horizon", [](C& c, S v, S x) { c.horizon = parse_number(v, x); }},
        {"steps", [](C& c, S v, S x) { c.steps = to_count(v, x); }}}},
      {"covariance",
       {{"model", [](C& c, S v, S) { c.covariance = v; }},
        {"beta", [](C& c, S v, S x) { c.beta = parse_number(v, x); }},
        {"alpha", [](C& c, S v, S x) { c.alpha = parse_number(v, x); }},
        {"hurst", [](C& c, S v, S x) { c.hurst = parse_number_list(v, x); }}}},
      {"operator",
       {{"preset", [](C& c, S v, S) { c.operator_preset = v; }},
        {"diffusivity", [](C& c, S v, S x) { c.diffusivity = parse_number(v, x); }},
        {"amplitude", [](C& c, S v, S x) { c.amplitude = parse_number(v, x); }},
        {"drift", [](C& c, S v, S x) { c.drift = parse_number(v, x); }},
        {"potential", [](C& c, S v, S x) { c.potential = parse_number(v, x); }}}},
      {"coefficients",
       {{"sigma", [](C& c, S v, S) { c.sigma = v; }},
        {"drift", [](C& c, S v, S) { c.drift_coefficient = v; }}}},
      {"initial", {{"u0", [](C& c, S v, S) { c.initial = v; }}}},
      {"solver",
       {{"noise_quadrature",
         [](C& c, S v, S x) {
           if (v == "left-point")
             c.quadrature = NoiseQuadrature::LeftPoint;
           else if (v == "exact-variance")
             c.quadrature = NoiseQuadrature::ExactVariance;
           else
             throw ConfigError(x + ": expected left-point or exact-variance");
         }},
        {"picard_max_iter", [](C& c, S v, S x) { c.picard_max_iter = to_count(v, x); }},
        {"picard_tolerance", [](C& c, S v, S x) { c.picard_tolerance = parse_number(v, x); }}}},
      {"factorization",
       {{"delta", [](C& c, S v, S x) { c.delta = to_auto_number(v, x); }},
        {"eta", [](C& c, S v, S x) { c.eta = to_auto_number(v, x); }},
        {"rule",
         [](C& c, S v, S x) {
           if (v == "right")
             c.rule = ProductRule::RightEndpoint;
           else if (v == "left")
             c.rule = ProductRule::LeftEndpoint;
           else
             throw ConfigError(x + ": expected right or left");
         }},
        {"refine", [](C& c, S v, S x) { c.refine = to_bool(v, x); }}}},
      {"regularity",
       {{"time_lags", [](C& c, S v, S x) { c.time_lags = to_auto_list(v, x); }},
        {"space_lags", [](C& c, S v, S x) { c.space_lags = to_auto_list(v, x); }},
        {"anchor_times", [](C& c, S v, S x) { c.anchor_times = to_count(v, x); }},
        {"anchor_sites", [](C& c, S v, S x) { c.anchor_sites = to_count(v, x); }},
        {"burn_in", [](C& c, S v, S x) { c.burn_in = parse_number(v, x); }}}},
      {"condition",
       {{"eta", [](C& c, S v, S x) { c.condition_etas = parse_number_list(v, x); }},
        {"radii", [](C& c, S v, S x) { c.radii = parse_number_list(v, x); }},
        {"models", [](C& c, S v, S) { c.condition_models = v; }}}},
      {"noise",
       {{"samples", [](C& c, S v, S x) { c.noise_samples = to_count(v, x); }},
        {"lags", [](C& c, S v, S x) { c.noise_lags = parse_number_list(v, x); }},
        {"dump", [](C& c, S v, S) { c.noise_dump = v; }},
        {"dump_frames", [](C& c, S v, S x) { c.dump_frames = to_count(v, x); }}}},
  };
  return s;
}

}  // namespace detail

/// Parses configuration text; `origin` names the source in error messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  // Line numbers for key diagnostics (the tree does not keep them).
  std::map<std::string, std::size_t> lines;
  {
    std::istringstream scan(text);
    std::string line, section;
    for (std::size_t no = 1; std::getline(scan, line); ++no) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = trim(t.substr(1, t.size() - 2));
        lines.emplace(section, no);
      } else if (const auto eq = t.find('='); eq != std::string::npos) {
        lines.emplace(section + "." + trim(t.substr(0, eq)), no);
      }
    }
  }
  auto where = [&](const std::string& key) {
    const auto it = lines.find(key);
    return origin + (it == lines.end() ? "" : ":" + std::to_string(it->second));
  };

  ExperimentConfig cfg;
  const auto& schema = detail::schema();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(where(section) + ": key '" + section + "' outside of a section");
    const auto sit = schema.find(section);
    if (sit == schema.end()) throw ConfigError(where(section) + ": unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      const auto kit = sit->second.find(key);
      if (kit == sit->second.end())
        throw ConfigError(where(full) + ": unknown key '" + key + "' in [" + section + "]");
      const std::string value = trim(node.get_value<std::string>());
      kit->second(cfg, value, where(full) + ": " + full);
      cfg.snapshot[full] = value;
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str(), path);
  cfg.validate();
  return cfg;
}

}  // namespace spde
