#pragma once

// Experiment configuration, dispatch and result files.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "magschro/evolve.hpp"
#include "magschro/multiplier.hpp"
#include "magschro/obsgram.hpp"
#include "magschro/spectra.hpp"
#include "magschro/weights.hpp"

namespace magschro {

inline constexpr const char* kLabVersion = "1.0.0";

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"simulate",         "resolvent-scan",   "observability",
                                          "product-observability", "hautus",   "multiplier-check",
                                          "carleman-certify", "carleman-probe",   "gauge-check"};
  return k;
}

struct ExperimentConfig {
  std::string kind = "simulate";
  std::uint64_t seed = 1;
  std::string output = "out";
  std::string base_dir = ".";  // where relative file paths resolve; not emitted

  // grid
  int dim = 1;
  std::vector<double> extents{1.0};
  std::vector<int> n{64};
  std::vector<double> hole;  // x0,x1,y0,y1
  std::string scheme = "link-phase";

  // potential: zero | constant | rotation | smooth | bubble | table
  std::string potential = "zero";
  double potential_amplitude = 0.0;
  std::vector<double> potential_value{0.0, 0.0};
  std::string potential_file;

  // generator and damping
  std::string generator = "A0";
  std::vector<double> boundary_x0;
  std::string damping_c = "none";  // none | constant | collar
  double damping_c_value = 1.0;
  double damping_collar = 0.1;
  std::string damping_d = "none";  // none | multiplier | constant
  double damping_d_value = 1.0;

  // time
  double T = 1.0;
  double dt = 1e-3;
  int snapshot_stride = 0;
  std::string initial = "smooth";  // smooth | random
  int initial_order = 1;
  int log_k = 1;

  // resolvent
  double mu_min = -50.0;
  double mu_max = 50.0;
  int mu_count = 101;

  // observation
  std::string obs_type = "interior-L2";
  std::string region = "all";
  int obs_stride = 1;
  std::string obs_phases = "exact";
  std::vector<double> obs_horizons;

  // product
  double product_extent = 1.0;
  int product_n = 24;
  double product_tol = 0.05;

  // hautus
  std::vector<double> hautus_aleph0{1e-3, 1e-2, 1e-1, 1.0};

  // multiplier
  std::string multiplier_field = "m";  // m | cutoff
  std::vector<double> multiplier_x0{-0.5, -0.5};
  std::string multiplier_faces = "x+";
  double multiplier_delta = 0.1;
  double multiplier_width = 0.2;
  std::vector<int> multiplier_levels{32, 64};
  double multiplier_min_order = 1.8;

  // weights
  std::string weight_psi = "quadratic";  // quadratic | linear | psi_G
  std::vector<double> weight_x0{-0.5, -0.5};
  std::vector<double> weight_c{1.0, 0.0};
  double weight_c0 = 1.0;
  double weight_lambda = 0.0;  // 0 selects twice the derived threshold
  double weight_beta = 0.5;
  double weight_s_half = 0.0;  // > 0 adds the s variable on (-s_half, s_half)
  int weight_s_nodes = 21;
  std::string weight_region = "all";
  std::vector<double> weight_tau;
  int weight_bumps = 20;
  int weight_directions = 64;

  // gauge
  double gauge_amplitude = 1.0;

  /// Field-wise equality over the emitted keys (base_dir excluded).
  bool operator==(const ExperimentConfig& o) const;
};

// ---------------------------------------------------------------------------
// Flat key-value binding.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// shortest text that reads back to the same double
inline std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (...) {
  }
  throw ConfigError(key, "expected a number, got '" + v + "'");
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (...) {
  }
  throw ConfigError(key, "expected an integer, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

struct Binding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Binding bind_key(const std::string& key, T ExperimentConfig::*m) {
  Binding b;
  b.key = key;
  if constexpr (std::is_same_v<T, std::string>) {
    b.get = [m](const ExperimentConfig& c) { return c.*m; };
    b.set = [m](ExperimentConfig& c, const std::string& v) { c.*m = v; };
  } else if constexpr (std::is_same_v<T, double>) {
    b.get = [m](const ExperimentConfig& c) { return fmt_double(c.*m); };
    b.set = [m, key](ExperimentConfig& c, const std::string& v) { c.*m = to_double(key, v); };
  } else if constexpr (std::is_same_v<T, int>) {
    b.get = [m](const ExperimentConfig& c) { return std::to_string(c.*m); };
    b.set = [m, key](ExperimentConfig& c, const std::string& v) { c.*m = static_cast<int>(to_long(key, v)); };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    b.get = [m](const ExperimentConfig& c) { return std::to_string(c.*m); };
    b.set = [m, key](ExperimentConfig& c, const std::string& v) {
      const long x = to_long(key, v);
      if (x < 0) throw ConfigError(key, "must be non-negative");
      c.*m = static_cast<std::uint64_t>(x);
    };
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    b.get = [m](const ExperimentConfig& c) {
      std::string s;
      for (std::size_t i = 0; i < (c.*m).size(); ++i) s += (i ? "," : "") + fmt_double((c.*m)[i]);
      return s;
    };
    b.set = [m, key](ExperimentConfig& c, const std::string& v) {
      (c.*m).clear();
      if (trim(v).empty()) return;
      for (const auto& p : split(v, ',')) (c.*m).push_back(to_double(key, p));
    };
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    b.get = [m](const ExperimentConfig& c) {
      std::string s;
      for (std::size_t i = 0; i < (c.*m).size(); ++i) s += (i ? "," : "") + std::to_string((c.*m)[i]);
      return s;
    };
    b.set = [m, key](ExperimentConfig& c, const std::string& v) {
      (c.*m).clear();
      if (trim(v).empty()) return;
      for (const auto& p : split(v, ',')) (c.*m).push_back(static_cast<int>(to_long(key, p)));
    };
  }
  return b;
}

inline const std::vector<Binding>& bindings() {
  using C = ExperimentConfig;
  static const std::vector<Binding> b{
      bind_key("kind", &C::kind),
      bind_key("seed", &C::seed),
      bind_key("output", &C::output),
      bind_key("grid.dim", &C::dim),
      bind_key("grid.extents", &C::extents),
      bind_key("grid.n", &C::n),
      bind_key("grid.hole", &C::hole),
      bind_key("grid.scheme", &C::scheme),
      bind_key("potential.preset", &C::potential),
      bind_key("potential.amplitude", &C::potential_amplitude),
      bind_key("potential.value", &C::potential_value),
      bind_key("potential.file", &C::potential_file),
      bind_key("generator", &C::generator),
      bind_key("boundary_split.x0", &C::boundary_x0),
      bind_key("damping.c", &C::damping_c),
      bind_key("damping.c_value", &C::damping_c_value),
      bind_key("damping.collar", &C::damping_collar),
      bind_key("damping.d", &C::damping_d),
      bind_key("damping.d_value", &C::damping_d_value),
      bind_key("time.T", &C::T),
      bind_key("time.dt", &C::dt),
      bind_key("time.snapshot_stride", &C::snapshot_stride),
      bind_key("initial.kind", &C::initial),
      bind_key("initial.order", &C::initial_order),
      bind_key("fit.log_k", &C::log_k),
      bind_key("mu.min", &C::mu_min),
      bind_key("mu.max", &C::mu_max),
      bind_key("mu.count", &C::mu_count),
      bind_key("observation.type", &C::obs_type),
      bind_key("observation.region", &C::region),
      bind_key("observation.stride", &C::obs_stride),
      bind_key("observation.phases", &C::obs_phases),
      bind_key("observation.horizons", &C::obs_horizons),
      bind_key("product.extent", &C::product_extent),
      bind_key("product.n", &C::product_n),
      bind_key("product.tol", &C::product_tol),
      bind_key("hautus.aleph0", &C::hautus_aleph0),
      bind_key("multiplier.field", &C::multiplier_field),
      bind_key("multiplier.x0", &C::multiplier_x0),
      bind_key("multiplier.faces", &C::multiplier_faces),
      bind_key("multiplier.delta", &C::multiplier_delta),
      bind_key("multiplier.width", &C::multiplier_width),
      bind_key("multiplier.levels", &C::multiplier_levels),
      bind_key("multiplier.min_order", &C::multiplier_min_order),
      bind_key("weight.psi", &C::weight_psi),
      bind_key("weight.x0", &C::weight_x0),
      bind_key("weight.c", &C::weight_c),
      bind_key("weight.c0", &C::weight_c0),
      bind_key("weight.lambda", &C::weight_lambda),
      bind_key("weight.beta", &C::weight_beta),
      bind_key("weight.s_half", &C::weight_s_half),
      bind_key("weight.s_nodes", &C::weight_s_nodes),
      bind_key("weight.region", &C::weight_region),
      bind_key("weight.tau", &C::weight_tau),
      bind_key("weight.bumps", &C::weight_bumps),
      bind_key("weight.directions", &C::weight_directions),
      bind_key("gauge.amplitude", &C::gauge_amplitude),
  };
  return b;
}

inline const Binding& find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return b;
  throw ConfigError(key, "unknown configuration key");
}

}  // namespace detail

inline bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  for (const auto& b : detail::bindings())
    if (b.get(*this) != b.get(o)) return false;
  return true;
}

/// Flat `key = value` text, one line per field, in a fixed order.
inline std::string emit_config(const ExperimentConfig& c) {
  std::string s;
  for (const auto& b : detail::bindings()) s += b.key + " = " + b.get(c) + "\n";
  return s;
}

inline std::map<std::string, std::string> config_map(const ExperimentConfig& c) {
  std::map<std::string, std::string> m;
  for (const auto& b : detail::bindings()) m[b.key] = b.get(c);
  return m;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  detail::find_binding(detail::trim(key)).set(c, detail::trim(value));
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    set_config_value(c, line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

/// Nested objects flatten to dotted keys; arrays become comma lists.
inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
  ExperimentConfig c;
  std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& v,
                                                                           const std::string& prefix) {
    if (v.is_object()) {
      for (auto it = v.begin(); it != v.end(); ++it) walk(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key());
      return;
    }
    std::string s;
    auto scalar = [&](const nlohmann::json& x) -> std::string {
      if (x.is_string()) return x.get<std::string>();
      if (x.is_number_integer()) return std::to_string(x.get<long>());
      if (x.is_number()) return detail::fmt_double(x.get<double>());
      if (x.is_boolean()) return x.get<bool>() ? "1" : "0";
      throw ConfigError(prefix, "unsupported value");
    };
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + scalar(v[i]);
    } else {
      s = scalar(v);
    }
    set_config_value(c, prefix, s);
  };
  if (!j.is_object()) throw ConfigError("config", "JSON config must be an object");
  walk(j, "");
  return c;
}

/// Reads a `.json` file as JSON and anything else as key-value text.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  ExperimentConfig c;
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
      throw ConfigError("config", std::string("malformed JSON: ") + e.what());
    }
    c = parse_config_json(j);
  } else {
    c = parse_config_text(text);
  }
  c.base_dir = std::filesystem::path(path).parent_path().string();
  if (c.base_dir.empty()) c.base_dir = ".";
  return c;
}

// ---------------------------------------------------------------------------
// Building blocks from a config.

/// Region syntax: terms joined by '|' (union), each a conjunction of
/// conditions joined by '&': all, collar:W, x<V, x>V, y<V, y>V.
inline NodeSet parse_region(const Grid& g, const std::string& spec, const std::string& key = "observation.region") {
  const auto L = g.extents();
  std::vector<std::vector<std::function<bool(const Point&)>>> terms;
  for (const auto& term : detail::split(spec, '|')) {
    std::vector<std::function<bool(const Point&)>> conds;
    for (const auto& c : detail::split(term, '&')) {
      if (c == "all") {
        conds.push_back([](const Point&) { return true; });
      } else if (c.rfind("collar:", 0) == 0) {
        const double w = detail::to_double(key, c.substr(7));
        const int dim = g.dim();
        conds.push_back([w, L, dim](const Point& x) {
          for (int ax = 0; ax < dim; ++ax)
            if (x[ax] <= w + 1e-12 || L[ax] - x[ax] <= w + 1e-12) return true;
          return false;
        });
      } else if (c.size() > 2 && (c[0] == 'x' || c[0] == 'y') && (c[1] == '<' || c[1] == '>')) {
        const int ax = c[0] == 'x' ? 0 : 1;
        if (ax >= g.dim()) throw ConfigError(key, "condition on y in a 1D domain");
        const double v = detail::to_double(key, c.substr(2));
        const bool less = c[1] == '<';
        conds.push_back([ax, v, less](const Point& x) { return less ? x[ax] < v : x[ax] > v; });
      } else {
        throw ConfigError(key, "cannot parse region condition '" + c + "'");
      }
    }
    terms.push_back(conds);
  }
  NodeSet out = g.select([&](const Point& x) {
    for (const auto& t : terms) {
      bool all = true;
      for (const auto& c : t) all = all && c(x);
      if (all) return true;
    }
    return false;
  });
  if (out.empty()) throw ConfigError(key, "region '" + spec + "' selects no nodes");
  return out;
}

inline Grid make_grid(const ExperimentConfig& c) {
  if (c.dim != 1 && c.dim != 2) throw ConfigError("grid.dim", "must be 1 or 2");
  if (static_cast<int>(c.extents.size()) != c.dim) throw ConfigError("grid.extents", "needs one value per axis");
  std::vector<int> n = c.n;
  if (n.size() == 1 && c.dim == 2) n.push_back(n[0]);
  if (static_cast<int>(n.size()) != c.dim) throw ConfigError("grid.n", "needs one or dim values");
  try {
    if (!c.hole.empty()) {
      if (c.dim != 2 || c.hole.size() != 4) throw ConfigError("grid.hole", "needs x0,x1,y0,y1 in 2D");
      return build_annular_grid(c.extents, n, HoleSpec{c.hole[0], c.hole[1], c.hole[2], c.hole[3]});
    }
    return build_grid(c.dim, c.extents, n);
  } catch (const InvalidArgument& e) {
    throw ConfigError("grid", e.what());
  }
}

inline MagneticPotential make_potential_from_config(const Grid& g, const ExperimentConfig& c) {
  const double A = c.potential_amplitude;
  const auto L = g.extents();
  const Point mid(0.5 * L[0], g.dim() == 2 ? 0.5 * L[1] : 0.0);
  if (c.potential == "zero") return zero_potential(g);
  if (c.potential == "constant") {
    if (c.potential_value.size() < static_cast<std::size_t>(g.dim()))
      throw ConfigError("potential.value", "needs one component per axis");
    const Eigen::Vector2d v(c.potential_value[0], c.potential_value.size() > 1 ? c.potential_value[1] : 0.0);
    return make_potential(g, [v](const Point&) { return v; });
  }
  if (c.potential == "rotation") {
    // constant field A in 2D; in 1D a plain constant
    return make_potential(g, [A, mid](const Point& x) {
      return Eigen::Vector2d(-0.5 * A * (x[1] - mid[1]), 0.5 * A * (x[0] - mid[0]));
    });
  }
  if (c.potential == "smooth") {
    return make_potential(g, [A](const Point& x) {
      return Eigen::Vector2d(A * std::cos(x[0] + 0.5 * x[1]), A * std::sin(1.5 * x[0] - x[1]));
    });
  }
  if (c.potential == "bubble") {
    // vanishes on the whole outer boundary
    const int dim = g.dim();
    return make_potential(g, [A, L, dim](const Point& x) {
      double b = std::sin(kPi * x[0] / L[0]);
      if (dim == 2) b *= std::sin(kPi * x[1] / L[1]);
      return Eigen::Vector2d(A * b * b, A * b * b);
    });
  }
  if (c.potential == "table") {
    std::filesystem::path p(c.potential_file);
    if (p.is_relative()) p = std::filesystem::path(c.base_dir) / p;
    std::ifstream in(p);
    if (!in) throw ConfigError("potential.file", "cannot open " + p.string());
    RMat s = RMat::Zero(g.num_nodes(), 2);
    std::string line;
    int k = 0;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      if (detail::trim(line).empty()) continue;
      if (k >= g.num_nodes()) throw ConfigError("potential.file", "more rows than grid nodes");
      std::istringstream ls(line);
      for (int ax = 0; ax < g.dim(); ++ax)
        if (!(ls >> s(k, ax))) throw ConfigError("potential.file", "row " + std::to_string(k + 1) + " is short");
      ++k;
    }
    if (k != g.num_nodes()) throw ConfigError("potential.file", "expected one row per grid node");
    return make_potential(g, s);
  }
  throw ConfigError("potential.preset", "unknown preset '" + c.potential + "'");
}

inline DampingConfig make_damping(const Grid& g, const ExperimentConfig& c, const BoundarySplit& split) {
  DampingConfig d = DampingConfig::none(g);
  if (c.damping_c == "constant") {
    if (!(c.damping_c_value > 0)) throw ConfigError("damping.c_value", "must be positive");
    d.c.setConstant(c.damping_c_value);
    d.omega = g.all_nodes();
    d.c0 = c.damping_c_value;
  } else if (c.damping_c == "collar") {
    if (!(c.damping_c_value > 0)) throw ConfigError("damping.c_value", "must be positive");
    d.omega = parse_region(g, "collar:" + detail::fmt_double(c.damping_collar), "damping.collar");
    for (int k : d.omega) d.c[k] = c.damping_c_value;
    d.c0 = c.damping_c_value;
  } else if (c.damping_c != "none") {
    throw ConfigError("damping.c", "unknown preset '" + c.damping_c + "'");
  }
  if (c.damping_d == "multiplier") {
    for (int k : split.gamma0) d.d[k] = std::max(0.0, (g.coord(k) - split.x0).dot(g.normal(k)));
    d.gamma0_support = split.gamma0;
  } else if (c.damping_d == "constant") {
    for (int k : split.gamma0) d.d[k] = c.damping_d_value;
    d.gamma0_support = split.gamma0;
    d.d0 = c.damping_d_value;
  } else if (c.damping_d != "none") {
    throw ConfigError("damping.d", "unknown preset '" + c.damping_d + "'");
  }
  return d;
}

struct Setup {
  Grid grid;
  MagneticPotential a;
  BoundarySplit split;
  DampingConfig damping;
  GeneratorMatrix gen;
};

inline Setup make_setup(const ExperimentConfig& c, const std::string& generator) {
  Grid g = make_grid(c);
  MagneticPotential a = make_potential_from_config(g, c);
  GenKind kind;
  try {
    kind = parse_generator_kind(generator);
  } catch (const InvalidArgument& e) {
    throw ConfigError("generator", e.what());
  }
  const bool boundary = kind == GenKind::A2 || kind == GenKind::A3;
  if (boundary && c.boundary_x0.empty()) throw ConfigError("boundary_split", "A2/A3 need x0 and a non-empty Gamma_0");
  BoundarySplit split;
  if (c.boundary_x0.empty()) {
    // no split requested: the whole boundary is Dirichlet
    split.gamma1 = g.boundary_nodes();
  } else {
    split = split_boundary(g, Point(c.boundary_x0[0], c.boundary_x0.size() > 1 ? c.boundary_x0[1] : 0.0));
  }
  if (boundary && split.gamma0.empty()) throw ConfigError("boundary_split", "Gamma_0 is empty for this x0");
  if (boundary && c.damping_d == "none") throw ConfigError("damping.d", "A2/A3 need boundary damping");
  if (kind == GenKind::A1 && c.damping_c == "none") throw ConfigError("damping.c", "A1 needs interior damping");
  DampingConfig damping = make_damping(g, c, split);
  Scheme scheme;
  try {
    scheme = parse_scheme(c.scheme);
  } catch (const InvalidArgument& e) {
    throw ConfigError("grid.scheme", e.what());
  }
  if (kind == GenKind::A2 && a.sup_norm > 0) {
    try {
      require_vanishing_on(g, a, split.gamma0, 1e-12);
    } catch (const InvalidArgument& e) {
      throw ConfigError("potential.preset", e.what());
    }
  }
  GeneratorMatrix gen = assemble_generator(kind, g, a, damping, split, scheme);
  return {std::move(g), std::move(a), std::move(split), std::move(damping), std::move(gen)};
}

inline CVec make_initial_state(const Setup& s, const ExperimentConfig& c) {
  const Grid& g = s.grid;
  const auto L = g.extents();
  CVec v;
  if (c.initial == "smooth") {
    v = s.gen.dofs.restrict(g.sample([&](const Point& x) {
      double b = x[0] * (L[0] - x[0]);
      if (g.dim() == 2) b *= x[1] * (L[1] - x[1]);
      return b * std::polar(1.0, 2.0 * x[0] + x[1]) + 0.3 * b * std::sin(3 * kPi * x[0] / L[0]);
    }));
  } else if (c.initial == "random") {
    CounterRng rng(c.seed, 1);
    v.resize(s.gen.size());
    for (int i = 0; i < v.size(); ++i) v[i] = Complex(rng.normal(), rng.normal());
  } else {
    throw ConfigError("initial.kind", "unknown initial state '" + c.initial + "'");
  }
  if (c.initial_order < 0) throw ConfigError("initial.order", "must be non-negative");
  CVec u = smooth_initial_state(s.gen, v, c.initial_order);
  const double m = std::sqrt(s.gen.mass.dot(u.cwiseAbs2()));
  if (!(m > 0)) throw ConfigError("initial.kind", "initial state is zero on the unknowns");
  return u / m;
}

inline PsiFunction make_psi(const Grid& g, const ExperimentConfig& c, int dim) {
  auto pt = [](const std::vector<double>& v, const std::string& key) {
    if (v.empty()) throw ConfigError(key, "needs at least one component");
    return Point(v[0], v.size() > 1 ? v[1] : 0.0);
  };
  if (c.weight_psi == "quadratic") return psi_quadratic(pt(c.weight_x0, "weight.x0"), dim);
  if (c.weight_psi == "linear") return psi_linear(pt(c.weight_c, "weight.c"), c.weight_c0, dim);
  if (c.weight_psi == "psi_G") {
    try {
      return construct_psi_G(g, parse_region(g, c.region), pt(c.weight_x0, "weight.x0"));
    } catch (const InvalidArgument& e) {
      throw ConfigError("weight.x0", e.what());
    }
  }
  throw ConfigError("weight.psi", "unknown base function '" + c.weight_psi + "'");
}

// ---------------------------------------------------------------------------
// Running.

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunResult {
  int exit_code = 0;  // 0 pass, 1 invariant failure
  std::vector<Check> checks;
  nlohmann::json manifest;
  nlohmann::json timings;
};

namespace detail {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

class Outputs {
 public:
  explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::ofstream open(const std::string& name) {
    files_.push_back(name);
    std::ofstream os(dir_ / name);
    if (!os) throw Error("cannot write " + (dir_ / name).string());
    os << std::setprecision(17);
    return os;
  }
  /// Registers a file written by someone else.
  std::string path(const std::string& name) {
    files_.push_back(name);
    return (dir_ / name).string();
  }
  void json(const std::string& name, const nlohmann::json& j) { open(name) << j.dump(2) << '\n'; }
  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

class Stopwatch {
 public:
  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    j_[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  const nlohmann::json& json() const { return j_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  nlohmann::json j_ = nlohmann::json::object();
};

inline std::vector<double> mu_grid(const ExperimentConfig& c) {
  if (c.mu_count < 1) throw ConfigError("mu.count", "must be positive");
  if (!(c.mu_max >= c.mu_min)) throw ConfigError("mu.max", "must not be below mu.min");
  std::vector<double> mu;
  for (int i = 0; i < c.mu_count; ++i)
    mu.push_back(c.mu_count == 1 ? c.mu_min : c.mu_min + (c.mu_max - c.mu_min) * i / (c.mu_count - 1));
  return mu;
}

inline void check_time(const ExperimentConfig& c) {
  if (!(c.T > 0)) throw ConfigError("time.T", "must be positive");
  if (!(c.dt > 0)) throw ConfigError("time.dt", "must be positive");
  const double r = c.T / c.dt;
  if (std::abs(r - std::round(r)) > 1e-9 * std::max(1.0, r)) throw ConfigError("time.dt", "T must be a multiple of dt");
}

// --- simulate --------------------------------------------------------------

inline nlohmann::json run_simulate(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks, Stopwatch& sw) {
  check_time(c);
  const Setup s = make_setup(c, c.generator);
  const CVec u0 = make_initial_state(s, c);
  sw.lap("setup");
  SimulationOptions opt;
  opt.snapshot_stride = c.snapshot_stride;
  opt.abort_on_increase = false;
  auto res = simulate(s.gen, u0, c.T, c.dt, opt);
  sw.lap("simulate");
  auto& tr = res.trace;
  nlohmann::json sum;
  const double E0 = tr.energy.front();
  sum["generator"] = to_string(s.gen.kind);
  sum["unknowns"] = s.gen.size();
  sum["steps"] = tr.t.size() - 1;
  sum["energy_initial"] = E0;
  sum["energy_final"] = tr.energy.back();
  sum["mass_drift"] = tr.mass_drift;
  sum["stiffness_drift"] = tr.stiffness_drift;
  sum["max_step_increase"] = tr.max_step_increase;
  sum["dissipation_residual"] = tr.cum_residual.back();
  const StructureReport st = check_structure(s.gen, 8, c.seed);
  sum["structure"] = {{"skew_residual", st.skew_residual},
                      {"hermitian_max", st.hermitian_max},
                      {"identity_residual", st.identity_residual}};
  checks.push_back({"structure", st.ok,
                    "hermitian max " + sci(st.hermitian_max) + ", identity " + sci(st.identity_residual)});
  if (s.gen.kind == GenKind::A0) {
    const double drift = std::max(tr.mass_drift, tr.stiffness_drift);
    checks.push_back({"conservation", drift <= 1e-10, "max drift " + sci(drift)});
  } else {
    checks.push_back({"monotone energy", tr.max_step_increase <= 1e-13 * E0,
                      "max step increase " + sci(tr.max_step_increase)});
    checks.push_back({"dissipation identity", tr.cum_residual.back() <= 1e-9 * E0,
                      "cumulative residual " + sci(tr.cum_residual.back())});
    if (tr.t.size() >= 4 && tr.energy.back() > 0) {
      const auto f = fit_exponential(tr, 0.1 * c.T, c.T);
      sum["decay_rate"] = f.rate;
      sum["decay_r2"] = f.r2;
      sum["decay_ci"] = {f.ci_low, f.ci_high};
      tr.exponential = f;
      if (c.log_k > 0) {
        const auto lf = fit_log_decay(tr, c.log_k);
        sum["log_fit"] = {{"k", lf.k},
                          {"C1_envelope", lf.C1_envelope},
                          {"C1_least_squares", lf.C1_least_squares},
                          {"r2", lf.r2},
                          {"r2_log_shape", lf.r2_log_shape},
                          {"r2_exponential", lf.r2_exponential},
                          {"exponential_dominates", lf.exponential_dominates}};
      }
    }
  }
  {
    auto os = out.open("energy.csv");
    write_energy_csv(os, tr);
  }
  if (c.snapshot_stride > 0) {
    nlohmann::json side = write_trajectory(out.path("trajectory.bin"), res.snapshot_times, res.snapshots);
    side["grid"] = to_json(s.grid);
    out.json("trajectory.json", side);
  }
  out.json("summary.json", sum);
  sw.lap("write");
  return sum;
}

// --- resolvent -------------------------------------------------------------

inline nlohmann::json run_resolvent(const ExperimentConfig& c, int jobs, Outputs& out, std::vector<Check>& checks,
                                    Stopwatch& sw) {
  const Setup s = make_setup(c, c.generator);
  sw.lap("setup");
  const auto scan = scan_resolvent(s.gen, mu_grid(c), jobs);
  sw.lap("scan");
  {
    auto os = out.open("scan.csv");
    write_scan_csv(os, scan);
  }
  nlohmann::json sum = scan_summary(scan);
  out.json("scan.json", sum);
  int finite = 0;
  for (double v : scan.norm) finite += std::isfinite(v);
  checks.push_back({"invertibility", finite == static_cast<int>(scan.mu.size()),
                    std::to_string(finite) + "/" + std::to_string(scan.mu.size()) + " finite"});
  return sum;
}

// --- observability ---------------------------------------------------------

inline nlohmann::json run_observability(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                        Stopwatch& sw) {
  check_time(c);
  const Setup s = make_setup(c, "A0");
  Observation obs;
  try {
    obs.type = parse_observation(c.obs_type);
  } catch (const InvalidArgument& e) {
    throw ConfigError("observation.type", e.what());
  }
  obs.nodes = obs.type == ObsType::BoundaryConormal && c.region == "all" ? s.grid.boundary_nodes()
                                                                          : parse_region(s.grid, c.region);
  if (c.obs_stride < 1) throw ConfigError("observation.stride", "must be at least 1");
  GramianOptions opt{c.T, c.dt, c.obs_stride,
                     c.obs_phases == "cayley" ? PhaseRule::Cayley : PhaseRule::Exact};
  if (c.obs_phases != "cayley" && c.obs_phases != "exact")
    throw ConfigError("observation.phases", "expected exact or cayley");
  sw.lap("setup");
  const auto rep = gramian(s.grid, s.a, s.gen, obs, opt);
  sw.lap("gramian");
  nlohmann::json sum = to_json(rep);
  const bool observable = rep.lambda_min > 0 && std::isfinite(rep.C_obs);
  checks.push_back({"observable", observable, "C_obs " + sci(rep.C_obs)});
  checks.push_back({"quadrature", rep.warning.empty(),
                    rep.quadrature_error_estimate ? "estimate " + sci(*rep.quadrature_error_estimate)
                                                  : "exact sampling"});
  if (!c.obs_horizons.empty()) {
    std::vector<double> x, y;
    nlohmann::json rows = nlohmann::json::array();
    for (double T : c.obs_horizons) {
      GramianOptions o = opt;
      o.T = T;
      const auto r = gramian(s.grid, s.a, s.gen, obs, o);
      x.push_back(std::sqrt(T));
      y.push_back(r.C_hid);
      rows.push_back(to_json(r));
    }
    sum["horizons"] = rows;
    if (x.size() >= 3) {
      const auto f = linalg::fit_line(x, y);
      sum["hidden_fit"] = {{"C1", f.intercept}, {"C2", f.slope}, {"r2", f.r2}};
      checks.push_back({"hidden regularity shape", f.r2 >= 0.98 && f.slope > 0, "R2 " + sci(f.r2)});
    }
    sw.lap("horizons");
  }
  out.json("observability.json", sum);
  return sum;
}

inline nlohmann::json run_product(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                  Stopwatch& sw) {
  check_time(c);
  if (c.dim != 1) throw ConfigError("grid.dim", "product-observability takes the 1D factor as its grid");
  const Setup s1 = make_setup(c, "A0");
  ExperimentConfig c2 = c;
  c2.extents = {c.product_extent};
  c2.n = {c.product_n};
  c2.potential = "zero";
  const Setup s2 = make_setup(c2, "A0");
  const NodeSet omega1 = parse_region(s1.grid, c.region);
  sw.lap("setup");
  const auto r = product_observability(s1.gen, s2.gen, omega1, c.T, c.dt, c.product_tol, c.seed);
  sw.lap("product");
  nlohmann::json sum{{"tensor_residual", r.tensor_residual}, {"C1", r.C1}, {"C2", r.C2},
                     {"ratio", r.ratio},                     {"T", r.T},   {"holds", r.holds}};
  checks.push_back({"tensor identity", r.tensor_residual <= 1e-12, "residual " + sci(r.tensor_residual)});
  checks.push_back({"product bound", r.holds, "C2/C1 " + sci(r.ratio)});
  out.json("product.json", sum);
  return sum;
}

inline nlohmann::json run_hautus(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                 Stopwatch& sw) {
  const Setup s = make_setup(c, "A0");
  const NodeSet omega = parse_region(s.grid, c.region);
  sw.lap("setup");
  if (c.hautus_aleph0.empty()) throw ConfigError("hautus.aleph0", "needs at least one value");
  const auto r = hautus_sweep(s.gen, omega, mu_grid(c), c.hautus_aleph0);
  sw.lap("sweep");
  nlohmann::json sum = to_json(r);
  checks.push_back({"frontier monotone", r.monotone, r.feasible ? "feasible" : "no global pair"});
  out.json("hautus.json", sum);
  return sum;
}

inline nlohmann::json run_multiplier(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                     Stopwatch& sw) {
  check_time(c);
  if (c.multiplier_levels.size() < 2) throw ConfigError("multiplier.levels", "needs at least two grid sizes");
  std::vector<double> res;
  nlohmann::json levels = nlohmann::json::array();
  for (int n : c.multiplier_levels) {
    ExperimentConfig ci = c;
    ci.n = {n};
    ci.initial_order = std::max(c.initial_order, 1);
    const Setup s = make_setup(ci, c.generator);
    SimulationOptions opt;
    opt.snapshot_stride = 1;
    opt.abort_on_increase = false;
    const auto run = simulate(s.gen, make_initial_state(s, ci), c.T, c.dt, opt);
    MultiplierField F;
    if (c.multiplier_field == "m") {
      if (c.multiplier_x0.empty()) throw ConfigError("multiplier.x0", "needs a point");
      F = multiplier_m(Point(c.multiplier_x0[0], c.multiplier_x0.size() > 1 ? c.multiplier_x0[1] : 0.0), c.dim);
    } else if (c.multiplier_field == "cutoff") {
      try {
        F = multiplier_cutoff(s.grid, split(c.multiplier_faces, ','), c.T, c.multiplier_delta, c.multiplier_width);
      } catch (const InvalidArgument& e) {
        throw ConfigError("multiplier.faces", e.what());
      }
    } else {
      throw ConfigError("multiplier.field", "expected m or cutoff");
    }
    const auto r = multiplier_identity_residual(s.grid, s.a, {run.snapshot_times, run.snapshots}, F);
    res.push_back(r.residual);
    nlohmann::json j = to_json(r);
    j["n"] = n;
    levels.push_back(j);
    sw.lap("level_" + std::to_string(n));
  }
  const auto orders = observed_orders(res);
  double min_order = std::numeric_limits<double>::infinity();
  for (double o : orders) min_order = std::min(min_order, o);
  nlohmann::json sum{{"levels", levels}, {"residuals", res}, {"orders", orders}};
  checks.push_back({"residual convergence", min_order >= c.multiplier_min_order, "min order " + sci(min_order)});
  out.json("multiplier.json", sum);
  return sum;
}

inline std::vector<double> s_grid(const ExperimentConfig& c) {
  std::vector<double> s;
  if (c.weight_s_half <= 0) return {0.0};
  if (c.weight_s_nodes < 2) throw ConfigError("weight.s_nodes", "needs at least two samples");
  for (int i = 0; i < c.weight_s_nodes; ++i)
    s.push_back(-c.weight_s_half + 2 * c.weight_s_half * i / (c.weight_s_nodes - 1));
  return s;
}

inline nlohmann::json run_certify(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                  Stopwatch& sw) {
  const Grid g = make_grid(c);
  const PsiFunction psi = make_psi(g, c, c.dim);
  const NodeSet region = parse_region(g, c.weight_region, "weight.region");
  const auto pts = weight_points(g, region, s_grid(c));
  WeightFunction w{psi, 1.0, c.weight_beta, c.weight_s_half > 0};
  const double threshold = subellipticity_threshold(w, pts);
  w.lambda = c.weight_lambda > 0 ? c.weight_lambda : (std::isfinite(threshold) ? std::max(2 * threshold, 1.0) : 1.0);
  std::vector<double> taus = c.weight_tau.empty() ? std::vector<double>{1.0, 10.0, 100.0} : c.weight_tau;
  const auto pc = check_pseudoconvexity(g, psi, region);
  const auto se = check_subellipticity(w, pts, taus, c.weight_directions, c.seed);
  sw.lap("certify");
  nlohmann::json sum = certification_json(pc, se);
  sum["lambda"] = w.lambda;
  sum["lambda_threshold"] = num(threshold);
  sum["psi"] = psi.name;
  sum["psi_analytic"] = psi.analytic;
  sum["psi_shift"] = psi.shift;
  sum["pseudoconvexity_positive"] = pc.positive;
  sum["pseudoconvexity_boundary_sign"] = pc.boundary_sign;
  sum["vacuous"] = se.vacuous;
  if (!psi.analytic) sum["warning"] = "finite-difference derivatives; certification is sensitive to sampling";
  checks.push_back({"sub-ellipticity", se.certified, "min margin " + sci(se.min_margin)});
  checks.push_back({"pseudo-convexity", pc.margin > 0 && pc.min_grad > 0 && pc.positive,
                    "margin " + sci(pc.margin)});
  out.json("certification.json", sum);
  return sum;
}

inline nlohmann::json run_probe(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                Stopwatch& sw) {
  const bool cyl = c.weight_s_half > 0;
  Grid X = make_grid(c);
  PsiFunction psi;
  if (cyl) {
    if (c.dim != 1) throw ConfigError("weight.s_half", "the s variable needs a 1D grid");
    psi = make_psi(X, c, 1);
    X = build_grid(2, {c.extents[0], 2 * c.weight_s_half}, {c.n[0], c.weight_s_nodes});
  } else {
    psi = make_psi(X, c, c.dim);
  }
  WeightFunction w{psi, c.weight_lambda > 0 ? c.weight_lambda : 1.0, c.weight_beta, cyl};
  const MagneticPotential a = cyl ? zero_potential(X) : make_potential_from_config(X, c);
  const NodeSet region = parse_region(X, c.weight_region, "weight.region");
  if (c.weight_bumps < 1) throw ConfigError("weight.bumps", "needs at least one test function");
  std::vector<StateField> bumps;
  try {
    bumps = random_bumps(X, region, c.weight_bumps, c.seed);
  } catch (const InvalidArgument& e) {
    throw ConfigError("weight.region", e.what());
  }
  double hmax = X.h(0);
  if (X.dim() == 2) hmax = std::max(hmax, X.h(1));
  std::vector<double> taus = c.weight_tau;
  if (taus.empty())
    for (int i = 0; i < 10; ++i) taus.push_back(2.0 * std::pow(0.25 / hmax, i / 9.0));
  for (double t : taus)
    if (t * hmax > 0.5 + 1e-12) throw ConfigError("weight.tau", "tau h must not exceed 0.5");
  sw.lap("setup");
  const auto tr = carleman_probe(X, a, w, bumps, taus, cyl ? c.weight_s_half : 0.0);
  sw.lap("probe");
  {
    auto os = out.open("carleman.csv");
    os << "tau,C,argmax\n";
    for (std::size_t i = 0; i < tr.tau.size(); ++i) os << tr.tau[i] << ',' << tr.C[i] << ',' << tr.argmax[i] << '\n';
  }
  nlohmann::json sum{{"slope", tr.slope}, {"slope_stderr", tr.slope_stderr}, {"bounded", tr.bounded},
                     {"tests", bumps.size()}, {"zero_tests", tr.zero_tests}, {"lambda", w.lambda}};
  checks.push_back({"trend non-increasing", tr.bounded, "slope " + sci(tr.slope) + " +- " + sci(tr.slope_stderr)});
  out.json("carleman.json", sum);
  return sum;
}

inline nlohmann::json run_gauge(const ExperimentConfig& c, Outputs& out, std::vector<Check>& checks,
                                Stopwatch& sw) {
  const Setup s = make_setup(c, "A0");
  const Grid& g = s.grid;
  CounterRng rng(c.seed, 5);
  const double k1 = rng.uniform(1, 4), k2 = rng.uniform(1, 4), p1 = rng.uniform(0, 2 * kPi), p2 = rng.uniform(0, 2 * kPi);
  const double A = c.gauge_amplitude;
  const RVec psi = g.sample_real([&](const Point& x) {
    return A * std::sin(k1 * x[0] + p1) * (g.dim() == 2 ? std::cos(k2 * x[1] + p2) : 1.0);
  });
  const auto shifted = gauge_shift(g, s.a, psi);
  const auto B = assemble_generator(GenKind::A0, g, shifted, DampingConfig::none(g), s.split, s.gen.scheme);
  const auto C = gauge_transform(s.gen, psi);
  const double conj = linalg::max_abs(SpMat(C.A - B.A)) / linalg::max_abs(B.A);
  checks.push_back({"gauge conjugation", conj <= 1e-12, "residual " + sci(conj)});
  nlohmann::json sum{{"conjugation_residual", conj}};
  if (g.dim() == 1) {
    const auto F = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g), s.split, s.gen.scheme);
    const auto R = gauge_transform(s.gen, removing_gauge_1d(g, s.a));
    const double red = linalg::max_abs(SpMat(R.A - F.A)) / linalg::max_abs(F.A);
    sum["reduction_residual"] = red;
    checks.push_back({"1D reduction", red <= 1e-12, "residual " + sci(red)});
  }
  if (s.gen.size() <= 3000) {
    const RVec e1 = linalg::hermitian_pencil_diag(CMat(s.gen.K), s.gen.mass).values;
    const RVec e2 = linalg::hermitian_pencil_diag(CMat(B.K), B.mass).values;
    const double sd = (e1 - e2).cwiseAbs().maxCoeff() / e1.cwiseAbs().maxCoeff();
    sum["spectral_difference"] = sd;
    checks.push_back({"spectra invariant", sd <= 1e-10, "max relative difference " + sci(sd)});
  }
  sw.lap("gauge");
  out.json("gauge.json", sum);
  return sum;
}

}  // namespace detail

/// Validates the config, runs the experiment into `out_dir`, and writes
/// manifest.json (deterministic) and timings.json (wall clock).
inline RunResult run(const ExperimentConfig& c, const std::string& out_dir, int jobs = 1) {
  bool known = false;
  for (const auto& k : experiment_kinds()) known = known || k == c.kind;
  if (!known) throw ConfigError("kind", "unknown experiment kind '" + c.kind + "'");
  if (jobs < 1) throw ConfigError("jobs", "must be at least 1");
  detail::Outputs out(out_dir);
  detail::Stopwatch sw;
  RunResult r;
  nlohmann::json sum;
  if (c.kind == "simulate") sum = detail::run_simulate(c, out, r.checks, sw);
  else if (c.kind == "resolvent-scan") sum = detail::run_resolvent(c, jobs, out, r.checks, sw);
  else if (c.kind == "observability") sum = detail::run_observability(c, out, r.checks, sw);
  else if (c.kind == "product-observability") sum = detail::run_product(c, out, r.checks, sw);
  else if (c.kind == "hautus") sum = detail::run_hautus(c, out, r.checks, sw);
  else if (c.kind == "multiplier-check") sum = detail::run_multiplier(c, out, r.checks, sw);
  else if (c.kind == "carleman-certify") sum = detail::run_certify(c, out, r.checks, sw);
  else if (c.kind == "carleman-probe") sum = detail::run_probe(c, out, r.checks, sw);
  else sum = detail::run_gauge(c, out, r.checks, sw);
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& ch : r.checks) {
    checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
    if (!ch.pass) r.exit_code = 1;
  }
  r.timings = sw.json();
  {
    std::ofstream os(out.dir() / "timings.json");
    os << r.timings.dump(2) << '\n';
  }
  auto files = out.files();
  files.push_back("timings.json");
  // the output directory is where the manifest lives, so it is not echoed
  auto config_echo = config_map(c);
  config_echo.erase("output");
  r.manifest = {{"kind", c.kind},
                {"version", kLabVersion},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"seed", c.seed},
                {"config", config_echo},
                {"outputs", files},
                {"checks", checks},
                {"summary", sum},
                {"timings_file", "timings.json"},
                {"status", r.exit_code == 0 ? "pass" : "fail"}};
  std::ofstream os(out.dir() / "manifest.json");
  os << r.manifest.dump(2) << '\n';
  return r;
}

/// One line per check plus the fitted constants of the experiment.
inline std::string report(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path);
  nlohmann::json m;
  try {
    in >> m;
  } catch (const std::exception& e) {
    throw Error("corrupt manifest " + manifest_path + ": " + e.what());
  }
  if (!m.is_object() || !m.contains("kind") || !m.contains("checks"))
    throw Error("corrupt manifest " + manifest_path + ": missing kind or checks");
  std::ostringstream os;
  os << m["kind"].get<std::string>() << " (" << m.value("status", "?") << ")\n";
  for (const auto& ch : m["checks"])
    os << "  " << ch.value("name", "?") << ": " << (ch.value("pass", false) ? "PASS" : "FAIL") << " ("
       << ch.value("detail", "") << ")\n";
  const auto& s = m.value("summary", nlohmann::json::object());
  auto line = [&](const char* label, const char* key) {
    if (s.contains(key) && !s[key].is_null()) os << "  " << label << " = " << s[key].dump() << '\n';
  };
  line("growth exponent p_hat", "p_hat");
  line("C_hat", "C_hat");
  line("K_hat", "K_hat");
  line("decay rate", "decay_rate");
  line("C_obs", "C_obs");
  line("C_hid", "C_hid");
  line("C2/C1", "ratio");
  line("pseudo-convexity margin", "pseudoconvexity_margin");
  line("lambda", "lambda");
  line("lambda threshold", "lambda_threshold");
  line("trend slope", "slope");
  line("observed orders", "orders");
  if (s.contains("hidden_fit")) os << "  hidden regularity fit = " << s["hidden_fit"].dump() << '\n';
  return os.str();
}

}  // namespace magschro
