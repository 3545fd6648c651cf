#pragma once
// Run configuration: a TOML file with [system], [[pendulum]], [perturbation],
// [numeric], [experiment] and [output] tables.  Unknown keys are errors.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "rotpend/errors.hpp"
#include "rotpend/exprs.hpp"
#include "rotpend/geometry.hpp"
#include "rotpend/hamgen.hpp"
#include "rotpend/melnikov.hpp"
#include "rotpend/model.hpp"
#include "rotpend/verify.hpp"

namespace rotpend {

struct Sample {
  std::vector<double> I, theta;
  double t = 0.0;
  std::vector<double> tau;  // τ guess, n entries
  double x = 0.0;           // x guess on the fibre (n = 1)
};

struct PerturbationBlock {
  std::string mode = "hamiltonian";  // hamiltonian | components | dissipation
  std::string H1 = "cos(2*pi*q1)*(cos(2*pi*theta1) + 0.5*cos(2*pi*theta1 - 2*pi*t))";
  std::vector<std::string> components;
  double gamma_p = 1.0, gamma_q = 0.0, gamma_I = 1.0;
  double C1 = 2.0;  // declared bound on |X1|, reporting only
};

struct NumericBlock {
  IntegratorConfig integrator{};
  MelnikovConfig melnikov{};
  HamgenConfig hamgen{};
  GeometryConfig geometry{};
  std::optional<double> identity_tolerance;
  double eps_max = 0.1;
};

struct ExperimentBlock {
  std::vector<double> eps{1e-2, 3e-3, 1e-3, 3e-4};
  std::vector<Sample> samples;
  GronwallParams gronwall{};
  ExtendedState gronwall_start;
};

struct OutputBlock {
  std::string dir = "out";
  std::string format = "csv";
};

struct RunConfig {
  SystemSpec system = SystemSpec::standard();
  PerturbationBlock perturbation;
  NumericBlock numeric;
  ExperimentBlock experiment;
  OutputBlock output;

  PerturbationField field() const {
    const auto& pb = perturbation;
    PerturbationField f;
    if (pb.mode == "hamiltonian") {
      f = hamiltonian_to_field(system, exprs::parse(pb.H1, system.dims()));
    } else if (pb.mode == "components") {
      std::vector<exprs::Expr> comps;
      for (const auto& c : pb.components) comps.push_back(exprs::parse(c, system.dims()));
      f = components_field(system, std::move(comps));
    } else {
      f = dissipation_field(system, pb.gamma_p, pb.gamma_I, pb.gamma_q);
    }
    f.C1 = pb.C1;
    return f;
  }

  std::optional<exprs::Expr> hamiltonian() const {
    if (perturbation.mode != "hamiltonian") return std::nullopt;
    return exprs::parse(perturbation.H1, system.dims());
  }

  void validate() const;
};

namespace detail {

inline void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  const std::set<std::string_view> ok(allowed);
  for (const auto& [k, v] : t)
    if (!ok.count(k.str())) throw ConfigError("unknown key '" + std::string(k.str()) + "' in " + where);
}

inline double get_number(const toml::table& t, std::string_view key, double fallback, const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (auto v = node->value<double>()) return *v;
  throw ConfigError(where + "." + std::string(key) + " must be a number");
}

inline std::size_t get_count(const toml::table& t, std::string_view key, std::size_t fallback,
                             const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  const auto v = node->value_exact<int64_t>();
  if (!v || *v < 0) throw ConfigError(where + "." + std::string(key) + " must be a non-negative integer");
  return static_cast<std::size_t>(*v);
}

inline std::string get_string(const toml::table& t, std::string_view key, std::string fallback,
                              const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (auto v = node->value_exact<std::string>()) return *v;
  throw ConfigError(where + "." + std::string(key) + " must be a string");
}

inline bool get_bool(const toml::table& t, std::string_view key, bool fallback, const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (auto v = node->value_exact<bool>()) return *v;
  throw ConfigError(where + "." + std::string(key) + " must be true or false");
}

/// Numbers, flattened one level so that matrices may be written as [[..], [..]].
inline std::optional<std::vector<double>> get_numbers(const toml::table& t, std::string_view key,
                                                      const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  const std::string name = where + "." + std::string(key);
  if (auto v = node->value<double>()) return std::vector<double>{*v};
  const auto* arr = node->as_array();
  if (!arr) throw ConfigError(name + " must be a number or an array of numbers");
  std::vector<double> out;
  for (const auto& e : *arr) {
    if (auto v = e.value<double>()) {
      out.push_back(*v);
    } else if (const auto* row = e.as_array()) {
      for (const auto& x : *row) {
        auto v2 = x.value<double>();
        if (!v2) throw ConfigError(name + " must contain only numbers");
        out.push_back(*v2);
      }
    } else {
      throw ConfigError(name + " must contain only numbers");
    }
  }
  return out;
}

inline const toml::table* get_table(const toml::table& t, std::string_view key, const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return nullptr;
  if (const auto* tb = node->as_table()) return tb;
  throw ConfigError(where + "." + std::string(key) + " must be a table");
}

inline const toml::array* get_table_array(const toml::table& t, std::string_view key, const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return nullptr;
  const auto* arr = node->as_array();
  if (!arr || !arr->is_array_of_tables()) throw ConfigError(where + "." + std::string(key) + " must be [[" +
                                                            std::string(key) + "]] tables");
  return arr;
}

inline Sample default_sample(const SystemSpec& sys) {
  Sample s;
  s.I.assign(sys.d(), 0.35);
  s.theta.assign(sys.d(), 0.6);
  s.t = 0.1;
  s.tau.assign(sys.n(), 0.0);
  return s;
}

}  // namespace detail

inline void RunConfig::validate() const {
  system.validate();
  const auto& pb = perturbation;
  if (pb.mode != "hamiltonian" && pb.mode != "components" && pb.mode != "dissipation")
    throw ConfigError("perturbation.mode must be hamiltonian, components or dissipation");
  if (pb.mode == "components" && pb.components.size() != system.state_size())
    throw ConfigError("perturbation.components needs " + std::to_string(system.state_size()) + " expressions");
  if (!(pb.C1 >= 0.0)) throw ConfigError("perturbation.C1 must be non-negative");
  try {
    (void)field();
  } catch (const exprs::ParseError& e) {
    throw ConfigError(std::string("perturbation: ") + e.what());
  }
  numeric.integrator.validate();
  numeric.melnikov.quad.validate();
  numeric.hamgen.quad.validate();
  numeric.geometry.validate();
  if (numeric.identity_tolerance && !(*numeric.identity_tolerance > 0.0))
    throw ConfigError("numeric.identity_tolerance must be positive");
  if (!(numeric.eps_max > 0.0 && numeric.eps_max < 1.0)) throw ConfigError("numeric.eps_max must lie in (0, 1)");
  for (double e : experiment.eps)
    if (!(e >= 0.0 && e <= numeric.eps_max))
      throw ConfigError("eps " + std::to_string(e) + " outside [0, eps_max = " + std::to_string(numeric.eps_max) +
                        "]");
  for (std::size_t k = 0; k < experiment.samples.size(); ++k) {
    const auto& s = experiment.samples[k];
    if (s.I.size() != system.d() || s.theta.size() != system.d() || s.tau.size() != system.n())
      throw ConfigError("experiment.sample[" + std::to_string(k) + "]: I and theta need d entries, tau needs n");
  }
  const auto& z = experiment.gronwall_start;
  if (z.p.size() != system.n() || z.q.size() != system.n() || z.I.size() != system.d() ||
      z.theta.size() != system.d())
    throw ConfigError("experiment.gronwall start has the wrong dimensions");
  const auto& gp = experiment.gronwall;
  if (!(gp.C0 > 0.0) || !(gp.rho0 > 0.0 && gp.rho0 < 1.0) || !(gp.k > 0.0) || gp.k > (1.0 - gp.rho0) / gp.C0 + 1e-15)
    throw ConfigError("experiment.gronwall needs C0 > 0, 0 < rho0 < 1 and 0 < k <= (1 - rho0)/C0");
  if (gp.samples < 2) throw ConfigError("experiment.gronwall.samples must be >= 2");
  if (output.format != "csv" && output.format != "json") throw ConfigError("output.format must be csv or json");
}

inline RunConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  toml::table root;
  try {
    root = toml::parse(text, std::string_view(source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  using namespace detail;
  check_keys(root, {"system", "pendulum", "perturbation", "numeric", "experiment", "output"}, "top level");
  RunConfig rc;

  // system
  std::size_t d = 1;
  double mu_c = rc.numeric.geometry.mu_c;
  if (const auto* t = get_table(root, "system", "")) {
    check_keys(*t, {"d", "h0_c", "h0_g", "h0_A", "h0_T", "mu_c"}, "[system]");
    d = get_count(*t, "d", 1, "system");
    if (d < 1) throw ConfigError("system.d must be >= 1");
    rc.system.rotator = RotatorSpec::quadratic(d);
    auto& r = rc.system.rotator;
    r.c = get_number(*t, "h0_c", 0.0, "system");
    if (auto g = get_numbers(*t, "h0_g", "system")) r.g = *g;
    if (auto A = get_numbers(*t, "h0_A", "system")) r.A = *A;
    if (auto T = get_numbers(*t, "h0_T", "system")) r.T = *T;
    if (r.g.size() != d || r.A.size() != d * d || (!r.T.empty() && r.T.size() != d * d * d))
      throw ConfigError("system: h0_g needs d, h0_A d*d and h0_T d*d*d entries");
    r.normalise();
    mu_c = get_number(*t, "mu_c", mu_c, "system");
  }
  if (const auto* arr = get_table_array(root, "pendulum", "")) {
    rc.system.penduli.clear();
    std::size_t i = 0;
    for (const auto& node : *arr) {
      const auto& t = *node.as_table();
      const std::string where = "[[pendulum]] #" + std::to_string(++i);
      check_keys(t, {"potential", "a", "b", "sign"}, where);
      Pendulum P;
      const auto kind = get_string(t, "potential", "cosine", where);
      if (kind == "cosine") {
        if (t.contains("a") || t.contains("b")) throw ConfigError(where + ": a/b only apply to potential = \"trig\"");
        P.potential = PotentialSpec::cosine();
      } else if (kind == "trig") {
        const auto a = get_numbers(t, "a", where).value_or(std::vector<double>{});
        const auto b = get_numbers(t, "b", where).value_or(std::vector<double>{});
        if (b.size() > a.size()) throw ConfigError(where + ": b has more harmonics than a");
        P.potential = PotentialSpec::trig(a, b);
      } else {
        throw ConfigError(where + ".potential must be \"cosine\" or \"trig\"");
      }
      const double s = get_number(t, "sign", 1.0, where);
      if (s != 1.0 && s != -1.0) throw ConfigError(where + ".sign must be 1 or -1");
      P.sign = static_cast<int>(s);
      rc.system.penduli.push_back(std::move(P));
    }
  }

  // perturbation
  auto& pb = rc.perturbation;
  if (const auto* t = get_table(root, "perturbation", "")) {
    check_keys(*t, {"mode", "H1", "components", "gamma_p", "gamma_q", "gamma_I", "C1"}, "[perturbation]");
    pb.mode = get_string(*t, "mode", pb.mode, "perturbation");
    pb.H1 = get_string(*t, "H1", pb.H1, "perturbation");
    if (const auto* node = t->get("components")) {
      const auto* a = node->as_array();
      if (!a) throw ConfigError("perturbation.components must be an array of strings");
      for (const auto& e : *a) {
        auto s = e.value_exact<std::string>();
        if (!s) throw ConfigError("perturbation.components must be an array of strings");
        pb.components.push_back(*s);
      }
    }
    pb.gamma_p = get_number(*t, "gamma_p", pb.gamma_p, "perturbation");
    pb.gamma_q = get_number(*t, "gamma_q", pb.gamma_q, "perturbation");
    pb.gamma_I = get_number(*t, "gamma_I", pb.gamma_I, "perturbation");
    pb.C1 = get_number(*t, "C1", pb.C1, "perturbation");
  }

  // numeric
  auto& nb = rc.numeric;
  nb.geometry.mu_c = mu_c;
  if (const auto* t = get_table(root, "numeric", "")) {
    const std::string w = "numeric";
    check_keys(*t,
               {"atol", "rtol", "initial_step", "max_step", "max_steps", "quad_tol", "max_cutoff", "half_line_theta",
                "hamgen_quad_tol", "newton_tol", "newton_max_iter", "min_abs_det", "delta", "horizon_factor",
                "min_horizon", "max_horizon", "band_K", "bisect_tol", "classify_margin", "root_tol", "x_step",
                "x_window", "degeneracy", "outer_tol", "outer_max_iter", "identity_tolerance", "eps_max"},
               "[numeric]");
    auto& ic = nb.integrator;
    ic.atol = get_number(*t, "atol", ic.atol, w);
    ic.rtol = get_number(*t, "rtol", ic.rtol, w);
    ic.initial_step = get_number(*t, "initial_step", ic.initial_step, w);
    ic.max_step = get_number(*t, "max_step", ic.max_step, w);
    ic.max_steps = get_count(*t, "max_steps", ic.max_steps, w);
    auto& mq = nb.melnikov.quad;
    mq.tol = get_number(*t, "quad_tol", mq.tol, w);
    mq.max_cutoff = get_number(*t, "max_cutoff", mq.max_cutoff, w);
    nb.melnikov.half_line_theta = get_bool(*t, "half_line_theta", false, w);
    auto& hg = nb.hamgen;
    hg.quad.tol = get_number(*t, "hamgen_quad_tol", hg.quad.tol, w);
    hg.quad.max_cutoff = mq.max_cutoff;
    hg.newton_tol = get_number(*t, "newton_tol", hg.newton_tol, w);
    hg.newton_max_iter = get_count(*t, "newton_max_iter", hg.newton_max_iter, w);
    hg.min_abs_det = get_number(*t, "min_abs_det", hg.min_abs_det, w);
    auto& g = nb.geometry;
    g.delta = get_number(*t, "delta", g.delta, w);
    g.horizon_factor = get_number(*t, "horizon_factor", g.horizon_factor, w);
    g.min_horizon = get_number(*t, "min_horizon", g.min_horizon, w);
    g.max_horizon = get_number(*t, "max_horizon", g.max_horizon, w);
    g.band_K = get_number(*t, "band_K", g.band_K, w);
    g.bisect_tol = get_number(*t, "bisect_tol", g.bisect_tol, w);
    g.classify_margin = get_number(*t, "classify_margin", g.classify_margin, w);
    g.root_tol = get_number(*t, "root_tol", g.root_tol, w);
    g.x_step = get_number(*t, "x_step", g.x_step, w);
    g.x_window = get_number(*t, "x_window", g.x_window, w);
    g.degeneracy = get_number(*t, "degeneracy", g.degeneracy, w);
    g.outer_tol = get_number(*t, "outer_tol", g.outer_tol, w);
    g.outer_max_iter = get_count(*t, "outer_max_iter", g.outer_max_iter, w);
    if (t->contains("identity_tolerance")) nb.identity_tolerance = get_number(*t, "identity_tolerance", 0.0, w);
    nb.eps_max = get_number(*t, "eps_max", nb.eps_max, w);
  }
  nb.geometry.integrator = nb.integrator;

  // experiment
  auto& ex = rc.experiment;
  ex.gronwall_start = ExtendedState::zeros(rc.system);
  for (auto& v : ex.gronwall_start.p) v = 0.1;
  for (auto& v : ex.gronwall_start.q) v = 0.1;
  for (auto& v : ex.gronwall_start.I) v = 1.0;
  if (const auto* t = get_table(root, "experiment", "")) {
    check_keys(*t, {"eps", "sample", "gronwall"}, "[experiment]");
    if (auto e = get_numbers(*t, "eps", "experiment")) ex.eps = *e;
    if (const auto* arr = get_table_array(*t, "sample", "experiment")) {
      std::size_t i = 0;
      for (const auto& node : *arr) {
        const auto& st = *node.as_table();
        const std::string where = "[[experiment.sample]] #" + std::to_string(++i);
        check_keys(st, {"I", "theta", "t", "tau", "x"}, where);
        Sample s = default_sample(rc.system);
        if (auto v = get_numbers(st, "I", where)) s.I = *v;
        if (auto v = get_numbers(st, "theta", where)) s.theta = *v;
        s.t = get_number(st, "t", s.t, where);
        if (auto v = get_numbers(st, "tau", where)) s.tau = *v;
        s.x = get_number(st, "x", s.tau.empty() ? 0.0 : s.tau[0], where);
        ex.samples.push_back(std::move(s));
      }
    }
    if (const auto* gt = get_table(*t, "gronwall", "experiment")) {
      const std::string w = "experiment.gronwall";
      check_keys(*gt, {"k", "rho0", "c", "C0", "samples", "p", "q", "I", "theta", "t"}, "[experiment.gronwall]");
      auto& gp = ex.gronwall;
      gp.k = get_number(*gt, "k", gp.k, w);
      gp.rho0 = get_number(*gt, "rho0", gp.rho0, w);
      gp.c = get_number(*gt, "c", gp.c, w);
      gp.C0 = get_number(*gt, "C0", gp.C0, w);
      gp.samples = get_count(*gt, "samples", gp.samples, w);
      auto& z = ex.gronwall_start;
      if (auto v = get_numbers(*gt, "p", w)) z.p = *v;
      if (auto v = get_numbers(*gt, "q", w)) z.q = *v;
      if (auto v = get_numbers(*gt, "I", w)) z.I = *v;
      if (auto v = get_numbers(*gt, "theta", w)) z.theta = *v;
      z.t = get_number(*gt, "t", z.t, w);
    }
  }
  if (ex.samples.empty()) ex.samples.push_back(default_sample(rc.system));
  ex.gronwall.C1 = pb.C1;

  if (const auto* t = get_table(root, "output", "")) {
    check_keys(*t, {"dir", "format"}, "[output]");
    rc.output.dir = get_string(*t, "dir", rc.output.dir, "output");
    rc.output.format = get_string(*t, "format", rc.output.format, "output");
  }
  rc.validate();
  return rc;
}

/// Built-in configuration used when no file is given.
inline RunConfig default_config() { return parse_config(""); }

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// The resolved configuration, with every default filled in.
inline nlohmann::json to_json(const RunConfig& rc) {
  using nlohmann::json;
  const auto& r = rc.system.rotator;
  json pend = json::array();
  for (const auto& P : rc.system.penduli) {
    json j{{"potential", P.potential.is_closed_form() ? "cosine" : "trig"}, {"sign", P.sign}};
    if (!P.potential.is_closed_form()) {
      j["a"] = P.potential.a;
      j["b"] = P.potential.b;
    }
    pend.push_back(j);
  }
  const auto& pb = rc.perturbation;
  json pert{{"mode", pb.mode}, {"C1", pb.C1}};
  if (pb.mode == "hamiltonian") pert["H1"] = pb.H1;
  if (pb.mode == "components") pert["components"] = pb.components;
  if (pb.mode == "dissipation") {
    pert["gamma_p"] = pb.gamma_p;
    pert["gamma_q"] = pb.gamma_q;
    pert["gamma_I"] = pb.gamma_I;
  }
  const auto& nb = rc.numeric;
  const auto& g = nb.geometry;
  json num{{"atol", nb.integrator.atol},
           {"rtol", nb.integrator.rtol},
           {"initial_step", nb.integrator.initial_step},
           {"max_step", nb.integrator.max_step},
           {"max_steps", nb.integrator.max_steps},
           {"quad_tol", nb.melnikov.quad.tol},
           {"max_cutoff", nb.melnikov.quad.max_cutoff},
           {"half_line_theta", nb.melnikov.half_line_theta},
           {"hamgen_quad_tol", nb.hamgen.quad.tol},
           {"newton_tol", nb.hamgen.newton_tol},
           {"newton_max_iter", nb.hamgen.newton_max_iter},
           {"min_abs_det", nb.hamgen.min_abs_det},
           {"delta", g.delta},
           {"horizon_factor", g.horizon_factor},
           {"min_horizon", g.min_horizon},
           {"max_horizon", g.max_horizon},
           {"band_K", g.band_K},
           {"bisect_tol", g.bisect_tol},
           {"classify_margin", g.classify_margin},
           {"root_tol", g.root_tol},
           {"x_step", g.x_step},
           {"x_window", g.x_window},
           {"degeneracy", g.degeneracy},
           {"outer_tol", g.outer_tol},
           {"outer_max_iter", g.outer_max_iter},
           {"eps_max", nb.eps_max}};
  num["identity_tolerance"] = nb.identity_tolerance ? json(*nb.identity_tolerance) : json(nullptr);
  json samples = json::array();
  for (const auto& s : rc.experiment.samples)
    samples.push_back({{"I", s.I}, {"theta", s.theta}, {"t", s.t}, {"tau", s.tau}, {"x", s.x}});
  const auto& gp = rc.experiment.gronwall;
  const auto& z = rc.experiment.gronwall_start;
  return {{"system",
           {{"d", r.d}, {"h0_c", r.c}, {"h0_g", r.g}, {"h0_A", r.A}, {"h0_T", r.T}, {"mu_c", g.mu_c}}},
          {"pendulum", pend},
          {"perturbation", pert},
          {"numeric", num},
          {"experiment",
           {{"eps", rc.experiment.eps},
            {"sample", samples},
            {"gronwall",
             {{"k", gp.k},
              {"rho0", gp.rho0},
              {"c", gp.c},
              {"C0", gp.C0},
              {"samples", gp.samples},
              {"p", z.p},
              {"q", z.q},
              {"I", z.I},
              {"theta", z.theta},
              {"t", z.t}}}}},
          {"output", {{"dir", rc.output.dir}, {"format", rc.output.format}}}};
}

}  // namespace rotpend
