#pragma once
// Verification harness: log-log order fits, the logarithmic-horizon
// (Gronwall) experiment, and the unperturbed identity suite.  Reports
// serialise to JSON with stable keys.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rotpend/flow.hpp"
#include "rotpend/geometry.hpp"
#include "rotpend/melnikov.hpp"
#include "rotpend/model.hpp"

namespace rotpend {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Order fits

struct OrderFit {
  std::vector<double> eps, err;
  double slope = 0.0;
  double intercept = 0.0;  // of log e against log eps
  double r2 = 0.0;
  std::size_t excluded = 0;  // points with e <= 0
  std::string note;
};

/// Least-squares slope of log e against log eps.  Needs at least four
/// usable points spanning 1.5 decades of eps.
inline OrderFit order_fit(const std::vector<std::pair<double, double>>& samples) {
  OrderFit f;
  for (const auto& [e, v] : samples) {
    if (!(e > 0.0)) throw ConfigError("order_fit: eps values must be positive");
    if (!(v > 0.0) || !std::isfinite(v)) {
      ++f.excluded;
      continue;
    }
    f.eps.push_back(e);
    f.err.push_back(v);
  }
  if (f.excluded) f.note = std::to_string(f.excluded) + " non-positive error(s) excluded";
  if (f.eps.size() < 4) throw ConfigError("order_fit: needs at least 4 usable points, got " + std::to_string(f.eps.size()));
  const auto [lo, hi] = std::minmax_element(f.eps.begin(), f.eps.end());
  if (std::log10(*hi / *lo) < 1.5 - 1e-12) throw ConfigError("order_fit: eps grid must span at least 1.5 decades");
  const double n = static_cast<double>(f.eps.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < f.eps.size(); ++k) {
    const double x = std::log(f.eps[k]), y = std::log(f.err[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double vx = n * sxx - sx * sx;
  f.slope = (n * sxy - sx * sy) / vx;
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (std::size_t k = 0; k < f.eps.size(); ++k) {
    const double x = std::log(f.eps[k]), y = std::log(f.err[k]);
    const double r = y - (f.intercept + f.slope * x);
    ss_res += r * r;
    ss_tot += (y - ybar) * (y - ybar);
  }
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

inline nlohmann::json to_json(const OrderFit& f) {
  return {{"eps", f.eps}, {"error", f.err}, {"slope", f.slope}, {"intercept", f.intercept},
          {"r2", f.r2},   {"excluded", f.excluded}, {"note", f.note}};
}

// ---------------------------------------------------------------------------
// Logarithmic-horizon experiment

struct GronwallParams {
  double k = 0.5;     // horizon k ln(1/eps)
  double rho0 = 0.5;  // exponent of the bound
  double c = 0.0;     // initial offset constant (identical starts)
  double C0 = 1.0;    // declared Lipschitz constant of the unperturbed field
  double C1 = 2.0;    // declared bound on |X1|
  std::size_t samples = 200;
};

struct GronwallReport {
  double eps = 0.0;
  double horizon = 0.0;
  double max_deviation = 0.0;
  double time_of_max = 0.0;
  GronwallParams params;
  double K = 0.0;
  double bound = 0.0;
  bool pass = false;
};

inline GronwallReport gronwall_experiment(const SystemSpec& sys, const PerturbationField& field,
                                          const ExtendedState& z0, double eps, const GronwallParams& gp = {},
                                          const IntegratorConfig& cfg = {}) {
  if (!(gp.C0 > 0.0)) throw ConfigError("gronwall: C0 must be positive");
  if (!(gp.rho0 > 0.0 && gp.rho0 < 1.0)) throw ConfigError("gronwall: rho0 must lie in (0, 1)");
  if (!(gp.k > 0.0) || gp.k > (1.0 - gp.rho0) / gp.C0 + 1e-15)
    throw ConfigError("gronwall: k must satisfy 0 < k <= (1 - rho0)/C0");
  if (gp.samples < 2) throw ConfigError("gronwall: need at least 2 samples");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("gronwall: eps must lie in [0, 1)");
  GronwallReport r;
  r.eps = eps;
  r.params = gp;
  r.K = gp.c + gp.C1 / gp.C0;
  r.bound = eps == 0.0 ? 0.0 : r.K * std::pow(eps, gp.rho0);
  if (eps == 0.0) {
    r.pass = true;
    return r;
  }
  r.horizon = gp.k * std::log(1.0 / eps);
  State a = z0.pack(), b = a;
  const Rhs fe = perturbed_system(sys, field, eps), f0 = perturbed_system(sys, field, 0.0);
  const double dt = r.horizon / static_cast<double>(gp.samples - 1);
  for (std::size_t i = 1; i < gp.samples; ++i) {
    const double t0 = z0.t + dt * static_cast<double>(i - 1);
    integrate(fe, a, t0, dt, cfg);
    integrate(f0, b, t0, dt, cfg);
    double dev = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) dev = std::max(dev, std::abs(a[j] - b[j]));
    if (dev > r.max_deviation) {
      r.max_deviation = dev;
      r.time_of_max = dt * static_cast<double>(i);
    }
  }
  r.pass = r.max_deviation <= r.bound;
  return r;
}

inline nlohmann::json to_json(const GronwallReport& r) {
  return {{"eps", r.eps},
          {"horizon", r.horizon},
          {"max_deviation", r.max_deviation},
          {"time_of_max", r.time_of_max},
          {"k", r.params.k},
          {"rho0", r.params.rho0},
          {"c", r.params.c},
          {"C0", r.params.C0},
          {"C1", r.params.C1},
          {"K", r.K},
          {"bound", r.bound},
          {"pass", r.pass}};
}

// ---------------------------------------------------------------------------
// Identity suite

struct Check {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string diagnosis;
};

struct IdentityReport {
  std::vector<Check> checks;
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

/// Slope of log(error) against log(step) for fixed-step RKF78 along a pendulum orbit.
inline double integrator_order_slope(const SystemSpec& sys) {
  const std::size_t n = sys.n();
  ExtendedState z = ExtendedState::zeros(sys);
  for (std::size_t i = 0; i < n; ++i) {
    z.p[i] = 0.12;
    z.q[i] = 0.3;
  }
  for (auto& v : z.I) v = 0.5;
  const Rhs f = perturbed_system(sys, zero_field(), 0.0);
  const double span = 4.0;
  State ref = z.pack();
  IntegratorConfig tight;
  tight.atol = tight.rtol = 1e-15;
  tight.max_step = 0.05;
  integrate(f, ref, 0.0, span, tight);
  std::vector<double> hs, es;
  for (std::size_t steps : {4u, 6u, 8u, 11u, 16u}) {
    State v = z.pack();
    integrate_fixed(f, v, 0.0, span, steps);
    double e = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) e = std::max(e, std::abs(v[j] - ref[j]));
    hs.push_back(span / static_cast<double>(steps));
    es.push_back(e);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(hs.size());
  for (std::size_t k = 0; k < hs.size(); ++k) {
    const double x = std::log(hs[k]), y = std::log(es[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

struct IdentitySuiteConfig {
  /// Replaces every bound when set (bounds are upper limits, so looser values still pass).
  std::optional<double> tolerance;
  GeometryConfig geometry{};
};

/// Checks that must hold for the unperturbed system.  Never throws: a
/// failing stage is recorded with its diagnosis.
inline IdentityReport identity_suite(const SystemSpec& sys, const IdentitySuiteConfig& cfg = {}) {
  IdentityReport rep;
  auto bound = [&](double b) { return cfg.tolerance ? *cfg.tolerance : b; };
  auto run = [&](const std::string& name, double b, auto&& measure, bool lower = false) {
    Check c;
    c.name = name;
    c.bound = lower ? b : bound(b);
    try {
      c.measured = measure();
      c.pass = lower ? c.measured >= c.bound : c.measured <= c.bound;
      if (!c.pass)
        c.diagnosis = "measured " + std::to_string(c.measured) + (lower ? " below " : " above ") +
                      std::to_string(c.bound);
    } catch (const std::exception& e) {
      c.pass = false;
      c.measured = std::numeric_limits<double>::quiet_NaN();
      c.diagnosis = e.what();
    }
    rep.checks.push_back(std::move(c));
  };

  run("rates", 0.0, [&] {
    const auto r = rates(sys, cfg.geometry.mu_c);
    if (!r.ordered()) throw NumericalError("rate ordering violated", "rates", "");
    return 0.0;
  });

  const std::size_t n = sys.n(), d = sys.d();
  std::vector<double> I(d, 0.5), th(d, 0.25);

  run("action_invariance", 0.0, [&] {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      std::vector<double> z(sys.state_size()), dz(sys.state_size());
      for (double& v : z) v = u(rng);
      unperturbed_rhs(sys, z, dz);
      for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(dz[2 * n + j]));
    }
    return worst;
  });

  run("energy_conservation", 1e-10, [&] {
    ExtendedState z = ExtendedState::zeros(sys);
    for (std::size_t i = 0; i < n; ++i) {
      z.p[i] = 0.1;
      z.q[i] = 0.2;
    }
    z.I = I;
    z.theta = th;
    const double e0 = total_energy(sys, z.pack());
    const auto out = flow_perturbed(sys, zero_field(), z, 50.0, 0.0);
    return std::abs(total_energy(sys, out.pack()) - e0);
  });

  run("separatrix_residual", 1e-10, [&] {
    const auto sep = separatrix(sys);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (double tau = -10.0; tau <= 10.0; tau += 0.37) {
        double p, q;
        sep.eval(i, tau, p, q);
        const auto& P = sys.penduli[i];
        worst = std::max(worst, std::abs(p * p / 2 + P.potential.value(q)));
      }
    return worst;
  });

  if (n == 1) {
    run("chart_determinant", 1e-9, [&] {
      std::mt19937 rng(5);
      std::uniform_real_distribution<double> uy(-0.01, 0.01), ux(-3.0, 3.0);
      double worst = 0.0;
      for (int k = 0; k < 100; ++k)
        worst = std::max(worst, std::abs(chart_point(sys.penduli[0], uy(rng), ux(rng)).det() - 1.0));
      return worst;
    });
    run("scattering_identity", 1e-9, [&] {
      const auto s = scattering_map_numeric(sys, zero_field(), I, th, 0.0, 0.0, 0.3, cfg.geometry);
      double worst = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max({worst, std::abs(s.I_plus[j] - I[j]), std::abs(s.theta_plus[j] - th[j])});
      return worst;
    });
  }

  run("operator_linearity", 1e-12, [&] {
    auto sep = std::make_shared<const SeparatrixOrbit>(separatrix(sys));
    std::vector<double> tau(n, 0.4);
    const auto foot = torus_orbit(sys, I, th, 0.1);
    const auto pt = separatrix_orbit(sys, sep, tau, I, th, 0.1);
    const auto dims = sys.dims();
    const auto F = exprs::parse("cos(2*pi*q1)*sin(2*pi*theta1)", dims);
    const auto G = exprs::parse("p1^2 + cos(2*pi*q1 - t)", dims);
    const auto H = exprs::parse("2.5*(cos(2*pi*q1)*sin(2*pi*theta1)) - 0.75*(p1^2 + cos(2*pi*q1 - t))", dims);
    QuadratureConfig q;
    q.tol = 1e-14;
    q.rate = slowest_rate(*sep);
    const double f = master_plus(observable(F), foot, pt, q).value[0];
    const double g = master_plus(observable(G), foot, pt, q).value[0];
    const double h = master_plus(observable(H), foot, pt, q).value[0];
    return std::abs(h - (2.5 * f - 0.75 * g));
  });

  run("integrator_order", 6.5, [&] { return integrator_order_slope(sys); }, true);
  return rep;
}

inline nlohmann::json to_json(const IdentityReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) {
    nlohmann::json j{{"name", c.name}, {"bound", c.bound}, {"pass", c.pass}, {"diagnosis", c.diagnosis}};
    if (std::isfinite(c.measured))
      j["measured"] = c.measured;
    else
      j["measured"] = nullptr;
    checks.push_back(std::move(j));
  }
  return {{"checks", checks}, {"pass", r.pass()}};
}

/// One acceptance-style record: criterion id, inputs, measured, bound, pass.
inline nlohmann::json criterion_record(const std::string& id, nlohmann::json inputs, nlohmann::json measured,
                                       nlohmann::json bound, bool pass) {
  return {{"schema_version", kReportSchemaVersion},
          {"criterion", id},
          {"inputs", std::move(inputs)},
          {"measured", std::move(measured)},
          {"bound", std::move(bound)},
          {"pass", pass}};
}

}  // namespace rotpend
