#pragma once
// Drivers behind the command-line subcommands.  Each returns a table of rows
// plus a JSON summary; write_outputs turns that into CSV or JSON files.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "rotpend/config.hpp"
#include "rotpend/flow.hpp"
#include "rotpend/geometry.hpp"
#include "rotpend/hamgen.hpp"
#include "rotpend/melnikov.hpp"
#include "rotpend/verify.hpp"

namespace rotpend {

enum ExitCode : int { kExitOk = 0, kExitNumerical = 1, kExitConfig = 2 };

/// Column names plus rows of numbers, strings or nulls (empty CSV cells).
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;
};

struct CommandResult {
  std::string name;
  Table table;
  nlohmann::json summary = nlohmann::json::object();
  int exit_code = kExitOk;
};

/// Runs job(i) for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

namespace detail {

inline void indexed(std::vector<std::string>& cols, const std::string& base, std::size_t k) {
  for (std::size_t i = 1; i <= k; ++i) cols.push_back(base + std::to_string(i));
}

inline void append(std::vector<nlohmann::json>& row, const std::vector<double>& v) {
  for (double x : v) row.emplace_back(x);
}

/// Pads a failed row with empty cells and closes it with status and code.
inline void fail_row(std::vector<nlohmann::json>& row, std::size_t columns, const std::string& code) {
  while (row.size() + 2 < columns) row.emplace_back(nullptr);
  row.emplace_back("error");
  row.emplace_back(code);
}

/// Short machine-readable code for a failure.
inline std::string error_code(const std::exception& e) {
  if (const auto* ne = dynamic_cast<const NumericalError*>(&e)) return ne->code();
  if (dynamic_cast<const FlowError*>(&e)) return "integration failure";
  if (dynamic_cast<const exprs::EvalError*>(&e)) return "evaluation failure";
  return "error";
}

inline std::string csv_cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_number()) return v.dump();
  std::string s = v.get<std::string>();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Columns: I…, theta…, t, tau…, M_y…, dI1_…, dtheta1_…, tail_est, status, error.
inline CommandResult cmd_melnikov(const RunConfig& rc, unsigned threads = 1) {
  const auto& sys = rc.system;
  const std::size_t n = sys.n(), d = sys.d();
  CommandResult res{"melnikov"};
  auto& cols = res.table.columns;
  detail::indexed(cols, "I", d);
  detail::indexed(cols, "theta", d);
  cols.push_back("t");
  detail::indexed(cols, "tau", n);
  detail::indexed(cols, "M_y", n);
  detail::indexed(cols, "dI1_", d);
  detail::indexed(cols, "dtheta1_", d);
  for (const char* c : {"tail_est", "status", "error"}) cols.push_back(c);

  const auto field = rc.field();
  const auto sep = separatrix(sys, rc.numeric.integrator);
  const auto& samples = rc.experiment.samples;
  res.table.rows.resize(samples.size());
  std::size_t failures = 0;
  std::mutex mu;
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    const auto& s = samples[k];
    std::vector<nlohmann::json> row;
    detail::append(row, s.I);
    detail::append(row, s.theta);
    row.emplace_back(s.t);
    detail::append(row, s.tau);
    try {
      const auto m = melnikov(sys, field, sep, s.tau, s.I, s.theta, s.t, rc.numeric.melnikov);
      detail::append(row, m.M_y);
      detail::append(row, m.dI1);
      detail::append(row, m.dtheta1);
      row.emplace_back(m.tail_estimate);
      row.emplace_back("ok");
      row.emplace_back("");
    } catch (const std::exception& e) {
      detail::fail_row(row, cols.size(), detail::error_code(e));
      std::lock_guard lock(mu);
      ++failures;
    }
    res.table.rows[k] = std::move(row);
  });
  res.summary = {{"samples", samples.size()},
                 {"failures", failures},
                 {"theta_variant", rc.numeric.melnikov.half_line_theta ? "half-line" : "full-line"}};
  if (failures) res.exit_code = kExitNumerical;
  return res;
}

/// Numerical scattering map against ε times the first-order prediction, one
/// row per (ε, sample).  Needs a single pendulum.
inline CommandResult cmd_scatter(const RunConfig& rc, unsigned threads = 1) {
  const auto& sys = rc.system;
  if (sys.n() != 1) throw ConfigError("scatter needs exactly one pendulum");
  const std::size_t d = sys.d();
  CommandResult res{"scatter"};
  auto& cols = res.table.columns;
  cols.push_back("eps");
  detail::indexed(cols, "I_minus", d);
  detail::indexed(cols, "theta_minus", d);
  cols.push_back("t");
  for (const char* c : {"tau_melnikov", "x_star", "y_star"}) cols.push_back(c);
  detail::indexed(cols, "I_plus", d);
  detail::indexed(cols, "theta_plus", d);
  detail::indexed(cols, "pred_dI", d);
  detail::indexed(cols, "pred_dtheta", d);
  detail::indexed(cols, "err_I", d);
  detail::indexed(cols, "err_theta", d);
  for (const char* c : {"splitting_residual", "outer_residual", "outer_iterations", "horizon",
                        "footpoint_residual_minus", "footpoint_residual_plus", "status", "error"})
    cols.push_back(c);

  const auto field = rc.field();
  const auto sep = separatrix(sys, rc.numeric.integrator);
  const auto& samples = rc.experiment.samples;
  const auto& grid = rc.experiment.eps;

  struct Prediction {
    double tau = 0.0;
    MelnikovResult m;
    std::string error;
  };
  std::vector<Prediction> pred(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    const auto& s = samples[k];
    try {
      pred[k].tau = splitting_zero(sys, field, sep, s.I, s.theta, s.t, s.x, rc.numeric.melnikov);
      pred[k].m = melnikov(sys, field, sep, std::vector{pred[k].tau}, s.I, s.theta, s.t, rc.numeric.melnikov);
    } catch (const std::exception& e) {
      pred[k].error = detail::error_code(e);
    }
  });

  const std::size_t jobs = grid.size() * samples.size();
  res.table.rows.resize(jobs);
  std::vector<std::vector<double>> errI(jobs), errTh(jobs);
  std::vector<char> ok(jobs, 0);
  parallel_for(jobs, threads, [&](std::size_t job) {
    const std::size_t ie = job / samples.size(), k = job % samples.size();
    const double eps = grid[ie];
    const auto& s = samples[k];
    const auto& P = pred[k];
    std::vector<nlohmann::json> row{eps};
    detail::append(row, s.I);
    detail::append(row, s.theta);
    row.emplace_back(s.t);
    if (!P.error.empty()) {
      detail::fail_row(row, cols.size(), P.error);
    } else {
      try {
        const auto sm = scattering_map_numeric(sys, field, s.I, s.theta, s.t, eps, P.tau, rc.numeric.geometry);
        std::vector<double> pI(d), pTh(d), eI(d), eTh(d);
        for (std::size_t j = 0; j < d; ++j) {
          pI[j] = eps * P.m.dI1[j];
          pTh[j] = eps * P.m.dtheta1[j];
          eI[j] = std::abs((sm.I_plus[j] - s.I[j]) - pI[j]);
          eTh[j] = std::abs((sm.theta_plus[j] - s.theta[j]) - pTh[j]);
        }
        row.emplace_back(P.tau);
        row.emplace_back(sm.x_star);
        row.emplace_back(sm.y_star);
        detail::append(row, sm.I_plus);
        detail::append(row, sm.theta_plus);
        detail::append(row, pI);
        detail::append(row, pTh);
        detail::append(row, eI);
        detail::append(row, eTh);
        for (double v : {sm.splitting_residual, sm.outer_residual, static_cast<double>(sm.outer_iterations),
                         sm.horizon, sm.footpoint_residual_minus, sm.footpoint_residual_plus})
          row.emplace_back(v);
        row.emplace_back("ok");
        row.emplace_back("");
        errI[job] = eI;
        errTh[job] = eTh;
        ok[job] = 1;
      } catch (const std::exception& e) {
        row.resize(2 + 2 * d);
        row.emplace_back(P.tau);
        detail::fail_row(row, cols.size(), detail::error_code(e));
      }
    }
    res.table.rows[job] = std::move(row);
  });

  std::size_t failures = 0;
  for (char c : ok) failures += c ? 0 : 1;
  nlohmann::json fits = nlohmann::json::array();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<std::pair<double, double>> a, b;
      for (std::size_t ie = 0; ie < grid.size(); ++ie) {
        const std::size_t job = ie * samples.size() + k;
        if (!ok[job] || grid[ie] == 0.0) continue;
        a.push_back({grid[ie], errI[job][j]});
        b.push_back({grid[ie], errTh[job][j]});
      }
      nlohmann::json entry{{"sample", k}, {"component", j + 1}};
      for (auto [key, data] : {std::pair{"action", &a}, std::pair{"angle", &b}}) {
        try {
          entry[key] = to_json(order_fit(*data));
        } catch (const ConfigError& e) {
          entry[key] = {{"note", e.what()}};
        }
      }
      fits.push_back(entry);
    }
  }
  res.summary = {{"rows", jobs},
                 {"failures", failures},
                 {"theta_variant", rc.numeric.melnikov.half_line_theta ? "half-line" : "full-line"},
                 {"order_fits", fits}};
  if (failures) res.exit_code = kExitNumerical;
  return res;
}

/// 𝓛, τ*, gradients and the consistency residuals against the Melnikov integrals.
inline CommandResult cmd_hamgen(const RunConfig& rc, unsigned threads = 1) {
  const auto H1 = rc.hamiltonian();
  if (!H1) throw ConfigError("hamgen needs perturbation.mode = \"hamiltonian\"");
  const auto& sys = rc.system;
  const std::size_t n = sys.n(), d = sys.d();
  CommandResult res{"hamgen"};
  auto& cols = res.table.columns;
  detail::indexed(cols, "I", d);
  detail::indexed(cols, "theta", d);
  cols.push_back("t");
  detail::indexed(cols, "tau_guess", n);
  cols.push_back("L_at_guess");
  detail::indexed(cols, "tau_star", n);
  cols.push_back("script_L");
  detail::indexed(cols, "dL_dtheta", d);
  detail::indexed(cols, "dL_dI", d);
  for (const char* c : {"S", "hessian_det", "grad_tau_norm"}) cols.push_back(c);
  detail::indexed(cols, "dI1_", d);
  detail::indexed(cols, "dtheta1_", d);
  for (const char* c : {"residual_action", "residual_angle", "envelope_residual", "status", "error"})
    cols.push_back(c);

  const auto field = hamiltonian_to_field(sys, *H1);
  const auto sep = separatrix(sys, rc.numeric.integrator);
  const auto& samples = rc.experiment.samples;
  const auto& hc = rc.numeric.hamgen;
  MelnikovConfig mc = rc.numeric.melnikov;
  mc.quad.tol = std::min(mc.quad.tol, hc.quad.tol);
  res.table.rows.resize(samples.size());
  std::vector<double> worst(samples.size(), 0.0);
  std::vector<char> ok(samples.size(), 0);
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    const auto& s = samples[k];
    std::vector<nlohmann::json> row;
    detail::append(row, s.I);
    detail::append(row, s.theta);
    row.emplace_back(s.t);
    detail::append(row, s.tau);
    try {
      row.emplace_back(L_value(sys, *H1, sep, s.tau, s.I, s.theta, s.t, hc));
      const auto g = script_L(sys, *H1, sep, s.I, s.theta, s.t, s.tau, hc);
      const auto S = generating_S(g);
      const auto m = melnikov(sys, field, sep, g.tau_star, s.I, s.theta, s.t, mc);
      double ra = 0.0, rt = 0.0, env = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        ra = std::max(ra, std::abs(m.dI1[j] - g.dtheta[j]));
        rt = std::max(rt, std::abs(m.dtheta1[j] + g.dI[j]));
      }
      if (H1->depends_on(exprs::VarKind::p) || H1->depends_on(exprs::VarKind::q))
        for (double v : envelope_residual(sys, *H1, sep, g, s.I, s.theta, s.t, hc)) env = std::max(env, v);
      detail::append(row, g.tau_star);
      row.emplace_back(g.L);
      detail::append(row, g.dtheta);
      detail::append(row, g.dI);
      row.emplace_back(S.S);
      row.emplace_back(g.hessian_det);
      row.emplace_back(g.grad_tau_norm);
      detail::append(row, m.dI1);
      detail::append(row, m.dtheta1);
      row.emplace_back(ra);
      row.emplace_back(rt);
      row.emplace_back(env);
      row.emplace_back("ok");
      row.emplace_back("");
      worst[k] = std::max(ra, rt);
      ok[k] = 1;
    } catch (const std::exception& e) {
      detail::fail_row(row, cols.size(), detail::error_code(e));
    }
    res.table.rows[k] = std::move(row);
  });
  std::size_t failures = 0;
  double residual = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    failures += ok[k] ? 0 : 1;
    residual = std::max(residual, worst[k]);
  }
  res.summary = {{"samples", samples.size()}, {"failures", failures}, {"max_triangle_residual", residual}};
  if (failures) res.exit_code = kExitNumerical;
  return res;
}

/// Deviation of the perturbed from the unperturbed flow over k ln(1/ε).
inline CommandResult cmd_gronwall(const RunConfig& rc) {
  CommandResult res{"gronwall"};
  res.table.columns = {"eps", "horizon", "max_deviation", "time_of_max", "K", "bound", "pass"};
  const auto field = rc.field();
  std::vector<std::pair<double, double>> dev;
  bool all = true;
  for (double eps : rc.experiment.eps) {
    const auto r = gronwall_experiment(rc.system, field, rc.experiment.gronwall_start, eps, rc.experiment.gronwall,
                                       rc.numeric.integrator);
    res.table.rows.push_back({r.eps, r.horizon, r.max_deviation, r.time_of_max, r.K, r.bound, r.pass});
    all = all && r.pass;
    if (eps > 0.0) dev.push_back({eps, r.max_deviation});
  }
  res.summary = {{"all_within_bound", all}, {"rho0", rc.experiment.gronwall.rho0}};
  try {
    const auto fit = order_fit(dev);
    res.summary["fit"] = to_json(fit);
    res.summary["slope_at_least_rho0"] = fit.slope >= rc.experiment.gronwall.rho0;
  } catch (const ConfigError& e) {
    res.summary["fit"] = {{"note", e.what()}};
  }
  return res;
}

/// Identity suite on the configured system plus quick library checks on the
/// reference system.  Exit code 0 iff everything passes.
inline CommandResult cmd_selftest(const RunConfig& rc) {
  CommandResult res{"selftest"};
  res.table.columns = {"check", "measured", "bound", "pass", "diagnosis"};
  IdentitySuiteConfig ic;
  ic.tolerance = rc.numeric.identity_tolerance;
  ic.geometry = rc.numeric.geometry;
  auto report = identity_suite(rc.system, ic);

  auto run = [&](const std::string& name, double bound, auto&& measure) {
    Check c{name, std::numeric_limits<double>::quiet_NaN(), bound, false, ""};
    try {
      c.measured = measure();
      c.pass = c.measured <= bound;
      if (!c.pass) c.diagnosis = "measured " + std::to_string(c.measured) + " above " + std::to_string(bound);
    } catch (const std::exception& e) {
      c.diagnosis = e.what();
    }
    report.checks.push_back(std::move(c));
  };

  const auto ref = SystemSpec::standard();
  const auto sep = separatrix(ref);
  const auto H1 = exprs::parse("cos(2*pi*q1)*cos(2*pi*theta1)", ref.dims());
  const auto field = hamiltonian_to_field(ref, H1);
  run("closed_form_action", 1e-8, [&] {
    // ΔI¹ = -4π² ω sin(2πθ - ωτ) / sinh(πω/2) with ω = 2πI
    double worst = 0.0;
    for (auto [tau, I, th] : {std::tuple{0.3, 0.5, 0.1}, {-0.7, 0.8, 0.4}, {1.1, 0.35, 0.9}}) {
      const double w = kTwoPi * I;
      const double want = -4 * kPi * kPi * w * std::sin(kTwoPi * th - w * tau) / std::sinh(kPi * w / 2);
      const auto m = melnikov(ref, field, sep, std::vector{tau}, std::vector{I}, std::vector{th}, 0.0);
      worst = std::max(worst, std::abs(m.dI1[0] - want) / std::abs(want));
    }
    return worst;
  });
  run("hamiltonian_triangle", 1e-7, [&] {
    double worst = 0.0;
    for (auto [I, th] : {std::pair{0.5, 0.3}, {0.7, 0.85}}) {
      const auto g = script_L(ref, H1, sep, std::vector{I}, std::vector{th}, 0.0, std::vector{0.0});
      const auto m = melnikov(ref, field, sep, g.tau_star, std::vector{I}, std::vector{th}, 0.0);
      worst = std::max({worst, std::abs(m.dI1[0] - g.dtheta[0]), std::abs(m.dtheta1[0] + g.dI[0])});
    }
    return worst;
  });
  run("tail_doubling", 10 * MelnikovConfig{}.quad.tol, [&] {
    MelnikovConfig wide;
    wide.quad.cutoff_scale = 2.0;
    const std::vector tau{0.2}, I{0.6}, th{0.3};
    const auto a = melnikov(ref, field, sep, tau, I, th, 0.0);
    const auto b = melnikov(ref, field, sep, tau, I, th, 0.0, wide);
    return std::max({std::abs(a.M_y[0] - b.M_y[0]), std::abs(a.dI1[0] - b.dI1[0]),
                     std::abs(a.dtheta1[0] - b.dtheta1[0])});
  });

  for (const auto& c : report.checks)
    res.table.rows.push_back({c.name, std::isfinite(c.measured) ? nlohmann::json(c.measured) : nlohmann::json(),
                              c.bound, c.pass, c.diagnosis});
  res.summary = to_json(report);
  res.summary["pass"] = report.pass();
  if (!report.pass()) res.exit_code = kExitNumerical;
  return res;
}

// ---------------------------------------------------------------------------

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + detail::csv_cell(row[i]);
    out += "\n";
  }
  return out;
}

/// csv: <name>.csv plus <name>_report.json; json: <name>.json with the rows inline.
/// Every report carries the schema version and the resolved configuration.
inline std::vector<std::filesystem::path> write_outputs(const CommandResult& res, const RunConfig& rc,
                                                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json report{{"schema_version", kReportSchemaVersion},
                        {"command", res.name},
                        {"exit_code", res.exit_code},
                        {"config", to_json(rc)},
                        {"summary", res.summary}};
  std::vector<std::filesystem::path> files;
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
    files.push_back(p);
  };
  if (rc.output.format == "csv") {
    write(dir / (res.name + ".csv"), to_csv(res.table));
    write(dir / (res.name + "_report.json"), report.dump(2) + "\n");
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : res.table.rows) {
      nlohmann::json o = nlohmann::json::object();
      for (std::size_t i = 0; i < r.size(); ++i) o[res.table.columns[i]] = r[i];
      rows.push_back(o);
    }
    report["columns"] = res.table.columns;
    report["rows"] = rows;
    write(dir / (res.name + ".json"), report.dump(2) + "\n");
  }
  return files;
}

/// gnuplot script for the log-log error plots of scatter and gronwall CSV output.
inline std::string gnuplot_script(const CommandResult& res) {
  std::string s = "set datafile separator ','\nset logscale xy\nset key left top\nset xlabel 'eps'\n";
  if (res.name == "gronwall") {
    s += "set ylabel 'max deviation'\nplot 'gronwall.csv' skip 1 using 1:3 with linespoints title 'deviation', "
         "'' skip 1 using 1:6 with lines title 'K eps^rho0'\n";
  } else if (res.name == "scatter") {
    std::size_t cI = 0, cT = 0;
    for (std::size_t i = 0; i < res.table.columns.size(); ++i) {
      if (res.table.columns[i] == "err_I1") cI = i + 1;
      if (res.table.columns[i] == "err_theta1") cT = i + 1;
    }
    s += "set ylabel 'first-order error'\nplot 'scatter.csv' skip 1 using 1:" + std::to_string(cI) +
         " with points title 'action', '' skip 1 using 1:" + std::to_string(cT) + " with points title 'angle'\n";
  } else {
    return "";
  }
  return s;
}

}  // namespace rotpend
