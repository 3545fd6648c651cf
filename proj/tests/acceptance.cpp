// Acceptance run: one PASS/FAIL line per criterion, plus acceptance_report.json
// in the working directory.  Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rotpend/geometry.hpp"
#include "rotpend/hamgen.hpp"
#include "rotpend/melnikov.hpp"
#include "rotpend/verify.hpp"

using namespace rotpend;
using nlohmann::json;

namespace {

const char* kTwoHarmonic = "cos(2*pi*q1)*(cos(2*pi*theta1) + 0.5*cos(2*pi*theta1 - 2*pi*t))";
const char* kOneHarmonic = "cos(2*pi*q1)*cos(2*pi*theta1)";
const std::vector<double> kGrid{1e-2, 3e-3, 1e-3, 3e-4};

// ∫ sech²(u) cos(a u) du = π a / sinh(π a / 2); on the separatrix
// cos 2πq⁰ = 1 - 2 sech², which gives the two closed forms below (ω = 2πI).
double dI1_closed(double tau, double I, double theta) {
  const double w = kTwoPi * I;
  return -4 * kPi * kPi * w * std::sin(kTwoPi * theta - w * tau) / std::sinh(kPi * w / 2);
}
double My_closed(double tau, double I, double theta) {
  const double w = kTwoPi * I;
  return 2 * kPi * w * w * std::sin(kTwoPi * theta - w * tau) / std::sinh(kPi * w / 2);
}

struct Outcome {
  bool pass = true;
  json measured = json::object();
  json bound = json::object();
  json inputs = json::object();
  std::string summary;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct System {
  SystemSpec sys = SystemSpec::standard();
  SeparatrixOrbit sep = separatrix(sys);
  PerturbationField field = hamiltonian_to_field(sys, kTwoHarmonic);
};

// ---------------------------------------------------------------------------

Outcome unperturbed_identity() {
  System S;
  Outcome o;
  double worst = 0.0;
  for (auto [I, th, t, x] : {std::tuple{0.45, 0.2, 0.1, 0.3}, {0.35, 0.6, 0.0, -0.5}, {0.8, 0.95, 0.7, 1.2},
                             {0.25, 0.4, 0.3, 0.0}, {0.6, 0.1, 0.5, -1.5}}) {
    const auto s = scattering_map_numeric(S.sys, S.field, std::vector{I}, std::vector{th}, t, 0.0, x);
    worst = std::max({worst, std::abs(s.I_plus[0] - I), std::abs(s.theta_plus[0] - th)});
  }
  o.measured = {{"max_abs_change", worst}};
  o.bound = {{"max_abs_change", 1e-9}};
  o.pass = worst <= 1e-9;
  o.summary = "max |sigma_0(I,theta) - (I,theta)| = " + fmt(worst) + " over 5 points (bound 1e-9)";
  return o;
}

Outcome closed_form() {
  const auto sys = SystemSpec::standard();
  const auto sep = separatrix(sys);
  const auto field = hamiltonian_to_field(sys, kOneHarmonic);
  MelnikovConfig mc;
  mc.quad.tol = 1e-12;
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> uI(0.2, 1.2), uth(0.0, 1.0), utau(-2.0, 2.0), ut(0.0, 1.0);
  double worst = 0.0, worst_my = 0.0;
  json pts = json::array();
  for (int k = 0; k < 10; ++k) {
    const double tau = utau(rng), I = uI(rng), th = uth(rng), t = ut(rng);
    const auto m = melnikov(sys, field, sep, std::vector{tau}, std::vector{I}, std::vector{th}, t, mc);
    const double want = dI1_closed(tau, I, th), want_my = My_closed(tau, I, th);
    worst = std::max(worst, std::abs(m.dI1[0] - want) / std::abs(want));
    worst_my = std::max(worst_my, std::abs(m.M_y[0] - want_my) / std::abs(want_my));
    pts.push_back({{"tau", tau}, {"I", I}, {"theta", th}, {"t", t}, {"dI1", m.dI1[0]}, {"closed_form", want}});
  }
  Outcome o;
  o.inputs = {{"points", pts}, {"quad_tol", mc.quad.tol}};
  o.measured = {{"max_rel_error_dI1", worst}, {"max_rel_error_M_y", worst_my}};
  o.bound = {{"max_rel_error", 1e-8}};
  o.pass = worst <= 1e-8 && worst_my <= 1e-8;
  o.summary = "max relative error dI1 " + fmt(worst) + ", M_y " + fmt(worst_my) + " at 10 points (bound 1e-8)";
  return o;
}

Outcome order_of_validity() {
  System S;
  Outcome o;
  json per_sample = json::array();
  std::ostringstream os;
  for (auto [I, th, t] : {std::tuple{0.45, 0.2, 0.1}, {0.35, 0.6, 0.1}}) {
    const std::vector Iv{I}, thv{th};
    const double tau0 = splitting_zero(S.sys, S.field, S.sep, Iv, thv, t, 0.0);
    const auto m = melnikov(S.sys, S.field, S.sep, std::vector{tau0}, Iv, thv, t);
    std::vector<std::pair<double, double>> eI, eT, eHalf;
    for (double e : kGrid) {
      const auto s = scattering_map_numeric(S.sys, S.field, Iv, thv, t, e, tau0);
      const double dI = s.I_plus[0] - I, dth = s.theta_plus[0] - th;
      eI.push_back({e, std::abs(dI - e * m.dI1[0])});
      eT.push_back({e, std::abs(dth - e * m.dtheta1_full[0])});
      eHalf.push_back({e, std::abs(dth - e * m.dtheta1_half[0])});
    }
    const auto fI = order_fit(eI), fT = order_fit(eT), fH = order_fit(eHalf);
    const bool ok = fI.slope >= 1.2 && fI.r2 >= 0.95 && fT.slope >= 1.2 && fT.r2 >= 0.95;
    o.pass = o.pass && ok;
    per_sample.push_back({{"I", I}, {"theta", th}, {"t", t}, {"tau_melnikov", tau0},
                          {"action", to_json(fI)}, {"angle_full_line", to_json(fT)},
                          {"angle_half_line_rejected", to_json(fH)}});
    os << "(I=" << I << ",theta=" << th << ") slope_I " << fmt(fI.slope) << " R2 " << fmt(fI.r2)
       << ", slope_theta " << fmt(fT.slope) << " R2 " << fmt(fT.r2) << ", rejected half-line slope_theta "
       << fmt(fH.slope) << "; ";
  }
  o.inputs = {{"eps", kGrid}, {"H1", kTwoHarmonic}};
  o.measured = per_sample;
  o.bound = {{"slope", 1.2}, {"r2", 0.95}};
  o.summary = os.str() + "bounds slope >= 1.2, R2 >= 0.95";
  return o;
}

Outcome splitting() {
  System S;
  Outcome o;
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, x = 0.3;
  const double M = splitting_integral(S.sys, S.field, S.sep, std::vector{x}, I, th, t)[0];
  const double tau0 = splitting_zero(S.sys, S.field, S.sep, I, th, t, 0.0);
  std::vector<std::pair<double, double>> err, shift;
  double ratio = 0.0;
  for (double e : kGrid) {
    const double D = unstable_graph_y(S.sys, S.field, x, I, th, t, e).y -
                     stable_graph_y(S.sys, S.field, x, I, th, t, e).y;
    err.push_back({e, std::abs(D - e * M)});
    const auto h = find_homoclinic_x(S.sys, S.field, I, th, t, e, tau0);
    shift.push_back({e, std::abs(h.x - tau0)});
    ratio = std::max(ratio, std::abs(h.x - tau0) / e);
  }
  const auto f = order_fit(err);
  // O(ε): |x* - τ0|/ε settles to a finite limit as ε shrinks, and no grid
  // point exceeds twice the value at the smallest ε.
  std::vector<double> ratios;
  for (const auto& [e, s] : shift) ratios.push_back(s / e);
  const double last = ratios.back(), prev = ratios[ratios.size() - 2];
  const double settle = std::abs(last / prev - 1.0);
  o.pass = f.slope >= 1.2 && settle <= 0.2 && ratio <= 2.0 * last;
  o.inputs = {{"eps", kGrid}, {"I", 0.45}, {"theta", 0.2}, {"t", t}, {"x", x}};
  o.measured = {{"splitting_fit", to_json(f)}, {"x_star_shift", shift}, {"shift_over_eps", ratios},
                {"ratio_change_last_step", settle}};
  o.bound = {{"splitting_slope", 1.2}, {"ratio_change_last_step", 0.2}, {"max_shift_over_eps", 2.0 * last}};
  o.summary = "slope |y^u - y^s - eps M_y| = " + fmt(f.slope) + " (>= 1.2); |x* - tau0|/eps = " +
              fmt(ratios[0]) + ", " + fmt(ratios[1]) + ", " + fmt(ratios[2]) + ", " + fmt(ratios[3]) +
              " (last-step change " + fmt(settle) + " <= 0.2, max <= " + fmt(2.0 * last) + ")";
  return o;
}

Outcome hamiltonian_triangle() {
  System S;
  const auto H1 = exprs::parse(kTwoHarmonic, S.sys.dims());
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> uI(0.3, 0.8), uth(0.0, 1.0), ut(0.0, 1.0);
  double tri = 0.0, inv = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::vector I{uI(rng)}, th{uth(rng)};
    const double t = ut(rng);
    const auto g = script_L(S.sys, H1, S.sep, I, th, t, std::vector{0.0});
    const auto m = melnikov(S.sys, S.field, S.sep, g.tau_star, I, th, t);
    tri = std::max({tri, std::abs(m.dI1[0] - g.dtheta[0]), std::abs(m.dtheta1[0] + g.dI[0])});
    if (k < 5) {
      for (double sigma : {0.3, 1.7, -0.9}) {
        const std::vector th2{th[0] - I[0] * sigma};
        const auto g2 = script_L(S.sys, H1, S.sep, I, th2, t - sigma, std::vector{g.tau_star[0] - sigma});
        inv = std::max(inv, std::abs(g2.L - g.L));
      }
    }
  }
  Outcome o;
  o.inputs = {{"points", 20}, {"invariance_points", 5}, {"sigma", {0.3, 1.7, -0.9}}};
  o.measured = {{"max_triangle_residual", tri}, {"max_invariance_residual", inv}};
  o.bound = {{"triangle", 1e-7}, {"invariance", 1e-8}};
  o.pass = tri <= 1e-7 && inv <= 1e-8;
  o.summary = "max |dI1 - dL/dtheta|, |dtheta1 + dL/dI| = " + fmt(tri) + " (1e-7); invariance " + fmt(inv) +
              " (1e-8)";
  return o;
}

Outcome master_operators() {
  const auto sys = SystemSpec::standard();
  auto sep = std::make_shared<const SeparatrixOrbit>(separatrix(sys));
  const auto d = sys.dims();
  const std::vector I{0.37}, th{0.2};
  const auto foot = torus_orbit(sys, I, th, 0.1);
  const auto pt = separatrix_orbit(sys, sep, std::vector{0.4}, I, th, 0.1);
  const auto F = exprs::parse("cos(2*pi*q1)*sin(2*pi*theta1)", d);
  const auto G = exprs::parse("p1^2 + cos(2*pi*q1 - t)", d);
  const auto H = exprs::parse("2.5*(cos(2*pi*q1)*sin(2*pi*theta1)) - 0.75*(p1^2 + cos(2*pi*q1 - t))", d);
  QuadratureConfig q;
  q.tol = 1e-14;
  double lin = 0.0;
  for (auto fn : {master_plus, master_minus}) {
    const double f = fn(observable(F), foot, pt, q).value[0];
    const double g = fn(observable(G), foot, pt, q).value[0];
    const double h = fn(observable(H), foot, pt, q).value[0];
    lin = std::max(lin, std::abs(h - (2.5 * f - 0.75 * g)));
  }

  // F(footpoint) - F(point) = -J+(X0 F) = J-(X0 F) at ε = 0
  const QuadratureConfig qd{};
  double identity = 0.0;
  for (const char* src : {"I1", "p1^2/2 - sin(pi*q1)^2/(2*pi^2)", "cos(2*pi*q1)", "cos(2*pi*q1)*sin(2*pi*theta1 - t)"}) {
    const auto E = exprs::parse(src, d);
    const auto XE = lie_derivative(sys, zero_field(), 0.0, E);
    std::vector<double> z0(4), zf(4);
    pt.state(0.0, z0);
    foot.state(0.0, zf);
    const auto Eo = observable(E);
    const double diff = Eo(zf, 0.1) - Eo(z0, 0.1);
    identity = std::max({identity, std::abs(diff + master_plus(XE, foot, pt, qd).value[0]),
                      std::abs(diff - master_minus(XE, foot, pt, qd).value[0])});
  }

  const auto field = hamiltonian_to_field(sys, kTwoHarmonic);
  MelnikovConfig a, b;
  b.quad.cutoff_scale = 2.0;
  const std::vector tau{-0.3}, I2{0.4}, th2{0.7};
  const auto ra = melnikov(sys, field, *sep, tau, I2, th2, 0.25, a);
  const auto rb = melnikov(sys, field, *sep, tau, I2, th2, 0.25, b);
  const double tail = std::max({std::abs(ra.M_y[0] - rb.M_y[0]), std::abs(ra.dI1[0] - rb.dI1[0]),
                                std::abs(ra.dtheta1[0] - rb.dtheta1[0])});

  Outcome o;
  const double identity_bound = 10 * qd.tol;
  o.inputs = {{"linearity_quad_tol", q.tol}, {"quad_tol", a.quad.tol}};
  o.measured = {{"linearity", lin}, {"difference_identity", identity}, {"tail_doubling", tail}};
  o.bound = {{"linearity", 1e-12}, {"difference_identity", identity_bound}, {"tail_doubling", 10 * a.quad.tol}};
  o.pass = lin <= 1e-12 && identity <= identity_bound && tail < 10 * a.quad.tol;
  o.summary = "linearity " + fmt(lin) + " (1e-12); difference identity " + fmt(identity) + " (" + fmt(identity_bound) +
              "); tail doubling " + fmt(tail) + " (< " + fmt(10 * a.quad.tol) + ")";
  return o;
}

Outcome gronwall() {
  const auto sys = SystemSpec::standard();
  const auto field = dissipation_field(sys, 1.0, 1.0);
  const ExtendedState z0{{0.1}, {0.1}, {1.0}, {0.0}, 0.0};
  GronwallParams gp;  // k = 0.5 / C0, rho0 = 0.5, C0 = 1, C1 = 2, c = 0
  std::vector<std::pair<double, double>> dev;
  bool within = true;
  json rows = json::array();
  for (double e : {1e-2, 1e-3, 1e-4, 1e-5}) {
    const auto r = gronwall_experiment(sys, field, z0, e, gp);
    within = within && r.pass;
    dev.push_back({e, r.max_deviation});
    rows.push_back(to_json(r));
  }
  const auto f = order_fit(dev);
  Outcome o;
  o.inputs = {{"field", "damping gamma_p = gamma_I = 1"}, {"start", {0.1, 0.1, 1.0, 0.0, 0.0}}};
  o.measured = {{"reports", rows}, {"fit", to_json(f)}};
  o.bound = {{"deviation", "K eps^rho0"}, {"slope", gp.rho0}};
  o.pass = within && f.slope >= gp.rho0;
  o.summary = std::string("deviation <= K eps^0.5 at all 4 eps: ") + (within ? "yes" : "no") + "; slope " +
              fmt(f.slope) + " (>= 0.5)";
  return o;
}

Outcome infrastructure() {
  const auto sys = SystemSpec::standard();
  const double order = integrator_order_slope(sys);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uy(-0.01, 0.01), ux(-3.0, 3.0);
  double det = 0.0;
  for (int k = 0; k < 100; ++k)
    det = std::max(det, std::abs(chart_point(sys.penduli[0], uy(rng), ux(rng)).det() - 1.0));

  const auto sep = separatrix(sys);
  double energy = 0.0;
  for (double tau = -15.0; tau <= 15.0; tau += 0.25) {
    const auto z = homoclinic_point(sys, sep, std::vector{tau}, std::vector{0.5}, std::vector{0.0}, 0.0);
    energy = std::max(energy, std::abs(pendulum_energy(sys, z)[0]));
  }

  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double idot = 0.0;
  for (int k = 0; k < 200; ++k) {
    const ExtendedState z{{u(rng)}, {u(rng)}, {u(rng)}, {u(rng)}, u(rng)};
    idot = std::max(idot, std::abs(eval_unperturbed(sys, z).I[0]));
  }

  Outcome o;
  o.measured = {{"integrator_order", order}, {"chart_det_error", det}, {"separatrix_energy", energy},
                {"unperturbed_Idot", idot}};
  o.bound = {{"integrator_order", 6.5}, {"chart_det_error", 1e-9}, {"separatrix_energy", 1e-10},
             {"unperturbed_Idot", 0.0}};
  o.pass = order >= 6.5 && det <= 1e-9 && energy <= 1e-10 && idot == 0.0;
  o.summary = "integrator order " + fmt(order) + " (>= 6.5); |det - 1| " + fmt(det) + " (1e-9); separatrix energy " +
              fmt(energy) + " (1e-10); max |dI/dt| " + fmt(idot) + " (0)";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "unperturbed identity", 5, unperturbed_identity},
      {2, "closed-form Melnikov oracle", 60, closed_form},
      {3, "order of validity", 600, order_of_validity},
      {4, "splitting transversality", 300, splitting},
      {5, "Hamiltonian triangle", 180, hamiltonian_triangle},
      {6, "master-operator properties", 60, master_operators},
      {7, "Gronwall horizon", 120, gronwall},
      {8, "infrastructure", 60, infrastructure},
  };
  int failed = 0;
  json report = json::array();
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.summary
              << " [" << fmt(secs) << " s, budget " << c.budget_s << " s]" << std::endl;
    auto rec = criterion_record(std::to_string(c.id), o.inputs, o.measured, o.bound, pass);
    rec["name"] = c.name;
    rec["seconds"] = secs;
    report.push_back(rec);
  }
  std::ofstream("acceptance_report.json") << report.dump(2) << "\n";
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all 8 criteria passed") << std::endl;
  return failed;
}
