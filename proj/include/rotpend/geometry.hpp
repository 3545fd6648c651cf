#pragma once
// Invariant-manifold geometry of the perturbed system: hyperbolic rates,
// footpoints of the stable/unstable fibres, the energy graphs of W^s and W^u
// in the (y, x) chart, homoclinic points and the numerical scattering map.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rotpend/flow.hpp"
#include "rotpend/linalg.hpp"
#include "rotpend/model.hpp"
#include "rotpend/roots.hpp"

namespace rotpend {

struct GeometryConfig {
  IntegratorConfig integrator{};
  double delta = 1e-2;             // footpoint convergence radius around the saddle
  double horizon_factor = 1.5;     // T = factor * ln(1/eps) / mu_minus
  double min_horizon = 5.0;
  double max_horizon = 20.0;
  double band_K = 4.0;             // initial bisection window |y| <= K eps
  int band_expansions = 6;
  double bisect_tol = 1e-12;
  double classify_margin = 0.2;
  double root_tol = 1e-11;         // on |y^u - y^s|
  double x_step = 0.1;             // bracket search around the x guess
  double x_window = 3.0;
  double degeneracy = 1e-6;        // on |d(y^u - y^s)/dx| / eps
  double outer_tol = 1e-9;         // footpoint residual of the scattering map
  std::size_t outer_max_iter = 30;
  double mu_c = 1e-3;

  void validate() const {
    integrator.validate();
    if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("geometry delta must lie in (0, 0.5)");
    if (!(min_horizon > 0.0 && max_horizon >= min_horizon)) throw ConfigError("bad horizon bounds");
    if (!(band_K > 0.0) || !(bisect_tol > 0.0) || !(root_tol > 0.0) || !(outer_tol > 0.0))
      throw ConfigError("geometry tolerances must be positive");
    if (!(mu_c > 0.0)) throw ConfigError("centre rate mu_c must be positive");
  }
};

// ---------------------------------------------------------------------------
// Rates

struct RateBundle {
  double lambda_minus = 0.0, lambda_plus = 0.0;  // contraction rates, negative
  double mu_minus = 0.0, mu_plus = 0.0;          // expansion rates
  double lambda_c = 0.0, mu_c = 0.0;             // centre rates
  double C = 1.0;
  std::vector<double> lambdas;                   // per pendulum

  bool ordered() const {
    return lambda_minus <= lambda_plus && lambda_plus < lambda_c && lambda_c < 0.0 && 0.0 < mu_c &&
           mu_c < mu_minus && mu_minus <= mu_plus;
  }
};

inline RateBundle rates(const SystemSpec& sys, double mu_c = 1e-3) {
  RateBundle r;
  for (std::size_t i = 0; i < sys.n(); ++i) {
    const double v2 = sys.penduli[i].potential.d2(0.0);
    if (!(v2 < 0.0))
      throw NumericalError("non-hyperbolic saddle", "rates",
                           "pendulum " + std::to_string(i + 1) + ": V''(0) = " + std::to_string(v2));
    r.lambdas.push_back(std::sqrt(-v2));
  }
  r.mu_minus = *std::min_element(r.lambdas.begin(), r.lambdas.end());
  r.mu_plus = *std::max_element(r.lambdas.begin(), r.lambdas.end());
  r.lambda_minus = -r.mu_plus;
  r.lambda_plus = -r.mu_minus;
  r.mu_c = mu_c;
  r.lambda_c = -mu_c;
  return r;
}

/// Projection horizon for a given eps.
inline double horizon(const SystemSpec& sys, double eps, const GeometryConfig& cfg = {}) {
  if (eps == 0.0) return cfg.min_horizon;
  const double T = cfg.horizon_factor * std::log(1.0 / std::abs(eps)) / rates(sys, cfg.mu_c).mu_minus;
  return std::clamp(T, cfg.min_horizon, cfg.max_horizon);
}

// ---------------------------------------------------------------------------
// (y, x) chart of one pendulum: y = s(p²/2 + V), x = time along the
// unperturbed orbit of energy y from the point with q = 1/2.

struct ChartPoint {
  double p = 0.0, q = 0.0;
  // ∂(p, q)/∂(y, x)
  double dp_dy = 0.0, dq_dy = 0.0, dp_dx = 0.0, dq_dx = 0.0;
  double det() const { return dp_dy * dq_dx - dq_dy * dp_dx; }
};

inline ChartPoint chart_point(const Pendulum& P, double y, double x, const IntegratorConfig& cfg = {}) {
  const double s = P.sign;
  const double r = 2.0 * (s * y - P.potential.value(0.5));
  if (!(r > 0.0)) throw NumericalError("energy outside the chart", "chart", "y = " + std::to_string(y));
  const double p0 = s * std::sqrt(r);
  // (p, q, δp, δq) with the y-variation δ = (s/p0, 0) at x = 0
  State z{p0, 0.5, s / p0, 0.0};
  const auto& V = P.potential;
  integrate(
      [&](const State& u, State& du, double) {
        du[0] = -s * V.d1(u[1]);
        du[1] = s * u[0];
        du[2] = -s * V.d2(u[1]) * u[3];
        du[3] = s * u[2];
      },
      z, 0.0, x, cfg);
  ChartPoint c;
  c.p = z[0];
  c.q = z[1];
  c.dp_dy = z[2];
  c.dq_dy = z[3];
  c.dp_dx = -s * V.d1(z[1]);
  c.dq_dx = s * z[0];
  return c;
}

/// Extended state with pendulum 1 at chart position (y, x).
inline ExtendedState chart_state(const SystemSpec& sys, double y, double x, std::span<const double> I,
                                 std::span<const double> theta, double t, const IntegratorConfig& cfg = {}) {
  if (sys.n() != 1) throw ConfigError("the (y, x) chart is implemented for one pendulum");
  const auto c = chart_point(sys.penduli[0], y, x, cfg);
  ExtendedState z = ExtendedState::zeros(sys);
  z.p[0] = c.p;
  z.q[0] = c.q;
  z.I.assign(I.begin(), I.end());
  z.theta.assign(theta.begin(), theta.end());
  z.t = t;
  return z;
}

// ---------------------------------------------------------------------------
// Footpoints

struct FootpointResult {
  std::vector<double> I, theta;
  double t = 0.0;
  double horizon = 0.0;
  double residual = 0.0;  // pendulum distance from the saddle after the horizon
};

/// Flow of (I, θ) restricted to p = q = 0: İ = eps X1I, θ' = ω(I) + eps X1θ.
/// w holds [I (d), θ (d)].
inline void slice_flow(const SystemSpec& sys, const PerturbationField& field, State& w, double t0, double ds,
                       double eps, const IntegratorConfig& cfg = {}) {
  const std::size_t n = sys.n(), d = sys.d();
  std::vector<double> full(sys.state_size()), x1(sys.state_size()), om(d);
  auto rhs = [&](const State& u, State& du, double t) {
    std::fill(full.begin(), full.end(), 0.0);
    std::copy(u.begin(), u.end(), full.begin() + 2 * n);
    sys.rotator.omega(std::span<const double>(u).first(d), om);
    if (eps != 0.0) field(full, t, eps, x1);
    for (std::size_t j = 0; j < d; ++j) {
      du[j] = eps == 0.0 ? 0.0 : eps * x1[2 * n + j];
      du[d + j] = om[j] + (eps == 0.0 ? 0.0 : eps * x1[2 * n + d + j]);
    }
  };
  integrate(rhs, w, t0, ds, cfg);
}

namespace detail {

inline FootpointResult footpoint(const SystemSpec& sys, const PerturbationField& field, const ExtendedState& z,
                                 double eps, double dir, double T, const GeometryConfig& cfg, const char* stage) {
  const std::size_t n = sys.n(), d = sys.d();
  State v = z.pack();
  try {
    integrate(perturbed_system(sys, field, eps), v, z.t, dir * T, cfg.integrator);
  } catch (const FlowError& e) {
    throw NumericalError("integration failure", stage, e.what());
  }
  double res = 0.0;
  for (std::size_t i = 0; i < n; ++i) res = std::max({res, std::abs(v[i]), std::abs(wrap_half(v[n + i]))});
  if (!(res <= cfg.delta))
    throw NumericalError("no convergence within horizon", stage,
                         "pendulum distance " + std::to_string(res) + " after T = " + std::to_string(T));
  FootpointResult f;
  f.t = z.t;
  f.horizon = T;
  f.residual = res;
  if (eps == 0.0) {
    // the unperturbed (I, θ) motion does not see the pendulum
    f.I = z.I;
    f.theta = z.theta;
    return f;
  }
  // flow (I, θ) back along the slice p = q = 0
  State w(v.begin() + 2 * n, v.end());
  try {
    slice_flow(sys, field, w, z.t + dir * T, -dir * T, eps, cfg.integrator);
  } catch (const FlowError& e) {
    throw NumericalError("integration failure on the slice", stage, e.what());
  }
  f.I.assign(w.begin(), w.begin() + d);
  f.theta.assign(w.begin() + d, w.end());
  return f;
}

}  // namespace detail

/// Footpoint on the stable side: forward flow for T, project onto p = q = 0,
/// flow back along the slice.  T <= 0 selects the default horizon.
inline FootpointResult footpoint_plus(const SystemSpec& sys, const PerturbationField& field, const ExtendedState& z,
                                      double eps, const GeometryConfig& cfg = {}, double T = 0.0) {
  return detail::footpoint(sys, field, z, eps, 1.0, T > 0.0 ? T : horizon(sys, eps, cfg), cfg, "footpoint_plus");
}

inline FootpointResult footpoint_minus(const SystemSpec& sys, const PerturbationField& field, const ExtendedState& z,
                                       double eps, const GeometryConfig& cfg = {}, double T = 0.0) {
  return detail::footpoint(sys, field, z, eps, -1.0, T > 0.0 ? T : horizon(sys, eps, cfg), cfg,
                           "footpoint_minus");
}

// ---------------------------------------------------------------------------
// Graphs of W^s, W^u over the chart (one pendulum)

enum class Fate { over, under, undecided };

/// Follows the state forward (dir = +1, towards the saddle at q = 1) or
/// backward (dir = -1, towards q = 0) and reports whether it passes the
/// saddle or turns back.
inline Fate shoot(const SystemSpec& sys, const PerturbationField& field, double eps, const ExtendedState& z,
                  double dir, double span, const GeometryConfig& cfg) {
  const double target = dir > 0.0 ? 1.0 : 0.0;
  double extreme = dir * z.q[0];
  Fate fate = Fate::undecided;
  State v = z.pack();
  const std::size_t n = sys.n();
  try {
    integrate(perturbed_system(sys, field, eps), v, z.t, dir * span, cfg.integrator, [&](const State& u, double) {
      const double q = dir * u[n];
      if (q - dir * target > cfg.classify_margin) {
        fate = Fate::over;
        return false;
      }
      extreme = std::max(extreme, q);
      if (extreme - q > cfg.classify_margin) {
        fate = Fate::under;
        return false;
      }
      return true;
    });
  } catch (const FlowError& e) {
    throw NumericalError("integration failure", dir > 0 ? "stable_graph_y" : "unstable_graph_y", e.what());
  }
  return fate;
}

struct GraphResult {
  double y = 0.0;
  double window = 0.0;
  int shots = 0;
};

namespace detail {

inline GraphResult graph_y(const SystemSpec& sys, const PerturbationField& field, double x,
                           std::span<const double> I, std::span<const double> theta, double t, double eps, double dir,
                           const GeometryConfig& cfg, double center) {
  const char* stage = dir > 0 ? "stable_graph_y" : "unstable_graph_y";
  if (sys.n() != 1) throw ConfigError(std::string(stage) + " is implemented for one pendulum");
  GraphResult g;
  if (eps == 0.0) return g;
  const double mu = rates(sys, cfg.mu_c).mu_minus;
  const double span = (std::log(1.0 / cfg.bisect_tol) + 10.0) / mu + std::abs(x);
  auto fate_at = [&](double y) {
    ++g.shots;
    return shoot(sys, field, eps, chart_state(sys, y, x, I, theta, t, cfg.integrator), dir, span, cfg);
  };
  double W = cfg.band_K * std::abs(eps);
  double lo = 0, hi = 0;
  Fate flo = Fate::undecided, fhi = Fate::undecided;
  for (int k = 0;; ++k) {
    lo = center - W, hi = center + W;
    flo = fate_at(lo);
    fhi = fate_at(hi);
    if (flo != Fate::undecided && fhi != Fate::undecided && flo != fhi) break;
    if (k >= cfg.band_expansions)
      throw NumericalError("bracket failure", stage,
                           "no sign change of the shooting fate for |y - " + std::to_string(center) +
                               "| <= " + std::to_string(W) + " at x = " + std::to_string(x));
    W *= 2.0;
  }
  g.window = W;
  while (hi - lo > cfg.bisect_tol) {
    const double mid = 0.5 * (lo + hi);
    const Fate f = fate_at(mid);
    if (f == Fate::undecided) {
      lo = hi = mid;
      break;
    }
    (f == flo ? lo : hi) = mid;
  }
  g.y = 0.5 * (lo + hi);
  return g;
}

}  // namespace detail

/// y^s(x, I, θ, t): energy of the local stable manifold over the chart point x.
inline GraphResult stable_graph_y(const SystemSpec& sys, const PerturbationField& field, double x,
                                  std::span<const double> I, std::span<const double> theta, double t, double eps,
                                  const GeometryConfig& cfg = {}, double center = 0.0) {
  return detail::graph_y(sys, field, x, I, theta, t, eps, 1.0, cfg, center);
}

inline GraphResult unstable_graph_y(const SystemSpec& sys, const PerturbationField& field, double x,
                                    std::span<const double> I, std::span<const double> theta, double t, double eps,
                                    const GeometryConfig& cfg = {}, double center = 0.0) {
  return detail::graph_y(sys, field, x, I, theta, t, eps, -1.0, cfg, center);
}

// ---------------------------------------------------------------------------
// Homoclinic points

struct HomoclinicResult {
  double x = 0.0;
  double y = 0.0;          // (y^u + y^s) / 2 at x
  double splitting = 0.0;  // y^u - y^s at x
  double slope = 0.0;      // d(y^u - y^s)/dx
  int evaluations = 0;
};

inline HomoclinicResult find_homoclinic_x(const SystemSpec& sys, const PerturbationField& field,
                                          std::span<const double> I, std::span<const double> theta, double t,
                                          double eps, double x_guess, const GeometryConfig& cfg = {}) {
  if (eps == 0.0) throw NumericalError("unperturbed: manifolds coincide", "find_homoclinic_x", "");
  HomoclinicResult h;
  double ys = 0.0, yu = 0.0;
  auto D = [&](double x) {
    ++h.evaluations;
    ys = stable_graph_y(sys, field, x, I, theta, t, eps, cfg).y;
    yu = unstable_graph_y(sys, field, x, I, theta, t, eps, cfg).y;
    return yu - ys;
  };
  double a = x_guess, fa = D(a);
  if (std::abs(fa) <= cfg.root_tol) {
    // slope from a short symmetric difference
    const double hstep = 1e-3;
    h.x = a;
    h.y = 0.5 * (ys + yu);
    h.splitting = fa;
    h.slope = (D(a + hstep) - D(a - hstep)) / (2 * hstep);
  } else {
    double b = a, fb = fa;
    bool found = false;
    for (double w = cfg.x_step; w <= cfg.x_window + 1e-12 && !found; w *= 2.0) {
      for (double sgn : {1.0, -1.0}) {
        const double c = x_guess + sgn * w, fc = D(c);
        if ((fc < 0.0) != (fa < 0.0)) {
          b = c, fb = fc;
          found = true;
          break;
        }
      }
    }
    if (!found)
      throw NumericalError("no sign change in search window", "find_homoclinic_x",
                           "x in " + std::to_string(x_guess) + " +- " + std::to_string(cfg.x_window));
    const auto r = illinois(D, a, fa, b, fb, cfg.root_tol, 1e-12);
    h.x = r.x;
    // re-evaluate at the returned point so y matches x
    h.splitting = D(r.x);
    h.y = 0.5 * (ys + yu);
    const double w = std::abs(r.b - r.a) > 1e-9 ? r.b - r.a : 0.0;
    h.slope = w != 0.0 ? (r.fb - r.fa) / w : 0.0;
    if (w == 0.0) {
      const double hstep = 1e-3;
      h.slope = (D(r.x + hstep) - D(r.x - hstep)) / (2 * hstep);
      h.splitting = D(r.x);
      h.y = 0.5 * (ys + yu);
    }
  }
  if (!(std::abs(h.slope) >= cfg.degeneracy * std::abs(eps)))
    throw NumericalError("degenerate intersection", "find_homoclinic_x",
                         "|dD/dx| / eps = " + std::to_string(std::abs(h.slope / eps)));
  return h;
}

// ---------------------------------------------------------------------------
// Scattering map

struct ScatteringSample {
  std::vector<double> I_minus, theta_minus;
  double t = 0.0;
  double eps = 0.0;
  double x_star = 0.0, y_star = 0.0;
  std::vector<double> I_plus, theta_plus;
  std::vector<double> I_seed, theta_seed;  // (I, θ) of the homoclinic point
  double splitting_residual = 0.0;
  double outer_residual = 0.0;
  std::size_t outer_iterations = 0;
  double horizon = 0.0;
  double footpoint_residual_plus = 0.0, footpoint_residual_minus = 0.0;
  bool degenerate = false;
};

/// σ_eps(I⁻, θ⁻) at time t: finds the homoclinic point on the x-fibre whose
/// backward footpoint is (I⁻, θ⁻) and returns its forward footpoint.
inline ScatteringSample scattering_map_numeric(const SystemSpec& sys, const PerturbationField& field,
                                               std::span<const double> I_minus, std::span<const double> theta_minus,
                                               double t, double eps, double x_guess,
                                               const GeometryConfig& cfg = {}) {
  const std::size_t d = sys.d();
  ScatteringSample out;
  out.I_minus.assign(I_minus.begin(), I_minus.end());
  out.theta_minus.assign(theta_minus.begin(), theta_minus.end());
  out.t = t;
  out.eps = eps;
  out.horizon = horizon(sys, eps, cfg);
  if (eps == 0.0) {
    // unperturbed manifolds coincide: every chart point with y = 0 is homoclinic
    out.degenerate = true;
    out.x_star = x_guess;
    const auto z = chart_state(sys, 0.0, x_guess, I_minus, theta_minus, t, cfg.integrator);
    // the chart point sits |x| time units further from the saddle on one side
    const double T = out.horizon + std::abs(x_guess);
    const auto fm = footpoint_minus(sys, field, z, 0.0, cfg, T);
    const auto fp = footpoint_plus(sys, field, z, 0.0, cfg, T);
    out.I_seed = out.I_minus;
    out.theta_seed = out.theta_minus;
    out.I_plus = fp.I;
    out.theta_plus = fp.theta;
    for (std::size_t j = 0; j < d; ++j)
      out.outer_residual = std::max({out.outer_residual, std::abs(fm.I[j] - I_minus[j]),
                                     std::abs(fm.theta[j] - theta_minus[j])});
    out.footpoint_residual_minus = fm.residual;
    out.footpoint_residual_plus = fp.residual;
    return out;
  }

  const std::size_t m = 2 * d;
  std::vector<double> u(m), target(m);
  for (std::size_t j = 0; j < d; ++j) {
    u[j] = target[j] = I_minus[j];
    u[d + j] = target[d + j] = theta_minus[j];
  }
  std::vector<double> B(m * m, 0.0);
  for (std::size_t j = 0; j < m; ++j) B[j * m + j] = 1.0;

  double x = x_guess;
  HomoclinicResult hp;
  ExtendedState z;
  auto residual = [&](const std::vector<double>& w) {
    std::span<const double> Iw(w.data(), d), thw(w.data() + d, d);
    try {
      hp = find_homoclinic_x(sys, field, Iw, thw, t, eps, x, cfg);
    } catch (const NumericalError& e) {
      throw NumericalError(e.code(), "scattering_map_numeric/" + e.stage(), e.what());
    }
    x = hp.x;
    z = chart_state(sys, hp.y, hp.x, Iw, thw, t, cfg.integrator);
    const auto fm = footpoint_minus(sys, field, z, eps, cfg, out.horizon + std::abs(hp.x));
    out.footpoint_residual_minus = fm.residual;
    std::vector<double> r(m);
    for (std::size_t j = 0; j < d; ++j) {
      r[j] = fm.I[j] - target[j];
      r[d + j] = fm.theta[j] - target[d + j];
    }
    return r;
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s = std::max(s, std::abs(a));
    return s;
  };

  std::vector<double> r = residual(u);
  std::size_t it = 0;
  while (norm(r) > cfg.outer_tol) {
    if (++it > cfg.outer_max_iter)
      throw NumericalError("outer iteration did not converge", "scattering_map_numeric",
                           "footpoint residual " + std::to_string(norm(r)));
    std::vector<double> du = linalg::solve(B, r, "scattering_map_numeric");
    for (double& v : du) v = -v;
    std::vector<double> un(m);
    for (std::size_t k = 0; k < m; ++k) un[k] = u[k] + du[k];
    std::vector<double> rn = residual(un);
    // Broyden rank-one update
    std::vector<double> Bdu(m, 0.0);
    double dd = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < m; ++k) Bdu[i] += B[i * m + k] * du[k];
      dd += du[i] * du[i];
    }
    if (dd > 0.0)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < m; ++k) B[i * m + k] += (rn[i] - r[i] - Bdu[i]) * du[k] / dd;
    u = std::move(un);
    r = std::move(rn);
  }
  out.outer_iterations = it;
  out.outer_residual = norm(r);
  out.x_star = hp.x;
  out.y_star = hp.y;
  out.splitting_residual = hp.splitting;
  out.I_seed.assign(u.begin(), u.begin() + d);
  out.theta_seed.assign(u.begin() + d, u.end());
  const auto fp = footpoint_plus(sys, field, z, eps, cfg, out.horizon + std::abs(hp.x));
  out.footpoint_residual_plus = fp.residual;
  out.I_plus = fp.I;
  out.theta_plus = fp.theta;
  return out;
}

}  // namespace rotpend
