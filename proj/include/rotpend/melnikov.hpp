#pragma once
// First-order scattering calculus: the paired-orbit integral operators
// J+ / J-, the splitting function M_y and the first-order changes in action
// and angle along a homoclinic excursion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "rotpend/flow.hpp"
#include "rotpend/model.hpp"
#include "rotpend/quadrature.hpp"
#include "rotpend/roots.hpp"

namespace rotpend {

/// Scalar observable F(z, t) on the extended phase space.
using Observable = std::function<double(std::span<const double> z, double t)>;

inline Observable observable(const exprs::Expr& e) {
  return [e](std::span<const double> z, double t) {
    thread_local std::vector<double> b;
    b.assign(z.begin(), z.end());
    b.push_back(t);
    b.push_back(0.0);
    return e.eval(b);
  };
}

/// (X0 + eps X1) F for an expression F, including the explicit t-derivative.
inline Observable lie_derivative(const SystemSpec& sys, const PerturbationField& field, double eps,
                                 const exprs::Expr& F) {
  return [&sys, &field, eps, F](std::span<const double> z, double t) {
    thread_local std::vector<double> b, dir;
    const std::size_t m = z.size();
    dir.assign(m + 2, 0.0);
    perturbed_rhs(sys, field, z, t, eps, std::span<double>(dir).first(m));
    dir[m] = 1.0;  // t' = 1
    b.assign(z.begin(), z.end());
    b.push_back(t);
    b.push_back(eps);
    return F.eval_dual(b, dir).d;
  };
}

// ---------------------------------------------------------------------------
// Orbits s ↦ z(s) at physical time t0 + s

struct Orbit {
  std::function<void(double s, std::span<double> z)> state;
  double t0 = 0.0;
  std::size_t dim = 0;
};

/// Unperturbed orbit on the torus: (0, 0, I, θ + ωs).
inline Orbit torus_orbit(const SystemSpec& sys, std::span<const double> I, std::span<const double> theta, double t) {
  const std::size_t n = sys.n(), d = sys.d();
  std::vector<double> Iv(I.begin(), I.end()), th(theta.begin(), theta.end());
  const auto w = sys.rotator.omega(Iv);
  Orbit o;
  o.t0 = t;
  o.dim = sys.state_size();
  o.state = [n, d, Iv, th, w](double s, std::span<double> z) {
    for (std::size_t i = 0; i < 2 * n; ++i) z[i] = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      z[2 * n + j] = Iv[j];
      z[2 * n + d + j] = th[j] + w[j] * s;
    }
  };
  return o;
}

/// Unperturbed orbit through homoclinic_point(tau, I, θ, t).
inline Orbit separatrix_orbit(const SystemSpec& sys, std::shared_ptr<const SeparatrixOrbit> sep,
                              std::span<const double> tau, std::span<const double> I, std::span<const double> theta,
                              double t) {
  Orbit o = torus_orbit(sys, I, theta, t);
  std::vector<double> tv(tau.begin(), tau.end());
  o.state = [base = o.state, sep, tv](double s, std::span<double> z) {
    base(s, z);
    sep->fill(tv, s, z);
  };
  return o;
}

/// Numerically integrated orbit under the eps-flow, with checkpoints at
/// integer times cached as they are reached.
inline Orbit numeric_orbit(const SystemSpec& sys, const PerturbationField& field, double eps,
                           const ExtendedState& z0, const IntegratorConfig& cfg = {}) {
  struct Cache {
    std::mutex mu;
    std::map<long, State> points;
  };
  auto cache = std::make_shared<Cache>();
  cache->points[0] = z0.pack();
  Orbit o;
  o.t0 = z0.t;
  o.dim = sys.state_size();
  o.state = [&sys, &field, eps, cache, cfg, t0 = z0.t](double s, std::span<double> z) {
    const Rhs rhs = perturbed_system(sys, field, eps);
    const long k = static_cast<long>(std::trunc(s));
    State x;
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->points.find(k);
      if (it == cache->points.end()) {
        const long step = k > 0 ? 1 : -1;
        long j = k;
        while (cache->points.find(j) == cache->points.end()) j -= step;
        State cur = cache->points[j];
        while (j != k) {
          integrate(rhs, cur, t0 + static_cast<double>(j), static_cast<double>(step), cfg);
          j += step;
          cache->points[j] = cur;
        }
        it = cache->points.find(k);
      }
      x = it->second;
    }
    integrate(rhs, x, t0 + static_cast<double>(k), s - static_cast<double>(k), cfg);
    std::copy(x.begin(), x.end(), z.begin());
  };
  return o;
}

/// Closed-form orbit when available (eps = 0 on the torus), numeric otherwise.
inline Orbit make_orbit(const SystemSpec& sys, const PerturbationField& field, double eps, const ExtendedState& z,
                        const IntegratorConfig& cfg = {}) {
  if (eps == 0.0 && on_torus(z)) return torus_orbit(sys, z.I, z.theta, z.t);
  return numeric_orbit(sys, field, eps, z, cfg);
}

// ---------------------------------------------------------------------------
// J± operators

namespace detail {

inline QuadResult master(const Observable& F, const Orbit& foot, const Orbit& point, double dir,
                         const QuadratureConfig& cfg) {
  if (foot.dim != point.dim) throw ConfigError("orbits have different dimensions");
  std::vector<double> za(foot.dim), zb(point.dim);
  auto integrand = [&](double s, std::span<double> out) {
    foot.state(s, za);
    point.state(s, zb);
    out[0] = F(za, foot.t0 + s) - F(zb, point.t0 + s);
  };
  return integrate_half_line(integrand, 1, dir, cfg);
}

}  // namespace detail

/// J+(F) = ∫_0^∞ F(Φ^s z+) - F(Φ^s z) ds.
inline QuadResult master_plus(const Observable& F, const Orbit& footpoint, const Orbit& point,
                              const QuadratureConfig& cfg = {}) {
  return detail::master(F, footpoint, point, 1.0, cfg);
}

/// J-(F) = ∫_{-∞}^0 F(Φ^s z-) - F(Φ^s z) ds.
inline QuadResult master_minus(const Observable& F, const Orbit& footpoint, const Orbit& point,
                               const QuadratureConfig& cfg = {}) {
  return detail::master(F, footpoint, point, -1.0, cfg);
}

// ---------------------------------------------------------------------------
// First-order formulas

struct MelnikovConfig {
  QuadratureConfig quad{};
  /// Use ∫_0^∞ instead of ∫_{-∞}^∞ for the s-weighted action term of Δθ.
  bool half_line_theta = false;
};

struct MelnikovResult {
  std::vector<double> M_y;      // n
  std::vector<double> dI1;      // d
  std::vector<double> dtheta1;  // d, variant selected by the config
  std::vector<double> dtheta1_full;
  std::vector<double> dtheta1_half;
  std::vector<double> s_weighted_full;  // ∫ s ΔX1I over the line
  std::vector<double> s_weighted_half;  // over [0, ∞)
  double tail_estimate = 0.0;
  double quad_error = 0.0;
  double cutoff_plus = 0.0;
  double cutoff_minus = 0.0;
};

/// Decay rate used for Melnikov integrands: the slowest pendulum exponent.
inline double slowest_rate(const SeparatrixOrbit& sep) {
  double r = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sep.size(); ++i) r = std::min(r, sep.lambda(i));
  return r;
}

/// Differences X1(torus orbit) - X1(separatrix orbit) integrated over both
/// half-lines.  Components: [Δy (n), ΔI (d), Δθ (d), s·ΔI (d)].
inline MelnikovResult melnikov(const SystemSpec& sys, const PerturbationField& field, const SeparatrixOrbit& sep,
                               std::span<const double> tau, std::span<const double> I, std::span<const double> theta,
                               double t, const MelnikovConfig& cfg = {}) {
  const std::size_t n = sys.n(), d = sys.d(), N = sys.state_size();
  const std::size_t m = n + 3 * d;
  std::vector<double> Iv(I.begin(), I.end());
  const auto w = sys.rotator.omega(Iv);
  std::vector<double> zl(N), zs(N), xl(N), xs(N), yl(n), ys(n);
  auto integrand = [&](double s, std::span<double> out) {
    for (std::size_t i = 0; i < 2 * n; ++i) zl[i] = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      zl[2 * n + j] = I[j];
      zl[2 * n + d + j] = theta[j] + w[j] * s;
    }
    std::copy(zl.begin(), zl.end(), zs.begin());
    sep.fill(tau, s, zs);
    field(zl, t + s, 0.0, xl);
    field(zs, t + s, 0.0, xs);
    energy_rate(sys, zl, xl, yl);
    energy_rate(sys, zs, xs, ys);
    for (std::size_t i = 0; i < n; ++i) out[i] = yl[i] - ys[i];
    for (std::size_t j = 0; j < d; ++j) {
      const double dI = xl[2 * n + j] - xs[2 * n + j];
      out[n + j] = dI;
      out[n + d + j] = xl[2 * n + d + j] - xs[2 * n + d + j];
      out[n + 2 * d + j] = s * dI;
    }
  };
  QuadratureConfig q = cfg.quad;
  q.rate = slowest_rate(sep);
  const QuadResult plus = integrate_half_line(integrand, m, 1.0, q);
  const QuadResult minus = integrate_half_line(integrand, m, -1.0, q);

  MelnikovResult r;
  auto full = [&](std::size_t k) { return plus.value[k] + minus.value[k]; };
  for (std::size_t i = 0; i < n; ++i) r.M_y.push_back(-full(i));
  for (std::size_t j = 0; j < d; ++j) {
    r.dI1.push_back(-full(n + j));
    r.s_weighted_full.push_back(full(n + 2 * d + j));
    r.s_weighted_half.push_back(plus.value[n + 2 * d + j]);
  }
  const auto H = sys.rotator.hessian(Iv);
  for (std::size_t j = 0; j < d; ++j) {
    double a = -full(n + d + j), b = a;
    for (std::size_t i = 0; i < d; ++i) {
      a += r.s_weighted_full[i] * H[i * d + j];
      b += r.s_weighted_half[i] * H[i * d + j];
    }
    r.dtheta1_full.push_back(a);
    r.dtheta1_half.push_back(b);
  }
  r.dtheta1 = cfg.half_line_theta ? r.dtheta1_half : r.dtheta1_full;
  for (std::size_t k = 0; k < m; ++k) {
    r.tail_estimate = std::max(r.tail_estimate, plus.tail[k] + minus.tail[k]);
    r.quad_error = std::max(r.quad_error, plus.error[k] + minus.error[k]);
  }
  r.cutoff_plus = plus.cutoff;
  r.cutoff_minus = minus.cutoff;
  return r;
}

inline MelnikovResult melnikov(const SystemSpec& sys, const PerturbationField& field, std::span<const double> tau,
                               std::span<const double> I, std::span<const double> theta, double t,
                               const MelnikovConfig& cfg = {}) {
  return melnikov(sys, field, separatrix(sys), tau, I, theta, t, cfg);
}

/// M_y(τ, I, θ, t): first-order splitting y^u - y^s ≈ eps M_y.
inline std::vector<double> splitting_integral(const SystemSpec& sys, const PerturbationField& field,
                                              const SeparatrixOrbit& sep, std::span<const double> tau,
                                              std::span<const double> I, std::span<const double> theta, double t,
                                              const MelnikovConfig& cfg = {}) {
  return melnikov(sys, field, sep, tau, I, theta, t, cfg).M_y;
}

/// Simple zero of τ ↦ M_y(τ, I, θ, t) for n = 1, near the guess: a scan over
/// guess ± halfwidth for a sign change, then bisection-safeguarded secant.
inline double splitting_zero(const SystemSpec& sys, const PerturbationField& field, const SeparatrixOrbit& sep,
                             std::span<const double> I, std::span<const double> theta, double t, double guess,
                             const MelnikovConfig& cfg = {}, double halfwidth = 3.0, double step = 0.25) {
  if (sys.n() != 1) throw ConfigError("splitting_zero needs exactly one pendulum");
  auto M = [&](double tau) { return splitting_integral(sys, field, sep, std::vector{tau}, I, theta, t, cfg)[0]; };
  double a = 0.0, b = 0.0, fa = 0.0, fb = 0.0;
  bool found = false;
  double best = std::numeric_limits<double>::infinity();
  const int K = static_cast<int>(std::round(halfwidth / step));
  double prev_x = guess - K * step, prev_f = M(prev_x);
  for (int k = -K + 1; k <= K; ++k) {
    const double x = guess + k * step, f = M(x);
    if ((prev_f <= 0.0) != (f <= 0.0)) {
      const double mid = 0.5 * (prev_x + x);
      if (std::abs(mid - guess) < best) {
        best = std::abs(mid - guess);
        a = prev_x, fa = prev_f, b = x, fb = f;
        found = true;
      }
    }
    prev_x = x;
    prev_f = f;
  }
  if (!found) throw NumericalError("no sign change in search window", "splitting_zero", "");
  return illinois(M, a, fa, b, fb, 1e-13, 1e-13).x;
}

inline std::vector<double> delta_I_first_order(const SystemSpec& sys, const PerturbationField& field,
                                               const SeparatrixOrbit& sep, std::span<const double> tau,
                                               std::span<const double> I, std::span<const double> theta, double t,
                                               const MelnikovConfig& cfg = {}) {
  return melnikov(sys, field, sep, tau, I, theta, t, cfg).dI1;
}

inline std::vector<double> delta_theta_first_order(const SystemSpec& sys, const PerturbationField& field,
                                                   const SeparatrixOrbit& sep, std::span<const double> tau,
                                                   std::span<const double> I, std::span<const double> theta, double t,
                                                   const MelnikovConfig& cfg = {}) {
  return melnikov(sys, field, sep, tau, I, theta, t, cfg).dtheta1;
}

/// |-∫_0^∞ A(s) ds - ∫_0^∞ s ΔX1I(s) ds| per action component, where
/// A(s) = -∫_s^∞ ΔX1I is the antiderivative vanishing at +∞.  Both sides
/// are computed by independent quadratures.
inline std::vector<double> integration_by_parts_check(const SystemSpec& sys, const PerturbationField& field,
                                                      const SeparatrixOrbit& sep, std::span<const double> tau,
                                                      std::span<const double> I, std::span<const double> theta,
                                                      double t, const QuadratureConfig& qcfg = {}) {
  const std::size_t n = sys.n(), d = sys.d(), N = sys.state_size();
  std::vector<double> Iv(I.begin(), I.end());
  const auto w = sys.rotator.omega(Iv);
  QuadratureConfig q = qcfg;
  q.rate = slowest_rate(sep);
  auto delta_I = [&](double s, std::span<double> out) {
    std::vector<double> zl(N), zs(N), xl(N), xs(N);
    for (std::size_t j = 0; j < d; ++j) {
      zl[2 * n + j] = I[j];
      zl[2 * n + d + j] = theta[j] + w[j] * s;
    }
    zs = zl;
    sep.fill(tau, s, zs);
    field(zl, t + s, 0.0, xl);
    field(zs, t + s, 0.0, xs);
    for (std::size_t j = 0; j < d; ++j) out[j] = xl[2 * n + j] - xs[2 * n + j];
  };
  // right side: ∫_0^∞ s ΔX1I
  const QuadResult rhs = integrate_half_line(
      [&](double s, std::span<double> out) {
        delta_I(s, out);
        for (double& v : out) v *= s;
      },
      d, 1.0, q);
  // left side: -∫_0^∞ A(s) ds with A(s) = -∫_0^∞ ΔX1I(s + u) du
  QuadratureConfig inner = q;
  inner.tol = q.tol * 1e-2;
  const QuadResult lhs = integrate_half_line(
      [&](double s, std::span<double> out) {
        const QuadResult a = integrate_half_line(
            [&](double u, std::span<double> o) { delta_I(s + u, o); }, d, 1.0, inner);
        for (std::size_t j = 0; j < d; ++j) out[j] = a.value[j];  // -A(s)
      },
      d, 1.0, q);
  std::vector<double> res(d);
  for (std::size_t j = 0; j < d; ++j) res[j] = std::abs(lhs.value[j] - rhs.value[j]);
  return res;
}

}  // namespace rotpend
