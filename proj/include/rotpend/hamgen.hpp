#pragma once
// Hamiltonian perturbations: the Melnikov potential L(τ; I, θ, t), its
// critical point τ*, the reduced function 𝓛 = L(τ*) and its gradients,
// and the generating function S = -𝓛 of the first-order scattering map.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rotpend/flow.hpp"
#include "rotpend/linalg.hpp"
#include "rotpend/model.hpp"
#include "rotpend/quadrature.hpp"

namespace rotpend {

struct HamgenConfig {
  QuadratureConfig quad{.tol = 1e-12};
  double newton_tol = 1e-10;      // on |∂L/∂τ|
  std::size_t newton_max_iter = 50;
  double hessian_step = 1e-4;     // central differences of ∂L/∂τ
  double min_abs_det = 1e-8;
  double scan_halfwidth = 3.0;    // grid scan window around the guess
  double scan_step = 0.25;
};

/// Value, τ-gradient and (I, θ)-gradients of L at one τ.
struct PotentialEval {
  double L = 0.0;
  std::vector<double> dtau;    // n
  std::vector<double> dtheta;  // d, ∂L/∂θ
  std::vector<double> dI;      // d, ∂L/∂I
  double tail_estimate = 0.0;
};

struct GeneratingEval {
  double L = 0.0;  // 𝓛(I, θ, t) = L(τ*, I, θ, t)
  std::vector<double> tau_star;
  std::vector<double> hessian;  // n×n, ∂²L/∂τ² at τ*
  double hessian_det = 0.0;
  double grad_tau_norm = 0.0;
  std::vector<double> dtheta;   // ∂𝓛/∂θ
  std::vector<double> dI;       // ∂𝓛/∂I
  std::size_t newton_iterations = 0;
};

/// One quadrature pass over the line giving L and all first derivatives.
/// L = -∫ (H1(sep(τ+s), I, θ+ωs, t+s) - H1(0, 0, I, θ+ωs, t+s)) ds.
inline PotentialEval melnikov_potential(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                        std::span<const double> tau, std::span<const double> I,
                                        std::span<const double> theta, double t, const HamgenConfig& cfg = {}) {
  const std::size_t n = sys.n(), d = sys.d(), N = sys.state_size();
  const std::size_t m = 1 + n + 2 * d;
  std::vector<double> Iv(I.begin(), I.end());
  const auto w = sys.rotator.omega(Iv);
  const auto H = sys.rotator.hessian(Iv);
  std::vector<std::size_t> wrt(N);
  for (std::size_t k = 0; k < N; ++k) wrt[k] = k;
  std::vector<double> bl(N + 2), bs(N + 2), gl(N), gs(N);
  auto integrand = [&](double s, std::span<double> out) {
    std::fill(bl.begin(), bl.end(), 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      bl[2 * n + j] = I[j];
      bl[2 * n + d + j] = theta[j] + w[j] * s;
    }
    bl[N] = t + s;
    bs = bl;
    sep.fill(tau, s, bs);
    const double hl = H1.eval_gradient(bl, wrt, gl);
    const double hs = H1.eval_gradient(bs, wrt, gs);
    out[0] = hs - hl;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& P = sys.penduli[i];
      const double p = bs[i], q = bs[n + i];
      // d/dτ of the separatrix: p' = -sV'(q), q' = sp
      out[1 + i] = gs[i] * (-P.sign * P.potential.d1(q)) + gs[n + i] * (P.sign * p);
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[1 + n + j] = gs[2 * n + d + j] - gl[2 * n + d + j];
      double v = gs[2 * n + j] - gl[2 * n + j];
      for (std::size_t k = 0; k < d; ++k) v += (gs[2 * n + d + k] - gl[2 * n + d + k]) * H[k * d + j] * s;
      out[1 + n + d + j] = v;
    }
  };
  QuadratureConfig q = cfg.quad;
  double rate = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) rate = std::min(rate, sep.lambda(i));
  q.rate = rate;
  const QuadResult r = integrate_line(integrand, m, q);
  PotentialEval e;
  e.L = -r.value[0];
  for (std::size_t i = 0; i < n; ++i) e.dtau.push_back(-r.value[1 + i]);
  for (std::size_t j = 0; j < d; ++j) {
    e.dtheta.push_back(-r.value[1 + n + j]);
    e.dI.push_back(-r.value[1 + n + d + j]);
  }
  e.tail_estimate = r.max_tail();
  return e;
}

inline double L_value(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                      std::span<const double> tau, std::span<const double> I, std::span<const double> theta, double t,
                      const HamgenConfig& cfg = {}) {
  return melnikov_potential(sys, H1, sep, tau, I, theta, t, cfg).L;
}

namespace detail {

inline double norm_inf(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

/// ∂²L/∂τ² by central differences of the exact τ-gradient.
inline std::vector<double> tau_hessian(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                       std::span<const double> tau, std::span<const double> I,
                                       std::span<const double> theta, double t, const HamgenConfig& cfg = {}) {
  const std::size_t n = sys.n();
  std::vector<double> Hs(n * n);
  const double h = cfg.hessian_step;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> tp(tau.begin(), tau.end()), tm(tau.begin(), tau.end());
    tp[k] += h;
    tm[k] -= h;
    const auto gp = melnikov_potential(sys, H1, sep, tp, I, theta, t, cfg).dtau;
    const auto gm = melnikov_potential(sys, H1, sep, tm, I, theta, t, cfg).dtau;
    for (std::size_t i = 0; i < n; ++i) Hs[i * n + k] = (gp[i] - gm[i]) / (2 * h);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = i + 1; k < n; ++k) Hs[i * n + k] = Hs[k * n + i] = 0.5 * (Hs[i * n + k] + Hs[k * n + i]);
  return Hs;
}

/// Coarse scan for a sign change of ∂L/∂τ near the guess (n = 1); for n > 1
/// the guess is returned unchanged.
inline std::vector<double> scan_tau(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                    std::span<const double> guess, std::span<const double> I,
                                    std::span<const double> theta, double t, const HamgenConfig& cfg = {}) {
  std::vector<double> g(guess.begin(), guess.end());
  if (sys.n() != 1) return g;
  HamgenConfig coarse = cfg;
  coarse.quad.tol = 1e-8;
  const double c = guess[0];
  const int K = static_cast<int>(std::round(cfg.scan_halfwidth / cfg.scan_step));
  std::vector<double> xs, ds;
  for (int k = -K; k <= K; ++k) {
    std::vector<double> tau{c + k * cfg.scan_step};
    xs.push_back(tau[0]);
    ds.push_back(melnikov_potential(sys, H1, sep, tau, I, theta, t, coarse).dtau[0]);
  }
  double best = c, best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    if ((ds[k] <= 0.0) != (ds[k + 1] <= 0.0)) {
      const double root = xs[k] - ds[k] * (xs[k + 1] - xs[k]) / (ds[k + 1] - ds[k]);
      if (std::abs(root - c) < best_dist) {
        best_dist = std::abs(root - c);
        best = root;
      }
    }
  }
  return {best};
}

/// Non-degenerate critical point of τ ↦ L(τ, I, θ, t) by damped Newton.
inline std::vector<double> tau_star(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                    std::span<const double> I, std::span<const double> theta, double t,
                                    std::span<const double> guess, const HamgenConfig& cfg = {},
                                    std::size_t* iterations = nullptr, std::vector<double>* hessian_out = nullptr) {
  const std::size_t n = sys.n();
  std::vector<double> tau = scan_tau(sys, H1, sep, guess, I, theta, t, cfg);
  auto grad = [&](const std::vector<double>& x) { return melnikov_potential(sys, H1, sep, x, I, theta, t, cfg).dtau; };
  std::vector<double> g = grad(tau);
  std::vector<double> Hs;
  std::size_t it = 0;
  for (;; ++it) {
    Hs = tau_hessian(sys, H1, sep, tau, I, theta, t, cfg);
    const double dt = linalg::det(Hs, n);
    if (!(std::abs(dt) >= cfg.min_abs_det))
      throw NumericalError("degenerate Hessian", "tau_star", "|det| = " + std::to_string(std::abs(dt)));
    if (detail::norm_inf(g) <= cfg.newton_tol) break;
    if (it >= cfg.newton_max_iter)
      throw NumericalError("Newton divergence", "tau_star",
                           "|dL/dtau| = " + std::to_string(detail::norm_inf(g)) + " after " + std::to_string(it) +
                               " iterations");
    std::vector<double> step = linalg::solve(Hs, g);
    double lam = 1.0;
    const double g0 = detail::norm_inf(g);
    for (int bt = 0;; ++bt) {
      std::vector<double> trial(tau);
      for (std::size_t i = 0; i < n; ++i) trial[i] -= lam * step[i];
      auto gt = grad(trial);
      if (detail::norm_inf(gt) < g0 || bt >= 10) {
        tau = std::move(trial);
        g = std::move(gt);
        break;
      }
      lam *= 0.5;
    }
  }
  if (iterations) *iterations = it;
  if (hessian_out) *hessian_out = Hs;
  return tau;
}

/// 𝓛(I, θ, t) with gradients taken at τ* (envelope property).
inline GeneratingEval script_L(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                               std::span<const double> I, std::span<const double> theta, double t,
                               std::span<const double> guess, const HamgenConfig& cfg = {}) {
  GeneratingEval g;
  if (!H1.depends_on(exprs::VarKind::p) && !H1.depends_on(exprs::VarKind::q)) {
    // L vanishes identically; 𝓛 = 0 whatever τ* is taken to be
    g.tau_star.assign(guess.begin(), guess.end());
    g.hessian.assign(sys.n() * sys.n(), 0.0);
    g.dtheta.assign(sys.d(), 0.0);
    g.dI.assign(sys.d(), 0.0);
    return g;
  }
  g.tau_star = tau_star(sys, H1, sep, I, theta, t, guess, cfg, &g.newton_iterations, &g.hessian);
  g.hessian_det = linalg::det(g.hessian, sys.n());
  const auto e = melnikov_potential(sys, H1, sep, g.tau_star, I, theta, t, cfg);
  g.L = e.L;
  g.grad_tau_norm = detail::norm_inf(e.dtau);
  g.dtheta = e.dtheta;
  g.dI = e.dI;
  return g;
}

/// |∂L/∂τ · dτ*/dI| per action component at the critical point: the part of
/// d𝓛/dI dropped by the envelope property.  dτ*/dI = -H⁻¹ ∂²L/∂τ∂I with the
/// mixed derivative from central differences of ∂L/∂τ in I.
inline std::vector<double> envelope_residual(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                             const GeneratingEval& g, std::span<const double> I,
                                             std::span<const double> theta, double t, const HamgenConfig& cfg = {}) {
  const std::size_t n = sys.n(), d = sys.d();
  const auto g0 = melnikov_potential(sys, H1, sep, g.tau_star, I, theta, t, cfg).dtau;
  std::vector<double> res(d);
  const double h = cfg.hessian_step;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> Ip(I.begin(), I.end()), Im(I.begin(), I.end());
    Ip[j] += h;
    Im[j] -= h;
    const auto gp = melnikov_potential(sys, H1, sep, g.tau_star, Ip, theta, t, cfg).dtau;
    const auto gm = melnikov_potential(sys, H1, sep, g.tau_star, Im, theta, t, cfg).dtau;
    std::vector<double> mixed(n);
    for (std::size_t i = 0; i < n; ++i) mixed[i] = (gp[i] - gm[i]) / (2 * h);
    const auto dtau = linalg::solve(g.hessian, mixed);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v -= g0[i] * dtau[i];
    res[j] = std::abs(v);
  }
  return res;
}

struct GeneratingS {
  double S = 0.0;
  std::vector<double> dS_dI, dS_dtheta;
  /// First-order scattering shift ε J∇S per unit ε: (ΔI, Δθ) = (-∂S/∂θ, ∂S/∂I).
  std::vector<double> shift_I, shift_theta;
};

/// S = -𝓛.
inline GeneratingS generating_S(const GeneratingEval& g) {
  GeneratingS s;
  s.S = -g.L;
  for (double v : g.dI) s.dS_dI.push_back(-v);
  for (double v : g.dtheta) s.dS_dtheta.push_back(-v);
  for (double v : s.dS_dtheta) s.shift_I.push_back(-v);
  s.shift_theta = s.dS_dI;
  return s;
}

inline GeneratingS generating_S(const SystemSpec& sys, const exprs::Expr& H1, const SeparatrixOrbit& sep,
                                std::span<const double> I, std::span<const double> theta, double t,
                                std::span<const double> guess, const HamgenConfig& cfg = {}) {
  return generating_S(script_L(sys, H1, sep, I, theta, t, guess, cfg));
}

}  // namespace rotpend
