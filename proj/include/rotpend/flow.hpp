#pragma once
// Flows: adaptive Runge-Kutta-Fehlberg 7(8) integration of the extended
// system, the exact flow on the torus p = q = 0, and separatrix orbits.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/numeric/odeint/stepper/controlled_runge_kutta.hpp>
#include <boost/numeric/odeint/stepper/generation.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include "rotpend/model.hpp"

namespace rotpend {

struct IntegratorConfig {
  double atol = 1e-12;
  double rtol = 1e-12;
  double initial_step = 1e-2;
  double max_step = 0.5;
  std::size_t max_steps = 200000;

  void validate() const {
    auto tol_ok = [](double v) { return v > 0.0 && v <= 1e-3; };
    if (!tol_ok(atol) || !tol_ok(rtol)) throw ConfigError("integrator tolerances must lie in (0, 1e-3]");
    if (!(initial_step > 0.0) || !(max_step > 0.0)) throw ConfigError("integrator step sizes must be positive");
    if (max_steps < 10000) throw ConfigError("integrator max_steps must be >= 10000");
  }
};

class FlowError : public std::runtime_error {
 public:
  FlowError(const std::string& what, std::vector<double> last_state, double last_time)
      : std::runtime_error(what), last_state_(std::move(last_state)), last_time_(last_time) {}
  const std::vector<double>& last_state() const { return last_state_; }
  double last_time() const { return last_time_; }

 private:
  std::vector<double> last_state_;
  double last_time_;
};

using State = std::vector<double>;
/// dz/ds at physical time t.
using Rhs = std::function<void(const State& z, State& dz, double t)>;
/// Called after each accepted step; return false to stop early.
using StepObserver = std::function<bool(const State& z, double t)>;

/// Integrate z' = f(z, t) from t0 over a signed duration ds.  The returned
/// time is t0 + ds exactly unless the observer stops early.
inline double integrate(const Rhs& f, State& z, double t0, double ds, const IntegratorConfig& cfg,
                        const StepObserver& observer = {}) {
  namespace odeint = boost::numeric::odeint;
  if (ds == 0.0) return t0;
  if (!std::isfinite(ds)) throw FlowError("non-finite integration span", z, t0);
  using stepper_t = odeint::runge_kutta_fehlberg78<State>;
  const double dir = ds > 0.0 ? 1.0 : -1.0;
  // odeint clamps to max_dt by absolute value and keeps its sign
  auto ctrl = odeint::make_controlled(cfg.atol, cfg.rtol, dir * cfg.max_step, stepper_t());
  // Local time s runs from 0 to ds; physical time is t0 + s.
  auto sys = [&](const State& x, State& dx, double s) { f(x, dx, t0 + s); };
  double s = 0.0;
  double dt = dir * std::min(cfg.initial_step, std::abs(ds));
  State last = z;
  for (std::size_t steps = 0; dir * (ds - s) > 0.0; ++steps) {
    if (steps >= cfg.max_steps)
      throw FlowError("step budget of " + std::to_string(cfg.max_steps) + " exhausted at t=" + std::to_string(t0 + s),
                      last, t0 + s);
    const double remaining = ds - s;
    bool last_step = false;
    if (dir * (dt - remaining) >= 0.0) {
      dt = remaining;
      last_step = true;
    }
    const double s_before = s;
    odeint::controlled_step_result res;
    std::size_t fails = 0;
    do {
      res = ctrl.try_step(sys, z, s, dt);
      if (res == odeint::fail) {
        last_step = false;
        if (++fails > 500 || std::abs(dt) < 1e-14 * std::max(1.0, std::abs(ds)))
          throw FlowError("step size underflow at t=" + std::to_string(t0 + s), last, t0 + s);
      }
    } while (res == odeint::fail);
    if (last_step || dir * (ds - s) <= 1e-15 * std::abs(ds)) s = ds;
    for (double v : z)
      if (!std::isfinite(v)) throw FlowError("non-finite state at t=" + std::to_string(t0 + s), last, t0 + s_before);
    last = z;
    if (observer && !observer(z, t0 + s)) return t0 + s;
  }
  return t0 + ds;
}

/// Fixed-step RKF78 (no error control), used for order-of-accuracy checks.
inline void integrate_fixed(const Rhs& f, State& z, double t0, double ds, std::size_t steps) {
  namespace odeint = boost::numeric::odeint;
  odeint::runge_kutta_fehlberg78<State> stepper;
  auto sys = [&](const State& x, State& dx, double s) { f(x, dx, t0 + s); };
  const double h = ds / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) stepper.do_step(sys, z, static_cast<double>(k) * h, h);
}

inline Rhs perturbed_system(const SystemSpec& sys, const PerturbationField& field, double eps) {
  return [&sys, &field, eps](const State& z, State& dz, double t) { perturbed_rhs(sys, field, z, t, eps, dz); };
}

inline ExtendedState flow_perturbed(const SystemSpec& sys, const PerturbationField& field, const ExtendedState& z,
                                    double ds, double eps, const IntegratorConfig& cfg = {}) {
  State v = z.pack();
  try {
    integrate(perturbed_system(sys, field, eps), v, z.t, ds, cfg);
  } catch (const FlowError& e) {
    throw FlowError(std::string("flow_perturbed: ") + e.what() + "; last good " +
                        ExtendedState::unpack(sys, e.last_state(), e.last_time()).describe(),
                    e.last_state(), e.last_time());
  }
  return ExtendedState::unpack(sys, v, z.t + ds);
}

inline bool on_torus(const ExtendedState& z) {
  for (double v : z.p)
    if (v != 0.0) return false;
  for (double v : z.q)
    if (wrap_half(v) != 0.0) return false;
  return true;
}

/// Exact flow on p = q = 0; other states fall back to numeric integration.
inline ExtendedState flow_unperturbed_exact(const SystemSpec& sys, const ExtendedState& z, double ds,
                                            const IntegratorConfig& cfg = {}) {
  if (!on_torus(z)) return flow_perturbed(sys, zero_field(), z, ds, 0.0, cfg);
  if (ds == 0.0) return z;
  ExtendedState out = z;
  const auto w = sys.rotator.omega(z.I);
  for (std::size_t j = 0; j < sys.d(); ++j) out.theta[j] = z.theta[j] + w[j] * ds;
  out.t = z.t + ds;
  return out;
}

// ---------------------------------------------------------------------------
// Separatrices

/// Homoclinic orbit of one pendulum, q from 0 to 1, normalised so q(0) = 1/2.
class PendulumSeparatrix {
 public:
  PendulumSeparatrix() = default;

  PendulumSeparatrix(const Pendulum& pendulum, const IntegratorConfig& cfg = {}) : pendulum_(pendulum) {
    const double v2 = pendulum.potential.d2(0.0);
    if (!(v2 < 0.0))
      throw ConfigError("saddle detection failed: V''(0) = " + std::to_string(v2) + " is not negative");
    lambda_ = std::sqrt(-v2);
    closed_ = pendulum.potential.is_closed_form();
    if (closed_) return;
    for (int k = 1; k < 200; ++k) {
      const double q = static_cast<double>(k) / 200.0;
      if (!(pendulum.potential.value(q) < 0.0))
        throw ConfigError("potential " + pendulum.potential.describe() +
                          " has no separatrix: V(q) >= 0 at q = " + std::to_string(q));
    }
    cfg_ = cfg;
    cfg_.atol = std::min(cfg.atol, 1e-14);
    cfg_.rtol = std::min(cfg.rtol, 1e-13);
    tmax_ = 40.0 / lambda_;
    const std::size_t count = static_cast<std::size_t>(std::ceil(tmax_ / kStride)) + 1;
    forward_.resize(count);
    backward_.resize(count);
    // forward: w = q - 1 starting at -1/2; backward: q starting at 1/2
    forward_[0] = -0.5;
    backward_[0] = 0.5;
    for (std::size_t k = 1; k < count; ++k) {
      forward_[k] = advance(forward_[k - 1], kStride);
      backward_[k] = advance(backward_[k - 1], -kStride);
    }
  }

  double lambda() const { return lambda_; }
  bool closed_form() const { return closed_; }

  /// (p, q) at time tau along the separatrix.
  void eval(double tau, double& p, double& q) const {
    const double s = pendulum_.sign;
    if (closed_) {
      const double e = std::exp(-std::abs(tau));
      const double sech = 2.0 * e / (1.0 + e * e);
      p = s * sech / kPi;
      const double tail = (2.0 / kPi) * std::atan(e);
      q = tau >= 0.0 ? 1.0 - tail : tail;
      return;
    }
    const double x = tau >= 0.0 ? offset(tau, forward_, 1.0) : offset(-tau, backward_, -1.0);
    const double r = -2.0 * pendulum_.potential.value(x);
    p = s * std::sqrt(std::max(0.0, r));
    q = tau >= 0.0 ? 1.0 + x : x;
  }

 private:
  static constexpr double kStride = 0.25;

  // q' = sqrt(-2 V(q)) along the separatrix.
  double advance(double x, double ds) const {
    State z{x};
    const auto& V = pendulum_.potential;
    integrate([&V](const State& u, State& du, double) { du[0] = std::sqrt(std::max(0.0, -2.0 * V.value(u[0]))); },
              z, 0.0, ds, cfg_);
    return z[0];
  }

  // Coordinate at |tau| = a from the checkpoint table (w for forward, q for backward).
  double offset(double a, const std::vector<double>& table, double dir) const {
    if (a >= tmax_) {
      const double base = table.back();
      const double t_last = kStride * static_cast<double>(table.size() - 1);
      return base * std::exp(-lambda_ * (a - t_last));
    }
    const std::size_t k = static_cast<std::size_t>(std::lround(a / kStride));
    const double h = a - kStride * static_cast<double>(k);
    if (h == 0.0) return table[k];
    return advance(table[k], dir * h);
  }

  Pendulum pendulum_{};
  double lambda_ = 1.0;
  bool closed_ = true;
  double tmax_ = 0.0;
  IntegratorConfig cfg_{};
  std::vector<double> forward_;
  std::vector<double> backward_;
};

/// Per-pendulum separatrix evaluators.
class SeparatrixOrbit {
 public:
  SeparatrixOrbit() = default;
  explicit SeparatrixOrbit(const SystemSpec& sys, const IntegratorConfig& cfg = {}) {
    for (const auto& P : sys.penduli) branches_.emplace_back(P, cfg);
  }

  std::size_t size() const { return branches_.size(); }
  double lambda(std::size_t i) const { return branches_[i].lambda(); }
  bool closed_form(std::size_t i) const { return branches_[i].closed_form(); }
  bool all_closed_form() const {
    return std::all_of(branches_.begin(), branches_.end(), [](const auto& b) { return b.closed_form(); });
  }
  void eval(std::size_t i, double tau, double& p, double& q) const { branches_[i].eval(tau, p, q); }

  /// Writes the separatrix point at times tau_i + s into the pendulum slots of z.
  void fill(std::span<const double> tau, double s, std::span<double> z) const {
    const std::size_t n = branches_.size();
    for (std::size_t i = 0; i < n; ++i) branches_[i].eval(tau[i] + s, z[i], z[n + i]);
  }

 private:
  std::vector<PendulumSeparatrix> branches_;
};

inline SeparatrixOrbit separatrix(const SystemSpec& sys, const IntegratorConfig& cfg = {}) {
  return SeparatrixOrbit(sys, cfg);
}

/// (p0(tau), q0(tau), I, theta, t): a point of W^u(Λ0) = W^s(Λ0).
inline ExtendedState homoclinic_point(const SystemSpec& sys, const SeparatrixOrbit& sep, std::span<const double> tau,
                                      std::span<const double> I, std::span<const double> theta, double t) {
  ExtendedState z = ExtendedState::zeros(sys);
  for (std::size_t i = 0; i < sys.n(); ++i) sep.eval(i, tau[i], z.p[i], z.q[i]);
  z.I.assign(I.begin(), I.end());
  z.theta.assign(theta.begin(), theta.end());
  z.t = t;
  return z;
}

inline ExtendedState homoclinic_point(const SystemSpec& sys, std::span<const double> tau, std::span<const double> I,
                                      std::span<const double> theta, double t) {
  return homoclinic_point(sys, separatrix(sys), tau, I, theta, t);
}

}  // namespace rotpend
