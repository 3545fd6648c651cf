#pragma once
// Vector-valued adaptive Gauss-Kronrod (7/15) quadrature and half-line
// integrals of exponentially decaying integrands.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "rotpend/errors.hpp"

namespace rotpend {

struct QuadratureConfig {
  double tol = 1e-10;           // absolute, per component
  double rate = 1.0;            // decay rate of the integrand envelope
  double panel = 1.0;           // initial panel width
  std::size_t max_panels = 4000;
  double max_cutoff = 400.0;
  double cutoff_scale = 1.0;    // multiplies the computed cutoff (tail-stability checks)
  double min_cutoff = 4.0;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("quadrature tolerance must be positive");
    if (!(rate > 0.0)) throw ConfigError("quadrature decay rate must be positive");
    if (!(panel > 0.0)) throw ConfigError("quadrature panel width must be positive");
    if (!(cutoff_scale >= 1.0)) throw ConfigError("quadrature cutoff_scale must be >= 1");
  }
};

/// f(s, out): writes m components.
using VectorIntegrand = std::function<void(double s, std::span<double> out)>;

struct QuadResult {
  std::vector<double> value;
  std::vector<double> error;  // quadrature error estimate per component
  std::vector<double> tail;   // estimated remainder beyond the cutoff
  double cutoff = 0.0;
  std::size_t evaluations = 0;

  double max_tail() const { return tail.empty() ? 0.0 : *std::max_element(tail.begin(), tail.end()); }
};

namespace detail {

struct Panel {
  double a, b;
  std::vector<double> value;
  double err;  // max-norm
  std::vector<double> err_vec;
  bool operator<(const Panel& o) const { return err < o.err; }
};

inline Panel gk15(const VectorIntegrand& f, std::size_t m, double a, double b, std::size_t& evals) {
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  const auto& xk = gauss_kronrod<double, 15>::abscissa();
  const auto& wk = gauss_kronrod<double, 15>::weights();
  const auto& wg = gauss<double, 7>::weights();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  thread_local std::vector<double> buf;
  buf.resize(m);
  std::vector<double> K(m, 0.0), G(m, 0.0);
  f(c, buf);
  ++evals;
  for (std::size_t j = 0; j < m; ++j) {
    K[j] = wk[0] * buf[j];
    G[j] = wg[0] * buf[j];
  }
  for (std::size_t i = 1; i < xk.size(); ++i) {
    const double dx = h * xk[i];
    for (double x : {c - dx, c + dx}) {
      f(x, buf);
      ++evals;
      for (std::size_t j = 0; j < m; ++j) {
        K[j] += wk[i] * buf[j];
        if (i % 2 == 0) G[j] += wg[i / 2] * buf[j];
      }
    }
  }
  Panel p{a, b, std::vector<double>(m), 0.0, std::vector<double>(m)};
  for (std::size_t j = 0; j < m; ++j) {
    p.value[j] = h * K[j];
    p.err_vec[j] = std::abs(h * (K[j] - G[j]));
    if (!std::isfinite(p.value[j]))
      throw NumericalError("non-finite integrand", "quadrature", "panel [" + std::to_string(a) + ", " + std::to_string(b) + "]");
    p.err = std::max(p.err, p.err_vec[j]);
  }
  return p;
}

}  // namespace detail

/// Adaptive GK15 over [a, b] to an absolute tolerance on every component.
inline QuadResult integrate_interval(const VectorIntegrand& f, std::size_t m, double a, double b,
                                     const QuadratureConfig& cfg) {
  QuadResult r;
  r.value.assign(m, 0.0);
  r.error.assign(m, 0.0);
  r.tail.assign(m, 0.0);
  if (a == b) return r;
  const double len = std::abs(b - a);
  const std::size_t n0 = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / cfg.panel)));
  std::priority_queue<detail::Panel> heap;
  std::size_t evals = 0;
  for (std::size_t k = 0; k < n0; ++k) {
    const double x0 = a + (b - a) * static_cast<double>(k) / static_cast<double>(n0);
    const double x1 = k + 1 == n0 ? b : a + (b - a) * static_cast<double>(k + 1) / static_cast<double>(n0);
    heap.push(detail::gk15(f, m, x0, x1, evals));
  }
  auto sum_err = [&] {
    std::vector<double> e(m, 0.0);
    auto copy = heap;
    while (!copy.empty()) {
      for (std::size_t j = 0; j < m; ++j) e[j] += copy.top().err_vec[j];
      copy.pop();
    }
    return e;
  };
  std::vector<double> err = sum_err();
  auto max_of = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); };
  std::size_t panels = n0;
  while (max_of(err) > 0.5 * cfg.tol) {
    if (panels >= cfg.max_panels)
      throw NumericalError("non-convergent panel refinement", "quadrature",
                           "error " + std::to_string(max_of(err)) + " after " + std::to_string(panels) + " panels");
    detail::Panel worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    auto left = detail::gk15(f, m, worst.a, mid, evals);
    auto right = detail::gk15(f, m, mid, worst.b, evals);
    for (std::size_t j = 0; j < m; ++j) err[j] += left.err_vec[j] + right.err_vec[j] - worst.err_vec[j];
    heap.push(std::move(left));
    heap.push(std::move(right));
    ++panels;
    // periodic exact recount guards against drift in the running sum
    if (panels % 64 == 0) err = sum_err();
  }
  while (!heap.empty()) {
    const auto& p = heap.top();
    for (std::size_t j = 0; j < m; ++j) {
      r.value[j] += p.value[j];
      r.error[j] += p.err_vec[j];
    }
    heap.pop();
  }
  r.evaluations = evals;
  return r;
}

/// Integral of f over the half-line {dir·s : s >= 0} (so dir = -1 gives
/// ∫_{-∞}^0 f(s) ds) for an integrand decaying like exp(-rate |s|),
/// possibly times a polynomial factor.  The cutoff S solves
/// envelope(S)/rate <= tol/10 with the envelope sampled near S.
inline QuadResult integrate_half_line(const VectorIntegrand& f, std::size_t m, double dir,
                                      const QuadratureConfig& cfg) {
  const double rate = cfg.rate;
  std::vector<double> buf(m);
  std::size_t evals = 0;
  auto envelope = [&](double S) {
    double e = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double s = S - 0.25 * k;
      f(dir * s, buf);
      ++evals;
      for (double v : buf) e = std::max(e, std::abs(v) * std::exp(-rate * (S - s)));
    }
    return e;
  };
  auto tail_of = [&](double S, double env) { return env / rate * (1.0 + 1.0 / (rate * S)); };

  double S = cfg.min_cutoff;
  double env = envelope(S);
  if (env > 0.0) {
    const double C = env * std::exp(rate * S);
    S = std::max(S, std::log(C / (0.1 * cfg.tol * rate)) / rate);
  }
  double prev_env = std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    if (S > cfg.max_cutoff || iter > 60)
      throw NumericalError("tail-rate fit failure", "quadrature",
                           "integrand not decaying at rate " + std::to_string(rate) + " (envelope " +
                               std::to_string(env) + " at s=" + std::to_string(S) + ")");
    env = envelope(S);
    const double tail = tail_of(S, env);
    if (tail <= 0.1 * cfg.tol) break;
    if (iter > 3 && env >= prev_env)
      throw NumericalError("tail-rate fit failure", "quadrature",
                           "envelope stopped decaying near s=" + std::to_string(S));
    prev_env = env;
    S += std::max(1.0, std::log(tail / (0.1 * cfg.tol)) / rate);
  }
  S *= cfg.cutoff_scale;
  env = envelope(S);
  QuadResult r = integrate_interval([&](double s, std::span<double> out) { f(dir * s, out); }, m, 0.0, S, cfg);
  r.cutoff = S;
  const double tail = tail_of(S, env);
  r.tail.assign(m, tail);
  r.evaluations += evals;
  return r;
}

/// ∫_{-∞}^{∞} as two half-lines; errors and tails add.
inline QuadResult integrate_line(const VectorIntegrand& f, std::size_t m, const QuadratureConfig& cfg) {
  QuadResult plus = integrate_half_line(f, m, 1.0, cfg);
  QuadResult minus = integrate_half_line(f, m, -1.0, cfg);
  for (std::size_t j = 0; j < m; ++j) {
    plus.value[j] += minus.value[j];
    plus.error[j] += minus.error[j];
    plus.tail[j] += minus.tail[j];
  }
  plus.cutoff = std::max(plus.cutoff, minus.cutoff);
  plus.evaluations += minus.evaluations;
  return plus;
}

}  // namespace rotpend
