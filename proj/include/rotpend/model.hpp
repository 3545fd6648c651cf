#pragma once
// Rotator-pendulum system: potentials, rotator polynomial, state layout and
// the unperturbed / perturbed vector fields.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rotpend/errors.hpp"
#include "rotpend/exprs.hpp"

namespace rotpend {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Reduce an angle-like coordinate to [-1/2, 1/2).
inline double wrap_half(double q) { return q - std::floor(q + 0.5); }

/// Reduce to [0, 1).
inline double wrap_unit(double q) { return q - std::floor(q); }

// ---------------------------------------------------------------------------

/// 1-periodic pendulum potential with a Morse maximum at q = 0.
///   builtin cosine:   V = (cos 2πq - 1) / (4π²)
///   trig polynomial:  V = Σ_k a_k (cos 2πkq - 1) + b_k sin 2πkq
struct PotentialSpec {
  enum class Kind { builtin_cosine, trig_polynomial };

  Kind kind = Kind::builtin_cosine;
  std::vector<double> a;  // a[k-1]
  std::vector<double> b;

  static PotentialSpec cosine() { return {}; }
  static PotentialSpec trig(std::vector<double> a, std::vector<double> b = {}) {
    PotentialSpec v;
    v.kind = Kind::trig_polynomial;
    v.b = std::move(b);
    v.b.resize(a.size(), 0.0);
    v.a = std::move(a);
    return v;
  }

  bool is_closed_form() const { return kind == Kind::builtin_cosine; }

  double value(double q) const {
    const double r = wrap_half(q);
    if (kind == Kind::builtin_cosine) {
      // cos x - 1 = -2 sin²(x/2), exact near the saddle
      const double s = std::sin(kPi * r);
      return -s * s / (2.0 * kPi * kPi);
    }
    double v = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = kPi * static_cast<double>(k + 1) * r;
      const double s = std::sin(w);
      v += -2.0 * a[k] * s * s + b[k] * std::sin(2.0 * w);
    }
    return v;
  }

  double d1(double q) const {
    const double r = wrap_half(q);
    if (kind == Kind::builtin_cosine) return -std::sin(kTwoPi * r) / kTwoPi;
    double v = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = kTwoPi * static_cast<double>(k + 1);
      v += -a[k] * w * std::sin(w * r) + b[k] * w * std::cos(w * r);
    }
    return v;
  }

  double d2(double q) const {
    const double r = wrap_half(q);
    if (kind == Kind::builtin_cosine) return -std::cos(kTwoPi * r);
    double v = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = kTwoPi * static_cast<double>(k + 1);
      v += -w * w * (a[k] * std::cos(w * r) + b[k] * std::sin(w * r));
    }
    return v;
  }

  std::string describe() const {
    if (kind == Kind::builtin_cosine) return "builtin-cosine";
    std::ostringstream os;
    os << "trig-polynomial(a=[";
    for (std::size_t k = 0; k < a.size(); ++k) os << (k ? "," : "") << a[k];
    os << "], b=[";
    for (std::size_t k = 0; k < b.size(); ++k) os << (k ? "," : "") << b[k];
    os << "])";
    return os.str();
  }
};

// ---------------------------------------------------------------------------

/// h0(I) = c + g·I + ½ IᵀAI + (1/6) Σ T_ijk I_i I_j I_k  (A, T symmetrised).
struct RotatorSpec {
  std::size_t d = 1;
  double c = 0.0;
  std::vector<double> g;  // d
  std::vector<double> A;  // d*d row-major
  std::vector<double> T;  // d*d*d

  /// h0 = ½|I|².
  static RotatorSpec quadratic(std::size_t d) {
    RotatorSpec r;
    r.d = d;
    r.g.assign(d, 0.0);
    r.A.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) r.A[i * d + i] = 1.0;
    return r;
  }

  RotatorSpec& normalise() {
    g.resize(d, 0.0);
    A.resize(d * d, 0.0);
    if (!T.empty()) T.resize(d * d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) {
        const double m = 0.5 * (A[i * d + j] + A[j * d + i]);
        A[i * d + j] = A[j * d + i] = m;
      }
    if (!T.empty()) {
      std::vector<double> S(T.size(), 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t k = 0; k < d; ++k) {
            const auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return T[(a * d + b) * d + c]; };
            S[(i * d + j) * d + k] =
                (at(i, j, k) + at(i, k, j) + at(j, i, k) + at(j, k, i) + at(k, i, j) + at(k, j, i)) / 6.0;
          }
      T = std::move(S);
    }
    return *this;
  }

  double h0(std::span<const double> I) const {
    double v = c;
    for (std::size_t i = 0; i < d; ++i) {
      v += g[i] * I[i];
      for (std::size_t j = 0; j < d; ++j) v += 0.5 * A[i * d + j] * I[i] * I[j];
    }
    if (!T.empty())
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t k = 0; k < d; ++k) v += T[(i * d + j) * d + k] * I[i] * I[j] * I[k] / 6.0;
    return v;
  }

  void omega(std::span<const double> I, std::span<double> out) const {
    for (std::size_t i = 0; i < d; ++i) {
      double v = g[i];
      for (std::size_t j = 0; j < d; ++j) v += A[i * d + j] * I[j];
      if (!T.empty())
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t k = 0; k < d; ++k) v += 0.5 * T[(i * d + j) * d + k] * I[j] * I[k];
      out[i] = v;
    }
  }

  std::vector<double> omega(std::span<const double> I) const {
    std::vector<double> w(d);
    omega(I, w);
    return w;
  }

  /// d×d row-major Hessian of h0.
  std::vector<double> hessian(std::span<const double> I) const {
    std::vector<double> H(A);
    if (!T.empty())
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t k = 0; k < d; ++k) H[i * d + j] += T[(i * d + j) * d + k] * I[k];
    return H;
  }
};

struct Pendulum {
  PotentialSpec potential;
  int sign = 1;
};

struct SystemSpec {
  RotatorSpec rotator = RotatorSpec::quadratic(1);
  std::vector<Pendulum> penduli{Pendulum{}};

  std::size_t n() const { return penduli.size(); }
  std::size_t d() const { return rotator.d; }
  exprs::Dims dims() const { return {n(), d()}; }
  std::size_t state_size() const { return 2 * n() + 2 * d(); }

  // flat slot offsets: [p(n) q(n) I(d) theta(d)]
  std::size_t off_p() const { return 0; }
  std::size_t off_q() const { return n(); }
  std::size_t off_I() const { return 2 * n(); }
  std::size_t off_theta() const { return 2 * n() + d(); }

  void validate() const {
    if (penduli.empty()) throw ConfigError("system needs at least one pendulum");
    if (rotator.d == 0) throw ConfigError("rotator dimension must be >= 1");
    for (std::size_t i = 0; i < penduli.size(); ++i) {
      const auto& P = penduli[i];
      if (P.sign != 1 && P.sign != -1)
        throw ConfigError("pendulum " + std::to_string(i + 1) + ": sign must be +1 or -1");
      if (P.potential.kind == PotentialSpec::Kind::trig_polynomial && P.potential.a.empty())
        throw ConfigError("pendulum " + std::to_string(i + 1) + ": empty trig polynomial");
    }
    const auto& r = rotator;
    if (r.g.size() != r.d || r.A.size() != r.d * r.d || (!r.T.empty() && r.T.size() != r.d * r.d * r.d))
      throw ConfigError("rotator coefficient shapes do not match dimension " + std::to_string(r.d));
  }

  /// 1-D system with h0 = I²/2 and one builtin-cosine pendulum.
  static SystemSpec standard(int sign = 1) {
    SystemSpec s;
    s.penduli = {Pendulum{PotentialSpec::cosine(), sign}};
    return s;
  }
};

// ---------------------------------------------------------------------------

/// Point of the extended phase space.  Angles q and theta are stored unwrapped.
struct ExtendedState {
  std::vector<double> p, q, I, theta;
  double t = 0.0;

  static ExtendedState zeros(const SystemSpec& sys) {
    ExtendedState z;
    z.p.assign(sys.n(), 0.0);
    z.q.assign(sys.n(), 0.0);
    z.I.assign(sys.d(), 0.0);
    z.theta.assign(sys.d(), 0.0);
    return z;
  }

  std::vector<double> pack() const {
    std::vector<double> v;
    v.reserve(p.size() + q.size() + I.size() + theta.size());
    v.insert(v.end(), p.begin(), p.end());
    v.insert(v.end(), q.begin(), q.end());
    v.insert(v.end(), I.begin(), I.end());
    v.insert(v.end(), theta.begin(), theta.end());
    return v;
  }

  static ExtendedState unpack(const SystemSpec& sys, std::span<const double> v, double t) {
    const std::size_t n = sys.n(), d = sys.d();
    ExtendedState z;
    z.p.assign(v.begin(), v.begin() + n);
    z.q.assign(v.begin() + n, v.begin() + 2 * n);
    z.I.assign(v.begin() + 2 * n, v.begin() + 2 * n + d);
    z.theta.assign(v.begin() + 2 * n + d, v.begin() + 2 * n + 2 * d);
    z.t = t;
    return z;
  }

  bool finite() const {
    auto ok = [](const std::vector<double>& v) {
      for (double x : v)
        if (!std::isfinite(x)) return false;
      return true;
    };
    return ok(p) && ok(q) && ok(I) && ok(theta) && std::isfinite(t);
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    auto put = [&](const char* name, const std::vector<double>& v) {
      os << name << "=[";
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      os << "] ";
    };
    put("p", p);
    put("q", q);
    put("I", I);
    put("theta", theta);
    os << "t=" << t;
    return os.str();
  }
};

/// Time derivative of the (p, q, I, theta) part; the extended slot is t' = 1.
struct Tangent {
  std::vector<double> p, q, I, theta;
  double t = 1.0;

  static Tangent unpack(const SystemSpec& sys, std::span<const double> v) {
    const auto z = ExtendedState::unpack(sys, v, 0.0);
    return {z.p, z.q, z.I, z.theta, 1.0};
  }
  std::vector<double> pack() const { return ExtendedState{p, q, I, theta, 0.0}.pack(); }
};

// ---------------------------------------------------------------------------

/// Unperturbed field on a flat state.  p' = -sV'(q), q' = sp, I' = 0, θ' = ω(I).
inline void unperturbed_rhs(const SystemSpec& sys, std::span<const double> z, std::span<double> dz) {
  const std::size_t n = sys.n(), d = sys.d();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& P = sys.penduli[i];
    dz[i] = -P.sign * P.potential.d1(z[n + i]);
    dz[n + i] = P.sign * z[i];
  }
  for (std::size_t j = 0; j < d; ++j) dz[2 * n + j] = 0.0;
  sys.rotator.omega(z.subspan(2 * n, d), dz.subspan(2 * n + d, d));
}

inline Tangent eval_unperturbed(const SystemSpec& sys, const ExtendedState& z) {
  const auto v = z.pack();
  std::vector<double> dz(v.size());
  unperturbed_rhs(sys, v, dz);
  return Tangent::unpack(sys, dz);
}

/// Pendulum energies y_i = s_i (p_i²/2 + V_i(q_i)).
inline std::vector<double> pendulum_energy(const SystemSpec& sys, std::span<const double> z) {
  const std::size_t n = sys.n();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& P = sys.penduli[i];
    y[i] = P.sign * (0.5 * z[i] * z[i] + P.potential.value(z[n + i]));
  }
  return y;
}

inline std::vector<double> pendulum_energy(const SystemSpec& sys, const ExtendedState& z) {
  return pendulum_energy(sys, z.pack());
}

/// Total unperturbed Hamiltonian H0 = h0(I) + Σ y_i.
inline double total_energy(const SystemSpec& sys, std::span<const double> z) {
  double h = sys.rotator.h0(z.subspan(2 * sys.n(), sys.d()));
  for (double y : pendulum_energy(sys, z)) h += y;
  return h;
}

// ---------------------------------------------------------------------------

/// Perturbation X1(z, t; eps).  The evaluator writes all 2n+2d components
/// into `out` in the flat state layout.
struct PerturbationField {
  enum class Origin { direct, hamiltonian, dissipation, zero };
  using Evaluator =
      std::function<void(std::span<const double> z, double t, double eps, std::span<double> out)>;

  Evaluator eval;
  Origin origin = Origin::zero;
  std::optional<exprs::Expr> hamiltonian;  // set when derived from H1
  std::vector<exprs::Expr> components;      // set for direct components
  std::optional<double> C1;                 // declared bound on |X1|
  std::string label;

  void operator()(std::span<const double> z, double t, double eps, std::span<double> out) const {
    eval(z, t, eps, out);
  }

  std::vector<double> at(std::span<const double> z, double t, double eps = 0.0) const {
    std::vector<double> out(z.size());
    eval(z, t, eps, out);
    return out;
  }

  /// Field with every component multiplied by `factor`.
  PerturbationField scaled(double factor) const {
    PerturbationField f = *this;
    f.eval = [inner = eval, factor](std::span<const double> z, double t, double eps, std::span<double> out) {
      inner(z, t, eps, out);
      for (double& v : out) v *= factor;
    };
    f.origin = Origin::direct;
    f.hamiltonian.reset();
    f.components.clear();
    if (C1) f.C1 = std::abs(factor) * *C1;
    f.label = label + " scaled";
    return f;
  }
};

namespace detail {

inline std::vector<double> bindings_for(std::span<const double> z, double t, double eps) {
  std::vector<double> b(z.begin(), z.end());
  b.push_back(t);
  b.push_back(eps);
  return b;
}

inline std::string state_context(std::span<const double> z, double t) {
  std::ostringstream os;
  os.precision(17);
  os << "z=[";
  for (std::size_t i = 0; i < z.size(); ++i) os << (i ? "," : "") << z[i];
  os << "] t=" << t;
  return os.str();
}

}  // namespace detail

inline PerturbationField zero_field() {
  PerturbationField f;
  f.eval = [](std::span<const double>, double, double, std::span<double> out) {
    for (double& v : out) v = 0.0;
  };
  f.origin = PerturbationField::Origin::zero;
  f.C1 = 0.0;
  f.label = "zero";
  return f;
}

/// X1p = -∂H1/∂q, X1q = ∂H1/∂p, X1I = -∂H1/∂θ, X1θ = ∂H1/∂I.
inline PerturbationField hamiltonian_to_field(const SystemSpec& sys, const exprs::Expr& H1) {
  if (!(H1.dims() == sys.dims()))
    throw ConfigError("H1 was parsed for different (n, d) than the system");
  const std::size_t n = sys.n(), d = sys.d(), m = sys.state_size();
  std::vector<std::size_t> wrt(m);
  for (std::size_t k = 0; k < m; ++k) wrt[k] = k;
  PerturbationField f;
  f.eval = [H1, wrt, n, d, m](std::span<const double> z, double t, double eps, std::span<double> out) {
    thread_local std::vector<double> b, g;
    b.assign(z.begin(), z.end());
    b.push_back(t);
    b.push_back(eps);
    g.resize(m);
    try {
      H1.eval_gradient(b, wrt, g);
    } catch (const exprs::EvalError& e) {
      throw exprs::EvalError(std::string("X1 from H1 failed at ") + detail::state_context(z, t) + ": " + e.what());
    }
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = -g[n + i];
      out[n + i] = g[i];
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[2 * n + j] = -g[2 * n + d + j];
      out[2 * n + d + j] = g[2 * n + j];
    }
  };
  f.origin = PerturbationField::Origin::hamiltonian;
  f.hamiltonian = H1;
  f.label = "H1 = " + H1.to_string();
  return f;
}

inline PerturbationField hamiltonian_to_field(const SystemSpec& sys, std::string_view H1_source) {
  return hamiltonian_to_field(sys, exprs::parse(H1_source, sys.dims()));
}

/// Direct components, one expression per slot in the flat layout.
inline PerturbationField components_field(const SystemSpec& sys, std::vector<exprs::Expr> comps) {
  if (comps.size() != sys.state_size())
    throw ConfigError("expected " + std::to_string(sys.state_size()) + " component expressions, got " +
                      std::to_string(comps.size()));
  const std::size_t n = sys.n(), d = sys.d();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("X1p" + std::to_string(i + 1));
  for (std::size_t i = 0; i < n; ++i) names.push_back("X1q" + std::to_string(i + 1));
  for (std::size_t j = 0; j < d; ++j) names.push_back("X1I" + std::to_string(j + 1));
  for (std::size_t j = 0; j < d; ++j) names.push_back("X1theta" + std::to_string(j + 1));
  PerturbationField f;
  f.components = comps;
  f.eval = [comps, names](std::span<const double> z, double t, double eps, std::span<double> out) {
    thread_local std::vector<double> b;
    b.assign(z.begin(), z.end());
    b.push_back(t);
    b.push_back(eps);
    for (std::size_t k = 0; k < comps.size(); ++k) {
      try {
        out[k] = comps[k].eval(b);
      } catch (const exprs::EvalError& e) {
        throw exprs::EvalError("component " + names[k] + " failed at " + detail::state_context(z, t) + ": " +
                               e.what());
      }
    }
  };
  f.origin = PerturbationField::Origin::direct;
  f.label = "direct components";
  return f;
}

/// Linear damping X1 = (-γp p, -γq q, -γI I, 0).
inline PerturbationField dissipation_field(const SystemSpec& sys, double gamma_p, double gamma_I,
                                           double gamma_q = 0.0) {
  const std::size_t n = sys.n(), d = sys.d();
  PerturbationField f;
  f.eval = [n, d, gamma_p, gamma_q, gamma_I](std::span<const double> z, double, double, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = -gamma_p * z[i];
      out[n + i] = -gamma_q * z[n + i];
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[2 * n + j] = -gamma_I * z[2 * n + j];
      out[2 * n + d + j] = 0.0;
    }
  };
  f.origin = PerturbationField::Origin::dissipation;
  f.label = "dissipation";
  return f;
}

/// Unperturbed field plus eps * X1.
inline void perturbed_rhs(const SystemSpec& sys, const PerturbationField& field, std::span<const double> z,
                          double t, double eps, std::span<double> dz) {
  unperturbed_rhs(sys, z, dz);
  if (eps == 0.0) return;
  thread_local std::vector<double> x1;
  x1.resize(z.size());
  field(z, t, eps, x1);
  for (std::size_t k = 0; k < z.size(); ++k) dz[k] += eps * x1[k];
}

inline Tangent eval_perturbed(const SystemSpec& sys, const PerturbationField& field, const ExtendedState& z,
                              double eps) {
  const auto v = z.pack();
  std::vector<double> dz(v.size());
  perturbed_rhs(sys, field, v, z.t, eps, dz);
  return Tangent::unpack(sys, dz);
}

/// X1y_i = s_i (p_i X1p_i + V_i'(q_i) X1q_i): rate of change of pendulum
/// energy per unit eps.
inline void energy_rate(const SystemSpec& sys, std::span<const double> z, std::span<const double> x1,
                        std::span<double> out) {
  const std::size_t n = sys.n();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& P = sys.penduli[i];
    out[i] = P.sign * (z[i] * x1[i] + P.potential.d1(z[n + i]) * x1[n + i]);
  }
}

}  // namespace rotpend
