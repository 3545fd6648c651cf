#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rotpend/flow.hpp"
#include "rotpend/model.hpp"

using namespace rotpend;

namespace {

std::vector<double> flat(double p, double q, double I, double theta) { return {p, q, I, theta}; }

}  // namespace

TEST(Potential, CosineNormalisation) {
  const auto V = PotentialSpec::cosine();
  EXPECT_EQ(V.value(0.0), 0.0);
  EXPECT_NEAR(V.d1(0.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(V.d2(0.0), -1.0);
  for (double q = -2.0; q <= 2.0; q += 0.137) {
    EXPECT_NEAR(V.value(q), (std::cos(2 * kPi * q) - 1) / (4 * kPi * kPi), 1e-16);
    EXPECT_NEAR(V.value(q + 1.0), V.value(q), 1e-16);
    EXPECT_NEAR(V.d1(q), -std::sin(2 * kPi * q) / (2 * kPi), 1e-15);
  }
  EXPECT_NEAR(V.d1(0.5), 0.0, 1e-16);
}

TEST(Potential, TrigPolynomialDerivatives) {
  const auto V = PotentialSpec::trig({0.02, 0.005}, {0.0, 0.0});
  const double h = 1e-5;
  for (double q = -0.9; q < 0.9; q += 0.1) {
    EXPECT_NEAR(V.d1(q), (V.value(q + h) - V.value(q - h)) / (2 * h), 1e-9);
    EXPECT_NEAR(V.d2(q), (V.d1(q + h) - V.d1(q - h)) / (2 * h), 1e-8);
    EXPECT_NEAR(V.value(q + 1.0), V.value(q), 1e-15);
  }
  EXPECT_NEAR(V.d2(0.0), -(4 * kPi * kPi * 0.02 + 16 * kPi * kPi * 0.005), 1e-12);
}

TEST(Rotator, OmegaAndHessianMatchFiniteDifferences) {
  RotatorSpec r;
  r.d = 2;
  r.c = 0.1;
  r.g = {0.3, -0.2};
  r.A = {1.0, 0.4, 0.2, -0.5};
  r.T = std::vector<double>(8, 0.0);
  r.T[0] = 0.6;
  r.T[3] = 0.3;
  r.T[7] = -0.2;
  r.normalise();
  std::vector<double> I{0.7, -0.4};
  const double h = 1e-5;
  const auto w = r.omega(I);
  const auto H = r.hessian(I);
  for (std::size_t i = 0; i < 2; ++i) {
    auto Ip = I, Im = I;
    Ip[i] += h;
    Im[i] -= h;
    const double fd = (r.h0(Ip) - r.h0(Im)) / (2 * h);
    EXPECT_NEAR(w[i], fd, 1e-8 * std::max(1.0, std::abs(fd)));
    const auto wp = r.omega(Ip), wm = r.omega(Im);
    for (std::size_t j = 0; j < 2; ++j) {
      const double fdh = (wp[j] - wm[j]) / (2 * h);
      EXPECT_NEAR(H[j * 2 + i], fdh, 1e-8 * std::max(1.0, std::abs(fdh)));
    }
  }
}

TEST(Unperturbed, SaddlePoint) {
  const auto sys = SystemSpec::standard();
  ExtendedState z{{0.0}, {0.0}, {0.3}, {0.0}, 0.0};
  const auto v = eval_unperturbed(sys, z);
  EXPECT_EQ(v.p[0], 0.0);
  EXPECT_EQ(v.q[0], 0.0);
  EXPECT_EQ(v.I[0], 0.0);
  EXPECT_DOUBLE_EQ(v.theta[0], 0.3);
}

TEST(Unperturbed, SeparatrixMidpoint) {
  const auto sys = SystemSpec::standard();
  ExtendedState z{{1.0 / kPi}, {0.5}, {0.2}, {0.0}, 0.0};
  const auto v = eval_unperturbed(sys, z);
  EXPECT_DOUBLE_EQ(v.q[0], 1.0 / kPi);
  EXPECT_NEAR(v.p[0], 0.0, 1e-16);
}

TEST(Unperturbed, ActionIsConservedEverywhere) {
  SystemSpec sys;
  sys.rotator = RotatorSpec::quadratic(2);
  sys.penduli = {{PotentialSpec::cosine(), 1}, {PotentialSpec::trig({0.05}), -1}};
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> z(sys.state_size());
    for (auto& v : z) v = u(rng);
    std::vector<double> dz(z.size());
    unperturbed_rhs(sys, z, dz);
    EXPECT_EQ(dz[4], 0.0);
    EXPECT_EQ(dz[5], 0.0);
  }
}

TEST(Perturbed, ZeroEpsIsBitwiseUnperturbed) {
  const auto sys = SystemSpec::standard();
  const auto field = hamiltonian_to_field(sys, "cos(2*pi*q)*cos(2*pi*theta - 2*pi*t) + p^3");
  ExtendedState z{{0.31}, {0.47}, {0.6}, {0.2}, 1.3};
  const auto a = eval_unperturbed(sys, z);
  const auto b = eval_perturbed(sys, field, z, 0.0);
  EXPECT_EQ(a.pack(), b.pack());
}

TEST(Perturbed, Dissipation) {
  const auto sys = SystemSpec::standard();
  const auto field = dissipation_field(sys, 1.0, 1.0);
  ExtendedState z{{1.0}, {0.0}, {2.0}, {0.0}, 0.0};
  const auto v = eval_perturbed(sys, field, z, 0.01);
  EXPECT_DOUBLE_EQ(v.p[0], -0.01);
  EXPECT_DOUBLE_EQ(v.I[0], -0.02);
}

TEST(Perturbed, HamiltonianActionComponent) {
  const auto sys = SystemSpec::standard();
  const auto field = hamiltonian_to_field(sys, "cos(2*pi*q)*cos(2*pi*theta)");
  for (double q : {0.1, 0.4}) {
    for (double th : {0.05, 0.3}) {
      ExtendedState z{{0.2}, {q}, {0.5}, {th}, 0.0};
      const double eps = 0.01;
      const auto v = eval_perturbed(sys, field, z, eps);
      EXPECT_NEAR(v.I[0], eps * 2 * kPi * std::cos(2 * kPi * q) * std::sin(2 * kPi * th), 1e-15);
    }
  }
}

TEST(HamiltonianField, Examples) {
  SystemSpec sys = SystemSpec::standard();
  auto f = hamiltonian_to_field(sys, "cos(2*pi*q1) + p1^2");
  auto x = f.at(flat(0.3, 0.2, 0.5, 0.1), 0.0);
  EXPECT_EQ(x[2], 0.0);  // θ-independent ⇒ X1I = 0

  sys.penduli.push_back({PotentialSpec::cosine(), 1});
  auto g = hamiltonian_to_field(sys, "p1");
  auto y = g.at(std::vector<double>{0.3, 0.1, 0.2, 0.4, 0.5, 0.1}, 0.0);
  EXPECT_EQ(y, (std::vector<double>{0, 0, 1, 0, 0, 0}));

  const auto spec1 = SystemSpec::standard();
  auto h = hamiltonian_to_field(spec1, "cos(2*pi*q)*cos(2*pi*theta - 2*pi*t)");
  auto w = h.at(flat(0.4, 0.0, 0.7, 0.37), 0.37);
  EXPECT_NEAR(w[2], 0.0, 1e-15);
  EXPECT_EQ(w[3], 0.0);
}

TEST(HamiltonianField, FiniteDifferenceAgreement) {
  SystemSpec sys;
  sys.rotator = RotatorSpec::quadratic(2);
  sys.penduli = {{PotentialSpec::cosine(), 1}, {PotentialSpec::cosine(), -1}};
  const auto H1 = exprs::parse(
      "cos(2*pi*q1)*cos(2*pi*theta1 - 2*pi*t)*(1 + p2^2/3) + sin(2*pi*q2)*I1*I2 + p1*sin(2*pi*theta2)", sys.dims());
  const auto field = hamiltonian_to_field(sys, H1);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  const double h = 1e-6;
  const std::size_t n = 2, d = 2;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> z(sys.state_size());
    for (auto& v : z) v = u(rng);
    const double t = u(rng);
    const auto x = field.at(z, t);
    auto partial = [&](std::size_t slot) {
      auto zp = z, zm = z;
      zp[slot] += h;
      zm[slot] -= h;
      std::vector<double> bp(zp), bm(zm);
      bp.insert(bp.end(), {t, 0.0});
      bm.insert(bm.end(), {t, 0.0});
      return (H1.eval(bp) - H1.eval(bm)) / (2 * h);
    };
    for (std::size_t i = 0; i < n; ++i) {
      const double dq = partial(n + i), dp = partial(i);
      EXPECT_NEAR(x[i], -dq, 1e-8 * std::max(1.0, std::abs(dq)));
      EXPECT_NEAR(x[n + i], dp, 1e-8 * std::max(1.0, std::abs(dp)));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double dth = partial(2 * n + d + j), dI = partial(2 * n + j);
      EXPECT_NEAR(x[2 * n + j], -dth, 1e-8 * std::max(1.0, std::abs(dth)));
      EXPECT_NEAR(x[2 * n + d + j], dI, 1e-8 * std::max(1.0, std::abs(dI)));
    }
  }
}

TEST(HamiltonianField, EvaluationErrorCarriesContext) {
  const auto sys = SystemSpec::standard();
  const auto field = hamiltonian_to_field(sys, "sqrt(q)");
  try {
    field.at(flat(0.0, -0.5, 0.0, 0.0), 0.0);
    FAIL();
  } catch (const exprs::EvalError& e) {
    EXPECT_NE(std::string(e.what()).find("z=["), std::string::npos);
  }
  std::vector<exprs::Expr> comps;
  for (const char* s : {"0", "1/q", "0", "0"}) comps.push_back(exprs::parse(s, sys.dims()));
  const auto direct = components_field(sys, comps);
  try {
    direct.at(flat(0.0, 0.0, 0.0, 0.0), 0.0);
    FAIL();
  } catch (const exprs::EvalError& e) {
    EXPECT_NE(std::string(e.what()).find("X1q1"), std::string::npos);
  }
}

TEST(Energy, Examples) {
  const auto sys = SystemSpec::standard();
  EXPECT_EQ(pendulum_energy(sys, flat(0, 0, 0.3, 0))[0], 0.0);
  EXPECT_DOUBLE_EQ(pendulum_energy(sys, flat(0.1, 0, 0, 0))[0], 0.005);
  for (double tau = -8; tau <= 8; tau += 0.5) {
    const double p = std::exp(-std::abs(tau)) * 2 / (1 + std::exp(-2 * std::abs(tau))) / kPi;
    const double q = (2 / kPi) * std::atan(std::exp(tau));
    EXPECT_NEAR(pendulum_energy(sys, flat(p, q, 0, 0))[0], 0.0, 1e-12);
  }
}

TEST(Symmetry, SignFlip) {
  auto plus = SystemSpec::standard(1);
  auto minus = SystemSpec::standard(-1);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> z{u(rng), u(rng), u(rng), u(rng)};
    std::vector<double> a(4), b(4);
    unperturbed_rhs(plus, z, a);
    unperturbed_rhs(minus, z, b);
    EXPECT_EQ(a[0], -b[0]);
    EXPECT_EQ(a[1], -b[1]);
    EXPECT_EQ(a[2], b[2]);
    EXPECT_EQ(a[3], b[3]);
    EXPECT_EQ(pendulum_energy(plus, z)[0], -pendulum_energy(minus, z)[0]);
  }
}

TEST(Config, Validation) {
  SystemSpec sys;
  sys.penduli.clear();
  EXPECT_THROW(sys.validate(), ConfigError);
  sys = SystemSpec::standard();
  sys.penduli[0].sign = 2;
  EXPECT_THROW(sys.validate(), ConfigError);
  sys = SystemSpec::standard();
  EXPECT_NO_THROW(sys.validate());
}
