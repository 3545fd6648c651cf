#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rotpend/hamgen.hpp"
#include "rotpend/melnikov.hpp"

using namespace rotpend;

namespace {

const char* kTwoHarmonic = "cos(2*pi*q1)*(cos(2*pi*theta1) + 0.5*cos(2*pi*theta1 - 2*pi*t))";

struct Fixture {
  SystemSpec sys = SystemSpec::standard();
  SeparatrixOrbit sep = separatrix(sys);
  exprs::Expr H1;
  explicit Fixture(const char* src) : H1(exprs::parse(src, sys.dims())) {}
};

}  // namespace

TEST(Potential, FlatInPendulumVanishes) {
  Fixture f("cos(2*pi*theta1) + I1^2");
  EXPECT_EQ(L_value(f.sys, f.H1, f.sep, std::vector{0.3}, std::vector{0.5}, std::vector{0.1}, 0.2), 0.0);
}

TEST(Potential, CosineOnlyGivesFour) {
  // L = -∫ (cos 2πq⁰ - 1) = ∫ 2 sech² = 4, independent of τ
  Fixture f("cos(2*pi*q1)");
  for (double tau : {-1.0, 0.0, 0.7})
    EXPECT_NEAR(L_value(f.sys, f.H1, f.sep, std::vector{tau}, std::vector{0.5}, std::vector{0.1}, 0.0), 4.0, 1e-10);
}

TEST(Potential, PeriodicInTheta) {
  Fixture f(kTwoHarmonic);
  const double a = L_value(f.sys, f.H1, f.sep, std::vector{0.2}, std::vector{0.45}, std::vector{0.1}, 0.3);
  const double b = L_value(f.sys, f.H1, f.sep, std::vector{0.2}, std::vector{0.45}, std::vector{1.1}, 0.3);
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(Potential, TauDerivativeIsSplitting) {
  Fixture f(kTwoHarmonic);
  const auto field = hamiltonian_to_field(f.sys, f.H1);
  const std::vector tau{0.35}, I{0.55}, th{0.2};
  const auto e = melnikov_potential(f.sys, f.H1, f.sep, tau, I, th, 0.1);
  const auto m = melnikov(f.sys, field, f.sep, tau, I, th, 0.1);
  EXPECT_NEAR(e.dtau[0], m.M_y[0], 1e-9);
  const double h = 1e-4;
  const double fd = (L_value(f.sys, f.H1, f.sep, std::vector{tau[0] + h}, I, th, 0.1) -
                     L_value(f.sys, f.H1, f.sep, std::vector{tau[0] - h}, I, th, 0.1)) / (2 * h);
  EXPECT_NEAR(e.dtau[0], fd, 1e-6 * std::max(1.0, std::abs(fd)));
}

TEST(TauStar, SymmetricPhase) {
  Fixture f("cos(2*pi*q1)*cos(2*pi*theta1)");
  const auto ts = tau_star(f.sys, f.H1, f.sep, std::vector{0.5}, std::vector{0.0}, 0.0, std::vector{0.3});
  EXPECT_NEAR(ts[0], 0.0, 1e-10);
}

TEST(TauStar, DegenerateHessian) {
  Fixture f("0*q1");
  try {
    tau_star(f.sys, f.H1, f.sep, std::vector{0.5}, std::vector{0.0}, 0.0, std::vector{0.0});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.code(), "degenerate Hessian");
  }
  Fixture g("cos(2*pi*q1)");
  EXPECT_THROW(tau_star(g.sys, g.H1, g.sep, std::vector{0.5}, std::vector{0.0}, 0.0, std::vector{0.0}),
               NumericalError);
}

TEST(TauStar, ShiftsWithTimeTranslation) {
  // (θ + ωσ, t + σ) moves the critical point to τ* + σ; 𝓛 is unchanged.
  Fixture f(kTwoHarmonic);
  const double I = 0.45, th = 0.2, t = 0.1;
  const auto base = script_L(f.sys, f.H1, f.sep, std::vector{I}, std::vector{th}, t, std::vector{0.0});
  for (double sigma : {0.3, 1.7}) {
    const auto moved = script_L(f.sys, f.H1, f.sep, std::vector{I}, std::vector{th + I * sigma}, t + sigma,
                                std::vector{base.tau_star[0] + sigma});
    EXPECT_NEAR(moved.tau_star[0], base.tau_star[0] + sigma, 1e-8);
    EXPECT_NEAR(moved.L, base.L, 1e-8);
  }
}

TEST(ScriptL, InvarianceUnderFlowShift) {
  Fixture f(kTwoHarmonic);
  const double I = 0.62, th = 0.75, t = 0.4;
  const auto base = script_L(f.sys, f.H1, f.sep, std::vector{I}, std::vector{th}, t, std::vector{0.0});
  for (double sigma : {0.3, 1.7}) {
    const auto g = script_L(f.sys, f.H1, f.sep, std::vector{I}, std::vector{th - I * sigma}, t - sigma,
                            std::vector{base.tau_star[0] - sigma});
    EXPECT_NEAR(g.L, base.L, 1e-8) << sigma;
  }
}

TEST(ScriptL, EnvelopeGradients) {
  Fixture f(kTwoHarmonic);
  const double I = 0.5, th = 0.3, t = 0.0;
  const auto g = script_L(f.sys, f.H1, f.sep, std::vector{I}, std::vector{th}, t, std::vector{0.0});
  EXPECT_LE(g.grad_tau_norm, 1e-10);
  EXPECT_GE(std::abs(g.hessian_det), 1e-8);
  const double h = 1e-4;
  auto L_at = [&](double Iv, double thv) {
    return script_L(f.sys, f.H1, f.sep, std::vector{Iv}, std::vector{thv}, t, g.tau_star).L;
  };
  const double fd_th = (L_at(I, th + h) - L_at(I, th - h)) / (2 * h);
  EXPECT_NEAR(g.dtheta[0], fd_th, 1e-6 * std::abs(fd_th));
  const double fd_I = (L_at(I + h, th) - L_at(I - h, th)) / (2 * h);
  EXPECT_NEAR(g.dI[0], fd_I, 1e-6 * std::abs(fd_I));
  const auto res = envelope_residual(f.sys, f.H1, f.sep, g, std::vector{I}, std::vector{th}, t);
  EXPECT_LE(res[0], 1e-9);
}

TEST(ScriptL, HamiltonianTriangle) {
  Fixture f(kTwoHarmonic);
  const auto field = hamiltonian_to_field(f.sys, f.H1);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uI(0.3, 0.7), uth(0.0, 1.0), ut(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    const std::vector I{uI(rng)}, th{uth(rng)};
    const double t = ut(rng);
    const auto g = script_L(f.sys, f.H1, f.sep, I, th, t, std::vector{0.0});
    const auto m = melnikov(f.sys, field, f.sep, g.tau_star, I, th, t);
    EXPECT_NEAR(m.dI1[0], g.dtheta[0], 1e-7);
    EXPECT_NEAR(m.dtheta1[0], -g.dI[0], 1e-7);
    EXPECT_NEAR(m.M_y[0], 0.0, 1e-9);
  }
}

TEST(GeneratingFunction, SignsAndFlatCase) {
  Fixture f(kTwoHarmonic);
  const std::vector I{0.5}, th{0.3};
  const auto g = script_L(f.sys, f.H1, f.sep, I, th, 0.0, std::vector{0.0});
  const auto S = generating_S(g);
  EXPECT_EQ(S.S, -g.L);
  EXPECT_EQ(S.shift_I[0], g.dtheta[0]);
  EXPECT_EQ(S.shift_theta[0], -g.dI[0]);

  Fixture flat("cos(2*pi*theta1)");
  const auto Sf = generating_S(flat.sys, flat.H1, flat.sep, I, th, 0.0, std::vector{0.0});
  EXPECT_EQ(Sf.S, 0.0);
}
