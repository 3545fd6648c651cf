#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rotpend/geometry.hpp"
#include "rotpend/melnikov.hpp"

using namespace rotpend;

namespace {

const char* kField = "cos(2*pi*q1)*(cos(2*pi*theta1) + 0.5*cos(2*pi*theta1 - 2*pi*t))";

double fit_slope(const std::vector<double>& eps, const std::vector<double>& err) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(eps.size());
  for (std::size_t k = 0; k < eps.size(); ++k) {
    const double x = std::log(eps[k]), y = std::log(err[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct TestSystem {
  SystemSpec sys = SystemSpec::standard();
  PerturbationField field = hamiltonian_to_field(sys, kField);
  SeparatrixOrbit sep = separatrix(sys);
};

}  // namespace

TEST(Rates, SinglePendulum) {
  const auto r = rates(SystemSpec::standard());
  EXPECT_NEAR(r.lambda_plus, -1.0, 1e-12);
  EXPECT_NEAR(r.mu_minus, 1.0, 1e-12);
  EXPECT_TRUE(r.ordered());
}

TEST(Rates, TwoPendula) {
  SystemSpec sys = SystemSpec::standard();
  // V = a cos(2πq) has V''(0) = -4π²a
  sys.penduli.push_back({PotentialSpec::trig({1.0 / (kPi * kPi)}), 1});
  const auto r = rates(sys);
  EXPECT_NEAR(r.mu_minus, 1.0, 1e-12);
  EXPECT_NEAR(r.mu_plus, 2.0, 1e-12);
  EXPECT_NEAR(r.lambda_minus, -2.0, 1e-12);
  EXPECT_TRUE(r.ordered());
}

TEST(Rates, NonHyperbolicSaddle) {
  SystemSpec sys = SystemSpec::standard();
  sys.penduli[0].potential = PotentialSpec::trig({-0.05});
  try {
    rates(sys);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.code(), "non-hyperbolic saddle");
  }
}

TEST(Chart, ZeroEnergyIsSeparatrix) {
  for (int s : {1, -1}) {
    const auto sys = SystemSpec::standard(s);
    const auto sep = separatrix(sys);
    for (double x : {-3.0, -0.5, 0.0, 1.2, 4.0}) {
      const auto c = chart_point(sys.penduli[0], 0.0, x);
      double p, q;
      sep.eval(0, x, p, q);
      EXPECT_NEAR(c.p, p, 1e-10);
      EXPECT_NEAR(c.q, q, 1e-10);
    }
  }
}

TEST(Chart, SymplecticDeterminant) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uy(-0.02, 0.02), ux(-3.0, 3.0);
  for (int s : {1, -1}) {
    const Pendulum P{PotentialSpec::cosine(), s};
    for (int k = 0; k < 50; ++k) {
      const auto c = chart_point(P, uy(rng), ux(rng));
      EXPECT_NEAR(c.det(), 1.0, 1e-9);
    }
  }
}

TEST(Chart, JacobianMatchesDifferences) {
  const Pendulum P{PotentialSpec::cosine(), 1};
  const double y = 0.004, x = 1.3, h = 1e-5;
  const auto c = chart_point(P, y, x);
  const auto py = chart_point(P, y + h, x), my = chart_point(P, y - h, x);
  const auto px = chart_point(P, y, x + h), mx = chart_point(P, y, x - h);
  EXPECT_NEAR(c.dp_dy, (py.p - my.p) / (2 * h), 1e-5);
  EXPECT_NEAR(c.dq_dy, (py.q - my.q) / (2 * h), 1e-5);
  EXPECT_NEAR(c.dp_dx, (px.p - mx.p) / (2 * h), 1e-6);
  EXPECT_NEAR(c.dq_dx, (px.q - mx.q) / (2 * h), 1e-6);
  // energy coordinate recovered
  EXPECT_NEAR(c.p * c.p / 2 + P.potential.value(c.q), y, 1e-12);
}

TEST(Footpoint, UnperturbedHomoclinicPoint) {
  TestSystem S;
  const std::vector I{0.4}, th{0.3};
  const auto z = homoclinic_point(S.sys, S.sep, std::vector{0.2}, I, th, 0.5);
  const auto fp = footpoint_plus(S.sys, S.field, z, 0.0);
  const auto fm = footpoint_minus(S.sys, S.field, z, 0.0);
  EXPECT_EQ(fp.I, I);
  EXPECT_EQ(fp.theta, th);
  EXPECT_EQ(fm.I, I);
  EXPECT_EQ(fm.theta, th);
  EXPECT_EQ(fp.t, 0.5);
  EXPECT_LE(fp.residual, 1e-2);
}

TEST(Footpoint, PointOnTorusProjectsToItself) {
  TestSystem S;
  ExtendedState z{{0.0}, {0.0}, {0.4}, {0.3}, 0.0};
  const auto fp = footpoint_plus(S.sys, S.field, z, 0.0);
  EXPECT_EQ(fp.I[0], 0.4);
  EXPECT_EQ(fp.theta[0], 0.3);
  // with eps > 0 the slice is invariant for this field, so the projection is exact up to integration error
  const auto fe = footpoint_plus(S.sys, S.field, z, 1e-3);
  EXPECT_NEAR(fe.I[0], 0.4, 1e-10);
  EXPECT_NEAR(fe.theta[0], 0.3, 1e-10);
}

TEST(Footpoint, NoConvergence) {
  TestSystem S;
  ExtendedState z{{0.05}, {0.5}, {0.4}, {0.3}, 0.0};  // inside the separatrix loop
  try {
    footpoint_plus(S.sys, S.field, z, 0.0);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.code(), "no convergence within horizon");
  }
}

TEST(Footpoint, FirstOrderInEps) {
  TestSystem S;
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, x = 0.3;
  std::vector<double> eps{1e-2, 1e-3, 1e-4}, dev;
  for (double e : eps) {
    const double ys = stable_graph_y(S.sys, S.field, x, I, th, t, e).y;
    const auto z = chart_state(S.sys, ys, x, I, th, t);
    const auto fp = footpoint_plus(S.sys, S.field, z, e);
    dev.push_back(std::hypot(fp.I[0] - I[0], fp.theta[0] - th[0]));
  }
  const double slope = fit_slope(eps, dev);
  EXPECT_NEAR(slope, 1.0, 0.15);
}

TEST(Footpoint, HorizonDoublingAndEquivariance) {
  TestSystem S;
  GeometryConfig cfg;
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, x = 0.3, e = 1e-3;
  const double ys = stable_graph_y(S.sys, S.field, x, I, th, t, e).y;
  const auto z = chart_state(S.sys, ys, x, I, th, t);
  const double T = horizon(S.sys, e, cfg);
  const auto a = footpoint_plus(S.sys, S.field, z, e, cfg, T);
  const auto b = footpoint_plus(S.sys, S.field, z, e, cfg, 2 * T);
  EXPECT_LT(std::abs(a.I[0] - b.I[0]), 10 * cfg.delta);
  EXPECT_LT(std::abs(a.theta[0] - b.theta[0]), 10 * cfg.delta);
  EXPECT_LT(std::abs(a.I[0] - b.I[0]), 1e-8);

  const double shift = 0.5;
  const auto zs = flow_perturbed(S.sys, S.field, z, shift, e);
  const auto c = footpoint_plus(S.sys, S.field, zs, e, cfg, T);
  State w{a.I[0], a.theta[0]};
  slice_flow(S.sys, S.field, w, t, shift, e);
  EXPECT_NEAR(c.I[0], w[0], 1e-8);
  EXPECT_NEAR(c.theta[0], w[1], 1e-8);
  EXPECT_EQ(c.t, t + shift);
}

TEST(Graphs, UnperturbedIsZero) {
  TestSystem S;
  EXPECT_EQ(stable_graph_y(S.sys, S.field, 0.3, std::vector{0.4}, std::vector{0.1}, 0.0, 0.0).y, 0.0);
  EXPECT_EQ(unstable_graph_y(S.sys, S.field, -1.0, std::vector{0.4}, std::vector{0.1}, 0.0, 0.0).y, 0.0);
}

TEST(Graphs, SplittingMatchesMelnikov) {
  TestSystem S;
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, x = 0.3;
  const double M = splitting_integral(S.sys, S.field, S.sep, std::vector{x}, I, th, t)[0];
  std::vector<double> eps{1e-2, 3e-3, 1e-3, 3e-4}, err;
  for (double e : eps) {
    const auto gs = stable_graph_y(S.sys, S.field, x, I, th, t, e);
    const auto gu = unstable_graph_y(S.sys, S.field, x, I, th, t, e);
    EXPECT_LE(std::abs(gs.y), gs.window);
    err.push_back(std::abs(gu.y - gs.y - e * M));
  }
  EXPECT_GE(fit_slope(eps, err), 1.2);
}

TEST(Graphs, SignOfPendulumDoesNotMatter) {
  const auto sys = SystemSpec::standard(-1);
  const auto field = hamiltonian_to_field(sys, kField);
  const auto sep = separatrix(sys);
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, x = 0.3, e = 1e-3;
  const double M = splitting_integral(sys, field, sep, std::vector{x}, I, th, t)[0];
  const double D = unstable_graph_y(sys, field, x, I, th, t, e).y - stable_graph_y(sys, field, x, I, th, t, e).y;
  EXPECT_NEAR(D / e, M, 0.05 * std::abs(M) + 0.01);
}

TEST(Homoclinic, UnperturbedRefuses) {
  TestSystem S;
  try {
    find_homoclinic_x(S.sys, S.field, std::vector{0.45}, std::vector{0.2}, 0.1, 0.0, 0.3);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.code(), "unperturbed: manifolds coincide");
  }
}

TEST(Homoclinic, NearMelnikovZeroAndSignInvariant) {
  TestSystem S;
  const std::vector I{0.45}, th{0.2};
  const double t = 0.1, e = 1e-3;
  const double tau0 = splitting_zero(S.sys, S.field, S.sep, I, th, t, 0.0);
  const auto h = find_homoclinic_x(S.sys, S.field, I, th, t, e, tau0);
  EXPECT_LE(std::abs(h.splitting), 1e-11);
  EXPECT_LE(std::abs(h.x - tau0), 20 * e);
  const auto neg = S.field.scaled(-1.0);
  const auto hn = find_homoclinic_x(S.sys, neg, I, th, t, e, tau0);
  EXPECT_LE(std::abs(hn.x - tau0), 20 * e);
  EXPECT_LT(h.slope * hn.slope, 0.0);
}

TEST(Scattering, IdentityAtZeroEps) {
  TestSystem S;
  const auto s = scattering_map_numeric(S.sys, S.field, std::vector{0.45}, std::vector{0.2}, 0.1, 0.0, 0.3);
  EXPECT_TRUE(s.degenerate);
  EXPECT_NEAR(s.I_plus[0], 0.45, 1e-9);
  EXPECT_NEAR(s.theta_plus[0], 0.2, 1e-9);
}

TEST(Scattering, FirstOrderPrediction) {
  TestSystem S;
  const std::vector I{0.35}, th{0.6};
  const double t = 0.1, e = 1e-3;
  const double tau0 = splitting_zero(S.sys, S.field, S.sep, I, th, t, 0.0);
  const auto m = melnikov(S.sys, S.field, S.sep, std::vector{tau0}, I, th, t);
  const auto s = scattering_map_numeric(S.sys, S.field, I, th, t, e, tau0);
  EXPECT_LE(s.outer_residual, 1e-9);
  EXPECT_LE(std::abs(s.splitting_residual), 1e-11);
  EXPECT_NEAR((s.I_plus[0] - I[0]) / e, m.dI1[0], 0.05 * std::abs(m.dI1[0]));
  EXPECT_NEAR((s.theta_plus[0] - th[0]) / e, m.dtheta1[0], 0.05 * std::abs(m.dtheta1[0]));
}
