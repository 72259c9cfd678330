#include <gtest/gtest.h>

#include <cmath>

#include "magschro/weights.hpp"

using namespace magschro;

namespace {

std::vector<double> s_samples(double half, int n) {
  std::vector<double> s;
  for (int i = 0; i <= n; ++i) s.push_back(-half + 2 * half * i / n);
  return s;
}

// bracket / (4 tau^3 lambda^3 phi^3 |grad g|^4) for g = c x - beta s^2
double linear_margin(double lambda, double c, double beta, double s) {
  const double q = c * c + 4 * beta * beta * s * s;
  return lambda - (2 * beta * c * c + 8 * beta * beta * beta * s * s) / (q * q);
}

}  // namespace

TEST(Weights, QuadraticPsiMargin) {
  for (int dim : {1, 2}) {
    const Grid g = build_grid(dim, dim == 1 ? std::vector<double>{1.0} : std::vector<double>{1.0, 0.7}, 20);
    const Point x0(-0.3, 0.2);
    const auto psi = psi_quadratic(x0, dim);
    const auto r = check_pseudoconvexity(g, psi, g.all_nodes());
    double rmax = 0;
    for (int k = 0; k < g.num_nodes(); ++k) rmax = std::max(rmax, (g.coord(k) - detail::clip(x0, dim)).squaredNorm());
    EXPECT_GE(r.margin, 2 - 1e-8);
    // lambda_min(grad grad^T + 2I) is 2 in 2D and 2 + 4 r^2 in 1D
    EXPECT_LE(r.margin, 2 + 4 * rmax + 1e-8);
    EXPECT_GT(r.min_grad, 0.0);
    EXPECT_TRUE(r.positive);
  }
}

TEST(Weights, LinearPsiIsDegenerateIn2D) {
  const Grid g = build_grid(2, {1.0, 1.0}, 8);
  const auto r = check_pseudoconvexity(g, psi_linear(Eigen::Vector2d(1.0, 2.0), 1.0, 2), g.all_nodes());
  EXPECT_NEAR(r.margin, 0.0, 1e-12);
  EXPECT_FALSE(r.certified);
  const auto r1 = check_pseudoconvexity(build_grid(1, {1.0}, 8), psi_linear(Eigen::Vector2d(-1.0, 0), 0.0, 1),
                                        build_grid(1, {1.0}, 8).all_nodes());
  EXPECT_NEAR(r1.margin, 1.0, 1e-12);
  EXPECT_FALSE(r1.positive);
}

TEST(Weights, SampledPsiMatchesAnalytic) {
  const Grid g = build_grid(2, {1.0, 1.0}, 16);
  const auto exact = psi_quadratic(Point(1.4, -0.2), 2);
  const auto fd = psi_from_samples(g, g.sample_real([&](const Point& x) { return exact.value(x); }));
  EXPECT_FALSE(fd.analytic);
  for (int k = 0; k < g.num_nodes(); ++k) {
    if (g.is_boundary(k)) continue;
    const Point x = g.coord(k);
    EXPECT_NEAR((fd.grad(x) - exact.grad(x)).norm(), 0.0, 1e-10);
    EXPECT_NEAR((fd.hess(x) - exact.hess(x)).norm(), 0.0, 1e-8);
  }
}

TEST(Weights, PsiGCollarAndShift) {
  const Grid g = build_grid(1, {1.0}, 64);
  const NodeSet omega = g.select([](const Point& x) { return x[0] > 0.8; });
  const auto psi = construct_psi_G(g, omega, Point(-0.5, 0));
  double lo = 1e300, hi = -1e300;
  int ramp = 0;
  for (int k = 0; k < g.num_nodes(); ++k) {
    const double v = psi.value(g.coord(k));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ramp += psi.transition(g.coord(k));
  }
  EXPECT_GT(lo, 2.0 / 3.0 * hi);
  EXPECT_GT(psi.shift, 0.0);
  EXPECT_GT(ramp, 0);
  // flat next to the observed face, quadratic away from it
  EXPECT_NEAR(psi.grad(Point(1.0, 0))[0], 0.0, 1e-14);
  EXPECT_NEAR(psi.grad(Point(0.3, 0))[0], 2 * 0.8, 1e-12);
  // derivatives agree with differences of the value
  for (double x : {0.05, 0.4, 0.81, 0.86, 0.9, 0.97}) {
    const double e = 1e-5;
    const Point p(x, 0), pp(x + e, 0), pm(x - e, 0);
    EXPECT_NEAR(psi.grad(p)[0], (psi.value(pp) - psi.value(pm)) / (2 * e), 1e-6) << x;
    EXPECT_NEAR(psi.hess(p)(0, 0), (psi.grad(pp)[0] - psi.grad(pm)[0]) / (2 * e),
                1e-7 * std::max(1.0, std::abs(psi.hess(p)(0, 0))))
        << x;
  }
  const auto r = check_pseudoconvexity(g, psi, g.select([](const Point& x) { return x[0] < 0.7; }));
  EXPECT_GT(r.margin, 0.0);
  EXPECT_EQ(r.transition_nodes, 0);
  EXPECT_THROW(construct_psi_G(g, omega, Point(0.5, 0)), InvalidArgument);
  const Grid g2 = build_grid(2, {1.0, 1.0}, 16);
  const auto psi2 = construct_psi_G(g2, g2.select([](const Point& x) { return x[0] > 0.85 || x[1] > 0.85; }),
                                    Point(-0.4, -0.3));
  const Point q(0.93, 0.95);
  const double e = 1e-5;
  for (int i = 0; i < 2; ++i) {
    const Point d = e * Point::Unit(i);
    EXPECT_NEAR(psi2.grad(q)[i], (psi2.value(q + d) - psi2.value(q - d)) / (2 * e), 1e-6);
    for (int j = 0; j < 2; ++j)
      EXPECT_NEAR(psi2.hess(q)(i, j), (psi2.grad(q + d)[j] - psi2.grad(q - d)[j]) / (2 * e), 1e-5);
  }
}

TEST(Weights, BracketMatchesLinearClosedForm) {
  const Grid X = build_grid(1, {1.0}, 16);
  const double c = 1.3, beta = 0.7, lambda = 2.0;
  WeightFunction w{psi_linear(Eigen::Vector2d(c, 0), 0.5, 1), lambda, beta, true};
  CounterRng rng(4, 0);
  for (int k = 0; k < X.num_nodes(); k += 3)
    for (double s : {-0.8, 0.0, 0.35}) {
      const auto l = w.at(X.coord(k), s);
      const double tau = 1 + 5 * rng.uniform();
      // the characteristic direction in 2D is unique up to sign
      RVec eta(2);
      eta << -l.grad_phi[1], l.grad_phi[0];
      eta *= tau;
      const double b = poisson_bracket(l, eta, tau);
      const double scale = 4 * std::pow(tau * lambda * l.phi, 3) * std::pow(c * c + 4 * beta * beta * s * s, 2);
      EXPECT_NEAR(b / scale, linear_margin(lambda, c, beta, s), 1e-12);
    }
}

TEST(Weights, SubellipticityThreshold) {
  const Grid X = build_grid(1, {1.0}, 16);
  const double c = 1.0, beta = 0.5;
  WeightFunction w{psi_linear(Eigen::Vector2d(c, 0), 1.0, 1), 1.0, beta, true};
  const auto ss = s_samples(1.0, 20);
  const auto pts = weight_points(X, X.all_nodes(), ss);
  double oracle = -1e300;
  for (double s : ss) oracle = std::max(oracle, -linear_margin(0.0, c, beta, s));
  const double lam = subellipticity_threshold(w, pts);
  EXPECT_NEAR(lam, oracle, 1e-12);
  EXPECT_GT(lam, 0.0);
  const std::vector<double> taus{1.0, 4.0};
  double prev = -1e300;
  for (double f : {0.5, 0.9, 1.1, 2.0, 4.0}) {
    w.lambda = f * lam;
    const auto r = check_subellipticity(w, pts, taus, 8);
    EXPECT_EQ(r.certified, f > 1) << f;
    EXPECT_EQ(r.failing.empty(), f > 1) << f;
    EXPECT_GT(r.min_margin, prev);
    prev = r.min_margin;
    if (f < 1) {
      // a witness reproduces its bracket
      const auto& wt = r.failing.front();
      EXPECT_NEAR(poisson_bracket(w.at(X.coord(wt.node), wt.s), wt.eta, wt.tau), wt.bracket,
                  1e-10 * std::abs(wt.bracket));
    }
  }
  // the exponential of a linear function alone has a positive bracket
  WeightFunction plain{psi_linear(Eigen::Vector2d(1.0, 0.5), 0.0, 2), 0.3};
  const Grid g2 = build_grid(2, {1.0, 1.0}, 6);
  const auto r2 = check_subellipticity(plain, weight_points(g2, g2.all_nodes()), taus);
  EXPECT_TRUE(r2.certified);
  EXPECT_NEAR(r2.min_margin, 0.3, 1e-12);
}

TEST(Weights, SubellipticityEdgeCases) {
  const Grid X = build_grid(1, {1.0}, 9);
  WeightFunction w{psi_quadratic(Point(-0.2, 0), 1), 1.0};
  const auto r = check_subellipticity(w, weight_points(X, X.all_nodes()), {1.0});
  EXPECT_TRUE(r.vacuous);
  EXPECT_TRUE(r.certified);
  // a critical point of psi is excluded, not counted
  WeightFunction c{psi_quadratic(Point(0.5, 0), 1), 1.0};
  const auto rc = check_subellipticity(c, weight_points(X, X.all_nodes()), {1.0});
  ASSERT_EQ(rc.excluded.size(), 1u);
  EXPECT_EQ(rc.excluded[0], 4);
  EXPECT_THROW(check_subellipticity(w, {}, {}), InvalidArgument);
  const auto j = certification_json(check_pseudoconvexity(X, w.psi, X.all_nodes()), r);
  for (const char* key : {"min_grad", "subellipticity_min_bracket", "pseudoconvexity_margin", "failing_witnesses"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Weights, CarlemanProbeBasics) {
  const Grid X = build_grid(2, {1.0, 1.0}, 32);
  const auto a = zero_potential(X);
  auto bumps = random_bumps(X, X.all_nodes(), 4, 2);
  for (const auto& b : bumps) {
    EXPECT_GT(b.cwiseAbs().maxCoeff(), 0.0);
    for (int k = 0; k < X.num_nodes(); ++k)
      if (X.is_boundary(k)) EXPECT_EQ(b[k], 0.0);
  }
  // constant weight: plain ratio of unweighted norms
  WeightFunction flat{psi_linear(Eigen::Vector2d::Zero(), 0.2, 2), 1.0};
  const double tau = 3.0;
  const auto tr = carleman_probe(X, a, flat, {bumps[0]}, {tau});
  const auto gr = fd::gradient(X, bumps[0]);
  const StateField P = apply_magnetic_laplacian(X, a, bumps[0]);
  double f2 = 0, g2 = 0, p2 = 0;
  for (int k = 0; k < X.num_nodes(); ++k) {
    const double v = X.volume_weights()[k];
    f2 += v * std::norm(bumps[0][k]);
    g2 += v * (std::norm(gr[0][k]) + std::norm(gr[1][k]));
    p2 += v * std::norm(P[k]);
  }
  EXPECT_NEAR(tr.C[0], (tau * tau * tau * f2 + tau * g2) / p2, 1e-12 * tr.C[0]);
  // invariant under scaling of the test function
  WeightFunction w{psi_linear(Eigen::Vector2d(1.0, 0.4), 1.0, 2), 1.5};
  const auto t1 = carleman_probe(X, a, w, {bumps[1]}, {2.0, 8.0});
  const auto t2 = carleman_probe(X, a, w, {StateField(Complex(0, 3) * bumps[1])}, {2.0, 8.0});
  EXPECT_NEAR(t1.C[1], t2.C[1], 1e-12 * t1.C[1]);
  // zero tests are skipped and counted
  const auto tz = carleman_probe(X, a, w, {StateField::Zero(X.num_nodes()), bumps[1]}, {2.0});
  EXPECT_EQ(tz.zero_tests, 1);
  EXPECT_EQ(tz.argmax[0], 1);
  EXPECT_THROW(carleman_probe(X, a, w, bumps, {17.0}), InvalidArgument);
  EXPECT_THROW(carleman_probe(X, a, w, bumps, {}), InvalidArgument);
}

TEST(Weights, CarlemanTrendOnCylinder) {
  // x in (0, 1), s in (-1/2, 1/2); phi = exp(lambda (x + 1 - s^2 / 2))
  const int n = 64;
  const Grid X = build_grid(2, {1.0, 1.0}, n);
  WeightFunction w{psi_linear(Eigen::Vector2d(1, 0), 1.0, 1), 1.0, 0.5, true};
  std::vector<double> taus;
  for (double t = 2; t <= 0.5 * n + 1e-9; t *= 1.25) taus.push_back(t);
  const auto tr = carleman_probe(X, zero_potential(X), w, random_bumps(X, X.all_nodes(), 20, 5), taus, 0.5);
  EXPECT_TRUE(tr.bounded);
  EXPECT_LE(tr.slope, 0.0);
  for (double c : tr.C) EXPECT_TRUE(std::isfinite(c) && c > 0);
  WeightFunction flat2d{psi_linear(Eigen::Vector2d(1, 0), 1.0, 2), 1.0, 0.5, true};
  EXPECT_THROW(carleman_probe(X, zero_potential(X), flat2d, {}, {1.0}), InvalidArgument);
}

TEST(Weights, SpacetimeWeights) {
  const Grid g = build_grid(2, {1.0, 1.0}, 17);
  const auto psi = psi_quadratic(Point(-0.5, -0.5), 2);
  const double T = 2.0;
  const auto sw = spacetime_weights(g, psi, 1.2, T, 10);
  ASSERT_EQ(sw.t.size(), 9u);
  for (std::size_t n = 0; n < sw.t.size(); ++n) {
    EXPECT_GT(sw.t[n], 0.0);
    EXPECT_LT(sw.t[n], T);
    EXPECT_GT(sw.theta[n].minCoeff(), 0.0);
    EXPECT_GT(sw.phi[n].minCoeff(), 0.0);
    const std::size_t m = sw.t.size() - 1 - n;
    EXPECT_LE((sw.theta[n] - sw.theta[m]).norm(), 1e-12 * sw.theta[n].norm());
    EXPECT_LE((sw.phi[n] - sw.phi[m]).norm(), 1e-12 * sw.phi[n].norm());
  }
  EXPECT_THROW(spacetime_weights(g, psi, 1.0, 0.0, 4), InvalidArgument);

  // space-time probe on a few separable bumps
  const NodeSet omega = g.select([](const Point& x) { return x[0] > 0.7; });
  std::vector<std::vector<StateField>> tests;
  for (const auto& b : random_bumps(g, g.all_nodes(), 3, 1)) {
    std::vector<StateField> w;
    for (double t : sw.t) w.push_back(std::sin(kPi * t / T) * b);
    tests.push_back(w);
  }
  const auto tr = carleman_probe_spacetime(g, zero_potential(g), sw, 1.2, omega, tests, {1.0, 2.0, 4.0});
  for (double c : tr.C) EXPECT_TRUE(std::isfinite(c) && c > 0);
  EXPECT_THROW(carleman_probe_spacetime(g, zero_potential(g), sw, 1.2, omega, tests, {9.0}), InvalidArgument);
}
