#include <gtest/gtest.h>

#include <cmath>

#include "magschro/evolve.hpp"
#include "magschro/multiplier.hpp"

using namespace magschro;

namespace {

Trajectory sample_trajectory(const Grid& g, double T, int steps,
                             const std::function<Complex(const Point&, double)>& u) {
  Trajectory tr;
  for (int n = 0; n <= steps; ++n) {
    const double t = T * n / steps;
    tr.t.push_back(t);
    tr.u.push_back(g.sample([&](const Point& x) { return u(x, t); }));
  }
  return tr;
}

/// Smooth field that does not solve anything: random low-frequency
/// trigonometric modes in x and t.
struct RandomSmooth {
  double c[6];
  explicit RandomSmooth(std::uint64_t seed) {
    CounterRng rng(seed, 9);
    for (double& v : c) v = rng.uniform() * 2.0 - 1.0;
  }
  Complex operator()(const Point& x, double t) const {
    return Complex(std::cos(1.3 * x[0] + c[0]) * (1 + c[1] * x[1]), c[2] * std::sin(2.1 * x[1] + t)) *
           std::polar(1.0 + 0.3 * c[3] * x[0], 1.7 * t + c[4] * x[0] * x[1] + c[5]);
  }
};

MultiplierField random_field(std::uint64_t seed) {
  CounterRng rng(seed, 11);
  const double p = rng.uniform(), q = rng.uniform(), r = rng.uniform();
  MultiplierField F;
  F.value = [=](const Point& x, double t) {
    return Vec2(std::sin(x[0] + p * x[1] + t) + q, std::cos(r * x[0] - x[1]) * (1 + 0.2 * t));
  };
  return F;
}

}  // namespace

TEST(Multiplier, ZeroStateHasZeroResidual) {
  const Grid g = build_grid(2, {1.0, 1.0}, 12);
  const auto tr = sample_trajectory(g, 0.1, 4, [](const Point&, double) { return Complex(0); });
  const auto r = multiplier_identity_residual(g, zero_potential(g), tr, multiplier_m(Point(-0.2, 0.1), 2));
  EXPECT_EQ(r.residual, 0.0);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Multiplier, StandingModeReducesToRellich) {
  // u = exp(-i pi^2 t) sqrt2 sin(pi x), aleph = x: the conormal term is
  // 2 pi^2 T, the energy term -pi^2 T and the Jacobian term pi^2 T
  const double T = 0.5;
  std::vector<double> res;
  for (int n : {32, 64, 128}) {
    const Grid g = build_grid(1, {1.0}, n);
    const auto tr = sample_trajectory(g, T, 4 * n, [](const Point& x, double t) {
      return std::sqrt(2.0) * std::sin(kPi * x[0]) * std::polar(1.0, -kPi * kPi * t);
    });
    const auto r = multiplier_identity_residual(g, zero_potential(g), tr, multiplier_m(Point(0, 0), 1));
    const double tol = 20.0 / (n * n);
    EXPECT_NEAR(r.terms.at("S_conormal"), 2 * kPi * kPi * T, tol * 2 * kPi * kPi);
    EXPECT_NEAR(r.terms.at("S_energy"), -kPi * kPi * T, tol * kPi * kPi);
    EXPECT_NEAR(r.terms.at("Q_jacobian"), kPi * kPi * T, tol * kPi * kPi);
    EXPECT_NEAR(r.terms.at("Q_endpoints"), 0.0, 1e-12);
    EXPECT_LE(std::abs(r.terms.at("Q_forcing")), tol * kPi * kPi);
    EXPECT_LE(r.residual, 10.0 / n);
    res.push_back(r.residual);
  }
  for (double o : observed_orders(res)) EXPECT_GT(o, 0.85);
}

TEST(Multiplier, RandomInputsConvergeUnderRefinement1D) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<double> res;
    for (int n : {32, 64}) {
      const Grid g = build_grid(1, {1.0}, n);
      const auto a = make_potential(g, [&](const Point& x) { return Vec2(0.4 * std::cos(x[0] + seed), 0); });
      const auto tr = sample_trajectory(g, 0.5, n, RandomSmooth(seed));
      const auto r = multiplier_identity_residual(g, a, tr, random_field(seed));
      res.push_back(r.residual);
    }
    EXPECT_GE(res[0] / res[1], 1.8) << seed;
  }
}

TEST(Multiplier, MagneticFieldTermIn2D) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::vector<double> res;
    double magnetic = 0;
    for (int n : {12, 24}) {
      const Grid g = build_grid(2, {1.0, 1.0}, n);
      // curl a = 1.5 + 0.3 cos(x)
      const auto a = make_potential(g, [](const Point& x) {
        return Vec2(-0.75 * x[1], 0.75 * x[0] + 0.3 * std::sin(x[0]));
      });
      const auto tr = sample_trajectory(g, 0.4, n / 2, RandomSmooth(seed));
      const auto r = multiplier_identity_residual(g, a, tr, random_field(seed));
      EXPECT_FALSE(r.warnings.empty());
      res.push_back(r.residual);
      magnetic = std::abs(r.terms.at("Q_magnetic"));
    }
    EXPECT_GE(res[0] / res[1], 1.8) << seed;
    // without the field term the balance would be off by far more
    EXPECT_GT(magnetic, 10 * res[1]) << seed;
  }
}

TEST(Multiplier, CutoffFieldPreset) {
  const Grid g = build_grid(2, {1.0, 1.0}, 16);
  const auto F = multiplier_cutoff(g, {"x+", "y+"}, 1.0, 0.2, 0.3);
  EXPECT_NEAR(F.value(Point(1.0, 0.5), 0.5)[0], 1.0, 1e-12);
  EXPECT_NEAR(F.value(Point(0.5, 0.5), 0.5).norm(), 0.0, 1e-12);
  EXPECT_NEAR(F.value(Point(1.0, 0.5), 0.0).norm(), 0.0, 1e-12);
  EXPECT_NEAR(F.divergence(Point(0.9, 0.5), 0.5), F.jacobian(Point(0.9, 0.5), 0.5).trace(), 1e-12);
  EXPECT_THROW(multiplier_cutoff(g, {"z+"}, 1.0, 0.2, 0.3), InvalidArgument);
  EXPECT_THROW(multiplier_cutoff(g, {"x+"}, 1.0, 0.6, 0.3), InvalidArgument);
}

TEST(Multiplier, ScriptE2AlongBoundaryDampedRun) {
  const Grid g = build_grid(1, {1.0}, 128);
  const auto split = split_boundary(g, -0.5);
  auto damp = DampingConfig::none(g);
  for (int k : split.gamma0) damp.d[k] = (g.coord(k) - split.x0).dot(g.normal(k));
  const auto a = zero_potential(g);
  const auto gen = assemble_generator(GenKind::A2, g, a, damp, split);
  const CVec v = gen.dofs.restrict(g.sample([](const Point& x) { return Complex(x[0] * (1.3 - x[0]), 0.2 * x[0]); }));
  const CVec u0 = smooth_initial_state(gen, v, 1);
  SimulationOptions opt;
  opt.snapshot_stride = 1;
  const auto res = simulate(gen, u0, 0.2, 1e-3, opt);
  const auto r = functional_script_E2(g, a, gen, split, {res.snapshot_times, res.snapshots});
  EXPECT_LE(r.relative, 0.01);
  EXPECT_GT(r.scale, 0.0);
  // a real state has zero functional
  const StateField real = g.sample([](const Point& x) { return Complex(std::sin(2 * x[0]), 0); });
  EXPECT_EQ(script_E2(g, real, split.x0), 0.0);
  const auto gen0 = assemble_generator(GenKind::A0, g, a, DampingConfig::none(g), split);
  EXPECT_THROW(functional_script_E2(g, a, gen0, split, {res.snapshot_times, res.snapshots}), InvalidArgument);
}

TEST(Multiplier, IntegrationByPartsWithM) {
  // 1D sin(pi x), x0 = 0: pairing 3 pi^2/4, volume -pi^2/4, boundary -pi^2/2
  std::vector<double> res1, res2;
  for (int n : {32, 64, 128}) {
    const Grid g = build_grid(1, {1.0}, n);
    const auto r = ibp_identity_m(g, g.sample([](const Point& x) { return std::sin(kPi * x[0]); }), Point(0, 0));
    EXPECT_NEAR(r.pairing, 0.75 * kPi * kPi, 40.0 / (n * n));
    EXPECT_NEAR(r.volume, -0.25 * kPi * kPi, 10.0 / (n * n));
    EXPECT_NEAR(r.boundary, -0.5 * kPi * kPi, 40.0 / (n * n));
    res1.push_back(r.residual);
    const Grid g2 = build_grid(2, {1.0, 1.0}, n);
    const auto r2 = ibp_identity_m(
        g2, g2.sample([](const Point& x) { return std::sin(kPi * x[0]) * std::sin(kPi * x[1]); }), Point(-0.3, 0.2));
    res2.push_back(r2.residual);
  }
  for (double o : observed_orders(res1)) EXPECT_GT(o, 1.8);
  for (double o : observed_orders(res2)) EXPECT_GT(o, 0.9);
  const Grid g = build_grid(1, {1.0}, 16);
  EXPECT_EQ(ibp_identity_m(g, StateField::Zero(g.num_nodes()), Point(0, 0)).residual, 0.0);
}

TEST(Multiplier, PairingSlackReport) {
  const Grid g = build_grid(1, {1.0}, 64);
  const auto split = split_boundary(g, -0.5);
  const auto a = make_potential(g, [](const Point& x) { return Vec2(0.1 * std::cos(x[0]), 0); });
  const double kappa = poincare_constant(g, split.gamma1).kappa;
  const auto r = pairing_slack(g, a, g.sample([](const Point& x) { return Complex(x[0] * (1 - 0.3 * x[0]), 0.1); }),
                               split, kappa);
  EXPECT_NEAR(r.delta0, 4 * (2 * kappa + kappa * kappa) * a.sup_norm, 1e-15);
  EXPECT_TRUE(r.smallness);
  EXPECT_TRUE(std::isfinite(r.implied_delta));
  EXPECT_NEAR(r.slack, r.pairing - r.energy - r.boundary, 1e-14);
}
