#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "magschro/spectra.hpp"

using namespace magschro;

namespace {

/// Eigenvalues of the discrete Dirichlet operator K v = lambda M v, computed
/// independently of the generator.
RVec dirichlet_eigenvalues(const GeneratorMatrix& gen) {
  const RMat K = CMat(gen.K).real();
  const RVec s = gen.mass.cwiseSqrt().cwiseInverse();
  Eigen::SelfAdjointEigenSolver<RMat> es(s.asDiagonal() * K * s.asDiagonal());
  return es.eigenvalues();
}

double oracle(const RVec& lam, double mu) {
  double d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < lam.size(); ++k) d = std::min(d, std::abs(mu + lam[k]));
  return 1.0 / d;
}

}  // namespace

TEST(Spectra, ResolventOfEigenfunction) {
  const Grid g = build_grid(1, {1.0}, 128);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  const RVec lam = dirichlet_eigenvalues(gen);
  const double mu = -(lam[0] + lam[1]) / 2;
  const CVec e1 = gen.dofs.restrict(g.sample([](const Point& x) { return std::sin(kPi * x[0]); }));
  const CVec g1 = e1 / std::sqrt(std::real(e1.dot(gen.G * e1)));
  const auto s = resolvent_solve(gen, mu, g1);
  EXPECT_NEAR(std::sqrt(s.norm2), 1.0 / std::abs(mu + lam[0]), 1e-8 / std::abs(mu + lam[0]));
  EXPECT_LE(s.identity_real, 1e-9);
  EXPECT_LE(s.identity_imag, 1e-9);
  const auto z = resolvent_solve(gen, mu, CVec::Zero(gen.size()));
  EXPECT_EQ(z.u.norm(), 0.0);
}

TEST(Spectra, IdentitiesForDampedGenerators) {
  const Grid g = build_grid(2, {1.0, 1.0}, 14);
  const auto split = split_boundary(g, Point(-0.4, -0.2));
  const auto a = make_potential(g, [](const Point& x) {
    return Eigen::Vector2d(0.3 * std::sin(x[1]), 0.2 * x[0]);
  });
  auto damp = DampingConfig::none(g);
  damp.c = g.sample_real([](const Point& x) { return 1.0 + x[0]; });
  damp.omega = g.all_nodes();
  damp.c0 = 1.0;
  for (int k : split.gamma0) damp.d[k] = 0.7;
  CounterRng rng(8);
  for (GenKind kind : {GenKind::A1, GenKind::A3}) {
    const auto gen = assemble_generator(kind, g, a, damp, split);
    CVec rhs(gen.size());
    for (int i = 0; i < rhs.size(); ++i) rhs[i] = Complex(rng.normal(), rng.normal());
    for (double mu : {-50.0, 3.0, -400.0}) {
      const auto s = resolvent_solve(gen, mu, rhs);
      EXPECT_LE(s.residual, 1e-10);
      EXPECT_LE(s.identity_real, 1e-9) << to_string(kind);
      EXPECT_LE(s.identity_imag, 1e-9) << to_string(kind);
      if (kind == GenKind::A1) {
        // c >= c0 on all of Omega: ||sqrt c u||^2 <= ||g|| ||u||
        const double gn = std::sqrt(std::real(rhs.dot(gen.G * rhs)));
        EXPECT_LE(s.dissipation_term, gn * std::sqrt(s.norm2) * (1 + 1e-12));
      }
    }
  }
  // A2 in the stiffness inner product, a = 0 on Gamma_0
  const auto zero = zero_potential(g);
  const auto gen2 = assemble_generator(GenKind::A2, g, zero, damp, split);
  CVec rhs(gen2.size());
  for (int i = 0; i < rhs.size(); ++i) rhs[i] = Complex(rng.normal(), rng.normal());
  const auto s2 = resolvent_solve(gen2, -30.0, rhs);
  EXPECT_LE(s2.identity_real, 1e-9);
  EXPECT_LE(s2.identity_imag, 1e-9);
}

TEST(Spectra, ConservativeScanMatchesOracle) {
  const Grid g = build_grid(1, {1.0}, 64);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  const RVec lam = dirichlet_eigenvalues(gen);
  std::vector<double> mu;
  for (int i = 0; i < 30; ++i) mu.push_back(-1000.0 + 1033.3 * i / 29.0);
  const auto scan = scan_resolvent(gen, mu);
  for (std::size_t i = 0; i < mu.size(); ++i)
    EXPECT_NEAR(scan.norm[i] / oracle(lam, mu[i]), 1.0, 1e-6) << mu[i];
}

TEST(Spectra, NormBoundedBelowBySpectralDistance) {
  const Grid g = build_grid(1, {1.0}, 40);
  const auto split = split_boundary(g, -1.0);
  auto damp = DampingConfig::none(g);
  damp.c = g.sample_real([](const Point& x) { return x[0] < 0.3 ? 4.0 : 0.0; });
  const auto gen = assemble_generator(GenKind::A1, g, zero_potential(g), damp, split);
  Eigen::ComplexEigenSolver<CMat> es(CMat(gen.A));
  std::vector<double> mu{-10, -100, -300, -700};
  const auto scan = scan_resolvent(gen, mu);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < es.eigenvalues().size(); ++k)
      d = std::min(d, std::abs(es.eigenvalues()[k] - Complex(0, mu[i])));
    EXPECT_GE(scan.norm[i], (1.0 / d) * (1 - 1e-8));
  }
}

TEST(Spectra, SinglePointScanRefusesFit) {
  const Grid g = build_grid(1, {1.0}, 20);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  const auto scan = scan_resolvent(gen, {-5.0});
  EXPECT_TRUE(std::isfinite(scan.norm[0]));
  EXPECT_FALSE(scan.sqrt_fit.valid);
  EXPECT_FALSE(scan.fit_note.empty());
}

TEST(Spectra, GrowthFitRecoversSyntheticLaw) {
  ResolventScan s;
  for (int i = 1; i <= 60; ++i) {
    const double mu = -10.0 * i;
    s.mu.push_back(mu);
    s.norm.push_back(2.5 * std::exp(0.3 * std::sqrt(std::abs(mu))));
    s.error.push_back("");
  }
  fit_scan(s);
  EXPECT_NEAR(s.sqrt_fit.C, 2.5, 1e-8);
  EXPECT_NEAR(s.sqrt_fit.K, 0.3, 1e-8);
  EXPECT_NEAR(s.p_hat, 0.5, 1e-4);
  for (double& v : s.norm) v = 3.0;
  fit_scan(s);
  EXPECT_EQ(s.p_hat, 0.0);
}

TEST(Spectra, ScanParallelMatchesSerial) {
  const Grid g = build_grid(1, {1.0}, 30);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  std::vector<double> mu{-3, -40, -90, -200, -444};
  const auto a = scan_resolvent(gen, mu, 1);
  const auto b = scan_resolvent(gen, mu, 3);
  for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_EQ(a.norm[i], b.norm[i]);
  std::ostringstream os;
  write_scan_csv(os, a);
  EXPECT_EQ(os.str().rfind("mu,norm,fit_residual", 0), 0u);
}

TEST(Spectra, HautusFullObservation) {
  const Grid g = build_grid(1, {1.0}, 30);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  const auto rep = hautus_sweep(gen, g.all_nodes(), {-10, -50, -200}, {0.0, 1e-4, 1e-2});
  ASSERT_TRUE(rep.feasible);
  EXPECT_EQ(rep.global_aleph0, 0.0);
  EXPECT_EQ(rep.global_aleph1, 1.0);
  EXPECT_THROW(hautus_sweep(gen, {}, {-1.0}, {1.0}), InvalidArgument);
}

TEST(Spectra, HautusLocalized) {
  const Grid g = build_grid(1, {1.0}, 40);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  const RVec lam = dirichlet_eigenvalues(gen);
  const NodeSet omega = g.select([](const Point& x) { return x[0] < 0.2; });
  // far from the spectrum a small aleph0 suffices with aleph1 = 0
  const double mu_far = -(lam[0] + lam[1]) / 2;
  const double dist = std::abs(mu_far + lam[0]);
  const auto far = hautus_sweep(gen, omega, {mu_far}, {1.0 / (dist * dist) * 1.0001});
  EXPECT_EQ(far.frontier[0][0], 0.0);
  std::vector<double> a0;
  for (int i = 0; i <= 8; ++i) a0.push_back(i == 0 ? 0.0 : std::pow(10.0, -6 + i * 0.5));
  const auto rep = hautus_sweep(gen, omega, {-5, -lam[0], -60, -lam[2], -300}, a0);
  EXPECT_TRUE(rep.monotone);
  EXPECT_TRUE(std::isnan(rep.frontier[0][0]));  // aleph0 = 0 with omega != Omega
  EXPECT_TRUE(rep.feasible);
  EXPECT_GT(rep.global_aleph0, 0.0);
}
