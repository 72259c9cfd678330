#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "magschro/magop.hpp"

using namespace magschro;

namespace {

RVec sorted_real(const CMat& A) {
  Eigen::ComplexEigenSolver<CMat> es(A);
  RVec v = es.eigenvalues().real();
  std::sort(v.data(), v.data() + v.size());
  return v;
}

RVec sorted_imag(const CMat& A) {
  Eigen::ComplexEigenSolver<CMat> es(A);
  RVec v = es.eigenvalues().imag();
  std::sort(v.data(), v.data() + v.size());
  return v;
}

MagneticPotential smooth_potential(const Grid& g) {
  return make_potential(g, [](const Point& x) {
    return Eigen::Vector2d(0.7 * std::sin(2 * x[0] + x[1]), 0.4 * std::cos(x[0] - 3 * x[1]));
  });
}

}  // namespace

TEST(Magop, FreeDirichletSpectrum) {
  const Grid g = build_grid(1, {1.0}, 256);
  const auto L = assemble_magnetic_laplacian(g, zero_potential(g), Scheme::LinkPhase);
  const RVec ev = -sorted_real(CMat(L.A)).reverse();
  EXPECT_NEAR(ev[0], kPi * kPi, 0.01);
}

TEST(Magop, ConstantPotentialIsGaugedAway) {
  const Grid g = build_grid(1, {1.0}, 64);
  const auto a = make_potential(g, [](const Point&) { return Eigen::Vector2d(3.3, 0); });
  const auto L0 = assemble_magnetic_laplacian(g, zero_potential(g), Scheme::LinkPhase);
  const auto La = assemble_magnetic_laplacian(g, a, Scheme::LinkPhase);
  const RVec e0 = sorted_real(CMat(L0.A)), ea = sorted_real(CMat(La.A));
  EXPECT_LE((e0 - ea).cwiseAbs().maxCoeff(), 1e-10 * e0.cwiseAbs().maxCoeff());
}

TEST(Magop, SchemesAgreeWithoutPotential) {
  for (const Grid& g : {build_grid(1, {1.0}, 20), build_grid(2, {1.0, 2.0}, {9, 12})}) {
    const auto a = zero_potential(g);
    const auto L1 = assemble_magnetic_laplacian(g, a, Scheme::LinkPhase);
    const auto L2 = assemble_magnetic_laplacian(g, a, Scheme::Expansion);
    EXPECT_LE(linalg::max_abs(SpMat(L1.A - L2.A)), 1e-12 * linalg::max_abs(L1.A));
  }
}

TEST(Magop, SchemesAgreeToSecondOrder) {
  std::vector<double> diff;
  for (int n : {21, 41, 81}) {
    const Grid g = build_grid(2, {1.0, 1.0}, n);
    const auto a = smooth_potential(g);
    const auto L1 = assemble_magnetic_laplacian(g, a, Scheme::LinkPhase);
    const auto L2 = assemble_magnetic_laplacian(g, a, Scheme::Expansion);
    const CVec u = L1.dofs.restrict(g.sample([](const Point& x) {
      return std::sin(kPi * x[0]) * std::sin(kPi * x[1]) * std::exp(Complex(0, x[0] * x[1]));
    }));
    diff.push_back((L1.A * u - L2.A * u).cwiseAbs().maxCoeff());
  }
  EXPECT_GT(diff[0] / diff[1], 3.0);
  EXPECT_GT(diff[1] / diff[2], 3.0);
}

TEST(Magop, GradientOnLinearAndZero) {
  const Grid g = build_grid(1, {1.0}, 11);
  const auto a = zero_potential(g);
  const auto grad = magnetic_gradient(g, a, g.sample([](const Point& x) { return x[0]; }));
  for (int k = 0; k < g.num_nodes(); ++k) EXPECT_NEAR(std::abs(grad[0][k] - 1.0), 0.0, 1e-13);
  const auto z = magnetic_gradient(g, a, StateField::Zero(g.num_nodes()));
  EXPECT_EQ(z[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Magop, GradientProductRule) {
  const double alpha = 1.7;
  std::vector<double> err;
  for (int n : {41, 81}) {
    const Grid g = build_grid(1, {1.0}, n);
    const auto a = make_potential(g, [&](const Point&) { return Eigen::Vector2d(alpha, 0); });
    const auto u = g.sample([&](const Point& x) {
      return std::exp(Complex(0, -alpha * x[0])) * std::cos(2 * x[0]);
    });
    const auto grad = magnetic_gradient(g, a, u);
    double e = 0;
    for (int k = 0; k < g.num_nodes(); ++k) {
      const double x = g.coord(k)[0];
      e = std::max(e, std::abs(grad[0][k] - std::exp(Complex(0, -alpha * x)) * (-2 * std::sin(2 * x))));
    }
    err.push_back(e);
  }
  EXPECT_LT(err[1], 5e-3);
  EXPECT_GT(err[0] / err[1], 3.5);
}

TEST(Magop, Conormal) {
  const Grid g = build_grid(1, {1.0}, 201);
  const auto a = zero_potential(g);
  const auto u = g.sample([](const Point& x) { return std::sin(kPi * x[0]); });
  const CVec dn = conormal_derivative(g, a, u, {0});
  // outward normal at x = 0 is -e_x
  EXPECT_NEAR(dn[0].real(), -kPi, 5e-4);
  const CVec one = conormal_derivative(g, a, StateField::Ones(g.num_nodes()), g.boundary_nodes());
  EXPECT_EQ(one.cwiseAbs().maxCoeff(), 0.0);
  const double beta = 0.8;
  const auto ab = make_potential(g, [&](const Point&) { return Eigen::Vector2d(-beta, 0); });
  const CVec c = conormal_derivative(g, ab, StateField::Ones(g.num_nodes()), {0});
  EXPECT_NEAR(std::abs(c[0] - Complex(0, beta)), 0.0, 1e-15);
  EXPECT_THROW(conormal_derivative(g, a, u, {5}), InvalidArgument);
}

TEST(Magop, GeneratorsStructure1D) {
  const Grid g = build_grid(1, {1.0}, 64);
  const auto split = split_boundary(g, -1.0);
  const auto a = make_potential(g, [](const Point& x) { return Eigen::Vector2d(std::sin(3 * x[0]), 0); });
  auto damp = DampingConfig::none(g);
  damp.c = g.sample_real([](const Point& x) { return x[0] < 0.3 ? 2.0 : 0.0; });
  for (int k : split.gamma0) damp.d[k] = 1.5;
  for (GenKind k : {GenKind::A0, GenKind::A1, GenKind::A3}) {
    const auto gen = assemble_generator(k, g, a, damp, split);
    const auto r = check_structure(gen);
    EXPECT_TRUE(r.ok) << to_string(k) << " herm " << r.hermitian_max << " id "
                      << r.identity_residual;
  }
  // A2 with a vanishing on Gamma_0
  auto a2 = make_potential(g, [](const Point& x) { return Eigen::Vector2d(0.2 * std::sin(kPi * x[0]), 0); });
  a2.a(g.num_nodes() - 1, 0) = 0.0;
  a2 = make_potential(g, a2.a);
  require_vanishing_on(g, a2, split.gamma0, 1e-15);
  const auto gen2 = assemble_generator(GenKind::A2, g, a2, damp, split);
  const auto r2 = check_structure(gen2);
  EXPECT_TRUE(r2.ok) << r2.hermitian_max << " " << r2.identity_residual;
}

TEST(Magop, A0SkewInMass) {
  const Grid g = build_grid(2, {1.0, 1.0}, 20);
  const auto a = smooth_potential(g);
  const auto gen = assemble_generator(GenKind::A0, g, a, DampingConfig::none(g),
                                      split_boundary(g, Point(-1, -1)));
  const SpMat MA = gen.G * gen.A;
  EXPECT_LE(linalg::max_abs(SpMat(MA + SpMat(MA.adjoint()))), 1e-12 * linalg::max_abs(MA));
}

TEST(Magop, A1ConstantDampingShiftsSpectrum) {
  const Grid g = build_grid(1, {1.0}, 40);
  const auto split = split_boundary(g, -1.0);
  auto damp = DampingConfig::none(g);
  damp.c.setConstant(0.75);
  damp.omega = g.all_nodes();
  damp.c0 = 0.75;
  const auto a0 = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g), split);
  const auto a1 = assemble_generator(GenKind::A1, g, zero_potential(g), damp, split);
  Eigen::ComplexEigenSolver<CMat> e1(CMat(a1.A));
  for (int i = 0; i < e1.eigenvalues().size(); ++i)
    EXPECT_NEAR(e1.eigenvalues()[i].real(), -0.75, 1e-8);
  const RVec i0 = sorted_imag(CMat(a0.A)), i1 = sorted_imag(CMat(a1.A));
  EXPECT_LE((i0 - i1).cwiseAbs().maxCoeff(), 1e-8 * i0.cwiseAbs().maxCoeff());
}

TEST(Magop, A3WithoutDampingIsConservative) {
  const Grid g = build_grid(2, {1.0, 1.0}, 10);
  const auto split = split_boundary(g, Point(-0.5, -0.5));
  const auto gen = assemble_generator(GenKind::A3, g, smooth_potential(g), DampingConfig::none(g), split);
  Eigen::ComplexEigenSolver<CMat> es(CMat(gen.A));
  const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  EXPECT_LE(es.eigenvalues().real().cwiseAbs().maxCoeff(), 1e-10 * scale);
}

TEST(Magop, BoundaryGeneratorsNeedGamma0) {
  const Grid g = build_grid(1, {1.0}, 16);
  BoundarySplit empty = split_boundary(g, -1.0);
  empty.gamma1.insert(empty.gamma1.end(), empty.gamma0.begin(), empty.gamma0.end());
  empty.gamma0.clear();
  for (GenKind k : {GenKind::A2, GenKind::A3})
    EXPECT_THROW(assemble_generator(k, g, zero_potential(g), DampingConfig::none(g), empty),
                 InvalidArgument);
}

TEST(Magop, GaugeConjugationMatchesShiftedAssembly) {
  const Grid g = build_grid(2, {1.0, 1.0}, 16);
  const auto a = smooth_potential(g);
  const RVec psi = g.sample_real([](const Point& x) { return std::sin(3 * x[0]) * x[1] + x[0] * x[0]; });
  const auto split = split_boundary(g, Point(-1, -1));
  const auto A = assemble_generator(GenKind::A0, g, a, DampingConfig::none(g), split);
  const auto B = assemble_generator(GenKind::A0, g, gauge_shift(g, a, psi), DampingConfig::none(g), split);
  const auto C = gauge_transform(A, psi);
  EXPECT_LE(linalg::max_abs(SpMat(C.A - B.A)), 1e-12 * linalg::max_abs(B.A));
  const auto same = gauge_transform(A, RVec::Constant(g.num_nodes(), 0.9));
  EXPECT_LE(linalg::max_abs(SpMat(same.A - A.A)), 1e-13 * linalg::max_abs(A.A));
}

TEST(Magop, OneDimensionalReduction) {
  const Grid g = build_grid(1, {1.0}, 50);
  const auto a = make_potential(g, [](const Point& x) { return Eigen::Vector2d(2 + std::cos(5 * x[0]), 0); });
  const auto split = split_boundary(g, -1.0);
  const auto A = assemble_generator(GenKind::A0, g, a, DampingConfig::none(g), split);
  const auto F = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g), split);
  const auto T = gauge_transform(A, removing_gauge_1d(g, a));
  EXPECT_LE(linalg::max_abs(SpMat(T.A - F.A)), 1e-12 * linalg::max_abs(F.A));
}

TEST(Magop, GreenIdentity) {
  // a = 0, f = g = sin(pi x)
  std::vector<double> res;
  for (int n : {33, 65, 129}) {
    const Grid g = build_grid(1, {1.0}, n);
    const auto f = g.sample([](const Point& x) { return std::sin(kPi * x[0]); });
    res.push_back(check_green_identity(g, zero_potential(g), f, f));
  }
  EXPECT_LT(res[2], 1e-3);
  EXPECT_GT(res[0] / res[1], 3.0);
  const Grid g = build_grid(1, {1.0}, 33);
  EXPECT_EQ(check_green_identity(g, zero_potential(g), StateField::Zero(33), StateField::Ones(33)), 0.0);
}

TEST(Magop, GreenIdentityRefinementRandomSmooth) {
  CounterRng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const double p1 = rng.uniform(0.5, 2), p2 = rng.uniform(0.5, 2), q = rng.uniform(-1, 1);
    auto F = [&](const Point& x) { return std::exp(Complex(q * x[1], p1 * x[0])) * std::cos(p2 * x[1] + x[0]); };
    auto Gf = [&](const Point& x) { return Complex(std::sin(p2 * x[0] + 1), x[1] * x[0]); };
    std::vector<double> r;
    for (int n : {17, 33}) {
      const Grid g = build_grid(2, {1.0, 1.0}, n);
      const auto a = make_potential(g, [&](const Point& x) {
        return Eigen::Vector2d(q * std::sin(x[1]), std::cos(p1 * x[0]));
      });
      r.push_back(check_green_identity(g, a, g.sample(F), g.sample(Gf)));
    }
    EXPECT_GE(r[0] / r[1], 1.8) << trial;
  }
}

TEST(Magop, GreenIdentityMatrixLevel) {
  const Grid g = build_grid(2, {1.0, 1.0}, 20);
  const auto a = smooth_potential(g);
  CounterRng rng(5);
  StateField f(g.num_nodes()), h(g.num_nodes());
  for (int k = 0; k < g.num_nodes(); ++k) {
    f[k] = g.is_boundary(k) ? 0.0 : Complex(rng.normal(), rng.normal());
    h[k] = g.is_boundary(k) ? 0.0 : Complex(rng.normal(), rng.normal());
  }
  EXPECT_LE(check_green_identity_matrix(g, a, f, h), 1e-12);
}

TEST(Magop, Diamagnetic) {
  const Grid g = build_grid(2, {1.0, 1.0}, 41);
  const auto zero = zero_potential(g);
  const auto pos = g.sample([](const Point& x) { return 1.5 + std::sin(x[0]) * x[1]; });
  EXPECT_NEAR(check_diamagnetic(g, zero, pos).min_margin, 0.0, 1e-13);
  // f = e^{i theta} rho with a = -grad theta: |grad_a f| = |grad rho|
  auto theta = [](const Point& x) { return 2 * x[0] * x[0] + x[1]; };
  const auto f = g.sample([&](const Point& x) {
    return std::exp(Complex(0, theta(x))) * (1.2 + x[0] * x[1]);
  });
  const auto a = make_potential(g, [](const Point& x) { return Eigen::Vector2d(-4 * x[0], -1.0); });
  const auto rep = check_diamagnetic(g, a, f);
  EXPECT_LT(std::abs(rep.min_margin), 3e-2);
  // random smooth data: margin >= -C h under refinement
  std::vector<double> m;
  for (int n : {21, 41}) {
    const Grid gg = build_grid(2, {1.0, 1.0}, n);
    const auto aa = smooth_potential(gg);
    const auto ff = gg.sample([](const Point& x) { return Complex(std::cos(3 * x[0]) + 0.2, std::sin(2 * x[1] + x[0])); });
    m.push_back(check_diamagnetic(gg, aa, ff).min_margin);
  }
  EXPECT_GT(m[1], -0.2);
  EXPECT_GE(m[1], m[0] - 1e-12);
}

TEST(Magop, NormEquivalence) {
  const Grid g = build_grid(1, {1.0}, 200);
  const auto u = g.sample([](const Point& x) { return std::sin(kPi * x[0]); });
  const auto r0 = norm_equivalence_bounds(g, zero_potential(g), g.boundary_nodes(), {u});
  EXPECT_NEAR(r0.worst_lower_slack, 0.0, 1e-12);
  EXPECT_NEAR(r0.worst_upper_slack, 0.0, 1e-12);
  const double alpha = 1.5;
  const auto a = make_potential(g, [&](const Point&) { return Eigen::Vector2d(alpha, 0); });
  const auto r = norm_equivalence_bounds(g, a, g.boundary_nodes(), {u});
  EXPECT_FALSE(r.violation);
  // closed form: ||u'||^2 = pi^2/2, ||u||^2 = 1/2, ||u' + i alpha u||^2 = (pi^2 + alpha^2)/2
  const double ratio = std::sqrt((kPi * kPi + alpha * alpha) / (kPi * kPi));
  EXPECT_LE(ratio, r.upper_coefficient);
  EXPECT_GE(ratio, r.lower_coefficient);
  const auto big = make_potential(g, [&](const Point&) { return Eigen::Vector2d(5.0, 0); });
  const auto rb = norm_equivalence_bounds(g, big, g.boundary_nodes(), {u});
  EXPECT_FALSE(rb.smallness_met);
  EXPECT_FALSE(rb.note.empty());
}

TEST(Magop, CoordinateExport) {
  const Grid g = build_grid(1, {1.0}, 6);
  const auto gen = assemble_generator(GenKind::A0, g, zero_potential(g), DampingConfig::none(g),
                                      split_boundary(g, -1.0));
  std::ostringstream os;
  write_coordinates(os, gen.A);
  std::istringstream is(os.str());
  int r, c, nnz;
  is >> r >> c >> nnz;
  EXPECT_EQ(nnz, gen.A.nonZeros());
  std::vector<Triplet> t;
  for (int i = 0; i < nnz; ++i) {
    int ri, ci;
    double re, im;
    is >> ri >> ci >> re >> im;
    t.emplace_back(ri, ci, Complex(re, im));
  }
  SpMat back(r, c);
  back.setFromTriplets(t.begin(), t.end());
  EXPECT_EQ(linalg::max_abs(SpMat(back - gen.A)), 0.0);
}
