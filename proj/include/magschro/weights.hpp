#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "magschro/linalg.hpp"
#include "magschro/magop.hpp"
#include "magschro/mesh.hpp"

namespace magschro {

/// Spatial base function psi with first and second derivatives.
struct PsiFunction {
  std::string name = "custom";
  int dim = 2;
  std::function<double(const Point&)> value;
  std::function<Eigen::Vector2d(const Point&)> grad;
  std::function<Eigen::Matrix2d(const Point&)> hess;
  std::function<bool(const Point&)> transition;  // cutoff ramp region, if any
  bool analytic = true;
  double shift = 0.0;  // already included in value
};

namespace detail {

inline Point clip(const Point& x, int dim) {
  Point y = x;
  if (dim == 1) y[1] = 0;
  return y;
}

// quintic ramp and its first two derivatives on [0, 1]
inline std::array<double, 3> ramp5(double s) {
  if (s <= 0) return {0, 0, 0};
  if (s >= 1) return {1, 0, 0};
  return {s * s * s * (10 + s * (-15 + 6 * s)), 30 * s * s * (1 - s) * (1 - s), 60 * s * (1 - s) * (1 - 2 * s)};
}

}  // namespace detail

/// psi = 1 + |x - x0|^2.
inline PsiFunction psi_quadratic(const Point& x0, int dim) {
  const Point c = detail::clip(x0, dim);
  PsiFunction p;
  p.name = "quadratic";
  p.dim = dim;
  p.value = [c, dim](const Point& x) { return 1.0 + (detail::clip(x, dim) - c).squaredNorm(); };
  p.grad = [c, dim](const Point& x) { return Eigen::Vector2d(2.0 * (detail::clip(x, dim) - c)); };
  p.hess = [dim](const Point&) {
    Eigen::Matrix2d H = 2.0 * Eigen::Matrix2d::Identity();
    if (dim == 1) H(1, 1) = 0;
    return H;
  };
  return p;
}

/// psi = c . x + c0.
inline PsiFunction psi_linear(const Eigen::Vector2d& c, double c0, int dim) {
  const Eigen::Vector2d k = detail::clip(c, dim);
  PsiFunction p;
  p.name = "linear";
  p.dim = dim;
  p.value = [k, c0](const Point& x) { return k.dot(x) + c0; };
  p.grad = [k](const Point&) { return k; };
  p.hess = [](const Point&) { return Eigen::Matrix2d::Zero().eval(); };
  return p;
}

/// Nodal samples with finite-difference derivatives, evaluated at the
/// nearest node.
inline PsiFunction psi_from_samples(const Grid& g, const RVec& values) {
  if (values.size() != g.num_nodes()) throw InvalidArgument("psi_from_samples: size mismatch");
  auto grad = std::make_shared<std::vector<Eigen::Vector2d>>(g.num_nodes(), Eigen::Vector2d::Zero());
  auto hess = std::make_shared<std::vector<Eigen::Matrix2d>>(g.num_nodes(), Eigen::Matrix2d::Zero());
  std::vector<RVec> d(g.dim(), RVec(g.num_nodes()));
  for (int ax = 0; ax < g.dim(); ++ax)
    for (int k = 0; k < g.num_nodes(); ++k) d[ax][k] = fd::d1(g, values, k, ax);
  for (int k = 0; k < g.num_nodes(); ++k)
    for (int i = 0; i < g.dim(); ++i) {
      (*grad)[k][i] = d[i][k];
      for (int j = 0; j < g.dim(); ++j)
        (*hess)[k](i, j) = i == j ? fd::d2(g, values, k, i) : fd::d1(g, d[i], k, j);
    }
  for (int k = 0; k < g.num_nodes(); ++k) (*hess)[k] = 0.5 * ((*hess)[k] + (*hess)[k].transpose()).eval();
  auto vals = std::make_shared<RVec>(values);
  auto nearest = [&g](const Point& x) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int k = 0; k < g.num_nodes(); ++k) {
      const double dd = (g.coord(k) - x).squaredNorm();
      if (dd < bd) bd = dd, best = k;
    }
    return best;
  };
  PsiFunction p;
  p.name = "samples";
  p.dim = g.dim();
  p.analytic = false;
  p.value = [vals, nearest](const Point& x) { return (*vals)[nearest(x)]; };
  p.grad = [grad, nearest](const Point& x) { return (*grad)[nearest(x)]; };
  p.hess = [hess, nearest](const Point& x) { return (*hess)[nearest(x)]; };
  return p;
}

/// Collar widths per outer face (x-, x+, y-, y+), zero when not collared.
struct Collar {
  std::array<double, 4> width{0, 0, 0, 0};
  bool empty() const { return width[0] == 0 && width[1] == 0 && width[2] == 0 && width[3] == 0; }
};

/// Each node of omega is attributed to its nearest outer face; the face's
/// collar reaches half a cell past the farthest attributed node.
inline Collar infer_collar(const Grid& g, const NodeSet& omega) {
  Collar c;
  if (g.hole()) throw InvalidArgument("construct_psi_G: box domains only");
  const auto L = g.extents();
  for (int k : omega) {
    const Point x = g.coord(k);
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int f = 0; f < 2 * g.dim(); ++f) {
      const int ax = f / 2;
      const double d = (f % 2) ? L[ax] - x[ax] : x[ax];
      if (d < bd) bd = d, best = f;
    }
    c.width[best] = std::max(c.width[best], bd + 0.5 * g.h(best / 2));
  }
  return c;
}

/// psi = 1 + chi |x - x0|^2 + C. chi is a product of quintic ramps in the
/// distance to each collared face (0 within a quarter of the collar width,
/// 1 beyond it); C = max(0, 2 max - 3 min + eps) enforces psi > 2/3 max psi.
inline PsiFunction construct_psi_G(const Grid& g, const NodeSet& omega, const Point& x0) {
  const int dim = g.dim();
  const auto L = g.extents();
  const Point c = detail::clip(x0, dim);
  bool inside = true;
  for (int ax = 0; ax < dim; ++ax) inside = inside && c[ax] >= 0 && c[ax] <= L[ax];
  if (inside) throw InvalidArgument("construct_psi_G: x0 must lie outside the closed domain");
  const Collar col = infer_collar(g, omega);
  struct Eval {
    double chi;
    Eigen::Vector2d dchi;
    Eigen::Matrix2d ddchi;
    bool ramp;
  };
  auto chi = [col, L, dim](const Point& x) {
    Eval e{1.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero(), false};
    // chi = prod_f r_f(x_axis(f)); each factor depends on one coordinate
    std::array<std::array<double, 3>, 2> axis_factor{{{1, 0, 0}, {1, 0, 0}}};
    for (int f = 0; f < 2 * dim; ++f) {
      const double w = col.width[f];
      if (w <= 0) continue;
      const int ax = f / 2;
      const double sign = (f % 2) ? -1.0 : 1.0;
      const double d = (f % 2) ? L[ax] - x[ax] : x[ax];
      const double a = 0.25 * w;
      const double s = (d - a) / (w - a);
      const auto r = detail::ramp5(s);
      if (s > 0 && s < 1) e.ramp = true;
      const double ds = sign / (w - a);
      auto& af = axis_factor[ax];
      // product rule within an axis
      af = {af[0] * r[0], af[1] * r[0] + af[0] * r[1] * ds,
            af[2] * r[0] + 2 * af[1] * r[1] * ds + af[0] * r[2] * ds * ds};
    }
    const auto& X = axis_factor[0];
    const auto& Y = axis_factor[1];
    e.chi = X[0] * Y[0];
    e.dchi = Eigen::Vector2d(X[1] * Y[0], X[0] * Y[1]);
    e.ddchi << X[2] * Y[0], X[1] * Y[1], X[1] * Y[1], X[0] * Y[2];
    if (dim == 1) {
      e.dchi[1] = 0;
      e.ddchi(0, 1) = e.ddchi(1, 0) = e.ddchi(1, 1) = 0;
    }
    return e;
  };
  PsiFunction p;
  p.name = "psi_G";
  p.dim = dim;
  p.value = [chi, c, dim](const Point& x) {
    return 1.0 + chi(x).chi * (detail::clip(x, dim) - c).squaredNorm();
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int k = 0; k < g.num_nodes(); ++k) {
    const double v = p.value(g.coord(k));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double C = std::max(0.0, 2 * hi - 3 * lo + 1e-6 * std::max(1.0, hi));
  p.shift = C;
  p.value = [chi, c, dim, C](const Point& x) {
    return 1.0 + C + chi(x).chi * (detail::clip(x, dim) - c).squaredNorm();
  };
  p.grad = [chi, c, dim](const Point& x) {
    const Eval e = chi(x);
    const Eigen::Vector2d r = detail::clip(x, dim) - c;
    return Eigen::Vector2d(e.dchi * r.squaredNorm() + 2 * e.chi * r);
  };
  p.hess = [chi, c, dim](const Point& x) {
    const Eval e = chi(x);
    const Eigen::Vector2d r = detail::clip(x, dim) - c;
    Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    if (dim == 1) I(1, 1) = 0;
    return Eigen::Matrix2d(e.ddchi * r.squaredNorm() + 2 * (e.dchi * r.transpose() + r * e.dchi.transpose()) +
                           2 * e.chi * I);
  };
  p.transition = [chi](const Point& x) { return chi(x).ramp; };
  return p;
}

// ---------------------------------------------------------------------------

/// phi(x, s) = exp(lambda (-beta s^2 + psi(x))) on y = (x, s), or
/// exp(lambda psi) without the s variable.
struct WeightFunction {
  PsiFunction psi;
  double lambda = 1.0;
  double beta = 0.0;
  bool s_extended = false;

  int total_dim() const { return psi.dim + (s_extended ? 1 : 0); }

  struct Local {
    double g, phi;
    RVec grad_g, grad_phi;
    RMat hess_g, hess_phi;
  };

  Local at(const Point& x, double s = 0.0) const {
    const int n = psi.dim, D = total_dim();
    Local l;
    l.grad_g = RVec::Zero(D);
    l.hess_g = RMat::Zero(D, D);
    const Eigen::Vector2d gp = psi.grad(x);
    const Eigen::Matrix2d hp = psi.hess(x);
    for (int i = 0; i < n; ++i) {
      l.grad_g[i] = gp[i];
      for (int j = 0; j < n; ++j) l.hess_g(i, j) = hp(i, j);
    }
    l.g = psi.value(x);
    if (s_extended) {
      l.g -= beta * s * s;
      l.grad_g[n] = -2 * beta * s;
      l.hess_g(n, n) = -2 * beta;
    }
    l.phi = std::exp(lambda * l.g);
    l.grad_phi = lambda * l.phi * l.grad_g;
    l.hess_phi = lambda * l.phi * (l.hess_g + lambda * l.grad_g * l.grad_g.transpose());
    return l;
  }
};

/// Sample points y = (x_k, s_j) of a region.
struct WeightPoint {
  int node;
  Point x;
  double s;
};

inline std::vector<WeightPoint> weight_points(const Grid& g, const NodeSet& region,
                                              const std::vector<double>& s_samples = {0.0}) {
  std::vector<WeightPoint> pts;
  for (int k : region)
    for (double s : s_samples) pts.push_back({k, g.coord(k), s});
  return pts;
}

// ---------------------------------------------------------------------------

struct PseudoconvexityReport {
  double margin = std::numeric_limits<double>::infinity();  // min lambda_min(grad grad^T + Hess)
  double min_grad = std::numeric_limits<double>::infinity();
  bool positive = true;        // psi > 0 on all nodes
  bool boundary_sign = true;   // d_nu psi <= 0 on the boundary
  int transition_nodes = 0;    // region nodes inside the cutoff ramp
  bool analytic = true;
  bool certified = false;
  int worst_node = -1;
};

inline PseudoconvexityReport check_pseudoconvexity(const Grid& g, const PsiFunction& psi, const NodeSet& region) {
  if (region.empty()) throw InvalidArgument("check_pseudoconvexity: empty region");
  PseudoconvexityReport r;
  r.analytic = psi.analytic;
  const int n = psi.dim;
  for (int k : region) {
    const Point x = g.coord(k);
    const Eigen::Vector2d gr = psi.grad(x);
    const Eigen::Matrix2d H = psi.hess(x);
    const RMat B = (gr * gr.transpose() + H).topLeftCorner(n, n);
    const double lam = Eigen::SelfAdjointEigenSolver<RMat>(B).eigenvalues()[0];
    if (lam < r.margin) r.margin = lam, r.worst_node = k;
    r.min_grad = std::min(r.min_grad, gr.head(n).norm());
    if (psi.transition && psi.transition(x)) ++r.transition_nodes;
  }
  for (int k = 0; k < g.num_nodes(); ++k) {
    if (!(psi.value(g.coord(k)) > 0)) r.positive = false;
    if (g.is_boundary(k) && psi.grad(g.coord(k)).dot(g.normal(k)) > 1e-12) r.boundary_sign = false;
  }
  r.certified = r.margin > 0 && r.min_grad > 0 && r.positive && r.boundary_sign;
  return r;
}

struct SubellipticityWitness {
  int node = -1;
  double s = 0.0;
  double tau = 0.0;
  RVec eta;
  double bracket = 0.0;
};

struct SubellipticityReport {
  double min_bracket = std::numeric_limits<double>::infinity();
  double min_margin = std::numeric_limits<double>::infinity();  // bracket / (4 tau^3 lambda^3 phi^3 |grad g|^4)
  double min_grad = std::numeric_limits<double>::infinity();    // |grad phi|
  bool certified = false;
  bool vacuous = false;  // total dimension 1: the characteristic set is empty
  std::vector<int> excluded;
  std::vector<SubellipticityWitness> failing;
};

/// {Im p_phi, Re p_phi} on the characteristic set eta . grad phi = 0,
/// |eta| = tau |grad phi|, in the convention where it equals
/// 4 tau (eta^T H eta + tau^2 grad phi^T H grad phi), H = Hess phi.
inline double poisson_bracket(const WeightFunction::Local& l, const RVec& eta, double tau) {
  return 4 * tau * (eta.dot(l.hess_phi * eta) + tau * tau * l.grad_phi.dot(l.hess_phi * l.grad_phi));
}

inline SubellipticityReport check_subellipticity(const WeightFunction& w, const std::vector<WeightPoint>& pts,
                                                 const std::vector<double>& tau_grid, int samples_per_node = 64,
                                                 std::uint64_t seed = 3) {
  if (tau_grid.empty()) throw InvalidArgument("check_subellipticity: empty tau grid");
  SubellipticityReport r;
  const int D = w.total_dim();
  r.vacuous = D < 2;
  CounterRng rng(seed, 21);
  for (const auto& p : pts) {
    const auto l = w.at(p.x, p.s);
    const double gn = l.grad_phi.norm();
    if (gn < 1e-10) {
      r.excluded.push_back(p.node);
      continue;
    }
    r.min_grad = std::min(r.min_grad, gn);
    if (r.vacuous) continue;
    const RVec e0 = l.grad_phi / gn;
    const double norm_fac = std::pow(w.lambda * l.phi, 3) * std::pow(l.grad_g.norm(), 4);
    for (double tau : tau_grid) {
      for (int q = 0; q < samples_per_node; ++q) {
        RVec v(D);
        for (int i = 0; i < D; ++i) v[i] = rng.normal();
        v -= v.dot(e0) * e0;
        if (v.norm() < 1e-12) continue;
        const RVec eta = tau * gn * v / v.norm();
        const double b = poisson_bracket(l, eta, tau);
        const double m = b / (4 * tau * tau * tau * norm_fac);
        r.min_margin = std::min(r.min_margin, m);
        if (b < r.min_bracket) r.min_bracket = b;
        if (!(b > 0) && r.failing.size() < 16) r.failing.push_back({p.node, p.s, tau, eta, b});
      }
    }
  }
  r.certified = r.failing.empty() && (r.vacuous || std::isfinite(r.min_bracket));
  return r;
}

/// Smallest lambda for which the bracket is positive at every point:
/// sup of -[|grad g|^2 min_e (e^T Hg e) + grad g^T Hg grad g] / |grad g|^4 over
/// unit e orthogonal to grad g.
inline double subellipticity_threshold(const WeightFunction& w, const std::vector<WeightPoint>& pts) {
  WeightFunction w1 = w;
  w1.lambda = 1.0;
  double sup = -std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    const auto l = w1.at(p.x, p.s);
    const double gn = l.grad_g.norm();
    if (gn < 1e-10) continue;
    const int D = l.grad_g.size();
    if (D < 2) continue;
    // orthonormal complement of grad g
    Eigen::HouseholderQR<RMat> qr(RMat(l.grad_g));
    const RMat Q = qr.householderQ();
    const RMat E = Q.rightCols(D - 1);
    const double emin = Eigen::SelfAdjointEigenSolver<RMat>(E.transpose() * l.hess_g * E).eigenvalues()[0];
    const double v = -(gn * gn * emin + l.grad_g.dot(l.hess_g * l.grad_g)) / std::pow(gn, 4);
    sup = std::max(sup, v);
  }
  return sup;
}

// ---------------------------------------------------------------------------

struct SpacetimeWeights {
  std::vector<double> t;      // interior time nodes
  std::vector<RVec> theta;    // e^{lambda psi} / (t (T - t))
  std::vector<RVec> phi;      // (e^{2 lambda |psi|_inf} - e^{lambda psi}) / (t (T - t))
  double psi_sup = 0.0;
};

inline SpacetimeWeights spacetime_weights(const Grid& g, const PsiFunction& psi, double lambda, double T, int nt) {
  if (!(T > 0) || nt < 2 || !(lambda > 0)) throw InvalidArgument("spacetime_weights: need T > 0, nt >= 2, lambda > 0");
  SpacetimeWeights w;
  RVec ps(g.num_nodes());
  for (int k = 0; k < g.num_nodes(); ++k) ps[k] = psi.value(g.coord(k));
  w.psi_sup = ps.cwiseAbs().maxCoeff();
  const RVec e = (lambda * ps).array().exp();
  const double top = std::exp(2 * lambda * w.psi_sup);
  for (int k = 1; k < nt; ++k) {
    const double t = T * k / nt;
    const double den = t * (T - t);
    w.t.push_back(t);
    w.theta.push_back(e / den);
    w.phi.push_back((top - e.array()) / den);
  }
  return w;
}

// ---------------------------------------------------------------------------

/// Polynomial bumps (1 - |y - c|^2 / r^2)^3 with random complex amplitude,
/// supported on interior nodes of `region`.
inline std::vector<StateField> random_bumps(const Grid& g, const NodeSet& region, int count, std::uint64_t seed) {
  if (region.empty()) throw InvalidArgument("random_bumps: empty region");
  std::vector<char> in(g.num_nodes(), 0);
  for (int k : region)
    if (!g.is_boundary(k)) in[k] = 1;
  const double hmax = std::max(g.h(0), g.dim() > 1 ? g.h(1) : 0.0);
  const double rmax = 0.3 * std::min(g.extents()[0], g.dim() > 1 ? g.extents()[1] : g.extents()[0]);
  if (rmax < 3 * hmax) throw InvalidArgument("random_bumps: grid too coarse for bumps");
  CounterRng rng(seed, 31);
  std::vector<StateField> out;
  for (int tries = 0; static_cast<int>(out.size()) < count; ++tries) {
    if (tries > 1000 * count) throw InvalidArgument("random_bumps: region too small for bumps");
    const int c = region[static_cast<std::size_t>(rng.uniform() * region.size())];
    double r = 3 * hmax + rng.uniform() * (rmax - 3 * hmax);
    auto fits = [&](double rr) {
      for (int k = 0; k < g.num_nodes(); ++k)
        if ((g.coord(k) - g.coord(c)).norm() < rr + 1e-12 && !in[k]) return false;
      return true;
    };
    while (r >= 3 * hmax && !fits(r)) r *= 0.8;
    if (r < 3 * hmax) continue;
    const Complex amp(rng.normal(), rng.normal());
    StateField f = StateField::Zero(g.num_nodes());
    for (int k = 0; k < g.num_nodes(); ++k) {
      const double q = (g.coord(k) - g.coord(c)).squaredNorm() / (r * r);
      if (q < 1) f[k] = amp * std::pow(1 - q, 3);
    }
    out.push_back(f);
  }
  return out;
}

struct CarlemanTrace {
  std::vector<double> tau;
  std::vector<double> C;       // max ratio over test functions
  std::vector<int> argmax;
  double slope = 0.0;          // d log C / d log tau
  double slope_stderr = 0.0;
  bool bounded = false;        // slope <= 2 stderr
  int zero_tests = 0;          // f = 0 samples skipped
};

namespace detail {

inline void fit_trend(CarlemanTrace& tr) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < tr.tau.size(); ++i)
    if (tr.C[i] > 0 && std::isfinite(tr.C[i])) {
      x.push_back(std::log(tr.tau[i]));
      y.push_back(std::log(tr.C[i]));
    }
  if (x.size() >= 3) {
    const auto f = linalg::fit_line(x, y);
    tr.slope = f.slope;
    tr.slope_stderr = f.slope_stderr;
    tr.bounded = f.slope <= 2.0 * f.slope_stderr;
  }
}

inline void check_window(const Grid& g, const std::vector<double>& taus) {
  const double hmax = std::max(g.h(0), g.dim() > 1 ? g.h(1) : 0.0);
  if (taus.empty()) throw InvalidArgument("carleman_probe: empty parameter grid");
  for (double t : taus)
    if (!(t > 0) || t * hmax > 0.5 + 1e-12)
      throw InvalidArgument("carleman_probe: parameter outside the discrete window (tau h <= 0.5)");
}

}  // namespace detail

/// Ratio (tau^3 ||e^{tau phi} f||^2 + tau ||e^{tau phi} grad f||^2) / ||e^{tau phi} P f||^2
/// with P = Delta_a, maximized over test functions. With an s-extended
/// weight the grid is the cylinder: axis 0 is x, axis 1 is s + s_offset.
inline CarlemanTrace carleman_probe(const Grid& X, const MagneticPotential& a, const WeightFunction& w,
                                    const std::vector<StateField>& tests, const std::vector<double>& taus,
                                    double s_offset = 0.0) {
  detail::check_window(X, taus);
  if (w.s_extended && !(X.dim() == 2 && w.psi.dim == 1))
    throw InvalidArgument("carleman_probe: the s variable needs a 1D psi on a 2D cylinder grid");
  const int N = X.num_nodes();
  RVec phi(N);
  for (int k = 0; k < N; ++k) {
    const Point c = X.coord(k);
    phi[k] = w.s_extended ? w.at(Point(c[0], 0), c[1] - s_offset).phi : w.at(c).phi;
  }
  const RVec& vw = X.volume_weights();
  CarlemanTrace tr;
  tr.tau = taus;
  std::vector<StateField> grads_sq;
  std::vector<StateField> Pf;
  std::vector<RVec> g2(tests.size());
  std::vector<char> zero(tests.size(), 0);
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& f = tests[i];
    if (f.size() != N) throw InvalidArgument("carleman_probe: test function size mismatch");
    if (f.cwiseAbs().maxCoeff() == 0) {
      zero[i] = 1;
      ++tr.zero_tests;
    }
    const auto gr = fd::gradient(X, f);
    g2[i] = RVec::Zero(N);
    for (const auto& c : gr) g2[i] += c.cwiseAbs2();
    Pf.push_back(apply_magnetic_laplacian(X, a, f));
  }
  for (double tau : taus) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t i = 0; i < tests.size(); ++i) {
      if (zero[i]) continue;
      const auto& f = tests[i];
      // normalize the weight by its largest value on the support
      double pmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < N; ++k)
        if (f[k] != 0.0 || Pf[i][k] != 0.0) pmax = std::max(pmax, phi[k]);
      double l0 = 0, l1 = 0, r0 = 0;
      for (int k = 0; k < N; ++k) {
        const double e2 = std::exp(2 * tau * (phi[k] - pmax)) * vw[k];
        l0 += e2 * std::norm(f[k]);
        l1 += e2 * g2[i][k];
        r0 += e2 * std::norm(Pf[i][k]);
      }
      if (!(r0 > 0)) continue;
      const double ratio = (tau * tau * tau * l0 + tau * l1) / r0;
      if (ratio > best) best = ratio, arg = static_cast<int>(i);
    }
    tr.C.push_back(best);
    tr.argmax.push_back(arg);
  }
  detail::fit_trend(tr);
  return tr;
}

/// Space-time form: ratio of
///   ||sqrt(lambda s theta) e^{-s phi} grad_a w|| + ||lambda^2 s theta sqrt(s theta) e^{-s phi} w||
/// over Q to ||e^{-s phi}(i d_t + Delta_a) w|| plus the same two norms over
/// Q_omega. Tests are node fields on the interior time nodes of `sw`.
inline CarlemanTrace carleman_probe_spacetime(const Grid& g, const MagneticPotential& a, const SpacetimeWeights& sw,
                                              double lambda, const NodeSet& omega,
                                              const std::vector<std::vector<StateField>>& tests,
                                              const std::vector<double>& s_grid) {
  detail::check_window(g, s_grid);
  const std::size_t nt = sw.t.size();
  if (nt < 3) throw InvalidArgument("carleman_probe_spacetime: need at least three interior time nodes");
  const double dt = sw.t[1] - sw.t[0];
  const int N = g.num_nodes();
  std::vector<char> in_w(N, 0);
  for (int k : omega) in_w[k] = 1;
  const RVec& vw = g.volume_weights();

  // per test and time: |w|^2, |grad_a w|^2, |P w|^2
  struct Fields {
    std::vector<RVec> w2, g2, p2;
    double phi_min = std::numeric_limits<double>::infinity();
    bool zero = true;
  };
  std::vector<Fields> F(tests.size());
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& wv = tests[i];
    if (wv.size() != nt) throw InvalidArgument("carleman_probe_spacetime: time length mismatch");
    for (std::size_t n = 0; n < nt; ++n) {
      const StateField wt_d = n == 0        ? StateField((wv[1] - wv[0]) / dt)
                              : n + 1 == nt ? StateField((wv[n] - wv[n - 1]) / dt)
                                            : StateField((wv[n + 1] - wv[n - 1]) / (2 * dt));
      const StateField P = kI * wt_d + apply_magnetic_laplacian(g, a, wv[n]);
      RVec g2 = RVec::Zero(N);
      for (const auto& c : magnetic_gradient(g, a, wv[n])) g2 += c.cwiseAbs2();
      F[i].w2.push_back(wv[n].cwiseAbs2());
      F[i].g2.push_back(g2);
      F[i].p2.push_back(P.cwiseAbs2());
      for (int k = 0; k < N; ++k) {
        if (wv[n][k] != 0.0) F[i].zero = false;
        if (wv[n][k] != 0.0 || P[k] != 0.0 || g2[k] != 0.0) F[i].phi_min = std::min(F[i].phi_min, sw.phi[n][k]);
      }
    }
  }

  CarlemanTrace tr;
  tr.tau = s_grid;
  for (const auto& f : F) tr.zero_tests += f.zero;
  for (double s : s_grid) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const Fields& f = F[i];
      if (f.zero) continue;
      double grad_q = 0, zero_q = 0, p_q = 0, grad_w = 0, zero_w = 0;
      for (std::size_t n = 0; n < nt; ++n) {
        const double wt = (n == 0 || n + 1 == nt) ? 0.5 * dt : dt;
        for (int k = 0; k < N; ++k) {
          if (f.w2[n][k] == 0.0 && f.g2[n][k] == 0.0 && f.p2[n][k] == 0.0) continue;
          const double th = s * sw.theta[n][k];
          const double e2 = std::exp(-2 * s * (sw.phi[n][k] - f.phi_min)) * vw[k] * wt;
          const double a1 = lambda * th * f.g2[n][k] * e2;
          const double a0 = std::pow(lambda, 4) * th * th * th * f.w2[n][k] * e2;
          grad_q += a1;
          zero_q += a0;
          p_q += f.p2[n][k] * e2;
          if (in_w[k]) grad_w += a1, zero_w += a0;
        }
      }
      const double den = std::sqrt(p_q) + std::sqrt(grad_w) + std::sqrt(zero_w);
      if (!(den > 0)) continue;
      const double ratio = (std::sqrt(grad_q) + std::sqrt(zero_q)) / den;
      if (ratio > best) best = ratio, arg = static_cast<int>(i);
    }
    tr.C.push_back(best);
    tr.argmax.push_back(arg);
  }
  detail::fit_trend(tr);
  return tr;
}

// ---------------------------------------------------------------------------

inline nlohmann::json certification_json(const PseudoconvexityReport& pc, const SubellipticityReport& se) {
  nlohmann::json wit = nlohmann::json::array();
  for (const auto& w : se.failing)
    wit.push_back({{"node", w.node}, {"s", w.s}, {"tau", w.tau},
                   {"eta", std::vector<double>(w.eta.data(), w.eta.data() + w.eta.size())},
                   {"bracket", w.bracket}});
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"min_grad", num(se.min_grad)},
          {"subellipticity_min_bracket", num(se.min_bracket)},
          {"subellipticity_min_margin", num(se.min_margin)},
          {"pseudoconvexity_margin", num(pc.margin)},
          {"pseudoconvexity_certified", pc.certified},
          {"subellipticity_certified", se.certified},
          {"transition_nodes", pc.transition_nodes},
          {"excluded_nodes", se.excluded},
          {"failing_witnesses", wit}};
}

}  // namespace magschro
