#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "magschro/linalg.hpp"
#include "magschro/mesh.hpp"

namespace magschro {

enum class Scheme { LinkPhase, Expansion };
enum class GenKind { A0, A1, A2, A3, Laplacian, Gradient, Conormal };

inline std::string to_string(Scheme s) {
  return s == Scheme::LinkPhase ? "link-phase" : "expansion";
}

inline std::string to_string(GenKind k) {
  switch (k) {
    case GenKind::A0: return "A0";
    case GenKind::A1: return "A1";
    case GenKind::A2: return "A2";
    case GenKind::A3: return "A3";
    case GenKind::Laplacian: return "laplacian";
    case GenKind::Gradient: return "gradient";
    case GenKind::Conormal: return "conormal";
  }
  return "?";
}

inline GenKind parse_generator_kind(const std::string& s) {
  for (GenKind k : {GenKind::A0, GenKind::A1, GenKind::A2, GenKind::A3, GenKind::Laplacian,
                    GenKind::Gradient, GenKind::Conormal})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown generator kind '" + s + "'");
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "link-phase") return Scheme::LinkPhase;
  if (s == "expansion") return Scheme::Expansion;
  throw InvalidArgument("unknown scheme '" + s + "'");
}

// ---------------------------------------------------------------------------
// Finite differences shared by every pointwise operator in the library.

namespace fd {

/// First derivative along `axis`: centered where both neighbours exist,
/// one-sided second order (-3u0 + 4u1 - u2) / 2h otherwise.
template <class V>
typename V::Scalar d1(const Grid& g, const V& u, int k, int axis) {
  const int m = g.neighbor(k, axis, -1), p = g.neighbor(k, axis, +1);
  const double h = g.h(axis);
  if (m >= 0 && p >= 0) return (u[p] - u[m]) / (2.0 * h);
  const int dir = p >= 0 ? +1 : -1;
  const int n1 = p >= 0 ? p : m;
  if (n1 < 0) return typename V::Scalar(0);
  const int n2 = g.neighbor(n1, axis, dir);
  if (n2 < 0) return double(dir) * (u[n1] - u[k]) / h;
  return double(dir) * (-3.0 * u[k] + 4.0 * u[n1] - u[n2]) / (2.0 * h);
}

/// Second derivative along `axis`; one-sided (2u0 - 5u1 + 4u2 - u3) / h^2
/// at the ends of a grid line.
template <class V>
typename V::Scalar d2(const Grid& g, const V& u, int k, int axis) {
  const int m = g.neighbor(k, axis, -1), p = g.neighbor(k, axis, +1);
  const double h = g.h(axis);
  if (m >= 0 && p >= 0) return (u[p] - 2.0 * u[k] + u[m]) / (h * h);
  const int dir = p >= 0 ? +1 : -1;
  const int n1 = p >= 0 ? p : m;
  const int n2 = n1 >= 0 ? g.neighbor(n1, axis, dir) : -1;
  const int n3 = n2 >= 0 ? g.neighbor(n2, axis, dir) : -1;
  if (n3 < 0) return typename V::Scalar(0);
  return (2.0 * u[k] - 5.0 * u[n1] + 4.0 * u[n2] - u[n3]) / (h * h);
}

/// One-sided outward normal derivative at a boundary node for an
/// axis-aligned normal.
template <class V>
typename V::Scalar dnormal(const Grid& g, const V& u, int k, const Point& nu) {
  const int axis = std::abs(nu[0]) > 0.5 ? 0 : 1;
  const int inward = nu[axis] > 0 ? -1 : +1;
  const int n1 = g.neighbor(k, axis, inward);
  const int n2 = n1 >= 0 ? g.neighbor(n1, axis, inward) : -1;
  if (n2 < 0) throw InvalidArgument("dnormal: boundary stencil leaves the grid");
  return -(-3.0 * u[k] + 4.0 * u[n1] - u[n2]) / (2.0 * g.h(axis));
}

template <class V>
std::vector<V> gradient(const Grid& g, const V& u) {
  std::vector<V> out(g.dim(), V(u.size()));
  for (int ax = 0; ax < g.dim(); ++ax)
    for (int k = 0; k < g.num_nodes(); ++k) out[ax][k] = d1(g, u, k, ax);
  return out;
}

}  // namespace fd

// ---------------------------------------------------------------------------

/// Real vector potential sampled on the nodes, plus the per-edge values used
/// by the link phases.
struct MagneticPotential {
  RMat a;                    // num_nodes x 2; column 1 is zero in 1D
  RVec div;                  // centered-difference divergence
  std::vector<double> edge;  // component along the edge, one per grid edge
  double sup_norm = 0.0;
  bool vanish_on_gamma0 = false;

  int num_nodes() const { return static_cast<int>(a.rows()); }
  Eigen::Vector2d at(int k) const { return a.row(k).transpose(); }

  /// a . nu on every boundary node (zero elsewhere).
  RVec normal_component(const Grid& g) const {
    RVec v = RVec::Zero(g.num_nodes());
    for (int k : g.boundary_nodes()) v[k] = at(k).dot(g.normal(k));
    return v;
  }

  /// Phases h_e * a_e of the edge factors U_e = exp(i h_e a_e).
  std::vector<double> link_angles(const Grid& g) const {
    std::vector<double> th(edge.size());
    for (std::size_t e = 0; e < edge.size(); ++e) th[e] = g.edges()[e].length * edge[e];
    return th;
  }
};

namespace detail {

inline void refresh_potential(const Grid& g, MagneticPotential& p, bool recompute_edges) {
  const int N = g.num_nodes();
  p.div = RVec::Zero(N);
  for (int ax = 0; ax < g.dim(); ++ax) {
    const RVec col = p.a.col(ax);
    for (int k = 0; k < N; ++k) p.div[k] += fd::d1(g, col, k, ax);
  }
  if (recompute_edges) {
    p.edge.resize(g.edges().size());
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
      const Edge& ed = g.edges()[e];
      p.edge[e] = 0.5 * (p.a(ed.p, ed.axis) + p.a(ed.q, ed.axis));
    }
  }
  p.sup_norm = 0.0;
  for (int k = 0; k < N; ++k) p.sup_norm = std::max(p.sup_norm, p.a.row(k).norm());
}

}  // namespace detail

inline MagneticPotential make_potential(const Grid& g, const RMat& samples) {
  if (samples.rows() != g.num_nodes() || samples.cols() < g.dim())
    throw InvalidArgument("make_potential: samples do not match the grid");
  MagneticPotential p;
  p.a = RMat::Zero(g.num_nodes(), 2);
  p.a.leftCols(g.dim()) = samples.leftCols(g.dim());
  detail::refresh_potential(g, p, true);
  return p;
}

/// Sample a potential from a function Point -> Vector2d.
template <class F>
MagneticPotential make_potential(const Grid& g, F f) {
  RMat s(g.num_nodes(), 2);
  for (int k = 0; k < g.num_nodes(); ++k) {
    const Eigen::Vector2d v = f(g.coord(k));
    s(k, 0) = v[0];
    s(k, 1) = g.dim() == 2 ? v[1] : 0.0;
  }
  return make_potential(g, s);
}

inline MagneticPotential zero_potential(const Grid& g) {
  return make_potential(g, RMat(RMat::Zero(g.num_nodes(), 2)));
}

/// Mark the potential as vanishing on Gamma_0 after checking that it does.
inline void require_vanishing_on(const Grid& g, MagneticPotential& p, const NodeSet& gamma0,
                                 double tol = 0.0) {
  for (int k : gamma0)
    if (p.at(k).norm() > tol || std::abs(p.at(k).dot(g.normal(k))) > tol)
      throw InvalidArgument("potential does not vanish on Gamma_0 at node " +
                            std::to_string(k));
  p.vanish_on_gamma0 = true;
}

/// Potential a + grad(psi): node samples get the centered gradient, edge
/// values get the exact edge difference (psi_q - psi_p) / h so that the link
/// phases shift by psi_q - psi_p.
inline MagneticPotential gauge_shift(const Grid& g, const MagneticPotential& p,
                                     const RVec& psi) {
  if (psi.size() != g.num_nodes()) throw InvalidArgument("gauge_shift: size mismatch");
  MagneticPotential q = p;
  const auto grad = fd::gradient(g, psi);
  for (int ax = 0; ax < g.dim(); ++ax) q.a.col(ax) += grad[ax];
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const Edge& ed = g.edges()[e];
    q.edge[e] += (psi[ed.q] - psi[ed.p]) / ed.length;
  }
  q.vanish_on_gamma0 = false;
  detail::refresh_potential(g, q, false);
  return q;
}

/// 1D gauge that removes the potential: psi_k = -sum of h * a_e over the
/// edges left of node k.
inline RVec removing_gauge_1d(const Grid& g, const MagneticPotential& p) {
  if (g.dim() != 1) throw InvalidArgument("removing_gauge_1d: 1D grids only");
  RVec psi = RVec::Zero(g.num_nodes());
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const Edge& ed = g.edges()[e];
    psi[ed.q] = psi[ed.p] - ed.length * p.edge[e];
  }
  return psi;
}

// ---------------------------------------------------------------------------
// Pointwise magnetic operators.

inline std::vector<StateField> magnetic_gradient(const Grid& g, const MagneticPotential& a,
                                                 const StateField& u) {
  auto grad = fd::gradient(g, u);
  for (int ax = 0; ax < g.dim(); ++ax)
    for (int k = 0; k < g.num_nodes(); ++k) grad[ax][k] += kI * a.a(k, ax) * u[k];
  return grad;
}

/// d_nu u + i (a . nu) u at `node` for the given axis-aligned normal.
inline Complex conormal_at(const Grid& g, const MagneticPotential& a, const StateField& u,
                           int node, const Point& nu) {
  return fd::dnormal(g, u, node, nu) + kI * a.at(node).dot(nu) * u[node];
}

inline CVec conormal_derivative(const Grid& g, const MagneticPotential& a,
                                const StateField& u, const NodeSet& where) {
  CVec out(where.size());
  for (std::size_t i = 0; i < where.size(); ++i) {
    const int k = where[i];
    if (!g.is_boundary(k))
      throw InvalidArgument("conormal_derivative: node " + std::to_string(k) +
                            " is not on the boundary");
    out[i] = conormal_at(g, a, u, k, g.normal(k));
  }
  return out;
}

/// Delta u + 2i a.grad u + i div(a) u - |a|^2 u evaluated node by node
/// (one-sided stencils on the boundary).
inline StateField apply_magnetic_laplacian(const Grid& g, const MagneticPotential& a,
                                           const StateField& u) {
  StateField out(g.num_nodes());
  for (int k = 0; k < g.num_nodes(); ++k) {
    Complex s = (kI * a.div[k] - a.at(k).squaredNorm()) * u[k];
    for (int ax = 0; ax < g.dim(); ++ax)
      s += fd::d2(g, u, k, ax) + 2.0 * kI * a.a(k, ax) * fd::d1(g, u, k, ax);
    out[k] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Interior damping c (with support omega, floor c0) and boundary damping d
/// on Gamma_0 (support gamma0_support, floor d0).
struct DampingConfig {
  RVec c;
  NodeSet omega;
  double c0 = 0.0;
  RVec d;
  NodeSet gamma0_support;
  double d0 = 0.0;

  static DampingConfig none(const Grid& g) {
    DampingConfig dc;
    dc.c = RVec::Zero(g.num_nodes());
    dc.d = RVec::Zero(g.num_nodes());
    return dc;
  }

  /// Checks c >= 0, c >= c0 on omega, d >= 0 on Gamma_0, d >= d0 on gamma0.
  void validate(const Grid& g, const NodeSet& gamma0) const {
    if (c.size() != g.num_nodes() || d.size() != g.num_nodes())
      throw InvalidArgument("damping: samples do not match the grid");
    if (c0 < 0 || d0 < 0) throw InvalidArgument("damping: negative floor");
    for (int k = 0; k < g.num_nodes(); ++k)
      if (c[k] < 0) throw InvalidArgument("damping: c < 0 at node " + std::to_string(k));
    for (int k : omega)
      if (c[k] < c0) throw InvalidArgument("damping: c below c0 on omega");
    for (int k : gamma0)
      if (d[k] < 0) throw InvalidArgument("damping: d < 0 on Gamma_0");
    for (int k : gamma0_support)
      if (d[k] < d0) throw InvalidArgument("damping: d below d0 on gamma_0");
  }
};

/// Sparse generator on a set of unknowns, with the inner product it is
/// measured in and the pieces needed for energy bookkeeping.
struct GeneratorMatrix {
  GenKind kind = GenKind::A0;
  Scheme scheme = Scheme::LinkPhase;
  SpMat A;
  SpMat G;         // M for A0/A1/A3/laplacian, stiffness S for A2
  DofMap dofs;
  SpMat K;         // magnetic stiffness on the unknowns
  RVec mass;       // lumped mass on the unknowns
  RVec c;          // interior damping on the unknowns
  RVec boundary;   // surface weight * d on the unknowns (Gamma_0 only)
  SpMat Z;         // A2 only: u -> Delta_a u with the boundary condition built in

  int size() const { return static_cast<int>(A.rows()); }
  CVec apply(const CVec& u) const { return A * u; }

  /// 1/2 u^H G u.
  double energy(const CVec& u) const { return 0.5 * std::real(u.dot(G * u)); }

  /// D(u) with d/dt energy = -D(u) along the flow.
  double dissipation(const CVec& u) const {
    switch (kind) {
      case GenKind::A1: return (mass.cwiseProduct(c)).dot(u.cwiseAbs2());
      case GenKind::A3: return boundary.dot(u.cwiseAbs2());
      case GenKind::A2: {
        const CVec z = Z * u;
        return boundary.dot(z.cwiseAbs2());
      }
      default: return 0.0;
    }
  }

  /// 1/2 u^H M u and 1/2 ||grad_a u||^2 = 1/2 u^H K u.
  double half_mass_norm2(const CVec& u) const {
    return 0.5 * mass.dot(u.cwiseAbs2());
  }
  double half_stiffness_norm2(const CVec& u) const {
    return 0.5 * std::real(u.dot(K * u));
  }

  bool dissipative() const { return kind == GenKind::A1 || kind == GenKind::A2 || kind == GenKind::A3; }
};

namespace detail {

inline void check_sampling(const Grid& g, const MagneticPotential& a) {
  if (a.num_nodes() != g.num_nodes() || a.edge.size() != g.edges().size())
    throw InvalidArgument("potential is not sampled on this grid");
}

/// Expansion stencil of Delta_a on the unknowns of `dofs` (every boundary
/// node must be eliminated).
inline SpMat expansion_laplacian(const Grid& g, const MagneticPotential& a,
                                 const DofMap& dofs) {
  for (int k : g.boundary_nodes())
    if (dofs.node_to_dof[k] >= 0)
      throw InvalidArgument("expansion scheme needs Dirichlet data on the whole boundary");
  std::vector<Triplet> t;
  for (int r = 0; r < dofs.size(); ++r) {
    const int k = dofs.dof_to_node[r];
    Complex diag = kI * a.div[k] - a.at(k).squaredNorm();
    for (int ax = 0; ax < g.dim(); ++ax) {
      const double h = g.h(ax);
      diag += -2.0 / (h * h);
      for (int dir : {-1, 1}) {
        const int nb = g.neighbor(k, ax, dir);
        const int c = nb >= 0 ? dofs.node_to_dof[nb] : -1;
        if (c < 0) continue;
        t.emplace_back(r, c, 1.0 / (h * h) + double(dir) * kI * a.a(k, ax) / h);
      }
    }
    t.emplace_back(r, r, diag);
  }
  SpMat L(dofs.size(), dofs.size());
  L.setFromTriplets(t.begin(), t.end());
  return L;
}

inline SpMat inv_mass_times(const RVec& mass, const SpMat& B) {
  return linalg::diag_sparse(RVec(mass.cwiseInverse())) * B;
}

}  // namespace detail

/// Delta_a on the unknowns left after eliminating `dirichlet` (default: the
/// whole boundary). Link-phase: -M^{-1} K with edge phases. Expansion: the
/// centered stencil of Delta + 2i a.grad + i div a - |a|^2.
inline GeneratorMatrix assemble_magnetic_laplacian(const Grid& g, const MagneticPotential& a,
                                                   Scheme scheme,
                                                   std::optional<NodeSet> dirichlet = {}) {
  detail::check_sampling(g, a);
  GeneratorMatrix gm;
  gm.kind = GenKind::Laplacian;
  gm.scheme = scheme;
  gm.dofs = DofMap::excluding(g, dirichlet ? *dirichlet : g.boundary_nodes());
  gm.mass = gm.dofs.restrict(g.volume_weights());
  gm.K = stiffness_matrix(g, gm.dofs, a.link_angles(g));
  gm.G = linalg::diag_sparse(gm.mass);
  gm.c = RVec::Zero(gm.dofs.size());
  gm.boundary = RVec::Zero(gm.dofs.size());
  if (scheme == Scheme::LinkPhase)
    gm.A = -detail::inv_mass_times(gm.mass, gm.K);
  else
    gm.A = detail::expansion_laplacian(g, a, gm.dofs);
  return gm;
}

/// A0 = i Delta_a (Dirichlet), A1 = A0 - c, A3 (Robin d on Gamma_0,
/// Dirichlet on Gamma_1), A2 (d Delta_a coupling on Gamma_0, measured in the
/// stiffness inner product).
inline GeneratorMatrix assemble_generator(GenKind kind, const Grid& g,
                                          const MagneticPotential& a,
                                          const DampingConfig& damping,
                                          const BoundarySplit& split,
                                          Scheme scheme = Scheme::LinkPhase) {
  detail::check_sampling(g, a);
  if (kind != GenKind::A0 && kind != GenKind::A1 && kind != GenKind::A2 &&
      kind != GenKind::A3)
    throw InvalidArgument("assemble_generator: kind must be A0..A3");
  const bool boundary_damped = kind == GenKind::A2 || kind == GenKind::A3;
  if (boundary_damped && split.gamma0.empty())
    throw InvalidArgument("boundary_split: Gamma_0 is empty");
  if (boundary_damped && scheme == Scheme::Expansion)
    throw InvalidArgument("assemble_generator: expansion scheme supports A0/A1 only");
  damping.validate(g, split.gamma0);

  GeneratorMatrix gm;
  gm.kind = kind;
  gm.scheme = scheme;
  gm.dofs = DofMap::excluding(g, boundary_damped ? split.gamma1 : g.boundary_nodes());
  const int n = gm.dofs.size();
  if (n == 0) throw InvalidArgument("assemble_generator: no unknowns left");
  gm.mass = gm.dofs.restrict(g.volume_weights());
  gm.K = stiffness_matrix(g, gm.dofs, a.link_angles(g));
  gm.c = gm.dofs.restrict(damping.c);
  gm.boundary = RVec::Zero(n);
  if (boundary_damped)
    for (int k : split.gamma0) {
      const int r = gm.dofs.node_to_dof[k];
      gm.boundary[r] = g.surface_weights()[k] * damping.d[k];
    }
  const SpMat Mc = linalg::diag_sparse(RVec(gm.mass.cwiseProduct(gm.c)));
  const SpMat B = linalg::diag_sparse(gm.boundary);

  switch (kind) {
    case GenKind::A0:
    case GenKind::A1: {
      gm.G = linalg::diag_sparse(gm.mass);
      if (scheme == Scheme::LinkPhase)
        gm.A = detail::inv_mass_times(gm.mass, SpMat(-kI * gm.K));
      else
        gm.A = kI * detail::expansion_laplacian(g, a, gm.dofs);
      if (kind == GenKind::A1) gm.A -= linalg::diag_sparse(gm.c);
      if (kind == GenKind::A0) gm.c.setZero();
      break;
    }
    case GenKind::A3: {
      gm.G = linalg::diag_sparse(gm.mass);
      gm.A = detail::inv_mass_times(gm.mass, SpMat(-kI * gm.K - B));
      gm.c.setZero();
      break;
    }
    case GenKind::A2: {
      CVec inv(n);
      for (int i = 0; i < n; ++i) inv[i] = -1.0 / Complex(gm.mass[i], gm.boundary[i]);
      gm.Z = linalg::diag_sparse(inv) * gm.K;
      gm.A = kI * gm.Z;
      gm.G = gm.K;
      gm.c.setZero();
      Eigen::SimplicialLDLT<SpMat> ldlt(gm.K);
      bool pd = ldlt.info() == Eigen::Success;
      if (pd)
        for (int i = 0; i < n; ++i) pd = pd && std::real(ldlt.vectorD()[i]) > 0.0;
      if (!pd)
        throw InvalidArgument(
            "boundary_split: stiffness not positive definite (Gamma_1 empty and a = 0?)");
      break;
    }
    default: break;
  }
  gm.A.makeCompressed();
  return gm;
}

/// D_psi^{-1} A D_psi with D_psi = diag(exp(i psi)) restricted to the unknowns.
inline GeneratorMatrix gauge_transform(const GeneratorMatrix& gen, const RVec& psi_nodes) {
  if (psi_nodes.size() != gen.dofs.num_nodes())
    throw InvalidArgument("gauge_transform: psi must be sampled on the grid");
  CVec ph(gen.size());
  for (int i = 0; i < gen.size(); ++i) ph[i] = std::polar(1.0, psi_nodes[gen.dofs.dof_to_node[i]]);
  const SpMat D = linalg::diag_sparse(ph);
  const SpMat Dinv = linalg::diag_sparse(CVec(ph.conjugate()));
  GeneratorMatrix out = gen;
  out.A = Dinv * gen.A * D;
  out.K = Dinv * gen.K * D;
  out.G = Dinv * gen.G * D;
  if (gen.Z.size() > 0) out.Z = Dinv * gen.Z * D;
  return out;
}

// ---------------------------------------------------------------------------
// Structural checks.

struct StructureReport {
  double skew_residual = 0.0;        // ||GA + (GA)^H|| / ||GA||, A0 only
  double hermitian_max = 0.0;        // lambda_max of Herm(GA) / ||GA||
  double identity_residual = 0.0;    // max |Re u^H G A u + D(u)| / |u^H G A u|
  int lanczos_iterations = 0;
  bool ok = false;
};

/// Matrix-level skew-adjointness / dissipativity and the algebraic energy
/// identities on random states drawn from `seed`.
inline StructureReport check_structure(const GeneratorMatrix& gen, int samples = 8,
                                       std::uint64_t seed = 7) {
  StructureReport r;
  const SpMat GA = gen.G * gen.A;
  const SpMat H = 0.5 * (GA + SpMat(GA.adjoint()));
  const double scale = std::max(linalg::norm1(GA), 1e-300);
  r.skew_residual = linalg::norm1(SpMat(GA + SpMat(GA.adjoint()))) / scale;
  auto op = [&](const CVec& x) -> CVec { return H * x; };
  const auto ritz = linalg::lanczos_extreme(op, nullptr, gen.size(), true, 1e-8, 3000, seed);
  r.hermitian_max = ritz.value / scale;
  r.lanczos_iterations = ritz.iterations;
  CounterRng rng(seed, 99);
  for (int s = 0; s < samples; ++s) {
    CVec u(gen.size());
    for (int i = 0; i < u.size(); ++i) u[i] = Complex(rng.normal(), rng.normal());
    const Complex q = u.dot(GA * u);
    const double res = std::abs(std::real(q) + gen.dissipation(u));
    r.identity_residual = std::max(r.identity_residual, res / std::max(std::abs(q), 1e-300));
  }
  const double tol_skew = 1e-12, tol_eig = 1e-10;
  r.ok = r.hermitian_max <= tol_eig && r.identity_residual <= tol_eig &&
         (gen.kind != GenKind::A0 || r.skew_residual <= tol_skew);
  return r;
}

/// |(Delta_a f|g) + (grad_a f|grad_a g) - (d_nu_a f|g)_Gamma| with the
/// pointwise stencils and trapezoid quadratures. The surface term is summed
/// face by face so corner nodes use each face's own normal.
inline double check_green_identity(const Grid& g, const MagneticPotential& a,
                                   const StateField& f, const StateField& gg) {
  const StateField lap = apply_magnetic_laplacian(g, a, f);
  Complex vol = g.inner(lap, gg);
  const auto gf = magnetic_gradient(g, a, f);
  const auto gg_ = magnetic_gradient(g, a, gg);
  Complex grad = 0;
  for (int ax = 0; ax < g.dim(); ++ax) grad += g.inner(gf[ax], gg_[ax]);
  Complex surf = 0;
  for (const Face& face : g.faces())
    for (const auto& [k, w] : face.nodes)
      surf += w * conormal_at(g, a, f, k, face.normal) * std::conj(gg[k]);
  return std::abs(vol + grad - surf);
}

/// Matrix form of the same identity for f, g vanishing on the boundary:
/// (L f|g)_M + sum_e w_e (U f_q - f_p) conj(U g_q - g_p) / h^2, relative to
/// the size of the gradient term.
inline double check_green_identity_matrix(const Grid& g, const MagneticPotential& a,
                                          const StateField& f, const StateField& gg) {
  const auto lap = assemble_magnetic_laplacian(g, a, Scheme::LinkPhase);
  const CVec fd_ = lap.dofs.restrict(f), gd = lap.dofs.restrict(gg);
  const Complex vol = gd.dot(lap.G * (lap.A * fd_));
  Complex grad = 0;
  const auto th = a.link_angles(g);
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const Edge& ed = g.edges()[e];
    const Complex U = std::polar(1.0, th[e]);
    auto val = [&](const StateField& v, int node) {
      return lap.dofs.node_to_dof[node] >= 0 ? v[node] : Complex(0);
    };
    grad += ed.weight / (ed.length * ed.length) * (U * val(f, ed.q) - val(f, ed.p)) *
            std::conj(U * val(gg, ed.q) - val(gg, ed.p));
  }
  return std::abs(vol + grad) / std::max(std::abs(grad), 1e-300);
}

struct DiamagneticReport {
  double min_margin = 0.0;  // min over nodes of |grad_a f| - |grad |f||
  int worst_node = -1;
};

inline DiamagneticReport check_diamagnetic(const Grid& g, const MagneticPotential& a,
                                           const StateField& f) {
  const RVec absf = f.cwiseAbs();
  const auto gabs = fd::gradient(g, absf);
  const auto ga = magnetic_gradient(g, a, f);
  DiamagneticReport r;
  r.min_margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < g.num_nodes(); ++k) {
    double lhs = 0, rhs = 0;
    for (int ax = 0; ax < g.dim(); ++ax) {
      lhs += gabs[ax][k] * gabs[ax][k];
      rhs += std::norm(ga[ax][k]);
    }
    const double m = std::sqrt(rhs) - std::sqrt(lhs);
    if (m < r.min_margin) {
      r.min_margin = m;
      r.worst_node = k;
    }
  }
  return r;
}

struct NormEquivalenceReport {
  double kappa = 0.0;
  double a_sup = 0.0;
  double lower_coefficient = 0.0;  // 1 - ||a|| kappa
  double upper_coefficient = 0.0;  // 1 + ||a|| kappa
  bool smallness_met = false;      // ||a|| kappa < 1
  double worst_lower_slack = 0.0;  // min over samples of ||grad_a u|| - lower ||grad u||
  double worst_upper_slack = 0.0;  // min over samples of upper ||grad u|| - ||grad_a u||
  bool violation = false;          // slack below -tolerance
  std::string note;
};

/// (1 - ||a|| kappa) ||grad u|| <= ||grad_a u|| <= (1 + ||a|| kappa) ||grad u||
/// for samples vanishing on `dirichlet`, with discrete stiffness norms.
/// Slack is relative to ||grad u||; `tolerance` absorbs O(h) quadrature
/// mismatch between node and edge samples of a.
inline NormEquivalenceReport norm_equivalence_bounds(const Grid& g, const MagneticPotential& a,
                                                     const NodeSet& dirichlet,
                                                     const std::vector<StateField>& samples,
                                                     double tolerance = -1.0) {
  NormEquivalenceReport r;
  const auto pc = poincare_constant(g, dirichlet);
  r.kappa = pc.kappa;
  r.a_sup = a.sup_norm;
  r.lower_coefficient = 1.0 - r.a_sup * r.kappa;
  r.upper_coefficient = 1.0 + r.a_sup * r.kappa;
  r.smallness_met = r.a_sup * r.kappa < 1.0;
  if (!r.smallness_met) r.note = "smallness condition ||a|| kappa < 1 unmet; lower bound vacuous";
  const DofMap dofs = DofMap::excluding(g, dirichlet);
  const SpMat K0 = stiffness_matrix(g, dofs);
  const SpMat Ka = stiffness_matrix(g, dofs, a.link_angles(g));
  if (tolerance < 0) tolerance = 4.0 * std::max(g.h(0), g.dim() == 2 ? g.h(1) : 0.0);
  r.worst_lower_slack = r.worst_upper_slack = std::numeric_limits<double>::infinity();
  for (const auto& u : samples) {
    for (int k : dirichlet)
      if (std::abs(u[k]) > 1e-12)
        throw InvalidArgument("norm_equivalence_bounds: sample does not vanish on Dirichlet part");
    const CVec x = dofs.restrict(u);
    const double n0 = std::sqrt(std::max(std::real(x.dot(K0 * x)), 0.0));
    const double na = std::sqrt(std::max(std::real(x.dot(Ka * x)), 0.0));
    if (n0 == 0.0) continue;
    r.worst_lower_slack = std::min(r.worst_lower_slack, (na - r.lower_coefficient * n0) / n0);
    r.worst_upper_slack = std::min(r.worst_upper_slack, (r.upper_coefficient * n0 - na) / n0);
  }
  r.violation = r.worst_upper_slack < -tolerance ||
                (r.smallness_met && r.worst_lower_slack < -tolerance);
  if (r.violation) r.note += (r.note.empty() ? "" : "; ") + std::string("bound violated beyond O(h)");
  return r;
}

/// Coordinate text export: one "row col re im" line per stored entry.
inline void write_coordinates(std::ostream& os, const SpMat& A) {
  os.precision(17);
  os << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value().real() << ' '
         << it.value().imag() << '\n';
}

}  // namespace magschro
