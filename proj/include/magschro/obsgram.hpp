#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseLU>
#include <unsupported/Eigen/KroneckerProduct>
#include <json.hpp>

#include "magschro/evolve.hpp"
#include "magschro/linalg.hpp"
#include "magschro/magop.hpp"

namespace magschro {

enum class ObsType { BoundaryConormal, InteriorL2, InteriorH1 };

inline std::string to_string(ObsType t) {
  switch (t) {
    case ObsType::BoundaryConormal: return "boundary-conormal";
    case ObsType::InteriorL2: return "interior-L2";
    case ObsType::InteriorH1: return "interior-H1";
  }
  return "?";
}

inline ObsType parse_observation(const std::string& s) {
  for (ObsType t : {ObsType::BoundaryConormal, ObsType::InteriorL2, ObsType::InteriorH1})
    if (to_string(t) == s) return t;
  throw InvalidArgument("unknown observation '" + s + "'");
}

/// Observation descriptor: conormal trace on a boundary node set, or the
/// restriction to an interior node set omega.
struct Observation {
  ObsType type = ObsType::InteriorL2;
  NodeSet nodes;
};

enum class PhaseRule { Exact, Cayley };

struct GramianOptions {
  double T = 1.0;
  double dt = 1e-3;
  int stride = 1;
  PhaseRule phases = PhaseRule::Exact;
  int dense_limit = 4096;  // above this, matrix-free Lanczos
  int probes = 64;         // Lanczos steps per extreme eigenvalue in that route
};

struct ObservabilityReport {
  std::string observation;
  std::string route;  // "spectral" or "matrix-free"
  double T = 0.0;
  double dt = 0.0;
  int stride = 1;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double C_obs = 0.0;  // 1 / sqrt(lambda_min)
  double C_hid = 0.0;  // sqrt(lambda_max)
  std::optional<double> quadrature_error_estimate;
  double sketch_residual = 0.0;
  std::string warning;
};

// ---------------------------------------------------------------------------
// Observation forms: u^H Q u is the observed quantity at one instant.

/// Conormal trace operator: row i is d_nu_a at where[i] acting on the
/// generator's unknowns (eliminated nodes contribute zero).
inline SpMat conormal_operator(const Grid& g, const MagneticPotential& a, const DofMap& dofs,
                               const NodeSet& where) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < where.size(); ++i) {
    const int k = where[i];
    if (!g.is_boundary(k)) throw InvalidArgument("conormal_operator: interior node");
    const Point nu = g.normal(k);
    const int axis = std::abs(nu[0]) > 0.5 ? 0 : 1;
    const int inward = nu[axis] > 0 ? -1 : +1;
    const int n1 = g.neighbor(k, axis, inward);
    const int n2 = n1 >= 0 ? g.neighbor(n1, axis, inward) : -1;
    if (n2 < 0) throw InvalidArgument("conormal_operator: stencil leaves the grid");
    const double h = g.h(axis);
    auto add = [&](int node, Complex v) {
      const int c = dofs.node_to_dof[node];
      if (c >= 0) t.emplace_back(static_cast<int>(i), c, v);
    };
    add(k, 3.0 / (2 * h) + kI * a.at(k).dot(nu));
    add(n1, -4.0 / (2 * h));
    add(n2, 1.0 / (2 * h));
  }
  SpMat N(static_cast<int>(where.size()), dofs.size());
  N.setFromTriplets(t.begin(), t.end());
  return N;
}

/// Hermitian form Q of the observation and the left metric it is compared
/// against (stiffness for the boundary and H1 cases, mass for L2).
inline std::pair<SpMat, SpMat> observation_forms(const Grid& g, const MagneticPotential& a,
                                                 const GeneratorMatrix& gen, const Observation& obs) {
  if (obs.nodes.empty()) throw InvalidArgument("observation: empty node set");
  const int n = gen.size();
  const SpMat M = linalg::diag_sparse(gen.mass);
  RVec ind = RVec::Zero(n);
  for (int k : obs.nodes) {
    const int r = gen.dofs.node_to_dof.at(k);
    if (r >= 0) ind[r] = 1.0;
  }
  switch (obs.type) {
    case ObsType::BoundaryConormal: {
      const SpMat N = conormal_operator(g, a, gen.dofs, obs.nodes);
      RVec w(obs.nodes.size());
      for (std::size_t i = 0; i < obs.nodes.size(); ++i) w[i] = g.surface_weights()[obs.nodes[i]];
      const SpMat Q = SpMat(N.adjoint()) * linalg::diag_sparse(w) * N;
      return {Q, gen.K};
    }
    case ObsType::InteriorL2:
      return {linalg::diag_sparse(RVec(gen.mass.cwiseProduct(ind))), M};
    case ObsType::InteriorH1: {
      std::vector<char> in(g.num_nodes(), 0);
      for (int k : obs.nodes) in[k] = 1;
      std::vector<Triplet> t;
      const auto th = a.link_angles(g);
      for (std::size_t e = 0; e < g.edges().size(); ++e) {
        const Edge& ed = g.edges()[e];
        if (!in[ed.p] || !in[ed.q]) continue;
        const double c = ed.weight / (ed.length * ed.length);
        const Complex U = std::polar(1.0, th[e]);
        const int p = gen.dofs.node_to_dof[ed.p], q = gen.dofs.node_to_dof[ed.q];
        if (p >= 0) t.emplace_back(p, p, c);
        if (q >= 0) t.emplace_back(q, q, c);
        if (p >= 0 && q >= 0) {
          t.emplace_back(p, q, -c * U);
          t.emplace_back(q, p, -c * std::conj(U));
        }
      }
      SpMat Kw(n, n);
      Kw.setFromTriplets(t.begin(), t.end());
      return {SpMat(Kw + linalg::diag_sparse(RVec(gen.mass.cwiseProduct(ind)))), gen.K};
    }
  }
  throw InvalidArgument("observation: unknown type");
}

// ---------------------------------------------------------------------------
// Spectral route.

/// Eigen-decomposition K V = M V Lambda, V^H M V = I, of a conservative
/// generator A0 = -i M^{-1} K.
struct ModalBasis {
  RVec lambda;
  CMat V;
};

namespace detail {

/// v^H K v summed as sum_p r_p |v_p|^2 + sum_{p<q} |K_pq| |v_p + u_pq v_q|^2,
/// u_pq = K_pq / |K_pq|. Free of the cancellation in the expanded product, so
/// smooth modes get frequencies accurate relative to their own size.
inline double edge_form(const SpMat& K, const CVec& v) {
  const int n = static_cast<int>(K.rows());
  RVec r = RVec::Zero(n);
  double off = 0.0;
  for (int col = 0; col < K.outerSize(); ++col)
    for (SpMat::InnerIterator it(K, col); it; ++it) {
      const int p = static_cast<int>(it.row()), q = col;
      if (p == q) {
        r[p] += std::real(it.value());
      } else {
        const double c = std::abs(it.value());
        r[p] -= c;
        if (p < q && c > 0) off += c * std::norm(v[p] + (it.value() / c) * v[q]);
      }
    }
  double diag = 0.0;
  for (int p = 0; p < n; ++p) {
    double rp = r[p];
    if (std::abs(rp) < 1e-12 * std::abs(std::real(K.coeff(p, p)))) rp = 0.0;
    diag += rp * std::norm(v[p]);
  }
  return diag + off;
}

}  // namespace detail

inline ModalBasis modal_basis(const GeneratorMatrix& gen) {
  if (gen.kind != GenKind::A0)
    throw InvalidArgument("observability: the generator must be conservative (A0)");
  auto p = linalg::hermitian_pencil_diag(CMat(gen.K), gen.mass);
  for (int j = 0; j < p.values.size(); ++j) {
    const CVec v = p.vectors.col(j);
    p.values[j] = detail::edge_form(gen.K, v) / gen.mass.dot(v.cwiseAbs2());
  }
  return {p.values, p.vectors};
}

namespace detail {

/// Trapezoid sum over n = 0..N of weights * exp(i n delta), step `step`.
inline Complex trapezoid_phase_sum(double delta, long N, double step) {
  const double s = std::sin(0.5 * delta);
  Complex geo;
  if (std::abs(s) < 1e-6) {
    geo = 0;
    for (long n = 0; n <= N; ++n) geo += std::polar(1.0, n * delta);
  } else {
    geo = std::polar(1.0, 0.5 * N * delta) * (std::sin(0.5 * (N + 1) * delta) / s);
  }
  return step * (geo - 0.5 * (1.0 + std::polar(1.0, N * delta)));
}

inline long sample_count(double T, double step) {
  const long N = std::lround(T / step);
  if (N < 1 || std::abs(N * step - T) > 1e-9 * std::max(1.0, T))
    throw InvalidArgument("gramian: T must be a positive multiple of dt * stride");
  return N;
}

}  // namespace detail

/// Gramian in modal coordinates c = V^H M v:
/// Gc[j,k] = (V^H Q V)[j,k] * sum_n w_n conj(d_j^n) d_k^n.
inline CMat modal_gramian(const ModalBasis& mb, const SpMat& Q, double T, double dt, int stride,
                          PhaseRule rule) {
  const double step = dt * stride;
  const long N = detail::sample_count(T, step);
  const int n = static_cast<int>(mb.lambda.size());
  RVec phi(n);  // phase advance per sample
  for (int j = 0; j < n; ++j)
    phi[j] = rule == PhaseRule::Exact ? mb.lambda[j] * step
                                      : 2.0 * std::atan(0.5 * mb.lambda[j] * dt) * stride;
  CMat Gc = mb.V.adjoint() * (Q * mb.V);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) Gc(j, k) *= detail::trapezoid_phase_sum(phi[j] - phi[k], N, step);
  return 0.5 * (Gc + Gc.adjoint());
}

/// Extreme generalized eigenvalues of (Gc, Lc) with Lc = I (mass metric) or
/// Lc = Lambda (stiffness metric).
inline std::pair<double, double> modal_extremes(const CMat& Gc, const ModalBasis& mb, bool stiffness) {
  RVec w = stiffness ? mb.lambda : RVec(RVec::Ones(mb.lambda.size()));
  const auto p = linalg::hermitian_pencil_diag(Gc, w);
  return {p.values[0], p.values[p.values.size() - 1]};
}

// ---------------------------------------------------------------------------
// Propagation route (cross-check and large problems).

/// Dense Gramian in state coordinates by propagating every basis column with
/// Crank-Nicolson: G = sum_n w_n (U^n)^H Q U^n.
inline CMat propagated_gramian(const GeneratorMatrix& gen, const SpMat& Q, double T, double dt,
                               int stride) {
  const double step = dt * stride;
  const long N = detail::sample_count(T, step);
  const int n = gen.size();
  CayleyStepper U(gen, dt);
  CMat X = CMat::Identity(n, n);
  CMat G = CMat::Zero(n, n);
  for (long s = 0; s <= N; ++s) {
    const double w = (s == 0 || s == N) ? 0.5 * step : step;
    G += w * (X.adjoint() * (Q * X));
    if (s == N) break;
    for (int r = 0; r < stride; ++r)
      for (int c = 0; c < n; ++c) X.col(c) = U(X.col(c));
  }
  return 0.5 * (G + G.adjoint());
}

namespace detail {

/// Matrix-free x -> G x by a forward sweep to t = T and a backward Horner
/// sweep that reconstructs the states by inverting the unitary steps.
class GramianApply {
 public:
  GramianApply(const GeneratorMatrix& gen, const SpMat& Q, double T, double dt, int stride)
      : gen_(gen), Q_(Q), dt_(dt), stride_(stride) {
    step_ = dt * stride;
    N_ = sample_count(T, step_);
    const SpMat I = linalg::identity(gen.size());
    plus_ = I + (0.5 * dt) * gen.A;
    minus_ = I - (0.5 * dt) * gen.A;
    lu_minus_.compute(minus_);
    lu_plus_.compute(plus_);
    if (lu_minus_.info() != Eigen::Success || lu_plus_.info() != Eigen::Success)
      throw NumericalError("gramian: factorization failed");
  }

  CVec operator()(const CVec& x0) const {
    CVec x = x0;
    for (long s = 0; s < N_; ++s) x = forward(x);
    CVec y = (0.5 * step_) * (Q_ * x);
    for (long s = N_ - 1; s >= 0; --s) {
      x = backward(x);
      y = adjoint_forward(y);
      y += ((s == 0) ? 0.5 * step_ : step_) * (Q_ * x);
    }
    return y;
  }

 private:
  CVec forward(CVec x) const {
    for (int r = 0; r < stride_; ++r) x = lu_minus_.solve(plus_ * x);
    return x;
  }
  CVec backward(CVec x) const {
    for (int r = 0; r < stride_; ++r) x = lu_plus_.solve(minus_ * x);
    return x;
  }
  // U^H y = (I + dt/2 A)^H (I - dt/2 A)^{-H} y
  CVec adjoint_forward(CVec y) const {
    for (int r = 0; r < stride_; ++r) y = SpMat(plus_.adjoint()) * CVec(lu_minus_.adjoint().solve(y));
    return y;
  }

  const GeneratorMatrix& gen_;
  SpMat Q_;
  double dt_;
  int stride_;
  double step_;
  long N_;
  SpMat plus_, minus_;
  mutable Eigen::SparseLU<SpMat> lu_minus_, lu_plus_;
};

}  // namespace detail

// ---------------------------------------------------------------------------

inline ObservabilityReport gramian(const Grid& g, const MagneticPotential& a,
                                   const GeneratorMatrix& gen, const Observation& obs,
                                   const GramianOptions& opt) {
  if (!(opt.T > 0.0)) throw InvalidArgument("gramian: T must be positive");
  if (!(opt.dt > 0.0) || opt.stride < 1) throw InvalidArgument("gramian: bad dt or stride");
  if (gen.kind != GenKind::A0)
    throw InvalidArgument("observability: the generator must be conservative (A0)");
  const auto [Q, L] = observation_forms(g, a, gen, obs);
  const bool stiffness = obs.type != ObsType::InteriorL2;
  ObservabilityReport r;
  r.observation = to_string(obs.type);
  r.T = opt.T;
  r.dt = opt.dt;
  r.stride = opt.stride;
  if (gen.size() <= opt.dense_limit) {
    r.route = "spectral";
    const ModalBasis mb = modal_basis(gen);
    std::tie(r.lambda_min, r.lambda_max) =
        modal_extremes(modal_gramian(mb, Q, opt.T, opt.dt, opt.stride, opt.phases), mb, stiffness);
    if (opt.stride > 1) {
      const long N = std::lround(opt.T / (opt.dt * opt.stride));
      if (N % 2 == 0) {
        const auto [lo2, hi2] = modal_extremes(
            modal_gramian(mb, Q, opt.T, opt.dt, 2 * opt.stride, opt.phases), mb, stiffness);
        const double e = std::max(std::abs(r.lambda_min - lo2) / std::abs(r.lambda_min),
                                  std::abs(r.lambda_max - hi2) / std::abs(r.lambda_max)) / 3.0;
        r.quadrature_error_estimate = e;
      } else {
        r.warning = "Richardson estimate skipped: sample count is odd";
      }
    }
  } else {
    r.route = "matrix-free";
    const detail::GramianApply Gx(gen, Q, opt.T, opt.dt, opt.stride);
    Eigen::SimplicialLDLT<SpMat> Lf(L);
    if (Lf.info() != Eigen::Success) throw NumericalError("gramian: metric factorization failed");
    auto op = [&](const CVec& x) -> CVec { return Lf.solve(Gx(x)); };
    auto gram = [&](const CVec& x) -> CVec { return L * x; };
    const int budget = std::max(opt.probes, 8);
    const auto hi = linalg::lanczos_extreme(op, gram, gen.size(), true, 1e-8, budget);
    const auto lo = linalg::lanczos_extreme(op, gram, gen.size(), false, 1e-8, budget);
    r.lambda_max = hi.value;
    r.lambda_min = lo.value;
    r.sketch_residual = std::max(hi.residual / std::abs(hi.value), lo.residual / std::abs(lo.value));
    if (!hi.converged || !lo.converged)
      r.warning = "matrix-free estimate not converged within the probe budget";
  }
  if (r.quadrature_error_estimate && *r.quadrature_error_estimate > 0.05)
    r.warning = "stride too coarse: quadrature error estimate above 5%";
  r.C_obs = r.lambda_min > 0 ? 1.0 / std::sqrt(r.lambda_min) : std::numeric_limits<double>::infinity();
  r.C_hid = std::sqrt(std::max(r.lambda_max, 0.0));
  return r;
}

inline nlohmann::json to_json(const ObservabilityReport& r) {
  nlohmann::json j{{"observation", r.observation}, {"T", r.T},
                   {"lambda_min", r.lambda_min},   {"lambda_max", r.lambda_max},
                   {"C_obs", r.C_obs},             {"C_hid", r.C_hid}};
  j["quadrature_error_estimate"] =
      r.quadrature_error_estimate ? nlohmann::json(*r.quadrature_error_estimate) : nlohmann::json(nullptr);
  j["route"] = r.route;
  j["dt"] = r.dt;
  j["stride"] = r.stride;
  if (!r.warning.empty()) j["warning"] = r.warning;
  return j;
}

// ---------------------------------------------------------------------------
// Product domains.

/// 2D generator on Omega_1 x Omega_2 built as the Kronecker sum of two 1D
/// conservative factors. Unknown (i, j) has index i + n1 * j, i.e. the vector
/// of u1 (x) u2 is kron(u2, u1).
inline GeneratorMatrix kronecker_sum(const GeneratorMatrix& g1, const GeneratorMatrix& g2) {
  if (g1.kind != GenKind::A0 || g2.kind != GenKind::A0)
    throw InvalidArgument("product_observability: factors must be conservative");
  GeneratorMatrix out;
  out.kind = GenKind::A0;
  out.scheme = g1.scheme;
  const SpMat M1 = linalg::diag_sparse(g1.mass), M2 = linalg::diag_sparse(g2.mass);
  out.mass = Eigen::kroneckerProduct(g2.mass, g1.mass).eval();
  out.K = SpMat(Eigen::kroneckerProduct(M2, g1.K)) + SpMat(Eigen::kroneckerProduct(g2.K, M1));
  out.G = linalg::diag_sparse(out.mass);
  out.A = linalg::diag_sparse(RVec(out.mass.cwiseInverse())) * SpMat(-kI * out.K);
  out.c = RVec::Zero(out.mass.size());
  out.boundary = RVec::Zero(out.mass.size());
  const int n1 = g1.size(), n2 = g2.size();
  out.dofs.dof_to_node.resize(n1 * n2);
  out.dofs.node_to_dof.resize(n1 * n2);
  for (int i = 0; i < n1 * n2; ++i) out.dofs.dof_to_node[i] = out.dofs.node_to_dof[i] = i;
  return out;
}

struct ProductReport {
  double tensor_residual = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double ratio = 0.0;  // C2 / C1
  double T = 0.0;
  bool holds = false;  // C2 <= C1 (1 + tol)
};

/// (a) exp(tA)(u1 (x) u2) against exp(tA1)u1 (x) exp(tA2)u2 with exact modal
/// exponentials; (b) interior L2 constants on omega1 (1D) and omega1 x Omega2.
inline ProductReport product_observability(const GeneratorMatrix& gen1, const GeneratorMatrix& gen2,
                                           const NodeSet& omega1, double T, double dt,
                                           double tol = 0.05, std::uint64_t seed = 17) {
  const GeneratorMatrix g2d = kronecker_sum(gen1, gen2);
  ProductReport rep;
  rep.T = T;
  const ModalBasis b1 = modal_basis(gen1), b2 = modal_basis(gen2), b = modal_basis(g2d);
  auto propagate = [](const ModalBasis& mb, const RVec& mass, const CVec& u, double t) {
    CVec c = mb.V.adjoint() * mass.cwiseProduct(u);
    for (int k = 0; k < c.size(); ++k) c[k] *= std::polar(1.0, -mb.lambda[k] * t);
    return CVec(mb.V * c);
  };
  CounterRng rng(seed, 4);
  for (int trial = 0; trial < 3; ++trial) {
    // smooth factors: a few low modes with random coefficients
    CVec u1 = CVec::Zero(gen1.size()), u2 = CVec::Zero(gen2.size());
    for (int k = 0; k < std::min<int>(4, gen1.size()); ++k)
      u1 += Complex(rng.normal(), rng.normal()) * b1.V.col(k);
    for (int k = 0; k < std::min<int>(4, gen2.size()); ++k)
      u2 += Complex(rng.normal(), rng.normal()) * b2.V.col(k);
    const double t = T * (trial + 1) / 3.0;
    const CVec lhs = propagate(b, g2d.mass, CVec(Eigen::kroneckerProduct(u2, u1)), t);
    const CVec rhs = Eigen::kroneckerProduct(propagate(b2, gen2.mass, u2, t),
                                             propagate(b1, gen1.mass, u1, t));
    rep.tensor_residual = std::max(rep.tensor_residual, (lhs - rhs).norm() / rhs.norm());
  }
  // Observability constants
  RVec ind1 = RVec::Zero(gen1.size());
  for (int k : omega1) {
    const int r = gen1.dofs.node_to_dof.at(k);
    if (r >= 0) ind1[r] = 1.0;
  }
  if (ind1.sum() == 0) throw InvalidArgument("product_observability: omega1 has no unknowns");
  const SpMat Q1 = linalg::diag_sparse(RVec(gen1.mass.cwiseProduct(ind1)));
  const RVec ind2d = Eigen::kroneckerProduct(RVec(RVec::Ones(gen2.size())), ind1).eval();
  const SpMat Q2 = linalg::diag_sparse(RVec(g2d.mass.cwiseProduct(ind2d)));
  const auto e1 = modal_extremes(modal_gramian(b1, Q1, T, dt, 1, PhaseRule::Exact), b1, false);
  const auto e2 = modal_extremes(modal_gramian(b, Q2, T, dt, 1, PhaseRule::Exact), b, false);
  rep.C1 = 1.0 / std::sqrt(e1.first);
  rep.C2 = 1.0 / std::sqrt(e2.first);
  rep.ratio = rep.C2 / rep.C1;
  rep.holds = rep.C2 <= rep.C1 * (1.0 + tol);
  return rep;
}

}  // namespace magschro
