#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "magschro/core.hpp"
#include "magschro/linalg.hpp"

namespace magschro {

using Point = Eigen::Vector2d;

/// Axis-aligned rectangular hole (x0, x1) x (y0, y1) removed from a 2D box.
/// Its edges must fall on grid lines.
struct HoleSpec {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

/// One boundary face: an axis-aligned straight piece of the boundary with a
/// constant outward normal and per-node trapezoid weights along it.
struct Face {
  std::string name;
  Point normal = Point::Zero();
  double measure = 0.0;
  std::vector<std::pair<int, double>> nodes;  // (node, surface weight)
};

/// Lattice edge between two active nodes. The stiffness contribution is
/// weight * |U_e u_q - u_p|^2 / length^2 with q = p + length * e_axis.
struct Edge {
  int p = 0;
  int q = 0;
  int axis = 0;
  double weight = 0.0;  // measure of the dual region (trapezoid transverse)
  double length = 0.0;
};

/// Uniform node-centred grid on an interval, a rectangle, or a rectangle
/// with a rectangular hole. Immutable after construction.
class Grid {
 public:
  int dim() const { return dim_; }
  const std::array<double, 2>& extents() const { return extent_; }
  const std::array<int, 2>& resolution() const { return n_; }
  double h(int axis) const { return h_[axis]; }
  int num_nodes() const { return static_cast<int>(coords_.size()); }
  const Point& coord(int node) const { return coords_[node]; }
  const std::optional<HoleSpec>& hole() const { return hole_; }

  /// Node joined to `node` by an edge along `axis` in direction `dir`
  /// (+1/-1), or -1. Nodes facing each other across a hole are not joined.
  int neighbor(int node, int axis, int dir) const {
    return nbr_[node][2 * axis + (dir > 0 ? 1 : 0)];
  }
  const std::array<int, 2>& lattice_index(int node) const { return lattice_[node]; }
  int node_at(int i, int j = 0) const {
    if (i < 0 || i >= n_[0] || j < 0 || j >= n_[1]) return -1;
    return lattice_to_node_[i + n_[0] * j];
  }

  bool is_boundary(int node) const { return face_of_[node] >= 0; }
  /// Outward unit normal of a boundary node (x-faces win at corners).
  const Point& normal(int node) const { return normal_[node]; }
  /// Face that owns the node for classification purposes, or -1.
  int face_of(int node) const { return face_of_[node]; }

  const RVec& volume_weights() const { return vol_w_; }
  const RVec& surface_weights() const { return surf_w_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const NodeSet& interior_nodes() const { return interior_; }
  const NodeSet& boundary_nodes() const { return boundary_; }
  NodeSet all_nodes() const {
    NodeSet s(num_nodes());
    for (int i = 0; i < num_nodes(); ++i) s[i] = i;
    return s;
  }

  double measure() const { return measure_; }
  double boundary_measure() const {
    double s = 0;
    for (const auto& f : faces_) s += f.measure;
    return s;
  }

  /// Nodes whose coordinates satisfy `pred`.
  template <class Pred>
  NodeSet select(Pred pred) const {
    NodeSet s;
    for (int i = 0; i < num_nodes(); ++i)
      if (pred(coords_[i])) s.push_back(i);
    return s;
  }

  /// Sample a scalar function of the coordinates on every node.
  template <class F>
  CVec sample(F f) const {
    CVec v(num_nodes());
    for (int i = 0; i < num_nodes(); ++i) v[i] = Complex(f(coords_[i]));
    return v;
  }

  template <class F>
  RVec sample_real(F f) const {
    RVec v(num_nodes());
    for (int i = 0; i < num_nodes(); ++i) v[i] = f(coords_[i]);
    return v;
  }

  /// Discrete L2 inner product (f|g) = sum w f conj(g).
  Complex inner(const CVec& f, const CVec& g) const { return inner_impl(f, g); }
  double norm2(const CVec& f) const { return std::real(inner_impl(f, f)); }

  friend Grid build_grid(int dim, const std::vector<double>& extents,
                         const std::vector<int>& n);
  friend Grid build_annular_grid(const std::vector<double>& extents,
                                 const std::vector<int>& n, const HoleSpec& hole);

 private:
  Complex inner_impl(const CVec& f, const CVec& g) const {
    Complex s = 0;
    for (int i = 0; i < f.size(); ++i) s += vol_w_[i] * f[i] * std::conj(g[i]);
    return s;
  }

  void finalize(const std::optional<std::array<int, 4>>& hole_idx);

  int dim_ = 1;
  std::array<double, 2> extent_{1.0, 0.0};
  std::array<int, 2> n_{4, 1};
  std::array<double, 2> h_{1.0, 1.0};
  std::optional<HoleSpec> hole_;
  std::vector<Point> coords_;
  std::vector<std::array<int, 2>> lattice_;
  std::vector<int> lattice_to_node_;
  std::vector<int> face_of_;
  std::vector<std::array<int, 4>> nbr_;
  std::vector<Point> normal_;
  RVec vol_w_;
  RVec surf_w_;
  std::vector<Face> faces_;
  std::vector<Edge> edges_;
  NodeSet interior_;
  NodeSet boundary_;
  double measure_ = 0.0;
};

namespace detail {

inline void validate_axes(int dim, const std::vector<double>& extents,
                          const std::vector<int>& n) {
  if (dim != 1 && dim != 2) throw InvalidArgument("build_grid: dim must be 1 or 2");
  if (static_cast<int>(extents.size()) != dim)
    throw InvalidArgument("build_grid: one extent per axis required");
  if (n.size() != 1 && static_cast<int>(n.size()) != dim)
    throw InvalidArgument("build_grid: give one node count or one per axis");
  for (double e : extents)
    if (!(e > 0.0) || !std::isfinite(e))
      throw InvalidArgument("build_grid: extents must be positive");
  for (int k : n)
    if (k < 4) throw InvalidArgument("build_grid: need at least 4 nodes per axis");
}

}  // namespace detail

inline void Grid::finalize(const std::optional<std::array<int, 4>>& hole_idx) {
  const int nx = n_[0], ny = n_[1];
  auto cell_in_domain = [&](int i, int j) {
    if (dim_ == 1) return i >= 0 && i < nx - 1;
    if (i < 0 || i >= nx - 1 || j < 0 || j >= ny - 1) return false;
    if (hole_idx) {
      const auto& hi = *hole_idx;
      if (i >= hi[0] && i < hi[1] && j >= hi[2] && j < hi[3]) return false;
    }
    return true;
  };

  lattice_to_node_.assign(static_cast<std::size_t>(nx) * ny, -1);
  std::vector<double> cell_count;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      int cells = 0;
      if (dim_ == 1) {
        cells = cell_in_domain(i - 1, 0) + cell_in_domain(i, 0);
      } else {
        cells = cell_in_domain(i - 1, j - 1) + cell_in_domain(i, j - 1) +
                cell_in_domain(i - 1, j) + cell_in_domain(i, j);
      }
      if (cells == 0) continue;
      lattice_to_node_[i + nx * j] = static_cast<int>(coords_.size());
      coords_.emplace_back(i * h_[0], dim_ == 2 ? j * h_[1] : 0.0);
      lattice_.push_back({i, j});
      cell_count.push_back(cells);
    }
  }
  const int N = num_nodes();
  vol_w_.resize(N);
  const double cell_measure = dim_ == 1 ? h_[0] : h_[0] * h_[1];
  const double share = dim_ == 1 ? 0.5 : 0.25;
  for (int k = 0; k < N; ++k) vol_w_[k] = cell_count[k] * share * cell_measure;

  face_of_.assign(N, -1);
  normal_.assign(N, Point::Zero());
  surf_w_ = RVec::Zero(N);

  std::map<std::tuple<int, int, int>, int> face_index;  // (normal axis, sign, line)
  auto face_for = [&](int axis, int sign, int line, bool on_hole) {
    auto key = std::make_tuple(axis, sign, line);
    auto it = face_index.find(key);
    if (it != face_index.end()) return it->second;
    Face f;
    f.name = std::string(on_hole ? "hole." : "") + (axis == 0 ? "x" : "y") +
             (sign > 0 ? "+" : "-");
    f.normal = Point::Zero();
    f.normal[axis] = sign;
    faces_.push_back(f);
    face_index[key] = static_cast<int>(faces_.size()) - 1;
    return static_cast<int>(faces_.size()) - 1;
  };
  // per node: candidate normals collected from boundary edges
  std::vector<std::array<int, 2>> node_face_by_axis(N, {-1, -1});
  std::vector<std::map<int, double>> face_weights(0);

  auto add_face_weight = [&](int face, int node, double w, int axis) {
    if (static_cast<int>(face_weights.size()) <= face) face_weights.resize(face + 1);
    face_weights[face][node] += w;
    node_face_by_axis[node][axis] = face;
  };

  if (dim_ == 1) {
    const int left = node_at(0), right = node_at(nx - 1);
    add_face_weight(face_for(0, -1, 0, false), left, 1.0, 0);
    add_face_weight(face_for(0, +1, nx - 1, false), right, 1.0, 0);
    for (int i = 0; i + 1 < nx; ++i)
      edges_.push_back({node_at(i), node_at(i + 1), 0, h_[0], h_[0]});
  } else {
    const double half_area = 0.5 * h_[0] * h_[1];
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int p = node_at(i, j);
        if (p < 0) continue;
        // x-edge to (i+1, j): transverse cells below (j-1) and above (j)
        if (const int q = node_at(i + 1, j); q >= 0) {
          const bool below = cell_in_domain(i, j - 1), above = cell_in_domain(i, j);
          const int cells = below + above;
          if (cells > 0) {
            edges_.push_back({p, q, 0, cells * half_area, h_[0]});
            if (cells == 1) {
              const int sign = above ? -1 : +1;
              const bool on_hole = (j > 0 && j < ny - 1);
              const int f = face_for(1, sign, j, on_hole);
              add_face_weight(f, p, 0.5 * h_[0], 1);
              add_face_weight(f, q, 0.5 * h_[0], 1);
            }
          }
        }
        if (const int q = node_at(i, j + 1); q >= 0) {
          const bool left = cell_in_domain(i - 1, j), right = cell_in_domain(i, j);
          const int cells = left + right;
          if (cells > 0) {
            edges_.push_back({p, q, 1, cells * half_area, h_[1]});
            if (cells == 1) {
              const int sign = right ? -1 : +1;
              const bool on_hole = (i > 0 && i < nx - 1);
              const int f = face_for(0, sign, i, on_hole);
              add_face_weight(f, p, 0.5 * h_[1], 0);
              add_face_weight(f, q, 0.5 * h_[1], 0);
            }
          }
        }
      }
    }
  }

  nbr_.assign(N, {-1, -1, -1, -1});
  for (const Edge& e : edges_) {
    nbr_[e.p][2 * e.axis + 1] = e.q;
    nbr_[e.q][2 * e.axis] = e.p;
  }

  face_weights.resize(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    double total = 0;
    for (const auto& [node, w] : face_weights[f]) {
      faces_[f].nodes.emplace_back(node, w);
      surf_w_[node] += w;
      total += w;
    }
    faces_[f].measure = total;
  }
  for (int k = 0; k < N; ++k) {
    const auto& byax = node_face_by_axis[k];
    const int f = byax[0] >= 0 ? byax[0] : byax[1];  // x-faces first
    if (f >= 0) {
      face_of_[k] = f;
      normal_[k] = faces_[f].normal;
      boundary_.push_back(k);
    } else {
      interior_.push_back(k);
    }
  }
  measure_ = vol_w_.sum();
}

/// Uniform grid with h = extent / (n - 1) per axis.
inline Grid build_grid(int dim, const std::vector<double>& extents,
                       const std::vector<int>& n) {
  detail::validate_axes(dim, extents, n);
  Grid g;
  g.dim_ = dim;
  g.extent_ = {extents[0], dim == 2 ? extents[1] : 0.0};
  g.n_ = {n[0], dim == 2 ? (n.size() == 2 ? n[1] : n[0]) : 1};
  g.h_ = {extents[0] / (g.n_[0] - 1), dim == 2 ? extents[1] / (g.n_[1] - 1) : 1.0};
  g.finalize(std::nullopt);
  return g;
}

inline Grid build_grid(int dim, const std::vector<double>& extents, int n) {
  return build_grid(dim, extents, std::vector<int>{n});
}

/// Rectangle minus a rectangular hole; the boundary then has two connected
/// components (outer box and hole).
inline Grid build_annular_grid(const std::vector<double>& extents,
                               const std::vector<int>& n, const HoleSpec& hole) {
  detail::validate_axes(2, extents, n);
  Grid g;
  g.dim_ = 2;
  g.extent_ = {extents[0], extents[1]};
  g.n_ = {n[0], n.size() == 2 ? n[1] : n[0]};
  g.h_ = {extents[0] / (g.n_[0] - 1), extents[1] / (g.n_[1] - 1)};
  auto snap = [](double v, double h, const char* what) {
    const double r = v / h;
    const int k = static_cast<int>(std::lround(r));
    if (std::abs(r - k) > 1e-9)
      throw InvalidArgument(std::string("build_annular_grid: hole ") + what +
                            " is not on a grid line");
    return k;
  };
  std::array<int, 4> idx{snap(hole.x0, g.h_[0], "x0"), snap(hole.x1, g.h_[0], "x1"),
                         snap(hole.y0, g.h_[1], "y0"), snap(hole.y1, g.h_[1], "y1")};
  if (idx[1] <= idx[0] || idx[3] <= idx[2])
    throw InvalidArgument("build_annular_grid: empty hole");
  if (idx[0] < 2 || idx[2] < 2 || idx[1] > g.n_[0] - 3 || idx[3] > g.n_[1] - 3)
    throw InvalidArgument(
        "build_annular_grid: hole must leave at least two cells to the outer box");
  g.hole_ = hole;
  g.finalize(idx);
  return g;
}

/// Map between grid nodes and the unknowns left after eliminating a
/// homogeneous Dirichlet node set.
struct DofMap {
  std::vector<int> node_to_dof;
  std::vector<int> dof_to_node;

  int size() const { return static_cast<int>(dof_to_node.size()); }
  int num_nodes() const { return static_cast<int>(node_to_dof.size()); }

  static DofMap excluding(const Grid& grid, const NodeSet& dirichlet) {
    DofMap d;
    d.node_to_dof.assign(grid.num_nodes(), 0);
    for (int k : dirichlet) {
      if (k < 0 || k >= grid.num_nodes()) throw InvalidArgument("DofMap: node out of range");
      d.node_to_dof[k] = -1;
    }
    for (int k = 0; k < grid.num_nodes(); ++k) {
      if (d.node_to_dof[k] == -1) continue;
      d.node_to_dof[k] = static_cast<int>(d.dof_to_node.size());
      d.dof_to_node.push_back(k);
    }
    return d;
  }

  CVec restrict(const StateField& u) const {
    CVec r(size());
    for (int i = 0; i < size(); ++i) r[i] = u[dof_to_node[i]];
    return r;
  }
  RVec restrict(const RVec& u) const {
    RVec r(size());
    for (int i = 0; i < size(); ++i) r[i] = u[dof_to_node[i]];
    return r;
  }
  StateField extend(const CVec& x) const {
    StateField u = StateField::Zero(num_nodes());
    for (int i = 0; i < size(); ++i) u[dof_to_node[i]] = x[i];
    return u;
  }
};

/// Hermitian stiffness sum_e w_e |U_e u_q - u_p|^2 / len_e^2 on the dofs of
/// `dofs` (eliminated nodes carry zero). `link_angles[e]` is the phase of U_e;
/// an empty vector means U_e = 1.
inline SpMat stiffness_matrix(const Grid& grid, const DofMap& dofs,
                              const std::vector<double>& link_angles = {}) {
  std::vector<Triplet> t;
  t.reserve(grid.edges().size() * 4);
  for (std::size_t e = 0; e < grid.edges().size(); ++e) {
    const Edge& ed = grid.edges()[e];
    const double c = ed.weight / (ed.length * ed.length);
    const Complex U = link_angles.empty() ? Complex(1.0) : std::polar(1.0, link_angles[e]);
    const int p = dofs.node_to_dof[ed.p], q = dofs.node_to_dof[ed.q];
    if (p >= 0) t.emplace_back(p, p, c);
    if (q >= 0) t.emplace_back(q, q, c);
    if (p >= 0 && q >= 0) {
      t.emplace_back(p, q, -c * U);
      t.emplace_back(q, p, -c * std::conj(U));
    }
  }
  SpMat K(dofs.size(), dofs.size());
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

/// Domain partition of the boundary by the sign of m . nu, m = x - x0.
struct BoundarySplit {
  Point x0 = Point::Zero();
  NodeSet gamma0;                // m . nu > 0
  NodeSet gamma1;                // m . nu <= 0
  std::vector<Point> m;          // x - x0 on every node
  int transition_nodes = 0;      // gamma0 nodes adjacent to a gamma1 node
};

inline BoundarySplit split_boundary(const Grid& grid, const Point& x0) {
  BoundarySplit s;
  s.x0 = x0;
  s.m.resize(grid.num_nodes());
  std::vector<char> in0(grid.num_nodes(), 0);
  for (int k = 0; k < grid.num_nodes(); ++k) s.m[k] = grid.coord(k) - x0;
  for (int k : grid.boundary_nodes()) {
    if (s.m[k].dot(grid.normal(k)) > 0.0) {
      s.gamma0.push_back(k);
      in0[k] = 1;
    } else {
      s.gamma1.push_back(k);
    }
  }
  for (int k : s.gamma0) {
    bool touches = false;
    for (int ax = 0; ax < grid.dim(); ++ax)
      for (int dir : {-1, 1}) {
        const int nb = grid.neighbor(k, ax, dir);
        if (nb >= 0 && grid.is_boundary(nb) && !in0[nb]) touches = true;
      }
    s.transition_nodes += touches;
  }
  return s;
}

inline BoundarySplit split_boundary(const Grid& grid, double x0) {
  return split_boundary(grid, Point(x0, 0.0));
}

struct PoincareReport {
  std::string descriptor;
  int dirichlet_count = 0;
  double kappa = 0.0;
  double lambda_min = 0.0;
  std::array<int, 2> resolution{0, 0};
  int iterations = 0;
};

/// kappa = 1 / sqrt(lambda_min) of the discrete Laplacian with homogeneous
/// Dirichlet data on `dirichlet_part` and the natural condition elsewhere.
inline PoincareReport poincare_constant(const Grid& grid, const NodeSet& dirichlet_part,
                                        std::string descriptor = "custom") {
  if (dirichlet_part.empty())
    throw InvalidArgument("poincare_constant: Dirichlet part must be nonempty");
  const DofMap dofs = DofMap::excluding(grid, dirichlet_part);
  const RSpMat K = stiffness_matrix(grid, dofs).real();
  const RVec w = dofs.restrict(grid.volume_weights());
  PoincareReport r;
  r.descriptor = std::move(descriptor);
  r.dirichlet_count = static_cast<int>(dirichlet_part.size());
  r.resolution = grid.resolution();

  if (dofs.size() <= 600) {
    const auto pencil = linalg::hermitian_pencil_diag(CMat(K.cast<Complex>()), w);
    r.lambda_min = pencil.values[0];
    r.iterations = 0;
  } else {
    Eigen::SimplicialLDLT<RSpMat> ldlt(K);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("poincare_constant: stiffness factorization failed");
    const RVec wc = w;
    auto op = [&](const CVec& x) -> CVec {
      const RVec re = ldlt.solve(RVec(wc.cwiseProduct(x.real())));
      const RVec im = ldlt.solve(RVec(wc.cwiseProduct(x.imag())));
      CVec y(x.size());
      y.real() = re;
      y.imag() = im;
      return y;
    };
    auto gram = [&](const CVec& x) -> CVec { return wc.cast<Complex>().cwiseProduct(x); };
    const auto ritz = linalg::lanczos_extreme(op, gram, dofs.size(), true, 1e-12);
    if (!ritz.converged)
      throw NumericalError("poincare_constant: eigensolver did not converge (" +
                           linalg::describe(ritz) + ")");
    r.lambda_min = 1.0 / ritz.value;
    r.iterations = ritz.iterations;
  }
  if (!(r.lambda_min > 0.0))
    throw NumericalError("poincare_constant: non-positive smallest eigenvalue");
  r.kappa = 1.0 / std::sqrt(r.lambda_min);
  return r;
}

inline nlohmann::json to_json(const Grid& g) {
  nlohmann::json j;
  j["dim"] = g.dim();
  j["extents"] = std::vector<double>(g.extents().begin(), g.extents().begin() + g.dim());
  j["n"] = std::vector<int>(g.resolution().begin(), g.resolution().begin() + g.dim());
  if (g.hole()) {
    const auto& h = *g.hole();
    j["hole"] = {h.x0, h.x1, h.y0, h.y1};
  }
  j["num_nodes"] = g.num_nodes();
  nlohmann::json faces = nlohmann::json::array();
  for (const auto& f : g.faces()) {
    std::vector<int> nodes;
    for (const auto& [k, w] : f.nodes) nodes.push_back(k);
    faces.push_back({{"name", f.name},
                     {"normal", {f.normal[0], f.normal[1]}},
                     {"measure", f.measure},
                     {"nodes", nodes}});
  }
  j["faces"] = faces;
  std::vector<int> owner;
  for (int k : g.boundary_nodes()) owner.push_back(g.face_of(k));
  j["boundary_nodes"] = g.boundary_nodes();
  j["boundary_face"] = owner;
  return j;
}

inline nlohmann::json to_json(const Grid& g, const BoundarySplit& s) {
  nlohmann::json j = to_json(g);
  j["x0"] = {s.x0[0], s.x0[1]};
  j["gamma0"] = s.gamma0;
  j["gamma1"] = s.gamma1;
  j["transition_nodes"] = s.transition_nodes;
  return j;
}

/// Rebuild a grid from its JSON description.
inline Grid grid_from_json(const nlohmann::json& j) {
  const int dim = j.at("dim").get<int>();
  const auto ext = j.at("extents").get<std::vector<double>>();
  const auto n = j.at("n").get<std::vector<int>>();
  if (j.contains("hole")) {
    const auto h = j.at("hole").get<std::vector<double>>();
    return build_annular_grid(ext, n, HoleSpec{h.at(0), h.at(1), h.at(2), h.at(3)});
  }
  return build_grid(dim, ext, n);
}

}  // namespace magschro
