#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "magschro/core.hpp"

namespace magschro::linalg {

using Operator = std::function<CVec(const CVec&)>;

struct RitzPair {
  double value = 0.0;
  CVec vector;
  int iterations = 0;  // total Lanczos steps over all restarts
  double residual = 0.0;
  bool converged = false;
};

/// Extreme eigenpair of an operator that is self-adjoint in the inner
/// product <x, y>_G = y^H G x. `gram` applies G (pass nullptr for G = I).
/// Lanczos with full reorthogonalization, restarted from the current Ritz
/// vector with a growing Krylov dimension until
/// ||T x - theta x||_G <= tol * |theta|. A residual that stops shrinking
/// between restarts is accepted once below sqrt(tol) * |theta|: that is the
/// roundoff floor of op, and the Ritz value error is quadratic in it.
inline RitzPair lanczos_extreme(const Operator& op, const Operator& gram, int n,
                                bool largest, double tol = 1e-12,
                                int max_total_steps = 4000,
                                std::uint64_t seed = 12345) {
  if (n <= 0) throw InvalidArgument("lanczos_extreme: empty operator");
  auto G = [&](const CVec& x) -> CVec { return gram ? gram(x) : x; };
  auto dot = [&](const CVec& x, const CVec& y) -> Complex {
    return G(y).dot(x);  // y^H G x  (Eigen's dot conjugates the left side)
  };

  CounterRng rng(seed, 0x1a2c);
  CVec start(n);
  for (int i = 0; i < n; ++i) start[i] = Complex(rng.normal(), rng.normal());

  RitzPair best;
  int total = 0;
  int m = std::min(n, 24);
  double prev_res = -1.0;
  while (true) {
    std::vector<CVec> basis;
    std::vector<CVec> gbasis;
    std::vector<double> alpha, beta;
    CVec v = start / std::sqrt(std::max(std::real(dot(start, start)), 1e-300));
    CVec w;
    for (int j = 0; j < m; ++j) {
      basis.push_back(v);
      gbasis.push_back(G(v));
      w = op(v);
      ++total;
      const double a = std::real(gbasis.back().dot(w));
      alpha.push_back(a);
      // full reorthogonalization (twice is enough)
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < basis.size(); ++k) {
          const Complex c = gbasis[k].dot(w);
          w -= c * basis[k];
        }
      }
      const double b = std::sqrt(std::max(std::real(dot(w, w)), 0.0));
      if (j + 1 == m || b < 1e-14 * std::max(1.0, std::abs(a))) {
        beta.push_back(b);
        break;
      }
      beta.push_back(b);
      v = w / b;
    }
    const int k = static_cast<int>(alpha.size());
    RMat T = RMat::Zero(k, k);
    for (int i = 0; i < k; ++i) {
      T(i, i) = alpha[i];
      if (i + 1 < k) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<RMat> es(T);
    const int idx = largest ? k - 1 : 0;
    const double theta = es.eigenvalues()[idx];
    CVec x = CVec::Zero(n);
    for (int i = 0; i < k; ++i) x += es.eigenvectors()(i, idx) * basis[i];
    x /= std::sqrt(std::max(std::real(dot(x, x)), 1e-300));
    CVec r = op(x) - theta * x;
    ++total;
    const double res = std::sqrt(std::max(std::real(dot(r, r)), 0.0));
    best.value = theta;
    best.vector = x;
    best.residual = res;
    best.iterations = total;
    const double scale = std::max(std::abs(theta), 1e-300);
    const bool stalled = prev_res >= 0 && res >= 0.9 * prev_res && res <= std::sqrt(tol) * scale;
    if (res <= tol * scale || k == n || stalled) {
      best.converged = true;
      return best;
    }
    prev_res = res;
    if (total >= max_total_steps) return best;
    start = x;
    m = std::min(n, std::max(m + 16, static_cast<int>(1.5 * m)));
  }
}

inline std::string describe(const RitzPair& p) {
  std::ostringstream os;
  os << "value=" << p.value << " residual=" << p.residual
     << " iterations=" << p.iterations;
  return os.str();
}

/// Eigenvalues/vectors of the Hermitian pencil (H, diag(w)) with w > 0,
/// returned in the original coordinates: H v = lambda diag(w) v,
/// v^H diag(w) v = 1.
struct DensePencil {
  RVec values;
  CMat vectors;
};

inline DensePencil hermitian_pencil_diag(const CMat& H, const RVec& w) {
  const RVec s = w.cwiseSqrt().cwiseInverse();
  CMat B = s.asDiagonal() * H * s.asDiagonal();
  B = 0.5 * (B + B.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMat> es(B);
  if (es.info() != Eigen::Success)
    throw NumericalError("hermitian_pencil_diag: eigensolver failed");
  return {es.eigenvalues(), s.asDiagonal() * es.eigenvectors()};
}

/// Generalized Hermitian pencil (A, B) with B positive definite.
inline DensePencil hermitian_pencil(const CMat& A, const CMat& B) {
  CMat As = 0.5 * (A + A.adjoint());
  CMat Bs = 0.5 * (B + B.adjoint());
  Eigen::GeneralizedSelfAdjointEigenSolver<CMat> es(As, Bs);
  if (es.info() != Eigen::Success)
    throw NumericalError("hermitian_pencil: B not positive definite");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline CMat to_dense(const SpMat& A) { return CMat(A); }

inline double max_abs(const SpMat& A) {
  double m = 0.0;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

/// Induced 1-norm (max column sum), a cheap scale for relative checks.
inline double norm1(const SpMat& A) {
  double m = 0.0;
  for (int k = 0; k < A.outerSize(); ++k) {
    double s = 0.0;
    for (SpMat::InnerIterator it(A, k); it; ++it) s += std::abs(it.value());
    m = std::max(m, s);
  }
  return m;
}

inline SpMat diag_sparse(const CVec& d) {
  SpMat D(d.size(), d.size());
  D.reserve(Eigen::VectorXi::Constant(d.size(), 1));
  for (int i = 0; i < d.size(); ++i) D.insert(i, i) = d[i];
  D.makeCompressed();
  return D;
}

inline SpMat diag_sparse(const RVec& d) { return diag_sparse(CVec(d.cast<Complex>())); }

inline SpMat identity(int n) { return diag_sparse(CVec(CVec::Ones(n))); }

/// Least-squares line y = c0 + c1 x with coefficient of determination.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
  double slope_stderr = 0.0;
  double rss = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InvalidArgument("fit_line: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0) throw InvalidArgument("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    f.rss += r * r;
  }
  f.r2 = syy > 0 ? 1.0 - f.rss / syy : 1.0;
  f.slope_stderr = n > 2 ? std::sqrt(f.rss / (n - 2) / sxx) : 0.0;
  return f;
}

}  // namespace magschro::linalg
