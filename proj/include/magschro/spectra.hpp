#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "magschro/linalg.hpp"
#include "magschro/magop.hpp"

namespace magschro {

namespace detail {

/// Applies G^{-1}: a diagonal inverse for mass inner products, a sparse
/// Cholesky solve for the stiffness inner product of A2.
class GramInverse {
 public:
  explicit GramInverse(const GeneratorMatrix& gen) : kind_(gen.kind), mass_(gen.mass) {
    if (kind_ == GenKind::A2) {
      ldlt_.compute(gen.G);
      if (ldlt_.info() != Eigen::Success) throw NumericalError("stiffness factorization failed");
    }
  }
  CVec operator()(const CVec& x) const {
    if (kind_ == GenKind::A2) return ldlt_.solve(x);
    return x.cwiseQuotient(mass_.cast<Complex>());
  }

 private:
  GenKind kind_;
  RVec mass_;
  Eigen::SimplicialLDLT<SpMat> ldlt_;
};

}  // namespace detail

/// Sparse LU of A - i mu I with the symbolic analysis done once.
class ShiftedSolver {
 public:
  explicit ShiftedSolver(const GeneratorMatrix& gen) : gen_(gen) {
    shifted_ = gen.A + linalg::identity(gen.size());  // pattern with full diagonal
    shifted_.makeCompressed();
    lu_.analyzePattern(shifted_);
  }

  void factor(double mu) {
    shifted_ = gen_.A - Complex(0, mu) * linalg::identity(gen_.size());
    shifted_.makeCompressed();
    lu_.factorize(shifted_);
    if (lu_.info() != Eigen::Success)
      throw NumericalError("resolvent: A - i mu is singular at mu = " + std::to_string(mu));
    mu_ = mu;
  }

  CVec solve(const CVec& g) const { return lu_.solve(g); }
  CVec solve_adjoint(const CVec& g) const { return lu_.adjoint().solve(g); }
  const SpMat& shifted() const { return shifted_; }
  double mu() const { return mu_; }

 private:
  const GeneratorMatrix& gen_;
  SpMat shifted_;
  mutable Eigen::SparseLU<SpMat> lu_;
  double mu_ = std::numeric_limits<double>::quiet_NaN();
};

struct ResolventSolution {
  CVec u;
  double residual = 0.0;           // ||(A - i mu) u - g|| / ||g||
  double identity_real = 0.0;      // relative residuals of the energy balance
  double identity_imag = 0.0;
  double energy_term = 0.0;        // ||grad_a u||^2 (A2: ||Delta_a u||^2 in M)
  double dissipation_term = 0.0;   // ||sqrt c u||^2 or boundary analogue
  double norm2 = 0.0;              // ||u||_G^2
  Complex pairing = 0.0;           // (-i g | u)_G
};

/// Residuals of -E + i D - mu ||u||^2 = (-i g | u) obtained by pairing the
/// resolvent equation with u in the generator's inner product.
inline void resolvent_identities(const GeneratorMatrix& gen, double mu, const CVec& g,
                                 ResolventSolution& s) {
  const CVec& u = s.u;
  if (gen.kind == GenKind::A2) {
    const CVec z = gen.Z * u;
    s.energy_term = gen.mass.dot(z.cwiseAbs2());
  } else {
    s.energy_term = std::real(u.dot(gen.K * u));
  }
  s.dissipation_term = gen.dissipation(u);
  s.norm2 = std::real(u.dot(gen.G * u));
  s.pairing = u.dot(gen.G * CVec(-kI * g));
  const double scale = std::max({s.energy_term, std::abs(mu) * s.norm2, std::abs(s.pairing),
                                 s.dissipation_term, 1e-300});
  s.identity_real = std::abs(-s.energy_term - mu * s.norm2 - s.pairing.real()) / scale;
  s.identity_imag = std::abs(s.dissipation_term - s.pairing.imag()) / scale;
}

inline ResolventSolution resolvent_solve(const GeneratorMatrix& gen, double mu, const CVec& g) {
  if (g.size() != gen.size()) throw InvalidArgument("resolvent_solve: g has the wrong size");
  ResolventSolution s;
  if (g.norm() == 0.0) {
    s.u = CVec::Zero(gen.size());
    return s;
  }
  ShiftedSolver solver(gen);
  solver.factor(mu);
  s.u = solver.solve(g);
  s.residual = (solver.shifted() * s.u - g).norm() / g.norm();
  if (!(s.residual <= 1e-10)) {
    const double cond = linalg::norm1(solver.shifted()) * s.u.norm() / g.norm();
    throw NumericalError("resolvent_solve: residual " + std::to_string(s.residual) +
                         ", condition estimate " + std::to_string(cond));
  }
  resolvent_identities(gen, mu, g, s);
  return s;
}

/// ||(A - i mu)^{-1}|| in the G inner product: square root of the largest
/// eigenvalue of R^* R, R^* = G^{-1} R^H G, by Lanczos in the G inner product.
inline double resolvent_norm(const GeneratorMatrix& gen, ShiftedSolver& solver,
                             const detail::GramInverse& ginv, double mu, int* iterations = nullptr) {
  solver.factor(mu);
  auto op = [&](const CVec& x) -> CVec {
    const CVec y = solver.solve(x);
    return ginv(solver.solve_adjoint(gen.G * y));
  };
  auto gram = [&](const CVec& x) -> CVec { return gen.G * x; };
  const auto ritz = linalg::lanczos_extreme(op, gram, gen.size(), true, 1e-11, 4000);
  if (!ritz.converged)
    throw NumericalError("resolvent_norm: Lanczos did not converge (" + linalg::describe(ritz) + ")");
  if (iterations) *iterations = ritz.iterations;
  return std::sqrt(ritz.value);
}

struct GrowthFit {
  bool valid = false;
  double C = 0.0;
  double K = 0.0;
  double r2 = 0.0;
};

struct ResolventScan {
  std::vector<double> mu;
  std::vector<double> norm;       // NaN where the point failed
  std::vector<std::string> error; // empty on success
  std::vector<double> fit_residual;
  GrowthFit sqrt_fit;   // C exp(K sqrt|mu|)
  double p_hat = 0.0;   // free exponent in C exp(K |mu|^p)
  double p_K = 0.0;
  double p_C = 0.0;
  std::string fit_note;
  std::string resolution;
};

namespace detail {

inline GrowthFit fit_growth(const std::vector<double>& mu, const std::vector<double>& nr, double p) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(nr[i]) || nr[i] <= 0) continue;
    x.push_back(std::pow(std::abs(mu[i]), p));
    y.push_back(std::log(nr[i]));
  }
  GrowthFit f;
  if (x.size() < 2) return f;
  double lo = x[0], hi = x[0];
  for (double v : x) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi - lo <= 1e-14 * std::max(1.0, hi)) return f;
  const auto lf = linalg::fit_line(x, y);
  f.valid = true;
  f.C = std::exp(lf.intercept);
  f.K = lf.slope;
  f.r2 = lf.r2;
  return f;
}

inline double growth_rss(const std::vector<double>& mu, const std::vector<double>& nr, double p) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(nr[i]) || nr[i] <= 0) continue;
    x.push_back(std::pow(std::abs(mu[i]), p));
    y.push_back(std::log(nr[i]));
  }
  return linalg::fit_line(x, y).rss;
}

}  // namespace detail

/// Fits log ||R|| = log C + K sqrt|mu| and the free exponent p in [0, 2].
/// When the best free fit predicts no growth across the window, p_hat = 0.
inline void fit_scan(ResolventScan& s) {
  int good = 0;
  for (double v : s.norm) good += std::isfinite(v) && v > 0;
  s.sqrt_fit = detail::fit_growth(s.mu, s.norm, 0.5);
  if (good < 2 || !s.sqrt_fit.valid) {
    s.fit_note = "fit refused: fewer than two distinct |mu| values";
    s.sqrt_fit.valid = false;
    return;
  }
  const double pmin = 0.02, pmax = 2.0;
  double best_p = pmin, best = std::numeric_limits<double>::infinity();
  const int coarse = 100;
  for (int i = 0; i <= coarse; ++i) {
    const double p = pmin + (pmax - pmin) * i / coarse;
    const double r = detail::growth_rss(s.mu, s.norm, p);
    if (r < best) best = r, best_p = p;
  }
  double a = std::max(pmin, best_p - (pmax - pmin) / coarse);
  double b = std::min(pmax, best_p + (pmax - pmin) / coarse);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), d = a + gr * (b - a);
  for (int it = 0; it < 60; ++it) {
    if (detail::growth_rss(s.mu, s.norm, c) < detail::growth_rss(s.mu, s.norm, d))
      b = d;
    else
      a = c;
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  const double p = 0.5 * (a + b);
  const auto f = detail::fit_growth(s.mu, s.norm, p);
  s.p_K = f.K;
  s.p_C = f.C;
  double xmax = 0.0;
  for (std::size_t i = 0; i < s.mu.size(); ++i)
    if (std::isfinite(s.norm[i])) xmax = std::max(xmax, std::pow(std::abs(s.mu[i]), p));
  // growth below 1e-8 in log-norm across the window counts as none
  if (f.K * xmax <= 1e-8) {
    s.p_hat = 0.0;
    s.fit_note = "no growth detected";
  } else {
    s.p_hat = p;
  }
  s.fit_residual.assign(s.mu.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < s.mu.size(); ++i)
    if (std::isfinite(s.norm[i]))
      s.fit_residual[i] = std::log(s.norm[i]) - std::log(s.sqrt_fit.C) -
                          s.sqrt_fit.K * std::sqrt(std::abs(s.mu[i]));
}

/// Resolvent norms on a mu grid. Each worker keeps its own factorization;
/// per-point failures are recorded and the scan continues.
inline ResolventScan scan_resolvent(const GeneratorMatrix& gen, const std::vector<double>& mu_grid,
                                    int jobs = 1) {
  ResolventScan s;
  s.mu = mu_grid;
  const std::size_t n = mu_grid.size();
  s.norm.assign(n, std::numeric_limits<double>::quiet_NaN());
  s.error.assign(n, "");
  const detail::GramInverse ginv(gen);
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  auto work = [&](int w) {
    ShiftedSolver solver(gen);
    for (std::size_t i = w; i < n; i += jobs) {
      try {
        s.norm[i] = resolvent_norm(gen, solver, ginv, mu_grid[i]);
      } catch (const std::exception& e) {
        s.error[i] = e.what();
      }
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  fit_scan(s);
  return s;
}

inline void write_scan_csv(std::ostream& os, const ResolventScan& s) {
  os << "mu,norm,fit_residual\n" << std::setprecision(17);
  for (std::size_t i = 0; i < s.mu.size(); ++i)
    os << s.mu[i] << ',' << s.norm[i] << ','
       << (i < s.fit_residual.size() ? s.fit_residual[i] : std::numeric_limits<double>::quiet_NaN())
       << '\n';
}

inline nlohmann::json scan_summary(const ResolventScan& s) {
  nlohmann::json j;
  j["points"] = s.mu.size();
  int failed = 0;
  double maxn = 0;
  for (std::size_t i = 0; i < s.mu.size(); ++i) {
    failed += !s.error[i].empty();
    if (std::isfinite(s.norm[i])) maxn = std::max(maxn, s.norm[i]);
  }
  j["failed"] = failed;
  j["max_norm"] = maxn;
  j["fit_valid"] = s.sqrt_fit.valid;
  j["C_hat"] = s.sqrt_fit.C;
  j["K_hat"] = s.sqrt_fit.K;
  j["r2"] = s.sqrt_fit.r2;
  j["p_hat"] = s.p_hat;
  j["note"] = s.fit_note;
  j["resolution"] = s.resolution;
  return j;
}

// ---------------------------------------------------------------------------
// Hautus sweep.

struct HautusReport {
  std::vector<double> mu;
  std::vector<double> aleph0;
  /// frontier[i][j]: minimal aleph1 at (mu_i, aleph0_j); NaN if infeasible.
  std::vector<std::vector<double>> frontier;
  bool feasible = false;
  double global_aleph0 = std::numeric_limits<double>::quiet_NaN();
  double global_aleph1 = std::numeric_limits<double>::quiet_NaN();
  std::string certificate;  // why no global pair exists
  bool monotone = true;
};

/// Minimal aleph1 with ||u||^2 <= aleph0 ||(A0 - i mu) u||^2 + aleph1 ||u||_omega^2
/// on every state, for each (mu, aleph0). A0 is normal in M, so the test
/// runs in its M-orthonormal eigenbasis where the first form is diagonal.
inline HautusReport hautus_sweep(const GeneratorMatrix& gen, const NodeSet& omega,
                                 const std::vector<double>& mu_grid,
                                 std::vector<double> aleph0_grid, int bisection_steps = 16) {
  if (gen.kind != GenKind::A0) throw InvalidArgument("hautus_sweep: needs the A0 generator");
  if (omega.empty()) throw InvalidArgument("hautus_sweep: omega is empty");
  if (aleph0_grid.empty()) throw InvalidArgument("hautus_sweep: empty aleph0 grid");
  std::sort(aleph0_grid.begin(), aleph0_grid.end());
  const int n = gen.size();
  RVec ind = RVec::Zero(n);
  for (int k : omega) {
    const int r = gen.dofs.node_to_dof.at(k);
    if (r >= 0) ind[r] = 1.0;
  }
  const bool covers = ind.minCoeff() == 1.0;
  const auto pencil = linalg::hermitian_pencil_diag(CMat(gen.K), gen.mass);
  const CMat& V = pencil.vectors;
  const CMat W = V.adjoint() * gen.mass.cwiseProduct(ind).asDiagonal() * V;

  HautusReport rep;
  rep.mu = mu_grid;
  rep.aleph0 = aleph0_grid;
  rep.frontier.assign(mu_grid.size(), std::vector<double>(aleph0_grid.size(),
                                                          std::numeric_limits<double>::quiet_NaN()));
  const double cap = 1e12;
  for (std::size_t i = 0; i < mu_grid.size(); ++i) {
    RVec dist2(n);
    for (int k = 0; k < n; ++k) {
      const double d = pencil.values[k] + mu_grid[i];
      dist2[k] = d * d;
    }
    auto feasible = [&](double a0, double a1) {
      CMat H = a1 * W;
      H.diagonal() += (a0 * dist2).cast<Complex>();
      Eigen::SelfAdjointEigenSolver<CMat> es(H, Eigen::EigenvaluesOnly);
      return es.eigenvalues()[0] >= 1.0;
    };
    double hi = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 0; j < aleph0_grid.size(); ++j) {
      const double a0 = aleph0_grid[j];
      if (a0 == 0.0) {
        if (covers) rep.frontier[i][j] = 1.0;
        continue;
      }
      if (feasible(a0, 0.0)) {
        rep.frontier[i][j] = 0.0;
        continue;
      }
      if (std::isnan(hi)) {
        double t = 1.0;
        while (t <= cap && !feasible(a0, t)) t *= 2.0;
        if (t > cap) continue;
        hi = t;
      }
      double lo = 0.0, up = hi;
      for (int s = 0; s < bisection_steps; ++s) {
        const double mid = 0.5 * (lo + up);
        if (feasible(a0, mid))
          up = mid;
        else
          lo = mid;
      }
      rep.frontier[i][j] = up;
    }
  }
  for (const auto& row : rep.frontier) {
    double prev = std::numeric_limits<double>::infinity();
    for (double v : row) {
      const double cur = std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
      if (cur > prev) rep.monotone = false;
      prev = cur;
    }
  }
  for (std::size_t j = 0; j < aleph0_grid.size(); ++j) {
    double env = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < mu_grid.size(); ++i) {
      if (std::isnan(rep.frontier[i][j])) {
        ok = false;
        break;
      }
      env = std::max(env, rep.frontier[i][j]);
    }
    if (ok) {
      rep.feasible = true;
      rep.global_aleph0 = aleph0_grid[j];
      rep.global_aleph1 = env;
      break;
    }
  }
  if (!rep.feasible) {
    for (std::size_t i = 0; i < mu_grid.size(); ++i)
      if (std::isnan(rep.frontier[i].back())) {
        rep.certificate = "infeasible at mu = " + std::to_string(mu_grid[i]) +
                          " for aleph0 = " + std::to_string(aleph0_grid.back()) +
                          " even with aleph1 = 1e12";
        break;
      }
  }
  return rep;
}

inline nlohmann::json to_json(const HautusReport& r) {
  nlohmann::json j;
  j["mu"] = r.mu;
  j["aleph0"] = r.aleph0;
  nlohmann::json fr = nlohmann::json::array();
  for (const auto& row : r.frontier) {
    nlohmann::json jr = nlohmann::json::array();
    for (double v : row) jr.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    fr.push_back(jr);
  }
  j["frontier"] = fr;
  j["feasible"] = r.feasible;
  j["monotone"] = r.monotone;
  if (r.feasible) {
    j["aleph0_global"] = r.global_aleph0;
    j["aleph1_global"] = r.global_aleph1;
  } else {
    j["certificate"] = r.certificate;
  }
  return j;
}

}  // namespace magschro
