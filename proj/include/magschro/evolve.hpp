#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/SparseLU>
#include <json.hpp>

#include "magschro/linalg.hpp"
#include "magschro/magop.hpp"

namespace magschro {

/// Crank-Nicolson propagator u+ = (I - dt/2 A)^{-1} (I + dt/2 A) u with the
/// factorization kept for repeated steps.
class CayleyStepper {
 public:
  CayleyStepper(const GeneratorMatrix& gen, double dt) : dt_(dt), n_(gen.size()) {
    if (!(dt >= 0.0)) throw InvalidArgument("step: dt must be non-negative");
    if (dt == 0.0) return;
    const SpMat I = linalg::identity(n_);
    plus_ = I + (0.5 * dt) * gen.A;
    const SpMat minus = I - (0.5 * dt) * gen.A;
    lu_.analyzePattern(minus);
    lu_.factorize(minus);
    if (lu_.info() != Eigen::Success)
      throw NumericalError("step: factorization of I - dt/2 A failed (" + lu_.lastErrorMessage() + ")");
  }

  CVec operator()(const CVec& u) const {
    if (dt_ == 0.0) return u;
    CVec v = lu_.solve(plus_ * u);
    if (lu_.info() != Eigen::Success) throw NumericalError("step: solve failed");
    return v;
  }

  double dt() const { return dt_; }

 private:
  double dt_;
  int n_;
  SpMat plus_;
  mutable Eigen::SparseLU<SpMat> lu_;
};

/// One implicit-midpoint step.
inline CVec step(const GeneratorMatrix& gen, const CVec& u, double dt) {
  return CayleyStepper(gen, dt)(u);
}

struct ExpFit {
  double rate = 0.0;  // E ~ exp(-rate t)
  double intercept = 0.0;
  double r2 = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // 95% interval on the rate
  int points = 0;
};

struct LogFit {
  int k = 1;
  double C1_envelope = 0.0;  // max_n E_n ln^{4k}(2 + t_n)
  double C1_least_squares = 0.0;
  double r2 = 0.0;           // goodness of C / ln^{4k}(2+t) on the raw values
  double r2_log_shape = 0.0; // ln E against ln ln(2+t), free slope
  double r2_exponential = 0.0;
  bool exponential_dominates = false;
  bool envelope_holds = false;
};

struct EnergyTrace {
  std::string kind;
  std::vector<double> t;
  std::vector<double> energy;
  std::vector<double> dissipation;   // -D(u_n) <= 0
  std::vector<double> cum_residual;  // running sum of |E+ - E + dt D(mid)|
  std::optional<ExpFit> exponential;
  std::optional<LogFit> logarithmic;
  double mass_drift = 0.0;       // max relative change of ||u||_M
  double stiffness_drift = 0.0;  // max relative change of ||grad_a u||
  double max_step_increase = 0.0;
};

struct SimulationOptions {
  int snapshot_stride = 0;  // 0 keeps no snapshots
  bool abort_on_increase = true;
};

struct SimulationResult {
  EnergyTrace trace;
  std::vector<double> snapshot_times;
  std::vector<StateField> snapshots;  // node fields (eliminated nodes are zero)
};

inline double default_dt(const Grid& g) {
  double h = g.h(0);
  if (g.dim() == 2) h = std::min(h, g.h(1));
  return 0.25 * h * h;
}

/// Integrate u' = A u on [0, T] with Crank-Nicolson. `u0` lives on the
/// generator's unknowns.
inline SimulationResult simulate(const GeneratorMatrix& gen, const CVec& u0, double T, double dt,
                                 const SimulationOptions& opt = {}) {
  if (u0.size() != gen.size()) throw InvalidArgument("simulate: u0 has the wrong size");
  if (!(T >= 0.0) || !(dt > 0.0)) throw InvalidArgument("simulate: need T >= 0 and dt > 0");
  const long steps = std::lround(T / dt);
  if (std::abs(steps * dt - T) > 1e-9 * std::max(1.0, T))
    throw InvalidArgument("simulate: T must be a multiple of dt");
  CayleyStepper stepper(gen, dt);

  SimulationResult res;
  EnergyTrace& tr = res.trace;
  tr.kind = to_string(gen.kind);
  CVec u = u0;
  const double E0 = gen.energy(u);
  const double m0 = std::sqrt(2.0 * gen.half_mass_norm2(u));
  const double s0 = std::sqrt(2.0 * gen.half_stiffness_norm2(u));
  auto record = [&](double t, double E, double cum) {
    tr.t.push_back(t);
    tr.energy.push_back(E);
    tr.dissipation.push_back(-gen.dissipation(u));
    tr.cum_residual.push_back(cum);
  };
  auto snapshot = [&](long n) {
    if (opt.snapshot_stride > 0 && n % opt.snapshot_stride == 0) {
      res.snapshot_times.push_back(n * dt);
      res.snapshots.push_back(gen.dofs.extend(u));
    }
  };
  double cum = 0.0;
  double E = E0;
  record(0.0, E, 0.0);
  snapshot(0);
  for (long n = 0; n < steps; ++n) {
    const CVec next = stepper(u);
    const double En = gen.energy(next);
    const double D = gen.dissipation(CVec(0.5 * (u + next)));
    cum += std::abs(En - E + dt * D);
    if (gen.dissipative()) {
      const double inc = En - E;
      tr.max_step_increase = std::max(tr.max_step_increase, inc);
      if (opt.abort_on_increase && inc > dt * dt * E0)
        throw NumericalError("simulate: energy increased by " + std::to_string(inc) +
                             " at step " + std::to_string(n + 1));
    }
    u = next;
    E = En;
    const double m = std::sqrt(2.0 * gen.half_mass_norm2(u));
    const double s = std::sqrt(2.0 * gen.half_stiffness_norm2(u));
    if (m0 > 0) tr.mass_drift = std::max(tr.mass_drift, std::abs(m - m0) / m0);
    if (s0 > 0) tr.stiffness_drift = std::max(tr.stiffness_drift, std::abs(s - s0) / s0);
    record((n + 1) * dt, E, cum);
    snapshot(n + 1);
  }
  if (opt.snapshot_stride > 0 && steps % opt.snapshot_stride != 0) {
    res.snapshot_times.push_back(steps * dt);
    res.snapshots.push_back(gen.dofs.extend(u));
  }
  return res;
}

/// Least-squares slope of ln E on [t0, t1].
inline ExpFit fit_exponential(const EnergyTrace& tr, double t0, double t1) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    if (tr.t[i] < t0 - 1e-12 || tr.t[i] > t1 + 1e-12) continue;
    if (!(tr.energy[i] > 0.0))
      throw InvalidArgument("fit_exponential: non-positive energy in the window");
    x.push_back(tr.t[i]);
    y.push_back(std::log(tr.energy[i]));
  }
  const auto lf = linalg::fit_line(x, y);
  ExpFit f;
  f.rate = -lf.slope;
  f.intercept = lf.intercept;
  f.r2 = lf.r2;
  f.ci_low = f.rate - 1.96 * lf.slope_stderr;
  f.ci_high = f.rate + 1.96 * lf.slope_stderr;
  f.points = static_cast<int>(x.size());
  return f;
}

inline ExpFit fit_exponential(const EnergyTrace& tr) {
  return fit_exponential(tr, tr.t.front(), tr.t.back());
}

/// Energy model C / ln^{4k}(2 + t): the bound of order ln^{-2k} on the state
/// norm, squared. C1_envelope is the smallest C making it an upper bound on
/// every sample.
inline LogFit fit_log_decay(const EnergyTrace& tr, int k) {
  if (k < 1) throw InvalidArgument("fit_log_decay: k must be at least 1");
  LogFit f;
  f.k = k;
  const std::size_t n = tr.t.size();
  if (n < 2) throw InvalidArgument("fit_log_decay: need at least two samples");
  double num = 0, den = 0, mean = 0;
  std::vector<double> L(n);
  for (std::size_t i = 0; i < n; ++i) {
    L[i] = std::pow(std::log(2.0 + tr.t[i]), 4.0 * k);
    f.C1_envelope = std::max(f.C1_envelope, tr.energy[i] * L[i]);
    num += tr.energy[i] / L[i];
    den += 1.0 / (L[i] * L[i]);
    mean += tr.energy[i];
  }
  mean /= n;
  f.C1_least_squares = num / den;
  double rss = 0, tss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = tr.energy[i] - f.C1_least_squares / L[i];
    rss += r * r;
    tss += (tr.energy[i] - mean) * (tr.energy[i] - mean);
  }
  f.r2 = tss > 0 ? 1.0 - rss / tss : 1.0;
  f.envelope_holds = true;
  for (std::size_t i = 0; i < n; ++i)
    if (tr.energy[i] > f.C1_envelope / L[i] * (1 + 1e-12)) f.envelope_holds = false;
  bool positive = true;
  for (double e : tr.energy) positive = positive && e > 0;
  if (positive) {
    std::vector<double> x, lx, y;
    for (std::size_t i = 0; i < n; ++i) {
      x.push_back(tr.t[i]);
      lx.push_back(std::log(std::log(2.0 + tr.t[i])));
      y.push_back(std::log(tr.energy[i]));
    }
    f.r2_exponential = linalg::fit_line(x, y).r2;
    f.r2_log_shape = linalg::fit_line(lx, y).r2;
    f.exponential_dominates = f.r2_exponential > f.r2_log_shape;
  }
  return f;
}

/// u0 = A^{-k} v, an initial state in the domain of A^k.
inline CVec smooth_initial_state(const GeneratorMatrix& gen, const CVec& v, int k) {
  if (k < 0) throw InvalidArgument("smooth_initial_state: k must be non-negative");
  if (k == 0) return v;
  Eigen::SparseLU<SpMat> lu;
  lu.compute(gen.A);
  if (lu.info() != Eigen::Success) throw NumericalError("smooth_initial_state: A is singular");
  CVec u = v;
  for (int i = 0; i < k; ++i) u = lu.solve(u);
  return u;
}

inline void write_energy_csv(std::ostream& os, const EnergyTrace& tr) {
  os << "t,energy,dissipation,cum_residual\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < tr.t.size(); ++i)
    os << tr.t[i] << ',' << tr.energy[i] << ',' << tr.dissipation[i] << ','
       << tr.cum_residual[i] << '\n';
}

/// Binary record: per snapshot one float64 time followed by re/im float64
/// pairs for every node. The sidecar names the layout.
inline nlohmann::json write_trajectory(const std::string& path, const std::vector<double>& times,
                                       const std::vector<StateField>& snaps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  const int nodes = snaps.empty() ? 0 : static_cast<int>(snaps.front().size());
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    const double t = times[s];
    os.write(reinterpret_cast<const char*>(&t), sizeof(double));
    for (int k = 0; k < nodes; ++k) {
      const double re = snaps[s][k].real(), im = snaps[s][k].imag();
      os.write(reinterpret_cast<const char*>(&re), sizeof(double));
      os.write(reinterpret_cast<const char*>(&im), sizeof(double));
    }
  }
  return {{"format", "float64-native"},
          {"layout", "per snapshot: t, then (re, im) for each node"},
          {"nodes", nodes},
          {"snapshots", snaps.size()}};
}

inline std::pair<std::vector<double>, std::vector<StateField>> read_trajectory(
    const std::string& path, int nodes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::vector<double> times;
  std::vector<StateField> snaps;
  double t;
  while (is.read(reinterpret_cast<char*>(&t), sizeof(double))) {
    StateField u(nodes);
    for (int k = 0; k < nodes; ++k) {
      double re, im;
      is.read(reinterpret_cast<char*>(&re), sizeof(double));
      is.read(reinterpret_cast<char*>(&im), sizeof(double));
      u[k] = Complex(re, im);
    }
    if (!is) throw Error("truncated trajectory " + path);
    times.push_back(t);
    snaps.push_back(u);
  }
  return {times, snaps};
}

}  // namespace magschro
