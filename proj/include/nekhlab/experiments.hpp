#pragma once

// Drift measurement, stability times, exponent fits and the scaling reduction
//
//   I = R I',  theta = theta',  G = R^p G',  t = R^(1-p) t',
//   G'(theta', I', t') = h_p(I') + R^-p V(theta', R^(1-p) t'),
//
// which turns a mechanical system with large actions into a slow system with
// eps = R^-p and c = (p-1)/p.

#include "nekhlab/integrate.hpp"
#include "nekhlab/parallel.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace nekhlab {

// ---------------------------------------------------------------------------
// Drift and exit times

/// sup over steps of max_i |I_i(t) - I_i(0)|, from the per-step extrema when
/// recorded and from the samples otherwise.
inline double measure_drift(const Trajectory& tr) {
  if (tr.samples.empty()) throw UsageError("measure_drift: empty trajectory");
  const Vec& I0 = tr.initial.action.size() ? tr.initial.action : tr.samples.front().action;
  double d = 0.0;
  if (tr.action_min.size() == I0.size() && tr.action_max.size() == I0.size())
    d = detail::drift_of(I0, tr.action_min, tr.action_max);
  for (const auto& s : tr.samples) d = std::max(d, max_norm(s.action - I0));
  return d;
}

struct ExitTime {
  /// exit time, or the horizon when censored
  double time = 0.0;
  bool censored = true;
};

struct StabilityTime {
  ExitTime forward;
  ExitTime backward;
};

/// First step time at which the drift exceeds `threshold`, in both time
/// directions; censored at T_max when it never does.
inline StabilityTime stability_time(const SlowSystem& sys, const State& s0, double threshold, double T_max,
                                    const StepperSpec& spec) {
  if (!(threshold > 0.0)) throw UsageError("stability_time: threshold must be positive");
  StabilityTime out;
  for (bool backward : {false, true}) {
    IntegrateOptions opt;
    opt.stride = std::numeric_limits<long long>::max();
    opt.backward = backward;
    if (std::isfinite(threshold)) {
      opt.exit_threshold = threshold;
      opt.stop_at_exit = true;
    }
    const Trajectory tr = integrate(sys, s0, T_max, spec, opt);
    ExitTime e{T_max, true};
    if (tr.exit_time) e = ExitTime{std::fabs(*tr.exit_time - s0.time), false};
    (backward ? out.backward : out.forward) = e;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drift scans

struct FixedT {
  double T = 1.0;
};

/// T = T0 eps^-q, capped at cap_steps steps.
struct PowerT {
  double T0 = 10.0;
  double q = 2.0;
  double cap_steps = 1e7;
};

using HorizonRule = std::variant<FixedT, PowerT>;

inline double horizon(const HorizonRule& rule, double eps, double dt) {
  if (auto* f = std::get_if<FixedT>(&rule)) return f->T;
  const auto& p = std::get<PowerT>(rule);
  return std::min(p.T0 * std::pow(eps, -p.q), p.cap_steps * dt);
}

struct DriftRecord {
  double epsilon = 0.0;
  double c = 0.0;
  std::uint64_t seed = 0;
  double T = 0.0;
  double dt = 0.0;
  double sup_drift = 0.0;
  /// first t with drift > threshold, or T when censored
  double exit_time = 0.0;
  bool censored = true;
  double threshold = 0.0;
  long long steps = 0;
  std::string method;
  /// non-empty when the run failed
  std::string error;
  Vec theta0;
  Vec action0;

  bool ok() const { return error.empty(); }
};

struct DriftScanOptions {
  std::optional<Method> method;
  std::optional<double> dt;
  double threshold = 0.1;
  unsigned jobs = 1;
};

/// Initial condition of a seed: I(0) uniform in the Euclidean ball B_{rho/2},
/// theta(0) uniform on T^n. The stream depends on the seed only, so runs at
/// different eps with the same seed start from the same point.
inline State initial_condition(const IntegrableH& h, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Vec I = rng.in_ball(h.dimension(), 0.5 * h.domain_radius());
  Vec th(h.dimension());
  for (Eigen::Index i = 0; i < th.size(); ++i) th[i] = rng.uniform();
  return State(AngleVector(th), ActionVector(I), 0.0);
}

inline DriftRecord run_drift_cell(const SlowSystem& family, double eps, std::uint64_t seed, const HorizonRule& rule,
                                  const DriftScanOptions& opt) {
  const SlowSystem sys = family.with_epsilon(eps);
  const State s0 = initial_condition(sys.h(), seed);
  DriftRecord r;
  r.epsilon = eps;
  r.c = sys.c();
  r.seed = seed;
  r.threshold = opt.threshold;
  r.theta0 = s0.theta.values();
  r.action0 = s0.action.values();
  r.dt = opt.dt ? *opt.dt : default_dt(sys.h(), s0.action.values());
  const Method m = opt.method ? *opt.method : default_method(sys.f());
  r.method = method_name(m);
  r.T = horizon(rule, eps, r.dt);
  try {
    IntegrateOptions io;
    io.stride = std::numeric_limits<long long>::max();
    io.exit_threshold = opt.threshold;
    const Trajectory tr = integrate(sys, s0, r.T, StepperSpec{m, r.dt}, io);
    r.sup_drift = measure_drift(tr);
    r.steps = tr.steps;
    r.censored = !tr.exit_time.has_value();
    r.exit_time = tr.exit_time ? *tr.exit_time : r.T;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.sup_drift = std::numeric_limits<double>::quiet_NaN();
    r.exit_time = r.T;
  }
  return r;
}

/// One record per (eps, seed) cell, ordered by eps index then seed index.
inline std::vector<DriftRecord> drift_scan(const SlowSystem& family, const std::vector<double>& eps_grid,
                                           const HorizonRule& rule, const std::vector<std::uint64_t>& seeds,
                                           const DriftScanOptions& opt = {}) {
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] > 0.0)) throw UsageError("drift_scan: eps values must be positive");
    if (i > 0 && !(eps_grid[i] < eps_grid[i - 1])) throw UsageError("drift_scan: eps grid must be decreasing");
  }
  std::vector<DriftRecord> out(eps_grid.size() * seeds.size());
  parallel_for(out.size(), opt.jobs, [&](std::size_t cell) {
    const std::size_t ei = cell / seeds.size();
    const std::size_t si = cell % seeds.size();
    out[cell] = run_drift_cell(family, eps_grid[ei], seeds[si], rule, opt);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Exponent fits

struct ExponentFit {
  /// (log x, log y)
  std::vector<std::pair<double, double>> points;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double residual_max = 0.0;
  /// mean drift per eps, in the order of `points`
  std::vector<double> mean_drift;
  std::vector<std::string> warnings;
};

/// Least-squares line through (log x, log y).
inline ExponentFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw UsageError("fit_loglog: size mismatch");
  ExponentFit fit;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) {
      fit.warnings.push_back("excluded non-positive point at x=" + fmt_double(xs[i]));
      continue;
    }
    fit.points.emplace_back(std::log(xs[i]), std::log(ys[i]));
  }
  if (fit.points.size() < 2) throw UsageError("fit_loglog: need at least two positive points");
  const double n = static_cast<double>(fit.points.size());
  double mx = 0, my = 0;
  for (auto [x, y] : fit.points) mx += x, my += y;
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (auto [x, y] : fit.points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw UsageError("fit_loglog: abscissae must not all coincide");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0;
  for (auto [x, y] : fit.points) {
    const double r = y - (fit.intercept + fit.slope * x);
    ssr += r * r;
    fit.residual_max = std::max(fit.residual_max, std::fabs(r));
  }
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
  return fit;
}

/// Slope of log(max-over-seeds drift) against log eps; the slope estimates b.
inline ExponentFit fit_exponent(const std::vector<DriftRecord>& records) {
  std::map<double, std::pair<double, std::pair<double, int>>> by_eps;  // eps -> (max, (sum, count))
  std::vector<std::string> warnings;
  for (const auto& r : records) {
    if (!r.ok() || !(r.sup_drift > 0.0)) {
      warnings.push_back("excluded record eps=" + fmt_double(r.epsilon) + " seed=" + std::to_string(r.seed) +
                         (r.ok() ? " (non-positive drift)" : " (" + r.error + ")"));
      continue;
    }
    auto& cell = by_eps[r.epsilon];
    cell.first = std::max(cell.first, r.sup_drift);
    cell.second.first += r.sup_drift;
    cell.second.second += 1;
  }
  if (by_eps.size() < 3) throw UsageError("fit_exponent: need at least 3 distinct eps values with positive drift");
  std::vector<double> xs, ys, means;
  for (const auto& [eps, cell] : by_eps) {
    xs.push_back(eps);
    ys.push_back(cell.first);
    means.push_back(cell.second.first / cell.second.second);
  }
  ExponentFit fit = fit_loglog(xs, ys);
  fit.mean_drift = std::move(means);
  fit.warnings.insert(fit.warnings.begin(), warnings.begin(), warnings.end());
  return fit;
}

// ---------------------------------------------------------------------------
// Reference exponents

enum class StabilityCase { ConvexAutonomous, PeriodicQuasiconvex, QuasiperiodicConjectural, Mechanical };

struct ExponentContext {
  int n = 2;
  StabilityCase kind = StabilityCase::ConvexAutonomous;
  /// Diophantine exponent, quasi-periodic case
  double tau = 0.0;
  /// power, mechanical case
  int p = 2;
};

struct ReferenceExponents {
  double a = std::numeric_limits<double>::quiet_NaN();
  double b = std::numeric_limits<double>::quiet_NaN();
  /// "reference", "conjectural" or "unknown"
  std::string status;
  /// mechanical case: a' = p a, b' = p b and the drift slope 1 - b'
  double a_prime = std::numeric_limits<double>::quiet_NaN();
  double b_prime = std::numeric_limits<double>::quiet_NaN();
  double slope_prediction = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

/// Informational table of literature exponents; never used as ground truth.
inline ReferenceExponents predicted_exponents(const ExponentContext& ctx) {
  if (ctx.n < 1) throw UsageError("predicted_exponents: n must be >= 1");
  const double n = ctx.n;
  ReferenceExponents r;
  switch (ctx.kind) {
    case StabilityCase::ConvexAutonomous:
      r.a = r.b = 1.0 / (2.0 * n);
      r.status = "reference";
      r.note = "convex or quasi-convex h, time-independent f";
      break;
    case StabilityCase::PeriodicQuasiconvex:
      r.a = r.b = 1.0 / (2.0 * (n + 1.0));
      r.status = "reference";
      r.note = "convex h, periodic time dependence (h + J is quasi-convex)";
      break;
    case StabilityCase::QuasiperiodicConjectural:
      if (ctx.tau < 0.0) throw UsageError("predicted_exponents: tau must be >= 0");
      r.a = r.b = 1.0 / (2.0 * (n + 1.0 + ctx.tau));
      r.status = "conjectural";
      r.note = "convex h, Diophantine quasi-periodic time dependence; open problem";
      break;
    case StabilityCase::Mechanical:
      if (ctx.p < 2) throw UsageError("predicted_exponents: p must be >= 2");
      if (ctx.p == 2) {
        r.a = r.b = 1.0 / (2.0 * n);
        r.status = "conjectural";
        r.a_prime = ctx.p * r.a;
        r.b_prime = ctx.p * r.b;
        r.slope_prediction = 1.0 - r.b_prime;
        r.note = "h_2 + V(theta,t): expected b = 1/(2n) gives |I(t)-I(0)| <= c1 R^(1-1/n)";
      } else {
        r.status = "unknown";
        r.note = "steep non-convex h_p: no realistic exponent values known";
      }
      break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Scaling reduction of mechanical systems

struct ScalingMap {
  double R = 1.0;
  int p = 2;
  /// R^-p
  double epsilon = 1.0;
  /// (p - 1)/p
  double c = 0.5;
  /// R^(1-p): t = time_factor * t'
  double time_factor = 1.0;
  /// R: I = action_factor * I'
  double action_factor = 1.0;
  /// a' = p a and b' = p b
  double exponent_factor = 2.0;

  double a_prime(double a) const { return exponent_factor * a; }
  double b_prime(double b) const { return exponent_factor * b; }
};

inline ScalingMap make_scaling_map(double R, int p) {
  if (!(R > 0.0) || !std::isfinite(R)) throw UsageError("scaling: R must be positive");
  if (p < 2) throw UsageError("scaling: p must be >= 2");
  ScalingMap m;
  m.R = R;
  m.p = p;
  m.epsilon = std::pow(R, -p);
  m.c = static_cast<double>(p - 1) / p;
  m.time_factor = std::pow(R, 1 - p);
  m.action_factor = R;
  m.exponent_factor = p;
  return m;
}

struct ScaledSystem {
  SlowSystem system;
  ScalingMap map;
};

/// G' = h_p + R^-p V(theta', R^(1-p) t') as a slow system on B_2.
inline ScaledSystem scale_mechanical(const MechanicalSystem& mech, double R) {
  const ScalingMap m = make_scaling_map(R, mech.p());
  SlowSystem sys(IntegrableH::power_law(mech.p(), mech.dimension(), 2.0), mech.potential(), m.epsilon, m.c, 1.0,
                 mech.s_width());
  return {std::move(sys), m};
}

struct ConjugacyReport {
  /// max over steps of max(|theta - theta'|, |I/R - I'|)
  double trajectory_deviation = 0.0;
  /// max relative residual of the pointwise vector-field identity
  double field_residual = 0.0;
  long long steps = 0;
};

/// Pointwise check of dtheta/dt = R^(p-1) dtheta'/dt' and dI/dt = R^p dI'/dt'
/// at `points` random (theta, I in B_R, t).
inline double scaling_field_residual(const MechanicalSystem& mech, double R, int points = 100,
                                     std::uint64_t seed = 7) {
  const ScaledSystem sc = scale_mechanical(mech, R);
  const SlowSystem G = mech.as_slow_system(2.0 * R);
  const double tf = sc.map.time_factor;
  const double theta_factor = std::pow(R, mech.p() - 1);
  const double action_factor = std::pow(R, mech.p());
  CounterRng rng(seed, static_cast<std::uint64_t>(mech.p()));
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    Vec th(mech.dimension());
    for (Eigen::Index j = 0; j < th.size(); ++j) th[j] = rng.uniform();
    const Vec I = rng.in_ball(mech.dimension(), R);
    const double t = rng.uniform(-5.0, 5.0);
    const VectorField f = vector_field_slow(G, State(AngleVector(th), ActionVector(I), t));
    const VectorField g = vector_field_slow(sc.system, State(AngleVector(th), ActionVector(Vec(I / R)), t / tf));
    for (Eigen::Index j = 0; j < th.size(); ++j) {
      worst = std::max(worst, std::fabs(f.d_theta[j] - theta_factor * g.d_theta[j]) / std::max(1.0, std::fabs(f.d_theta[j])));
      worst = std::max(worst, std::fabs(f.d_action[j] - action_factor * g.d_action[j]) / std::max(1.0, std::fabs(f.d_action[j])));
    }
  }
  return worst;
}

/// Integrates G' from (theta0, I0/R) over T' with step dt' and G from
/// (theta0, I0) over R^(1-p) T' with step R^(1-p) dt', in lockstep.
inline ConjugacyReport verify_scaling_conjugacy(const MechanicalSystem& mech, double R, const State& s0,
                                                double T_prime, const StepperSpec& spec) {
  if (s0.action.values().norm() > R * (1.0 + 1e-12)) throw UsageError("verify_scaling_conjugacy: need |I(0)| <= R");
  require_dim(s0.theta.size(), mech.dimension(), "verify_scaling_conjugacy");
  const ScaledSystem sc = scale_mechanical(mech, R);
  const SlowSystem G = mech.as_slow_system(2.0 * R);
  const double tf = sc.map.time_factor;
  const auto frame = is_splitting(spec.method) ? SlowStepper::Frame::Extended : SlowStepper::Frame::Direct;
  StepperSpec spec_g = spec;
  spec_g.dt = spec.dt * tf;
  SlowStepper step_p(sc.system, spec, frame);
  SlowStepper step_g(G, spec_g, frame);
  // both clocks start at t = t' = 0 (x = x' = 0)
  FlowState a{s0.theta.values(), Vec(s0.action.values() / R), CompensatedSum(0.0), 0.0};
  FlowState b{s0.theta.values(), s0.action.values(), CompensatedSum(0.0), 0.0};

  ConjugacyReport rep;
  const long long N = T_prime == 0.0 ? 0 : static_cast<long long>(std::ceil(T_prime / spec.dt * (1.0 - 1e-12)));
  for (long long k = 1; k <= N; ++k) {
    const double h = k < N ? spec.dt : T_prime - static_cast<double>(N - 1) * spec.dt;
    step_p.step(a, h, k);
    step_g.step(b, h * tf, k);
    rep.trajectory_deviation =
        std::max({rep.trajectory_deviation, angle_gap(a.theta, b.theta), max_norm(Vec(b.action / R - a.action))});
  }
  rep.steps = N;
  rep.field_residual = scaling_field_residual(mech, R);
  return rep;
}

struct Theorem2Row {
  double R = 1.0;
  int p = 2;
  double epsilon = 1.0;
  std::uint64_t seed = 0;
  double drift_scaled = 0.0;
  /// R * drift_scaled
  double drift_original = 0.0;
  double slope_prediction = std::numeric_limits<double>::quiet_NaN();
};

struct Theorem2Result {
  std::vector<Theorem2Row> rows;
  std::vector<DriftRecord> records;
  /// slope of log(max-over-seeds original drift) against log R
  ExponentFit fit;
  ReferenceExponents reference;
  /// set when the fit could not be formed
  std::vector<std::string> warnings;
};

/// Drift of G' for each R (eps = R^-p), reported in original variables.
inline Theorem2Result theorem2_experiment(const MechanicalSystem& mech, const std::vector<double>& R_grid,
                                          const std::vector<std::uint64_t>& seeds, const HorizonRule& rule,
                                          const DriftScanOptions& opt = {}) {
  if (R_grid.empty()) throw UsageError("theorem2_experiment: empty R grid");
  for (std::size_t i = 0; i < R_grid.size(); ++i) {
    if (!(R_grid[i] >= 1.0)) throw UsageError("theorem2_experiment: R values must be >= 1");
    if (i > 0 && !(R_grid[i] > R_grid[i - 1])) throw UsageError("theorem2_experiment: R grid must be increasing");
  }
  Theorem2Result out;
  out.reference = predicted_exponents({static_cast<int>(mech.dimension()), StabilityCase::Mechanical, 0.0, mech.p()});
  const SlowSystem family = scale_mechanical(mech, R_grid.front()).system;
  std::vector<double> eps_grid;
  for (double R : R_grid) eps_grid.push_back(make_scaling_map(R, mech.p()).epsilon);
  out.records = drift_scan(family, eps_grid, rule, seeds, opt);
  std::vector<double> xs, ys;
  for (std::size_t ri = 0; ri < R_grid.size(); ++ri) {
    double worst = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const DriftRecord& rec = out.records[ri * seeds.size() + si];
      Theorem2Row row;
      row.R = R_grid[ri];
      row.p = mech.p();
      row.epsilon = rec.epsilon;
      row.seed = rec.seed;
      row.drift_scaled = rec.sup_drift;
      row.drift_original = R_grid[ri] * rec.sup_drift;
      row.slope_prediction = out.reference.slope_prediction;
      if (rec.ok()) worst = std::max(worst, row.drift_original);
      out.rows.push_back(row);
    }
    xs.push_back(R_grid[ri]);
    ys.push_back(worst);
  }
  if (!seeds.empty() && R_grid.size() >= 2) {
    try {
      out.fit = fit_loglog(xs, ys);
    } catch (const UsageError& e) {
      out.warnings.emplace_back(e.what());
    }
  }
  return out;
}

}  // namespace nekhlab
