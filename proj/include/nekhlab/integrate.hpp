#pragma once

// Fixed-step symplectic integration of slow systems.
//
// Two engines share one code path: the direct (non-autonomous) flow of
// H(theta, I, t), whose clock is t and whose envelope argument is eps^c t,
// and the slow-time extended flow of H~(theta, I, x, y), whose clock is x and
// whose envelope argument is x itself. Splitting methods only ever run on the
// extended flow.

#include "nekhlab/autonomize.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace nekhlab {

enum class Method { SplitYoshida4, SplitYoshida6, ImplicitMidpoint };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::SplitYoshida4: return "yoshida4";
    case Method::SplitYoshida6: return "yoshida6";
    case Method::ImplicitMidpoint: return "midpoint";
  }
  return "midpoint";
}

inline Method parse_method(const std::string& s) {
  if (s == "yoshida4") return Method::SplitYoshida4;
  if (s == "yoshida6") return Method::SplitYoshida6;
  if (s == "midpoint") return Method::ImplicitMidpoint;
  throw UsageError("unknown stepper method '" + s + "'");
}

inline bool is_splitting(Method m) { return m != Method::ImplicitMidpoint; }

struct StepperSpec {
  Method method = Method::ImplicitMidpoint;
  double dt = 1e-2;
  double newton_tol = 1e-13;
  int max_iters = 50;
};

/// 1e-2 * min(1, 1/|grad h(I0)|)
inline double default_dt(const IntegrableH& h, const Vec& I0) {
  const double g = h.gradient(I0).norm();
  return 1e-2 * std::min(1.0, g > 0.0 ? 1.0 / g : 1.0);
}

/// Splitting for I-dependent f is not available; the midpoint rule is.
inline Method default_method(const Perturbation& f) {
  return f.action_independent() ? Method::SplitYoshida4 : Method::ImplicitMidpoint;
}

namespace detail {

/// Triple-jump weights raising a symmetric method of order `order` by two.
inline std::array<double, 2> triple_jump(int order) {
  const double r = std::pow(2.0, 1.0 / (order + 1));
  const double w1 = 1.0 / (2.0 - r);
  return {w1, 1.0 - 2.0 * w1};
}

/// Strang sub-step weights of the composed method of order 4, 6 or 8.
inline std::vector<double> composition_weights(int order) {
  std::vector<double> w{1.0};
  for (int o = 2; o < order; o += 2) {
    const auto [a, b] = triple_jump(o);
    std::vector<double> next;
    next.reserve(w.size() * 3);
    for (double c : {a, b, a})
      for (double v : w) next.push_back(c * v);
    w = std::move(next);
  }
  return w;
}

}  // namespace detail

/// Phase-space point plus the compensated clock (t for direct flows, x for
/// extended ones).
struct FlowState {
  Vec theta;
  Vec action;
  CompensatedSum clock;
  double y = 0.0;
};

/// One-step maps for a SlowSystem. Holds scratch buffers; not thread-safe,
/// cheap to copy.
class SlowStepper {
 public:
  enum class Frame { Direct, Extended };

  SlowStepper(const SlowSystem& sys, StepperSpec spec, Frame frame)
      : sys_(&sys), spec_(spec), frame_(frame) {
    if (!(spec.dt > 0.0) || !std::isfinite(spec.dt)) throw UsageError("StepperSpec: dt must be positive");
    if (is_splitting(spec.method)) {
      if (frame == Frame::Direct) throw UsageError("splitting methods run on the autonomized (extended) system only");
      if (!sys.f().action_independent())
        throw UsageError("splitting requires I-independent perturbation modes; use the implicit midpoint method");
      weights_ = detail::composition_weights(spec.method == Method::SplitYoshida4 ? 4 : 6);
    }
    const Eigen::Index n = sys.dimension();
    grad_.resize(n);
    dth_.resize(n);
    dI_.resize(n);
    thm_.resize(n);
    Im_.resize(n);
  }

  /// Order-8 composition, only used by verification oracles.
  static SlowStepper reference8(const SlowSystem& sys, double dt) {
    SlowStepper s(sys, StepperSpec{Method::SplitYoshida4, dt}, Frame::Extended);
    s.weights_ = detail::composition_weights(8);
    return s;
  }

  const StepperSpec& spec() const { return spec_; }
  Frame frame() const { return frame_; }

  /// Envelope argument for a clock reading.
  double tau_of(double clock) const { return frame_ == Frame::Direct ? sys_->slow_rate() * clock : clock; }
  double clock_speed() const { return frame_ == Frame::Direct ? 1.0 : sys_->slow_rate(); }

  /// Advances by signed step h. Returns the number of nonlinear iterations used.
  int step(FlowState& s, double h, long long step_index = 0) {
    if (is_splitting(spec_.method)) {
      step_split(s, h);
      return 0;
    }
    return step_midpoint(s, h, step_index);
  }

 private:
  void step_split(FlowState& s, double h) {
    const SlowSystem& sys = *sys_;
    const double eps = sys.epsilon();
    const double c0 = s.clock.value();
    const double speed = clock_speed();
    double off = 0.0;
    sys.h().gradient(s.action, grad_);
    for (double w : weights_) {
      const double hw = w * h;
      s.theta.noalias() += (0.5 * hw) * grad_;
      off += 0.5 * hw;
      sys.f().evaluate(s.theta, s.action, tau_of(c0 + speed * off), fe_);
      s.action.noalias() -= (hw * eps) * fe_.d_theta;
      s.y -= hw * eps * fe_.d_tau;
      sys.h().gradient(s.action, grad_);
      s.theta.noalias() += (0.5 * hw) * grad_;
      off += 0.5 * hw;
    }
    s.clock.add(speed * h);
    reduce_angles(s.theta);
  }

  /// Field at the midpoint (thm_, Im_, tau) into dth_/dI_ (unscaled by h).
  void midpoint_field(double tau) {
    const SlowSystem& sys = *sys_;
    sys.f().evaluate(thm_, Im_, tau, fe_);
    sys.h().gradient(Im_, dth_);
    dth_.noalias() += sys.epsilon() * fe_.d_action;
    dI_.noalias() = -sys.epsilon() * fe_.d_theta;
  }

  int step_midpoint(FlowState& s, double h, long long step_index) {
    const Eigen::Index n = s.theta.size();
    const double tau = tau_of(s.clock.value() + 0.5 * h * clock_speed());
    Vec dTheta(n), dAct(n);
    // explicit guess at the midpoint time
    thm_ = s.theta;
    Im_ = s.action;
    midpoint_field(tau);
    dTheta = h * dth_;
    dAct = h * dI_;

    auto residual = [&]() {
      thm_ = s.theta + 0.5 * dTheta;
      Im_ = s.action + 0.5 * dAct;
      midpoint_field(tau);
      return std::max(max_norm(dTheta - h * dth_), max_norm(dAct - h * dI_));
    };

    const int fixed_point_limit = spec_.max_iters / 2;
    double res = residual();
    double prev = std::numeric_limits<double>::infinity();
    int it = 0;
    bool newton = false;
    while (!(res <= spec_.newton_tol)) {
      if (it >= fixed_point_limit || (it > 3 && res > 0.5 * prev)) {
        newton = true;
        break;
      }
      dTheta = h * dth_;
      dAct = h * dI_;
      prev = res;
      res = residual();
      ++it;
    }
    if (!newton) {
      // one more contraction using the field already evaluated at the accepted midpoint
      dTheta = h * dth_;
      dAct = h * dI_;
    } else {
      Vec z(2 * n), g(2 * n), zp(2 * n);
      Mat J(2 * n, 2 * n);
      auto eval_g = [&](const Vec& zz, Vec& out) {
        thm_ = s.theta + 0.5 * zz.head(n);
        Im_ = s.action + 0.5 * zz.tail(n);
        midpoint_field(tau);
        out.head(n) = zz.head(n) - h * dth_;
        out.tail(n) = zz.tail(n) - h * dI_;
      };
      z << dTheta, dAct;
      for (int k = 0; k < spec_.max_iters; ++k) {
        eval_g(z, g);
        res = max_norm(g);
        if (res <= spec_.newton_tol) break;
        for (Eigen::Index j = 0; j < 2 * n; ++j) {
          const double d = 1e-7 * std::max(1.0, std::fabs(z[j]));
          Vec gp(2 * n), gm(2 * n);
          zp = z;
          zp[j] += d;
          eval_g(zp, gp);
          zp[j] = z[j] - d;
          eval_g(zp, gm);
          J.col(j) = (gp - gm) / (2.0 * d);
        }
        z -= J.partialPivLu().solve(g);
        ++it;
      }
      if (!(res <= spec_.newton_tol))
        throw IntegrationError("implicit midpoint: no convergence, residual " + fmt_double(res), step_index, res);
      // leave the converged midpoint field in fe_
      eval_g(z, g);
      dTheta = z.head(n);
      dAct = z.tail(n);
    }
    s.theta += dTheta;
    s.action += dAct;
    s.y -= h * sys_->epsilon() * fe_.d_tau;
    s.clock.add(clock_speed() * h);
    reduce_angles(s.theta);
    return it;
  }

  const SlowSystem* sys_;
  StepperSpec spec_;
  Frame frame_;
  std::vector<double> weights_;
  FEval fe_;
  Vec grad_, dth_, dI_, thm_, Im_;
};

// ---------------------------------------------------------------------------
// Single-step entry points

/// One composed splitting step of the slow-time extended system.
inline ExtendedState step_splitting(const ExtendedSystem& ext, const ExtendedState& st, const StepperSpec& spec) {
  require_slow_time(ext, "step_splitting");
  if (!is_splitting(spec.method)) throw UsageError("step_splitting: spec must name a splitting method");
  SlowStepper stepper(ext.base(), spec, SlowStepper::Frame::Extended);
  FlowState s{st.theta, st.action, CompensatedSum(st.x), st.y};
  stepper.step(s, spec.dt);
  return ExtendedState{s.theta, s.action, s.clock.value(), s.y};
}

inline ExtendedState step_implicit_midpoint(const ExtendedSystem& ext, const ExtendedState& st, StepperSpec spec) {
  require_slow_time(ext, "step_implicit_midpoint");
  spec.method = Method::ImplicitMidpoint;
  SlowStepper stepper(ext.base(), spec, SlowStepper::Frame::Extended);
  FlowState s{st.theta, st.action, CompensatedSum(st.x), st.y};
  stepper.step(s, spec.dt);
  return ExtendedState{s.theta, s.action, s.clock.value(), s.y};
}

inline State step_implicit_midpoint(const SlowSystem& sys, const State& st, StepperSpec spec) {
  spec.method = Method::ImplicitMidpoint;
  SlowStepper stepper(sys, spec, SlowStepper::Frame::Direct);
  FlowState s{st.theta.values(), st.action.values(), CompensatedSum(st.time), 0.0};
  stepper.step(s, spec.dt);
  return State(AngleVector(s.theta), ActionVector(s.action), s.clock.value());
}

// ---------------------------------------------------------------------------
// Trajectories

struct Sample {
  double t = 0.0;
  Vec theta;
  Vec action;
  double x = 0.0;
  double y = 0.0;
  /// H (direct) or H~ (extended)
  double energy = 0.0;
  /// max_i |I_i - I_i(0)| over all steps so far
  double drift = 0.0;
};

struct Trajectory {
  std::vector<Sample> samples;
  Sample initial;
  long long stride = 1;
  long long steps = 0;
  double dt = 0.0;
  /// samples carry meaningful (x, y)
  bool extended = false;
  Vec action_min;
  Vec action_max;
  double sup_drift = 0.0;
  /// first step time at which the drift exceeded the exit threshold
  std::optional<double> exit_time;

  std::vector<double> sample_times() const {
    std::vector<double> t;
    t.reserve(samples.size());
    for (const auto& s : samples) t.push_back(s.t);
    return t;
  }
};

struct IntegrateOptions {
  long long stride = 1;
  /// record the first time the drift exceeds this value
  std::optional<double> exit_threshold;
  /// stop integrating at that exit time
  bool stop_at_exit = false;
  /// integrate towards negative times
  bool backward = false;
  double overflow_bound = 1e12;
};

namespace detail {

inline double drift_of(const Vec& I0, const Vec& lo, const Vec& hi) {
  return std::max((hi - I0).maxCoeff(), (I0 - lo).maxCoeff());
}

inline Trajectory run_flow(const SlowSystem& sys, SlowStepper& stepper, FlowState s, double t0, double T,
                           const IntegrateOptions& opt) {
  if (!(T >= 0.0) || !std::isfinite(T)) throw UsageError("integrate: T must be >= 0");
  if (opt.stride < 1) throw UsageError("integrate: stride must be >= 1");
  const bool ext = stepper.frame() == SlowStepper::Frame::Extended;
  const double dt = stepper.spec().dt;
  const double dir = opt.backward ? -1.0 : 1.0;
  const long long N = T == 0.0 ? 0 : static_cast<long long>(std::ceil(T / dt * (1.0 - 1e-12)));

  const Vec I0 = s.action;
  Trajectory tr;
  tr.stride = opt.stride;
  tr.dt = dt;
  tr.extended = ext;
  tr.action_min = I0;
  tr.action_max = I0;

  auto energy = [&](double t) {
    if (ext) return sys.h().value(s.action) + sys.slow_rate() * s.y + sys.epsilon() * sys.f().value(s.theta, s.action, s.clock.value());
    return sys.hamiltonian(s.theta, s.action, t);
  };
  auto sample = [&](double t) {
    Sample sm{t, s.theta, s.action, ext ? s.clock.value() : 0.0, ext ? s.y : 0.0, energy(t), tr.sup_drift};
    tr.samples.push_back(std::move(sm));
  };

  sample(t0);
  tr.initial = tr.samples.front();
  for (long long k = 1; k <= N; ++k) {
    const double h = k < N ? dt : T - static_cast<double>(N - 1) * dt;
    stepper.step(s, dir * h, k);
    for (Eigen::Index i = 0; i < s.action.size(); ++i) {
      tr.action_min[i] = std::min(tr.action_min[i], s.action[i]);
      tr.action_max[i] = std::max(tr.action_max[i], s.action[i]);
    }
    tr.sup_drift = drift_of(I0, tr.action_min, tr.action_max);
    const double t = k < N ? t0 + dir * (static_cast<double>(k) * dt) : t0 + dir * T;
    if (!(max_norm(s.action) < opt.overflow_bound) || !std::isfinite(s.y))
      throw IntegrationError("integrate: state norm exceeded " + fmt_double(opt.overflow_bound), k);
    tr.steps = k;
    bool stop = false;
    if (opt.exit_threshold && !tr.exit_time && tr.sup_drift > *opt.exit_threshold) {
      tr.exit_time = t;
      stop = opt.stop_at_exit;
    }
    if (k % opt.stride == 0 || k == N || stop) sample(t);
    if (stop) break;
  }
  return tr;
}

}  // namespace detail

/// Integrates H from s0 over [s0.time, s0.time + T]. Splitting methods run on
/// the autonomized system (x0 = eps^c t0, y0 = 0) and report (x, y).
inline Trajectory integrate(const SlowSystem& sys, const State& s0, double T, const StepperSpec& spec,
                            const IntegrateOptions& opt = {}) {
  require_dim(s0.theta.size(), sys.dimension(), "integrate");
  if (is_splitting(spec.method)) {
    SlowStepper stepper(sys, spec, SlowStepper::Frame::Extended);
    FlowState fs{s0.theta.values(), s0.action.values(), CompensatedSum(sys.slow_rate() * s0.time), 0.0};
    return detail::run_flow(sys, stepper, std::move(fs), s0.time, T, opt);
  }
  SlowStepper stepper(sys, spec, SlowStepper::Frame::Direct);
  FlowState fs{s0.theta.values(), s0.action.values(), CompensatedSum(s0.time), 0.0};
  return detail::run_flow(sys, stepper, std::move(fs), s0.time, T, opt);
}

/// Integrates the slow-time extended system. Sample times are x-clock
/// independent: t runs from 0.
inline Trajectory integrate(const ExtendedSystem& ext, const ExtendedState& s0, double T, const StepperSpec& spec,
                            const IntegrateOptions& opt = {}) {
  require_slow_time(ext, "integrate");
  require_dim(s0.theta.size(), ext.base().dimension(), "integrate");
  Vec th = s0.theta;
  reduce_angles(th);
  SlowStepper stepper(ext.base(), spec, SlowStepper::Frame::Extended);
  FlowState fs{th, s0.action, CompensatedSum(s0.x), s0.y};
  return detail::run_flow(ext.base(), stepper, std::move(fs), 0.0, T, opt);
}

inline State to_state(const Sample& s) { return State(AngleVector(s.theta), ActionVector(s.action), s.t); }

}  // namespace nekhlab
