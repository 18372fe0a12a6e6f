#pragma once

// Numerical exactness check of the slow-time autonomization: the (theta, I)
// part of the extended flow and the direct non-autonomous flow are the same
// ODE, so under one discretization they must agree to rounding.

#include "nekhlab/integrate.hpp"

#include <string>

namespace nekhlab {

struct AutonomizationReport {
  std::string form = "slow_time";
  /// max over steps of the max-norm (theta, I) deviation
  double deviation = 0.0;
  /// max |H~(t) - H~(0)| / |H~(0)|
  double energy_drift = 0.0;
  /// least-squares slope of H~(t) - H~(0) against t
  double energy_slope = 0.0;
  /// max |x(t) - x(0) - eps^c t|
  double x_linearity = 0.0;
  long long steps = 0;
};

/// Runs both flows in lockstep with the same stepper and step size, starting
/// from x(0) = eps^c t0, y(0) = 0. Splitting specs are rejected: splitting the
/// non-autonomous form would be the extended method itself.
inline AutonomizationReport verify_autonomization(const SlowSystem& sys, const State& s0, double T, StepperSpec spec) {
  if (is_splitting(spec.method))
    throw UsageError("verify_autonomization: the direct flow needs a non-splitting stepper (midpoint)");
  if (!(T >= 0.0)) throw UsageError("verify_autonomization: T must be >= 0");
  SlowStepper direct(sys, spec, SlowStepper::Frame::Direct);
  SlowStepper extended(sys, spec, SlowStepper::Frame::Extended);
  FlowState d{s0.theta.values(), s0.action.values(), CompensatedSum(s0.time), 0.0};
  const double x0 = sys.slow_rate() * s0.time;
  FlowState e{s0.theta.values(), s0.action.values(), CompensatedSum(x0), 0.0};

  const ExtendedSystem ext = autonomize_slow(sys);
  auto ext_energy = [&] { return extended_hamiltonian(ext, ExtendedState{e.theta, e.action, e.clock.value(), e.y}); };
  const double H0 = ext_energy();
  const double scale = std::fabs(H0) > 0.0 ? std::fabs(H0) : 1.0;

  const long long N = T == 0.0 ? 0 : static_cast<long long>(std::ceil(T / spec.dt * (1.0 - 1e-12)));
  AutonomizationReport rep;
  // running sums for the least-squares energy slope
  double st = 0, stt = 0, se = 0, ste = 0;
  for (long long k = 1; k <= N; ++k) {
    const double h = k < N ? spec.dt : T - static_cast<double>(N - 1) * spec.dt;
    direct.step(d, h, k);
    extended.step(e, h, k);
    const double t = k < N ? static_cast<double>(k) * spec.dt : T;
    rep.deviation = std::max({rep.deviation, angle_gap(d.theta, e.theta), max_norm(d.action - e.action)});
    rep.x_linearity = std::max(rep.x_linearity, std::fabs(e.clock.value() - x0 - sys.slow_rate() * t));
    const double dE = ext_energy() - H0;
    rep.energy_drift = std::max(rep.energy_drift, std::fabs(dE) / scale);
    st += t;
    stt += t * t;
    se += dE;
    ste += t * dE;
  }
  rep.steps = N;
  if (N >= 2) {
    const double nn = static_cast<double>(N);
    const double den = nn * stt - st * st;
    rep.energy_slope = den > 0.0 ? (nn * ste - st * se) / den : 0.0;
  }
  return rep;
}

}  // namespace nekhlab
