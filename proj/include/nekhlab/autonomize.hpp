#pragma once

// Removal of explicit time dependence by extending phase space.
//
//   slow time:      H~(theta, I, x, y) = h(I) + eps^c y + eps f(theta, I, x),   x = eps^c t
//   periodic:       H~ = h(I) + J + eps f(theta, phi, I),                       phi = t
//   quasi-periodic: H~ = h(I) + omega.J + eps f(theta, phi, I),                 phi = t omega
//
// For the slow-time form the integrable part stays h alone; the extra degree of
// freedom only enters the perturbation f~ = eps^c y + eps f.

#include "nekhlab/hamcore.hpp"

#include <string>
#include <variant>
#include <vector>

namespace nekhlab {

struct ExtendedState {
  Vec theta;
  Vec action;
  /// slow time x = eps^c t
  double x = 0.0;
  /// momentum conjugate to x
  double y = 0.0;
};

struct SlowTimeForm {};

/// f carries n + 1 angles: (theta, phi) with phi = t.
struct PeriodicForm {
  Perturbation f_ext;
};

/// f carries n + m angles: (theta, phi) with phi = t omega.
struct QuasiPeriodicForm {
  Vec omega;
  Perturbation f_ext;
  double tau = 0.0;
  double gamma = 0.0;
  std::vector<int> k_min;
};

class ExtendedSystem {
 public:
  using Form = std::variant<SlowTimeForm, PeriodicForm, QuasiPeriodicForm>;

  ExtendedSystem(SlowSystem base, Form form) : base_(std::move(base)), form_(std::move(form)) {}

  const SlowSystem& base() const { return base_; }
  const Form& form() const { return form_; }
  bool is_slow_time() const { return std::holds_alternative<SlowTimeForm>(form_); }
  const char* form_name() const {
    if (std::holds_alternative<SlowTimeForm>(form_)) return "slow_time";
    if (std::holds_alternative<PeriodicForm>(form_)) return "periodic";
    return "quasi_periodic";
  }

  /// Number of time angles m (0 for the slow-time form).
  Eigen::Index time_angles() const {
    if (auto* p = std::get_if<QuasiPeriodicForm>(&form_)) return p->omega.size();
    if (std::holds_alternative<PeriodicForm>(form_)) return 1;
    return 0;
  }

 private:
  SlowSystem base_;
  Form form_;
};

// ---------------------------------------------------------------------------
// Slow-time form

inline ExtendedSystem autonomize_slow(const SlowSystem& sys) { return ExtendedSystem(sys, SlowTimeForm{}); }

inline ExtendedState extend_state(const SlowSystem& sys, const State& s, double y0 = 0.0) {
  return ExtendedState{s.theta.values(), s.action.values(), sys.slow_rate() * s.time, y0};
}

inline void require_slow_time(const ExtendedSystem& ext, const char* what) {
  if (!ext.is_slow_time()) throw UsageError(std::string(what) + ": requires the slow-time form");
}

/// f~ = eps^c y + eps f(theta, I, x).
inline double extended_perturbation(const ExtendedSystem& ext, const ExtendedState& st) {
  require_slow_time(ext, "extended_perturbation");
  const SlowSystem& s = ext.base();
  return s.slow_rate() * st.y + s.epsilon() * s.f().value(st.theta, st.action, st.x);
}

inline double extended_hamiltonian(const ExtendedSystem& ext, const ExtendedState& st) {
  require_slow_time(ext, "extended_hamiltonian");
  return ext.base().h().value(st.action) + extended_perturbation(ext, st);
}

struct ExtendedField {
  Vec d_theta;
  Vec d_action;
  double dx = 0.0;
  double dy = 0.0;
};

/// Canonical equations of H~. The x-component is eps^c for every state; the
/// y-component is -d(f~)/dx = -eps * df/dx (written -d_t f in shorthand).
inline ExtendedField extended_vector_field(const ExtendedSystem& ext, const ExtendedState& st) {
  require_slow_time(ext, "extended_vector_field");
  const SlowSystem& s = ext.base();
  require_dim(st.theta.size(), s.dimension(), "extended_vector_field");
  require_dim(st.action.size(), s.dimension(), "extended_vector_field");
  FEval e;
  s.f().evaluate(st.theta, st.action, st.x, e);
  ExtendedField out;
  s.h().gradient(st.action, out.d_theta);
  out.d_theta += s.epsilon() * e.d_action;
  out.d_action = -s.epsilon() * e.d_theta;
  out.dx = s.slow_rate();
  out.dy = -s.epsilon() * e.d_tau;
  return out;
}

// ---------------------------------------------------------------------------
// Diophantine scan

struct DiophantineEstimate {
  double gamma = 0.0;
  std::vector<int> k_min;
  int K = 0;
  double tau = 0.0;
  /// norm used on k
  std::string norm = "max";
};

/// gamma_hat = min over 0 < |k|_inf <= K of |k.omega| |k|_inf^tau, by exhaustive
/// enumeration. k_min is reported with its first non-zero entry positive.
inline DiophantineEstimate diophantine_estimate(const Vec& omega, double tau, int K) {
  const Eigen::Index m = omega.size();
  if (m < 1 || omega.cwiseAbs().maxCoeff() == 0.0) throw UsageError("diophantine_estimate: omega must be non-zero");
  if (K < 1) throw UsageError("diophantine_estimate: K must be >= 1");
  DiophantineEstimate best;
  best.K = K;
  best.tau = tau;
  best.gamma = std::numeric_limits<double>::infinity();
  std::vector<int> k(static_cast<std::size_t>(m), -K);
  for (;;) {
    int kmax = 0;
    for (int v : k) kmax = std::max(kmax, std::abs(v));
    // each +-k pair is visited once: keep the one whose first non-zero entry is positive
    auto first = std::find_if(k.begin(), k.end(), [](int v) { return v != 0; });
    if (kmax > 0 && *first > 0) {
      double dot = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) dot += k[static_cast<std::size_t>(i)] * omega[i];
      const double g = std::fabs(dot) * std::pow(static_cast<double>(kmax), tau);
      if (g < best.gamma) {
        best.gamma = g;
        best.k_min = k;
      }
    }
    std::size_t i = 0;
    while (i < k.size() && k[i] == K) k[i++] = -K;
    if (i == k.size()) break;
    ++k[i];
  }
  return best;
}

// ---------------------------------------------------------------------------
// Periodic / quasi-periodic forms

inline ExtendedSystem autonomize_periodic(const IntegrableH& h, const Perturbation& f_ext, double epsilon) {
  require_dim(f_ext.angle_dim(), h.dimension() + 1, "autonomize_periodic angles");
  require_dim(f_ext.action_dim(), h.dimension(), "autonomize_periodic actions");
  if (!f_ext.time_independent()) throw UsageError("autonomize_periodic: time enters through the extra angle only");
  SlowSystem base(h, Perturbation::zero(h.dimension()), epsilon, 1.0);
  return ExtendedSystem(std::move(base), PeriodicForm{f_ext});
}

inline ExtendedSystem autonomize_quasi_periodic(const IntegrableH& h, const Vec& omega, const Perturbation& f_ext,
                                                double epsilon, double tau, int K = 50) {
  const Eigen::Index m = omega.size();
  if (tau < static_cast<double>(m) - 1.0) throw UsageError("autonomize_quasi_periodic: tau must be >= m - 1");
  require_dim(f_ext.angle_dim(), h.dimension() + m, "autonomize_quasi_periodic angles");
  require_dim(f_ext.action_dim(), h.dimension(), "autonomize_quasi_periodic actions");
  if (!f_ext.time_independent()) throw UsageError("autonomize_quasi_periodic: time enters through the extra angles only");
  const auto est = diophantine_estimate(omega, tau, K);
  if (est.gamma == 0.0) throw UsageError("autonomize_quasi_periodic: omega is resonant at order <= K");
  SlowSystem base(h, Perturbation::zero(h.dimension()), epsilon, 1.0);
  return ExtendedSystem(std::move(base), QuasiPeriodicForm{omega, f_ext, tau, est.gamma, est.k_min});
}

/// Frequencies of the added angles: (1) for periodic, omega for quasi-periodic.
inline Vec time_frequencies(const ExtendedSystem& ext) {
  if (auto* q = std::get_if<QuasiPeriodicForm>(&ext.form())) return q->omega;
  if (std::holds_alternative<PeriodicForm>(ext.form())) return Vec::Ones(1);
  throw UsageError("time_frequencies: slow-time form has no time angles");
}

inline const Perturbation& time_angle_perturbation(const ExtendedSystem& ext) {
  if (auto* q = std::get_if<QuasiPeriodicForm>(&ext.form())) return q->f_ext;
  if (auto* p = std::get_if<PeriodicForm>(&ext.form())) return p->f_ext;
  throw UsageError("time_angle_perturbation: slow-time form");
}

/// h~(I, J) = h(I) + omega.J
inline double extended_integrable(const ExtendedSystem& ext, const Vec& I, const Vec& J) {
  const Vec w = time_frequencies(ext);
  require_dim(J.size(), w.size(), "extended_integrable");
  return ext.base().h().value(I) + w.dot(J);
}

struct CanonicalField {
  Vec d_angles;
  Vec d_actions;
};

/// Angles are (theta, phi) of length n + m, actions are (I, J).
inline double periodic_hamiltonian(const ExtendedSystem& ext, const Vec& angles, const Vec& actions) {
  const Eigen::Index n = ext.base().dimension();
  const Eigen::Index m = ext.time_angles();
  require_dim(angles.size(), n + m, "periodic_hamiltonian angles");
  require_dim(actions.size(), n + m, "periodic_hamiltonian actions");
  const Vec I = actions.head(n);
  return extended_integrable(ext, I, actions.tail(m)) +
         ext.base().epsilon() * time_angle_perturbation(ext).value(angles, I, 0.0);
}

inline CanonicalField periodic_vector_field(const ExtendedSystem& ext, const Vec& angles, const Vec& actions) {
  const Eigen::Index n = ext.base().dimension();
  const Eigen::Index m = ext.time_angles();
  require_dim(angles.size(), n + m, "periodic_vector_field angles");
  require_dim(actions.size(), n + m, "periodic_vector_field actions");
  const Vec I = actions.head(n);
  const double eps = ext.base().epsilon();
  FEval e;
  time_angle_perturbation(ext).evaluate(angles, I, 0.0, e);
  CanonicalField out;
  out.d_angles.resize(n + m);
  out.d_angles.head(n) = ext.base().h().gradient(I) + eps * e.d_action;
  out.d_angles.tail(m) = time_frequencies(ext);
  out.d_actions = -eps * e.d_theta;
  return out;
}

}  // namespace nekhlab
