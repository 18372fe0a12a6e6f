#pragma once

// Near-integrable Hamiltonians in action-angle variables,
//
//     H(theta, I, t) = h(I) + eps * f(theta, I, eps^c t),
//
// on T^n x R^n with unit-period angles. Everything here is an immutable value
// with closed-form derivatives.

#include "nekhlab/numeric.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace nekhlab {

// ---------------------------------------------------------------------------
// Phase-space values

/// Point of T^n; components are kept in [0,1).
class AngleVector {
 public:
  AngleVector() = default;
  explicit AngleVector(Vec raw) : c_(std::move(raw)) { reduce_angles(c_); }
  AngleVector(std::initializer_list<double> raw) : AngleVector(Vec(Eigen::Map<const Vec>(raw.begin(), raw.size()))) {}

  const Vec& values() const { return c_; }
  Eigen::Index size() const { return c_.size(); }
  double operator[](Eigen::Index i) const { return c_[i]; }

 private:
  Vec c_;
};

/// Point of R^n (actions). Must be finite.
class ActionVector {
 public:
  ActionVector() = default;
  explicit ActionVector(Vec raw) : c_(std::move(raw)) {
    if (!c_.allFinite()) throw UsageError("ActionVector: non-finite component");
  }
  ActionVector(std::initializer_list<double> raw) : ActionVector(Vec(Eigen::Map<const Vec>(raw.begin(), raw.size()))) {}

  const Vec& values() const { return c_; }
  Eigen::Index size() const { return c_.size(); }
  double operator[](Eigen::Index i) const { return c_[i]; }
  /// max_i |I_i|
  double max_norm() const { return nekhlab::max_norm(c_); }

 private:
  Vec c_;
};

struct State {
  AngleVector theta;
  ActionVector action;
  double time = 0.0;

  State() = default;
  State(AngleVector th, ActionVector ac, double t = 0.0) : theta(std::move(th)), action(std::move(ac)), time(t) {
    if (theta.size() != action.size()) throw UsageError("State: theta/action dimension mismatch");
  }
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want)
    throw UsageError(std::string(what) + ": dimension mismatch (got " + std::to_string(got) + ", expected " +
                     std::to_string(want) + ")");
}

// ---------------------------------------------------------------------------
// Multivariate monomials

struct Monomial {
  std::vector<int> exponents;
  double coef = 0.0;

  bool is_constant() const {
    return std::all_of(exponents.begin(), exponents.end(), [](int e) { return e == 0; });
  }
  int degree() const {
    int d = 0;
    for (int e : exponents) d += e;
    return d;
  }
};

namespace detail {

inline double ipow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

inline double poly_value(const std::vector<Monomial>& terms, const Vec& x) {
  double v = 0.0;
  for (const auto& m : terms) {
    double t = m.coef;
    for (std::size_t i = 0; i < m.exponents.size(); ++i)
      if (m.exponents[i] != 0) t *= ipow(x[static_cast<Eigen::Index>(i)], m.exponents[i]);
    v += t;
  }
  return v;
}

/// Adds scale * grad(poly)(x) into `out`.
inline void poly_gradient_add(const std::vector<Monomial>& terms, const Vec& x, double scale, Vec& out) {
  for (const auto& m : terms) {
    for (std::size_t j = 0; j < m.exponents.size(); ++j) {
      const int ej = m.exponents[j];
      if (ej == 0) continue;
      double t = m.coef * ej;
      for (std::size_t i = 0; i < m.exponents.size(); ++i) {
        const int e = i == j ? ej - 1 : m.exponents[i];
        if (e != 0) t *= ipow(x[static_cast<Eigen::Index>(i)], e);
      }
      out[static_cast<Eigen::Index>(j)] += scale * t;
    }
  }
}

inline void poly_hessian_add(const std::vector<Monomial>& terms, const Vec& x, Mat& out) {
  for (const auto& m : terms) {
    const std::size_t n = m.exponents.size();
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        std::vector<int> e = m.exponents;
        double t = m.coef;
        t *= e[a];
        if (e[a] == 0) continue;
        e[a] -= 1;
        t *= e[b];
        if (e[b] == 0) continue;
        e[b] -= 1;
        for (std::size_t i = 0; i < n; ++i)
          if (e[i] != 0) t *= ipow(x[static_cast<Eigen::Index>(i)], e[i]);
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += t;
        if (a != b) out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) += t;
      }
    }
  }
}

inline double symmetric_operator_norm(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Integrable part h(I)

struct PowerLaw {
  int p = 2;
};
/// h(I) = I^T A I.
struct QuadraticForm {
  Mat a;
};
struct Polynomial {
  std::vector<Monomial> terms;
};

class IntegrableH {
 public:
  using Variant = std::variant<PowerLaw, QuadraticForm, Polynomial>;

  /// h_p(I) = I_1^p + ... + I_n^p; M = p(p-1) rho^(p-2).
  static IntegrableH power_law(int p, Eigen::Index n, double rho) {
    if (p < 2) throw UsageError("power_law: p must be >= 2");
    check_common(n, rho);
    const double m = p * (p - 1) * detail::ipow(rho, p - 2);
    return IntegrableH(PowerLaw{p}, n, rho, m);
  }

  /// M = |2A| (operator norm).
  static IntegrableH quadratic(Mat a, double rho) {
    check_common(a.rows(), rho);
    if (a.rows() != a.cols()) throw UsageError("quadratic: matrix must be square");
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw UsageError("quadratic: matrix must be symmetric");
    const double m = detail::symmetric_operator_norm(2.0 * a);
    const Eigen::Index n = a.rows();
    return IntegrableH(QuadraticForm{std::move(a)}, n, rho, m);
  }

  /// M is 1.5x the largest sampled Hessian norm over 10^4 points of B_rho,
  /// unless `hessian_bound` is given explicitly.
  static IntegrableH polynomial(std::vector<Monomial> terms, Eigen::Index n, double rho,
                                std::optional<double> hessian_bound = std::nullopt) {
    check_common(n, rho);
    for (const auto& t : terms)
      if (static_cast<Eigen::Index>(t.exponents.size()) != n || std::any_of(t.exponents.begin(), t.exponents.end(), [](int e) { return e < 0; }))
        throw UsageError("polynomial: monomial exponents must be n non-negative integers");
    IntegrableH h(Polynomial{std::move(terms)}, n, rho, 0.0);
    if (hessian_bound) {
      if (!(*hessian_bound > 0.0)) throw UsageError("polynomial: hessian bound must be positive");
      h.m_ = *hessian_bound;
    } else {
      CounterRng rng(0x4e454b48ULL, static_cast<std::uint64_t>(n));
      double sup = 0.0;
      sup = std::max(sup, detail::symmetric_operator_norm(h.hessian(Vec::Zero(n))));
      for (int i = 0; i < 10000; ++i)
        sup = std::max(sup, detail::symmetric_operator_norm(h.hessian(rng.in_ball(n, rho))));
      h.m_ = sup > 0.0 ? 1.5 * sup : 1e-300;
    }
    return h;
  }

  const Variant& variant() const { return variant_; }
  Eigen::Index dimension() const { return n_; }
  double domain_radius() const { return rho_; }
  double hessian_bound() const { return m_; }

  /// Exponent p if this is a power law.
  std::optional<int> power() const {
    if (auto* pl = std::get_if<PowerLaw>(&variant_)) return pl->p;
    return std::nullopt;
  }

  double value(const Vec& I) const {
    require_dim(I.size(), n_, "eval_h");
    return std::visit(
        [&](const auto& v) -> double {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, PowerLaw>) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < n_; ++i) s += detail::ipow(I[i], v.p);
            return s;
          } else if constexpr (std::is_same_v<T, QuadraticForm>) {
            return I.dot(v.a * I);
          } else {
            return detail::poly_value(v.terms, I);
          }
        },
        variant_);
  }

  /// Writes grad h(I) into `out` (resized if needed).
  void gradient(const Vec& I, Vec& out) const {
    require_dim(I.size(), n_, "grad_h");
    out.resize(n_);
    if (auto* pl = std::get_if<PowerLaw>(&variant_)) {
      for (Eigen::Index i = 0; i < n_; ++i) out[i] = pl->p * detail::ipow(I[i], pl->p - 1);
    } else if (auto* q = std::get_if<QuadraticForm>(&variant_)) {
      out.noalias() = 2.0 * (q->a * I);
    } else {
      out.setZero();
      detail::poly_gradient_add(std::get<Polynomial>(variant_).terms, I, 1.0, out);
    }
  }

  Vec gradient(const Vec& I) const {
    Vec g;
    gradient(I, g);
    return g;
  }

  Mat hessian(const Vec& I) const {
    require_dim(I.size(), n_, "hess_h");
    Mat hs = Mat::Zero(n_, n_);
    if (auto* pl = std::get_if<PowerLaw>(&variant_)) {
      for (Eigen::Index i = 0; i < n_; ++i) hs(i, i) = pl->p * (pl->p - 1) * detail::ipow(I[i], pl->p - 2);
    } else if (auto* q = std::get_if<QuadraticForm>(&variant_)) {
      hs = 2.0 * q->a;
    } else {
      detail::poly_hessian_add(std::get<Polynomial>(variant_).terms, I, hs);
    }
    return hs;
  }

 private:
  IntegrableH(Variant v, Eigen::Index n, double rho, double m) : variant_(std::move(v)), n_(n), rho_(rho), m_(m) {}

  static void check_common(Eigen::Index n, double rho) {
    if (n < 1) throw UsageError("IntegrableH: dimension must be >= 1");
    if (!(rho > 0.0) || !std::isfinite(rho)) throw UsageError("IntegrableH: domain radius must be positive");
  }

  Variant variant_;
  Eigen::Index n_ = 0;
  double rho_ = 1.0;
  double m_ = 0.0;
};

inline double eval_h(const IntegrableH& h, const ActionVector& I) { return h.value(I.values()); }
inline ActionVector grad_h(const IntegrableH& h, const ActionVector& I) { return ActionVector(h.gradient(I.values())); }
inline Mat hess_h(const IntegrableH& h, const ActionVector& I) { return h.hessian(I.values()); }

// ---------------------------------------------------------------------------
// Slow-time envelopes: real-analytic on R, bounded by 1.

enum class EnvelopeKind { Constant, Cosine, Sech, SmoothRamp };

struct Envelope {
  EnvelopeKind kind = EnvelopeKind::Constant;
  /// frequency (Cosine), width (Sech) or rate (SmoothRamp); unused for Constant.
  double param = 0.0;

  static Envelope constant() { return {}; }
  static Envelope cosine(double frequency) { return {EnvelopeKind::Cosine, frequency}; }
  static Envelope sech(double width) {
    if (!(width > 0.0)) throw UsageError("Envelope: sech width must be positive");
    return {EnvelopeKind::Sech, width};
  }
  static Envelope smooth_ramp(double rate) { return {EnvelopeKind::SmoothRamp, rate}; }

  /// (value, derivative) at tau.
  std::pair<double, double> eval(double tau) const {
    switch (kind) {
      case EnvelopeKind::Constant:
        return {1.0, 0.0};
      case EnvelopeKind::Cosine: {
        const double a = kTwoPi * param * tau;
        return {std::cos(a), -kTwoPi * param * std::sin(a)};
      }
      case EnvelopeKind::Sech: {
        const double u = tau / param;
        const double s = 1.0 / std::cosh(u);
        return {s, -s * std::tanh(u) / param};
      }
      case EnvelopeKind::SmoothRamp: {
        const double t = std::tanh(param * tau);
        return {t, param * (1.0 - t * t)};
      }
    }
    return {1.0, 0.0};
  }

  bool is_constant() const { return kind == EnvelopeKind::Constant || (kind == EnvelopeKind::Cosine && param == 0.0); }
};

inline const char* envelope_name(EnvelopeKind k) {
  switch (k) {
    case EnvelopeKind::Constant: return "constant";
    case EnvelopeKind::Cosine: return "cosine";
    case EnvelopeKind::Sech: return "sech";
    case EnvelopeKind::SmoothRamp: return "smooth_ramp";
  }
  return "constant";
}

// ---------------------------------------------------------------------------
// Perturbation f(theta, I, tau) = sum_k c_k(I) cos(2 pi (k.theta + phi_k)) e_k(tau)

struct Mode {
  std::vector<int> k;
  std::vector<Monomial> poly;
  double phase = 0.0;
  Envelope envelope;

  bool action_independent() const {
    return std::all_of(poly.begin(), poly.end(), [](const Monomial& m) { return m.is_constant(); });
  }
};

/// Value and first derivatives of f at one point.
struct FEval {
  double value = 0.0;
  Vec d_theta;
  Vec d_action;
  double d_tau = 0.0;
};

class Perturbation {
 public:
  Perturbation() = default;

  /// `angle_dim` may exceed `action_dim` when extra angles carry the time
  /// dependence of an autonomized periodic / quasi-periodic system.
  Perturbation(Eigen::Index angle_dim, Eigen::Index action_dim, std::vector<Mode> modes, double normalization = 1.0)
      : angle_dim_(angle_dim), action_dim_(action_dim), modes_(std::move(modes)), normalization_(normalization) {
    if (angle_dim < 1 || action_dim < 1) throw UsageError("Perturbation: dimensions must be >= 1");
    for (auto& m : modes_) {
      if (static_cast<Eigen::Index>(m.k.size()) != angle_dim_) throw UsageError("Perturbation: wavevector dimension mismatch");
      for (auto& t : m.poly) {
        // make_mode sizes constant terms by the wavevector; widen them to the action dimension
        if (std::all_of(t.exponents.begin(), t.exponents.end(), [](int e) { return e == 0; }))
          t.exponents.assign(static_cast<std::size_t>(action_dim_), 0);
        if (static_cast<Eigen::Index>(t.exponents.size()) != action_dim_ ||
            std::any_of(t.exponents.begin(), t.exponents.end(), [](int e) { return e < 0; }))
          throw UsageError("Perturbation: monomial exponents must be action_dim non-negative integers");
      }
      if (!(m.phase >= 0.0 && m.phase < 1.0)) throw UsageError("Perturbation: phase must lie in [0,1)");
    }
    cache_constants();
  }

  Perturbation(Eigen::Index n, std::vector<Mode> modes) : Perturbation(n, n, std::move(modes)) {}

  static Perturbation zero(Eigen::Index n) { return Perturbation(n, n, {}); }

  Eigen::Index angle_dim() const { return angle_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }
  const std::vector<Mode>& modes() const { return modes_; }
  /// Product of all normalization factors applied to the coefficients.
  double normalization() const { return normalization_; }

  bool action_independent() const {
    return std::all_of(modes_.begin(), modes_.end(), [](const Mode& m) { return m.action_independent(); });
  }
  bool time_independent() const {
    return std::all_of(modes_.begin(), modes_.end(), [](const Mode& m) { return m.envelope.is_constant(); });
  }

  /// Fills `out` with f and its first derivatives. No allocation once `out` is sized.
  void evaluate(const Vec& theta, const Vec& I, double tau, FEval& out) const {
    require_dim(theta.size(), angle_dim_, "eval_f theta");
    require_dim(I.size(), action_dim_, "eval_f action");
    out.d_theta.resize(angle_dim_);
    out.d_action.resize(action_dim_);
    out.d_theta.setZero();
    out.d_action.setZero();
    out.value = 0.0;
    out.d_tau = 0.0;
    for (std::size_t mi = 0; mi < modes_.size(); ++mi) {
      const Mode& m = modes_[mi];
      double arg = m.phase;
      for (Eigen::Index j = 0; j < angle_dim_; ++j)
        if (m.k[static_cast<std::size_t>(j)] != 0) arg += m.k[static_cast<std::size_t>(j)] * theta[j];
      arg *= kTwoPi;
      const double cs = std::cos(arg);
      const double sn = std::sin(arg);
      const auto [env, denv] = m.envelope.eval(tau);
      const double amp = const_amp_[mi] ? *const_amp_[mi] : detail::poly_value(m.poly, I);
      out.value += amp * cs * env;
      out.d_tau += amp * cs * denv;
      const double dth = -kTwoPi * amp * sn * env;
      for (Eigen::Index j = 0; j < angle_dim_; ++j)
        if (m.k[static_cast<std::size_t>(j)] != 0) out.d_theta[j] += dth * m.k[static_cast<std::size_t>(j)];
      if (!const_amp_[mi]) detail::poly_gradient_add(m.poly, I, cs * env, out.d_action);
    }
  }

  double value(const Vec& theta, const Vec& I, double tau) const {
    FEval e;
    evaluate(theta, I, tau, e);
    return e.value;
  }

  /// Sum over modes of sup |c_k(I)| on the max-norm ball |I|_inf <= radius.
  double amplitude_bound(double radius) const {
    double s = 0.0;
    for (const auto& m : modes_)
      for (const auto& t : m.poly) s += std::fabs(t.coef) * detail::ipow(radius, t.degree());
    return s;
  }

  Perturbation scaled(double factor) const {
    Perturbation out = *this;
    for (auto& m : out.modes_)
      for (auto& t : m.poly) t.coef *= factor;
    out.normalization_ *= factor;
    out.cache_constants();
    return out;
  }

 private:
  void cache_constants() {
    const_amp_.clear();
    for (const auto& m : modes_) {
      if (m.action_independent()) {
        double c = 0.0;
        for (const auto& t : m.poly) c += t.coef;
        const_amp_.emplace_back(c);
      } else {
        const_amp_.emplace_back(std::nullopt);
      }
    }
  }

  Eigen::Index angle_dim_ = 1;
  Eigen::Index action_dim_ = 1;
  std::vector<Mode> modes_;
  double normalization_ = 1.0;
  std::vector<std::optional<double>> const_amp_;
};

/// Single mode with an action-independent amplitude.
inline Mode make_mode(std::vector<int> k, double amplitude, double phase = 0.0, Envelope env = Envelope::constant()) {
  Monomial m{std::vector<int>(k.size(), 0), amplitude};
  return Mode{std::move(k), {std::move(m)}, phase, env};
}

inline FEval eval_f(const Perturbation& f, const AngleVector& theta, const ActionVector& I, double tau) {
  FEval e;
  f.evaluate(theta.values(), I.values(), tau, e);
  return e;
}

/// l1-of-amplitudes bound on sup|f| over the action ball of radius `I_radius`
/// (envelopes are bounded by 1). Returns 0 for an empty mode list.
inline double sup_norm_estimate(const Perturbation& f, double I_radius) {
  if (!(I_radius > 0.0)) throw UsageError("sup_norm_estimate: radius must be positive");
  return f.amplitude_bound(I_radius);
}

/// Divides every coefficient by sup_norm_estimate so the new estimate is 1.
inline Perturbation normalize(const Perturbation& f, double I_radius) {
  const double b = sup_norm_estimate(f, I_radius);
  if (b == 0.0) return f;
  return f.scaled(1.0 / b);
}

// ---------------------------------------------------------------------------
// Systems

/// H(theta, I, t) = h(I) + eps f(theta, I, eps^c t), 1/2 <= c <= 1.
class SlowSystem {
 public:
  SlowSystem(IntegrableH h, Perturbation f, double epsilon, double c, double r_width = 1.0, double s_width = 1.0)
      : h_(std::move(h)), f_(std::move(f)), eps_(epsilon), c_(c), r_(r_width), s_(s_width) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw UsageError("SlowSystem: epsilon must be >= 0");
    if (!(c >= 0.5 && c <= 1.0)) throw UsageError("SlowSystem: c must lie in [1/2, 1]");
    if (!(r_width > 0.0 && s_width > 0.0)) throw UsageError("SlowSystem: analyticity widths must be positive");
    require_dim(f_.angle_dim(), h_.dimension(), "SlowSystem perturbation angles");
    require_dim(f_.action_dim(), h_.dimension(), "SlowSystem perturbation actions");
    rate_ = std::pow(eps_, c_);
  }

  const IntegrableH& h() const { return h_; }
  const Perturbation& f() const { return f_; }
  double epsilon() const { return eps_; }
  double c() const { return c_; }
  /// eps^c, the speed of the slow clock.
  double slow_rate() const { return rate_; }
  double r_width() const { return r_; }
  double s_width() const { return s_; }
  Eigen::Index dimension() const { return h_.dimension(); }

  SlowSystem with_epsilon(double eps) const { return SlowSystem(h_, f_, eps, c_, r_, s_); }

  double hamiltonian(const Vec& theta, const Vec& I, double t) const {
    return h_.value(I) + eps_ * f_.value(theta, I, rate_ * t);
  }

 private:
  IntegrableH h_;
  Perturbation f_;
  double eps_;
  double c_;
  double r_;
  double s_;
  double rate_;
};

/// G(theta, I, t) = h_p(I) + V(theta, t) with |V| <= 1 and V independent of I.
class MechanicalSystem {
 public:
  MechanicalSystem(int p, Eigen::Index n, Perturbation V, double s_width = 1.0) : p_(p), n_(n), v_(std::move(V)), s_(s_width) {
    if (p < 2) throw UsageError("MechanicalSystem: p must be >= 2");
    require_dim(v_.angle_dim(), n, "MechanicalSystem potential");
    require_dim(v_.action_dim(), n, "MechanicalSystem potential");
    if (!v_.action_independent()) throw UsageError("MechanicalSystem: potential modes must not depend on I");
    if (v_.amplitude_bound(1.0) > 1.0 + 1e-12) throw UsageError("MechanicalSystem: potential must satisfy |V| <= 1");
  }

  int p() const { return p_; }
  Eigen::Index dimension() const { return n_; }
  const Perturbation& potential() const { return v_; }
  double s_width() const { return s_; }

  /// G itself as a SlowSystem with eps = 1, c = 1 on the ball of radius rho.
  SlowSystem as_slow_system(double rho) const {
    return SlowSystem(IntegrableH::power_law(p_, n_, rho), v_, 1.0, 1.0, 1.0, s_);
  }

 private:
  int p_;
  Eigen::Index n_;
  Perturbation v_;
  double s_;
};

// ---------------------------------------------------------------------------
// Vector fields

struct VectorField {
  Vec d_theta;
  Vec d_action;
};

/// Canonical equations of H at (theta, I, t); the envelope argument is eps^c t.
inline VectorField vector_field_slow(const SlowSystem& sys, const State& s) {
  require_dim(s.theta.size(), sys.dimension(), "vector_field_slow");
  FEval e;
  sys.f().evaluate(s.theta.values(), s.action.values(), sys.slow_rate() * s.time, e);
  VectorField vf;
  sys.h().gradient(s.action.values(), vf.d_theta);
  vf.d_theta += sys.epsilon() * e.d_action;
  vf.d_action = -sys.epsilon() * e.d_theta;
  return vf;
}

}  // namespace nekhlab
