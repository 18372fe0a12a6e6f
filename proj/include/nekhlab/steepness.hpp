#pragma once

// Monte Carlo probe of the steepness condition: for every k-dimensional affine
// subspace lambda meeting B_rho and every curve gamma in lambda with
// |gamma(1) - gamma(0)| = delta < delta_k, some t* with |gamma(t) - gamma(0)| < delta
// on [0, t*) must satisfy |Pi_Lambda grad h(gamma(t*))| > C_k delta^p_k.
//
// A pass only means that no counterexample was found.

#include "nekhlab/hamcore.hpp"

#include <optional>
#include <vector>

namespace nekhlab {

struct SteepnessConstants {
  double p = 1.0;
  double C = 1.0;
  double delta_max = 1.0;
};

/// p_k = p - 1, C_k = delta_k = 1 for h_p; (1, 1, 1) otherwise.
inline SteepnessConstants default_constants(const IntegrableH& h) {
  if (auto p = h.power()) return {static_cast<double>(*p - 1), 1.0, 1.0};
  return {};
}

struct SubspaceSample {
  /// dimension k
  int k = 1;
  Vec basepoint;
  /// n x k, orthonormal columns spanning the direction Lambda
  Mat basis;
};

/// Piecewise-linear curve through `nodes` (uniform parameter spacing).
struct CurveSample {
  std::vector<Vec> nodes;
  double delta() const { return (nodes.back() - nodes.front()).norm(); }
};

inline void check_orthonormal(const Mat& basis) {
  if (basis.cols() < 1 || basis.cols() > basis.rows()) throw UsageError("degenerate basis: wrong shape");
  const Mat g = basis.transpose() * basis;
  if ((g - Mat::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() > 1e-10)
    throw UsageError("degenerate basis: columns are not orthonormal");
}

/// |Pi_Lambda grad h(point)| for an orthonormal basis of Lambda.
inline double project_gradient(const IntegrableH& h, const Vec& point, const Mat& basis) {
  require_dim(point.size(), h.dimension(), "project_gradient");
  require_dim(basis.rows(), h.dimension(), "project_gradient basis");
  if (point.norm() > h.domain_radius() * (1.0 + 1e-12)) throw UsageError("project_gradient: point outside B_rho");
  check_orthonormal(basis);
  return (basis.transpose() * h.gradient(point)).norm();
}

struct CurveCheck {
  bool witness = false;
  /// parameter of the first witnessing point
  double t_star = 0.0;
  /// largest projected gradient over admissible points
  double max_projected = 0.0;
  /// max_projected - C delta^p; > 0 iff a witness exists
  double margin = 0.0;
  double delta = 0.0;
};

/// Number of uniform refinements per curve segment when searching t*.
inline constexpr int kCurveRefinement = 16;

/// Scans the curve in parameter order; a point is admissible while every
/// earlier point lies strictly inside the delta-ball around gamma(0).
inline CurveCheck check_curve(const IntegrableH& h, const CurveSample& curve, const Mat& basis,
                              const SteepnessConstants& k) {
  if (curve.nodes.size() < 2) throw UsageError("check_curve: a curve needs at least two nodes");
  const double delta = curve.delta();
  if (!(delta > 0.0)) throw UsageError("check_curve: delta must be positive");
  if (!(delta < k.delta_max)) throw UsageError("check_curve: delta must be below delta_k");
  check_orthonormal(basis);
  const double bound = k.C * std::pow(delta, k.p);
  const Vec& start = curve.nodes.front();
  const std::size_t segs = curve.nodes.size() - 1;

  CurveCheck out;
  out.delta = delta;
  Vec g(h.dimension());
  for (std::size_t s = 0; s < segs; ++s) {
    const int last = s + 1 == segs ? kCurveRefinement : kCurveRefinement - 1;
    for (int i = 0; i <= last; ++i) {
      const double u = static_cast<double>(i) / kCurveRefinement;
      const Vec pt = (1.0 - u) * curve.nodes[s] + u * curve.nodes[s + 1];
      h.gradient(pt, g);
      const double proj = (basis.transpose() * g).norm();
      const double t = (static_cast<double>(s) + u) / static_cast<double>(segs);
      out.max_projected = std::max(out.max_projected, proj);
      if (!out.witness && proj > bound) {
        out.witness = true;
        out.t_star = t;
      }
      if ((pt - start).norm() >= delta) {
        out.margin = out.max_projected - bound;
        return out;
      }
    }
  }
  out.margin = out.max_projected - bound;
  return out;
}

struct SteepnessRecord {
  int k = 1;
  SteepnessConstants constants;
  int subspaces = 0;
  long long curves = 0;
  /// min over tested curves of the margin
  double worst_margin = std::numeric_limits<double>::infinity();
  double worst_delta = 0.0;
  /// curve realizing a non-positive margin, if any
  std::optional<CurveSample> counterexample;
  std::optional<SubspaceSample> counterexample_subspace;

  bool passed() const { return !counterexample.has_value(); }
};

struct SteepnessReport {
  std::vector<SteepnessRecord> records;
  std::uint64_t seed = 0;
  bool passed() const {
    return std::all_of(records.begin(), records.end(), [](const SteepnessRecord& r) { return r.passed(); });
  }
};

inline std::vector<double> default_delta_grid(const SteepnessConstants& k) {
  return {0.01, 0.05, 0.1, 0.25, 0.5 * k.delta_max};
}

/// Haar-random orthonormal n x k frame.
inline Mat random_frame(CounterRng& rng, Eigen::Index n, int k) {
  Mat g(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, k);
  const Mat r = qr.matrixQR();
  for (Eigen::Index j = 0; j < k; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline SubspaceSample random_subspace(CounterRng& rng, const IntegrableH& h, int k) {
  return {k, rng.in_ball(h.dimension(), h.domain_radius()), random_frame(rng, h.dimension(), k)};
}

namespace detail {

inline Vec unit_vector(CounterRng& rng, Eigen::Index k) {
  Vec v(k);
  for (;;) {
    for (Eigen::Index i = 0; i < k; ++i) v[i] = rng.normal();
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

inline bool in_ball(const Vec& p, double rho) { return p.norm() <= rho; }

/// Curve `index` of the family for one subspace: even indices are straight
/// segments, odd ones random polygons of 3..8 nodes. Empty if no admissible
/// draw was found within the ball.
inline std::optional<CurveSample> draw_curve(CounterRng& rng, const SubspaceSample& sub, double rho, double delta,
                                             int index) {
  const Eigen::Index k = sub.basis.cols();
  auto lift = [&](const Vec& u) { return Vec(sub.basepoint + sub.basis * u); };
  for (int attempt = 0; attempt < 32; ++attempt) {
    const Vec end = delta * unit_vector(rng, k);
    CurveSample c;
    c.nodes.push_back(sub.basepoint);
    if (index % 2 == 1) {
      const int inner = 1 + static_cast<int>(rng.next_u64() % 6);
      for (int j = 0; j < inner; ++j) {
        const Vec u = rng.in_ball(k, 1.5 * delta);
        c.nodes.push_back(lift(u));
      }
    }
    c.nodes.push_back(lift(end));
    if (std::all_of(c.nodes.begin(), c.nodes.end(), [&](const Vec& p) { return in_ball(p, rho); })) return c;
  }
  return std::nullopt;
}

}  // namespace detail

/// Monte Carlo steepness check in dimension k. Deterministic given `seed`.
inline SteepnessRecord check_steepness(const IntegrableH& h, int k, int n_subspaces, int n_curves_per,
                                       const std::vector<double>& delta_grid, const SteepnessConstants& constants,
                                       std::uint64_t seed = 42) {
  if (k < 1 || k > h.dimension()) throw UsageError("check_steepness: k must lie in [1, n]");
  SteepnessRecord rec;
  rec.k = k;
  rec.constants = constants;
  const double rho = h.domain_radius();
  for (int s = 0; s < n_subspaces; ++s) {
    CounterRng rng(seed, (static_cast<std::uint64_t>(k) << 32) | static_cast<std::uint64_t>(s));
    const SubspaceSample sub = random_subspace(rng, h, k);
    ++rec.subspaces;
    for (double delta : delta_grid) {
      if (!(delta > 0.0 && delta < constants.delta_max)) continue;
      for (int ci = 0; ci < n_curves_per; ++ci) {
        auto curve = detail::draw_curve(rng, sub, rho, delta, ci);
        if (!curve) continue;
        const CurveCheck res = check_curve(h, *curve, sub.basis, constants);
        ++rec.curves;
        if (res.margin < rec.worst_margin) {
          rec.worst_margin = res.margin;
          rec.worst_delta = delta;
          if (!res.witness) {
            rec.counterexample = *curve;
            rec.counterexample_subspace = sub;
          }
        }
      }
    }
  }
  return rec;
}

/// All k = 1..n.
inline SteepnessReport check_steepness_all(const IntegrableH& h, int n_subspaces, int n_curves_per,
                                           const std::vector<double>& delta_grid, const SteepnessConstants& constants,
                                           std::uint64_t seed = 42) {
  SteepnessReport rep;
  rep.seed = seed;
  for (int k = 1; k <= h.dimension(); ++k)
    rep.records.push_back(check_steepness(h, k, n_subspaces, n_curves_per, delta_grid, constants, seed));
  return rep;
}

}  // namespace nekhlab
