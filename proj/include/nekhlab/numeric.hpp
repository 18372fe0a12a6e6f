#pragma once

// Shared numeric plumbing: error types, compensated sums, the counter-based
// RNG used by every Monte Carlo and scan, and small formatting helpers.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nekhlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Caller violated a documented precondition (dimension mismatch, bad constant, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical integration could not proceed.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, long long step, double residual = 0.0)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step),
        residual_(residual) {}
  long long step() const noexcept { return step_; }
  double residual() const noexcept { return residual_; }

 private:
  long long step_;
  double residual_;
};

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  CompensatedSum() = default;
  explicit CompensatedSum(double start) : sum_(start) {}

  void add(double v) {
    const double t = sum_ + v;
    if (std::fabs(sum_) >= std::fabs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Reduces an angle to [0,1) (unit-period torus).
inline double reduce_angle(double a) {
  const double r = a - std::floor(a);
  return r >= 1.0 ? 0.0 : r;
}

inline void reduce_angles(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = reduce_angle(v[i]);
}

/// Distance between two points of the unit circle, in [0, 1/2].
inline double angle_gap(double a, double b) {
  const double d = reduce_angle(a - b);
  return std::min(d, 1.0 - d);
}

inline double angle_gap(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, angle_gap(a[i], b[i]));
  return m;
}

inline double max_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// splitmix64 finalizer; bijective mixing of a 64-bit word.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator ("ctr-splitmix64"): output i is mix(key, i).
/// Streams for different keys are independent and any draw is addressable.
class CounterRng {
 public:
  static constexpr const char* kName = "ctr-splitmix64";

  explicit CounterRng(std::uint64_t key) : key_(mix64(key ^ 0x6a09e667f3bcc909ULL)) {}
  CounterRng(std::uint64_t key, std::uint64_t stream) : CounterRng(mix64(key) ^ mix64(~stream)) {}

  std::uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  /// Uniform point of the Euclidean ball of radius `radius` in R^n.
  Vec in_ball(Eigen::Index n, double radius) {
    Vec g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = normal();
    const double len = g.norm();
    const double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(n));
    return len > 0.0 ? Vec(g * (r / len)) : Vec(Vec::Zero(n));
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Shortest decimal that parses back to the same double, for CSV output.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace nekhlab
