#pragma once

// JSON system documents and CSV / binary result formats.
//
// System document:
//   { "integrable":   {"variant": "power_law"|"quadratic"|"polynomial", "n", "rho",
//                      "p" | "matrix" | "terms", "hessian_bound"},
//     "perturbation": {"angle_dim", "action_dim", "normalization",
//                      "modes": [{"k", "poly": [{"exponents", "coef"}], "phase",
//                                 "envelope": {"kind", "param"}}]},
//     "epsilon", "c", "widths": {"r", "s"} }
//
// Doubles are written in shortest round-trip form, so read(write(x)) == x bit
// for bit.

#include "nekhlab/autonomize_check.hpp"
#include "nekhlab/experiments.hpp"
#include "nekhlab/steepness.hpp"

#include <json.hpp>

#include <cstring>
#include <ostream>
#include <sstream>
#include <string>

namespace nekhlab {

using json = nlohmann::json;

/// Malformed document; `path` is a JSON pointer to the offending value.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& path, const std::string& msg) : std::runtime_error(path + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

namespace detail {

inline const json& need(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(path + "/" + key, "missing");
  return j.at(key);
}

inline double need_number(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_number()) throw FormatError(path + "/" + key, "expected a number");
  return v.get<double>();
}

inline int need_int(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_number_integer()) throw FormatError(path + "/" + key, "expected an integer");
  return v.get<int>();
}

inline std::vector<int> int_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw FormatError(path, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer()) throw FormatError(path + "/" + std::to_string(i), "expected an integer");
    out.push_back(v[i].get<int>());
  }
  return out;
}

template <class Fn>
auto wrap_usage(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const UsageError& e) {
    throw FormatError(path, e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Integrable part

inline json to_json(const IntegrableH& h) {
  json j;
  j["n"] = h.dimension();
  j["rho"] = h.domain_radius();
  j["hessian_bound"] = h.hessian_bound();
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PowerLaw>) {
          j["variant"] = "power_law";
          j["p"] = v.p;
        } else if constexpr (std::is_same_v<T, QuadraticForm>) {
          j["variant"] = "quadratic";
          json rows = json::array();
          for (Eigen::Index r = 0; r < v.a.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < v.a.cols(); ++c) row.push_back(v.a(r, c));
            rows.push_back(row);
          }
          j["matrix"] = rows;
        } else {
          j["variant"] = "polynomial";
          json terms = json::array();
          for (const auto& t : v.terms) terms.push_back({{"exponents", t.exponents}, {"coef", t.coef}});
          j["terms"] = terms;
        }
      },
      h.variant());
  return j;
}

inline std::vector<Monomial> monomials_from_json(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw FormatError(path, "expected an array of monomials");
  std::vector<Monomial> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = path + "/" + std::to_string(i);
    out.push_back(Monomial{detail::int_list(detail::need(arr[i], "exponents", p), p + "/exponents"),
                           detail::need_number(arr[i], "coef", p)});
  }
  return out;
}

inline IntegrableH integrable_from_json(const json& j, const std::string& path = "/integrable") {
  const json& var = detail::need(j, "variant", path);
  if (!var.is_string()) throw FormatError(path + "/variant", "expected a string");
  const std::string v = var.get<std::string>();
  const double rho = detail::need_number(j, "rho", path);
  return detail::wrap_usage(path, [&] {
    if (v == "power_law") return IntegrableH::power_law(detail::need_int(j, "p", path), detail::need_int(j, "n", path), rho);
    if (v == "quadratic") {
      const json& m = detail::need(j, "matrix", path);
      if (!m.is_array() || m.empty()) throw FormatError(path + "/matrix", "expected a square array");
      Mat a(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.size()));
      for (std::size_t r = 0; r < m.size(); ++r) {
        if (!m[r].is_array() || m[r].size() != m.size()) throw FormatError(path + "/matrix/" + std::to_string(r), "row length mismatch");
        for (std::size_t c = 0; c < m.size(); ++c) {
          if (!m[r][c].is_number()) throw FormatError(path + "/matrix/" + std::to_string(r) + "/" + std::to_string(c), "expected a number");
          a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r][c].get<double>();
        }
      }
      if (j.contains("n") && j.at("n") != static_cast<long>(m.size())) throw FormatError(path + "/n", "does not match matrix size");
      return IntegrableH::quadratic(a, rho);
    }
    if (v == "polynomial") {
      std::optional<double> m;
      if (j.contains("hessian_bound")) m = detail::need_number(j, "hessian_bound", path);
      return IntegrableH::polynomial(monomials_from_json(detail::need(j, "terms", path), path + "/terms"),
                                     detail::need_int(j, "n", path), rho, m);
    }
    throw FormatError(path + "/variant", "unknown variant '" + v + "'");
  });
}

// ---------------------------------------------------------------------------
// Perturbation

inline json to_json(const Envelope& e) { return {{"kind", envelope_name(e.kind)}, {"param", e.param}}; }

inline Envelope envelope_from_json(const json& j, const std::string& path) {
  const json& k = detail::need(j, "kind", path);
  if (!k.is_string()) throw FormatError(path + "/kind", "expected a string");
  const std::string kind = k.get<std::string>();
  const double param = j.contains("param") ? detail::need_number(j, "param", path) : 0.0;
  return detail::wrap_usage(path, [&] {
    if (kind == "constant") return Envelope::constant();
    if (kind == "cosine") return Envelope::cosine(param);
    if (kind == "sech") return Envelope::sech(param);
    if (kind == "smooth_ramp") return Envelope::smooth_ramp(param);
    throw FormatError(path + "/kind", "unknown envelope '" + kind + "'");
  });
}

inline json to_json(const Perturbation& f) {
  json modes = json::array();
  for (const auto& m : f.modes()) {
    json poly = json::array();
    for (const auto& t : m.poly) poly.push_back({{"exponents", t.exponents}, {"coef", t.coef}});
    modes.push_back({{"k", m.k}, {"poly", poly}, {"phase", m.phase}, {"envelope", to_json(m.envelope)}});
  }
  return {{"angle_dim", f.angle_dim()}, {"action_dim", f.action_dim()}, {"normalization", f.normalization()}, {"modes", modes}};
}

/// `n` is the default for angle_dim / action_dim when absent.
inline Perturbation perturbation_from_json(const json& j, Eigen::Index n, const std::string& path = "/perturbation") {
  const Eigen::Index na = j.contains("angle_dim") ? detail::need_int(j, "angle_dim", path) : n;
  const Eigen::Index ni = j.contains("action_dim") ? detail::need_int(j, "action_dim", path) : n;
  const double norm = j.contains("normalization") ? detail::need_number(j, "normalization", path) : 1.0;
  const json& arr = detail::need(j, "modes", path);
  if (!arr.is_array()) throw FormatError(path + "/modes", "expected an array");
  std::vector<Mode> modes;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = path + "/modes/" + std::to_string(i);
    Mode m;
    m.k = detail::int_list(detail::need(arr[i], "k", p), p + "/k");
    m.poly = monomials_from_json(detail::need(arr[i], "poly", p), p + "/poly");
    m.phase = arr[i].contains("phase") ? detail::need_number(arr[i], "phase", p) : 0.0;
    m.envelope = arr[i].contains("envelope") ? envelope_from_json(arr[i].at("envelope"), p + "/envelope") : Envelope::constant();
    modes.push_back(std::move(m));
  }
  return detail::wrap_usage(path, [&] { return Perturbation(na, ni, std::move(modes), norm); });
}

// ---------------------------------------------------------------------------
// Systems

inline json to_json(const SlowSystem& s) {
  return {{"integrable", to_json(s.h())},
          {"perturbation", to_json(s.f())},
          {"epsilon", s.epsilon()},
          {"c", s.c()},
          {"widths", {{"r", s.r_width()}, {"s", s.s_width()}}}};
}

inline SlowSystem slow_system_from_json(const json& j, const std::string& path = "") {
  if (!j.is_object()) throw FormatError(path.empty() ? "/" : path, "expected an object");
  IntegrableH h = integrable_from_json(detail::need(j, "integrable", path), path + "/integrable");
  Perturbation f = perturbation_from_json(detail::need(j, "perturbation", path), h.dimension(), path + "/perturbation");
  const double eps = detail::need_number(j, "epsilon", path);
  const double c = detail::need_number(j, "c", path);
  double r = 1.0, s = 1.0;
  if (j.contains("widths")) {
    r = detail::need_number(j.at("widths"), "r", path + "/widths");
    s = detail::need_number(j.at("widths"), "s", path + "/widths");
  }
  return detail::wrap_usage(path.empty() ? "/" : path, [&] { return SlowSystem(h, f, eps, c, r, s); });
}

inline json to_json(const MechanicalSystem& m) {
  return {{"p", m.p()}, {"n", m.dimension()}, {"potential", to_json(m.potential())}, {"s", m.s_width()}};
}

inline MechanicalSystem mechanical_from_json(const json& j, const std::string& path = "") {
  const int p = detail::need_int(j, "p", path);
  const int n = detail::need_int(j, "n", path);
  Perturbation v = perturbation_from_json(detail::need(j, "potential", path), n, path + "/potential");
  const double s = j.contains("s") ? detail::need_number(j, "s", path) : 1.0;
  return detail::wrap_usage(path.empty() ? "/" : path, [&] { return MechanicalSystem(p, n, v, s); });
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline void csv_row(std::ostream& os, std::initializer_list<std::string> cells) {
  bool first = true;
  for (const auto& c : cells) {
    if (!first) os << ',';
    os << c;
    first = false;
  }
  os << '\n';
}
}  // namespace detail

/// t, theta_1..n, I_1..n, [x, y], H, drift_running
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  if (tr.samples.empty()) return;
  const Eigen::Index n = tr.samples.front().theta.size();
  os << "t";
  for (Eigen::Index i = 1; i <= n; ++i) os << ",theta_" << i;
  for (Eigen::Index i = 1; i <= n; ++i) os << ",I_" << i;
  if (tr.extended) os << ",x,y";
  os << ",H,drift_running\n";
  for (const auto& s : tr.samples) {
    os << fmt_double(s.t);
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << fmt_double(s.theta[i]);
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << fmt_double(s.action[i]);
    if (tr.extended) os << ',' << fmt_double(s.x) << ',' << fmt_double(s.y);
    os << ',' << fmt_double(s.energy) << ',' << fmt_double(s.drift) << '\n';
  }
}

/// 16-byte header: "NKHTRAJ\0", u32 version, u32 doubles per record; then
/// flat little-endian float64 records in CSV column order.
inline void write_trajectory_binary(std::ostream& os, const Trajectory& tr) {
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_f64 = [&](double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  };
  const Eigen::Index n = tr.samples.empty() ? 0 : tr.samples.front().theta.size();
  const std::uint32_t width = static_cast<std::uint32_t>(1 + 2 * n + (tr.extended ? 2 : 0) + 2);
  os.write("NKHTRAJ\0", 8);
  put_u32(1);
  put_u32(width);
  for (const auto& s : tr.samples) {
    put_f64(s.t);
    for (Eigen::Index i = 0; i < n; ++i) put_f64(s.theta[i]);
    for (Eigen::Index i = 0; i < n; ++i) put_f64(s.action[i]);
    if (tr.extended) {
      put_f64(s.x);
      put_f64(s.y);
    }
    put_f64(s.energy);
    put_f64(s.drift);
  }
}

inline constexpr const char* kDriftCsvHeader = "epsilon,c,seed,T,dt,sup_drift,exit_time,censored";

inline void write_drift_csv(std::ostream& os, const std::vector<DriftRecord>& recs) {
  os << kDriftCsvHeader << '\n';
  for (const auto& r : recs)
    detail::csv_row(os, {fmt_double(r.epsilon), fmt_double(r.c), std::to_string(r.seed), fmt_double(r.T), fmt_double(r.dt),
                         fmt_double(r.sup_drift), fmt_double(r.exit_time), r.censored ? "1" : "0"});
}

inline constexpr const char* kTheorem2CsvHeader = "R,p,epsilon,drift_scaled,drift_original,slope_prediction";

inline void write_theorem2_csv(std::ostream& os, const std::vector<Theorem2Row>& rows) {
  os << kTheorem2CsvHeader << '\n';
  for (const auto& r : rows)
    detail::csv_row(os, {fmt_double(r.R), std::to_string(r.p), fmt_double(r.epsilon), fmt_double(r.drift_scaled),
                         fmt_double(r.drift_original), fmt_double(r.slope_prediction)});
}

inline void write_diophantine_csv(std::ostream& os, const std::vector<DiophantineEstimate>& rows) {
  os << "K,gamma_hat,k_min\n";
  for (const auto& r : rows) {
    std::string k;
    for (std::size_t i = 0; i < r.k_min.size(); ++i) k += (i ? " " : "") + std::to_string(r.k_min[i]);
    detail::csv_row(os, {std::to_string(r.K), fmt_double(r.gamma), k});
  }
}

inline void write_curve_csv(std::ostream& os, const CurveSample& c) {
  const Eigen::Index n = c.nodes.empty() ? 0 : c.nodes.front().size();
  os << "node";
  for (Eigen::Index i = 1; i <= n; ++i) os << ",I_" << i;
  os << '\n';
  for (std::size_t j = 0; j < c.nodes.size(); ++j) {
    os << j;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << fmt_double(c.nodes[j][i]);
    os << '\n';
  }
}

inline json to_json(const AutonomizationReport& r) {
  return {{"form", r.form},
          {"deviation", r.deviation},
          {"energy_drift", r.energy_drift},
          {"energy_slope", r.energy_slope},
          {"x_linearity", r.x_linearity},
          {"steps", r.steps}};
}

inline json to_json(const SteepnessReport& rep) {
  json recs = json::array();
  for (const auto& r : rep.records) {
    json j = {{"k", r.k},
              {"p_k", r.constants.p},
              {"C_k", r.constants.C},
              {"delta_k", r.constants.delta_max},
              {"subspaces", r.subspaces},
              {"curves", r.curves},
              {"worst_margin", r.worst_margin},
              {"worst_delta", r.worst_delta},
              {"result", r.passed() ? "no counterexample found" : "counterexample"}};
    recs.push_back(j);
  }
  return {{"seed", rep.seed}, {"records", recs}, {"passed", rep.passed()}};
}

inline json to_json(const ExponentFit& f) {
  json pts = json::array();
  for (auto [x, y] : f.points) pts.push_back({x, y});
  return {{"points", pts},
          {"slope", f.slope},
          {"intercept", f.intercept},
          {"r2", f.r2},
          {"residual_max", f.residual_max},
          {"mean_drift", f.mean_drift},
          {"warnings", f.warnings}};
}

inline json to_json(const ReferenceExponents& r) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"a", num(r.a)},
          {"b", num(r.b)},
          {"status", r.status},
          {"a_prime", num(r.a_prime)},
          {"b_prime", num(r.b_prime)},
          {"slope_prediction", num(r.slope_prediction)},
          {"note", r.note}};
}

}  // namespace nekhlab
