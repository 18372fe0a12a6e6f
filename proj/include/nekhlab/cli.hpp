#pragma once

// nekh_lab command line: config ingestion, experiment runs, result files and
// the run manifest. Exit status 0 ok, 1 runtime failure, 2 config error.
//
// Every subcommand reads an optional JSON config (--config), validates it
// against the bundled schema (commands/<subcommand>) and writes into one
// output directory, chosen as NEKH_LAB_OUT > --out > config "out" >
// nekh_lab_out/<subcommand>.

#include "nekhlab/plot.hpp"
#include "nekhlab/schema_embed.hpp"
#include "nekhlab/serialize.hpp"

#include <CLI11.hpp>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/pointer.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>
#include <rapidjson/writer.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>

#ifndef NEKHLAB_VERSION
#define NEKHLAB_VERSION "0.0.0"
#endif

namespace nekhlab::cli {

namespace fs = std::filesystem;

/// Bad config or flags; exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing, time, versions

/// Hex SHA-1 of the git blob object holding `content`.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string obj = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(obj.data(), obj.size(), md, &len, EVP_sha1(), nullptr) != 1) throw std::runtime_error("SHA-1 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json versions() {
  return {{"nekh_lab", NEKHLAB_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"rapidjson", RAPIDJSON_VERSION_STRING},
          {"cli11", CLI11_VERSION},
          {"openssl", OpenSSL_version(OPENSSL_VERSION)},
          {"compiler", __VERSION__}};
}

// ---------------------------------------------------------------------------
// Schema validation

namespace detail {

inline std::string pointer_string(const rapidjson::Pointer& p) {
  rapidjson::StringBuffer sb;
  p.Stringify(sb);
  return sb.GetString();
}

inline std::string describe(const rapidjson::Value& v) {
  rapidjson::StringBuffer sb;
  rapidjson::Writer<rapidjson::StringBuffer> w(sb);
  v.Accept(w);
  return sb.GetString();
}

inline const rapidjson::Document& schema_root() {
  static const rapidjson::Document doc = [] {
    rapidjson::Document d;
    d.Parse(kConfigSchema);
    if (d.HasParseError()) throw std::logic_error("bundled config schema does not parse");
    return d;
  }();
  return doc;
}

}  // namespace detail

inline bool known_command(const std::string& cmd) {
  const auto& cmds = detail::schema_root()["commands"];
  return cmds.HasMember(cmd.c_str());
}

/// Validates `text` against commands/<cmd>. Throws ConfigError naming the
/// JSON pointer of the offending value.
inline void validate_config(const std::string& cmd, const std::string& text, const std::string& origin) {
  using namespace rapidjson;
  const Document& root = detail::schema_root();
  if (!known_command(cmd)) throw std::logic_error("no schema for command " + cmd);
  // the command schema becomes the root so that #/definitions refs resolve
  Document sch;
  sch.SetObject();
  auto& a = sch.GetAllocator();
  sch.AddMember("definitions", Value(root["definitions"], a), a);
  for (auto it = root["commands"][cmd.c_str()].MemberBegin(); it != root["commands"][cmd.c_str()].MemberEnd(); ++it)
    sch.AddMember(Value(it->name, a), Value(it->value, a), a);
  SchemaDocument sd(sch);

  Document cfg;
  cfg.Parse<kParseFullPrecisionFlag>(text.c_str(), text.size());
  if (cfg.HasParseError())
    throw ConfigError(origin + ": JSON parse error at offset " + std::to_string(cfg.GetErrorOffset()) + ": " +
                      GetParseError_En(cfg.GetParseError()));
  SchemaValidator v(sd);
  if (cfg.Accept(v)) return;

  std::string where = detail::pointer_string(v.GetInvalidDocumentPointer());
  const std::string kw = v.GetInvalidSchemaKeyword();
  const Value* node = v.GetInvalidDocumentPointer().Get(cfg);
  const Value* rule = v.GetInvalidSchemaPointer().Get(sch);
  std::string msg;
  if (kw == "additionalProperties" && node && !node->IsObject()) {
    // the pointer already names the unknown key
    msg = "unknown key";
  } else if (kw == "additionalProperties" && node && rule) {
    const Value* props = rule->IsObject() && rule->HasMember("properties") ? &(*rule)["properties"] : nullptr;
    for (auto it = node->MemberBegin(); it != node->MemberEnd(); ++it)
      if (!props || !props->HasMember(it->name)) {
        where += "/" + std::string(it->name.GetString());
        msg = "unknown key";
        break;
      }
  } else if (kw == "required" && node && node->IsObject() && rule && rule->HasMember("required")) {
    for (const auto& k : (*rule)["required"].GetArray())
      if (!node->HasMember(k)) {
        where += "/" + std::string(k.GetString());
        msg = "missing required key";
        break;
      }
  }
  if (msg.empty()) {
    msg = "violates '" + kw + "'";
    if (rule && rule->IsObject() && rule->HasMember(kw.c_str())) msg += " " + detail::describe((*rule)[kw.c_str()]);
  }
  throw ConfigError(origin + ": " + (where.empty() ? "/" : where) + ": " + msg);
}

// ---------------------------------------------------------------------------
// Run context

struct Flags {
  std::string config;
  std::string out;
  std::optional<unsigned> jobs;
  std::optional<std::uint64_t> seed;
  bool plot = false;
  // exponents
  std::optional<int> n;
  std::optional<std::string> kind;
  std::optional<double> tau;
  // exponents, scaling-check
  std::optional<int> p;
  // scaling-check
  std::optional<double> R;
};

inline constexpr std::uint64_t kDefaultSeed = 42;

struct Run {
  std::string command;
  std::vector<std::string> argv;
  Flags flags;
  /// validated config as given, with file references still in place
  json config = json::object();
  /// config with files inlined and seeds resolved; reruns identically
  json effective = json::object();
  std::string config_sha1;
  fs::path config_dir = ".";
  fs::path out_dir;
  unsigned jobs = 1;
  std::uint64_t seed = kDefaultSeed;
  json outputs = json::array();
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return out_dir / name;
  }
  void write(const std::string& name, const std::string& text) {
    std::ofstream os(file(name), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (out_dir / name).string());
    os << text;
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
};

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(p.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Inline object or "<key>_file" reference, resolved against the config directory.
inline json inline_or_file(Run& r, const std::string& key) {
  const bool has_inline = r.config.contains(key), has_file = r.config.contains(key + "_file");
  if (has_inline && has_file) throw ConfigError("/" + key + "_file: conflicts with /" + key);
  if (!has_inline && !has_file) throw ConfigError("/" + key + ": missing (give " + key + " or " + key + "_file)");
  json j;
  if (has_inline) {
    j = r.config.at(key);
  } else {
    const fs::path p = r.config_dir / r.config.at(key + "_file").get<std::string>();
    try {
      j = json::parse(read_file(p));
    } catch (const json::parse_error& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
  }
  r.effective.erase(key + "_file");
  r.effective[key] = j;
  return j;
}

inline Vec vec_of(const json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

struct StepperChoice {
  std::optional<Method> method;
  std::optional<double> dt;
};

inline StepperChoice stepper_of(const Run& r) {
  StepperChoice s;
  if (!r.config.contains("stepper")) return s;
  const json& j = r.config.at("stepper");
  if (j.contains("method")) s.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("dt")) s.dt = j.at("dt").get<double>();
  return s;
}

inline HorizonRule horizon_of(const Run& r) {
  const json& j = r.config.at("horizon");
  if (j.at("rule") == "fixed") {
    if (!j.contains("T")) throw ConfigError("/horizon/T: missing required key for rule 'fixed'");
    return FixedT{j.at("T").get<double>()};
  }
  PowerT p;
  if (j.contains("T0")) p.T0 = j.at("T0").get<double>();
  if (j.contains("q")) p.q = j.at("q").get<double>();
  if (j.contains("cap_steps")) p.cap_steps = j.at("cap_steps").get<double>();
  return p;
}

/// Explicit list, or n_seeds (default 4) consecutive seeds from the base seed;
/// --seed replaces an explicit list by a run of the same length.
inline std::vector<std::uint64_t> seeds_of(Run& r) {
  std::vector<std::uint64_t> seeds;
  if (r.config.contains("seeds") && !r.flags.seed) {
    for (const auto& s : r.config.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
  } else {
    std::size_t count = 4;
    if (r.config.contains("n_seeds")) count = r.config.at("n_seeds").get<std::size_t>();
    else if (r.config.contains("seeds")) count = r.config.at("seeds").size();
    for (std::size_t i = 0; i < count; ++i) seeds.push_back(r.seed + i);
  }
  if (seeds.empty()) throw ConfigError("/seeds: at least one seed is required");
  r.effective.erase("n_seeds");
  r.effective["seeds"] = seeds;
  return seeds;
}

inline State initial_of(const Run& r, const IntegrableH& h, double scale = 1.0) {
  if (!r.config.contains("initial")) {
    State s = initial_condition(h, r.seed);
    return State(s.theta, ActionVector(Vec(scale * s.action.values())), s.time);
  }
  const json& j = r.config.at("initial");
  const Vec th = vec_of(j.at("theta")), I = vec_of(j.at("action"));
  if (th.size() != h.dimension()) throw ConfigError("/initial/theta: expected " + std::to_string(h.dimension()) + " entries");
  if (I.size() != h.dimension()) throw ConfigError("/initial/action: expected " + std::to_string(h.dimension()) + " entries");
  return State(AngleVector(th), ActionVector(Vec(scale * I)), j.value("time", 0.0));
}

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline std::string cell_id(const DriftRecord& r) {
  return "cell eps=" + fmt_double(r.epsilon) + " seed=" + std::to_string(r.seed);
}

/// Failed cells as JSON; also reported on stderr.
inline json failed_cells(Run& r, const std::vector<DriftRecord>& recs, const std::string& prefix = "") {
  json failed = json::array();
  for (const auto& rec : recs)
    if (!rec.ok()) {
      failed.push_back({{"epsilon", rec.epsilon}, {"seed", rec.seed}, {"error", rec.error}});
      *r.err << "error: " << prefix << cell_id(rec) << ": " << rec.error << '\n';
    }
  return failed;
}

inline void maybe_plot(Run& r, const std::string& csv, const std::string& kind, const std::string& svg) {
  if (!r.flags.plot) return;
  emit_plot(r.out_dir / csv, kind, r.file(svg));
}

inline json stepper_json(Method m, double dt) { return {{"method", method_name(m)}, {"dt", dt}}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_simulate(Run& r) {
  const SlowSystem sys = slow_system_from_json(detail::inline_or_file(r, "system"), "/system");
  const State s0 = detail::initial_of(r, sys.h());
  const auto st = detail::stepper_of(r);
  const StepperSpec spec{st.method.value_or(default_method(sys.f())), st.dt.value_or(default_dt(sys.h(), s0.action.values()))};
  const double T = r.config.at("T").get<double>();
  const long long N = static_cast<long long>(std::ceil(T / spec.dt));
  IntegrateOptions opt;
  opt.stride = r.config.contains("stride") ? r.config.at("stride").get<long long>() : std::max(1LL, (N + 9999) / 10000);
  r.effective["stepper"] = detail::stepper_json(spec.method, spec.dt);
  r.effective["stride"] = opt.stride;
  r.effective["seed"] = r.seed;

  const Trajectory tr = integrate(sys, s0, T, spec, opt);
  const bool binary = r.config.value("binary", false);
  if (binary) {
    std::ofstream os(r.file("trajectory.bin"), std::ios::binary);
    write_trajectory_binary(os, tr);
  } else {
    std::ostringstream os;
    write_trajectory_csv(os, tr);
    r.write("trajectory.csv", os.str());
  }
  double dH = 0.0;
  for (const auto& s : tr.samples) dH = std::max(dH, std::fabs(s.energy - tr.samples.front().energy));
  const Sample& last = tr.samples.back();
  r.write_json("summary.json", {{"steps", tr.steps},
                                {"stepper", detail::stepper_json(spec.method, spec.dt)},
                                {"T", T},
                                {"stride", opt.stride},
                                {"samples", tr.samples.size()},
                                {"sup_drift", measure_drift(tr)},
                                {"energy_variation", dH},
                                {"initial", {{"theta", detail::vec_json(s0.theta.values())}, {"action", detail::vec_json(s0.action.values())}}},
                                {"final", {{"t", last.t}, {"theta", detail::vec_json(last.theta)}, {"action", detail::vec_json(last.action)}}}});
  *r.out << "simulate: " << tr.steps << " steps, sup drift " << fmt_double(measure_drift(tr)) << '\n';
  if (!binary) detail::maybe_plot(r, "trajectory.csv", "simulate", "trajectory.svg");
  return 0;
}

inline int cmd_drift_scan(Run& r) {
  const SlowSystem sys = slow_system_from_json(detail::inline_or_file(r, "system"), "/system");
  std::vector<double> grid = r.config.at("epsilon_grid").get<std::vector<double>>();
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] < grid[i - 1])) throw ConfigError("/epsilon_grid/" + std::to_string(i) + ": grid must be strictly decreasing");
  const HorizonRule rule = detail::horizon_of(r);
  const auto seeds = detail::seeds_of(r);
  const auto st = detail::stepper_of(r);
  DriftScanOptions opt;
  opt.method = st.method;
  opt.dt = st.dt;
  opt.threshold = r.config.value("threshold", 0.1);
  opt.jobs = r.jobs;

  const auto recs = drift_scan(sys, grid, rule, seeds, opt);
  std::ostringstream csv;
  write_drift_csv(csv, recs);
  r.write("drift_scan.csv", csv.str());

  json fit = nullptr;
  json warnings = json::array();
  try {
    const ExponentFit f = fit_exponent(recs);
    fit = to_json(f);
    fit["b_hat"] = f.slope;
  } catch (const UsageError& e) {
    warnings.push_back(e.what());
  }
  const json failed = detail::failed_cells(r, recs);
  r.write_json("summary.json",
               {{"records", recs.size()},
                {"seeds", seeds},
                {"epsilon_grid", grid},
                {"threshold", opt.threshold},
                {"fit", fit},
                {"warnings", warnings},
                {"reference", to_json(predicted_exponents({static_cast<int>(sys.dimension()), StabilityCase::ConvexAutonomous}))},
                {"failed_cells", failed}});
  *r.out << "drift-scan: " << recs.size() << " records";
  if (!fit.is_null()) *r.out << ", b_hat " << fmt_double(fit["b_hat"].get<double>()) << ", R^2 " << fmt_double(fit["r2"].get<double>());
  *r.out << '\n';
  detail::maybe_plot(r, "drift_scan.csv", "drift-scan", "drift_scan.svg");
  return failed.empty() ? 0 : 1;
}

inline int cmd_theorem2(Run& r) {
  const MechanicalSystem mech = mechanical_from_json(detail::inline_or_file(r, "mechanical"), "/mechanical");
  const std::vector<double> grid = r.config.at("R_grid").get<std::vector<double>>();
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError("/R_grid/" + std::to_string(i) + ": grid must be strictly increasing");
  const HorizonRule rule = detail::horizon_of(r);
  const auto seeds = detail::seeds_of(r);
  const auto st = detail::stepper_of(r);
  DriftScanOptions opt;
  opt.method = st.method;
  opt.dt = st.dt;
  opt.threshold = r.config.value("threshold", 0.1);
  opt.jobs = r.jobs;

  const Theorem2Result res = theorem2_experiment(mech, grid, seeds, rule, opt);
  const json warnings = res.warnings;
  std::ostringstream csv, recs;
  write_theorem2_csv(csv, res.rows);
  write_drift_csv(recs, res.records);
  r.write("theorem2.csv", csv.str());
  r.write("theorem2_records.csv", recs.str());

  bool exact = true;
  for (const auto& row : res.rows) exact = exact && (std::isnan(row.drift_scaled) || row.drift_original == row.R * row.drift_scaled);
  json fit = nullptr;
  if (!res.fit.points.empty()) {
    fit = to_json(res.fit);
    fit["sublinear"] = res.fit.slope < 1.0;
  }
  const json failed = detail::failed_cells(r, res.records);
  r.write_json("summary.json", {{"p", mech.p()},
                                {"n", mech.dimension()},
                                {"R_grid", grid},
                                {"seeds", seeds},
                                {"fit", fit},
                                {"bookkeeping_exact", exact},
                                {"reference", to_json(res.reference)},
                                {"warnings", warnings},
                                {"failed_cells", failed}});
  *r.out << "theorem2: " << res.rows.size() << " rows";
  if (!fit.is_null()) *r.out << ", slope " << fmt_double(res.fit.slope);
  *r.out << '\n';
  if (!res.rows.empty()) detail::maybe_plot(r, "theorem2.csv", "theorem2", "theorem2.svg");
  return failed.empty() ? 0 : 1;
}

/// Potential used when scaling-check runs from flags alone.
inline json default_mechanical(int p) {
  return {{"p", p},
          {"n", 2},
          {"potential",
           {{"modes", json::array({{{"k", {1, 1}},
                                    {"poly", json::array({{{"exponents", {0, 0}}, {"coef", 1.0}}})},
                                    {"phase", 0.0},
                                    {"envelope", {{"kind", "cosine"}, {"param", 1.0}}}}})}}},
          {"s", 1.0}};
}

inline int cmd_scaling_check(Run& r) {
  json mj;
  if (r.config.contains("mechanical") || r.config.contains("mechanical_file")) {
    mj = detail::inline_or_file(r, "mechanical");
  } else {
    mj = default_mechanical(r.flags.p.value_or(2));
    r.effective["mechanical"] = mj;
  }
  if (r.flags.p) mj["p"] = *r.flags.p;
  r.effective["mechanical"] = mj;
  const MechanicalSystem mech = mechanical_from_json(mj, "/mechanical");
  std::vector<double> Rs = r.config.contains("R_values") ? r.config.at("R_values").get<std::vector<double>>() : std::vector<double>{2.0, 4.0, 10.0};
  if (r.flags.R) Rs = {*r.flags.R};
  const double Tp = r.config.value("T_prime", 1e3);
  const int points = r.config.value("points", 100);
  const auto st = detail::stepper_of(r);
  const StepperSpec spec{st.method.value_or(default_method(mech.potential())), st.dt.value_or(1e-2)};
  r.effective["R_values"] = Rs;
  r.effective["T_prime"] = Tp;
  r.effective["points"] = points;
  r.effective["stepper"] = detail::stepper_json(spec.method, spec.dt);
  r.effective["seed"] = r.seed;

  std::ostringstream csv;
  csv << "R,p,epsilon,c,time_factor,trajectory_deviation,field_residual,steps\n";
  json rows = json::array();
  double worst_dev = 0.0, worst_res = 0.0;
  for (double R : Rs) {
    // the initial action is given in scaled variables, I'(0) in B_1
    const State s0 = detail::initial_of(r, IntegrableH::power_law(mech.p(), mech.dimension(), 2.0), R);
    ConjugacyReport rep;
    try {
      rep = verify_scaling_conjugacy(mech, R, s0, Tp, spec);
      rep.field_residual = scaling_field_residual(mech, R, points, r.seed);
    } catch (const UsageError& e) {
      throw ConfigError("/R_values: R=" + fmt_double(R) + ": " + e.what());
    }
    const ScalingMap m = make_scaling_map(R, mech.p());
    csv << fmt_double(R) << ',' << mech.p() << ',' << fmt_double(m.epsilon) << ',' << fmt_double(m.c) << ','
        << fmt_double(m.time_factor) << ',' << fmt_double(rep.trajectory_deviation) << ',' << fmt_double(rep.field_residual)
        << ',' << rep.steps << '\n';
    rows.push_back({{"R", R}, {"deviation", rep.trajectory_deviation}, {"field_residual", rep.field_residual}});
    worst_dev = std::max(worst_dev, rep.trajectory_deviation);
    worst_res = std::max(worst_res, rep.field_residual);
    *r.out << "R=" << fmt_double(R) << " deviation " << fmt_double(rep.trajectory_deviation) << " field residual "
           << fmt_double(rep.field_residual) << '\n';
  }
  r.write("scaling_check.csv", csv.str());
  r.write_json("summary.json", {{"p", mech.p()},
                                {"T_prime", Tp},
                                {"rows", rows},
                                {"max_deviation", worst_dev},
                                {"max_field_residual", worst_res},
                                {"deviation_ok", worst_dev < 1e-8},
                                {"field_ok", worst_res < 1e-12}});
  return 0;
}

inline int cmd_steepness(Run& r) {
  const IntegrableH h = integrable_from_json(detail::inline_or_file(r, "integrable"), "/integrable");
  SteepnessConstants k = default_constants(h);
  if (r.config.contains("constants")) {
    const json& c = r.config.at("constants");
    k = {c.at("p").get<double>(), c.at("C").get<double>(), c.at("delta_max").get<double>()};
  }
  std::vector<int> ks;
  if (r.config.contains("k")) {
    ks = r.config.at("k").get<std::vector<int>>();
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (ks[i] > h.dimension()) throw ConfigError("/k/" + std::to_string(i) + ": exceeds the dimension " + std::to_string(h.dimension()));
  } else {
    for (int i = 1; i <= h.dimension(); ++i) ks.push_back(i);
  }
  const int ns = r.config.value("n_subspaces", 200), nc = r.config.value("n_curves", 50);
  const std::vector<double> deltas =
      r.config.contains("delta_grid") ? r.config.at("delta_grid").get<std::vector<double>>() : default_delta_grid(k);
  r.effective["constants"] = {{"p", k.p}, {"C", k.C}, {"delta_max", k.delta_max}};
  r.effective["k"] = ks;
  r.effective["n_subspaces"] = ns;
  r.effective["n_curves"] = nc;
  r.effective["delta_grid"] = deltas;
  r.effective["seed"] = r.seed;

  SteepnessReport rep;
  rep.seed = r.seed;
  rep.records.resize(ks.size());
  parallel_for(ks.size(), r.jobs, [&](std::size_t i) { rep.records[i] = check_steepness(h, ks[i], ns, nc, deltas, k, r.seed); });
  json j = to_json(rep);
  j["delta_grid"] = deltas;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& rec = rep.records[i];
    *r.out << "k=" << rec.k << ": " << (rec.passed() ? "no counterexample found" : "counterexample") << " (" << rec.curves
           << " curves, worst margin " << fmt_double(rec.worst_margin) << ")\n";
    if (rec.counterexample) {
      const std::string name = "counterexample_k" + std::to_string(rec.k) + ".csv";
      std::ostringstream os;
      write_curve_csv(os, *rec.counterexample);
      r.write(name, os.str());
      j["records"][i]["counterexample_file"] = name;
      j["records"][i]["basepoint"] = detail::vec_json(rec.counterexample_subspace->basepoint);
    }
  }
  r.write_json("steepness.json", j);
  return 0;
}

inline int cmd_autonomize_verify(Run& r) {
  const SlowSystem sys = slow_system_from_json(detail::inline_or_file(r, "system"), "/system");
  const State s0 = detail::initial_of(r, sys.h());
  const auto st = detail::stepper_of(r);
  if (st.method && is_splitting(*st.method))
    throw ConfigError("/stepper/method: autonomize-verify needs a non-splitting stepper (midpoint)");
  const StepperSpec spec{Method::ImplicitMidpoint, st.dt.value_or(1e-2)};
  const double T = r.config.at("T").get<double>();
  r.effective["stepper"] = detail::stepper_json(spec.method, spec.dt);
  r.effective["seed"] = r.seed;
  const AutonomizationReport rep = verify_autonomization(sys, s0, T, spec);
  json j = to_json(rep);
  j["checks"] = {{"deviation_below_1e-9", rep.deviation < 1e-9},
                 {"x_linearity_below_1e-10", rep.x_linearity < 1e-10},
                 {"energy_drift_below_1e-6", rep.energy_drift < 1e-6},
                 {"energy_slope_below_1e-10", std::fabs(rep.energy_slope) < 1e-10}};
  r.write_json("autonomize.json", j);
  *r.out << "autonomize-verify: " << rep.steps << " steps, deviation " << fmt_double(rep.deviation) << ", x linearity "
         << fmt_double(rep.x_linearity) << ", energy drift " << fmt_double(rep.energy_drift) << '\n';
  return 0;
}

inline int cmd_diophantine(Run& r) {
  const Vec omega = detail::vec_of(r.config.at("omega"));
  const double tau = r.config.at("tau").get<double>();
  const auto Ks = r.config.at("K_values").get<std::vector<int>>();
  std::vector<DiophantineEstimate> est;
  try {
    for (int K : Ks) est.push_back(diophantine_estimate(omega, tau, K));
  } catch (const UsageError& e) {
    throw ConfigError(std::string("/omega: ") + e.what());
  }
  std::ostringstream csv;
  write_diophantine_csv(csv, est);
  r.write("diophantine.csv", csv.str());
  json rows = json::array();
  for (const auto& e : est) {
    rows.push_back({{"K", e.K}, {"gamma_hat", e.gamma}, {"k_min", e.k_min}});
    *r.out << "K=" << e.K << " gamma_hat " << fmt_double(e.gamma) << '\n';
  }
  json j = {{"omega", detail::vec_json(omega)}, {"tau", tau}, {"norm", "max"}, {"estimates", rows}};
  if (est.size() >= 2) {
    const double a = est[est.size() - 2].gamma, b = est.back().gamma;
    j["relative_change_last"] = b == 0.0 ? 0.0 : std::fabs(a - b) / std::fabs(b);
  }
  r.write_json("summary.json", j);
  detail::maybe_plot(r, "diophantine.csv", "diophantine", "diophantine.svg");
  return 0;
}

inline int cmd_exponents(Run& r) {
  const int n = r.flags.n.value_or(r.config.value("n", 2));
  const double tau = r.flags.tau.value_or(r.config.value("tau", 1.0));
  const int p = r.flags.p.value_or(r.config.value("p", 2));
  std::vector<std::string> cases = {"convex", "periodic", "quasiperiodic", "mechanical"};
  if (r.flags.kind) cases = {*r.flags.kind};
  else if (r.config.contains("case")) cases = {r.config.at("case").get<std::string>()};
  const std::map<std::string, StabilityCase> names = {{"convex", StabilityCase::ConvexAutonomous},
                                                      {"periodic", StabilityCase::PeriodicQuasiconvex},
                                                      {"quasiperiodic", StabilityCase::QuasiperiodicConjectural},
                                                      {"mechanical", StabilityCase::Mechanical}};
  for (const auto& c : cases)
    if (!names.count(c)) throw ConfigError("--case: unknown case '" + c + "'");
  if (n < 1) throw ConfigError("--n: must be >= 1");
  if (p < 2) throw ConfigError("--p: must be >= 2");
  if (tau < 0.0) throw ConfigError("--tau: must be >= 0");
  r.effective["n"] = n;
  r.effective["tau"] = tau;
  r.effective["p"] = p;
  if (cases.size() == 1) r.effective["case"] = cases.front();

  auto cell = [](double v) { return std::isnan(v) ? std::string() : fmt_double(v); };
  std::ostringstream csv;
  csv << "case,n,tau,p,a,b,status,a_prime,b_prime,slope_prediction\n";
  json rows = json::array();
  for (const auto& c : cases) {
    const ReferenceExponents e = predicted_exponents({n, names.at(c), tau, p});
    csv << c << ',' << n << ',' << fmt_double(tau) << ',' << p << ',' << cell(e.a) << ',' << cell(e.b) << ',' << e.status << ','
        << cell(e.a_prime) << ',' << cell(e.b_prime) << ',' << cell(e.slope_prediction) << '\n';
    json j = to_json(e);
    j["case"] = c;
    rows.push_back(j);
  }
  *r.out << csv.str();
  r.write("exponents.csv", csv.str());
  r.write_json("exponents.json", {{"n", n}, {"tau", tau}, {"p", p}, {"rows", rows}});
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

inline void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--jobs", f.jobs, "worker threads (default: logical cores)")->check(CLI::PositiveNumber);
  sub->add_option("--seed", f.seed, "base seed");
  sub->add_flag("--plot", f.plot, "also write SVG plots");
}

inline int dispatch(Run& r) {
  const std::string& c = r.command;
  if (c == "simulate") return cmd_simulate(r);
  if (c == "drift-scan") return cmd_drift_scan(r);
  if (c == "theorem2") return cmd_theorem2(r);
  if (c == "scaling-check") return cmd_scaling_check(r);
  if (c == "steepness") return cmd_steepness(r);
  if (c == "autonomize-verify") return cmd_autonomize_verify(r);
  if (c == "diophantine") return cmd_diophantine(r);
  return cmd_exponents(r);
}

/// Loads and validates the config and fixes the output directory, seed and jobs.
inline void prepare(Run& r) {
  std::string text = "{}";
  std::string origin = "<no config>";
  if (!r.flags.config.empty()) {
    const fs::path p = r.flags.config;
    text = read_file(p);
    origin = p.string();
    r.config_dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  }
  validate_config(r.command, text, origin);
  r.config = json::parse(text);
  r.config_sha1 = git_blob_sha1(text);
  r.effective = r.config;
  r.effective.erase("out");
  r.effective.erase("jobs");

  if (const char* env = std::getenv("NEKH_LAB_OUT"); env && *env) r.out_dir = env;
  else if (!r.flags.out.empty()) r.out_dir = r.flags.out;
  else if (r.config.contains("out")) r.out_dir = r.config_dir / r.config.at("out").get<std::string>();
  else r.out_dir = fs::path("nekh_lab_out") / r.command;

  r.seed = r.flags.seed.value_or(r.config.value("seed", kDefaultSeed));
  r.jobs = r.flags.jobs.value_or(r.config.value("jobs", default_jobs()));
}

inline void write_manifest(Run& r, const std::string& started, int status) {
  json m = {{"command", r.command},
            {"argv", r.argv},
            {"config_path", r.flags.config.empty() ? json(nullptr) : json(fs::absolute(r.flags.config).string())},
            {"config_sha1", r.config_sha1},
            {"effective_config", r.effective},
            {"seed", r.seed},
            {"jobs", r.jobs},
            {"started_utc", started},
            {"finished_utc", utc_now()},
            {"exit_status", status},
            {"versions", versions()},
            {"outputs", r.outputs}};
  std::ofstream os(r.out_dir / "manifest.json", std::ios::binary);
  os << m.dump(2) << '\n';
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"nekh_lab: numerical experiments on Nekhoroshev-type stability", "nekh_lab"};
  app.set_version_flag("--version", NEKHLAB_VERSION);
  app.require_subcommand(1);
  Flags flags;
  struct Spec {
    const char* name;
    const char* help;
  };
  const Spec specs[] = {{"simulate", "integrate one trajectory"},
                        {"drift-scan", "sup drift over an epsilon grid and seeds"},
                        {"theorem2", "drift of a mechanical system against the action scale R"},
                        {"scaling-check", "verify the scaling conjugacy of a mechanical system"},
                        {"steepness", "Monte Carlo steepness check of an integrable part"},
                        {"autonomize-verify", "direct against extended flow of a slow system"},
                        {"diophantine", "estimate the Diophantine constant of a frequency vector"},
                        {"exponents", "print the reference stability exponents"}};
  for (const auto& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    detail::add_common(sub, flags);
    if (std::string(s.name) == "exponents") {
      sub->add_option("--n", flags.n, "dimension");
      sub->add_option("--case", flags.kind, "convex | periodic | quasiperiodic | mechanical");
      sub->add_option("--tau", flags.tau, "Diophantine exponent");
      sub->add_option("--p", flags.p, "power of h_p");
    }
    if (std::string(s.name) == "scaling-check") {
      sub->add_option("--p", flags.p, "power of h_p");
      sub->add_option("--R", flags.R, "single action scale")->check(CLI::PositiveNumber);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Run r;
  r.command = app.get_subcommands().front()->get_name();
  for (int i = 0; i < argc; ++i) r.argv.emplace_back(argv[i]);
  r.flags = flags;
  r.out = &out;
  r.err = &err;
  const std::string started = utc_now();
  try {
    detail::prepare(r);
    fs::create_directories(r.out_dir);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  int status = 0;
  try {
    status = detail::dispatch(r);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    status = 2;
  } catch (const FormatError& e) {
    err << "config error: " << e.what() << '\n';
    status = 2;
  } catch (const UsageError& e) {
    err << "config error: " << e.what() << '\n';
    status = 2;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
    status = 2;
  } catch (const std::exception& e) {
    err << "error: " << r.command << ": " << e.what() << '\n';
    status = 1;
  }
  try {
    detail::write_manifest(r, started, status);
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << '\n';
    if (status == 0) status = 1;
  }
  return status;
}

}  // namespace nekhlab::cli
