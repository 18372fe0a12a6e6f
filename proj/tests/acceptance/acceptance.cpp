// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "../checks.hpp"
#include "../oracles.hpp"
#include "nekhlab/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

using namespace nekhlab;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = NEKHLAB_CONFIG_DIR;
const fs::path kWork = fs::temp_directory_path() / "nekhlab_acceptance";

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

json load(const std::string& rel) {
  std::ifstream in(kConfigs + "/" + rel);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CsvTable read_table(const fs::path& p) {
  std::ifstream in(p);
  return read_csv(in);
}

/// Runs a bundled config through the CLI into kWork/<tag>/<config stem>.
int run_bundled(const std::string& cmd, const std::string& config, const std::string& tag, const std::string& jobs) {
  const std::string cfg = kConfigs + "/" + config;
  const std::string out = (kWork / tag / fs::path(config).stem()).string();
  const char* argv[] = {"nekh_lab", cmd.c_str(), "--config", cfg.c_str(), "--out", out.c_str(), "--jobs", jobs.c_str()};
  std::ostringstream o, e;
  const int rc = cli::run(8, argv, o, e);
  if (rc != 0) std::cerr << cmd << " " << config << " failed (" << rc << "): " << e.str();
  return rc;
}

const std::vector<std::pair<std::string, std::string>> kBundled = {
    {"drift-scan", "drift_scan_demo.json"},     {"theorem2", "theorem2_p2.json"},
    {"scaling-check", "scaling_check.json"},    {"steepness", "steepness_h2.json"},
    {"steepness", "steepness_h3.json"},         {"steepness", "steepness_saddle.json"},
    {"diophantine", "diophantine_golden.json"}, {"simulate", "simulate_demo.json"},
    {"exponents", "exponents.json"},            {"autonomize-verify", "autonomize_verify.json"}};

// ---------------------------------------------------------------------------

Verdict derivatives() {
  Verdict v;
  std::vector<std::pair<std::string, SlowSystem>> systems = {
      {"demo_n2_p2", slow_system_from_json(load("systems/demo_n2_p2.json"))},
      {"demo_n2_p3", slow_system_from_json(load("systems/demo_n2_p3.json"))}};
  for (const char* m : {"mech_n2_p2", "mech_n2_p3"})
    systems.emplace_back(m, mechanical_from_json(load(std::string("systems/") + m + ".json")).as_slow_system(2.0));
  CounterRng rng(1);
  for (const auto& [name, sys] : systems) {
    double worst = 0.0;
    const auto n = sys.dimension();
    for (int i = 0; i < 100; ++i) {
      Vec th(n);
      for (Eigen::Index j = 0; j < n; ++j) th[j] = rng.uniform();
      const Vec I = rng.in_ball(n, sys.h().domain_radius());
      const double tau = rng.uniform(-3.0, 3.0);
      FEval e;
      sys.f().evaluate(th, I, tau, e);
      auto hv = [&](const Vec& x) { return sys.h().value(x); };
      auto f_th = [&](const Vec& x) { return oracle::f_value(sys.f(), x, I, tau); };
      auto f_I = [&](const Vec& x) { return oracle::f_value(sys.f(), th, x, tau); };
      auto f_tau = [&](const Vec& x) { return oracle::f_value(sys.f(), th, I, x[0]); };
      Vec t1(1);
      t1[0] = tau;
      worst = std::max({worst, oracle::rel_err(sys.h().gradient(I), oracle::gradient(hv, I)),
                        oracle::rel_err(e.d_theta, oracle::gradient(f_th, th)),
                        oracle::rel_err(e.d_action, oracle::gradient(f_I, I)),
                        oracle::rel_err(e.d_tau, oracle::central_diff(f_tau, t1, 0))});
    }
    v.require(worst < 1e-6, name + " max rel err " + num(worst));
  }
  return v;
}

Verdict integrator_order() {
  Verdict v;
  const State s0({0.1, 0.3}, {0.3, 0.2}, 0.0);
  const SlowSystem lin = slow_system_from_json(load("systems/demo_n2_p2.json")).with_epsilon(0.1);
  const SlowSystem gen = slow_system_from_json(load("systems/demo_n2_p3.json")).with_epsilon(0.1);
  const auto y4 = checks::step_halving(lin, s0, 10.0, 0.05, Method::SplitYoshida4, checks::reference8(lin, s0, 10.0, 1e-3));
  v.require(y4.ratio() >= 13.0 && y4.ratio() <= 19.0, "yoshida4 ratio " + num(y4.ratio()));
  const auto mp = checks::step_halving(gen, s0, 10.0, 0.05, Method::ImplicitMidpoint,
                                       checks::reference_same(gen, s0, 10.0, 1e-3, Method::ImplicitMidpoint));
  v.require(mp.ratio() >= 3.5 && mp.ratio() <= 4.5, "midpoint ratio " + num(mp.ratio()));
  double rev = 0.0;
  CounterRng rng(2);
  for (int i = 0; i < 5; ++i) {
    const State s({rng.uniform(), rng.uniform()}, ActionVector(rng.in_ball(2, 0.8)), rng.uniform(0.0, 10.0));
    rev = std::max({rev, checks::reversibility_error(lin, s, 1e-2, 1000, Method::SplitYoshida4),
                    checks::reversibility_error(gen, s, 1e-2, 1000, Method::ImplicitMidpoint)});
  }
  v.require(rev < 1e-10, "reversibility " + num(rev));
  return v;
}

Verdict autonomization() {
  Verdict v;
  for (const char* name : {"demo_n2_p2", "demo_n2_p3"}) {
    const SlowSystem sys = slow_system_from_json(load(std::string("systems/") + name + ".json"));
    const auto rep = verify_autonomization(sys, State({0.2, 0.5}, {0.3, 0.2}, 0.0), 1e3, StepperSpec{Method::ImplicitMidpoint, 1e-2});
    v.require(rep.steps == 100000 && rep.deviation < 1e-9 && rep.x_linearity < 1e-10 && rep.energy_drift < 1e-6 &&
                  std::fabs(rep.energy_slope) < 1e-10,
              std::string(name) + " dev " + num(rep.deviation) + ", x " + num(rep.x_linearity) + ", dH " +
                  num(rep.energy_drift) + ", slope " + num(rep.energy_slope));
  }
  return v;
}

Verdict conjugacy() {
  Verdict v;
  double worst_res = 0.0, worst_dev = 0.0;
  for (const char* name : {"mech_n2_p2", "mech_n2_p3"}) {
    const MechanicalSystem mech = mechanical_from_json(load(std::string("systems/") + name + ".json"));
    for (double R : {2.0, 4.0, 10.0}) {
      worst_res = std::max(worst_res, scaling_field_residual(mech, R, 100));
      // non-resonant start, I'(0) = (0.5, 0.3) in scaled variables
      const State s0({0.1, 0.7}, {0.5 * R, 0.3 * R}, 0.0);
      const auto rep = verify_scaling_conjugacy(mech, R, s0, 1e3, StepperSpec{Method::SplitYoshida4, 1e-2});
      worst_dev = std::max(worst_dev, rep.trajectory_deviation);
    }
  }
  v.require(worst_res < 1e-12, "field residual " + num(worst_res));
  v.require(worst_dev < 1e-8, "dual-integration deviation " + num(worst_dev));
  return v;
}

Verdict steepness() {
  Verdict v;
  const struct {
    const char* name;
    IntegrableH h;
    SteepnessConstants k;
    bool steep;
  } cases[] = {{"h2", IntegrableH::power_law(2, 2, 2.0), {1.0, 1.0, 1.0}, true},
               {"h3", IntegrableH::power_law(3, 2, 2.0), {2.0, 1.0, 1.0}, true},
               {"I1^2-I2^2", IntegrableH::polynomial({{{2, 0}, 1.0}, {{0, 2}, -1.0}}, 2, 2.0), {1.0, 1.0, 1.0}, false}};
  for (const auto& c : cases) {
    const auto rep = check_steepness_all(c.h, 200, 50, default_delta_grid(c.k), c.k, 42);
    std::string margins;
    for (const auto& r : rep.records) margins += (margins.empty() ? "" : ",") + num(r.worst_margin);
    v.require(rep.passed() == c.steep, std::string(c.name) + (rep.passed() ? " no counterexample" : " counterexample") +
                                           " (worst margins " + margins + ")");
  }
  return v;
}

Verdict drift_scaling() {
  Verdict v;
  if (run_bundled("drift-scan", "drift_scan_demo.json", "a", "1") != 0) return {false, "drift-scan run failed"};
  const CsvTable t = read_table(kWork / "a/drift_scan_demo/drift_scan.csv");
  v.require(t.rows.size() == 12, std::to_string(t.rows.size()) + " records");
  std::map<double, double, std::greater<>> worst;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double e = t.number(i, t.column("epsilon"));
    worst[e] = std::max(worst[e], t.number(i, t.column("sup_drift")));
  }
  bool decreasing = true;
  std::string seq;
  double prev = std::numeric_limits<double>::infinity();
  for (auto [e, d] : worst) {
    decreasing = decreasing && d < prev;
    prev = d;
    seq += (seq.empty() ? "" : " > ") + num(d);
  }
  v.require(decreasing && worst.size() == 3, "max drift " + seq);
  const json sum = json::parse(slurp(kWork / "a/drift_scan_demo/summary.json"));
  if (sum["fit"].is_null()) return {false, "no fit"};
  const double b = sum["fit"]["b_hat"], r2 = sum["fit"]["r2"];
  v.require(b >= 0.35, "b_hat " + num(b));
  v.require(r2 >= 0.9, "R^2 " + num(r2));
  return v;
}

Verdict theorem2() {
  Verdict v;
  if (run_bundled("theorem2", "theorem2_p2.json", "a", "1") != 0) return {false, "theorem2 run failed"};
  const CsvTable t = read_table(kWork / "a/theorem2_p2/theorem2.csv");
  bool exact = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    exact = exact && t.number(i, t.column("drift_original")) == t.number(i, t.column("R")) * t.number(i, t.column("drift_scaled"));
  v.require(exact && t.rows.size() == 16, "drift_original == R * drift_scaled on " + std::to_string(t.rows.size()) + " rows");
  const json sum = json::parse(slurp(kWork / "a/theorem2_p2/summary.json"));
  if (sum["fit"].is_null()) return {false, "no fit"};
  const double slope = sum["fit"]["slope"];
  v.require(slope < 1.0, "slope " + num(slope) + " (reference " + num(sum["reference"]["slope_prediction"].get<double>()) + ")");
  return v;
}

Verdict diophantine() {
  Verdict v;
  const double g11 = diophantine_estimate(Vec::Ones(2), 0.0, 1).gamma;
  v.require(g11 == 0.0, "(1,1) K=1 gamma " + num(g11));
  Vec golden(2);
  golden << 1.0, (1.0 + std::sqrt(5.0)) / 2.0;
  const double g30 = diophantine_estimate(golden, 1.0, 30).gamma, g50 = diophantine_estimate(golden, 1.0, 50).gamma;
  v.require(g30 > 0.0 && num(g30) == num(g50), "golden K=30 " + num(g30) + ", K=50 " + num(g50));
  return v;
}

Verdict reproducibility() {
  Verdict v;
  // criteria 6 and 7 already produced run "a" of their configs
  for (const auto& [cmd, cfg] : kBundled) {
    if (cmd == "drift-scan" || cmd == "theorem2") continue;
    if (run_bundled(cmd, cfg, "a", "1") != 0) return {false, cfg + " run failed"};
  }
  int files = 0;
  for (const auto& [cmd, cfg] : kBundled) {
    if (run_bundled(cmd, cfg, "b", "2") != 0) return {false, cfg + " rerun failed"};
    const std::string stem = fs::path(cfg).stem().string();
    for (const auto& entry : fs::directory_iterator(kWork / "a" / stem)) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = kWork / "b" / stem / entry.path().filename();
      if (slurp(entry.path()) != slurp(other)) v.require(false, stem + "/" + entry.path().filename().string() + " differs");
    }
  }
  v.require(files > 0, std::to_string(files) + " CSV files byte-identical across reruns (jobs 1 vs 2)");
  return v;
}

}  // namespace

int main() {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const struct {
    int id;
    const char* title;
    double budget_s;
    std::function<Verdict()> fn;
  } criteria[] = {{1, "derivative correctness", 1.0, derivatives},
                  {2, "integrator order and reversibility", 10.0, integrator_order},
                  {3, "autonomization exactness", 30.0, autonomization},
                  {4, "scaling conjugacy", 60.0, conjugacy},
                  {5, "steepness certificate", 60.0, steepness},
                  {6, "drift scaling on the demo system", 600.0, drift_scaling},
                  {7, "mechanical drift bookkeeping and sublinearity", 600.0, theorem2},
                  {8, "Diophantine scanner", 5.0, diophantine},
                  {9, "reproducibility of bundled configs", std::numeric_limits<double>::infinity(), reproducibility}};
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) v.require(false, "runtime " + num(secs) + " s over budget " + num(c.budget_s) + " s");
    if (!v.pass) ++failed;
    std::printf("criterion %d: %s  %s (%.2f s): %s\n", c.id, v.pass ? "PASS" : "FAIL", c.title, secs, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of 9 criteria passed\n", 9 - failed);
  fs::remove_all(kWork);
  return failed == 0 ? 0 : 1;
}
