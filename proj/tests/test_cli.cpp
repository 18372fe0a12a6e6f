#include "nekhlab/cli.hpp"

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace nekhlab;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nekh_lab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& s, const std::string& pat) {
  std::size_t n = 0;
  for (auto p = s.find(pat); p != std::string::npos; p = s.find(pat, p + 1)) ++n;
  return n;
}

std::string systems_dir() { return std::string(NEKHLAB_CONFIG_DIR) + "/systems/"; }

/// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("nekhlab_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string config(const std::string& name, const json& j) const {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p.string();
  }
  std::string out(const std::string& name) const { return (dir / name).string(); }
};

json small_scan() {
  return {{"system_file", systems_dir() + "demo_n2_p2.json"},
          {"epsilon_grid", {1e-2, 1e-3, 1e-4}},
          {"horizon", {{"rule", "fixed"}, {"T", 20}}},
          {"seeds", {1, 2, 3, 4}}};
}

}  // namespace

TEST_CASE("exponents prints the reference table", "[cli]") {
  Scratch s("exponents");
  const auto r = run_cli({"exponents", "--n", "2", "--case", "convex", "--out", s.out("o")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("convex,2,") != std::string::npos);
  CHECK(r.out.find(",0.25,0.25,reference") != std::string::npos);
  CHECK(fs::exists(s.dir / "o/exponents.json"));
  CHECK(fs::exists(s.dir / "o/manifest.json"));

  const auto all = run_cli({"exponents", "--n", "2", "--tau", "1", "--out", s.out("o2")});
  REQUIRE(all.code == 0);
  CHECK(count(all.out, "\n") == 5);
  CHECK(all.out.find("quasiperiodic,2,1,2,0.125,0.125,conjectural") != std::string::npos);
  CHECK(all.out.find("periodic,2,1,2,0.16666666666666666,") != std::string::npos);

  CHECK(run_cli({"exponents", "--case", "elliptic", "--out", s.out("o3")}).code == 2);
}

TEST_CASE("scaling-check with R = 1 is the identity", "[cli]") {
  Scratch s("scaling");
  const auto r = run_cli({"scaling-check", "--p", "2", "--R", "1", "--out", s.out("o")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("R=1 deviation 0 ") != std::string::npos);
  const json sum = json::parse(slurp(s.dir / "o/summary.json"));
  CHECK(sum["max_deviation"] == 0.0);
  CHECK(sum["max_field_residual"] == 0.0);
}

TEST_CASE("drift-scan writes one row per cell", "[cli]") {
  Scratch s("scan");
  const auto cfg = s.config("scan.json", small_scan());
  const auto r = run_cli({"drift-scan", "--config", cfg, "--out", s.out("o"), "--plot"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(s.dir / "o/drift_scan.csv");
  CHECK(count(csv, "\n") == 13);
  CHECK(csv.rfind(std::string(kDriftCsvHeader) + "\n", 0) == 0);
  const json sum = json::parse(slurp(s.dir / "o/summary.json"));
  CHECK(sum["records"] == 12);
  CHECK(sum["fit"].is_object());
  CHECK(sum["failed_cells"].empty());
  const std::string svg = slurp(s.dir / "o/drift_scan.svg");
  CHECK(count(svg, "class=\"marker\"") == 12);
  CHECK(count(svg, "<line class=\"fit\"") == 1);

  const json man = json::parse(slurp(s.dir / "o/manifest.json"));
  CHECK(man["command"] == "drift-scan");
  CHECK(man["config_sha1"] == cli::git_blob_sha1(slurp(cfg)));
  CHECK(man["effective_config"].contains("system"));
  CHECK_FALSE(man["effective_config"].contains("system_file"));
  CHECK(man["outputs"] == json({"drift_scan.csv", "summary.json", "drift_scan.svg"}));
  CHECK(man["versions"].contains("eigen"));
}

TEST_CASE("a run is reproducible from its manifest", "[cli]") {
  Scratch s("manifest");
  json cfg = small_scan();
  cfg.erase("seeds");
  cfg["n_seeds"] = 2;
  REQUIRE(run_cli({"drift-scan", "--config", s.config("a.json", cfg), "--seed", "9", "--out", s.out("a")}).code == 0);
  const json man = json::parse(slurp(s.dir / "a/manifest.json"));
  CHECK(man["effective_config"]["seeds"] == json({9, 10}));
  const auto again = s.config("b.json", man["effective_config"]);
  REQUIRE(run_cli({"drift-scan", "--config", again, "--out", s.out("b"), "--jobs", "3"}).code == 0);
  CHECK(slurp(s.dir / "a/drift_scan.csv") == slurp(s.dir / "b/drift_scan.csv"));
}

TEST_CASE("config errors exit 2 with the offending path", "[cli]") {
  Scratch s("errors");
  auto expect = [&](const json& cfg, const std::string& path) {
    const auto r = run_cli({"drift-scan", "--config", s.config("bad.json", cfg), "--out", s.out("o")});
    CHECK(r.code == 2);
    INFO(r.err);
    CHECK(r.err.find(path) != std::string::npos);
  };
  json c = small_scan();
  c["horizon"]["bogus"] = 1;
  expect(c, "/horizon/bogus: unknown key");

  c = small_scan();
  c["extra"] = true;
  expect(c, "/extra: unknown key");

  c = small_scan();
  c.erase("epsilon_grid");
  expect(c, "/epsilon_grid: missing required key");

  c = small_scan();
  c["epsilon_grid"] = {1e-2, "small"};
  expect(c, "/epsilon_grid/1");

  c = small_scan();
  c["epsilon_grid"] = {1e-3, 1e-2};
  expect(c, "/epsilon_grid/1: grid must be strictly decreasing");

  c = small_scan();
  c["horizon"] = {{"rule", "fixed"}};
  expect(c, "/horizon/T");

  c = small_scan();
  c.erase("system_file");
  expect(c, "/system: missing");

  c = small_scan();
  c["system_file"] = "nowhere.json";
  expect(c, "nowhere.json: cannot open");

  c = small_scan();
  c.erase("system_file");
  c["system"] = json::parse(slurp(systems_dir() + "demo_n2_p2.json"));
  c["system"]["perturbation"]["modes"][0]["envelope"]["kind"] = "square";
  expect(c, "/system/perturbation/modes/0/envelope/kind");

  std::ofstream(s.dir / "broken.json") << "{\"T\": ";
  const auto r = run_cli({"simulate", "--config", (s.dir / "broken.json").string(), "--out", s.out("o")});
  CHECK(r.code == 2);
  CHECK(r.err.find("parse error") != std::string::npos);

  const json av = {{"system_file", systems_dir() + "demo_n2_p3.json"}, {"T", 1}, {"stepper", {{"method", "yoshida4"}}}};
  const auto a = run_cli({"autonomize-verify", "--config", s.config("av.json", av), "--out", s.out("o")});
  CHECK(a.code == 2);
  CHECK(a.err.find("/stepper/method") != std::string::npos);

  CHECK(run_cli({"drift-scan", "--out", s.out("o")}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"exponents", "--jobs", "0"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("runtime failures exit 1 naming the cell", "[cli]") {
  Scratch s("runtime");
  const json cfg = {{"system_file", systems_dir() + "demo_n2_p3.json"},
                    {"epsilon_grid", {0.9, 0.5}},
                    {"horizon", {{"rule", "fixed"}, {"T", 200}}},
                    {"seeds", {1}},
                    {"stepper", {{"method", "midpoint"}, {"dt", 40}}}};
  const auto r = run_cli({"drift-scan", "--config", s.config("c.json", cfg), "--out", s.out("o")});
  CHECK(r.code == 1);
  CHECK(r.err.find("cell eps=0.9 seed=1") != std::string::npos);
  CHECK(r.err.find("no convergence") != std::string::npos);
  const json sum = json::parse(slurp(s.dir / "o/summary.json"));
  CHECK(sum["failed_cells"].size() == 2);
  CHECK(json::parse(slurp(s.dir / "o/manifest.json"))["exit_status"] == 1);
}

TEST_CASE("theorem2 writes bookkeeping-exact rows and a dashed guide", "[cli]") {
  Scratch s("theorem2");
  const json cfg = {{"mechanical_file", systems_dir() + "mech_n2_p2.json"},
                    {"R_grid", {2, 4, 8}},
                    {"horizon", {{"rule", "fixed"}, {"T", 20}}},
                    {"seeds", {1, 2}}};
  const auto r = run_cli({"theorem2", "--config", s.config("t.json", cfg), "--out", s.out("o"), "--plot"});
  REQUIRE(r.code == 0);
  std::istringstream in(slurp(s.dir / "o/theorem2.csv"));
  const CsvTable t = read_csv(in);
  REQUIRE(t.rows.size() == 6);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double R = t.number(i, t.column("R"));
    CHECK(t.number(i, t.column("drift_original")) == R * t.number(i, t.column("drift_scaled")));
    CHECK(t.number(i, t.column("epsilon")) == 1.0 / (R * R));
    CHECK(t.number(i, t.column("slope_prediction")) == 0.5);
  }
  const std::string svg = slurp(s.dir / "o/theorem2.svg");
  CHECK(count(svg, "<line class=\"reference\"") == 1);
  CHECK(svg.find("stroke-dasharray=\"6 4\" clip-path") != std::string::npos);
  CHECK(json::parse(slurp(s.dir / "o/summary.json"))["bookkeeping_exact"] == true);
}

TEST_CASE("NEKH_LAB_OUT overrides --out", "[cli]") {
  Scratch s("env");
  ::setenv("NEKH_LAB_OUT", s.out("env").c_str(), 1);
  const auto r = run_cli({"exponents", "--out", s.out("flag")});
  ::unsetenv("NEKH_LAB_OUT");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(s.dir / "env/exponents.csv"));
  CHECK_FALSE(fs::exists(s.dir / "flag"));
}

TEST_CASE("config out is relative to the config file", "[cli]") {
  Scratch s("cfgout");
  const auto cfg = s.config("d.json", {{"omega", {1, 1}}, {"tau", 1}, {"K_values", {1}}, {"out", "res"}});
  const auto r = run_cli({"diophantine", "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(r.out == "K=1 gamma_hat 0\n");
  CHECK(fs::exists(s.dir / "res/diophantine.csv"));
}

TEST_CASE("simulate, steepness and autonomize-verify outputs", "[cli]") {
  Scratch s("misc");
  const json sim = {{"system_file", systems_dir() + "demo_n2_p2.json"}, {"T", 1}, {"stride", 10}, {"binary", true}};
  REQUIRE(run_cli({"simulate", "--config", s.config("sim.json", sim), "--out", s.out("sim")}).code == 0);
  const std::string bin = slurp(s.dir / "sim/trajectory.bin");
  CHECK(bin.substr(0, 7) == "NKHTRAJ");
  CHECK_FALSE(fs::exists(s.dir / "sim/trajectory.csv"));

  const json st = {{"integrable", {{"variant", "polynomial"}, {"n", 2}, {"rho", 2.0},
                                   {"terms", {{{"exponents", {2, 0}}, {"coef", 1}}, {{"exponents", {0, 2}}, {"coef", -1}}}}}},
                   {"n_subspaces", 50},
                   {"n_curves", 20},
                   {"k", {1}}};
  const auto r = run_cli({"steepness", "--config", s.config("st.json", st), "--out", s.out("st")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("k=1: counterexample") != std::string::npos);
  std::istringstream curve(slurp(s.dir / "st/counterexample_k1.csv"));
  CHECK(read_csv(curve).header == std::vector<std::string>{"node", "I_1", "I_2"});
  const json rep = json::parse(slurp(s.dir / "st/steepness.json"));
  CHECK(rep["passed"] == false);
  CHECK(rep["seed"] == 42);

  const json av = {{"system_file", systems_dir() + "demo_n2_p3.json"}, {"T", 10}};
  REQUIRE(run_cli({"autonomize-verify", "--config", s.config("av.json", av), "--out", s.out("av")}).code == 0);
  const json a = json::parse(slurp(s.dir / "av/autonomize.json"));
  CHECK(a["steps"] == 1000);
  CHECK(a["deviation"].get<double>() < 1e-12);
}

TEST_CASE("git blob hash", "[cli]") {
  CHECK(cli::git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(cli::git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("the installed binary reports exit codes", "[cli]") {
  Scratch s("binary");
  const std::string exe = NEKHLAB_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int raw = std::system((exe + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("exponents --n 2 --case convex --out " + s.out("o")) == 0);
  CHECK(status("drift-scan --out " + s.out("o")) == 2);
  CHECK(status("--config") == 2);
}
