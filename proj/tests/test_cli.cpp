#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("kamqm_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

// Runs the CLI in `cwd` with extra environment prefix; returns the exit code.
int run(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + cwd.string() + "' && env -u KAMQM_OUTPUT_DIR " + env + " '" KAMQM_CLI_PATH "' " +
                          args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string f; std::getline(in, f, sep);) out.push_back(f);
  return out;
}

}  // namespace

TEST_CASE("bands: output, manifest and cache") {
  Scratch s("bands");
  const std::string args = "bands --potential cosine --hbar 0.2 --k-grid 4 --bands 3 --output out";
  REQUIRE(run(s.dir, args) == 0);
  const auto rows = lines(s.dir / "out/bands.csv");
  REQUIRE(rows.size() == 1 + 4 * 3);
  CHECK(rows[0] == "hbar,k1,n,E,v1,converged");
  CHECK(split(rows[1]).size() == 6);
  json m = manifest(s.dir / "out");
  CHECK(m["exit_code"] == 0);
  CHECK(m["status"] == "ok");
  CHECK(m["command"] == "bands");
  CHECK(m["cache"][0]["hit"] == false);
  CHECK(m["config"]["run.hbar"]["value"] == "0.2");
  CHECK(m["config"]["run.hbar"]["origin"] == "flag");
  CHECK(m["config"]["run.energy"]["origin"] == "default");

  const std::string first = slurp(s.dir / "out/bands.csv");
  REQUIRE(run(s.dir, args) == 0);
  CHECK(manifest(s.dir / "out")["cache"][0]["hit"] == true);
  CHECK(slurp(s.dir / "out/bands.csv") == first);

  // A different hbar is a different cache entry.
  REQUIRE(run(s.dir, "bands --potential cosine --hbar 0.1 --k-grid 4 --bands 3 --output out") == 0);
  CHECK(manifest(s.dir / "out")["cache"][0]["hit"] == false);
}

TEST_CASE("invalid values stop before any work") {
  Scratch s("invalid");
  CHECK(run(s.dir, "bands --delta 1.5 --output out") == 2);
  json m = manifest(s.dir / "out");
  CHECK(m["status"] == "config_error");
  CHECK(m["error"]["message"].get<std::string>().find("delta") != std::string::npos);
  CHECK_FALSE(fs::exists(s.dir / "out/bands.csv"));

  CHECK(run(s.dir, "bands --hbar -0.1 --output out") == 2);
  CHECK(run(s.dir, "bands --k-grid zero --output out") == 2);
  CHECK(run(s.dir, "bands --no-such-flag --output out") == 2);
  CHECK(run(s.dir, "") == 2);
}

TEST_CASE("stochastic stages need a seed") {
  Scratch s("seed");
  CHECK(run(s.dir, "classical --output out") == 2);
  CHECK(manifest(s.dir / "out")["error"]["message"].get<std::string>().find("seed") != std::string::npos);
}

TEST_CASE("domain errors exit 1 with a manifest") {
  Scratch s("domain");
  CHECK(run(s.dir, "bands --potential /nonexistent/v.txt --output out") == 1);
  json m = manifest(s.dir / "out");
  CHECK(m["exit_code"] == 1);
  CHECK(m["status"] == "domain_error");
  CHECK(m["error"].contains("message"));
  CHECK(run(s.dir, "kam --potential cosine --energy 0.5 --delta 0.2 --output out2") == 0);
}

TEST_CASE("config files, sections and precedence") {
  Scratch s("config");
  {
    std::ofstream cfg(s.dir / "run.ini");
    cfg << "[run]\nhbar = 0.25\nk_grid = 2\noutput = from_file\n[bands]\ncount = 2\n";
  }
  REQUIRE(run(s.dir, "bands --config run.ini") == 0);
  json m = manifest(s.dir / "from_file");
  CHECK(m["config"]["run.hbar"]["origin"] == "file");
  CHECK(lines(s.dir / "from_file/bands.csv").size() == 1 + 2 * 2);

  // Flag beats file.
  REQUIRE(run(s.dir, "bands --config run.ini --hbar 0.3") == 0);
  m = manifest(s.dir / "from_file");
  CHECK(m["config"]["run.hbar"]["value"] == "0.3");
  CHECK(m["config"]["run.hbar"]["origin"] == "flag");

  // Environment beats file, --output beats environment.
  REQUIRE(run(s.dir, "bands --config run.ini", "KAMQM_OUTPUT_DIR=from_env") == 0);
  CHECK(fs::exists(s.dir / "from_env/bands.csv"));
  REQUIRE(run(s.dir, "bands --config run.ini --output from_flag", "KAMQM_OUTPUT_DIR=from_env") == 0);
  CHECK(fs::exists(s.dir / "from_flag/bands.csv"));

  {
    std::ofstream bad(s.dir / "bad.ini");
    bad << "[run]\nhbarr = 0.1\n";
  }
  CHECK(run(s.dir, "bands --config bad.ini --output out") == 2);
  {
    std::ofstream bare(s.dir / "bare.ini");
    bare << "hbar = 0.1\n";
  }
  CHECK(run(s.dir, "bands --config bare.ini --output out") == 2);
  CHECK(run(s.dir, "bands --config missing.ini --output out") == 2);
}

TEST_CASE("classical measure is bit-identical across worker counts") {
  Scratch s("classical");
  const std::string base = "classical --potential cosine --energy 2 --samples 300 --T 20 --seed 7";
  REQUIRE(run(s.dir, base + " --workers 1 --output w1") == 0);
  REQUIRE(run(s.dir, base + " --workers 3 --output w3") == 0);
  const std::string a = slurp(s.dir / "w1/measure_classical.txt");
  CHECK(a.size() > 1000);
  CHECK(a == slurp(s.dir / "w3/measure_classical.txt"));
}

TEST_CASE("free compare is within two sigma") {
  Scratch s("compare");
  REQUIRE(run(s.dir,
              "compare --potential free --energy 1 --hbar 0.1,0.05 --k-grid 64 --samples 4000 --T 10 --dt 0.01 "
              "--seed 5 --output out") == 0);
  const auto rows = lines(s.dir / "out/compare.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "hbar,discrepancy,mc_error,within_2sigma,wasserstein,mass_q,mass_c");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(split(rows[i])[3] == "1");
  CHECK(lines(s.dir / "out/compare_panel.csv").size() == 1 + 2 * 9);
  CHECK(fs::exists(s.dir / "out/measure_quantum_0.txt"));
}

TEST_CASE("kam and quasimode stages") {
  Scratch s("kam");
  REQUIRE(run(s.dir, "kam --potential cosine --energy 2 --tori 3 --output out") == 0);
  const auto kam = lines(s.dir / "out/kam.csv");
  REQUIRE(kam.size() == 2);
  CHECK(std::stod(split(kam[1])[5]) == doctest::Approx(1.0));
  CHECK(slurp(s.dir / "out/tori.txt").find("torus 2") != std::string::npos);

  REQUIRE(run(s.dir, "quasimode --potential cosine --energy 2 --hbar 0.1 --k 0.3 --output out") == 0);
  const auto qm = lines(s.dir / "out/quasimodes.csv");
  REQUIRE(qm.size() > 1);
  const auto head = split(qm[0]);
  std::size_t col = 0;
  while (col < head.size() && head[col] != "spectral_ok") ++col;
  REQUIRE(col < head.size());
  for (std::size_t i = 1; i < qm.size(); ++i) CHECK(split(qm[i])[col] == "1");
}
