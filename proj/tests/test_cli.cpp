#include <filesystem>
#include <fstream>

#include "app.hpp"
#include "doctest.h"

using namespace stmchain;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("stmchain_test_" + name);
  fs::remove_all(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

std::string first_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  return line;
}

}  // namespace

TEST_CASE("autonomous run writes trajectories and a manifest") {
  const auto dir = scratch("auto");
  auto c = app::resolve_config("autonomous", "", {"time.t_max_ns=10"});
  const auto out = app::run_protocol(c, dir, {"stmchain", "autonomous"});
  CHECK(out.exit_code == app::kOk);
  CHECK(first_line(dir / "trajectory_N2_exchange.csv") == "time_ns,yield,sz_mean");
  const auto m = read_json(dir / "manifest.json");
  CHECK(m.at("status") == "ok");
  CHECK(m.at("error").is_null());
  CHECK(m.at("version") == app::kVersion);
  CHECK(m.at("outputs").size() == 4);
  CHECK(m.at("config").at("time").at("t_max_ns") == 10.0);
  CHECK(m.contains("tolerances"));
  CHECK(m.contains("started_utc"));
  CHECK(m.contains("finished_utc"));
  CHECK_FALSE(fs::exists(dir / "manifest.json.tmp"));
}

TEST_CASE("missing or invalid configs fail before anything is written") {
  CHECK_THROWS_AS(app::resolve_config("oct", "/nonexistent/config.yaml", {}), ConfigError);
  CHECK_THROWS_AS(app::resolve_config("oct", "", {"oct.bogus=1"}), ConfigError);
  const auto path = fs::temp_directory_path() / "stmchain_test_wrong_protocol.yaml";
  std::ofstream(path) << "protocol: autonomous\n";
  CHECK_THROWS_AS(app::resolve_config("oct", path.string(), {}), ConfigError);
  fs::remove(path);
}

TEST_CASE("output directory resolution") {
  auto c = default_config("oct");
  c.output_dir = "runs/a";
  CHECK(app::resolve_output_dir(c, "/tmp/x") == fs::path("/tmp/x"));
  setenv("STMCHAIN_OUTPUT_ROOT", "/data", 1);
  CHECK(app::resolve_output_dir(c, "") == fs::path("/data/runs/a"));
  unsetenv("STMCHAIN_OUTPUT_ROOT");
  CHECK(app::resolve_output_dir(c, "") == fs::path("runs/a"));
}

TEST_CASE("reruns from a manifest reproduce the result files") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  auto c = app::resolve_config("tip-scan", "", {"time.t_max_ns=20", "tip_scan.z_list_A=[4.5, 4.75, 5.0, 8.0]"});
  REQUIRE(app::run_protocol(c, a).exit_code == app::kOk);
  REQUIRE(app::rerun_manifest(a / "manifest.json", b).exit_code == app::kOk);
  const auto rep = app::compare_runs(a, b);
  CHECK(rep.identical);
  for (const auto& d : rep.differences) MESSAGE(d);

  // A changed file is detected.
  std::ofstream(b / "tip_scan.csv", std::ios::app) << "9,0.5,1\n";
  CHECK_FALSE(app::compare_runs(a, b).identical);
}

TEST_CASE("plot data export") {
  const auto run = scratch("plot_run");
  auto c = app::resolve_config("tip-scan", "", {"time.t_max_ns=10", "tip_scan.z_list_A=[5.0, 4.0, 6.0]"});
  REQUIRE(app::run_protocol(c, run).exit_code == app::kOk);
  const auto out = scratch("plot_out.csv");
  app::plot_data("fig4", {run}, out);
  const auto t = app::read_csv(out);
  REQUIRE(t.header == std::vector<std::string>{"z_tip_A", "yield_N3"});
  CHECK(t.rows.size() == 3);
  CHECK(t.rows[0][0] < t.rows[1][0]);
  CHECK(t.rows[1][0] < t.rows[2][0]);

  const auto bad = scratch("plot_bad.csv");
  CHECK_THROWS(app::plot_data("fig5", {run}, bad));
  CHECK_FALSE(fs::exists(bad));
  CHECK_THROWS(app::plot_data("fig4", {}, bad));
  CHECK_FALSE(fs::exists(bad));
}

TEST_CASE("empty result sets are refused") {
  const auto run = scratch("plot_empty");
  fs::create_directories(run);
  nlohmann::json m{{"protocol", "oct"}, {"status", "failed"}, {"outputs", nlohmann::json::array()},
                   {"results", {{"runs", nlohmann::json::array()}}},
                   {"config", {{"system", {{"n_chain", 4}, {"tip_height_A", 8.0}}}}}};
  std::ofstream(run / "manifest.json") << m.dump();
  const auto out = scratch("plot_empty.csv");
  CHECK_THROWS_WITH(app::plot_data("fig8", {run}, out), doctest::Contains("empty"));
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("csv formatting keeps 12 significant digits") {
  app::CsvTable t{{"time_ns", "yield"}, {{0.1, 1.0 / 3.0}}};
  CHECK(app::format_csv(t) == "time_ns,yield\n0.1,0.333333333333\n");
}
