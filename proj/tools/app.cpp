#include "app.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "stmchain/control.hpp"
#include "stmchain/propagate.hpp"
#include "stmchain/protocols.hpp"

namespace stmchain::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string tag(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

CsvTable trajectory_table(const TrajectoryResult& traj) {
  CsvTable t{{"time_ns", "yield", "sz_mean"}, {}};
  t.rows.reserve(traj.times.size());
  for (std::size_t i = 0; i < traj.times.size(); ++i) t.rows.push_back({traj.times[i], traj.yield[i], traj.sz_total[i]});
  return t;
}

CsvTable sweep_table(const SweepTable& s) {
  CsvTable t;
  t.header.push_back(s.x_column);
  t.header.insert(t.header.end(), s.columns.begin(), s.columns.end());
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    std::vector<double> row{s.x[i]};
    row.insert(row.end(), s.rows[i].begin(), s.rows[i].end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable spectrum_table(const Spectrum& s) {
  CsvTable t{{"freq_GHz", "magnitude_A"}, {}};
  for (const auto& b : s.bins) t.rows.push_back({b.freq_ghz, b.magnitude});
  return t;
}

CsvTable yields_table(const KrotovReport& r) {
  CsvTable t{{"iteration", "linear_yield"}, {}};
  for (std::size_t i = 0; i < r.yields.size(); ++i) t.rows.push_back({static_cast<double>(i), r.yields[i]});
  return t;
}

json krotov_json(const KrotovReport& r) {
  const auto sp = pulse_spectrum(r.field);
  json log = json::array();
  for (const auto& c : r.lambda_log) {
    log.push_back({{"iteration", c.iteration}, {"from_meV_per_A2", c.from}, {"to_meV_per_A2", c.to}, {"reason", c.reason}});
  }
  return {{"linear_yield", r.linear_yield},
          {"exact_yield", r.exact_yield},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"linearization_flag", r.linearization_flag},
          {"max_abs_displacement_A", r.field.max_abs()},
          {"final_lambda_meV_per_A2", r.field.lambda},
          {"dominant_GHz", sp.dominant_ghz},
          {"centroid_GHz", sp.centroid_ghz},
          {"lambda_log", log}};
}

/// Collects files for the manifest as they are written.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  void csv(const std::string& name, const std::string& role, const CsvTable& t) {
    atomic_write(dir_ / name, format_csv(t));
    add(name, role);
  }

  void pulse(const std::string& name, const KrotovReport& r, double z_tip, const ModelParams& p) {
    const auto tmp = dir_ / (name + ".tmp");
    write_pulse(tmp.string(), r.field, {z_tip, r.exact_yield, p.actuator.charge, p.actuator.k});
    fs::rename(tmp, dir_ / name);
    add(name, "pulse");
  }

  void add(const std::string& name, const std::string& role) { list_.push_back({{"file", name}, {"role", role}}); }
  [[nodiscard]] const json& list() const { return list_; }

 private:
  fs::path dir_;
  json list_ = json::array();
};

json run_autonomous(const ExperimentConfig& c, Outputs& out) {
  const auto r = autonomous_transfer(c);
  out.csv("autonomous_summary.csv", "summary", sweep_table(r.table));
  json res = json::object();
  for (const auto& lt : r.trajectories) {
    out.csv("trajectory_" + lt.label + ".csv", "trajectory", trajectory_table(lt.trajectory));
    const auto peak = max_yield(lt.trajectory);
    res[lt.label] = {{"best_yield", peak.value}, {"t_best_ns", peak.time}};
  }
  return res;
}

json run_field_scan(const ExperimentConfig& c, Outputs& out) {
  const auto r = field_scan(c);
  out.csv("field_scan.csv", "sweep", sweep_table(r.table));
  return {{"n_chain", c.system.geometry.n_chain}, {"stable_from_T", r.stable_from ? json(*r.stable_from) : json(nullptr)}};
}

json run_tip_scan(const ExperimentConfig& c, Outputs& out) {
  const auto r = tip_scan(c);
  out.csv("tip_scan.csv", "sweep", sweep_table(r.table));
  return {{"n_chain", c.system.geometry.n_chain},
          {"notin_peak_A", r.notin_peak ? json(*r.notin_peak) : json(nullptr)},
          {"notin_A", r.notin ? json(*r.notin) : json(nullptr)}};
}

json run_rf(const ExperimentConfig& c, Outputs& out) {
  const auto r = rf_experiment(c);
  out.csv("rf_sweep.csv", "sweep", sweep_table(r.table));
  out.csv("rf_best_trajectory.csv", "trajectory", trajectory_table(r.best_trajectory));
  return {{"n_chain", c.system.geometry.n_chain},
          {"best_omega_rad_per_ns", r.best.omega},
          {"best_freq_GHz", r.best.omega / (2.0 * std::numbers::pi)},
          {"best_yield", r.best.best_yield},
          {"t_best_ns", r.best.t_best},
          {"baseline_yield", r.baseline.value},
          {"baseline_t_ns", r.baseline.time}};
}

json run_oct(const ExperimentConfig& c, Outputs& out, bool& failed) {
  const auto r = oct_experiment(c);
  out.csv("oct_summary.csv", "summary", sweep_table(r.table));
  out.csv("oct_autonomous.csv", "trajectory", trajectory_table(r.autonomous));
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j{{"T_ns", run.duration}, {"autonomous_yield", run.autonomous_yield}, {"success", run.success}};
    const std::string t = tag(run.duration);
    if (run.report) {
      out.pulse("pulse_T" + t + "ns.csv", *run.report, c.system.geometry.tip_height, c.system);
      out.csv("spectrum_T" + t + "ns.csv", "spectrum", spectrum_table(pulse_spectrum(run.report->field)));
      out.csv("convergence_T" + t + "ns.csv", "convergence", yields_table(*run.report));
      j.update(krotov_json(*run.report));
    } else {
      j["error"] = run.error;
      failed = true;
    }
    runs.push_back(std::move(j));
  }
  return {{"z_tip_A", c.system.geometry.tip_height}, {"n_chain", c.system.geometry.n_chain}, {"runs", runs}};
}

json run_prepare(const ExperimentConfig& c, Outputs& out) {
  const auto r = prepare_initial_state(c);
  out.pulse("prepare_pulse.csv", r.report, c.prepare.tip_height, c.system);
  out.csv("prepare_spectrum.csv", "spectrum", spectrum_table(pulse_spectrum(r.report.field)));
  out.csv("prepare_convergence.csv", "convergence", yields_table(r.report));
  json j = krotov_json(r.report);
  j["fidelity"] = r.fidelity;
  return j;
}

json run_full(const ExperimentConfig& c, Outputs& out) {
  const auto r = full_protocol(c);
  if (r.preparation) out.pulse("prepare_pulse.csv", r.preparation->report, c.prepare.tip_height, c.system);
  out.csv("full_transmission.csv", "trajectory", trajectory_table(r.transmission));
  return {{"transmit", c.full.transmit},
          {"preparation_fidelity", r.preparation_fidelity},
          {"ideal_transmission", r.ideal_transmission},
          {"composite", r.composite},
          {"product_bound", r.product_bound},
          {"total_time_ns", r.total_time},
          {"budget_ns", c.full.budget},
          {"over_budget", r.over_budget}};
}

json tolerances(const ExperimentConfig& c) {
  return {{"csv_significant_digits", 12},
          {"norm_drift_max", 1e-8},
          {"sample_dt_ns", c.time.dt},
          {"rf_steps_per_period", c.rf.steps_per_period},
          {"krotov_tol", c.oct.krotov.tol},
          {"krotov_monotonic_tol", c.oct.krotov.monotonic_tol},
          {"krotov_displacement_cap_A", c.oct.krotov.displacement_cap},
          {"linearization_check", {{"max_displacement_A", 0.03}, {"max_yield_gap", 0.02}}}};
}

}  // namespace

void atomic_write(const fs::path& path, const std::string& content) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
    if (!f.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string format_csv(const CsvTable& table) {
  std::string s;
  for (std::size_t i = 0; i < table.header.size(); ++i) s += (i ? "," : "") + table.header[i];
  s += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) s += ',';
      s += num(row[i]);
    }
    s += '\n';
  }
  return s;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    if (!have_header) {
      while (std::getline(ss, cell, ',')) t.header.push_back(cell);
      have_header = true;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw std::runtime_error("ragged row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error("no header in " + path.string());
  return t;
}

ExperimentConfig resolve_config(const std::string& protocol, const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  ExperimentConfig c;
  if (config_path.empty()) {
    c = default_config(protocol);
  } else {
    if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
    c = load_config(config_path);
    if (c.protocol != protocol) {
      throw ConfigError("config key 'protocol': file is for '" + c.protocol + "', command is '" + protocol + "'");
    }
  }
  return apply_overrides(c, overrides);
}

fs::path resolve_output_dir(const ExperimentConfig& config, const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  fs::path dir = config.output_dir;
  if (const char* root = std::getenv("STMCHAIN_OUTPUT_ROOT"); root && *root && dir.is_relative()) {
    return fs::path(root) / dir;
  }
  return dir;
}

RunOutcome run_protocol(const ExperimentConfig& config, const fs::path& out_dir, const std::vector<std::string>& command) {
  json manifest{{"tool", "stmchain"},
                {"version", kVersion},
                {"protocol", config.protocol},
                {"command", command},
                {"started_utc", utc_now()},
                {"config", config_to_json(config)},
                {"field_T", {config.system.field.b.x(), config.system.field.b.y(), config.system.field.b.z()}},
                {"tolerances", tolerances(config)},
                {"seed", nullptr}};
  RunOutcome outcome;
  fs::create_directories(out_dir);
  Outputs out(out_dir);
  std::string error;
  try {
    const auto& p = config.protocol;
    bool failed = false;
    if (p == "autonomous") {
      outcome.results = run_autonomous(config, out);
    } else if (p == "field-scan") {
      outcome.results = run_field_scan(config, out);
    } else if (p == "tip-scan") {
      outcome.results = run_tip_scan(config, out);
    } else if (p == "rf-sweep") {
      outcome.results = run_rf(config, out);
    } else if (p == "oct") {
      outcome.results = run_oct(config, out, failed);
    } else if (p == "prepare") {
      outcome.results = run_prepare(config, out);
    } else if (p == "full") {
      outcome.results = run_full(config, out);
    } else {
      throw ConfigError("config key 'protocol': unsupported value '" + p + "'");
    }
    if (failed) {
      outcome.exit_code = kNotConverged;
      error = "one or more optimizations failed";
    }
  } catch (const ConfigError& e) {
    outcome.exit_code = kConfigError;
    error = e.what();
  } catch (const ControlError& e) {
    outcome.exit_code = kNotConverged;
    error = e.what();
  } catch (const NumericalError& e) {
    outcome.exit_code = kNumericFailure;
    error = e.what();
  } catch (const std::exception& e) {
    outcome.exit_code = kFailure;
    error = e.what();
  }
  manifest["finished_utc"] = utc_now();
  manifest["exit_code"] = outcome.exit_code;
  manifest["status"] = outcome.exit_code == kOk ? "ok" : "failed";
  manifest["error"] = error.empty() ? json(nullptr) : json(error);
  manifest["outputs"] = out.list();
  manifest["results"] = outcome.results;
  outcome.manifest = out_dir / "manifest.json";
  atomic_write(outcome.manifest, manifest.dump(2) + "\n");
  return outcome;
}

namespace {

json load_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == '=' || ch == ' ' || ch == '\t' || ch == '\r') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool same_token(const std::string& a, const std::string& b, double rel) {
  if (a == b) return true;
  char* ea = nullptr;
  char* eb = nullptr;
  const double x = std::strtod(a.c_str(), &ea);
  const double y = std::strtod(b.c_str(), &eb);
  if (*ea != '\0' || *eb != '\0' || ea == a.c_str() || eb == b.c_str()) return false;
  return std::abs(x - y) <= rel * std::max(std::abs(x), std::abs(y));
}

}  // namespace

RunOutcome rerun_manifest(const fs::path& manifest, const fs::path& out_dir) {
  const auto m = load_manifest(manifest_path(manifest));
  if (!m.contains("config")) throw ConfigError("manifest has no config snapshot");
  const auto config = config_from_json(m.at("config"));
  return run_protocol(config, out_dir, {"rerun", manifest.string()});
}

CompareReport compare_runs(const fs::path& dir_a, const fs::path& dir_b, int digits) {
  CompareReport rep;
  const auto ma = load_manifest(dir_a / "manifest.json");
  const auto mb = load_manifest(dir_b / "manifest.json");
  const double rel = 0.5 * std::pow(10.0, 1 - digits);
  auto differ = [&](std::string msg) {
    rep.identical = false;
    rep.differences.push_back(std::move(msg));
  };
  if (ma.at("outputs").size() != mb.at("outputs").size()) differ("output inventories differ in size");
  for (const auto& o : ma.at("outputs")) {
    const std::string name = o.at("file");
    std::ifstream fa(dir_a / name);
    std::ifstream fb(dir_b / name);
    if (!fa || !fb) {
      differ(name + ": missing");
      continue;
    }
    std::string la;
    std::string lb;
    int line = 0;
    while (true) {
      const bool ga = static_cast<bool>(std::getline(fa, la));
      const bool gb = static_cast<bool>(std::getline(fb, lb));
      ++line;
      if (!ga && !gb) break;
      if (ga != gb) {
        differ(name + ": different line counts");
        break;
      }
      const auto ta = tokens(la);
      const auto tb = tokens(lb);
      bool ok = ta.size() == tb.size();
      for (std::size_t i = 0; ok && i < ta.size(); ++i) ok = same_token(ta[i], tb[i], rel);
      if (!ok) {
        differ(name + ":" + std::to_string(line) + ": '" + la + "' vs '" + lb + "'");
        break;
      }
    }
  }
  if (ma.at("results") != mb.at("results")) {
    // Results are doubles serialized round-trip; compare their text at the same precision.
    const auto ta = tokens(ma.at("results").dump());
    const auto tb = tokens(mb.at("results").dump());
    if (ta != tb) differ("manifest results differ");
  }
  return rep;
}

namespace {

/// Union of x values; each series maps x to y.
struct Merged {
  std::string x_name;
  std::vector<std::string> names;
  std::vector<std::map<double, double>> series;

  void add(const std::string& name, const std::vector<double>& x, const std::vector<double>& y) {
    names.push_back(name);
    std::map<double, double> m;
    for (std::size_t i = 0; i < x.size(); ++i) m[x[i]] = y[i];
    series.push_back(std::move(m));
  }

  [[nodiscard]] CsvTable table() const {
    std::map<double, std::vector<double>> rows;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < series.size(); ++k) {
      for (const auto& [x, y] : series[k]) {
        auto& r = rows[x];
        r.resize(series.size(), nan);
        r[k] = y;
      }
    }
    CsvTable t;
    t.header.push_back(x_name);
    t.header.insert(t.header.end(), names.begin(), names.end());
    for (auto& [x, r] : rows) {
      r.resize(series.size(), nan);
      std::vector<double> row{x};
      row.insert(row.end(), r.begin(), r.end());
      t.rows.push_back(std::move(row));
    }
    return t;
  }
};

std::vector<double> col(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i] != name) continue;
    std::vector<double> v;
    for (const auto& r : t.rows) v.push_back(r[i]);
    return v;
  }
  throw std::runtime_error("result file has no column " + name);
}

std::string n_tag(const json& m) { return "N" + std::to_string(m.at("config").at("system").at("n_chain").get<int>()); }

double z_tip(const json& m) { return m.at("config").at("system").at("tip_height_A").get<double>(); }

}  // namespace

void plot_data(const std::string& figure, const std::vector<fs::path>& run_dirs, const fs::path& out_file) {
  static const std::map<std::string, std::string> wanted{{"fig2", "autonomous"}, {"fig3", "field-scan"},
                                                         {"fig4", "tip-scan"},   {"fig5", "rf-sweep"},
                                                         {"fig6", "oct"},        {"fig7", "oct"},
                                                         {"fig8", "oct"}};
  const auto it = wanted.find(figure);
  if (it == wanted.end()) throw std::runtime_error("unknown figure " + figure);
  if (run_dirs.empty()) throw std::runtime_error("no result directories given");

  Merged merged;
  for (const auto& dir : run_dirs) {
    const auto m = load_manifest(dir / "manifest.json");
    const std::string proto = m.at("protocol");
    if (proto != it->second) {
      throw std::runtime_error(figure + " needs " + it->second + " results, " + dir.string() + " holds " + proto);
    }
    if (m.at("status") != "ok" && proto != "oct") throw std::runtime_error(dir.string() + " is a failed run");
    if (figure == "fig2") {
      merged.x_name = "time_ns";
      for (const auto& o : m.at("outputs")) {
        if (o.at("role") != "trajectory") continue;
        std::string f = o.at("file");
        const auto t = read_csv(dir / f);
        const auto label = f.substr(11, f.size() - 15);  // trajectory_<label>.csv
        merged.add("yield_" + label, col(t, "time_ns"), col(t, "yield"));
      }
    } else if (figure == "fig3") {
      merged.x_name = "field_T";
      const auto t = read_csv(dir / "field_scan.csv");
      merged.add("sz_std_" + n_tag(m), col(t, "field_T"), col(t, "sz_std"));
      merged.add("best_yield_" + n_tag(m), col(t, "field_T"), col(t, "best_yield"));
    } else if (figure == "fig4") {
      merged.x_name = "z_tip_A";
      const auto t = read_csv(dir / "tip_scan.csv");
      merged.add("yield_" + n_tag(m), col(t, "z_tip_A"), col(t, t.header.at(1)));
    } else if (figure == "fig5") {
      merged.x_name = "freq_GHz";
      const auto t = read_csv(dir / "rf_sweep.csv");
      merged.add("best_yield_" + n_tag(m), col(t, "freq_GHz"), col(t, "best_yield"));
    } else if (figure == "fig6" || figure == "fig7") {
      const double expect = figure == "fig6" ? 5.75 : 8.0;
      if (std::abs(z_tip(m) - expect) > 1e-6) {
        throw std::runtime_error(figure + " needs a run at z_tip = " + tag(expect) + " A, " + dir.string() + " is at " +
                                 tag(z_tip(m)) + " A");
      }
      merged.x_name = "time_ns";
      const auto a = read_csv(dir / "oct_autonomous.csv");
      merged.add("autonomous_yield", col(a, "time_ns"), col(a, "yield"));
      const auto s = read_csv(dir / "oct_summary.csv");
      merged.add("optimized_exact_yield", col(s, "T_ns"), col(s, "exact_yield"));
    } else {
      merged.x_name = "time_ns";
      // Best run of each directory.
      const json* best = nullptr;
      for (const auto& r : m.at("results").at("runs")) {
        if (!r.contains("exact_yield")) continue;
        if (!best || r.at("exact_yield").get<double>() > best->at("exact_yield").get<double>()) best = &r;
      }
      if (!best) continue;
      const auto t = read_csv(dir / ("pulse_T" + tag(best->at("T_ns").get<double>()) + "ns.csv"));
      merged.add("displacement_z" + tag(z_tip(m)) + "_A", col(t, "time_ns"), col(t, "displacement_A"));
    }
  }
  const auto table = merged.table();
  if (table.rows.empty() || table.header.size() < 2) throw std::runtime_error(figure + ": empty result set");
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  atomic_write(out_file, format_csv(table));
}

}  // namespace stmchain::app
