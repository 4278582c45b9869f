#include "stmchain/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace stmchain {

using nlohmann::json;

namespace {

struct UnitFactor {
  const char* name;
  double factor;
};

// Accepted spellings per canonical unit, with the factor to the canonical unit.
const std::map<std::string, std::vector<UnitFactor>>& unit_table() {
  static const std::map<std::string, std::vector<UnitFactor>> table{
      {"A", {{"A", 1.0}, {"Å", 1.0}, {"pm", 0.01}, {"nm", 10.0}}},
      {"ns", {{"ns", 1.0}, {"ps", 1e-3}, {"us", 1e3}, {"µs", 1e3}}},
      {"T", {{"T", 1.0}, {"mT", 1e-3}}},
      {"meV", {{"meV", 1.0}, {"ueV", 1e-3}, {"µeV", 1e-3}, {"eV", 1e3}}},
      {"V", {{"V", 1.0}, {"mV", 1e-3}}},
      {"rad/ns", {{"rad/ns", 1.0}, {"GHz", 2.0 * std::numbers::pi}, {"MHz", 2e-3 * std::numbers::pi}}},
      {"eV/A^2", {{"eV/A^2", 1.0}, {"eV/Å^2", 1.0}}},
      {"meV/A^2", {{"meV/A^2", 1.0}, {"meV/Å^2", 1.0}}},
      {"e", {{"e", 1.0}}},
      {"", {}},
  };
  return table;
}

std::string type_error(const std::string& key, const char* what) {
  return "config key '" + key + "': expected " + what;
}

class Reader {
 public:
  Reader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(type_error(prefix_.empty() ? "<root>" : prefix_, "a section"));
  }

  [[nodiscard]] bool has(const std::string& k) const { return obj_.contains(k); }
  [[nodiscard]] std::string path(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

  Reader section(const std::string& k) {
    seen_.insert(k);
    return Reader(obj_.at(k), path(k));
  }

  void num(const std::string& k, const std::string& unit, double& out) {
    if (!has(k)) return;
    seen_.insert(k);
    out = parse_quantity(obj_.at(k), unit, path(k));
  }

  void integer(const std::string& k, int& out) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_number_integer()) throw ConfigError(type_error(path(k), "an integer"));
    out = v.get<int>();
  }

  void boolean(const std::string& k, bool& out) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_boolean()) throw ConfigError(type_error(path(k), "true or false"));
    out = v.get<bool>();
  }

  void text(const std::string& k, std::string& out, const std::set<std::string>& allowed = {}) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_string()) throw ConfigError(type_error(path(k), "a string"));
    out = v.get<std::string>();
    if (!allowed.empty() && !allowed.count(out)) throw ConfigError("config key '" + path(k) + "': unsupported value '" + out + "'");
  }

  void nums(const std::string& k, const std::string& unit, std::vector<double>& out) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_array()) throw ConfigError(type_error(path(k), "a list"));
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(parse_quantity(v[i], unit, path(k) + "[" + std::to_string(i) + "]"));
  }

  void integers(const std::string& k, std::vector<int>& out) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_array()) throw ConfigError(type_error(path(k), "a list"));
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError(type_error(path(k), "a list of integers"));
      out.push_back(x.get<int>());
    }
  }

  void texts(const std::string& k, std::vector<std::string>& out, const std::set<std::string>& allowed) {
    if (!has(k)) return;
    seen_.insert(k);
    const auto& v = obj_.at(k);
    if (!v.is_array()) throw ConfigError(type_error(path(k), "a list"));
    out.clear();
    for (const auto& x : v) {
      if (!x.is_string()) throw ConfigError(type_error(path(k), "a list of strings"));
      const auto s = x.get<std::string>();
      if (!allowed.count(s)) throw ConfigError("config key '" + path(k) + "': unsupported value '" + s + "'");
      out.push_back(s);
    }
  }

  void fixed(const std::string& k, const std::string& unit, double* out, std::size_t n) {
    if (!has(k)) return;
    std::vector<double> v;
    nums(k, unit, v);
    if (v.size() != n) throw ConfigError(type_error(path(k), (std::to_string(n) + " values").c_str()));
    for (std::size_t i = 0; i < n; ++i) out[i] = v[i];
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path(it.key()) + "'");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void read_exchange(Reader r, ExchangeParams& e) {
  r.num("j0_meV", "meV", e.j0);
  r.num("r0_A", "A", e.r0);
  r.num("d_ex_A", "A", e.d_ex);
  r.finish();
}

json exchange_json(const ExchangeParams& e) { return {{"j0_meV", e.j0}, {"r0_A", e.r0}, {"d_ex_A", e.d_ex}}; }

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

const std::set<std::string> kProtocols{"autonomous", "field-scan", "tip-scan", "rf-sweep", "oct", "prepare", "full"};
const std::set<std::string> kVariants{"exchange", "dipolar", "dipolar-field"};

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
  const auto& g = c.system.geometry;
  if (g.n_chain < 1 || g.n_chain > 10) fail("system.n_chain", "must be between 1 and 10");
  if (!(g.spacing > 0.0)) fail("system.spacing_A", "must be positive");
  if (!(g.tip_height > 0.0)) fail("system.tip_height_A", "must be positive");
  if (!(c.system.actuator.k > 0.0)) fail("system.actuator.k_eV_per_A2", "must be positive");
  if (!(c.time.t_max > 0.0)) fail("time.t_max_ns", "must be positive");
  if (!(c.time.dt > 0.0) || c.time.dt > c.time.t_max) fail("time.dt_ns", "must be positive and below t_max_ns");
  for (int n : c.autonomous.n_list) {
    if (n < 1 || n > 10) fail("autonomous.n_list", "chain lengths must be between 1 and 10");
  }
  for (double z : c.tip_scan.z_list) {
    if (!(z > 0.0)) fail("tip_scan.z_list_A", "heights must be positive");
  }
  for (double a : c.tip_scan.alpha_list) {
    if (!(a > 0.0) || a > 1.0) fail("tip_scan.alpha_list", "fractions must lie in (0, 1]");
  }
  if (!(c.tip_scan.notin_lo < c.tip_scan.notin_hi)) fail("tip_scan.notin_window_A", "must be increasing");
  if (c.rf.v_rf < 0.0) fail("rf.v_rf_V", "must be non-negative");
  if (!(c.rf.omega_min > 0.0) || !(c.rf.omega_max >= c.rf.omega_min)) fail("rf.omega_min_rad_per_ns", "need 0 < min <= max");
  if (!(c.rf.omega_rel_step > 0.0)) fail("rf.omega_rel_step", "must be positive");
  if (c.rf.steps_per_period < 4) fail("rf.steps_per_period", "must be at least 4");
  if (c.rf.refine_peaks < 0) fail("rf.refine_peaks", "must be non-negative");
  for (double t : c.oct.times) {
    if (!(t > 0.0)) fail("oct.times_ns", "durations must be positive");
  }
  if (c.oct.extrema_count < 1) fail("oct.extrema_count", "must be positive");
  if (!(c.oct.window_lo < c.oct.window_hi)) fail("oct.window_ns", "must be increasing");
  if (!(c.oct.dt > 0.0)) fail("oct.dt_ns", "must be positive");
  if (!(c.oct.krotov.lambda > 0.0)) fail("oct.lambda_meV_per_A2", "must be positive");
  if (c.oct.krotov.max_iters < 0) fail("oct.max_iters", "must be non-negative");
  if (!(c.oct.krotov.displacement_cap > 0.0)) fail("oct.displacement_cap_A", "must be positive");
  if (!(c.prepare.tip_height > 0.0)) fail("prepare.tip_height_A", "must be positive");
  if (!(c.prepare.duration > 0.0)) fail("prepare.duration_ns", "must be positive");
  if (!(c.full.transmit_tip_height > 0.0)) fail("full.transmit_tip_height_A", "must be positive");
  if (!(c.full.transmit_duration > 0.0)) fail("full.transmit_duration_ns", "must be positive");
  if (c.threads < 1) fail("run.threads", "must be at least 1");
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& x : node) arr.push_back(yaml_to_json(x));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const auto s = node.Scalar();
      if (node.Tag() == "!") return s;  // quoted
      if (s == "true" || s == "True") return true;
      if (s == "false" || s == "False") return false;
      try {
        std::size_t pos = 0;
        const long long i = std::stoll(s, &pos);
        if (pos == s.size()) return i;
      } catch (...) {
      }
      try {
        std::size_t pos = 0;
        const double d = std::stod(s, &pos);
        if (pos == s.size()) return d;
      } catch (...) {
      }
      return s;
    }
  }
  return nullptr;
}

void emit(YAML::Emitter& out, const json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (auto it = j.begin(); it != j.end(); ++it) {
      out << YAML::Key << it.key() << YAML::Value;
      emit(out, it.value());
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& x : j) emit(out, x);
    out << YAML::EndSeq;
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_integer()) {
    out << j.get<long long>();
  } else if (j.is_number()) {
    out << j.get<double>();
  } else if (j.is_string()) {
    out << YAML::DoubleQuoted << j.get<std::string>();
  } else {
    out << YAML::Null;
  }
}

}  // namespace

double parse_quantity(const json& value, const std::string& unit, const std::string& key) {
  if (value.is_number()) return value.get<double>();
  if (!value.is_string()) throw ConfigError(type_error(key, "a number"));
  const auto s = value.get<std::string>();
  std::istringstream in(s);
  double x = 0.0;
  std::string u;
  if (!(in >> x)) throw ConfigError(type_error(key, "a number with optional unit"));
  in >> u;
  std::string rest;
  if (in >> rest) throw ConfigError(type_error(key, "a number with optional unit"));
  if (u.empty()) return x;
  const auto& table = unit_table();
  const auto it = table.find(unit);
  if (it != table.end()) {
    for (const auto& f : it->second) {
      if (u == f.name) return x * f.factor;
    }
  }
  throw ConfigError("config key '" + key + "': unit '" + u + "' is not compatible with " +
                    (unit.empty() ? std::string("a dimensionless value") : unit));
}

ExperimentConfig default_config(const std::string& protocol) {
  if (!kProtocols.count(protocol)) throw ConfigError("config key 'protocol': unsupported value '" + protocol + "'");
  ExperimentConfig c;
  c.protocol = protocol;
  auto& g = c.system.geometry;
  if (protocol == "autonomous" || protocol == "field-scan") {
    g.with_tip = false;
    g.n_chain = protocol == "autonomous" ? 2 : 3;
  } else {
    g.with_tip = true;
  }
  for (int k = 0; k <= 40; ++k) c.field_scan.b_list.push_back(0.0025 * k);
  for (int k = 0; k <= 100; ++k) c.tip_scan.z_list.push_back(3.0 + 0.05 * k);
  c.tip_scan.z_list.push_back(10.0);
  c.tip_scan.z_list.push_back(15.0);
  if (protocol == "tip-scan") g.n_chain = 3;
  if (protocol == "rf-sweep") g.n_chain = 2;
  if (protocol == "oct" || protocol == "prepare" || protocol == "full") g.n_chain = 4;
  if (protocol == "oct") {
    g.tip_height = 8.0;
    c.oct.times = {60.0};
  }
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  Reader root(j, "");
  ExperimentConfig c;
  std::string protocol = "autonomous";
  root.text("protocol", protocol, kProtocols);
  c = default_config(protocol);

  if (root.has("system")) {
    auto s = root.section("system");
    auto& p = c.system;
    s.integer("n_chain", p.geometry.n_chain);
    s.num("spacing_A", "A", p.geometry.spacing);
    s.boolean("with_tip", p.geometry.with_tip);
    s.num("tip_height_A", "A", p.geometry.tip_height);
    double offset[2] = {p.geometry.tip_offset_x, p.geometry.tip_offset_y};
    s.fixed("tip_offset_A", "A", offset, 2);
    p.geometry.tip_offset_x = offset[0];
    p.geometry.tip_offset_y = offset[1];
    s.fixed("field_T", "T", p.field.b.data(), 3);
    s.num("dzz_meV", "meV", p.anisotropy.dzz);
    s.boolean("exchange", p.exchange);
    s.boolean("dipolar", p.dipolar);
    s.boolean("modulate_all_tip_pairs", p.modulate_all_tip_pairs);
    if (s.has("ti_ti")) read_exchange(s.section("ti_ti"), p.ti_ti);
    if (s.has("fe_ti")) read_exchange(s.section("fe_ti"), p.fe_ti);
    if (s.has("actuator")) {
      auto a = s.section("actuator");
      a.num("charge_e", "e", p.actuator.charge);
      a.num("k_eV_per_A2", "eV/A^2", p.actuator.k);
      a.finish();
    }
    s.finish();
  }
  if (root.has("time")) {
    auto s = root.section("time");
    s.num("t_max_ns", "ns", c.time.t_max);
    s.num("dt_ns", "ns", c.time.dt);
    s.finish();
  }
  if (root.has("autonomous")) {
    auto s = root.section("autonomous");
    s.integers("n_list", c.autonomous.n_list);
    s.texts("variants", c.autonomous.variants, kVariants);
    s.finish();
  }
  if (root.has("field_scan")) {
    auto s = root.section("field_scan");
    s.nums("b_list_T", "T", c.field_scan.b_list);
    s.finish();
  }
  if (root.has("tip_scan")) {
    auto s = root.section("tip_scan");
    s.nums("z_list_A", "A", c.tip_scan.z_list);
    s.nums("alpha_list", "", c.tip_scan.alpha_list);
    double w[2] = {c.tip_scan.notin_lo, c.tip_scan.notin_hi};
    s.fixed("notin_window_A", "A", w, 2);
    c.tip_scan.notin_lo = w[0];
    c.tip_scan.notin_hi = w[1];
    s.finish();
  }
  if (root.has("rf")) {
    auto s = root.section("rf");
    s.num("v_rf_V", "V", c.rf.v_rf);
    s.num("omega_min_rad_per_ns", "rad/ns", c.rf.omega_min);
    s.num("omega_max_rad_per_ns", "rad/ns", c.rf.omega_max);
    s.num("omega_rel_step", "", c.rf.omega_rel_step);
    s.integer("refine_peaks", c.rf.refine_peaks);
    s.integer("steps_per_period", c.rf.steps_per_period);
    s.finish();
  }
  if (root.has("oct")) {
    auto s = root.section("oct");
    auto& o = c.oct;
    s.nums("times_ns", "ns", o.times);
    s.text("extrema", o.extrema, {"maxima", "minima"});
    s.integer("extrema_count", o.extrema_count);
    double w[2] = {o.window_lo, o.window_hi};
    s.fixed("window_ns", "ns", w, 2);
    o.window_lo = w[0];
    o.window_hi = w[1];
    s.num("dt_ns", "ns", o.dt);
    s.num("guess_amplitude_A", "A", o.guess_amplitude);
    s.num("success_threshold", "", o.success_threshold);
    s.num("lambda_meV_per_A2", "meV/A^2", o.krotov.lambda);
    s.integer("max_iters", o.krotov.max_iters);
    s.num("tol", "", o.krotov.tol);
    s.num("displacement_cap_A", "A", o.krotov.displacement_cap);
    s.integer("max_halvings", o.krotov.max_halvings);
    s.integer("max_rejections", o.krotov.max_rejections);
    s.finish();
  }
  if (root.has("prepare")) {
    auto s = root.section("prepare");
    s.num("tip_height_A", "A", c.prepare.tip_height);
    s.num("duration_ns", "ns", c.prepare.duration);
    s.fixed("field_on_T", "T", c.prepare.field_on.data(), 3);
    s.finish();
  }
  if (root.has("full")) {
    auto s = root.section("full");
    s.text("transmit", c.full.transmit, {"autonomous", "rf", "oct"});
    s.num("transmit_tip_height_A", "A", c.full.transmit_tip_height);
    s.num("transmit_duration_ns", "ns", c.full.transmit_duration);
    s.num("budget_ns", "ns", c.full.budget);
    s.finish();
  }
  if (root.has("run")) {
    auto s = root.section("run");
    s.integer("threads", c.threads);
    s.text("output_dir", c.output_dir);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& p = c.system;
  const auto& g = p.geometry;
  json j;
  j["protocol"] = c.protocol;
  j["system"] = {
      {"n_chain", g.n_chain},
      {"spacing_A", g.spacing},
      {"with_tip", g.with_tip},
      {"tip_height_A", g.tip_height},
      {"tip_offset_A", json::array({g.tip_offset_x, g.tip_offset_y})},
      {"field_T", vec_json(p.field.b)},
      {"dzz_meV", p.anisotropy.dzz},
      {"exchange", p.exchange},
      {"dipolar", p.dipolar},
      {"modulate_all_tip_pairs", p.modulate_all_tip_pairs},
      {"ti_ti", exchange_json(p.ti_ti)},
      {"fe_ti", exchange_json(p.fe_ti)},
      {"actuator", {{"charge_e", p.actuator.charge}, {"k_eV_per_A2", p.actuator.k}}},
  };
  j["time"] = {{"t_max_ns", c.time.t_max}, {"dt_ns", c.time.dt}};
  j["autonomous"] = {{"n_list", c.autonomous.n_list}, {"variants", c.autonomous.variants}};
  j["field_scan"] = {{"b_list_T", c.field_scan.b_list}};
  j["tip_scan"] = {{"z_list_A", c.tip_scan.z_list},
                   {"alpha_list", c.tip_scan.alpha_list},
                   {"notin_window_A", json::array({c.tip_scan.notin_lo, c.tip_scan.notin_hi})}};
  j["rf"] = {{"v_rf_V", c.rf.v_rf},
             {"omega_min_rad_per_ns", c.rf.omega_min},
             {"omega_max_rad_per_ns", c.rf.omega_max},
             {"omega_rel_step", c.rf.omega_rel_step},
             {"refine_peaks", c.rf.refine_peaks},
             {"steps_per_period", c.rf.steps_per_period}};
  const auto& o = c.oct;
  j["oct"] = {{"times_ns", o.times},
              {"extrema", o.extrema},
              {"extrema_count", o.extrema_count},
              {"window_ns", json::array({o.window_lo, o.window_hi})},
              {"dt_ns", o.dt},
              {"guess_amplitude_A", o.guess_amplitude},
              {"success_threshold", o.success_threshold},
              {"lambda_meV_per_A2", o.krotov.lambda},
              {"max_iters", o.krotov.max_iters},
              {"tol", o.krotov.tol},
              {"displacement_cap_A", o.krotov.displacement_cap},
              {"max_halvings", o.krotov.max_halvings},
              {"max_rejections", o.krotov.max_rejections}};
  j["prepare"] = {{"tip_height_A", c.prepare.tip_height},
                  {"duration_ns", c.prepare.duration},
                  {"field_on_T", vec_json(c.prepare.field_on)}};
  j["full"] = {{"transmit", c.full.transmit},
               {"transmit_tip_height_A", c.full.transmit_tip_height},
               {"transmit_duration_ns", c.full.transmit_duration},
               {"budget_ns", c.full.budget}};
  j["run"] = {{"threads", c.threads}, {"output_dir", c.output_dir}};
  return j;
}

ExperimentConfig parse_config_yaml(const std::string& text) {
  YAML::Node node;
  try {
    node = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!node.IsMap()) throw ConfigError("config must be a mapping of sections");
  return config_from_json(yaml_to_json(node));
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_yaml(buf.str());
}

std::string config_to_yaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  emit(out, config_to_json(c));
  return std::string(out.c_str()) + "\n";
}

ExperimentConfig apply_overrides(const ExperimentConfig& c, const std::vector<std::string>& overrides) {
  json j = config_to_json(c);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not of the form key=value");
    const std::string key = o.substr(0, eq);
    json value;
    try {
      value = yaml_to_json(YAML::Load(o.substr(eq + 1)));
    } catch (const YAML::Exception& e) {
      throw ConfigError("override '" + o + "': " + e.what());
    }
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part) || !(*node)[part].is_object()) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return config_from_json(j);
}

}  // namespace stmchain
