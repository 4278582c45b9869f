#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "stmchain/control.hpp"
#include "stmchain/model.hpp"

namespace stmchain {

/// Bad or inconsistent configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimeSettings {
  double t_max = 200.0;  // ns
  double dt = 0.01;      // ns, sampling of static runs
};

struct AutonomousSettings {
  std::vector<int> n_list{2};
  // Any of "exchange", "dipolar", "dipolar-field".
  std::vector<std::string> variants{"exchange", "dipolar", "dipolar-field"};
};

struct FieldScanSettings {
  std::vector<double> b_list;  // T, along the configured field direction
};

struct TipScanSettings {
  std::vector<double> z_list;  // A
  std::vector<double> alpha_list{1.0};
  double notin_lo = 4.0;
  double notin_hi = 6.0;
};

struct RFSettings {
  double v_rf = 0.02;       // V
  double omega_min = 0.5;   // rad / ns
  double omega_max = 60.0;  // rad / ns
  double omega_rel_step = 0.02;
  int refine_peaks = 6;
  int steps_per_period = 64;
};

struct OCTSettings {
  // Explicit pulse durations; when empty, durations come from autonomous extrema.
  std::vector<double> times;  // ns
  std::string extrema = "maxima";  // maxima | minima
  int extrema_count = 3;
  double window_lo = 10.0;  // ns
  double window_hi = 60.0;  // ns
  double dt = 0.005;        // ns
  double guess_amplitude = 1e-3;  // A
  double success_threshold = 0.9;
  KrotovOptions krotov;
};

struct PrepareSettings {
  double tip_height = 5.0;  // A
  double duration = 40.0;   // ns
  // Field applied while cooling into the ground state; removed for the drive.
  Vec3 field_on{0.0, 0.0, -0.05};
};

struct FullSettings {
  std::string transmit = "autonomous";  // autonomous | rf | oct
  double transmit_tip_height = 5.0;     // A
  double transmit_duration = 60.0;      // ns
  double budget = 200.0;                // ns
};

struct ExperimentConfig {
  std::string protocol = "autonomous";
  ModelParams system;
  TimeSettings time;
  AutonomousSettings autonomous;
  FieldScanSettings field_scan;
  TipScanSettings tip_scan;
  RFSettings rf;
  OCTSettings oct;
  PrepareSettings prepare;
  FullSettings full;
  int threads = 1;
  std::string output_dir = "out";
};

/// Defaults for a protocol id, with the system set up as that protocol expects.
ExperimentConfig default_config(const std::string& protocol);

/// Strict conversion: unknown keys and unit mismatches throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

/// YAML text <-> config, through the same schema as the JSON form.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_yaml(const std::string& text);
std::string config_to_yaml(const ExperimentConfig& c);

/// Applies "dotted.key=value" overrides (value parsed as YAML) to a config's JSON form.
ExperimentConfig apply_overrides(const ExperimentConfig& c, const std::vector<std::string>& overrides);

/// Converts "50 mT"-style strings or plain numbers to the key's unit; throws on mismatch.
double parse_quantity(const nlohmann::json& value, const std::string& unit, const std::string& key);

}  // namespace stmchain
