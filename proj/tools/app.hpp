#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "stmchain/config.hpp"

namespace stmchain::app {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kNumericFailure = 3,
  kNotConverged = 4,
};

inline const std::vector<std::string>& protocols() {
  static const std::vector<std::string> ids{"autonomous", "field-scan", "tip-scan", "rf-sweep", "oct", "prepare", "full"};
  return ids;
}

/// Base config (defaults or file) with overrides applied. Throws ConfigError.
ExperimentConfig resolve_config(const std::string& protocol, const std::string& config_path,
                                const std::vector<std::string>& overrides);

/// --out wins; otherwise STMCHAIN_OUTPUT_ROOT prefixes a relative run.output_dir.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config, const std::string& out_flag);

struct RunOutcome {
  int exit_code = kOk;
  std::filesystem::path manifest;
  nlohmann::json results;
};

/// Runs config.protocol, writes result files and manifest.json into out_dir.
RunOutcome run_protocol(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                        const std::vector<std::string>& command = {});

/// Reads the config snapshot of a manifest and runs it again into out_dir.
RunOutcome rerun_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir);

struct CompareReport {
  bool identical = true;
  std::vector<std::string> differences;
};

/// Compares every output listed in both manifests, numbers to `digits` significant digits.
CompareReport compare_runs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b, int digits = 12);

/// Figure export from one or more run directories. Throws std::runtime_error on a mismatch
/// or empty data; nothing is written in that case.
void plot_data(const std::string& figure, const std::vector<std::filesystem::path>& run_dirs,
               const std::filesystem::path& out_file);

/// Writes via a temporary sibling and rename.
void atomic_write(const std::filesystem::path& path, const std::string& content);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

std::string format_csv(const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace stmchain::app
