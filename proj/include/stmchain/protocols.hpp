#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stmchain/config.hpp"
#include "stmchain/control.hpp"
#include "stmchain/model.hpp"
#include "stmchain/propagate.hpp"

namespace stmchain {

/// Rows keyed by one independent variable; column names carry unit suffixes.
struct SweepTable {
  std::string x_column;
  std::vector<std::string> columns;
  std::vector<double> x;
  std::vector<std::vector<double>> rows;

  void add(double xv, std::vector<double> values);
  /// Stable sort by x.
  void sort_rows();
  [[nodiscard]] std::size_t column_index(const std::string& name) const;
  [[nodiscard]] std::vector<double> column(const std::string& name) const;
};

/// |phi_Fe, 10...0> with a tip, |10...0> without.
QuantumState transmission_initial_state(const HamiltonianModel& model);

/// Model parameters for "exchange", "dipolar" (B = 0) or "dipolar-field".
ModelParams variant_params(const ModelParams& base, const std::string& variant);

struct LabeledTrajectory {
  std::string label;
  TrajectoryResult trajectory;
};

struct AutonomousResult {
  SweepTable table;  // x = n_chain; yield_<variant>, t_best_<variant>_ns
  std::vector<LabeledTrajectory> trajectories;
};

AutonomousResult autonomous_transfer(const ExperimentConfig& config);

struct FieldScanResult {
  SweepTable table;  // x = field_T; best_yield, t_best_ns, sz_std, sz_mean
  // Smallest scanned field from which sz_std stays below 5 % of its zero-field value.
  std::optional<double> stable_from;
};

FieldScanResult field_scan(const ExperimentConfig& config);

struct TipScanResult {
  SweepTable table;  // x = z_tip_A; best_yield[_a<alpha>], t_best[_a<alpha>]_ns
  std::optional<double> notin_peak;  // grid local maximum in the window
  std::optional<double> notin;       // refined on the tip-site1 zz coupling zero
};

TipScanResult tip_scan(const ExperimentConfig& config);

/// Zero of the tip-site1 zz coupling in [lo, hi] by golden section on its magnitude.
std::optional<double> coupling_zero(const ModelParams& params, double lo, double hi);

/// Best yield within alpha * t_max for each alpha, at the configured tip height.
SweepTable waiting_time_study(const ExperimentConfig& config);

struct RFResult {
  SweepTable table;  // x = omega_rad_per_ns; freq_GHz, best_yield, t_best_ns
  SweepPoint best;
  YieldPeak baseline;
  TrajectoryResult best_trajectory;
};

RFResult rf_experiment(const ExperimentConfig& config);

enum class ExtremumKind { Maxima, Minima };

/// Interior 3-point local extrema of the sampled yield in [lo, hi]; plateaus report their
/// first sample.
std::vector<std::size_t> local_extrema(const TrajectoryResult& traj, ExtremumKind kind, double lo, double hi);

struct OctRun {
  double duration = 0.0;
  double autonomous_yield = 0.0;
  std::optional<KrotovReport> report;
  std::string error;
  bool success = false;
};

struct OctResult {
  TrajectoryResult autonomous;
  std::vector<OctRun> runs;
  // x = T_ns; autonomous_yield, linear_yield, exact_yield, iterations, converged, max_abs_A, success
  SweepTable table;
};

OctResult oct_experiment(const ExperimentConfig& config);

/// Krotov run from a state at the configured tip height towards chain_target.
KrotovReport run_krotov(const HamiltonianModel& model, const QuantumState& psi0, Eigen::Index chain_target,
                        double duration, const OCTSettings& settings);

struct PrepareResult {
  QuantumState start;
  KrotovReport report;
  QuantumState prepared;  // exact-model state at the end of the pulse
  double fidelity = 0.0;
};

/// Ground state with the field on, then a Krotov pulse with B = 0 towards |10...0>.
PrepareResult prepare_initial_state(const ExperimentConfig& config);

struct FullResult {
  std::optional<PrepareResult> preparation;
  double preparation_fidelity = 1.0;
  double ideal_transmission = 0.0;  // from the exact |phi_Fe, 10...0>
  double composite = 0.0;           // simulated from the prepared state
  double product_bound = 0.0;
  double total_time = 0.0;
  bool over_budget = false;
  TrajectoryResult transmission;
};

/// Preparation followed by transmission; `injected` replaces the preparation phase.
FullResult full_protocol(const ExperimentConfig& config, const std::optional<QuantumState>& injected = std::nullopt);

}  // namespace stmchain
