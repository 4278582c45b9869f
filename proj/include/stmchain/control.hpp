#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmchain/model.hpp"
#include "stmchain/propagate.hpp"
#include "stmchain/spin.hpp"

namespace stmchain {

/// Raised by the optimizer: non-monotonic iterates it could not repair, or a field
/// exceeding the displacement cap.
class ControlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RFDrive {
  double v_rf = 0.0;   // V
  double omega = 1.0;  // rad / ns
  double phase = 0.0;  // rad
};

/// t -> V_rf cos(omega t + phase).
VoltageFn rf_voltage(const RFDrive& drive);

/// Geometric grid lo, lo (1 + rel_step), ... up to hi inclusive.
std::vector<double> log_grid(double lo, double hi, double rel_step);

struct SweepPoint {
  double omega = 0.0;  // rad / ns
  double best_yield = 0.0;
  double t_best = 0.0;  // ns
};

struct FrequencySweepOptions {
  double t_max = 200.0;
  int steps_per_period = 64;
  double sample_interval = 0.01;
  DriveMode mode = DriveMode::ExactNonlinear;
  ObservableOptions observables;
  // Local refinement around the strongest coarse peaks; 0 disables it.
  int refine_peaks = 0;
  int refine_levels = 3;
  int refine_points = 21;
  double refine_width = 0.02;  // relative half-width of the first refinement window
  int threads = 1;
};

struct FrequencySweepResult {
  // Every evaluated frequency, sorted by omega.
  std::vector<SweepPoint> points;
  SweepPoint best;
};

FrequencySweepResult frequency_sweep(const HamiltonianModel& model, const QuantumState& psi0,
                                     double v_rf, std::span<const double> omega_grid,
                                     const FrequencySweepOptions& options = {});

/// Sampled control displacement on t_k = k dt, k = 0..n. Step k of a propagation holds
/// the value at its left end, so samples.back() only matters as an endpoint.
struct ControlField {
  double duration = 0.0;  // ns
  std::vector<double> samples;  // A
  std::string shape = "sin2";
  double lambda = 0.0;

  [[nodiscard]] long steps() const { return static_cast<long>(samples.size()) - 1; }
  [[nodiscard]] double dt() const { return duration / static_cast<double>(steps()); }
  [[nodiscard]] double time(long k) const { return static_cast<double>(k) * dt(); }
  [[nodiscard]] double max_abs() const;
};

/// sin^2(pi t / T).
double shape_sin2(double t, double duration);

/// Zero field on n steps over T.
ControlField zero_field(double duration, long steps);

/// A S(t) cos(omega t) on n steps over T.
ControlField cosine_field(double duration, long steps, double amplitude, double omega);

/// Bohr frequency (rad/ns) between the two eigenstates of h carrying most of psi's weight.
double dominant_splitting(const Matrix& h, const Vector& psi);

/// Projector I_tip (x) |c><c| for chain basis index c (plain |c><c| without a tip).
Matrix chain_projector(const HilbertSpace& space, Eigen::Index chain_index);

struct LambdaChange {
  int iteration = 0;
  double from = 0.0;
  double to = 0.0;
  std::string reason;
};

struct KrotovOptions {
  // Update weight in meV / A^2: df = S(t) Im<chi|W|psi> / lambda.
  double lambda = 0.005;
  int max_iters = 200;
  double tol = 1e-6;
  double displacement_cap = 1.0;  // A
  int max_halvings = 6;
  int max_rejections = 8;
  // Halving only pays off while this much yield is still missing.
  double stall_gap = 1e-3;
  double monotonic_tol = 1e-10;
};

struct KrotovReport {
  // Linear-model yield of the guess (entry 0) and after each accepted iteration.
  std::vector<double> yields;
  ControlField field;
  bool converged = false;
  int iterations = 0;
  std::vector<LambdaChange> lambda_log;
  double linear_yield = 0.0;
  // Figure of merit under the exact displaced Hamiltonian; NaN when not evaluated.
  double exact_yield = 0.0;
  // Set when max |f| <= 3 pm but exact and linear yields differ by more than 0.02.
  bool linearization_flag = false;
};

/// Krotov iteration for H(t) = h0 + f(t) w with objective <psi(T)|P|psi(T)>.
KrotovReport krotov_linear(const Matrix& h0, const Matrix& w, const Vector& psi0,
                           const Matrix& projector, const ControlField& guess,
                           const KrotovOptions& options = {});

/// Final-time state under piecewise-constant H = h0 + f_k w.
Vector propagate_linear(const Matrix& h0, const Matrix& w, const Vector& psi0,
                        const ControlField& field);

/// Optimizes in the linearized model, then re-evaluates the pulse with the exact
/// displaced Hamiltonian.
KrotovReport krotov_optimize(const HamiltonianModel& model, const QuantumState& psi0,
                             Eigen::Index target_chain_index, const ControlField& guess,
                             const KrotovOptions& options = {});

/// Exact-model population of the target after applying the field.
double exact_field_yield(const HamiltonianModel& model, const QuantumState& psi0,
                         Eigen::Index target_chain_index, const ControlField& field);

struct SpectrumBin {
  double freq_ghz = 0.0;
  double magnitude = 0.0;
};

struct Spectrum {
  std::vector<SpectrumBin> bins;  // 0 .. Nyquist
  double dominant_ghz = 0.0;      // strongest non-DC bin
  // Magnitude-weighted mean frequency, a robust summary of broadband pulses.
  double centroid_ghz = 0.0;
};

/// One-sided DFT magnitude of the samples at the step points 0..n-1.
Spectrum pulse_spectrum(const ControlField& field);

struct PulseMetadata {
  double z_tip = 0.0;
  double exact_yield = 0.0;
  double charge = 1.0;
  double k = 0.08;
};

/// Columns time_ns, displacement_A, voltage_V after a '#'-prefixed key = value header.
void write_pulse(const std::string& path, const ControlField& field, const PulseMetadata& meta);
ControlField read_pulse(const std::string& path, PulseMetadata* meta = nullptr);

}  // namespace stmchain
