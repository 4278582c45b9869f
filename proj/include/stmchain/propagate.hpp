#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmchain/model.hpp"
#include "stmchain/spin.hpp"

namespace stmchain {

/// Raised when a numerical invariant (norm, eigensolver convergence) is violated.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimeGrid {
  double t_start = 0.0;
  double t_end = 200.0;
  double dt = 0.01;

  [[nodiscard]] long steps() const;
  [[nodiscard]] double time(long k) const { return t_start + static_cast<double>(k) * dt; }
};

/// Spectral decomposition of a static Hamiltonian, H = V diag(E) V^dagger.
class Propagator {
 public:
  explicit Propagator(const Matrix& h);

  [[nodiscard]] const RealVector& eigenvalues() const { return energies_; }
  [[nodiscard]] const Matrix& eigenvectors() const { return vectors_; }
  /// exp(-i H t / hbar) psi.
  [[nodiscard]] Vector evolve(const Vector& psi, double t) const;
  [[nodiscard]] Matrix unitary(double t) const;
  [[nodiscard]] Matrix reconstruct() const;

 private:
  RealVector energies_;
  Matrix vectors_;
};

struct TrajectoryResult {
  std::vector<double> times;
  std::vector<double> yield;
  std::vector<double> sz_total;
  std::vector<Vector> states;
  // Spacing between yield samples (ns).
  double sample_interval = 0.0;
  double max_norm_drift = 0.0;
};

struct ObservableOptions {
  // Chain basis index whose population is recorded as the yield; defaults to |00...1>.
  std::optional<Eigen::Index> target_chain_index;
  bool store_states = false;
};

TrajectoryResult evolve_static(const Matrix& h, const QuantumState& psi0, const TimeGrid& grid,
                               const ObservableOptions& obs = {});
TrajectoryResult evolve_static(const Propagator& prop, const QuantumState& psi0,
                               const TimeGrid& grid, const ObservableOptions& obs = {});

enum class DriveMode { ExactNonlinear, Linearized };

using VoltageFn = std::function<double(double)>;

struct DrivenOptions {
  DriveMode mode = DriveMode::ExactNonlinear;
  int sample_stride = 10;
  ObservableOptions observables;
};

/// Piecewise-constant midpoint stepping of H(t) = H(dz(t)), dz = q V(t_mid) / (k z_tip).
TrajectoryResult evolve_driven(const HamiltonianModel& base, const VoltageFn& voltage,
                               const QuantumState& psi0, const TimeGrid& grid,
                               const DrivenOptions& options = {});

/// Stepping under a sampled displacement field: step k lasts dt and uses dz[k].
TrajectoryResult evolve_displacement(const HamiltonianModel& base, std::span<const double> dz,
                                     double dt, const QuantumState& psi0,
                                     const DrivenOptions& options = {});

/// Step Hamiltonian for a given actuator displacement.
Matrix step_hamiltonian(const HamiltonianModel& base, double dz, DriveMode mode);

struct PeriodicDrive {
  double v_amplitude = 0.0;  // V
  double omega = 1.0;        // rad / ns
  double phase = 0.0;
};

struct PeriodicOptions {
  DriveMode mode = DriveMode::ExactNonlinear;
  int steps_per_period = 64;
  double max_step = 0.05;         // ns
  double sample_interval = 0.01;  // ns, upper bound on yield sampling spacing
  ObservableOptions observables;
};

/// Midpoint step Hamiltonians of one drive period, diagonalized once. Step displacements
/// depend only on the amplitude, phase and step count, so one instance serves every
/// drive frequency.
class PeriodicStepper {
 public:
  PeriodicStepper(const HamiltonianModel& base, double v_amplitude, double phase, int steps,
                  DriveMode mode);

  [[nodiscard]] int steps() const { return steps_; }
  [[nodiscard]] const HamiltonianModel& model() const { return *base_; }
  [[nodiscard]] const std::vector<double>& displacements() const { return dz_; }

  /// Evolution from t = 0 to t_end; sampled stroboscopically plus at evenly spaced
  /// sub-period points no further apart than sample_interval when the period allows.
  [[nodiscard]] TrajectoryResult run(double omega, const QuantumState& psi0, double t_end,
                                     double sample_interval, const ObservableOptions& obs = {}) const;

 private:
  const HamiltonianModel* base_;
  int steps_;
  std::vector<double> dz_;
  std::vector<RealVector> energies_;
  std::vector<Matrix> vectors_;
  // transitions_[k] = V_k^dagger V_{k-1}, with V_{-1} = V_{steps-1}.
  std::vector<Matrix> transitions_;
};

/// Step count used for a drive period so that no step exceeds max_step.
int periodic_steps(double omega, const PeriodicOptions& options);

/// Evolution under V(t) = V_rf cos(omega t + phase) from t = 0 to t_end.
TrajectoryResult evolve_periodic(const HamiltonianModel& base, const PeriodicDrive& drive,
                                 const QuantumState& psi0, double t_end,
                                 const PeriodicOptions& options = {});

/// exp(-i H tau) psi by a norm-controlled Taylor series (tau in 1/meV).
void expm_apply(const Matrix& h, double tau, Vector& psi);

/// exp(-i H tau) for Hermitian H, via eigendecomposition.
Matrix expm_hermitian(const Matrix& h, double tau);

struct SzStatistics {
  double mean = 0.0;
  double std_dev = 0.0;
};

SzStatistics sz_statistics(const TrajectoryResult& traj);

struct YieldPeak {
  double time = 0.0;
  double value = 0.0;
};

/// Earliest sample achieving the maximum yield.
YieldPeak max_yield(const TrajectoryResult& traj);
/// Same, restricted to samples with time <= t_max.
YieldPeak max_yield(const TrajectoryResult& traj, double t_max);

}  // namespace stmchain
