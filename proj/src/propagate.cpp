#include "stmchain/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace stmchain {

long TimeGrid::steps() const {
  if (!(dt > 0.0)) throw std::invalid_argument("time grid needs dt > 0");
  if (t_end < t_start) throw std::invalid_argument("time grid ends before it starts");
  return std::lround(std::floor((t_end - t_start) / dt + 1e-9));
}

Propagator::Propagator(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
  energies_ = es.eigenvalues();
  vectors_ = es.eigenvectors();
}

Vector Propagator::evolve(const Vector& psi, double t) const {
  Vector c = vectors_.adjoint() * psi;
  for (Eigen::Index k = 0; k < c.size(); ++k) c(k) *= std::polar(1.0, -energies_(k) * t / units::hbar);
  return vectors_ * c;
}

Matrix Propagator::unitary(double t) const {
  Vector phases(energies_.size());
  for (Eigen::Index k = 0; k < phases.size(); ++k) phases(k) = std::polar(1.0, -energies_(k) * t / units::hbar);
  return vectors_ * phases.asDiagonal() * vectors_.adjoint();
}

Matrix Propagator::reconstruct() const {
  return vectors_ * energies_.cast<cplx>().asDiagonal() * vectors_.adjoint();
}

namespace {

struct Recorder {
  const HilbertSpace& space;
  Eigen::Index target;
  RealVector sz_diag;
  bool store;
  TrajectoryResult result;

  Recorder(const HilbertSpace& s, const ObservableOptions& obs)
      : space(s),
        target(obs.target_chain_index.value_or(excitation_index(s.chain_length(), s.chain_length()))),
        sz_diag(total_sz_diagonal(s)),
        store(obs.store_states) {}

  void record(double t, const Vector& psi) {
    result.times.push_back(t);
    result.yield.push_back(std::min(1.0, chain_population(psi, space, target)));
    result.sz_total.push_back(psi.cwiseAbs2().dot(sz_diag));
    result.max_norm_drift = std::max(result.max_norm_drift, std::abs(psi.norm() - 1.0));
    if (store) result.states.push_back(psi);
  }
};

}  // namespace

TrajectoryResult evolve_static(const Matrix& h, const QuantumState& psi0, const TimeGrid& grid,
                               const ObservableOptions& obs) {
  return evolve_static(Propagator(h), psi0, grid, obs);
}

TrajectoryResult evolve_static(const Propagator& prop, const QuantumState& psi0,
                               const TimeGrid& grid, const ObservableOptions& obs) {
  const auto& v = prop.eigenvectors();
  const auto& e = prop.eigenvalues();
  if (v.rows() != psi0.space().dim()) throw std::invalid_argument("Hamiltonian and state dimensions differ");
  Recorder rec(psi0.space(), obs);
  const Vector c0 = v.adjoint() * psi0.amplitudes();
  const long n = grid.steps();
  Vector c(c0.size());
  Vector psi(c0.size());
  for (long k = 0; k <= n; ++k) {
    const double t = grid.time(k);
    const double s = (t - grid.t_start) / units::hbar;
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = c0(j) * std::polar(1.0, -e(j) * s);
    psi.noalias() = v * c;
    rec.record(t, psi);
  }
  if (rec.result.max_norm_drift > 1e-10) throw NumericalError("norm drift in static propagation");
  rec.result.sample_interval = grid.dt;
  return std::move(rec.result);
}

void expm_apply(const Matrix& h, double tau, Vector& psi) {
  const Eigen::Index n = h.rows();
  const double shift = h.diagonal().real().mean();
  double norm1 = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double col = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) col += std::abs(i == j ? h(i, j) - shift : h(i, j));
    norm1 = std::max(norm1, col);
  }
  const int substeps = std::max(1, static_cast<int>(std::ceil(norm1 * std::abs(tau))));
  const double sub = tau / substeps;
  const cplx factor(0.0, -sub);
  Vector term(n);
  Vector next(n);
  for (int s = 0; s < substeps; ++s) {
    term = psi;
    Vector acc = psi;
    for (int k = 1; k < 40; ++k) {
      next.noalias() = h * term;
      next -= shift * term;
      term = next * (factor / static_cast<double>(k));
      acc += term;
      if (term.lpNorm<Eigen::Infinity>() < 1e-17) break;
    }
    psi = acc;
  }
  psi *= std::polar(1.0, -shift * tau);
}

Matrix expm_hermitian(const Matrix& h, double tau) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
  Vector phases(h.rows());
  for (Eigen::Index k = 0; k < phases.size(); ++k) phases(k) = std::polar(1.0, -es.eigenvalues()(k) * tau);
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

Matrix step_hamiltonian(const HamiltonianModel& base, double dz, DriveMode mode) {
  if (mode == DriveMode::Linearized) return base.h_static + dz * base.w_linear;
  return displaced_hamiltonian(base, dz);
}

TrajectoryResult evolve_driven(const HamiltonianModel& base, const VoltageFn& voltage,
                               const QuantumState& psi0, const TimeGrid& grid,
                               const DrivenOptions& options) {
  if (!(psi0.space() == base.space)) throw std::invalid_argument("state and model spaces differ");
  if (options.sample_stride < 1) throw std::invalid_argument("sample stride must be positive");
  const double z_tip = base.params.geometry.tip_height;
  Recorder rec(base.space, options.observables);
  Vector psi = psi0.amplitudes();
  const long n = grid.steps();
  rec.record(grid.t_start, psi);
  for (long k = 0; k < n; ++k) {
    const double t_mid = grid.time(k) + 0.5 * grid.dt;
    const double dz = voltage ? base.params.actuator.displacement(voltage(t_mid), z_tip) : 0.0;
    const Matrix h = step_hamiltonian(base, dz, options.mode);
    expm_apply(h, grid.dt / units::hbar, psi);
    if ((k + 1) % options.sample_stride == 0 || k + 1 == n) {
      rec.record(grid.time(k + 1), psi);
      if (rec.result.max_norm_drift > 1e-8) throw NumericalError("norm drift exceeds 1e-8 in driven propagation");
    }
  }
  rec.result.sample_interval = grid.dt * options.sample_stride;
  return std::move(rec.result);
}

TrajectoryResult evolve_displacement(const HamiltonianModel& base, std::span<const double> dz,
                                     double dt, const QuantumState& psi0,
                                     const DrivenOptions& options) {
  if (!(psi0.space() == base.space)) throw std::invalid_argument("state and model spaces differ");
  if (!(dt > 0.0)) throw std::invalid_argument("displacement stepping needs dt > 0");
  if (options.sample_stride < 1) throw std::invalid_argument("sample stride must be positive");
  Recorder rec(base.space, options.observables);
  Vector psi = psi0.amplitudes();
  rec.record(0.0, psi);
  const auto n = dz.size();
  for (std::size_t k = 0; k < n; ++k) {
    expm_apply(step_hamiltonian(base, dz[k], options.mode), dt / units::hbar, psi);
    if ((k + 1) % static_cast<std::size_t>(options.sample_stride) == 0 || k + 1 == n) {
      rec.record(static_cast<double>(k + 1) * dt, psi);
      if (rec.result.max_norm_drift > 1e-8) throw NumericalError("norm drift exceeds 1e-8 in driven propagation");
    }
  }
  rec.result.sample_interval = dt * options.sample_stride;
  return std::move(rec.result);
}

PeriodicStepper::PeriodicStepper(const HamiltonianModel& base, double v_amplitude, double phase,
                                 int steps, DriveMode mode)
    : base_(&base), steps_(steps) {
  if (steps < 1) throw std::invalid_argument("periodic stepper needs at least one step");
  const double z_tip = base.params.geometry.tip_height;
  dz_.resize(static_cast<std::size_t>(steps));
  energies_.reserve(dz_.size());
  vectors_.reserve(dz_.size());
  for (int k = 0; k < steps; ++k) {
    // Midpoint of step k in units of the period; the phase grid is frequency independent.
    const double theta = 2.0 * std::numbers::pi * (k + 0.5) / steps;
    const double dz = base.params.actuator.displacement(v_amplitude * std::cos(theta + phase), z_tip);
    dz_[static_cast<std::size_t>(k)] = dz;
    Eigen::SelfAdjointEigenSolver<Matrix> es(step_hamiltonian(base, dz, mode));
    if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
    energies_.push_back(es.eigenvalues());
    vectors_.push_back(es.eigenvectors());
  }
  // Basis changes between consecutive step eigenbases, wrapping around the period.
  transitions_.reserve(dz_.size());
  for (std::size_t k = 0; k < dz_.size(); ++k) {
    const auto& prev = vectors_[k == 0 ? dz_.size() - 1 : k - 1];
    transitions_.push_back(vectors_[k].adjoint() * prev);
  }
}

TrajectoryResult PeriodicStepper::run(double omega, const QuantumState& psi0, double t_end,
                                      double sample_interval, const ObservableOptions& obs) const {
  if (!(psi0.space() == base_->space)) throw std::invalid_argument("state and model spaces differ");
  if (!(omega > 0.0)) throw std::invalid_argument("periodic drive needs omega > 0");
  const double period = 2.0 * std::numbers::pi / omega;
  const double dt = period / steps_;
  const double tau = dt / units::hbar;
  // Largest divisor of the step count giving samples no further apart than sample_interval.
  int samples = 1;
  for (int s = 1; s <= steps_; ++s) {
    if (steps_ % s != 0) continue;
    samples = s;
    if (period / s <= sample_interval) break;
  }
  const int stride = steps_ / samples;
  const Eigen::Index dim = base_->space.dim();
  const long periods = std::lround(std::ceil(t_end / period - 1e-12));

  Recorder rec(base_->space, obs);
  Vector psi = psi0.amplitudes();
  rec.record(0.0, psi);

  if (periods < 2 * dim) {
    // Few periods: step the state vector through the cached eigenbases.
    std::vector<Vector> phases;
    phases.reserve(static_cast<std::size_t>(steps_));
    for (const auto& e : energies_) {
      Vector ph(dim);
      for (Eigen::Index r = 0; r < dim; ++r) ph(r) = std::polar(1.0, -e(r) * tau);
      phases.push_back(std::move(ph));
    }
    Vector c = vectors_[0].adjoint() * psi;
    Vector tmp(dim);
    for (long p = 0; p < periods; ++p) {
      for (int k = 0; k < steps_; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (p > 0 || k > 0) {
          tmp.noalias() = transitions_[ks] * c;
          c.swap(tmp);
        }
        c.array() *= phases[ks].array();
        if ((k + 1) % stride != 0) continue;
        const double t = static_cast<double>(p) * period + (k + 1) * dt;
        if (t > t_end + 1e-12) break;
        psi.noalias() = vectors_[ks] * c;
        rec.record(t, psi);
      }
    }
    if (rec.result.max_norm_drift > 1e-8) throw NumericalError("norm drift exceeds 1e-8 in periodic propagation");
    rec.result.sample_interval = stride * dt;
    return std::move(rec.result);
  }

  // Many periods: build the one-period propagator once, as a running product in the
  // eigenbasis of the current step, U = V_k X.
  std::vector<Matrix> partial;
  partial.reserve(static_cast<std::size_t>(samples));
  Matrix x = vectors_[0].adjoint();
  Matrix tmp(dim, dim);
  for (int k = 0; k < steps_; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const auto& e = energies_[ks];
    if (k > 0) {
      tmp.noalias() = transitions_[ks] * x;
      x.swap(tmp);
    }
    for (Eigen::Index r = 0; r < dim; ++r) x.row(r) *= std::polar(1.0, -e(r) * tau);
    if ((k + 1) % stride == 0) partial.push_back(vectors_[ks] * x);
  }

  Vector phi(dim);
  for (long p = 0; p < periods; ++p) {
    const double t0 = static_cast<double>(p) * period;
    for (int j = 0; j + 1 < samples; ++j) {
      const double t = t0 + (j + 1) * stride * dt;
      if (t > t_end + 1e-12) break;
      phi.noalias() = partial[static_cast<std::size_t>(j)] * psi;
      rec.record(t, phi);
    }
    phi.noalias() = partial.back() * psi;
    psi = phi;
    if (t0 + period <= t_end + 1e-12) rec.record(t0 + period, psi);
  }
  if (rec.result.max_norm_drift > 1e-8) throw NumericalError("norm drift exceeds 1e-8 in periodic propagation");
  rec.result.sample_interval = stride * dt;
  return std::move(rec.result);
}

int periodic_steps(double omega, const PeriodicOptions& options) {
  const double period = 2.0 * std::numbers::pi / omega;
  return std::max(options.steps_per_period, static_cast<int>(std::ceil(period / options.max_step)));
}

TrajectoryResult evolve_periodic(const HamiltonianModel& base, const PeriodicDrive& drive,
                                 const QuantumState& psi0, double t_end,
                                 const PeriodicOptions& options) {
  if (!(drive.omega > 0.0)) throw std::invalid_argument("periodic drive needs omega > 0");
  const PeriodicStepper stepper(base, drive.v_amplitude, drive.phase, periodic_steps(drive.omega, options),
                                options.mode);
  return stepper.run(drive.omega, psi0, t_end, options.sample_interval, options.observables);
}

SzStatistics sz_statistics(const TrajectoryResult& traj) {
  if (traj.sz_total.empty()) throw std::invalid_argument("sz_statistics: empty trajectory");
  const auto n = static_cast<double>(traj.sz_total.size());
  double mean = 0.0;
  for (double v : traj.sz_total) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : traj.sz_total) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

YieldPeak max_yield(const TrajectoryResult& traj) {
  return max_yield(traj, std::numeric_limits<double>::infinity());
}

YieldPeak max_yield(const TrajectoryResult& traj, double t_max) {
  if (traj.yield.empty()) throw std::invalid_argument("max_yield: empty trajectory");
  YieldPeak best{traj.times.front(), traj.yield.front()};
  for (std::size_t k = 1; k < traj.yield.size() && traj.times[k] <= t_max + 1e-12; ++k) {
    if (traj.yield[k] > best.value) best = {traj.times[k], traj.yield[k]};
  }
  return best;
}

}  // namespace stmchain
