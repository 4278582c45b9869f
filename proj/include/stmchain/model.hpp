#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "stmchain/spin.hpp"

namespace stmchain {

// Units: energies in meV, lengths in Angstrom, time in ns, fields in Tesla.
namespace units {
inline constexpr double hbar = 6.582119569e-4;       // meV ns
inline constexpr double mu_b = 5.788381806e-2;       // meV / T
inline constexpr double dipolar_prefactor = 5.368151e-2;  // mu0 muB^2 / 4pi, meV A^3
}  // namespace units

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ExchangeParams {
  double j0 = 0.0;    // meV
  double r0 = 0.0;    // A
  double d_ex = 1.0;  // A

  static ExchangeParams ti_ti() { return {0.0038, 8.64, 0.4}; }
  static ExchangeParams fe_ti() { return {64.0, 0.0, 0.5}; }
};

struct FieldParams {
  Vec3 b{0.0, 0.0, 0.05};
  double mu_b = units::mu_b;
  double dipolar_prefactor = units::dipolar_prefactor;
};

struct TipAnisotropy {
  double dzz = -0.05;  // meV, negative = easy axis
};

struct ActuatorParams {
  double charge = 1.0;  // elementary charges
  double k = 0.08;      // eV / A^2

  /// Displacement of site 1 towards the tip (A) for a tip voltage in volts.
  [[nodiscard]] double displacement(double volts, double tip_height) const;
  /// Inverse of displacement().
  [[nodiscard]] double voltage(double displacement_a, double tip_height) const;
};

struct Geometry {
  int n_chain = 2;
  double spacing = 8.64;
  bool with_tip = true;
  double tip_height = 5.0;
  double tip_offset_x = 0.0;
  double tip_offset_y = 0.0;

  /// Site positions in HilbertSpace order: tip (if present) then chain left to right.
  [[nodiscard]] std::vector<Vec3> positions() const;
};

struct ModelParams {
  Geometry geometry;
  ExchangeParams ti_ti = ExchangeParams::ti_ti();
  ExchangeParams fe_ti = ExchangeParams::fe_ti();
  FieldParams field;
  TipAnisotropy anisotropy;
  ActuatorParams actuator;
  bool exchange = true;
  bool dipolar = true;
  // When set, the whole chain moves with the actuator and every tip-site pair is modulated;
  // otherwise only the tip-site1 distance changes.
  bool modulate_all_tip_pairs = false;
};

double exchange_coupling(double r, const ExchangeParams& params);

/// 3x3 dipolar coupling tensor between two sites; symmetric and traceless.
Mat3 dipolar_tensor(const Vec3& ri, const Vec3& rj, double gi, double gj, const FieldParams& fp);

/// Full pair coupling tensor C with H_pair = sum_ab C_ab S_i^a S_j^b (exchange + dipolar).
Mat3 pair_coupling(const Vec3& ri, const Vec3& rj, const SpinSite& si, const SpinSite& sj,
                   const ModelParams& params);

struct HamiltonianModel {
  HilbertSpace space;
  ModelParams params;
  Matrix h_static;
  // dH/d(dz) at dz = 0; empty for chain-only models.
  Matrix w_linear;
  // Site indices whose coupling to the tip is modulated by the actuator.
  std::vector<std::size_t> modulated_sites;
  // Embedded S_0^a S_j^b for every modulated site j, a,b in {x,y,z}.
  std::vector<std::array<Matrix, 9>> pair_ops;

  /// Coupling tensor change of each modulated pair for a displacement dz.
  [[nodiscard]] std::vector<Mat3> coupling_shift(double dz) const;
  /// Adds sum_ab shift_ab S_0^a S_j^b for each modulated pair to `h`.
  void add_pair_terms(Matrix& h, const std::vector<Mat3>& shifts) const;
};

HamiltonianModel build_static_hamiltonian(const ModelParams& params);

/// Local 5x5 tip Hamiltonian -g0 muB S.B + Dzz Sz^2.
Matrix tip_hamiltonian(const ModelParams& params);

/// Ground state of the isolated tip; degeneracies resolved towards lowest <Sz>, then phase.
Vector fe_ground_state(const ModelParams& params);

/// Exact Hamiltonian with site 1 displaced by dz towards the tip.
Matrix displaced_hamiltonian(const HamiltonianModel& base, double dz);

/// Analytic dH/d(dz) at dz = 0.
Matrix linearized_control_operator(const HamiltonianModel& base);

/// Central-difference estimate of dH/d(dz), used to cross-check the analytic form.
Matrix finite_difference_control_operator(const HamiltonianModel& base, double step = 1e-4);

/// Tip-site1 zz coupling (exchange plus on-axis dipolar) as a function of tip height.
double tip_zz_coupling(double tip_height, const ModelParams& params);

Matrix total_sz(const HilbertSpace& space);

}  // namespace stmchain
