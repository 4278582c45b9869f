#include "stmchain/model.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace stmchain {

double ActuatorParams::displacement(double volts, double tip_height) const {
  return charge * volts / (k * tip_height);
}

double ActuatorParams::voltage(double displacement_a, double tip_height) const {
  return displacement_a * k * tip_height / charge;
}

std::vector<Vec3> Geometry::positions() const {
  std::vector<Vec3> out;
  if (with_tip) out.emplace_back(tip_offset_x, tip_offset_y, tip_height);
  for (int i = 0; i < n_chain; ++i) out.emplace_back(i * spacing, 0.0, 0.0);
  return out;
}

double exchange_coupling(double r, const ExchangeParams& params) {
  return params.j0 * std::exp(-(r - params.r0) / params.d_ex);
}

Mat3 dipolar_tensor(const Vec3& ri, const Vec3& rj, double gi, double gj, const FieldParams& fp) {
  const Vec3 d = rj - ri;
  const double r = d.norm();
  if (!(r > 0.0)) throw std::invalid_argument("dipolar_tensor: coincident positions");
  const Vec3 n = d / r;
  const double pref = fp.dipolar_prefactor * gi * gj / (r * r * r);
  return pref * (Mat3::Identity() - 3.0 * n * n.transpose());
}

namespace {

const ExchangeParams* exchange_for(const SpinSite& a, const SpinSite& b, const ModelParams& p) {
  if (a.species == Species::Ti && b.species == Species::Ti) return &p.ti_ti;
  if (a.species != b.species) return &p.fe_ti;
  return nullptr;
}

Mat3 pair_coupling_derivative(const Vec3& ri, const Vec3& rj, const SpinSite& si,
                              const SpinSite& sj, const ModelParams& params, const Vec3& u) {
  // Derivative of C(rj + t u) at t = 0.
  const Vec3 d = rj - ri;
  const double r = d.norm();
  const double rdotu = d.dot(u);
  Mat3 out = Mat3::Zero();
  if (params.exchange) {
    if (const auto* ex = exchange_for(si, sj, params)) {
      const double dj = -exchange_coupling(r, *ex) / ex->d_ex * (rdotu / r);
      out += dj * Mat3::Identity();
    }
  }
  if (params.dipolar) {
    const double p = params.field.dipolar_prefactor * si.g_factor * sj.g_factor;
    const double r2 = r * r;
    const double r5 = r2 * r2 * r;
    const double r7 = r5 * r2;
    const Mat3 first = (2.0 * rdotu * Mat3::Identity() - 3.0 * (u * d.transpose() + d * u.transpose())) / r5;
    const Mat3 second = -5.0 * (r2 * Mat3::Identity() - 3.0 * d * d.transpose()) * rdotu / r7;
    out += p * (first + second);
  }
  return out;
}

}  // namespace

Mat3 pair_coupling(const Vec3& ri, const Vec3& rj, const SpinSite& si, const SpinSite& sj,
                   const ModelParams& params) {
  Mat3 c = Mat3::Zero();
  if (params.exchange) {
    if (const auto* ex = exchange_for(si, sj, params)) {
      c += exchange_coupling((rj - ri).norm(), *ex) * Mat3::Identity();
    }
  }
  if (params.dipolar) c += dipolar_tensor(ri, rj, si.g_factor, sj.g_factor, params.field);
  return c;
}

namespace {

void add_coupling(Matrix& h, const Mat3& c, const std::array<Matrix, 9>& ops) {
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (c(a, b) != 0.0) h += c(a, b) * ops[static_cast<std::size_t>(3 * a + b)];
    }
  }
}

std::array<Matrix, 9> pair_operators(std::size_t i, std::size_t j, const HilbertSpace& space) {
  const auto si = site_operators(space.sites()[i]);
  const auto sj = site_operators(space.sites()[j]);
  const std::array<const Matrix*, 3> a{&si.x, &si.y, &si.z};
  const std::array<const Matrix*, 3> b{&sj.x, &sj.y, &sj.z};
  std::array<Matrix, 9> out;
  for (int p = 0; p < 3; ++p) {
    for (int q = 0; q < 3; ++q) out[static_cast<std::size_t>(3 * p + q)] = embed_pair(*a[p], i, *b[q], j, space);
  }
  return out;
}

}  // namespace

std::vector<Mat3> HamiltonianModel::coupling_shift(double dz) const {
  const auto pos = params.geometry.positions();
  const Vec3 shift(0.0, 0.0, dz);
  std::vector<Mat3> out;
  out.reserve(modulated_sites.size());
  const auto& tip = space.sites()[0];
  for (auto j : modulated_sites) {
    const auto& sj = space.sites()[j];
    out.push_back(pair_coupling(pos[0], pos[j] + shift, tip, sj, params) -
                  pair_coupling(pos[0], pos[j], tip, sj, params));
  }
  return out;
}

void HamiltonianModel::add_pair_terms(Matrix& h, const std::vector<Mat3>& shifts) const {
  for (std::size_t k = 0; k < shifts.size(); ++k) add_coupling(h, shifts[k], pair_ops[k]);
}

Matrix tip_hamiltonian(const ModelParams& params) {
  const auto s = site_operators(SpinSite::fe());
  const auto& b = params.field.b;
  const double g = SpinSite::fe().g_factor;
  Matrix h = -params.field.mu_b * g * (b.x() * s.x + b.y() * s.y + b.z() * s.z);
  h += params.anisotropy.dzz * s.z * s.z;
  return h;
}

HamiltonianModel build_static_hamiltonian(const ModelParams& params) {
  const auto& geom = params.geometry;
  HamiltonianModel model;
  model.params = params;
  model.space = geom.with_tip ? HilbertSpace::tip_chain(geom.n_chain) : HilbertSpace::chain(geom.n_chain);
  const auto& space = model.space;
  const auto pos = geom.positions();
  const auto n_sites = space.num_sites();
  for (std::size_t i = 0; i < n_sites; ++i) {
    for (std::size_t j = i + 1; j < n_sites; ++j) {
      if ((pos[i] - pos[j]).norm() <= 0.0) throw std::invalid_argument("coincident sites in geometry");
    }
  }

  const Eigen::Index dim = space.dim();
  Matrix h = Matrix::Zero(dim, dim);
  for (std::size_t i = 0; i < n_sites; ++i) {
    for (std::size_t j = i + 1; j < n_sites; ++j) {
      const Mat3 c = pair_coupling(pos[i], pos[j], space.sites()[i], space.sites()[j], params);
      if (c.isZero(0.0)) continue;
      add_coupling(h, c, pair_operators(i, j, space));
    }
  }
  const auto& b = params.field.b;
  for (std::size_t i = 0; i < n_sites; ++i) {
    const auto& site = space.sites()[i];
    const auto s = site_operators(site);
    const Matrix local = -params.field.mu_b * site.g_factor * (b.x() * s.x + b.y() * s.y + b.z() * s.z);
    if (!local.isZero(0.0)) h += embed(local, i, space);
  }
  if (space.has_tip()) {
    const auto s = site_operators(space.sites()[0]);
    h += embed(params.anisotropy.dzz * s.z * s.z, 0, space);
  }
  model.h_static = std::move(h);

  if (space.has_tip()) {
    model.modulated_sites.push_back(1);
    if (params.modulate_all_tip_pairs) {
      for (std::size_t j = 2; j < n_sites; ++j) model.modulated_sites.push_back(j);
    }
    for (auto j : model.modulated_sites) model.pair_ops.push_back(pair_operators(0, j, space));
    model.w_linear = linearized_control_operator(model);
  }
  return model;
}

Vector fe_ground_state(const ModelParams& params) {
  const Matrix h = tip_hamiltonian(params);
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const auto& ev = es.eigenvalues();
  Eigen::Index deg = 1;
  while (deg < ev.size() && ev(deg) - ev(0) < 1e-12) ++deg;
  Vector g = es.eigenvectors().col(0);
  if (deg > 1) {
    const Matrix basis = es.eigenvectors().leftCols(deg);
    const auto sz = site_operators(SpinSite::fe()).z;
    const Matrix proj = basis.adjoint() * sz * basis;
    Eigen::SelfAdjointEigenSolver<Matrix> inner(proj);
    g = basis * inner.eigenvectors().col(0);
  }
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    if (std::abs(g(k)) > 1e-12) {
      g *= std::conj(g(k)) / std::abs(g(k));
      break;
    }
  }
  g.normalize();
  return g;
}

Matrix displaced_hamiltonian(const HamiltonianModel& base, double dz) {
  if (!base.space.has_tip()) throw std::invalid_argument("displaced_hamiltonian needs a tip");
  const auto& geom = base.params.geometry;
  if (dz >= geom.tip_height) throw std::invalid_argument("displacement reaches the tip");
  if (dz == 0.0) return base.h_static;
  Matrix h = base.h_static;
  base.add_pair_terms(h, base.coupling_shift(dz));
  return h;
}

Matrix linearized_control_operator(const HamiltonianModel& base) {
  if (!base.space.has_tip()) throw std::invalid_argument("control operator needs a tip");
  const auto pos = base.params.geometry.positions();
  const Vec3 u(0.0, 0.0, 1.0);
  Matrix w = Matrix::Zero(base.space.dim(), base.space.dim());
  for (std::size_t k = 0; k < base.modulated_sites.size(); ++k) {
    const auto j = base.modulated_sites[k];
    const Mat3 d = pair_coupling_derivative(pos[0], pos[j], base.space.sites()[0],
                                            base.space.sites()[j], base.params, u);
    add_coupling(w, d, base.pair_ops[k]);
  }
  return w;
}

Matrix finite_difference_control_operator(const HamiltonianModel& base, double step) {
  return (displaced_hamiltonian(base, step) - displaced_hamiltonian(base, -step)) / (2.0 * step);
}

double tip_zz_coupling(double tip_height, const ModelParams& params) {
  const Vec3 tip(0.0, 0.0, tip_height);
  const Vec3 site(0.0, 0.0, 0.0);
  return pair_coupling(tip, site, SpinSite::fe(), SpinSite::ti(), params)(2, 2);
}

Matrix total_sz(const HilbertSpace& space) {
  return total_sz_diagonal(space).cast<cplx>().asDiagonal();
}

}  // namespace stmchain
