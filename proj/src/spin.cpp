#include "stmchain/spin.hpp"

#include <cmath>
#include <string>

namespace stmchain {

double SpinSite::m_of_label(int label) const {
  if (label < 0 || label >= local_dim()) {
    throw std::out_of_range("label " + std::to_string(label) + " outside local dimension");
  }
  return order == LevelOrder::Descending ? spin() - label : label - spin();
}

SpinSite SpinSite::fe() { return {Species::Fe, 4, 2.7, LevelOrder::Descending}; }
SpinSite SpinSite::ti() { return {Species::Ti, 1, 1.8, LevelOrder::Ascending}; }

HilbertSpace::HilbertSpace(std::vector<SpinSite> sites) : sites_(std::move(sites)) {
  strides_.assign(sites_.size(), 1);
  dim_ = 1;
  for (std::size_t k = sites_.size(); k-- > 0;) {
    if (sites_[k].local_dim() < 2) {
      throw std::invalid_argument("site local dimension must be at least 2");
    }
    strides_[k] = dim_;
    dim_ *= sites_[k].local_dim();
  }
}

HilbertSpace HilbertSpace::tip_chain(int n_chain) {
  if (n_chain < 1) throw std::invalid_argument("chain needs at least one site");
  std::vector<SpinSite> s{SpinSite::fe()};
  s.insert(s.end(), static_cast<std::size_t>(n_chain), SpinSite::ti());
  return HilbertSpace(std::move(s));
}

HilbertSpace HilbertSpace::chain(int n_chain) {
  if (n_chain < 1) throw std::invalid_argument("chain needs at least one site");
  return HilbertSpace(std::vector<SpinSite>(static_cast<std::size_t>(n_chain), SpinSite::ti()));
}

bool HilbertSpace::has_tip() const {
  return !sites_.empty() && sites_.front().species == Species::Fe;
}

int HilbertSpace::chain_length() const {
  return static_cast<int>(sites_.size()) - (has_tip() ? 1 : 0);
}

Eigen::Index HilbertSpace::chain_dim() const {
  return has_tip() ? dim_ / sites_.front().local_dim() : dim_;
}

Eigen::Index HilbertSpace::index_of(std::span<const int> labels) const {
  if (labels.size() != sites_.size()) {
    throw std::invalid_argument("label count does not match number of sites");
  }
  Eigen::Index idx = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] < 0 || labels[k] >= sites_[k].local_dim()) {
      throw std::out_of_range("label " + std::to_string(labels[k]) + " out of range at site " +
                              std::to_string(k));
    }
    idx += labels[k] * strides_[k];
  }
  return idx;
}

std::vector<int> HilbertSpace::labels_of(Eigen::Index index) const {
  std::vector<int> labels(sites_.size());
  for (std::size_t k = 0; k < sites_.size(); ++k) {
    labels[k] = static_cast<int>((index / strides_[k]) % sites_[k].local_dim());
  }
  return labels;
}

HilbertSpace HilbertSpace::chain_only() const {
  if (!has_tip()) return *this;
  return HilbertSpace(std::vector<SpinSite>(sites_.begin() + 1, sites_.end()));
}

bool operator==(const HilbertSpace& a, const HilbertSpace& b) {
  if (a.sites_.size() != b.sites_.size()) return false;
  for (std::size_t k = 0; k < a.sites_.size(); ++k) {
    const auto& x = a.sites_[k];
    const auto& y = b.sites_[k];
    if (x.species != y.species || x.two_s != y.two_s || x.order != y.order) return false;
  }
  return true;
}

SpinMatrices spin_operators(int two_s) {
  if (two_s < 0) throw std::invalid_argument("spin must be a non-negative half-integer");
  const int d = two_s + 1;
  const double s = 0.5 * two_s;
  SpinMatrices out{Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d)};
  // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>; index k carries m = s - k.
  for (int k = 0; k < d; ++k) {
    const double m = s - k;
    out.z(k, k) = m;
    if (k > 0) {
      const double c = std::sqrt(s * (s + 1) - m * (m + 1));
      out.x(k - 1, k) = 0.5 * c;
      out.x(k, k - 1) = 0.5 * c;
      out.y(k - 1, k) = cplx(0, -0.5 * c);
      out.y(k, k - 1) = cplx(0, 0.5 * c);
    }
  }
  return out;
}

SpinMatrices site_operators(const SpinSite& site) {
  SpinMatrices ops = spin_operators(site.two_s);
  if (site.order == LevelOrder::Ascending) {
    auto flip = [](const Matrix& m) { return Matrix(m.reverse()); };
    ops.x = flip(ops.x);
    ops.y = flip(ops.y);
    ops.z = flip(ops.z);
  }
  return ops;
}

namespace {

void check_site(const Matrix& op, std::size_t site, const HilbertSpace& space) {
  if (site >= space.num_sites()) throw std::out_of_range("site index out of range");
  const auto d = space.sites()[site].local_dim();
  if (op.rows() != d || op.cols() != d) {
    throw std::invalid_argument("operator dimension does not match local dimension");
  }
}

}  // namespace

Matrix embed(const Matrix& op, std::size_t site, const HilbertSpace& space) {
  check_site(op, site, space);
  const Eigen::Index dim = space.dim();
  const Eigen::Index stride = space.stride(site);
  const int d = space.sites()[site].local_dim();
  Matrix out = Matrix::Zero(dim, dim);
  for (Eigen::Index col = 0; col < dim; ++col) {
    const int l = static_cast<int>((col / stride) % d);
    const Eigen::Index base = col - l * stride;
    for (int r = 0; r < d; ++r) {
      const cplx v = op(r, l);
      if (v != cplx(0)) out(base + r * stride, col) += v;
    }
  }
  return out;
}

Matrix embed_pair(const Matrix& op_a, std::size_t site_a, const Matrix& op_b,
                  std::size_t site_b, const HilbertSpace& space) {
  check_site(op_a, site_a, space);
  check_site(op_b, site_b, space);
  if (site_a == site_b) throw std::invalid_argument("embed_pair needs two distinct sites");
  const Eigen::Index dim = space.dim();
  const Eigen::Index sa = space.stride(site_a);
  const Eigen::Index sb = space.stride(site_b);
  const int da = space.sites()[site_a].local_dim();
  const int db = space.sites()[site_b].local_dim();
  Matrix out = Matrix::Zero(dim, dim);
  for (Eigen::Index col = 0; col < dim; ++col) {
    const int la = static_cast<int>((col / sa) % da);
    const int lb = static_cast<int>((col / sb) % db);
    const Eigen::Index base = col - la * sa - lb * sb;
    for (int ra = 0; ra < da; ++ra) {
      const cplx va = op_a(ra, la);
      if (va == cplx(0)) continue;
      for (int rb = 0; rb < db; ++rb) {
        const cplx vb = op_b(rb, lb);
        if (vb != cplx(0)) out(base + ra * sa + rb * sb, col) += va * vb;
      }
    }
  }
  return out;
}

QuantumState::QuantumState(HilbertSpace space, Vector amplitudes)
    : space_(std::move(space)), amplitudes_(std::move(amplitudes)) {
  if (amplitudes_.size() != space_.dim()) {
    throw std::invalid_argument("amplitude vector length does not match space dimension");
  }
  if (std::abs(amplitudes_.norm() - 1.0) > 1e-10) {
    throw std::invalid_argument("state is not normalized");
  }
}

DensityMatrix::DensityMatrix(HilbertSpace space, Matrix matrix)
    : space_(std::move(space)), matrix_(std::move(matrix)) {
  if (matrix_.rows() != space_.dim() || matrix_.cols() != space_.dim()) {
    throw std::invalid_argument("density matrix dimension does not match space");
  }
}

DensityMatrix DensityMatrix::from_state(const QuantumState& state) {
  const auto& a = state.amplitudes();
  return DensityMatrix(state.space(), a * a.adjoint());
}

QuantumState basis_ket(std::span<const int> labels, const HilbertSpace& space) {
  Vector v = Vector::Zero(space.dim());
  v(space.index_of(labels)) = 1.0;
  return QuantumState(space, std::move(v));
}

QuantumState basis_ket(std::initializer_list<int> labels, const HilbertSpace& space) {
  return basis_ket(std::span<const int>(labels.begin(), labels.size()), space);
}

QuantumState product_state(const Vector& tip_state, std::span<const int> chain_labels,
                           const HilbertSpace& space) {
  if (!space.has_tip()) throw std::invalid_argument("product_state needs a tip factor");
  if (tip_state.size() != space.sites().front().local_dim()) {
    throw std::invalid_argument("tip state has wrong dimension");
  }
  std::vector<int> labels{0};
  labels.insert(labels.end(), chain_labels.begin(), chain_labels.end());
  const Eigen::Index chain_idx = space.index_of(labels);
  const Eigen::Index stride = space.stride(0);
  Vector v = Vector::Zero(space.dim());
  for (Eigen::Index m = 0; m < tip_state.size(); ++m) v(m * stride + chain_idx) = tip_state(m);
  v.normalize();
  return QuantumState(space, std::move(v));
}

DensityMatrix partial_trace_tip(const QuantumState& state) {
  const auto& space = state.space();
  if (!space.has_tip()) throw std::invalid_argument("partial_trace_tip: space has no tip factor");
  const Eigen::Index dc = space.chain_dim();
  const Eigen::Index dt = space.sites().front().local_dim();
  // Rows of `psi` are tip levels, columns chain basis states.
  const Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> psi(
      state.amplitudes().data(), dt, dc);
  Matrix red = psi.transpose() * psi.conjugate();
  return DensityMatrix(space.chain_only(), std::move(red));
}

DensityMatrix partial_trace_tip(const DensityMatrix& rho) {
  const auto& space = rho.space();
  if (!space.has_tip()) throw std::invalid_argument("partial_trace_tip: space has no tip factor");
  const Eigen::Index dc = space.chain_dim();
  const Eigen::Index dt = space.sites().front().local_dim();
  Matrix red = Matrix::Zero(dc, dc);
  for (Eigen::Index m = 0; m < dt; ++m) red += rho.matrix().block(m * dc, m * dc, dc, dc);
  return DensityMatrix(space.chain_only(), std::move(red));
}

Eigen::Index excitation_index(int n_chain, int site) {
  if (site < 1 || site > n_chain) throw std::out_of_range("excitation site outside chain");
  return Eigen::Index{1} << (n_chain - site);
}

double chain_population(const Vector& amplitudes, const HilbertSpace& space,
                        Eigen::Index chain_index) {
  const Eigen::Index dc = space.chain_dim();
  if (chain_index < 0 || chain_index >= dc) throw std::out_of_range("chain index out of range");
  const Eigen::Index dt = space.dim() / dc;
  double p = 0.0;
  for (Eigen::Index m = 0; m < dt; ++m) p += std::norm(amplitudes(m * dc + chain_index));
  return p;
}

double yield_J1(const QuantumState& state) {
  const int n = state.space().chain_length();
  return chain_population(state.amplitudes(), state.space(), excitation_index(n, n));
}

RealVector total_sz_diagonal(const HilbertSpace& space) {
  RealVector d(space.dim());
  for (Eigen::Index i = 0; i < space.dim(); ++i) {
    const auto labels = space.labels_of(i);
    double s = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) s += space.sites()[k].m_of_label(labels[k]);
    d(i) = s;
  }
  return d;
}

}  // namespace stmchain
