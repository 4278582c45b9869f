#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "doctest.h"
#include "stmchain/spin.hpp"
#include "support.hpp"

using namespace stmchain;

namespace {

const cplx I{0.0, 1.0};

Matrix kron_chain(const std::vector<Matrix>& ops) {
  Matrix out = ops.front();
  for (std::size_t k = 1; k < ops.size(); ++k) {
    Matrix next = Eigen::kroneckerProduct(out, ops[k]).eval();
    out = next;
  }
  return out;
}

// Reduced chain matrix by summing over tip labels; the tip is the most significant factor.
Matrix index_sum_trace(const Vector& psi, Eigen::Index tip_dim, Eigen::Index chain_dim) {
  Matrix rho = Matrix::Zero(chain_dim, chain_dim);
  for (Eigen::Index t = 0; t < tip_dim; ++t) {
    for (Eigen::Index a = 0; a < chain_dim; ++a) {
      for (Eigen::Index b = 0; b < chain_dim; ++b) {
        rho(a, b) += psi(t * chain_dim + a) * std::conj(psi(t * chain_dim + b));
      }
    }
  }
  return rho;
}

}  // namespace

TEST_CASE("su(2) commutation relations hold for S = 1/2 .. 5/2") {
  for (int two_s = 1; two_s <= 5; ++two_s) {
    const auto s = spin_operators(two_s);
    CHECK((s.x * s.y - s.y * s.x - I * s.z).norm() < 1e-13);
    CHECK((s.y * s.z - s.z * s.y - I * s.x).norm() < 1e-13);
    CHECK((s.z * s.x - s.x * s.z - I * s.y).norm() < 1e-13);
    const double ss = 0.5 * two_s * (0.5 * two_s + 1.0);
    const Matrix casimir = s.x * s.x + s.y * s.y + s.z * s.z;
    CHECK((casimir - ss * Matrix::Identity(two_s + 1, two_s + 1)).norm() < 1e-12);
  }
}

TEST_CASE("spin matrices follow the descending Sz convention") {
  const auto half = spin_operators(1);
  CHECK(half.z(0, 0).real() == doctest::Approx(0.5));
  CHECK(half.z(1, 1).real() == doctest::Approx(-0.5));
  CHECK(half.x(0, 1).real() == doctest::Approx(0.5));
  const auto two = spin_operators(4);
  for (int k = 0; k < 5; ++k) CHECK(two.z(k, k).real() == doctest::Approx(2.0 - k));
  CHECK_THROWS_AS(spin_operators(-1), std::invalid_argument);
}

TEST_CASE("basis labels map to Sz eigenvalues") {
  const auto space = HilbertSpace::tip_chain(2);
  CHECK(space.dim() == 20);
  const auto sz1 = embed(site_operators(space.sites()[1]).z, 1, space);
  const auto ket = basis_ket({0, 1, 0}, space);
  const Vector image = sz1 * ket.amplitudes();
  CHECK((image - 0.5 * ket.amplitudes()).norm() < 1e-14);
  const auto tip_sz = embed(site_operators(space.sites()[0]).z, 0, space);
  const auto low = basis_ket({4, 0, 0}, space);
  CHECK((tip_sz * low.amplitudes() + 2.0 * low.amplitudes()).norm() < 1e-14);
}

TEST_CASE("index and labels round trip") {
  const auto space = HilbertSpace::tip_chain(3);
  for (Eigen::Index i = 0; i < space.dim(); ++i) CHECK(space.index_of(space.labels_of(i)) == i);
  const std::vector<int> labels{2, 1, 0, 1};
  CHECK(space.index_of(labels) == 2 * 8 + 4 + 1);
}

TEST_CASE("embed agrees with explicit Kronecker products") {
  const auto space = HilbertSpace::tip_chain(2);
  const auto fe = spin_operators(4);
  const auto ti = spin_operators(1);
  const Matrix i5 = Matrix::Identity(5, 5);
  const Matrix i2 = Matrix::Identity(2, 2);
  CHECK((embed(fe.x, 0, space) - kron_chain({fe.x, i2, i2})).norm() < 1e-14);
  CHECK((embed(ti.y, 2, space) - kron_chain({i5, i2, ti.y})).norm() < 1e-14);
  const Matrix pair = embed_pair(fe.z, 0, ti.x, 1, space);
  CHECK((pair - kron_chain({fe.z, ti.x, i2})).norm() < 1e-14);
}

TEST_CASE("partial trace matches the index-sum oracle and preserves the trace") {
  std::mt19937 rng(7);
  for (int n = 1; n <= 4; ++n) {
    const auto space = HilbertSpace::tip_chain(n);
    for (int trial = 0; trial < 100; ++trial) {
      const QuantumState psi(space, testing::random_state(space.dim(), rng));
      const auto rho = partial_trace_tip(psi);
      const Matrix oracle = index_sum_trace(psi.amplitudes(), 5, space.chain_dim());
      REQUIRE((rho.matrix() - oracle).norm() < 1e-13);
      CHECK(std::abs(rho.trace() - 1.0) < 1e-13);
      CHECK((rho.matrix() - rho.matrix().adjoint()).norm() < 1e-14);
    }
  }
}

TEST_CASE("partial trace of a mixed state is linear") {
  std::mt19937 rng(11);
  const auto space = HilbertSpace::tip_chain(2);
  const QuantumState a(space, testing::random_state(space.dim(), rng));
  const QuantumState b(space, testing::random_state(space.dim(), rng));
  const Matrix mix = 0.3 * DensityMatrix::from_state(a).matrix() + 0.7 * DensityMatrix::from_state(b).matrix();
  const auto reduced = partial_trace_tip(DensityMatrix(space, mix));
  const Matrix expect = 0.3 * partial_trace_tip(a).matrix() + 0.7 * partial_trace_tip(b).matrix();
  CHECK((reduced.matrix() - expect).norm() < 1e-14);
  CHECK(std::abs(reduced.trace() - 1.0) < 1e-13);
}

TEST_CASE("single-excitation indices") {
  CHECK(excitation_index(3, 1) == 4);
  CHECK(excitation_index(3, 3) == 1);
  CHECK(excitation_index(1, 1) == 1);
}

TEST_CASE("yield is the target population after tracing out the tip") {
  const auto space = HilbertSpace::tip_chain(3);
  Vector tip = Vector::Zero(5);
  tip(0) = 1.0;
  const std::vector<int> end{0, 0, 1};
  const std::vector<int> start{1, 0, 0};
  CHECK(yield_J1(product_state(tip, end, space)) == doctest::Approx(1.0));
  CHECK(yield_J1(product_state(tip, start, space)) == doctest::Approx(0.0));

  std::mt19937 rng(3);
  const QuantumState psi(space, testing::random_state(space.dim(), rng));
  const auto target = excitation_index(3, 3);
  const double via_trace = partial_trace_tip(psi).matrix()(target, target).real();
  CHECK(chain_population(psi.amplitudes(), space, target) == doctest::Approx(via_trace).epsilon(1e-13));
}

TEST_CASE("total Sz diagonal") {
  const auto space = HilbertSpace::tip_chain(2);
  const auto d = total_sz_diagonal(space);
  CHECK(d(space.index_of(std::vector<int>{0, 1, 1})) == doctest::Approx(3.0));
  CHECK(d(space.index_of(std::vector<int>{4, 0, 0})) == doctest::Approx(-3.0));
}
