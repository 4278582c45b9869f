#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace stmchain {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

// Basis convention used everywhere in the library:
//  * the tip (Fe, S=2) is factor 0 when present, chain sites follow left to right;
//  * the global index is lexicographic in the site labels, last site least significant;
//  * tip labels 0..4 are ordered by descending Sz (label 0 is Sz=+2);
//  * chain labels are 0 = Sz -1/2 ("down") and 1 = Sz +1/2 ("excitation").

enum class Species { Fe, Ti };

enum class LevelOrder { Descending, Ascending };

struct SpinSite {
  Species species;
  int two_s;        // 2S
  double g_factor;
  LevelOrder order;

  [[nodiscard]] int local_dim() const { return two_s + 1; }
  [[nodiscard]] double spin() const { return 0.5 * two_s; }
  // Sz eigenvalue carried by a local label.
  [[nodiscard]] double m_of_label(int label) const;

  static SpinSite fe();
  static SpinSite ti();
};

class HilbertSpace {
 public:
  HilbertSpace() = default;
  explicit HilbertSpace(std::vector<SpinSite> sites);

  // Fe tip followed by n_chain Ti sites, or a bare Ti chain.
  static HilbertSpace tip_chain(int n_chain);
  static HilbertSpace chain(int n_chain);

  [[nodiscard]] const std::vector<SpinSite>& sites() const { return sites_; }
  [[nodiscard]] std::size_t num_sites() const { return sites_.size(); }
  [[nodiscard]] Eigen::Index dim() const { return dim_; }
  [[nodiscard]] bool has_tip() const;
  [[nodiscard]] int chain_length() const;
  [[nodiscard]] Eigen::Index chain_dim() const;
  // Index stride of a site in the global product basis.
  [[nodiscard]] Eigen::Index stride(std::size_t site) const { return strides_.at(site); }
  [[nodiscard]] Eigen::Index index_of(std::span<const int> labels) const;
  [[nodiscard]] std::vector<int> labels_of(Eigen::Index index) const;
  [[nodiscard]] HilbertSpace chain_only() const;

  friend bool operator==(const HilbertSpace& a, const HilbertSpace& b);

 private:
  std::vector<SpinSite> sites_;
  std::vector<Eigen::Index> strides_;
  Eigen::Index dim_ = 1;
};

struct SpinMatrices {
  Matrix x;
  Matrix y;
  Matrix z;
};

/// Dimensionless angular momentum matrices in the |S,S>,|S,S-1>,...,|S,-S> basis.
/// Throws std::invalid_argument unless two_s >= 0.
SpinMatrices spin_operators(int two_s);

/// Same matrices, expressed in the label basis of the given site.
SpinMatrices site_operators(const SpinSite& site);

/// I (x) ... (x) op (x) ... (x) I with op on `site`.
Matrix embed(const Matrix& op, std::size_t site, const HilbertSpace& space);

/// op_a on site a times op_b on site b (a != b), built directly without dense products.
Matrix embed_pair(const Matrix& op_a, std::size_t site_a, const Matrix& op_b,
                  std::size_t site_b, const HilbertSpace& space);

class QuantumState {
 public:
  QuantumState(HilbertSpace space, Vector amplitudes);

  [[nodiscard]] const HilbertSpace& space() const { return space_; }
  [[nodiscard]] const Vector& amplitudes() const { return amplitudes_; }
  [[nodiscard]] double norm() const { return amplitudes_.norm(); }

 private:
  HilbertSpace space_;
  Vector amplitudes_;
};

class DensityMatrix {
 public:
  DensityMatrix(HilbertSpace space, Matrix matrix);
  static DensityMatrix from_state(const QuantumState& state);

  [[nodiscard]] const HilbertSpace& space() const { return space_; }
  [[nodiscard]] const Matrix& matrix() const { return matrix_; }
  [[nodiscard]] cplx trace() const { return matrix_.trace(); }

 private:
  HilbertSpace space_;
  Matrix matrix_;
};

QuantumState basis_ket(std::span<const int> labels, const HilbertSpace& space);
QuantumState basis_ket(std::initializer_list<int> labels, const HilbertSpace& space);

/// Tip state (x) chain product state.
QuantumState product_state(const Vector& tip_state, std::span<const int> chain_labels,
                           const HilbertSpace& space);

DensityMatrix partial_trace_tip(const QuantumState& state);
DensityMatrix partial_trace_tip(const DensityMatrix& rho);

/// Chain basis index of the single-excitation ket with the excitation on `site`
/// (1-based chain position).
Eigen::Index excitation_index(int n_chain, int site);

/// Population of chain basis state `chain_index` after tracing out the tip.
/// With the default target this is the transfer yield onto |00...1>.
double chain_population(const Vector& amplitudes, const HilbertSpace& space,
                        Eigen::Index chain_index);

double yield_J1(const QuantumState& state);

/// Diagonal of the total Sz operator in the product basis.
RealVector total_sz_diagonal(const HilbertSpace& space);

}  // namespace stmchain
