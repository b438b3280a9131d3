#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "nmg/core.hpp"

namespace nmg {

/// Uniform time grid t_n = n * dt, n = 0..n_steps.
class TimeGrid {
 public:
  /// A single point at t = 0 with unit step.
  TimeGrid() = default;
  TimeGrid(double dt, std::size_t n_steps);

  double dt() const { return dt_; }
  std::size_t n_steps() const { return n_steps_; }
  /// Number of grid points, n_steps + 1.
  std::size_t size() const { return n_steps_ + 1; }
  double time(std::size_t n) const { return static_cast<double>(n) * dt_; }
  double final_time() const { return time(n_steps_); }

  /// Trapezoidal weights of the whole grid, used for every double sum.
  RVector trapezoid_weights() const;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double dt_ = 1.0;
  std::size_t n_steps_ = 0;
};

CMatrix identity(Eigen::Index dim);
CMatrix commutator(const CMatrix& a, const CMatrix& b);

/// exp(z * op). Hermitian inputs go through the eigendecomposition, anything
/// else through scaling and squaring.
CMatrix matrix_exponential(const CMatrix& op, Complex z);

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
struct HermitianEigen {
  RVector values;
  CMatrix vectors;
};
HermitianEigen hermitian_eigen(const CMatrix& op);

/// Coupling operators A^j in the Heisenberg picture of a time-independent
/// system Hamiltonian: A^j(t) = exp(iHt) A^j exp(-iHt).
class HeisenbergFamily {
 public:
  HeisenbergFamily(const CMatrix& hamiltonian, std::vector<CMatrix> operators, TimeGrid grid,
                   std::vector<bool> hermitian);

  const TimeGrid& grid() const { return grid_; }
  std::size_t channels() const { return base_.size(); }
  Eigen::Index dim() const { return hamiltonian_.rows(); }
  const CMatrix& hamiltonian() const { return hamiltonian_; }
  const CMatrix& base(std::size_t j) const { return base_[j]; }
  bool hermitian(std::size_t j) const { return hermitian_[j]; }

  /// A^j(t_n) on the grid.
  const CMatrix& at(std::size_t j, std::size_t n) const { return grid_ops_[j][n]; }
  /// A^j(t) at an arbitrary time.
  CMatrix at_time(std::size_t j, double t) const;
  /// exp(-iHt).
  CMatrix propagator(double t) const;

  /// True when H commutes with every A^j, so A^j(t) = A^j.
  bool stationary() const { return stationary_; }

 private:
  CMatrix hamiltonian_;
  std::vector<CMatrix> base_;
  std::vector<bool> hermitian_;
  TimeGrid grid_;
  HermitianEigen eig_;
  std::vector<std::vector<CMatrix>> grid_ops_;
  bool stationary_ = false;
};

/// Builds the family; H must be Hermitian, and so must each A^j unless its
/// entry in `allow_non_hermitian` is set.
HeisenbergFamily heisenberg_evolve(const CMatrix& hamiltonian, std::vector<CMatrix> operators,
                                   const TimeGrid& grid,
                                   std::vector<bool> allow_non_hermitian = {});

struct BohrComponent {
  double frequency;
  CMatrix op;
};

/// A = sum_w A_w with A_w = sum_{E_b - E_a = w} P_a A P_b, so that
/// A(t) = sum_w A_w exp(-i w t). Components are sorted by frequency.
std::vector<BohrComponent> bohr_decomposition(const CMatrix& hamiltonian, const CMatrix& op);

/// 0.5 * || a - b ||_1 for Hermitian arguments.
double trace_distance(const CMatrix& a, const CMatrix& b);

namespace ops {
CMatrix sigma_x();
CMatrix sigma_y();
CMatrix sigma_z();
/// |0><1|, with |0> the sigma_z = +1 state.
CMatrix sigma_plus();
CMatrix sigma_minus();
CMatrix number(Eigen::Index dim);
/// (a + a^dagger) / sqrt(2) on n levels.
CMatrix position_trunc(Eigen::Index n);

/// Looks up "sigma_x", "sigma_y", "sigma_z", "sigma_plus", "sigma_minus",
/// "identity", "number" and "position_trunc(n)". `dim` sizes the
/// dimension-free presets.
CMatrix named(std::string_view name, Eigen::Index dim);
}  // namespace ops

}  // namespace nmg
