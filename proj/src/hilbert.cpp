#include "nmg/hilbert.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace nmg {

TimeGrid::TimeGrid(double dt, std::size_t n_steps) : dt_(dt), n_steps_(n_steps) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("time grid: dt must be positive and finite");
}

RVector TimeGrid::trapezoid_weights() const {
  RVector w = RVector::Constant(static_cast<Eigen::Index>(size()), dt_);
  if (n_steps_ == 0) {
    w.setZero();
    return w;
  }
  w(0) *= 0.5;
  w(w.size() - 1) *= 0.5;
  return w;
}

CMatrix identity(Eigen::Index dim) { return CMatrix::Identity(dim, dim); }

CMatrix commutator(const CMatrix& a, const CMatrix& b) { return a * b - b * a; }

HermitianEigen hermitian_eigen(const CMatrix& op) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(op);
  if (es.info() != Eigen::Success) throw NumericalRefusal("hermitian eigensolver did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

CMatrix matrix_exponential(const CMatrix& op, Complex z) {
  if (op.rows() != op.cols()) throw InvalidInput("matrix_exponential: operator is not square");
  if (!all_finite(op) || !std::isfinite(z.real()) || !std::isfinite(z.imag()))
    throw InvalidInput("matrix_exponential: non-finite input");
  if (is_hermitian(op, 1e-14 * std::max(1.0, max_abs(op)))) {
    const auto eig = hermitian_eigen(0.5 * (op + op.adjoint()));
    CVector phases(eig.values.size());
    for (Eigen::Index i = 0; i < phases.size(); ++i) phases(i) = std::exp(z * eig.values(i));
    return eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
  }
  const CMatrix scaled = z * op;
  return scaled.exp();
}

HeisenbergFamily::HeisenbergFamily(const CMatrix& hamiltonian, std::vector<CMatrix> operators,
                                   TimeGrid grid, std::vector<bool> hermitian)
    : hamiltonian_(hamiltonian),
      base_(std::move(operators)),
      hermitian_(std::move(hermitian)),
      grid_(grid),
      eig_(hermitian_eigen(hamiltonian)) {
  stationary_ = true;
  for (const auto& a : base_)
    if (max_abs(commutator(hamiltonian_, a)) > 1e-12 * std::max(1.0, max_abs(a) * max_abs(hamiltonian_)))
      stationary_ = false;

  grid_ops_.resize(base_.size());
  for (std::size_t j = 0; j < base_.size(); ++j) {
    grid_ops_[j].reserve(grid_.size());
    grid_ops_[j].push_back(base_[j]);
    for (std::size_t n = 1; n < grid_.size(); ++n)
      grid_ops_[j].push_back(stationary_ ? base_[j] : at_time(j, grid_.time(n)));
  }
}

CMatrix HeisenbergFamily::propagator(double t) const {
  CVector phases(eig_.values.size());
  for (Eigen::Index i = 0; i < phases.size(); ++i) phases(i) = std::exp(-kI * eig_.values(i) * t);
  return eig_.vectors * phases.asDiagonal() * eig_.vectors.adjoint();
}

CMatrix HeisenbergFamily::at_time(std::size_t j, double t) const {
  if (stationary_) return base_[j];
  // Work in the energy basis: (V^dag A V)_ab picks up exp(i (E_a - E_b) t).
  const CMatrix local = eig_.vectors.adjoint() * base_[j] * eig_.vectors;
  CMatrix rotated(local.rows(), local.cols());
  for (Eigen::Index b = 0; b < local.cols(); ++b)
    for (Eigen::Index a = 0; a < local.rows(); ++a)
      rotated(a, b) = local(a, b) * std::exp(kI * (eig_.values(a) - eig_.values(b)) * t);
  return eig_.vectors * rotated * eig_.vectors.adjoint();
}

HeisenbergFamily heisenberg_evolve(const CMatrix& hamiltonian, std::vector<CMatrix> operators,
                                   const TimeGrid& grid, std::vector<bool> allow_non_hermitian) {
  if (hamiltonian.rows() != hamiltonian.cols() || hamiltonian.rows() == 0)
    throw InvalidInput("heisenberg_evolve: Hamiltonian must be a non-empty square matrix");
  if (!all_finite(hamiltonian)) throw InvalidInput("heisenberg_evolve: non-finite Hamiltonian");
  if (!is_hermitian(hamiltonian, 1e-12))
    throw InvalidInput("heisenberg_evolve: Hamiltonian is not Hermitian (defect " +
                       std::to_string(hermiticity_defect(hamiltonian)) + ")");
  allow_non_hermitian.resize(operators.size(), false);
  std::vector<bool> hermitian(operators.size());
  for (std::size_t j = 0; j < operators.size(); ++j) {
    const auto& a = operators[j];
    if (a.rows() != hamiltonian.rows() || a.cols() != hamiltonian.cols())
      throw InvalidInput("heisenberg_evolve: channel " + std::to_string(j) + " has the wrong shape");
    if (!all_finite(a)) throw InvalidInput("heisenberg_evolve: non-finite channel " + std::to_string(j));
    hermitian[j] = is_hermitian(a, 1e-12);
    if (!hermitian[j] && !allow_non_hermitian[j])
      throw InvalidInput("heisenberg_evolve: channel " + std::to_string(j) + " is not Hermitian");
  }
  return HeisenbergFamily(hamiltonian, std::move(operators), grid, std::move(hermitian));
}

namespace {

struct Level {
  double energy;
  CMatrix projector;
};

std::vector<Level> cluster_levels(const CMatrix& hamiltonian, double& tolerance) {
  const auto eig = hermitian_eigen(hamiltonian);
  const Eigen::Index dim = eig.values.size();
  const double range = eig.values(dim - 1) - eig.values(0);
  const double scale = std::max({range, eig.values.cwiseAbs().maxCoeff(), 1.0});
  tolerance = 1e-9 * scale;

  std::vector<Level> levels;
  Eigen::Index start = 0;
  for (Eigen::Index i = 1; i <= dim; ++i) {
    if (i < dim) {
      const double gap = eig.values(i) - eig.values(i - 1);
      if (gap > tolerance && gap <= 100.0 * tolerance)
        throw NumericalRefusal("bohr_decomposition: cannot resolve near-degenerate levels, gap " +
                               std::to_string(gap) + " vs clustering tolerance " + std::to_string(tolerance));
      if (gap <= tolerance) continue;
    }
    const CMatrix v = eig.vectors.middleCols(start, i - start);
    levels.push_back({eig.values.segment(start, i - start).mean(), v * v.adjoint()});
    start = i;
  }
  return levels;
}

}  // namespace

std::vector<BohrComponent> bohr_decomposition(const CMatrix& hamiltonian, const CMatrix& op) {
  if (!is_hermitian(hamiltonian, 1e-12)) throw InvalidInput("bohr_decomposition: Hamiltonian is not Hermitian");
  if (op.rows() != hamiltonian.rows() || op.cols() != hamiltonian.cols())
    throw InvalidInput("bohr_decomposition: operator shape mismatch");
  double tol = 0.0;
  const auto levels = cluster_levels(hamiltonian, tol);

  std::vector<BohrComponent> out;
  for (const auto& a : levels)
    for (const auto& b : levels) {
      const CMatrix piece = a.projector * op * b.projector;
      if (max_abs(piece) == 0.0) continue;
      const double w = b.energy - a.energy;
      auto hit = std::find_if(out.begin(), out.end(),
                              [&](const BohrComponent& c) { return std::abs(c.frequency - w) <= tol; });
      if (hit == out.end())
        out.push_back({w, piece});
      else
        hit->op += piece;
    }
  std::erase_if(out, [](const BohrComponent& c) { return max_abs(c.op) <= 1e-14; });
  if (out.empty()) out.push_back({0.0, CMatrix::Zero(op.rows(), op.cols())});
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.frequency < y.frequency; });
  return out;
}

double trace_distance(const CMatrix& a, const CMatrix& b) {
  const CMatrix diff = a - b;
  const auto eig = hermitian_eigen(0.5 * (diff + diff.adjoint()));
  return 0.5 * eig.values.cwiseAbs().sum();
}

namespace ops {

CMatrix sigma_x() {
  CMatrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

CMatrix sigma_y() {
  CMatrix m(2, 2);
  m << 0, -kI, kI, 0;
  return m;
}

CMatrix sigma_z() {
  CMatrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

CMatrix sigma_plus() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = 1.0;
  return m;
}

CMatrix sigma_minus() { return sigma_plus().transpose(); }

CMatrix number(Eigen::Index dim) {
  CMatrix m = CMatrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) m(i, i) = static_cast<double>(i);
  return m;
}

CMatrix position_trunc(Eigen::Index n) {
  if (n < 1) throw InvalidInput("position_trunc: need at least one level");
  CMatrix m = CMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double amp = std::sqrt(static_cast<double>(i + 1) / 2.0);
    m(i, i + 1) = amp;
    m(i + 1, i) = amp;
  }
  return m;
}

CMatrix named(std::string_view name, Eigen::Index dim) {
  if (name == "sigma_x") return sigma_x();
  if (name == "sigma_y") return sigma_y();
  if (name == "sigma_z") return sigma_z();
  if (name == "sigma_plus") return sigma_plus();
  if (name == "sigma_minus") return sigma_minus();
  if (name == "identity") return identity(dim);
  if (name == "number") return number(dim);
  constexpr std::string_view prefix = "position_trunc(";
  if (name.starts_with(prefix) && name.ends_with(")")) {
    const auto digits = name.substr(prefix.size(), name.size() - prefix.size() - 1);
    long n = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || n < 1)
      throw InvalidInput("bad level count in '" + std::string(name) + "'");
    return position_trunc(n);
  }
  throw InvalidInput("unknown operator preset '" + std::string(name) + "'");
}

}  // namespace ops

}  // namespace nmg
