#include "nmg/bath.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/SparseCore>

namespace nmg {

namespace {

using SparseC = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

/// Occupation tuples with total excitation <= cap, vacuum first.
std::vector<std::vector<std::uint8_t>> fock_basis(std::size_t modes, std::size_t cap) {
  std::vector<std::vector<std::uint8_t>> basis;
  std::vector<std::uint8_t> n(modes, 0);
  // Depth-first enumeration in lexicographic order.
  auto recurse = [&](auto&& self, std::size_t i, std::size_t remaining) -> void {
    if (i == modes) {
      basis.push_back(n);
      return;
    }
    for (std::size_t k = 0; k <= remaining; ++k) {
      n[i] = static_cast<std::uint8_t>(k);
      self(self, i + 1, remaining - k);
    }
    n[i] = 0;
  };
  recurse(recurse, 0, cap);
  return basis;
}

struct JointOperators {
  Eigen::Index bath_dim = 0;
  RVector bath_energy;
  std::vector<SparseC> phi_transposed;  ///< Phi_j^T
  double norm_bound = 0.0;
};

JointOperators build_bath(const BathSpec& bath, const std::vector<CMatrix>& channels) {
  const std::size_t M = bath.modes.size();
  const auto basis = fock_basis(M, bath.excitation_cap);
  std::map<std::vector<std::uint8_t>, Eigen::Index> index;
  for (std::size_t b = 0; b < basis.size(); ++b) index.emplace(basis[b], static_cast<Eigen::Index>(b));

  JointOperators out;
  out.bath_dim = static_cast<Eigen::Index>(basis.size());
  out.bath_energy = RVector::Zero(out.bath_dim);
  double max_omega = 0.0;
  for (std::size_t b = 0; b < basis.size(); ++b)
    for (std::size_t i = 0; i < M; ++i) out.bath_energy(static_cast<Eigen::Index>(b)) += basis[b][i] * bath.modes[i].omega;
  for (const auto& m : bath.modes) max_omega = std::max(max_omega, std::abs(m.omega));
  out.norm_bound = static_cast<double>(bath.excitation_cap) * max_omega;

  for (std::size_t j = 0; j < bath.channels; ++j) {
    std::vector<Eigen::Triplet<Complex>> triplets;
    double coupling_norm = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const Complex c = bath.modes[i].kappa(static_cast<Eigen::Index>(j)) * std::sqrt(bath.modes[i].weight);
      coupling_norm += std::norm(c);
      if (c == Complex(0.0)) continue;
      for (std::size_t b = 0; b < basis.size(); ++b) {
        if (basis[b][i] == 0) continue;
        auto lower = basis[b];
        --lower[i];
        const Eigen::Index row = index.at(lower), col = static_cast<Eigen::Index>(b);
        const double amp = std::sqrt(static_cast<double>(basis[b][i]));
        // b gives Phi(row, col) = c sqrt(n), b^dag gives Phi(col, row); stored transposed.
        triplets.emplace_back(col, row, c * amp);
        triplets.emplace_back(row, col, std::conj(c) * amp);
      }
    }
    SparseC phi_t(out.bath_dim, out.bath_dim);
    phi_t.setFromTriplets(triplets.begin(), triplets.end());
    out.phi_transposed.push_back(std::move(phi_t));
    const double op_norm = hermitian_eigen(channels[j].adjoint() * channels[j]).values.maxCoeff();
    out.norm_bound += std::sqrt(std::max(0.0, op_norm)) * 2.0 *
                      std::sqrt(coupling_norm * static_cast<double>(std::max<std::size_t>(1, bath.excitation_cap)));
  }
  return out;
}

}  // namespace

std::function<CMatrix(double)> lorentzian_spectrum(double strength, double lambda, double center) {
  if (!(lambda > 0.0)) throw InvalidInput("Lorentzian width must be positive");
  return [=](double w) {
    return CMatrix::Constant(1, 1, 2.0 * strength * strength * lambda / (lambda * lambda + (w - center) * (w - center)));
  };
}

BathSpec modes_from_spectrum(const std::function<CMatrix(double)>& spectrum, std::size_t channels,
                             std::size_t n_frequencies, double omega_min, double omega_max) {
  if (n_frequencies < 2 || !(omega_max > omega_min))
    throw InvalidInput("bath frequency grid needs at least two points on a nonempty range");
  BathSpec bath;
  bath.channels = channels;
  const double step = (omega_max - omega_min) / static_cast<double>(n_frequencies - 1);
  for (std::size_t i = 0; i < n_frequencies; ++i) {
    const double w = omega_min + step * static_cast<double>(i);
    const double weight = (i == 0 || i + 1 == n_frequencies) ? 0.5 * step : step;
    const CMatrix value = spectrum(w);
    const auto J = static_cast<Eigen::Index>(channels);
    if (value.rows() != J || value.cols() != J) throw InvalidInput("spectrum matrix size does not match channels");
    if (!is_hermitian(value, 1e-10)) throw InvalidInput("spectrum is not Hermitian at omega=" + std::to_string(w));
    const auto eig = hermitian_eigen(0.5 * (value + value.adjoint()));
    const double scale = std::max(1e-300, eig.values.cwiseAbs().maxCoeff());
    if (eig.values(0) < -1e-10 * scale) {
      std::ostringstream msg;
      msg << "spectrum is not positive semidefinite at omega=" << w << " (min eigenvalue " << eig.values(0) << ")";
      throw InvalidInput(msg.str());
    }
    for (Eigen::Index k = 0; k < J; ++k) {
      if (eig.values(k) <= 1e-14 * scale || eig.values(k) <= 0.0) continue;
      bath.modes.push_back({w, weight, CVector(std::sqrt(eig.values(k) / (2.0 * std::numbers::pi)) * eig.vectors.col(k))});
    }
  }
  return bath;
}

Tabulated bath_kernel(const BathSpec& bath, const TimeGrid& grid) {
  const auto J = static_cast<Eigen::Index>(bath.channels);
  std::vector<CMatrix> lags;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double lag = grid.time(n);
    CMatrix v = CMatrix::Zero(J, J);
    for (const auto& m : bath.modes) v += m.weight * std::exp(-kI * m.omega * lag) * (m.kappa * m.kappa.adjoint());
    lags.push_back(std::move(v));
  }
  return Tabulated::stationary(bath.channels, grid.dt(), std::move(lags));
}

CorrelationReport verify_correlation(const BathSpec& bath, const TimeGrid& grid,
                                     const std::function<CMatrix(double)>& target) {
  const Tabulated tab = bath_kernel(bath, grid);
  CorrelationReport r;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const CMatrix t = target(grid.time(n));
    const double dev = max_abs(CMatrix(tab.lags[n] - t));
    r.max_target = std::max(r.max_target, max_abs(t));
    if (dev > r.max_deviation) {
      r.max_deviation = dev;
      r.worst_lag = grid.time(n);
    }
  }
  return r;
}

std::size_t fock_dimension(std::size_t modes, std::size_t excitation_cap) {
  // binom(modes + cap, cap)
  double count = 1.0;
  for (std::size_t i = 1; i <= excitation_cap; ++i)
    count = count * static_cast<double>(modes + i) / static_cast<double>(i);
  return static_cast<std::size_t>(std::llround(count));
}

DensitySeries evolve_joint(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels, const BathSpec& bath,
                           const CMatrix& rho0, const TimeGrid& grid, Picture picture) {
  const Eigen::Index d = hamiltonian.rows();
  if (hamiltonian.cols() != d || !is_hermitian(hamiltonian)) throw InvalidInput("system Hamiltonian must be Hermitian");
  if (channels.size() != bath.channels) throw InvalidInput("bath channel count does not match the coupling operators");
  for (const auto& a : channels)
    if (a.rows() != d || a.cols() != d || !is_hermitian(a))
      throw InvalidInput("bath coupling operators must be Hermitian and match the system dimension");
  for (const auto& m : bath.modes)
    if (m.kappa.size() != static_cast<Eigen::Index>(bath.channels)) throw InvalidInput("mode coupling has wrong length");
  const std::size_t joint = static_cast<std::size_t>(d) * fock_dimension(bath.modes.size(), bath.excitation_cap);
  if (joint > bath.dimension_cap)
    throw NumericalRefusal("joint dimension " + std::to_string(joint) + " exceeds the cap of " +
                           std::to_string(bath.dimension_cap));
  if (std::abs(rho0.trace() - 1.0) > 1e-12 || !is_hermitian(rho0))
    throw InvalidInput("initial density matrix must be Hermitian with unit trace");

  const JointOperators ops = build_bath(bath, channels);
  const double h_norm = ops.norm_bound + hermitian_eigen(hamiltonian).values.cwiseAbs().maxCoeff();
  const auto sub = static_cast<std::size_t>(std::max(1.0, std::ceil(grid.dt() * h_norm / 0.5)));
  const double h = grid.dt() / static_cast<double>(sub);

  auto apply_h = [&](const CMatrix& psi) {
    CMatrix out = hamiltonian * psi + psi * ops.bath_energy.asDiagonal();
    for (std::size_t j = 0; j < channels.size(); ++j) out += channels[j] * (psi * ops.phi_transposed[j]);
    return out;
  };

  const CMatrix components = pure_decomposition(rho0);
  std::vector<CMatrix> states;
  std::vector<double> initial_norms;
  for (Eigen::Index c = 0; c < components.cols(); ++c) {
    CMatrix psi = CMatrix::Zero(d, ops.bath_dim);
    psi.col(0) = components.col(c);
    initial_norms.push_back(psi.squaredNorm());
    states.push_back(std::move(psi));
  }

  DensitySeries out{grid, {}, {}, {}, {}, 0, {}};
  auto record = [&](std::size_t n) {
    CMatrix rho = CMatrix::Zero(d, d);
    for (const auto& psi : states) rho += psi * psi.adjoint();
    if (picture == Picture::Interaction && n > 0) {
      const CMatrix U = matrix_exponential(hamiltonian, -kI * grid.time(n));
      rho = U.adjoint() * rho * U;
    }
    out.rho.push_back(n == 0 ? rho0 : rho);
    out.se_re.push_back(RMatrix::Zero(d, d));
    out.se_im.push_back(RMatrix::Zero(d, d));
    out.trace_se.push_back(0.0);
  };

  record(0);
  for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
    for (auto& psi : states)
      for (std::size_t s = 0; s < sub; ++s) {
        CMatrix term = psi;
        CMatrix next = psi;
        const double scale = psi.norm();
        for (int k = 1; k < 200; ++k) {
          term = apply_h(term) * (-kI * h / static_cast<double>(k));
          next += term;
          if (term.norm() <= 1e-15 * scale) break;
        }
        psi = std::move(next);
      }
    for (std::size_t c = 0; c < states.size(); ++c) {
      const double drift = std::abs(states[c].squaredNorm() - initial_norms[c]);
      if (drift > 1e-8) {
        std::ostringstream msg;
        msg << "joint norm drift " << drift << " at t=" << grid.time(n + 1) << " exceeds 1e-8; reduce the step";
        throw NumericalRefusal(msg.str());
      }
    }
    record(n + 1);
  }
  return out;
}

CutoffReport converge_cutoff(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels, BathSpec bath,
                             const CMatrix& rho0, const TimeGrid& grid, std::size_t first_cap, double tolerance,
                             Picture picture) {
  CutoffReport r;
  const Eigen::Index d = hamiltonian.rows();
  bool have_previous = false;
  for (std::size_t cap = std::max<std::size_t>(1, first_cap);; ++cap) {
    const std::size_t joint = static_cast<std::size_t>(d) * fock_dimension(bath.modes.size(), cap);
    if (joint > bath.dimension_cap) break;
    bath.excitation_cap = cap;
    DensitySeries s = evolve_joint(hamiltonian, channels, bath, rho0, grid, picture);
    r.caps.push_back(cap);
    if (have_previous) {
      double change = 0.0;
      for (std::size_t n = 0; n < s.rho.size(); ++n) change = std::max(change, max_abs(CMatrix(s.rho[n] - r.series.rho[n])));
      r.changes.push_back(change);
      r.series = std::move(s);
      if (change < tolerance) {
        r.converged = true;
        r.converged_cap = cap;
        return r;
      }
    } else {
      r.series = std::move(s);
      have_previous = true;
    }
    r.converged_cap = cap;
  }
  if (r.caps.empty()) throw NumericalRefusal("even the first excitation cap exceeds the joint dimension cap");
  return r;
}

}  // namespace nmg
