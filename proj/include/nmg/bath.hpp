#pragma once

#include <functional>
#include <vector>

#include "nmg/core.hpp"
#include "nmg/engines.hpp"
#include "nmg/hilbert.hpp"
#include "nmg/kernels.hpp"

namespace nmg {

/// One bosonic mode b with frequency omega coupling to channel j through
/// kappa_j sqrt(weight): Phi_j gets kappa_j sqrt(weight) b + h.c.
struct BathMode {
  double omega = 0.0;
  double weight = 0.0;  ///< quadrature weight (delta omega)
  CVector kappa;        ///< per channel, sum over modes at one frequency of kappa kappa^dag = D~(omega) / 2pi
};

/// Finite bath in the vacuum state. The Fock space is truncated by the total
/// excitation number across all modes.
struct BathSpec {
  std::size_t channels = 1;
  std::vector<BathMode> modes;
  std::size_t excitation_cap = 2;
  std::size_t dimension_cap = 4096;  ///< joint system x bath dimension
};

/// Uniform frequency grid on [omega_min, omega_max] with trapezoid weights.
/// Each frequency contributes one mode per nonzero eigenvalue of D~(omega).
BathSpec modes_from_spectrum(const std::function<CMatrix(double)>& spectrum, std::size_t channels,
                             std::size_t n_frequencies, double omega_min, double omega_max);

/// The bath's own correlation sum_i kappa kappa^dag e^{-i omega_i lag} weight_i,
/// tabulated at lags 0, dt, ..., n_steps dt.
Tabulated bath_kernel(const BathSpec& bath, const TimeGrid& grid);

struct CorrelationReport {
  double max_deviation = 0.0;
  double max_target = 0.0;
  double worst_lag = 0.0;
};

CorrelationReport verify_correlation(const BathSpec& bath, const TimeGrid& grid,
                                     const std::function<CMatrix(double)>& target);

/// Size of the truncated Fock space (without the system factor).
std::size_t fock_dimension(std::size_t modes, std::size_t excitation_cap);

enum class Picture { Schroedinger, Interaction };

/// Joint unitary evolution under H_S + sum_i omega_i b_i^dag b_i + sum_j A^j (x) Phi_j
/// from rho0 (x) vacuum, with the bath traced out on every grid point.
/// Time stepping uses a Taylor series of the propagator truncated once the
/// term norm falls below 1e-15; joint norm drift above 1e-8 is a refusal.
DensitySeries evolve_joint(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels, const BathSpec& bath,
                           const CMatrix& rho0, const TimeGrid& grid, Picture picture = Picture::Interaction);

struct CutoffReport {
  std::vector<std::size_t> caps;
  std::vector<double> changes;  ///< max entry change against the previous cap, over all times
  std::size_t converged_cap = 0;
  bool converged = false;
  DensitySeries series;  ///< result at the converged (or last) cap
};

/// Raises the excitation cap one at a time from first_cap until the reduced
/// densities change by less than tolerance or the dimension cap is reached.
CutoffReport converge_cutoff(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels, BathSpec bath,
                             const CMatrix& rho0, const TimeGrid& grid, std::size_t first_cap = 1,
                             double tolerance = 1e-4, Picture picture = Picture::Interaction);

/// 2 c^2 lambda / (lambda^2 + (omega - center)^2): kernel c^2 e^{-lambda |lag| - i center lag}.
std::function<CMatrix(double)> lorentzian_spectrum(double strength, double lambda, double center);

}  // namespace nmg
