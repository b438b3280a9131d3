#include <gtest/gtest.h>

#include "nmg/bath.hpp"

using namespace nmg;

namespace {

CMatrix plus_density() { return CMatrix::Constant(2, 2, 0.5); }

BathSpec single_mode(double omega, Complex kappa) {
  BathSpec bath;
  bath.modes.push_back({omega, 1.0, CVector::Constant(1, kappa)});
  return bath;
}

// Coherence factor of sigma_z dephasing by a discrete bath in the vacuum:
// exp(-2 sum_i w |kappa|^2 (2 - 2 cos(omega t)) / omega^2), with t^2 at omega = 0.
double bath_dephasing(const BathSpec& bath, double t) {
  double exponent = 0.0;
  for (const auto& m : bath.modes) {
    const double g = m.weight * m.kappa.squaredNorm();
    exponent += std::abs(m.omega) < 1e-12 ? g * t * t : g * (2.0 - 2.0 * std::cos(m.omega * t)) / (m.omega * m.omega);
  }
  return std::exp(-2.0 * exponent);
}

}  // namespace

TEST(BathModes, SingleModeKernel) {
  const auto bath = single_mode(1.5, Complex(0.3, 0.4));
  const TimeGrid grid(0.1, 20);
  const auto tab = bath_kernel(bath, grid);
  for (std::size_t n = 0; n < grid.size(); ++n)
    EXPECT_LT(std::abs(tab.lags[n](0, 0) - 0.25 * std::exp(-kI * 1.5 * grid.time(n))), 1e-14);
}

TEST(BathModes, ZeroSpectrumHasNoCoupling) {
  const auto bath = modes_from_spectrum([](double) { return CMatrix::Zero(1, 1); }, 1, 32, -8.0, 8.0);
  double total = 0.0;
  for (const auto& m : bath.modes) total += m.kappa.squaredNorm();
  EXPECT_EQ(total, 0.0);
}

TEST(BathModes, LorentzianQuadratureMatchesTailAnalysis) {
  const TimeGrid grid(0.05, 60);
  auto target = [](double lag) { return CMatrix::Constant(1, 1, std::exp(-std::abs(lag))); };
  const auto coarse = modes_from_spectrum(lorentzian_spectrum(1.0, 1.0, 0.0), 1, 32, -8.0, 8.0);
  const auto rep = verify_correlation(coarse, grid, target);
  // 32 modes on [-8, 8] lose the tail mass (2/pi)(pi/2 - atan 8) at zero lag.
  const double tail = 2.0 / M_PI * (M_PI / 2.0 - std::atan(8.0));
  EXPECT_NEAR(rep.max_deviation, tail, 0.01);
  EXPECT_GT(rep.max_deviation, 0.02);
  const auto wide = modes_from_spectrum(lorentzian_spectrum(1.0, 1.0, 0.0), 1, 2049, -128.0, 128.0);
  EXPECT_LT(verify_correlation(wide, grid, target).max_deviation, 0.02);
}

TEST(BathModes, RejectsNonPsdSpectrum) {
  EXPECT_THROW(modes_from_spectrum([](double) { return CMatrix::Constant(1, 1, -1.0); }, 1, 8, -1.0, 1.0),
               InvalidInput);
}

TEST(Fock, Dimension) {
  EXPECT_EQ(fock_dimension(32, 2), 561u);  // binom(34, 2)
  EXPECT_EQ(fock_dimension(3, 0), 1u);
  EXPECT_EQ(fock_dimension(4, 3), 35u);
}

TEST(EvolveJoint, ZeroCouplingIsSystemEvolution) {
  auto bath = single_mode(1.0, 0.0);
  const TimeGrid grid(0.1, 20);
  const CMatrix h = 0.5 * ops::sigma_x();
  CMatrix rho0 = CMatrix::Zero(2, 2);
  rho0(0, 0) = 1.0;
  const auto series = evolve_joint(h, {ops::sigma_z()}, bath, rho0, grid, Picture::Schroedinger);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const CMatrix u = matrix_exponential(h, -kI * grid.time(n));
    EXPECT_LT(max_abs(CMatrix(series.rho[n] - u * rho0 * u.adjoint())), 1e-10);
  }
}

TEST(EvolveJoint, DephasingClosedForm) {
  auto bath = modes_from_spectrum(lorentzian_spectrum(0.5, 1.0, 0.0), 1, 8, -4.0, 4.0);
  bath.excitation_cap = 6;
  bath.dimension_cap = 10000;
  const TimeGrid grid(0.05, 20);
  const auto series = evolve_joint(CMatrix::Zero(2, 2), {ops::sigma_z()}, bath, plus_density(), grid);
  for (std::size_t n = 0; n < grid.size(); ++n)
    EXPECT_NEAR(std::abs(series.rho[n](0, 1)), 0.5 * bath_dephasing(bath, grid.time(n)), 1e-6) << n;
}

TEST(EvolveJoint, ReducedStateIsPhysical) {
  auto bath = modes_from_spectrum(lorentzian_spectrum(0.3, 1.0, 1.0), 1, 12, -4.0, 4.0);
  bath.excitation_cap = 3;
  const TimeGrid grid(0.05, 20);
  CMatrix rho0(2, 2);
  rho0 << 0.8, 0.4, 0.4, 0.2;
  const auto series = evolve_joint(0.5 * ops::sigma_z(), {ops::sigma_x()}, bath, rho0, grid);
  for (const auto& rho : series.rho) {
    EXPECT_LT(hermiticity_defect(rho), 1e-12);
    EXPECT_NEAR(std::abs(rho.trace() - 1.0), 0.0, 1e-10);
    EXPECT_GE(hermitian_eigen(rho).values(0), -1e-10);
  }
}

TEST(EvolveJoint, DimensionCapRefusal) {
  auto bath = modes_from_spectrum(lorentzian_spectrum(0.3, 1.0, 0.0), 1, 32, -8.0, 8.0);
  bath.excitation_cap = 3;
  bath.dimension_cap = 1000;
  EXPECT_THROW(evolve_joint(CMatrix::Zero(2, 2), {ops::sigma_z()}, bath, plus_density(), TimeGrid(0.1, 2)),
               NumericalRefusal);
}

TEST(Cutoff, ConvergesOnWeakCoupling) {
  auto bath = modes_from_spectrum(lorentzian_spectrum(std::sqrt(0.1), 1.0, 1.0), 1, 12, -4.0, 4.0);
  const TimeGrid grid(0.05, 20);
  CMatrix rho0(2, 2);
  rho0 << 0.8, 0.4, 0.4, 0.2;
  const auto rep = converge_cutoff(0.5 * ops::sigma_z(), {ops::sigma_x()}, bath, rho0, grid, 1, 1e-4);
  EXPECT_TRUE(rep.converged);
  ASSERT_FALSE(rep.changes.empty());
  EXPECT_LT(rep.changes.back(), 1e-4);
  EXPECT_EQ(rep.caps.back(), rep.converged_cap);
}

TEST(Lorentzian, SpectrumShape) {
  const auto f = lorentzian_spectrum(2.0, 0.5, 1.0);
  EXPECT_NEAR(f(1.0)(0, 0).real(), 2.0 * 4.0 * 0.5 / 0.25, 1e-12);
  EXPECT_NEAR(f(1.5)(0, 0).real(), 2.0 * 4.0 * 0.5 / 0.5, 1e-12);
}
