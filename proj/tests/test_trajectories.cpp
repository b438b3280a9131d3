#include <gtest/gtest.h>

#include "nmg/engines.hpp"
#include "nmg/trajectories.hpp"

using namespace nmg;

namespace {

CMatrix plus_state() { return CMatrix::Constant(2, 1, std::sqrt(0.5)); }

NoiseSample constant_noise(std::size_t points, Complex c) {
  return NoiseSample{0, CMatrix::Constant(1, static_cast<Eigen::Index>(points), c)};
}

// Direct evaluation of exp(-i sum a phi w - sum_{n>=m} [D - S] a a w w (1/2 on n = m)) for sigma_z eigenvalues.
Complex commuting_amplitude(const DiscretizedKernels& k, const NoiseSample& noise, double a, std::size_t upto) {
  const double dt = k.grid.dt();
  auto w = [&](std::size_t m) { return upto == 0 ? 0.0 : ((m == 0 || m == upto) ? 0.5 * dt : dt); };
  Complex drive = 0.0, counter = 0.0;
  for (std::size_t n = 0; n <= upto; ++n) {
    drive += w(n) * a * noise(0, n);
    for (std::size_t m = 0; m <= n; ++m)
      counter += (n == m ? 0.5 : 1.0) * w(n) * w(m) * (k.d(n, 0, m, 0) - k.s(n, 0, m, 0)) * a * a;
  }
  return std::exp(-kI * drive - counter);
}

}  // namespace

TEST(Unitary, ZeroNoiseIsIdentity) {
  const TimeGrid grid(0.1, 10);
  const auto fam = heisenberg_evolve(0.5 * ops::sigma_z(), {ops::sigma_x()}, grid);
  // In the interaction picture nothing moves without noise.
  const auto path = propagate_unitary(fam, constant_noise(grid.size(), 0.0), plus_state());
  for (const auto& psi : path) EXPECT_LT(max_abs(CMatrix(psi - plus_state())), 1e-14);
}

TEST(Unitary, ConstantNoiseClosedForm) {
  const TimeGrid grid(0.01, 100);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const double c = 0.7;
  const auto path = propagate_unitary(fam, constant_noise(grid.size(), c), plus_state());
  for (std::size_t n = 0; n < grid.size(); n += 10) {
    const CMatrix expected = matrix_exponential(ops::sigma_z(), -kI * c * grid.time(n)) * plus_state();
    EXPECT_LT(max_abs(CMatrix(path[n] - expected)), 1e-12);
  }
}

TEST(Unitary, NormPreservedOnRandomNoise) {
  const TimeGrid grid(0.02, 100);
  const auto fam = heisenberg_evolve(0.5 * ops::sigma_z(), {ops::sigma_x()}, grid);
  const NoiseModel model(discretize(ornstein_uhlenbeck(2.0, 1.0), SChoice::unitary(), grid));
  const auto path = propagate_unitary(fam, model.sample(3, 0), plus_state());
  for (const auto& psi : path) EXPECT_NEAR(psi.squaredNorm(), 1.0, 1e-10);
}

TEST(Unitary, RefusesComplexNoise) {
  const TimeGrid grid(0.1, 4);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  EXPECT_THROW(propagate_unitary(fam, constant_noise(grid.size(), Complex(0.0, 1.0)), plus_state()), InvalidInput);
}

TEST(Commuting, MatchesDirectExponent) {
  const TimeGrid grid(0.05, 40);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  for (const auto& s : {SChoice::qsd(), SChoice::collapse()}) {
    const auto k = discretize(ornstein_uhlenbeck(2.0, 1.0), s, grid);
    const auto noise = NoiseModel(k).sample(5, 2);
    const auto path = propagate_commuting(fam, k, noise, plus_state());
    for (std::size_t n = 0; n < grid.size(); ++n) {
      EXPECT_LT(std::abs(path[n](0, 0) - std::sqrt(0.5) * commuting_amplitude(k, noise, 1.0, n)), 1e-12);
      EXPECT_LT(std::abs(path[n](1, 0) - std::sqrt(0.5) * commuting_amplitude(k, noise, -1.0, n)), 1e-12);
    }
  }
}

TEST(Commuting, UnitaryChoiceMatchesUnitaryPropagator) {
  const TimeGrid grid(0.05, 40);
  const CMatrix h = 0.5 * ops::sigma_z();
  const auto fam = heisenberg_evolve(h, {ops::sigma_z()}, grid);
  const auto k = discretize(ornstein_uhlenbeck(2.0, 1.0), SChoice::unitary(), grid);
  const auto noise = NoiseModel(k).sample(8, 1);
  const auto a = propagate_commuting(fam, k, noise, plus_state());
  const auto b = propagate_unitary(fam, noise, plus_state());
  for (std::size_t n = 0; n < grid.size(); ++n) EXPECT_LT(max_abs(CMatrix(a[n] - b[n])), 1e-10);
}

TEST(Commuting, ZeroKernelIsFree) {
  const TimeGrid grid(0.1, 10);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const auto k = discretize(scaled(ornstein_uhlenbeck(2.0, 1.0), 0.0), SChoice::qsd(), grid);
  const auto path = propagate_commuting(fam, k, NoiseModel(k).sample(1, 0), plus_state());
  for (const auto& psi : path) EXPECT_LT(max_abs(CMatrix(psi - plus_state())), 1e-15);
}

TEST(Commuting, RefusesNonCommutingFamily) {
  const TimeGrid grid(0.1, 10);
  const auto fam = heisenberg_evolve(0.5 * ops::sigma_z(), {ops::sigma_x()}, grid);
  EXPECT_GT(family_commutator_defect(fam), 0.1);
  const auto k = discretize(ornstein_uhlenbeck(2.0, 1.0), SChoice::qsd(), grid);
  EXPECT_THROW(CommutingPropagator(fam, k), NumericalRefusal);
  const auto commuting = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  EXPECT_EQ(family_commutator_defect(commuting), 0.0);
}

TEST(Commuting, TwoChannelJointEigenbasis) {
  // Two diagonal channels in a rotated basis share one eigenbasis.
  const TimeGrid grid(0.1, 10);
  const CMatrix u = matrix_exponential(ops::sigma_y(), Complex(0.0, -0.4));
  const CMatrix a1 = u * ops::sigma_z() * u.adjoint();
  CMatrix diag2 = CMatrix::Zero(2, 2);
  diag2(0, 0) = 2.0;
  const CMatrix a2 = u * diag2 * u.adjoint();
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {a1, a2}, grid);
  PronySum sum{2, {{0, 0, 1.0, 1.0}, {1, 1, 0.5, 2.0}}};
  const auto k = discretize(KernelSpec{sum}, SChoice::qsd(), grid);
  const CommutingPropagator prop(fam, k);
  const CMatrix basis = prop.eigenbasis();
  EXPECT_LT(max_abs(CMatrix(basis.adjoint() * basis - identity(2))), 1e-12);
  for (const CMatrix& a : {a1, a2}) {
    const CMatrix rotated = basis.adjoint() * a * basis;
    EXPECT_LT(std::abs(rotated(0, 1)), 1e-10);
  }
}

TEST(Hierarchy, ZeroMemoryMatchesUnitary) {
  const TimeGrid grid(0.01, 100);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const auto k = discretize(ornstein_uhlenbeck(2.0, 1.0), SChoice::unitary(), grid);
  const auto noise = NoiseModel(k).sample(2, 0);
  const HierarchyPropagator hier(fam, PronySum{1, {}}, 3);
  const auto a = hier.propagate(noise, plus_state());
  const auto b = propagate_unitary(fam, noise, plus_state());
  for (std::size_t n = 0; n < grid.size(); ++n) EXPECT_LT(max_abs(CMatrix(a[n] - b[n])), 1e-8);
}

TEST(Hierarchy, CommutingInstanceAgreesWithExactPropagator) {
  const TimeGrid grid(0.01, 200);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const auto D = ornstein_uhlenbeck(2.0, 1.0);
  const auto k = discretize(D, SChoice::qsd(), grid);
  const HierarchyPropagator hier(fam, memory_kernel(D, SChoice::qsd()), 4);
  const CommutingPropagator comm(fam, k);
  const NoiseModel model(k);
  Complex ch = 0.0, cc = 0.0;
  const int count = 300;
  for (int i = 0; i < count; ++i) {
    const auto noise = model.sample(4, i);
    const auto a = hier.propagate(noise, plus_state()), b = comm.propagate(noise, plus_state());
    ch += a.back()(0, 0) * std::conj(a.back()(1, 0));
    cc += b.back()(0, 0) * std::conj(b.back()(1, 0));
  }
  EXPECT_LT(std::abs(ch - cc) / std::abs(cc), 0.01);
}

TEST(Hierarchy, IndexCountAndCap) {
  const TimeGrid grid(0.1, 5);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  PronySum two{1, {{0, 0, 1.0, 1.0}, {0, 0, 0.5, Complex(2.0, 1.0)}}};
  const HierarchyPropagator h(fam, two, 3);
  EXPECT_EQ(h.index_count(), 10u);  // binom(2 + 3, 3)
  EXPECT_THROW(HierarchyPropagator(fam, two, 3, 5), NumericalRefusal);
}

TEST(NonHermitian, Decomposition) {
  const auto nh = make_nonhermitian_channels(ops::sigma_minus());
  EXPECT_LT(max_abs(CMatrix(nh.a1 - 0.5 * ops::sigma_x())), 1e-15);
  EXPECT_LT(max_abs(CMatrix(nh.a2 + 0.5 * ops::sigma_y())), 1e-15);
  const auto herm = make_nonhermitian_channels(ops::sigma_x());
  EXPECT_EQ(max_abs(herm.a2), 0.0);
}

TEST(NonHermitian, KernelPositivityFollowsScalar) {
  const auto nh = make_nonhermitian_channels(ops::sigma_minus());
  const TimeGrid grid(0.1, 10);
  EXPECT_NO_THROW(discretize(nh.kernel(ornstein_uhlenbeck(2.0, 1.0)), SChoice::qsd(), grid));
  PronySum negative{1, {{0, 0, -1.0, 1.0}}};
  EXPECT_THROW(discretize(nh.kernel(KernelSpec{negative}), SChoice::qsd(), grid), NumericalRefusal);
  const CMatrix r = nh.rates(1.0);
  EXPECT_NEAR(std::abs(r(0, 1) - kI), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(r(1, 0) + kI), 0.0, 1e-15);
}

TEST(MarkovSse, ZeroKernelIsIdentity) {
  const TimeGrid grid(0.01, 20);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  auto zero = [](double) { return CMatrix::Zero(1, 1); };
  const auto path = propagate_markovian_sse(fam, zero, zero, constant_noise(grid.size(), 0.0), plus_state());
  for (const auto& psi : path) EXPECT_LT(max_abs(CMatrix(psi - plus_state())), 1e-15);
}

TEST(MarkovSse, RealNoiseIsUnitary) {
  const TimeGrid grid(0.01, 100);
  const auto fam = heisenberg_evolve(0.5 * ops::sigma_z(), {ops::sigma_x()}, grid);
  auto rate = [](double) { return CMatrix::Constant(1, 1, 0.5); };
  const WhiteNoiseModel model(rate, rate, grid, 1);
  const auto path = propagate_markovian_sse(fam, rate, rate, model.sample(1, 0), plus_state());
  for (const auto& psi : path) EXPECT_NEAR(psi.squaredNorm(), 1.0, 1e-10);
}

TEST(Engines, FactoryContracts) {
  const TimeGrid grid(0.1, 10);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  TrajectoryConfig cfg;
  cfg.engine = EngineKind::Unitary;
  EXPECT_THROW(make_engine(fam, ornstein_uhlenbeck(2.0, 1.0), cfg), InvalidInput);
  cfg.s_choice = SChoice::unitary();
  EXPECT_NO_THROW(make_engine(fam, ornstein_uhlenbeck(2.0, 1.0), cfg));
  cfg.engine = EngineKind::MarkovSse;
  EXPECT_THROW(make_engine(fam, ornstein_uhlenbeck(2.0, 1.0), cfg), InvalidInput);
  cfg.engine = EngineKind::Commuting;
  TimeLocal tl{1, [](double) { return CMatrix::Constant(1, 1, 1.0); }};
  EXPECT_THROW(make_engine(fam, KernelSpec{tl}, cfg), InvalidInput);
  EXPECT_EQ(parse_engine_kind("hierarchy"), EngineKind::Hierarchy);
  EXPECT_EQ(to_string(EngineKind::MarkovSse), "markov_sse");
  EXPECT_THROW(parse_engine_kind("warp"), InvalidInput);
}

TEST(Engines, SimulateStoresNorms) {
  const TimeGrid grid(0.1, 10);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const auto engine = make_engine(fam, ornstein_uhlenbeck(2.0, 1.0), TrajectoryConfig{});
  const auto ens = simulate(*engine, plus_state(), 4, 9);
  ASSERT_EQ(ens.paths.size(), 4u);
  EXPECT_NEAR(ens.norms[2][5], ens.paths[2][5].squaredNorm(), 1e-15);
  const auto again = engine->run(9, 2, plus_state());
  EXPECT_EQ(max_abs(CMatrix(again[7] - ens.paths[2][7])), 0.0);
}
