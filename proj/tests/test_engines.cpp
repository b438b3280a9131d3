#include <gtest/gtest.h>

#include <sstream>

#include "nmg/engines.hpp"

using namespace nmg;

namespace {

CMatrix plus_density() { return CMatrix::Constant(2, 2, 0.5); }

CMatrix excited_density() {
  CMatrix rho = CMatrix::Zero(2, 2);
  rho(0, 0) = 1.0;
  return rho;
}

double ou_dephasing_factor(double gamma, double lambda, double t) {
  return std::exp(-2.0 * gamma * (t - (1.0 - std::exp(-lambda * t)) / lambda));
}

// Superoperator assembled column by column from the action on matrix units.
CMatrix superoperator(const std::function<CMatrix(const CMatrix&)>& map, Eigen::Index d) {
  CMatrix out(d * d, d * d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) {
      CMatrix unit = CMatrix::Zero(d, d);
      unit(i, j) = 1.0;
      out.col(i + d * j) = vec(map(unit));
    }
  return out;
}

CMatrix dissipator(const CMatrix& l, const CMatrix& rho) {
  return l * rho * l.adjoint() - 0.5 * (l.adjoint() * l * rho + rho * l.adjoint() * l);
}

std::unique_ptr<TrajectoryEngine> dephasing_engine(const TimeGrid& grid, SChoice s = SChoice::qsd()) {
  TrajectoryConfig cfg;
  cfg.s_choice = s;
  return make_engine(heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid), ornstein_uhlenbeck(2.0, 1.0),
                     cfg);
}

}  // namespace

TEST(PureDecomposition, Reconstructs) {
  CMatrix rho(2, 2);
  rho << 0.7, Complex(0.1, 0.2), Complex(0.1, -0.2), 0.3;
  const CMatrix x = pure_decomposition(rho);
  EXPECT_LT(max_abs(CMatrix(x * x.adjoint() - rho)), 1e-14);
  EXPECT_EQ(pure_decomposition(excited_density()).cols(), 1);
}

TEST(EstimateDensity, ZeroKernelKeepsInitialState) {
  const TimeGrid grid(0.1, 10);
  const auto engine = make_engine(heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid),
                                  scaled(ornstein_uhlenbeck(2.0, 1.0), 0.0), TrajectoryConfig{});
  const auto series = estimate_density(*engine, plus_density(), 50, 1);
  for (const auto& rho : series.rho) EXPECT_LT(max_abs(CMatrix(rho - plus_density())), 1e-14);
}

TEST(EstimateDensity, IndependentOfThreadCount) {
  const TimeGrid grid(0.02, 50);
  const auto engine = dephasing_engine(grid);
  EnsembleOptions a{16, 1}, b{16, 4};
  const auto x = estimate_density(*engine, plus_density(), 500, 3, a);
  const auto y = estimate_density(*engine, plus_density(), 500, 3, b);
  std::ostringstream sx, sy;
  write_density_csv(sx, x);
  write_density_csv(sy, y);
  EXPECT_EQ(sx.str(), sy.str());
}

TEST(EstimateDensity, DephasingMatchesClosedForm) {
  const TimeGrid grid(0.01, 200);
  const auto series = estimate_density(*dephasing_engine(grid), plus_density(), 2000, 21);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double expected = 0.5 * ou_dephasing_factor(2.0, 1.0, grid.time(n));
    EXPECT_LE(std::abs(series.rho[n](0, 1).real() - expected), 5.0 * series.se_re[n](0, 1) + 1e-12) << n;
    EXPECT_LE(std::abs(series.rho[n].trace() - 1.0), 5.0 * series.trace_se[n] + 1e-12);
  }
}

TEST(MonteCarloDensity, MatchesStreamingEstimate) {
  const TimeGrid grid(0.05, 20);
  const auto engine = dephasing_engine(grid);
  const auto ensemble = simulate(*engine, pure_decomposition(plus_density()), 200, 5);
  const auto a = mc_density(ensemble);
  const auto b = estimate_density(*engine, plus_density(), 200, 5);
  for (std::size_t n = 0; n < grid.size(); ++n) EXPECT_LT(max_abs(CMatrix(a.rho[n] - b.rho[n])), 1e-13);
}

TEST(CommutingDensity, ClosedFormAndTrace) {
  const TimeGrid grid(0.01, 200);
  const auto fam = heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid);
  const auto series = commuting_density(fam, discretize(ornstein_uhlenbeck(2.0, 1.0), SChoice::qsd(), grid),
                                        plus_density());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    EXPECT_NEAR(series.rho[n](0, 1).real(), 0.5 * ou_dephasing_factor(2.0, 1.0, grid.time(n)), 1e-5);
    EXPECT_NEAR(std::abs(series.rho[n].trace() - 1.0), 0.0, 1e-14);
  }
  EXPECT_NEAR(ou_dephasing_factor(2.0, 1.0, 1.0), 0.229577, 1e-6);
}

TEST(Choi, InitialTimeIsMaximallyEntangled) {
  const TimeGrid grid(0.05, 10);
  const auto choi = mc_choi(*dephasing_engine(grid), 100, 1);
  CMatrix expected = CMatrix::Zero(4, 4);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) expected(a * 2 + a, b * 2 + b) = 1.0;
  EXPECT_LT(max_abs(CMatrix(choi.choi[0] - expected)), 1e-14);
  EXPECT_LT(max_abs(CMatrix(choi_partial_trace(expected, 2) - identity(2))), 1e-15);
  EXPECT_THROW(mc_choi(*dephasing_engine(grid), 99, 1), NumericalRefusal);
}

TEST(Choi, MarkovianDephasingPattern) {
  const double gamma = 0.5;
  const TimeGrid grid(0.01, 100);
  TrajectoryConfig cfg;
  cfg.engine = EngineKind::MarkovSse;
  TimeLocal rate{1, [gamma](double) { return CMatrix::Constant(1, 1, gamma); }};
  const auto engine =
      make_engine(heisenberg_evolve(CMatrix::Zero(2, 2), {ops::sigma_z()}, grid), KernelSpec{rate}, cfg);
  const auto choi = mc_choi(*engine, 4000, 12);
  for (std::size_t n = 0; n < grid.size(); n += 10) {
    const double c = std::exp(-2.0 * gamma * grid.time(n));
    CMatrix expected = CMatrix::Zero(4, 4);
    expected(0, 0) = expected(3, 3) = 1.0;
    expected(0, 3) = expected(3, 0) = c;
    for (Eigen::Index i = 0; i < 4; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) {
        EXPECT_LE(std::abs(choi.choi[n](i, j).real() - expected(i, j).real()), 5.0 * choi.se_re[n](i, j) + 1e-12);
        EXPECT_LE(std::abs(choi.choi[n](i, j).imag()), 5.0 * choi.se_im[n](i, j) + 1e-12);
      }
    // The analytic Choi matrix has eigenvalues d (1 +- c) / 2 and two zeros.
    const RVector ev = hermitian_eigen(expected).values;
    EXPECT_NEAR(ev(0), 0.0, 1e-14);
    EXPECT_NEAR(ev(2), 1.0 - c, 1e-14);
    EXPECT_NEAR(ev(3), 1.0 + c, 1e-14);
  }
  EXPECT_TRUE(verify_cp_tp(choi).pass);
}

TEST(VerifyCpTp, IdentityAndCorruption) {
  ChoiSeries s;
  s.grid = TimeGrid(0.1, 1);
  CMatrix id_choi = CMatrix::Zero(4, 4);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) id_choi(a * 2 + a, b * 2 + b) = 1.0;
  s.choi = {id_choi, id_choi};
  EXPECT_TRUE(verify_cp_tp(s).pass);

  const double se = 1e-3;
  s.tp_se = {RMatrix::Constant(2, 2, se), RMatrix::Constant(2, 2, se)};
  s.min_eigenvalue = {0.0, -10.0 * se};
  s.min_eigenvalue_se = {se, se};
  const auto rep = verify_cp_tp(s);
  EXPECT_FALSE(rep.pass);
  EXPECT_TRUE(rep.cp_pass[0]);
  EXPECT_FALSE(rep.cp_pass[1]);
  EXPECT_NEAR(rep.cp_z[1], -10.0, 1e-12);
}

TEST(Lindblad, DephasingDecay) {
  const double gamma = 0.3;
  const TimeGrid grid(0.05, 40);
  const auto spec = LindbladSpec::constant(CMatrix::Zero(2, 2), {ops::sigma_z()}, CMatrix::Constant(1, 1, gamma));
  const auto series = integrate_lindblad(spec, plus_density(), grid);
  for (std::size_t n = 0; n < grid.size(); ++n)
    EXPECT_NEAR(series.rho[n](0, 1).real(), 0.5 * std::exp(-2.0 * gamma * grid.time(n)), 1e-10);
}

TEST(Lindblad, HamiltonianOnly) {
  const TimeGrid grid(0.05, 40);
  const CMatrix h = 0.5 * ops::sigma_x();
  const auto spec = LindbladSpec::constant(h, {ops::sigma_z()}, CMatrix::Zero(1, 1));
  const auto series = integrate_lindblad(spec, excited_density(), grid);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const CMatrix u = matrix_exponential(h, -kI * grid.time(n));
    EXPECT_LT(max_abs(CMatrix(series.rho[n] - u * excited_density() * u.adjoint())), 1e-10);
    EXPECT_NEAR((series.rho[n] * series.rho[n]).trace().real(), 1.0, 1e-10);
  }
}

TEST(Lindblad, AmplitudeDampingThroughHermitianChannels) {
  const double big_gamma = 0.8;
  const TimeGrid grid(0.05, 40);
  const auto nh = make_nonhermitian_channels(ops::sigma_minus());
  const auto spec = LindbladSpec::constant(CMatrix::Zero(2, 2), {nh.a1, nh.a2}, nh.rates(big_gamma));
  const CMatrix direct = superoperator([&](const CMatrix& r) { return CMatrix(big_gamma * dissipator(ops::sigma_minus(), r)); }, 2);
  EXPECT_LT(max_abs(CMatrix(lindblad_generator(spec) - direct)), 1e-14);
  const auto series = integrate_lindblad(spec, excited_density(), grid);
  for (std::size_t n = 0; n < grid.size(); ++n)
    EXPECT_NEAR(series.rho[n](0, 0).real(), std::exp(-big_gamma * grid.time(n)), 1e-10);
}

TEST(Lindblad, TracePreservingAndWarnings) {
  CMatrix rates(2, 2);
  rates << 0.5, Complex(0.1, 0.3), Complex(0.1, -0.3), 0.7;
  const auto spec = LindbladSpec::constant(0.3 * ops::sigma_z(), {ops::sigma_x(), ops::sigma_minus()}, rates);
  const CMatrix l = lindblad_generator(spec);
  CVector tr = CVector::Zero(4);
  tr(0) = tr(3) = 1.0;
  EXPECT_LT(max_abs(CMatrix(tr.transpose() * l)), 1e-12);
  EXPECT_TRUE(lindblad_generator(LindbladSpec::constant(CMatrix::Zero(2, 2), {ops::sigma_z()},
                                                        CMatrix::Zero(1, 1)))
                  .isZero(0.0));
  const auto bad = LindbladSpec::constant(CMatrix::Zero(2, 2), {ops::sigma_z()}, CMatrix::Constant(1, 1, -1.0));
  EXPECT_FALSE(integrate_lindblad(bad, plus_density(), TimeGrid(0.1, 2)).warnings.empty());
}

TEST(Rwa, ZeroHamiltonianMatchesLindblad) {
  CMatrix d0(2, 2);
  d0 << 0.4, Complex(0.05, 0.1), Complex(0.05, -0.1), 0.3;
  const std::vector<CMatrix> ch{ops::sigma_z(), ops::sigma_x()};
  const auto rwa = rwa_generator(CMatrix::Zero(2, 2), ch, [&](double) { return d0; });
  const auto direct = LindbladSpec::constant(CMatrix::Zero(2, 2), ch, d0);
  EXPECT_LT(max_abs(CMatrix(lindblad_generator(rwa) - lindblad_generator(direct))), 1e-12);
}

TEST(Rwa, QubitSigmaXChannels) {
  const double gp = 0.7, gm = 0.2;
  const CMatrix h = 0.5 * ops::sigma_z();
  auto spectrum = [&](double w) {
    return CMatrix::Constant(1, 1, std::abs(w - 1.0) < 1e-9 ? gp : (std::abs(w + 1.0) < 1e-9 ? gm : 0.0));
  };
  const CMatrix rwa = lindblad_generator(rwa_generator(h, {ops::sigma_x()}, spectrum));
  const CMatrix symbolic = superoperator(
      [&](const CMatrix& r) {
        return CMatrix(-kI * (h * r - r * h) + gp * dissipator(ops::sigma_minus(), r) +
                       gm * dissipator(ops::sigma_plus(), r));
      },
      2);
  EXPECT_LT(max_abs(CMatrix(rwa - symbolic)), 1e-10);
  const auto zero = rwa_generator(CMatrix::Zero(2, 2), {ops::sigma_x()}, [](double) { return CMatrix::Zero(1, 1); });
  EXPECT_LT(max_abs(lindblad_generator(zero)), 1e-300);
}

TEST(Rwa, SampledSpectrumNeedsBohrFrequencies) {
  StationarySpectrum spec;
  spec.omega = RVector::LinSpaced(3, -1.0, 1.0);
  spec.values = {CMatrix::Constant(1, 1, 0.2), CMatrix::Constant(1, 1, 0.1), CMatrix::Constant(1, 1, 0.7)};
  EXPECT_NO_THROW(rwa_generator(0.5 * ops::sigma_z(), {ops::sigma_x()}, spec));
  try {
    rwa_generator(0.6 * ops::sigma_z(), {ops::sigma_x()}, spec);
    FAIL() << "expected an error";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("1.2"), std::string::npos);
  }
}

TEST(InteractionPicture, UndoesHamiltonian) {
  const TimeGrid grid(0.1, 10);
  const CMatrix h = 0.5 * ops::sigma_z();
  const auto spec = LindbladSpec::constant(h, {ops::sigma_z()}, CMatrix::Zero(1, 1));
  const auto rotated = to_interaction_picture(integrate_lindblad(spec, plus_density(), grid), h);
  for (const auto& rho : rotated.rho) EXPECT_LT(max_abs(CMatrix(rho - plus_density())), 1e-10);
}

TEST(MarkovLimit, ConvergesAtOneOverLambda) {
  MarkovSweepScenario sc{CMatrix::Zero(2, 2), {ops::sigma_z()}, plus_density(), 1.0, 1.0, 1e-3};
  const auto rep = markov_limit_sweep(sc, {2.0, 8.0, 32.0});
  EXPECT_TRUE(rep.monotone);
  EXPECT_TRUE(rep.pass);
  ASSERT_EQ(rep.ratios.size(), 2u);
  for (double r : rep.ratios) {
    EXPECT_GE(r, 2.5);
    EXPECT_LE(r, 6.0);
  }
  // Exact oracle: 0.5 |exp(-2 (t - (1 - e^{-lambda t}) / lambda)) - e^{-2}|, up to O((lambda dt)^2) quadrature.
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = 0.5 * std::abs(ou_dephasing_factor(1.0, rep.lambdas[i], 1.0) - std::exp(-2.0));
    EXPECT_NEAR(rep.distances[i], exact, 0.01 * exact);
  }
  sc.gamma = 0.0;
  const auto zero = markov_limit_sweep(sc, {2.0, 8.0, 32.0});
  for (double d : zero.distances) EXPECT_EQ(d, 0.0);
  EXPECT_TRUE(zero.pass);
}

TEST(Output, DensityCsvAndJson) {
  const TimeGrid grid(0.5, 1);
  const auto spec = LindbladSpec::constant(CMatrix::Zero(2, 2), {ops::sigma_z()}, CMatrix::Constant(1, 1, 0.1));
  const auto series = integrate_lindblad(spec, plus_density(), grid);
  std::ostringstream csv, json;
  write_density_csv(csv, series);
  write_density_json(json, series);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "time_index,time,row,col,re,im,se_re,se_im");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 4);
  EXPECT_NE(json.str().find("density_series/1"), std::string::npos);
}
