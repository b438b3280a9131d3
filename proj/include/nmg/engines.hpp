#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "nmg/core.hpp"
#include "nmg/hilbert.hpp"
#include "nmg/kernels.hpp"
#include "nmg/trajectories.hpp"

namespace nmg {

/// rho(t_n) with per-entry standard errors. Deterministic solvers leave the
/// errors at zero and n_trajectories at 0.
struct DensitySeries {
  TimeGrid grid;
  std::vector<CMatrix> rho;
  std::vector<RMatrix> se_re;
  std::vector<RMatrix> se_im;
  std::vector<double> trace_se;  ///< standard error of Tr rho(t_n)
  std::size_t n_trajectories = 0;
  std::vector<std::string> warnings;

  Eigen::Index dim() const { return rho.empty() ? 0 : rho.front().rows(); }
};

/// Columns sqrt(p_a) |psi_a> of the eigendecomposition of a density matrix,
/// dropping components with p_a <= 1e-14. rho0 = X X^dagger.
CMatrix pure_decomposition(const CMatrix& rho0);

struct EnsembleOptions {
  std::size_t chunk = 64;   ///< trajectories per work unit; fixes the summation order, so results are bitwise stable for a given chunk size
  unsigned threads = 0;     ///< 0 = hardware concurrency
};

/// Streams trajectories through the engine and averages Psi Psi^dagger,
/// never holding the ensemble in memory. Work is split in fixed chunks that
/// are merged in chunk order, so the result is independent of thread count.
DensitySeries estimate_density(const TrajectoryEngine& engine, const CMatrix& rho0, std::size_t n_trajectories,
                               std::uint64_t master_seed, const EnsembleOptions& options = {});

/// Density series of a stored ensemble whose initial columns came from
/// pure_decomposition. rho(0) is rebuilt from the shared initial state.
DensitySeries mc_density(const TrajectoryEnsemble& ensemble);

/// Choi matrices C(t_n) = sum_ab |a><b| (x) E[G|a><b|G^dagger] with index a*d + i
/// (input first).
struct ChoiSeries {
  TimeGrid grid;
  std::vector<CMatrix> choi;
  std::vector<RMatrix> se_re;
  std::vector<RMatrix> se_im;
  std::vector<RMatrix> tp_se;  ///< combined re/im standard error of each partial-trace entry
  std::vector<double> min_eigenvalue;
  std::vector<double> min_eigenvalue_se;
  std::size_t n_trajectories = 0;

  Eigen::Index dim() const { return choi.empty() ? 0 : static_cast<Eigen::Index>(std::lround(std::sqrt(choi.front().rows()))); }
};

/// Propagates the identity under shared noise. A second deterministic pass
/// over the same trajectories gives the standard error of the smallest
/// eigenvalue along its mean eigenvector. Refuses fewer than 100 trajectories.
ChoiSeries mc_choi(const TrajectoryEngine& engine, std::size_t n_trajectories, std::uint64_t master_seed,
                   const EnsembleOptions& options = {});

/// Output partial trace of a Choi matrix (a d x d matrix over the input index).
CMatrix choi_partial_trace(const CMatrix& choi, Eigen::Index d);

struct CpTpReport {
  std::vector<double> tp_max_z;      ///< max |Tr_out C - I| / se per time
  std::vector<double> tp_max_dev;
  std::vector<double> cp_z;          ///< min eigenvalue / se when below -1e-12, else 0
  std::vector<bool> tp_pass;
  std::vector<bool> cp_pass;
  bool pass = true;
};

/// Deviations pass when within tol_sigma standard errors plus an absolute
/// floor of 1e-12 for exact cases.
CpTpReport verify_cp_tp(const ChoiSeries& choi, double tol_sigma = 5.0);

/// Lindblad equation drho/dt = -i[H, rho] + sum_jk D_jk(t) (A^k rho A^j^dag - 1/2 {A^j^dag A^k, rho}).
struct LindbladSpec {
  CMatrix hamiltonian;
  std::vector<CMatrix> channels;
  std::function<CMatrix(double)> rates;

  static LindbladSpec constant(CMatrix hamiltonian, std::vector<CMatrix> channels, CMatrix rates);
};

/// Column-stacking vectorization, vec(X)[i + d*j] = X(i, j), so
/// vec(A X B) = (B^T (x) A) vec(X).
CVector vec(const CMatrix& m);
CMatrix unvec(const CVector& v, Eigen::Index d);

/// d^2 x d^2 generator at time t.
CMatrix lindblad_generator(const LindbladSpec& spec, double t = 0.0);

/// RK4 with enough substeps per grid step that h * ||L|| <= 0.005. A rate
/// matrix that is not PSD is reported as a warning.
DensitySeries integrate_lindblad(const LindbladSpec& spec, const CMatrix& rho0, const TimeGrid& grid);

/// Stationary secular generator: one channel per (j, Bohr frequency) pair,
/// rates D~_jk(omega) block-diagonal over frequency, Hamiltonian kept.
LindbladSpec rwa_generator(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels,
                           const std::function<CMatrix(double)>& spectrum);
/// Same, with the spectrum looked up on its sample points; a Bohr frequency
/// without a sample is an error listing every required frequency.
LindbladSpec rwa_generator(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels,
                           const StationarySpectrum& spectrum);

/// Rotates a Schroedinger-picture series into the interaction picture,
/// rho_I = U^dag rho U with U = exp(-iHt).
DensitySeries to_interaction_picture(const DensitySeries& series, const CMatrix& hamiltonian);

/// Exact noise average for a commuting family: for joint eigenvectors
/// alpha, beta the coherence is multiplied by
///   exp(X_ab - T_aa - conj(T_bb)),
/// where X_ab is the full double sum of a^alpha_j(m) a^beta_k(l) D_kj(l, m)
/// and T the time-ordered sum of D a a. S cancels exactly.
DensitySeries commuting_density(const HeisenbergFamily& family, const DiscretizedKernels& kernels,
                                const CMatrix& rho0);

struct MarkovSweepScenario {
  CMatrix hamiltonian;
  std::vector<CMatrix> channels;  ///< must commute
  CMatrix rho0;
  double gamma = 1.0;
  double final_time = 1.0;
  double dt = 1e-3;
};

struct MarkovSweepReport {
  std::vector<double> lambdas;
  std::vector<double> distances;  ///< trace distance to the Lindblad state at the final time
  std::vector<double> ratios;     ///< distances[i] / distances[i+1]
  bool monotone = false;
  bool pass = false;
};

/// Kernels D = (gamma lambda / 2) exp(-lambda |tau - s|) per channel against the
/// Lindblad solution with rate gamma. pass requires monotone decrease and
/// every ratio within [ratio_low, ratio_high]; an all-zero sweep passes.
MarkovSweepReport markov_limit_sweep(const MarkovSweepScenario& scenario, const std::vector<double>& lambdas,
                                     double ratio_low = 2.5, double ratio_high = 6.0);

/// JSON with complex numbers as [re, im]; CSV with one row per (time, i, j).
void write_density_json(std::ostream& os, const DensitySeries& series);
void write_density_csv(std::ostream& os, const DensitySeries& series);
void write_choi_json(std::ostream& os, const ChoiSeries& series);
void write_choi_csv(std::ostream& os, const ChoiSeries& series);

}  // namespace nmg
