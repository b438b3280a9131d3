#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "nmg/core.hpp"
#include "nmg/hilbert.hpp"
#include "nmg/kernels.hpp"
#include "nmg/noise.hpp"

namespace nmg {

/// Unnormalized states on every grid point. Each entry is d x c: the
/// propagator is applied to c initial columns at once (one column for a pure
/// state, the identity for Choi assembly).
using StatePath = std::vector<CMatrix>;

/// Non-dissipative unravelling with real noise:
///   psi_{n+1} = exp(-i dt/2 sum_j [A^j(t_n) phi_j(t_n) + A^j(t_{n+1}) phi_j(t_{n+1})]) psi_n.
StatePath propagate_unitary(const HeisenbergFamily& family, const NoiseSample& noise, const CMatrix& psi0);

/// Closed-form Green operator for families whose operators all commute.
/// Amplitudes in the joint eigenbasis pick up
///   exp(-i sum_j int a_j phi_j - sum_jk int int_{tau > s} [D - S]_jk a_j(tau) a_k(s)),
/// evaluated with trapezoidal weights and weight 1/2 on the equal-time diagonal.
class CommutingPropagator {
 public:
  CommutingPropagator(const HeisenbergFamily& family, const DiscretizedKernels& kernels);

  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const;

  const CMatrix& eigenbasis() const { return basis_; }
  /// eigenvalue_paths()[alpha](j, n) = a_j^alpha(t_n)
  const std::vector<RMatrix>& eigenvalue_paths() const { return eigenvalues_; }

 private:
  TimeGrid grid_;
  std::size_t channels_;
  CMatrix basis_;
  std::vector<RMatrix> eigenvalues_;
  /// counter_[alpha](n): the deterministic counter-term exponent on [0, t_n]
  std::vector<CVector> counter_;
};

StatePath propagate_commuting(const HeisenbergFamily& family, const DiscretizedKernels& kernels,
                              const NoiseSample& noise, const CMatrix& psi0);

/// Largest commutator among all pairs of family operators, relative to the
/// operator norms. Zero for commuting families.
double family_commutator_defect(const HeisenbergFamily& family);

/// Auxiliary-state hierarchy for a memory kernel D - S in exponential-sum
/// form. For a multi-index n over the exponential terms mu,
///   d/dt psi^(n) = -i sum_j A^j phi_j psi^(n) - (n . lambda) psi^(n)
///                  - i sum_mu n_mu A^{k_mu} psi^(n - e_mu)
///                  - i sum_mu g_mu A^{j_mu} psi^(n + e_mu),
/// truncated at |n| <= depth, integrated by RK4 with the noise held at the
/// step midpoint.
class HierarchyPropagator {
 public:
  HierarchyPropagator(const HeisenbergFamily& family, PronySum memory, std::size_t depth,
                      std::size_t max_indices = 200000);

  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const;

  std::size_t index_count() const { return indices_.size(); }
  std::size_t depth() const { return depth_; }
  const std::vector<std::vector<int>>& indices() const { return indices_; }

 private:
  struct Link {
    std::size_t target;
    std::size_t channel;
    Complex coefficient;
  };

  CMatrix derivative(const CMatrix& psi, std::size_t stage, const CVector& phi) const;

  TimeGrid grid_;
  std::size_t channels_;
  Eigen::Index dim_;
  PronySum memory_;
  std::size_t depth_;
  std::vector<std::vector<int>> indices_;
  std::vector<Complex> decay_;
  std::vector<std::vector<Link>> links_;  ///< per index: down and up couplings
  /// ops_[j][2n + s]: A^j at t_n + s dt/2
  std::vector<std::vector<CMatrix>> ops_;
};

struct NonHermitianChannels {
  CMatrix a1;  ///< (L + L^dagger) / 2
  CMatrix a2;  ///< (L - L^dagger) / 2i
  /// Two-channel kernel [[D, iD], [-iD, D]] for a one-channel kernel D, under
  /// which the coupling is L phi and the master equation has jump operator L.
  KernelSpec kernel(const KernelSpec& scalar) const;
  /// Time-local version for the Markovian engines.
  CMatrix rates(Complex scalar) const;
};

NonHermitianChannels make_nonhermitian_channels(const CMatrix& L);

/// Linear Markovian SSE step
///   psi_{n+1} = exp{(-i sum_j A^j phi_j - 1/2 sum_jk [D - S]_jk A^j A^k) dt} psi_n
/// with white noise from WhiteNoiseModel. Operators are taken in the
/// Heisenberg picture of the family's Hamiltonian at t_n.
StatePath propagate_markovian_sse(const HeisenbergFamily& family, const std::function<CMatrix(double)>& D,
                                  const std::function<CMatrix(double)>& S, const NoiseSample& noise,
                                  const CMatrix& psi0);

enum class EngineKind { Unitary, Commuting, Hierarchy, MarkovSse };

std::string to_string(EngineKind kind);
EngineKind parse_engine_kind(const std::string& name);

struct TrajectoryConfig {
  EngineKind engine = EngineKind::Commuting;
  SChoice s_choice = SChoice::qsd();
  std::size_t depth = 4;
  std::size_t max_hierarchy_indices = 200000;
  std::size_t n_trajectories = 1000;
  std::uint64_t master_seed = 0;
};

/// A ready-to-run unravelling: owns the noise model and the propagator, and
/// maps a (seed, trajectory index) pair to a state path. Immutable, so
/// trajectories can run concurrently.
class TrajectoryEngine {
 public:
  virtual ~TrajectoryEngine() = default;
  virtual const TimeGrid& grid() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual EngineKind kind() const = 0;
  virtual NoiseSample noise(std::uint64_t master_seed, std::uint64_t trajectory) const = 0;
  virtual StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const = 0;

  StatePath run(std::uint64_t master_seed, std::uint64_t trajectory, const CMatrix& psi0) const {
    return propagate(noise(master_seed, trajectory), psi0);
  }
};

/// Builds the engine for a kernel D (and the S choice in the config).
/// Time-local D goes to the MarkovSse engine only.
std::unique_ptr<TrajectoryEngine> make_engine(const HeisenbergFamily& family, const KernelSpec& D,
                                              const TrajectoryConfig& config);

/// Variant for the hierarchy engine when the noise kernel is tabulated and
/// the memory kernel is a separate exponential fit of it.
std::unique_ptr<TrajectoryEngine> make_hierarchy_engine(const HeisenbergFamily& family,
                                                        const DiscretizedKernels& noise_kernels, PronySum memory,
                                                        std::size_t depth, std::size_t max_indices = 200000);

struct TrajectoryEnsemble {
  TimeGrid grid;
  std::vector<StatePath> paths;
  std::vector<std::uint64_t> trajectories;  ///< trajectory indices (stream ids)
  std::uint64_t master_seed = 0;
  /// norms[i][n] = ||psi_i(t_n)||^2 summed over columns
  std::vector<std::vector<double>> norms;
};

TrajectoryEnsemble simulate(const TrajectoryEngine& engine, const CMatrix& psi0, std::size_t count,
                            std::uint64_t master_seed);

/// Columns: trajectory, time index, column, component, re, im.
void write_paths_csv(std::ostream& os, const TrajectoryEnsemble& ensemble);

}  // namespace nmg
