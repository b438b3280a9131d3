#include "nmg/trajectories.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

#include "nmg/detail/quadrature.hpp"

namespace nmg {

namespace {

void require_shape(const HeisenbergFamily& family, const NoiseSample& noise, const CMatrix& psi0) {
  if (noise.channels() != family.channels() ||
      noise.values.cols() != static_cast<Eigen::Index>(family.grid().size()))
    throw InvalidInput("noise sample does not match the family's channels and grid");
  if (psi0.rows() != family.dim()) throw InvalidInput("initial state dimension does not match the operators");
}

}  // namespace

StatePath propagate_unitary(const HeisenbergFamily& family, const NoiseSample& noise, const CMatrix& psi0) {
  require_shape(family, noise, psi0);
  for (std::size_t j = 0; j < family.channels(); ++j)
    if (!family.hermitian(j)) throw InvalidInput("unitary propagation needs Hermitian channels");
  if (max_abs(RMatrix(noise.values.imag())) > 1e-12)
    throw InvalidInput("unitary propagation needs real noise (S = D); got complex samples");

  const auto& grid = family.grid();
  StatePath path;
  path.reserve(grid.size());
  path.push_back(psi0);
  const CMatrix zero = CMatrix::Zero(family.dim(), family.dim());
  for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
    CMatrix g = zero;
    for (std::size_t j = 0; j < family.channels(); ++j)
      g += 0.5 * grid.dt() * (family.at(j, n) * noise(j, n).real() + family.at(j, n + 1) * noise(j, n + 1).real());
    path.push_back(matrix_exponential(g, -kI) * path.back());
  }
  return path;
}

double family_commutator_defect(const HeisenbergFamily& family) {
  std::vector<const CMatrix*> ops;
  const std::size_t points = family.stationary() ? 1 : family.grid().size();
  for (std::size_t j = 0; j < family.channels(); ++j)
    for (std::size_t n = 0; n < points; ++n) ops.push_back(&family.at(j, n));
  double defect = 0.0;
  for (std::size_t a = 0; a < ops.size(); ++a)
    for (std::size_t b = a + 1; b < ops.size(); ++b) {
      const double scale = max_abs(*ops[a]) * max_abs(*ops[b]);
      if (scale == 0.0) continue;
      defect = std::max(defect, max_abs(commutator(*ops[a], *ops[b])) / scale);
    }
  return defect;
}

CommutingPropagator::CommutingPropagator(const HeisenbergFamily& family, const DiscretizedKernels& kernels)
    : grid_(family.grid()), channels_(family.channels()) {
  if (!(kernels.grid == grid_) || kernels.channels != channels_)
    throw InvalidInput("kernels and family disagree on grid or channel count");
  for (std::size_t j = 0; j < channels_; ++j)
    if (!family.hermitian(j)) throw InvalidInput("commuting engine needs Hermitian channels");
  const double defect = family_commutator_defect(family);
  if (defect > 1e-10)
    throw NumericalRefusal("coupling operators do not commute (relative commutator " + std::to_string(defect) +
                           "); use the hierarchy engine");

  const Eigen::Index d = family.dim();
  const std::size_t N = grid_.size();
  const std::size_t points = family.stationary() ? 1 : N;

  // Joint eigenbasis from a generic combination of all operators.
  bool found = false;
  for (int attempt = 0; attempt < 6 && !found; ++attempt) {
    CMatrix mix = CMatrix::Zero(d, d);
    std::size_t k = 0;
    for (std::size_t j = 0; j < channels_; ++j)
      for (std::size_t n = 0; n < points; ++n, ++k) {
        const double c = 0.5 + std::fmod(0.6180339887498949 * static_cast<double>(k + 1) + 0.1 * attempt, 1.0);
        mix += c * family.at(j, n);
      }
    basis_ = hermitian_eigen(0.5 * (mix + mix.adjoint())).vectors;
    found = true;
    for (std::size_t j = 0; j < channels_ && found; ++j)
      for (std::size_t n = 0; n < points && found; ++n) {
        CMatrix local = basis_.adjoint() * family.at(j, n) * basis_;
        local.diagonal().setZero();
        if (max_abs(local) > 1e-9 * std::max(1.0, max_abs(family.at(j, n)))) found = false;
      }
  }
  if (!found) throw NumericalRefusal("could not find a joint eigenbasis of the coupling operators");

  eigenvalues_.assign(static_cast<std::size_t>(d), RMatrix(channels_, N));
  for (std::size_t j = 0; j < channels_; ++j)
    for (std::size_t n = 0; n < N; ++n) {
      const CVector diag = (basis_.adjoint() * family.at(j, family.stationary() ? 0 : n) * basis_).diagonal();
      for (Eigen::Index a = 0; a < d; ++a)
        eigenvalues_[static_cast<std::size_t>(a)](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) =
            diag(a).real();
    }

  const CMatrix K = kernels.D - kernels.S;
  const auto Ni = static_cast<Eigen::Index>(N);
  for (Eigen::Index a = 0; a < d; ++a) {
    const RMatrix& ev = eigenvalues_[static_cast<std::size_t>(a)];
    // Time-ordered integrand: full weight below the diagonal, half on it.
    CMatrix T = CMatrix::Zero(Ni, Ni);
    for (Eigen::Index m = 0; m < Ni; ++m)
      for (Eigen::Index l = 0; l <= m; ++l) {
        Complex v = 0.0;
        for (std::size_t j = 0; j < channels_; ++j)
          for (std::size_t k = 0; k < channels_; ++k)
            v += K(kernels.flat(static_cast<std::size_t>(m), j), kernels.flat(static_cast<std::size_t>(l), k)) *
                 ev(static_cast<Eigen::Index>(j), m) * ev(static_cast<Eigen::Index>(k), l);
        T(m, l) = m == l ? 0.5 * v : v;
      }
    counter_.push_back(detail::trapezoid_prefix_double_sums(T, grid_.dt()));
  }
}

StatePath CommutingPropagator::propagate(const NoiseSample& noise, const CMatrix& psi0) const {
  if (noise.channels() != channels_ || noise.values.cols() != static_cast<Eigen::Index>(grid_.size()))
    throw InvalidInput("noise sample does not match the propagator");
  const Eigen::Index d = basis_.rows();
  if (psi0.rows() != d) throw InvalidInput("initial state dimension does not match the operators");
  const CMatrix local0 = basis_.adjoint() * psi0;
  const std::size_t N = grid_.size();

  // Cumulative trapezoid of u(m) = sum_j a_j(m) phi_j(m) for every eigenvector.
  CMatrix phase(d, static_cast<Eigen::Index>(N));
  for (Eigen::Index a = 0; a < d; ++a) {
    const RMatrix& ev = eigenvalues_[static_cast<std::size_t>(a)];
    Complex acc = 0.0;
    Complex prev = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      Complex u = 0.0;
      for (std::size_t j = 0; j < channels_; ++j)
        u += ev(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) * noise(j, n);
      if (n > 0) acc += 0.5 * grid_.dt() * (prev + u);
      prev = u;
      phase(a, static_cast<Eigen::Index>(n)) = -kI * acc - counter_[static_cast<std::size_t>(a)](static_cast<Eigen::Index>(n));
    }
  }

  StatePath path;
  path.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    const CVector amp = phase.col(static_cast<Eigen::Index>(n)).array().exp();
    path.push_back(basis_ * amp.asDiagonal() * local0);
  }
  path.front() = psi0;
  return path;
}

StatePath propagate_commuting(const HeisenbergFamily& family, const DiscretizedKernels& kernels,
                              const NoiseSample& noise, const CMatrix& psi0) {
  return CommutingPropagator(family, kernels).propagate(noise, psi0);
}

HierarchyPropagator::HierarchyPropagator(const HeisenbergFamily& family, PronySum memory, std::size_t depth,
                                         std::size_t max_indices)
    : grid_(family.grid()),
      channels_(family.channels()),
      dim_(family.dim()),
      memory_(std::move(memory)),
      depth_(depth) {
  if (depth_ < 1) throw InvalidInput("hierarchy depth must be at least 1");
  if (memory_.channels != channels_) throw InvalidInput("memory kernel channel count does not match the family");
  for (const auto& t : memory_.terms)
    if (t.left >= channels_ || t.right >= channels_) throw InvalidInput("memory term refers to an unknown channel");
  std::erase_if(memory_.terms, [](const PronyTerm& t) { return t.weight == Complex(0.0); });

  const std::size_t M = memory_.terms.size();
  // Number of multi-indices with |n| <= depth is binom(M + depth, depth).
  double count = 1.0;
  for (std::size_t i = 1; i <= depth_; ++i) count = count * static_cast<double>(M + i) / static_cast<double>(i);
  if (count > static_cast<double>(max_indices))
    throw NumericalRefusal("hierarchy needs " + std::to_string(static_cast<long long>(count)) +
                           " auxiliary states, above the cap of " + std::to_string(max_indices));

  std::map<std::vector<int>, std::size_t> lookup;
  indices_.push_back(std::vector<int>(M, 0));
  lookup[indices_.front()] = 0;
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    const auto n = indices_[i];
    int level = 0;
    for (int v : n) level += v;
    if (static_cast<std::size_t>(level) == depth_) continue;
    for (std::size_t mu = 0; mu < M; ++mu) {
      auto up = n;
      ++up[mu];
      if (lookup.emplace(up, indices_.size()).second) indices_.push_back(up);
    }
  }

  decay_.assign(indices_.size(), Complex(0.0));
  links_.resize(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    const auto& n = indices_[i];
    int level = 0;
    for (int v : n) level += v;
    for (std::size_t mu = 0; mu < M; ++mu) {
      const auto& term = memory_.terms[mu];
      decay_[i] += static_cast<double>(n[mu]) * term.rate;
      if (n[mu] > 0) {
        auto down = n;
        --down[mu];
        links_[i].push_back({lookup.at(down), term.right, -kI * static_cast<double>(n[mu])});
      }
      if (static_cast<std::size_t>(level) < depth_) {
        auto up = n;
        ++up[mu];
        links_[i].push_back({lookup.at(up), term.left, -kI * term.weight});
      }
    }
  }

  ops_.resize(channels_);
  for (std::size_t j = 0; j < channels_; ++j) {
    ops_[j].reserve(2 * grid_.size() - 1);
    for (std::size_t s = 0; s + 1 < 2 * grid_.size(); ++s)
      ops_[j].push_back(s % 2 == 0 ? family.at(j, s / 2) : family.at_time(j, 0.5 * grid_.dt() * static_cast<double>(s)));
  }
}

CMatrix HierarchyPropagator::derivative(const CMatrix& psi, std::size_t stage, const CVector& phi) const {
  const Eigen::Index cols = psi.cols() / static_cast<Eigen::Index>(indices_.size());
  CMatrix drive = CMatrix::Zero(dim_, dim_);
  for (std::size_t j = 0; j < channels_; ++j) drive += ops_[j][stage] * phi(static_cast<Eigen::Index>(j));
  CMatrix out = -kI * (drive * psi);

  std::vector<CMatrix> applied(channels_);
  for (const auto& links : links_)
    for (const auto& l : links)
      if (applied[l.channel].size() == 0) applied[l.channel] = ops_[l.channel][stage] * psi;

  for (std::size_t i = 0; i < indices_.size(); ++i) {
    auto block = out.middleCols(static_cast<Eigen::Index>(i) * cols, cols);
    if (decay_[i] != Complex(0.0)) block -= decay_[i] * psi.middleCols(static_cast<Eigen::Index>(i) * cols, cols);
    for (const auto& l : links_[i])
      block += l.coefficient * applied[l.channel].middleCols(static_cast<Eigen::Index>(l.target) * cols, cols);
  }
  return out;
}

StatePath HierarchyPropagator::propagate(const NoiseSample& noise, const CMatrix& psi0) const {
  if (noise.channels() != channels_ || noise.values.cols() != static_cast<Eigen::Index>(grid_.size()))
    throw InvalidInput("noise sample does not match the propagator");
  if (psi0.rows() != dim_) throw InvalidInput("initial state dimension does not match the operators");
  const Eigen::Index cols = psi0.cols();
  const auto count = static_cast<Eigen::Index>(indices_.size());
  CMatrix psi = CMatrix::Zero(dim_, count * cols);
  psi.leftCols(cols) = psi0;

  StatePath path;
  path.reserve(grid_.size());
  path.push_back(psi0);
  const double h = grid_.dt();
  for (std::size_t n = 0; n + 1 < grid_.size(); ++n) {
    const CVector phi = 0.5 * (noise.values.col(static_cast<Eigen::Index>(n)) +
                               noise.values.col(static_cast<Eigen::Index>(n + 1)));
    const CMatrix k1 = derivative(psi, 2 * n, phi);
    const CMatrix k2 = derivative(psi + 0.5 * h * k1, 2 * n + 1, phi);
    const CMatrix k3 = derivative(psi + 0.5 * h * k2, 2 * n + 1, phi);
    const CMatrix k4 = derivative(psi + h * k3, 2 * n + 2, phi);
    psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    path.push_back(psi.leftCols(cols));
  }
  return path;
}

KernelSpec NonHermitianChannels::kernel(const KernelSpec& scalar) const {
  if (scalar.channels() != 1) throw InvalidInput("non-Hermitian channel kernel needs a one-channel kernel");
  CMatrix t(2, 2);
  t << 1.0, kI, -kI, 1.0;
  return std::visit(
      [&t](const auto& f) -> KernelSpec {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, PronySum>) {
          PronySum p;
          p.channels = 2;
          for (const auto& term : f.terms)
            for (std::size_t j = 0; j < 2; ++j)
              for (std::size_t k = 0; k < 2; ++k)
                p.terms.push_back({j, k, t(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * term.weight,
                                   term.rate});
          return KernelSpec{p};
        } else if constexpr (std::is_same_v<T, StationarySpectrum>) {
          StationarySpectrum s{2, f.omega, {}};
          for (const auto& v : f.values) s.values.push_back(v(0, 0) * t);
          return KernelSpec{s};
        } else if constexpr (std::is_same_v<T, TimeLocal>) {
          auto inner = f.matrix;
          return KernelSpec{TimeLocal{2, [inner, t](double time) { return CMatrix(inner(time)(0, 0) * t); }}};
        } else {
          if (!f.is_stationary()) throw InvalidInput("non-Hermitian channel kernel needs a stationary table");
          std::vector<CMatrix> lags;
          for (const auto& v : f.lags) lags.push_back(v(0, 0) * t);
          return KernelSpec{Tabulated::stationary(2, f.step, std::move(lags))};
        }
      },
      scalar.form);
}

CMatrix NonHermitianChannels::rates(Complex scalar) const {
  CMatrix t(2, 2);
  t << 1.0, kI, -kI, 1.0;
  return scalar * t;
}

NonHermitianChannels make_nonhermitian_channels(const CMatrix& L) {
  if (L.rows() != L.cols()) throw InvalidInput("make_nonhermitian_channels: operator is not square");
  return {0.5 * (L + L.adjoint()), (L - L.adjoint()) / (2.0 * kI)};
}

StatePath propagate_markovian_sse(const HeisenbergFamily& family, const std::function<CMatrix(double)>& D,
                                  const std::function<CMatrix(double)>& S, const NoiseSample& noise,
                                  const CMatrix& psi0) {
  require_shape(family, noise, psi0);
  const auto& grid = family.grid();
  const auto J = family.channels();
  StatePath path;
  path.reserve(grid.size());
  path.push_back(psi0);
  for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
    const double t = grid.time(n);
    const CMatrix K = D(t) - S(t);
    CMatrix g = CMatrix::Zero(family.dim(), family.dim());
    for (std::size_t j = 0; j < J; ++j) {
      g += -kI * noise(j, n) * family.at(j, n);
      for (std::size_t k = 0; k < J; ++k)
        g -= 0.5 * K(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * family.at(j, n) * family.at(k, n);
    }
    path.push_back(matrix_exponential(g, grid.dt()) * path.back());
  }
  return path;
}

std::string to_string(EngineKind kind) {
  switch (kind) {
    case EngineKind::Unitary: return "unitary";
    case EngineKind::Commuting: return "commuting";
    case EngineKind::Hierarchy: return "hierarchy";
    case EngineKind::MarkovSse: return "markov_sse";
  }
  return "?";
}

EngineKind parse_engine_kind(const std::string& name) {
  if (name == "unitary") return EngineKind::Unitary;
  if (name == "commuting") return EngineKind::Commuting;
  if (name == "hierarchy") return EngineKind::Hierarchy;
  if (name == "markov_sse") return EngineKind::MarkovSse;
  throw InvalidInput("unknown engine '" + name + "' (expected unitary, commuting, hierarchy or markov_sse)");
}

namespace {

class ColoredEngine : public TrajectoryEngine {
 public:
  ColoredEngine(const HeisenbergFamily& family, const DiscretizedKernels& kernels)
      : family_(family), noise_(kernels) {}
  const TimeGrid& grid() const override { return family_.grid(); }
  Eigen::Index dim() const override { return family_.dim(); }
  NoiseSample noise(std::uint64_t seed, std::uint64_t trajectory) const override {
    return noise_.sample(seed, trajectory);
  }

 protected:
  HeisenbergFamily family_;
  NoiseModel noise_;
};

class UnitaryEngine final : public ColoredEngine {
 public:
  using ColoredEngine::ColoredEngine;
  EngineKind kind() const override { return EngineKind::Unitary; }
  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const override {
    return propagate_unitary(family_, noise, psi0);
  }
};

class CommutingEngine final : public ColoredEngine {
 public:
  CommutingEngine(const HeisenbergFamily& family, const DiscretizedKernels& kernels)
      : ColoredEngine(family, kernels), propagator_(family, kernels) {}
  EngineKind kind() const override { return EngineKind::Commuting; }
  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const override {
    return propagator_.propagate(noise, psi0);
  }

 private:
  CommutingPropagator propagator_;
};

class HierarchyEngine final : public ColoredEngine {
 public:
  HierarchyEngine(const HeisenbergFamily& family, const DiscretizedKernels& kernels, PronySum memory,
                  std::size_t depth, std::size_t cap)
      : ColoredEngine(family, kernels), propagator_(family, std::move(memory), depth, cap) {}
  EngineKind kind() const override { return EngineKind::Hierarchy; }
  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const override {
    return propagator_.propagate(noise, psi0);
  }

 private:
  HierarchyPropagator propagator_;
};

class MarkovSseEngine final : public TrajectoryEngine {
 public:
  MarkovSseEngine(const HeisenbergFamily& family, std::function<CMatrix(double)> D, std::function<CMatrix(double)> S)
      : family_(family), D_(std::move(D)), S_(std::move(S)), noise_(D_, S_, family.grid(), family.channels()) {}
  const TimeGrid& grid() const override { return family_.grid(); }
  Eigen::Index dim() const override { return family_.dim(); }
  EngineKind kind() const override { return EngineKind::MarkovSse; }
  NoiseSample noise(std::uint64_t seed, std::uint64_t trajectory) const override {
    return noise_.sample(seed, trajectory);
  }
  StatePath propagate(const NoiseSample& noise, const CMatrix& psi0) const override {
    return propagate_markovian_sse(family_, D_, S_, noise, psi0);
  }

 private:
  HeisenbergFamily family_;
  std::function<CMatrix(double)> D_, S_;
  WhiteNoiseModel noise_;
};

}  // namespace

std::unique_ptr<TrajectoryEngine> make_engine(const HeisenbergFamily& family, const KernelSpec& D,
                                              const TrajectoryConfig& config) {
  if (D.channels() != family.channels()) throw InvalidInput("kernel channel count does not match the operators");
  if (config.engine == EngineKind::MarkovSse) {
    const auto* local = std::get_if<TimeLocal>(&D.form);
    if (!local) throw InvalidInput("markov_sse engine needs a time-local kernel");
    const auto S = preset_S(config.s_choice, D);
    const auto* s_local = std::get_if<TimeLocal>(&S.form);
    if (!s_local) throw InvalidInput("markov_sse engine needs a time-local S");
    return std::make_unique<MarkovSseEngine>(family, local->matrix, s_local->matrix);
  }
  if (D.is_time_local()) throw InvalidInput("time-local kernel: use the markov_sse engine");

  switch (config.engine) {
    case EngineKind::Unitary:
      if (config.s_choice.kind != SKind::Unitary) throw InvalidInput("unitary engine requires the unitary S choice");
      return std::make_unique<UnitaryEngine>(family, discretize(D, config.s_choice, family.grid()));
    case EngineKind::Commuting:
      return std::make_unique<CommutingEngine>(family, discretize(D, config.s_choice, family.grid()));
    case EngineKind::Hierarchy:
      return std::make_unique<HierarchyEngine>(family, discretize(D, config.s_choice, family.grid()),
                                               memory_kernel(D, config.s_choice), config.depth,
                                               config.max_hierarchy_indices);
    case EngineKind::MarkovSse:
      break;
  }
  throw InvalidInput("unsupported engine");
}

std::unique_ptr<TrajectoryEngine> make_hierarchy_engine(const HeisenbergFamily& family,
                                                        const DiscretizedKernels& noise_kernels, PronySum memory,
                                                        std::size_t depth, std::size_t max_indices) {
  return std::make_unique<HierarchyEngine>(family, noise_kernels, std::move(memory), depth, max_indices);
}

TrajectoryEnsemble simulate(const TrajectoryEngine& engine, const CMatrix& psi0, std::size_t count,
                            std::uint64_t master_seed) {
  TrajectoryEnsemble e{engine.grid(), {}, {}, master_seed, {}};
  e.paths.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto path = engine.run(master_seed, i, psi0);
    std::vector<double> norms;
    norms.reserve(path.size());
    for (const auto& psi : path) norms.push_back(psi.squaredNorm());
    e.paths.push_back(std::move(path));
    e.trajectories.push_back(i);
    e.norms.push_back(std::move(norms));
  }
  return e;
}

void write_paths_csv(std::ostream& os, const TrajectoryEnsemble& ensemble) {
  os << "trajectory,time_index,column,component,re,im\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ensemble.paths.size(); ++i)
    for (std::size_t n = 0; n < ensemble.paths[i].size(); ++n) {
      const CMatrix& psi = ensemble.paths[i][n];
      for (Eigen::Index c = 0; c < psi.cols(); ++c)
        for (Eigen::Index r = 0; r < psi.rows(); ++r)
          os << ensemble.trajectories[i] << ',' << n << ',' << c << ',' << r << ',' << psi(r, c).real() << ','
             << psi(r, c).imag() << '\n';
    }
}

}  // namespace nmg
