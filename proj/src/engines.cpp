#include "nmg/engines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <unsupported/Eigen/KroneckerProduct>

#include "json.hpp"
#include "nmg/detail/quadrature.hpp"

namespace nmg {

namespace {

/// Running mean and centred second moments of a sequence of complex matrices,
/// entrywise and separately for real and imaginary parts.
struct Moments {
  std::size_t n = 0;
  std::vector<CMatrix> mean;
  std::vector<RMatrix> m2_re;
  std::vector<RMatrix> m2_im;

  void add(const std::vector<CMatrix>& x) {
    if (n == 0) {
      mean.assign(x.size(), CMatrix());
      m2_re.assign(x.size(), RMatrix());
      m2_im.assign(x.size(), RMatrix());
      for (std::size_t i = 0; i < x.size(); ++i) {
        mean[i] = CMatrix::Zero(x[i].rows(), x[i].cols());
        m2_re[i] = RMatrix::Zero(x[i].rows(), x[i].cols());
        m2_im[i] = RMatrix::Zero(x[i].rows(), x[i].cols());
      }
    }
    ++n;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const CMatrix delta = x[i] - mean[i];
      mean[i] += delta * inv;
      const CMatrix after = x[i] - mean[i];
      m2_re[i].array() += delta.real().array() * after.real().array();
      m2_im[i].array() += delta.imag().array() * after.imag().array();
    }
  }

  // Chan et al. pairwise combination.
  void merge(const Moments& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n), nt = na + nb;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const CMatrix delta = o.mean[i] - mean[i];
      m2_re[i].array() += o.m2_re[i].array() + delta.real().array().square() * na * nb / nt;
      m2_im[i].array() += o.m2_im[i].array() + delta.imag().array().square() * na * nb / nt;
      mean[i] += delta * (nb / nt);
    }
    n += o.n;
  }

  RMatrix se_re(std::size_t i) const { return standard_error(m2_re[i]); }
  RMatrix se_im(std::size_t i) const { return standard_error(m2_im[i]); }

 private:
  RMatrix standard_error(const RMatrix& m2) const {
    if (n < 2) return RMatrix::Zero(m2.rows(), m2.cols());
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    return (m2.array().max(0.0) * scale).sqrt().matrix();
  }
};

/// Splits [0, count) into fixed chunks, runs work(begin, end) for each on a
/// pool of threads and merges the per-chunk accumulators in chunk order.
template <class Work>
Moments run_chunks(std::size_t count, const EnsembleOptions& options, Work work) {
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t n_chunks = (count + chunk - 1) / chunk;
  std::vector<Moments> parts(n_chunks);
  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, n_chunks)));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        parts[c] = work(c * chunk, std::min(count, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_chunks;
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  Moments total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

void check_density(const CMatrix& rho0, Eigen::Index d) {
  if (rho0.rows() != d || rho0.cols() != d) throw InvalidInput("initial density matrix has the wrong dimension");
  if (!all_finite(rho0) || !is_hermitian(rho0, 1e-12)) throw InvalidInput("initial density matrix is not Hermitian");
  if (std::abs(rho0.trace() - 1.0) > 1e-12) throw InvalidInput("initial density matrix does not have unit trace");
}

DensitySeries density_from_moments(const TimeGrid& grid, const Moments& m, const CMatrix& rho0) {
  DensitySeries out{grid, {}, {}, {}, {}, m.n, {}};
  const std::size_t points = grid.size();
  for (std::size_t n = 0; n < points; ++n) {
    out.rho.push_back(m.mean[n]);
    out.se_re.push_back(m.se_re(n));
    out.se_im.push_back(m.se_im(n));
    out.trace_se.push_back(m.se_re(points + n)(0, 0));
  }
  out.rho[0] = rho0;
  out.se_re[0].setZero();
  out.se_im[0].setZero();
  out.trace_se[0] = 0.0;
  return out;
}

std::vector<CMatrix> density_sample(const StatePath& path) {
  std::vector<CMatrix> x;
  x.reserve(2 * path.size());
  for (const auto& psi : path) x.push_back(psi * psi.adjoint());
  for (const auto& psi : path) x.push_back(CMatrix::Constant(1, 1, psi.squaredNorm()));
  return x;
}

}  // namespace

CMatrix pure_decomposition(const CMatrix& rho0) {
  if (rho0.rows() != rho0.cols()) throw InvalidInput("density matrix is not square");
  const auto eig = hermitian_eigen(0.5 * (rho0 + rho0.adjoint()));
  if (eig.values.minCoeff() < -1e-10) throw InvalidInput("density matrix has a negative eigenvalue");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index a = eig.values.size() - 1; a >= 0; --a)
    if (eig.values(a) > 1e-14) keep.push_back(a);
  CMatrix x(rho0.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c)
    x.col(static_cast<Eigen::Index>(c)) = std::sqrt(eig.values(keep[c])) * eig.vectors.col(keep[c]);
  return x;
}

DensitySeries estimate_density(const TrajectoryEngine& engine, const CMatrix& rho0, std::size_t n_trajectories,
                               std::uint64_t master_seed, const EnsembleOptions& options) {
  check_density(rho0, engine.dim());
  if (n_trajectories < 2) throw InvalidInput("need at least two trajectories for error estimates");
  const CMatrix psi0 = pure_decomposition(rho0);
  const Moments m = run_chunks(n_trajectories, options, [&](std::size_t begin, std::size_t end) {
    Moments local;
    for (std::size_t i = begin; i < end; ++i) local.add(density_sample(engine.run(master_seed, i, psi0)));
    return local;
  });
  return density_from_moments(engine.grid(), m, rho0);
}

DensitySeries mc_density(const TrajectoryEnsemble& ensemble) {
  if (ensemble.paths.size() < 2) throw InvalidInput("need at least two trajectories for error estimates");
  Moments m;
  for (const auto& path : ensemble.paths) {
    if (path.size() != ensemble.grid.size()) throw InvalidInput("ensemble path length does not match its grid");
    m.add(density_sample(path));
  }
  const CMatrix& psi0 = ensemble.paths.front().front();
  return density_from_moments(ensemble.grid, m, psi0 * psi0.adjoint());
}

CMatrix choi_partial_trace(const CMatrix& choi, Eigen::Index d) {
  CMatrix p = CMatrix::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b)
      for (Eigen::Index i = 0; i < d; ++i) p(a, b) += choi(a * d + i, b * d + i);
  return p;
}

ChoiSeries mc_choi(const TrajectoryEngine& engine, std::size_t n_trajectories, std::uint64_t master_seed,
                   const EnsembleOptions& options) {
  if (n_trajectories < 100)
    throw NumericalRefusal("Choi estimation needs at least 100 trajectories, got " + std::to_string(n_trajectories));
  const Eigen::Index d = engine.dim();
  const CMatrix id = identity(d);
  const std::size_t points = engine.grid().size();

  auto vec_of = [d](const CMatrix& g) { return CVector(Eigen::Map<const CVector>(g.data(), d * d)); };

  const Moments m = run_chunks(n_trajectories, options, [&](std::size_t begin, std::size_t end) {
    Moments local;
    std::vector<CMatrix> x(2 * points);
    for (std::size_t i = begin; i < end; ++i) {
      const auto path = engine.run(master_seed, i, id);
      for (std::size_t n = 0; n < points; ++n) {
        const CVector v = vec_of(path[n]);
        x[n] = v * v.adjoint();
        x[points + n] = (path[n].adjoint() * path[n]).transpose();
      }
      local.add(x);
    }
    return local;
  });

  ChoiSeries out{engine.grid(), {}, {}, {}, {}, {}, {}, n_trajectories};
  std::vector<CVector> lowest(points);
  for (std::size_t n = 0; n < points; ++n) {
    out.choi.push_back(m.mean[n]);
    out.se_re.push_back(m.se_re(n));
    out.se_im.push_back(m.se_im(n));
    out.tp_se.push_back((m.se_re(points + n).array().square() + m.se_im(points + n).array().square()).sqrt().matrix());
    const auto eig = hermitian_eigen(0.5 * (m.mean[n] + m.mean[n].adjoint()));
    out.min_eigenvalue.push_back(eig.values(0));
    lowest[n] = eig.vectors.col(0);
  }

  const Moments proj = run_chunks(n_trajectories, options, [&](std::size_t begin, std::size_t end) {
    Moments local;
    std::vector<CMatrix> x(points, CMatrix(1, 1));
    for (std::size_t i = begin; i < end; ++i) {
      const auto path = engine.run(master_seed, i, id);
      for (std::size_t n = 0; n < points; ++n) x[n](0, 0) = std::norm(lowest[n].dot(vec_of(path[n])));
      local.add(x);
    }
    return local;
  });
  for (std::size_t n = 0; n < points; ++n) out.min_eigenvalue_se.push_back(proj.se_re(n)(0, 0));
  return out;
}

CpTpReport verify_cp_tp(const ChoiSeries& choi, double tol_sigma) {
  CpTpReport r;
  const Eigen::Index d = choi.dim();
  const CMatrix id = identity(d);
  for (std::size_t n = 0; n < choi.choi.size(); ++n) {
    const RMatrix dev = (choi_partial_trace(choi.choi[n], d) - id).cwiseAbs();
    const RMatrix se = n < choi.tp_se.size() ? choi.tp_se[n] : RMatrix::Zero(d, d);
    double max_z = 0.0;
    bool tp = true;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        if (se(i, j) > 0.0) max_z = std::max(max_z, dev(i, j) / se(i, j));
        if (dev(i, j) > tol_sigma * se(i, j) + 1e-12) tp = false;
      }
    const double lam = n < choi.min_eigenvalue.size() ? choi.min_eigenvalue[n]
                                                      : hermitian_eigen(0.5 * (choi.choi[n] + choi.choi[n].adjoint())).values(0);
    const double lam_se = n < choi.min_eigenvalue_se.size() ? choi.min_eigenvalue_se[n] : 0.0;
    const bool cp = lam >= -(tol_sigma * lam_se + 1e-12);
    r.tp_max_z.push_back(max_z);
    r.tp_max_dev.push_back(dev.maxCoeff());
    r.cp_z.push_back(lam >= -1e-12 ? 0.0 : (lam_se > 0.0 ? lam / lam_se : -std::numeric_limits<double>::infinity()));
    r.tp_pass.push_back(tp);
    r.cp_pass.push_back(cp);
    r.pass = r.pass && tp && cp;
  }
  return r;
}

LindbladSpec LindbladSpec::constant(CMatrix hamiltonian, std::vector<CMatrix> channels, CMatrix rates) {
  return {std::move(hamiltonian), std::move(channels), [rates = std::move(rates)](double) { return rates; }};
}

CVector vec(const CMatrix& m) { return Eigen::Map<const CVector>(m.data(), m.size()); }

CMatrix unvec(const CVector& v, Eigen::Index d) {
  if (v.size() != d * d) throw InvalidInput("unvec: length is not d^2");
  return Eigen::Map<const CMatrix>(v.data(), d, d);
}

CMatrix lindblad_generator(const LindbladSpec& spec, double t) {
  const Eigen::Index d = spec.hamiltonian.rows();
  if (spec.hamiltonian.cols() != d || !is_hermitian(spec.hamiltonian))
    throw InvalidInput("Lindblad Hamiltonian must be square and Hermitian");
  const CMatrix id = identity(d);
  CMatrix L = -kI * (Eigen::kroneckerProduct(id, spec.hamiltonian).eval() -
                     Eigen::kroneckerProduct(spec.hamiltonian.transpose(), id).eval());
  if (spec.channels.empty()) return L;
  const CMatrix D = spec.rates(t);
  const auto J = static_cast<Eigen::Index>(spec.channels.size());
  if (D.rows() != J || D.cols() != J) throw InvalidInput("rate matrix size does not match the channel count");
  for (Eigen::Index j = 0; j < J; ++j) {
    const CMatrix& aj = spec.channels[static_cast<std::size_t>(j)];
    if (aj.rows() != d || aj.cols() != d) throw InvalidInput("channel operator dimension does not match H");
    for (Eigen::Index k = 0; k < J; ++k) {
      if (D(j, k) == Complex(0.0)) continue;
      const CMatrix& ak = spec.channels[static_cast<std::size_t>(k)];
      const CMatrix prod = aj.adjoint() * ak;
      L += D(j, k) * (Eigen::kroneckerProduct(aj.conjugate(), ak).eval() -
                      0.5 * Eigen::kroneckerProduct(id, prod).eval() -
                      0.5 * Eigen::kroneckerProduct(prod.transpose(), id).eval());
    }
  }
  return L;
}

DensitySeries integrate_lindblad(const LindbladSpec& spec, const CMatrix& rho0, const TimeGrid& grid) {
  const Eigen::Index d = spec.hamiltonian.rows();
  check_density(rho0, d);
  DensitySeries out{grid, {rho0}, {RMatrix::Zero(d, d)}, {RMatrix::Zero(d, d)}, {0.0}, 0, {}};

  bool warned = false;
  auto generator = [&](double t) {
    if (!warned && !spec.channels.empty()) {
      const CMatrix D = spec.rates(t);
      const double lo = hermitian_eigen(0.5 * (D + D.adjoint())).values(0);
      if (lo < -1e-12 * std::max(1.0, max_abs(D)) || !is_hermitian(D, 1e-12)) {
        std::ostringstream msg;
        msg << "rate matrix is not positive semidefinite at t=" << t << " (min eigenvalue " << lo << ")";
        out.warnings.push_back(msg.str());
        warned = true;
      }
    }
    return lindblad_generator(spec, t);
  };

  CVector r = vec(rho0);
  for (std::size_t n = 0; n + 1 < grid.size(); ++n) {
    const double t0 = grid.time(n);
    const CMatrix L0 = generator(t0);
    const double norm = L0.cwiseAbs().rowwise().sum().maxCoeff();
    const auto sub = static_cast<std::size_t>(std::max(1.0, std::ceil(grid.dt() * norm / 0.005)));
    const double h = grid.dt() / static_cast<double>(sub);
    for (std::size_t s = 0; s < sub; ++s) {
      const double t = t0 + h * static_cast<double>(s);
      const CMatrix La = s == 0 ? L0 : generator(t);
      const CMatrix Lm = generator(t + 0.5 * h);
      const CMatrix Lb = generator(t + h);
      const CVector k1 = La * r;
      const CVector k2 = Lm * (r + 0.5 * h * k1);
      const CVector k3 = Lm * (r + 0.5 * h * k2);
      const CVector k4 = Lb * (r + h * k3);
      r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    out.rho.push_back(unvec(r, d));
    out.se_re.push_back(RMatrix::Zero(d, d));
    out.se_im.push_back(RMatrix::Zero(d, d));
    out.trace_se.push_back(0.0);
  }
  return out;
}

namespace {

struct SecularChannel {
  std::size_t channel;
  double frequency;
  CMatrix op;
};

std::vector<SecularChannel> secular_channels(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels) {
  std::vector<SecularChannel> out;
  for (std::size_t j = 0; j < channels.size(); ++j)
    for (auto& c : bohr_decomposition(hamiltonian, channels[j])) out.push_back({j, c.frequency, std::move(c.op)});
  return out;
}

bool same_frequency(double a, double b, double scale) { return std::abs(a - b) <= 1e-9 * std::max(1.0, scale); }

LindbladSpec assemble_rwa(const CMatrix& hamiltonian, const std::vector<SecularChannel>& secular,
                          const std::vector<CMatrix>& rates_at) {
  double scale = 0.0;
  for (const auto& s : secular) scale = std::max(scale, std::abs(s.frequency));
  const auto M = static_cast<Eigen::Index>(secular.size());
  CMatrix D = CMatrix::Zero(M, M);
  std::vector<CMatrix> ops;
  for (Eigen::Index p = 0; p < M; ++p) {
    const auto& sp = secular[static_cast<std::size_t>(p)];
    ops.push_back(sp.op);
    for (Eigen::Index q = 0; q < M; ++q) {
      const auto& sq = secular[static_cast<std::size_t>(q)];
      if (!same_frequency(sp.frequency, sq.frequency, scale)) continue;
      D(p, q) = rates_at[static_cast<std::size_t>(p)](static_cast<Eigen::Index>(sp.channel),
                                                        static_cast<Eigen::Index>(sq.channel));
    }
  }
  return LindbladSpec::constant(hamiltonian, std::move(ops), std::move(D));
}

}  // namespace

LindbladSpec rwa_generator(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels,
                           const std::function<CMatrix(double)>& spectrum) {
  const auto secular = secular_channels(hamiltonian, channels);
  std::vector<CMatrix> rates;
  for (const auto& s : secular) {
    CMatrix value = spectrum(s.frequency);
    const auto J = static_cast<Eigen::Index>(channels.size());
    if (value.rows() != J || value.cols() != J) throw InvalidInput("spectrum matrix size does not match channels");
    if (!is_hermitian(value, 1e-10) || hermitian_eigen(0.5 * (value + value.adjoint())).values(0) < -1e-10)
      throw InvalidInput("spectrum is not Hermitian positive semidefinite at omega=" + std::to_string(s.frequency));
    rates.push_back(std::move(value));
  }
  return assemble_rwa(hamiltonian, secular, rates);
}

LindbladSpec rwa_generator(const CMatrix& hamiltonian, const std::vector<CMatrix>& channels,
                           const StationarySpectrum& spectrum) {
  if (spectrum.channels != channels.size()) throw InvalidInput("spectrum channel count does not match channels");
  const auto secular = secular_channels(hamiltonian, channels);
  std::vector<double> missing;
  auto lookup = [&](double w) -> const CMatrix* {
    for (Eigen::Index i = 0; i < spectrum.omega.size(); ++i)
      if (same_frequency(spectrum.omega(i), w, std::abs(w))) return &spectrum.values[static_cast<std::size_t>(i)];
    return nullptr;
  };
  for (const auto& s : secular)
    if (!lookup(s.frequency) && std::find(missing.begin(), missing.end(), s.frequency) == missing.end())
      missing.push_back(s.frequency);
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << std::setprecision(17) << "spectrum has no sample at the required Bohr frequencies:";
    for (double w : missing) msg << ' ' << w;
    throw InvalidInput(msg.str());
  }
  return rwa_generator(hamiltonian, channels, [&](double w) { return *lookup(w); });
}

DensitySeries to_interaction_picture(const DensitySeries& series, const CMatrix& hamiltonian) {
  DensitySeries out = series;
  for (std::size_t n = 0; n < out.rho.size(); ++n) {
    const CMatrix U = matrix_exponential(hamiltonian, -kI * series.grid.time(n));
    out.rho[n] = U.adjoint() * series.rho[n] * U;
    // Errors are per entry in the rotated basis; the rotation mixes entries, so
    // use the largest as a uniform bound.
    const double re = series.se_re[n].size() ? series.se_re[n].maxCoeff() : 0.0;
    const double im = series.se_im[n].size() ? series.se_im[n].maxCoeff() : 0.0;
    const double bound = std::hypot(re, im) * static_cast<double>(series.dim());
    out.se_re[n].setConstant(bound);
    out.se_im[n].setConstant(bound);
  }
  return out;
}

DensitySeries commuting_density(const HeisenbergFamily& family, const DiscretizedKernels& kernels,
                                const CMatrix& rho0) {
  const Eigen::Index d = family.dim();
  check_density(rho0, d);
  const CommutingPropagator prop(family, kernels);
  const CMatrix& basis = prop.eigenbasis();
  const auto& paths = prop.eigenvalue_paths();
  const std::size_t J = family.channels();
  const auto N = static_cast<Eigen::Index>(family.grid().size());
  const double dt = family.grid().dt();

  auto D = [&](Eigen::Index m, std::size_t j, Eigen::Index l, std::size_t k) {
    return kernels.D(kernels.flat(static_cast<std::size_t>(m), j), kernels.flat(static_cast<std::size_t>(l), k));
  };

  std::vector<CVector> ordered(static_cast<std::size_t>(d));
  for (Eigen::Index a = 0; a < d; ++a) {
    const RMatrix& ev = paths[static_cast<std::size_t>(a)];
    CMatrix T = CMatrix::Zero(N, N);
    for (Eigen::Index m = 0; m < N; ++m)
      for (Eigen::Index l = 0; l <= m; ++l) {
        Complex v = 0.0;
        for (std::size_t j = 0; j < J; ++j)
          for (std::size_t k = 0; k < J; ++k)
            v += D(m, j, l, k) * ev(static_cast<Eigen::Index>(j), m) * ev(static_cast<Eigen::Index>(k), l);
        T(m, l) = m == l ? 0.5 * v : v;
      }
    ordered[static_cast<std::size_t>(a)] = detail::trapezoid_prefix_double_sums(T, dt);
  }

  const CMatrix local0 = basis.adjoint() * rho0 * basis;
  std::vector<CMatrix> local(static_cast<std::size_t>(N), CMatrix::Zero(d, d));
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      if (local0(a, b) == Complex(0.0)) continue;
      const RMatrix& ea = paths[static_cast<std::size_t>(a)];
      const RMatrix& eb = paths[static_cast<std::size_t>(b)];
      CMatrix X(N, N);
      for (Eigen::Index m = 0; m < N; ++m)
        for (Eigen::Index l = 0; l < N; ++l) {
          Complex v = 0.0;
          for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < J; ++k)
              v += ea(static_cast<Eigen::Index>(j), m) * eb(static_cast<Eigen::Index>(k), l) * D(l, k, m, j);
          X(m, l) = v;
        }
      const CVector cross = detail::trapezoid_prefix_double_sums(X, dt);
      for (Eigen::Index n = 0; n < N; ++n)
        local[static_cast<std::size_t>(n)](a, b) =
            local0(a, b) * std::exp(cross(n) - ordered[static_cast<std::size_t>(a)](n) -
                                    std::conj(ordered[static_cast<std::size_t>(b)](n)));
    }

  DensitySeries out{family.grid(), {}, {}, {}, {}, 0, {}};
  for (Eigen::Index n = 0; n < N; ++n) {
    out.rho.push_back(basis * local[static_cast<std::size_t>(n)] * basis.adjoint());
    out.se_re.push_back(RMatrix::Zero(d, d));
    out.se_im.push_back(RMatrix::Zero(d, d));
    out.trace_se.push_back(0.0);
  }
  out.rho[0] = rho0;
  return out;
}

MarkovSweepReport markov_limit_sweep(const MarkovSweepScenario& scenario, const std::vector<double>& lambdas,
                                     double ratio_low, double ratio_high) {
  if (lambdas.empty()) throw InvalidInput("Markov-limit sweep needs at least one lambda");
  if (scenario.channels.empty()) throw InvalidInput("Markov-limit sweep needs at least one channel");
  const auto steps = static_cast<std::size_t>(std::llround(scenario.final_time / scenario.dt));
  const TimeGrid grid(scenario.dt, steps);
  const auto family = heisenberg_evolve(scenario.hamiltonian, scenario.channels, grid);
  const std::size_t J = scenario.channels.size();

  const auto lindblad = LindbladSpec::constant(scenario.hamiltonian, scenario.channels,
                                               CMatrix(scenario.gamma * CMatrix::Identity(static_cast<Eigen::Index>(J),
                                                                                          static_cast<Eigen::Index>(J))));
  const CMatrix target =
      to_interaction_picture(integrate_lindblad(lindblad, scenario.rho0, grid), scenario.hamiltonian).rho.back();

  MarkovSweepReport r;
  r.lambdas = lambdas;
  for (double lambda : lambdas) {
    if (!(lambda > 0.0)) throw InvalidInput("Markov-limit sweep needs positive lambdas");
    PronySum p;
    p.channels = J;
    for (std::size_t j = 0; j < J; ++j) p.terms.push_back({j, j, Complex(0.5 * scenario.gamma * lambda), Complex(lambda)});
    DiscretizeOptions opts;
    opts.certify = false;
    const auto k = discretize(KernelSpec{p}, SChoice::qsd(), grid, opts);
    r.distances.push_back(trace_distance(commuting_density(family, k, scenario.rho0).rho.back(), target));
  }

  r.monotone = true;
  bool ratios_ok = true;
  const bool all_zero = std::all_of(r.distances.begin(), r.distances.end(), [](double x) { return x <= 1e-14; });
  for (std::size_t i = 0; i + 1 < r.distances.size(); ++i) {
    if (!(r.distances[i + 1] < r.distances[i])) r.monotone = false;
    const double ratio = r.distances[i + 1] > 0.0 ? r.distances[i] / r.distances[i + 1]
                                                  : std::numeric_limits<double>::infinity();
    r.ratios.push_back(ratio);
    if (!(ratio >= ratio_low && ratio <= ratio_high)) ratios_ok = false;
  }
  r.pass = all_zero || (r.monotone && ratios_ok);
  if (all_zero) r.monotone = true;
  return r;
}

namespace {

nlohmann::json complex_matrix_json(const CMatrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json real_matrix_json(const RMatrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_series_csv(std::ostream& os, const TimeGrid& grid, const std::vector<CMatrix>& values,
                      const std::vector<RMatrix>& se_re, const std::vector<RMatrix>& se_im) {
  os << "time_index,time,row,col,re,im,se_re,se_im\n" << std::setprecision(17);
  for (std::size_t n = 0; n < values.size(); ++n)
    for (Eigen::Index i = 0; i < values[n].rows(); ++i)
      for (Eigen::Index j = 0; j < values[n].cols(); ++j)
        os << n << ',' << grid.time(n) << ',' << i << ',' << j << ',' << values[n](i, j).real() << ','
           << values[n](i, j).imag() << ',' << se_re[n](i, j) << ',' << se_im[n](i, j) << '\n';
}

}  // namespace

void write_density_json(std::ostream& os, const DensitySeries& series) {
  nlohmann::json j;
  j["format"] = "density_series/1";
  j["dt"] = series.grid.dt();
  j["n_steps"] = series.grid.n_steps();
  j["n_trajectories"] = series.n_trajectories;
  j["warnings"] = series.warnings;
  auto times = nlohmann::json::array();
  for (std::size_t n = 0; n < series.rho.size(); ++n)
    times.push_back({{"t", series.grid.time(n)},
                     {"rho", complex_matrix_json(series.rho[n])},
                     {"se_re", real_matrix_json(series.se_re[n])},
                     {"se_im", real_matrix_json(series.se_im[n])},
                     {"trace_se", series.trace_se[n]}});
  j["series"] = std::move(times);
  os << j.dump(1) << '\n';
}

void write_density_csv(std::ostream& os, const DensitySeries& series) {
  write_series_csv(os, series.grid, series.rho, series.se_re, series.se_im);
}

void write_choi_json(std::ostream& os, const ChoiSeries& series) {
  nlohmann::json j;
  j["format"] = "choi_series/1";
  j["dt"] = series.grid.dt();
  j["n_steps"] = series.grid.n_steps();
  j["n_trajectories"] = series.n_trajectories;
  auto times = nlohmann::json::array();
  for (std::size_t n = 0; n < series.choi.size(); ++n)
    times.push_back({{"t", series.grid.time(n)},
                     {"choi", complex_matrix_json(series.choi[n])},
                     {"se_re", real_matrix_json(series.se_re[n])},
                     {"se_im", real_matrix_json(series.se_im[n])},
                     {"min_eigenvalue", series.min_eigenvalue[n]},
                     {"min_eigenvalue_se", series.min_eigenvalue_se[n]}});
  j["series"] = std::move(times);
  os << j.dump(1) << '\n';
}

void write_choi_csv(std::ostream& os, const ChoiSeries& series) {
  write_series_csv(os, series.grid, series.choi, series.se_re, series.se_im);
}

}  // namespace nmg
