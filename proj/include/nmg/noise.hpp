#pragma once

#include <cstdint>
#include <functional>
#include <algorithm>
#include <iosfwd>
#include <string>
#include <vector>

#include "nmg/core.hpp"
#include "nmg/hilbert.hpp"
#include "nmg/kernels.hpp"

namespace nmg {

/// One realization phi_j(t_n), stored as a J x (N+1) matrix.
struct NoiseSample {
  std::uint64_t trajectory = 0;
  CMatrix values;

  std::size_t channels() const { return static_cast<std::size_t>(values.rows()); }
  Complex operator()(std::size_t j, std::size_t n) const {
    return values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n));
  }
  /// Column-major flattening, index n * J + j (the kernel block order).
  CVector flat() const { return Eigen::Map<const CVector>(values.data(), values.size()); }
};

/// Covariance of the stacked real vector (Re phi, Im phi).
struct RealCovariance {
  RMatrix matrix;
  Eigen::Index complex_dim = 0;
};

/// Real covariance whose induced complex moments are E[phi_a^* phi_b] = D_ab
/// and E[phi_a phi_b] = S_ab.
RealCovariance build_real_covariance(const CMatrix& D, const CMatrix& S);
RealCovariance build_real_covariance(const DiscretizedKernels& k);

/// Complex moments implied by a stacked real covariance; inverse of
/// build_real_covariance.
void complex_moments(const RealCovariance& cov, CMatrix& D, CMatrix& S);

/// Per-trajectory random stream derived from (master seed, trajectory index).
std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trajectory);

/// Factorizes a covariance once and draws samples from it. Read-only after
/// construction, so a single sampler can serve concurrent workers.
class GaussianSampler {
 public:
  explicit GaussianSampler(const RealCovariance& cov);

  /// Flat complex vector of length complex_dim.
  CVector draw(std::uint64_t master_seed, std::uint64_t trajectory) const;

  Eigen::Index complex_dim() const { return complex_dim_; }
  /// "cholesky", "cholesky+jitter" or "eigen".
  const std::string& method() const { return method_; }
  double jitter() const { return jitter_; }

 private:
  Eigen::Index complex_dim_ = 0;
  RMatrix factor_;  ///< 2n x r, active rows only scattered back on draw
  std::vector<Eigen::Index> active_;
  std::string method_;
  double jitter_ = 0.0;
};

/// Colored noise on a grid for the given discretized kernels.
class NoiseModel {
 public:
  explicit NoiseModel(const DiscretizedKernels& k);

  NoiseSample sample(std::uint64_t master_seed, std::uint64_t trajectory) const;
  std::vector<NoiseSample> sample(std::uint64_t master_seed, std::uint64_t first, std::size_t count) const;

  std::size_t channels() const { return channels_; }
  const GaussianSampler& sampler() const { return sampler_; }

 private:
  std::size_t channels_;
  std::size_t points_;
  GaussianSampler sampler_;
};

/// Discretized white noise: independent per step with E[phi^* phi] = D(t_n)/dt
/// and E[phi phi] = S(t_n)/dt.
class WhiteNoiseModel {
 public:
  WhiteNoiseModel(std::function<CMatrix(double)> D, std::function<CMatrix(double)> S, TimeGrid grid,
                  std::size_t channels);

  NoiseSample sample(std::uint64_t master_seed, std::uint64_t trajectory) const;

 private:
  TimeGrid grid_;
  std::size_t channels_;
  std::vector<GaussianSampler> samplers_;  ///< one per grid point
};

struct MomentReport {
  std::size_t samples = 0;
  CMatrix empirical_D;  ///< E^[phi^* phi]
  CMatrix empirical_S;  ///< E^[phi phi]
  double max_z_D = 0.0;
  double max_z_S = 0.0;
  double max_z_mean = 0.0;
  bool pass = false;

  double max_z() const { return std::max({max_z_D, max_z_S, max_z_mean}); }
};

/// Entrywise z-scores of the empirical moments against D and S; pass iff all
/// |z| <= z_max. Needs at least 1000 samples.
MomentReport moment_test(const std::vector<CVector>& samples, const CMatrix& D, const CMatrix& S,
                         double z_max = 5.0);
MomentReport moment_test(const std::vector<NoiseSample>& samples, const DiscretizedKernels& k, double z_max = 5.0);

/// Columns: trajectory, channel, time index, re, im.
void write_noise_csv(std::ostream& os, const std::vector<NoiseSample>& samples);

}  // namespace nmg
