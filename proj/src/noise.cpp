#include "nmg/noise.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace nmg {

RealCovariance build_real_covariance(const CMatrix& D, const CMatrix& S) {
  if (D.rows() != D.cols() || S.rows() != D.rows() || S.cols() != D.cols())
    throw InvalidInput("build_real_covariance: D and S must be square and of equal size");
  const Eigen::Index n = D.rows();
  // phi = x + i y:
  //   E[x x^T] = (Re D + Re S)/2, E[y y^T] = (Re D - Re S)/2, E[x y^T] = (Im D + Im S)/2.
  RealCovariance cov;
  cov.complex_dim = n;
  cov.matrix.resize(2 * n, 2 * n);
  const RMatrix cxy = 0.5 * (D.imag() + S.imag());
  cov.matrix.topLeftCorner(n, n) = 0.5 * (D.real() + S.real());
  cov.matrix.bottomRightCorner(n, n) = 0.5 * (D.real() - S.real());
  cov.matrix.topRightCorner(n, n) = cxy;
  cov.matrix.bottomLeftCorner(n, n) = cxy.transpose();
  return cov;
}

RealCovariance build_real_covariance(const DiscretizedKernels& k) { return build_real_covariance(k.D, k.S); }

void complex_moments(const RealCovariance& cov, CMatrix& D, CMatrix& S) {
  const Eigen::Index n = cov.complex_dim;
  const RMatrix cxx = cov.matrix.topLeftCorner(n, n);
  const RMatrix cyy = cov.matrix.bottomRightCorner(n, n);
  const RMatrix cxy = cov.matrix.topRightCorner(n, n);
  const RMatrix cyx = cov.matrix.bottomLeftCorner(n, n);
  D = (cxx + cyy).cast<Complex>() + kI * (cxy - cyx).cast<Complex>();
  S = (cxx - cyy).cast<Complex>() + kI * (cxy + cyx).cast<Complex>();
}

std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trajectory) {
  // splitmix64 finalizer applied twice to decorrelate neighbouring indices.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(master_seed) ^ (trajectory * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

GaussianSampler::GaussianSampler(const RealCovariance& cov) : complex_dim_(cov.complex_dim) {
  const RMatrix& c = cov.matrix;
  if (c.rows() != 2 * complex_dim_ || c.cols() != c.rows()) throw InvalidInput("sampler: malformed covariance");
  if (!all_finite(c)) throw InvalidInput("sampler: non-finite covariance");
  if (max_abs(RMatrix(c - c.transpose())) > 1e-12 * std::max(1.0, max_abs(c)))
    throw InvalidInput("sampler: covariance is not symmetric");

  // Coordinates with (numerically) zero variance are held at exactly zero.
  const double max_diag = c.rows() == 0 ? 0.0 : c.diagonal().maxCoeff();
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    if (c(i, i) > 1e-14 * max_diag) active_.push_back(i);
  const auto r = static_cast<Eigen::Index>(active_.size());
  if (r == 0) {
    method_ = "zero";
    return;
  }
  RMatrix a(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < r; ++j) a(i, j) = c(active_[i], active_[j]);

  Eigen::LLT<RMatrix> llt(a);
  if (llt.info() == Eigen::Success) {
    factor_ = llt.matrixL();
    method_ = "cholesky";
    return;
  }
  const double trace = a.trace();
  for (double rel = 1e-14; rel <= 1e-10 * 1.0001; rel *= 10.0) {
    RMatrix jittered = a;
    jittered.diagonal().array() += rel * trace;
    Eigen::LLT<RMatrix> l2(jittered);
    if (l2.info() == Eigen::Success) {
      factor_ = l2.matrixL();
      method_ = "cholesky+jitter";
      jitter_ = rel * trace;
      return;
    }
  }
  Eigen::SelfAdjointEigenSolver<RMatrix> es(a);
  const double min_eig = es.eigenvalues()(0);
  if (min_eig < -1e-8 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
    throw NumericalRefusal("noise covariance is indefinite: min eigenvalue " + std::to_string(min_eig));
  factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  method_ = "eigen";
}

CVector GaussianSampler::draw(std::uint64_t master_seed, std::uint64_t trajectory) const {
  CVector out = CVector::Zero(complex_dim_);
  if (active_.empty()) return out;
  std::mt19937_64 rng(stream_seed(master_seed, trajectory));
  std::normal_distribution<double> normal(0.0, 1.0);
  RVector z(factor_.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  const RVector v = factor_ * z;
  for (std::size_t i = 0; i < active_.size(); ++i) {
    const Eigen::Index row = active_[i];
    if (row < complex_dim_)
      out(row) += v(static_cast<Eigen::Index>(i));
    else
      out(row - complex_dim_) += kI * v(static_cast<Eigen::Index>(i));
  }
  return out;
}

NoiseModel::NoiseModel(const DiscretizedKernels& k)
    : channels_(k.channels), points_(k.grid.size()), sampler_(build_real_covariance(k)) {}

NoiseSample NoiseModel::sample(std::uint64_t master_seed, std::uint64_t trajectory) const {
  NoiseSample s;
  s.trajectory = trajectory;
  const CVector flat = sampler_.draw(master_seed, trajectory);
  s.values = Eigen::Map<const CMatrix>(flat.data(), static_cast<Eigen::Index>(channels_),
                                       static_cast<Eigen::Index>(points_));
  return s;
}

std::vector<NoiseSample> NoiseModel::sample(std::uint64_t master_seed, std::uint64_t first, std::size_t count) const {
  std::vector<NoiseSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample(master_seed, first + i));
  return out;
}

WhiteNoiseModel::WhiteNoiseModel(std::function<CMatrix(double)> D, std::function<CMatrix(double)> S, TimeGrid grid,
                                 std::size_t channels)
    : grid_(grid), channels_(channels) {
  const double inv_dt = 1.0 / grid.dt();
  auto build = [&](double t) {
    const CMatrix d = D(t), s = S(t);
    if (d.rows() != static_cast<Eigen::Index>(channels) || s.rows() != d.rows())
      throw InvalidInput("white noise: rate matrices have the wrong shape");
    const auto report = validate_psd(d, s, 1e-10);
    if (!report.accepted)
      throw NumericalRefusal("time-local [[D,S],[S*,D*]] is not PSD at t = " + std::to_string(t) +
                             " (min eigenvalue " + std::to_string(report.min_eigenvalue) + ")");
    return GaussianSampler(build_real_covariance(CMatrix(d * inv_dt), CMatrix(s * inv_dt)));
  };
  // One sampler per step; the white noise is only used on steps 0..N-1.
  for (std::size_t n = 0; n < grid.size(); ++n) samplers_.push_back(build(grid.time(n)));
}

NoiseSample WhiteNoiseModel::sample(std::uint64_t master_seed, std::uint64_t trajectory) const {
  NoiseSample s;
  s.trajectory = trajectory;
  s.values = CMatrix::Zero(static_cast<Eigen::Index>(channels_), static_cast<Eigen::Index>(grid_.size()));
  // Steps draw from sub-streams of the trajectory stream.
  const std::uint64_t base = stream_seed(master_seed, trajectory);
  for (std::size_t n = 0; n < grid_.size(); ++n)
    s.values.col(static_cast<Eigen::Index>(n)) = samplers_[n].draw(base, n);
  return s;
}

namespace {

double z_score(double mean, double target, double stderr_) {
  const double diff = std::abs(mean - target);
  if (stderr_ > 0.0) return diff / stderr_;
  return diff <= 1e-12 * std::max(1.0, std::abs(target)) ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace

MomentReport moment_test(const std::vector<CVector>& samples, const CMatrix& D, const CMatrix& S, double z_max) {
  if (samples.size() < 1000) throw InvalidInput("moment_test needs at least 1000 samples");
  const Eigen::Index n = D.rows();
  const double count = static_cast<double>(samples.size());
  CMatrix sum_d = CMatrix::Zero(n, n), sum_s = CMatrix::Zero(n, n);
  RMatrix sq_d_re = RMatrix::Zero(n, n), sq_d_im = RMatrix::Zero(n, n);
  RMatrix sq_s_re = RMatrix::Zero(n, n), sq_s_im = RMatrix::Zero(n, n);
  CVector sum_mean = CVector::Zero(n);
  RVector sq_mean_re = RVector::Zero(n), sq_mean_im = RVector::Zero(n);
  for (const auto& phi : samples) {
    if (phi.size() != n) throw InvalidInput("moment_test: sample length does not match the kernel");
    const CMatrix pd = phi.conjugate() * phi.transpose();
    const CMatrix ps = phi * phi.transpose();
    sum_d += pd;
    sum_s += ps;
    sq_d_re += pd.real().cwiseAbs2();
    sq_d_im += pd.imag().cwiseAbs2();
    sq_s_re += ps.real().cwiseAbs2();
    sq_s_im += ps.imag().cwiseAbs2();
    sum_mean += phi;
    sq_mean_re += phi.real().cwiseAbs2();
    sq_mean_im += phi.imag().cwiseAbs2();
  }
  auto se = [count](double sum, double sq) {
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean) * count / (count - 1.0);
    return std::sqrt(var / count);
  };

  MomentReport r;
  r.samples = samples.size();
  r.empirical_D = sum_d / count;
  r.empirical_S = sum_s / count;
  for (Eigen::Index a = 0; a < n; ++a) {
    r.max_z_mean = std::max({r.max_z_mean, z_score(sum_mean(a).real() / count, 0.0, se(sum_mean(a).real(), sq_mean_re(a))),
                             z_score(sum_mean(a).imag() / count, 0.0, se(sum_mean(a).imag(), sq_mean_im(a)))});
    for (Eigen::Index b = 0; b < n; ++b) {
      r.max_z_D = std::max({r.max_z_D, z_score(r.empirical_D(a, b).real(), D(a, b).real(), se(sum_d(a, b).real(), sq_d_re(a, b))),
                            z_score(r.empirical_D(a, b).imag(), D(a, b).imag(), se(sum_d(a, b).imag(), sq_d_im(a, b)))});
      r.max_z_S = std::max({r.max_z_S, z_score(r.empirical_S(a, b).real(), S(a, b).real(), se(sum_s(a, b).real(), sq_s_re(a, b))),
                            z_score(r.empirical_S(a, b).imag(), S(a, b).imag(), se(sum_s(a, b).imag(), sq_s_im(a, b)))});
    }
  }
  r.pass = r.max_z() <= z_max;
  return r;
}

MomentReport moment_test(const std::vector<NoiseSample>& samples, const DiscretizedKernels& k, double z_max) {
  std::vector<CVector> flat;
  flat.reserve(samples.size());
  for (const auto& s : samples) flat.push_back(s.flat());
  return moment_test(flat, k.D, k.S, z_max);
}

void write_noise_csv(std::ostream& os, const std::vector<NoiseSample>& samples) {
  os << "trajectory,channel,time_index,re,im\n";
  os << std::setprecision(17);
  for (const auto& s : samples)
    for (Eigen::Index n = 0; n < s.values.cols(); ++n)
      for (Eigen::Index j = 0; j < s.values.rows(); ++j)
        os << s.trajectory << ',' << j << ',' << n << ',' << s.values(j, n).real() << ',' << s.values(j, n).imag()
           << '\n';
}

}  // namespace nmg
