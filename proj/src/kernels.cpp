#include "nmg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace nmg {

CMatrix PronySum::lag_value(double lag) const {
  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(channels));
  for (const auto& t : terms) out(t.left, t.right) += t.weight * std::exp(-t.rate * lag);
  return out;
}

Tabulated Tabulated::stationary(std::size_t channels, double step, std::vector<CMatrix> lags) {
  Tabulated t;
  t.channels = channels;
  t.step = step;
  t.lags = std::move(lags);
  return t;
}

Tabulated Tabulated::two_time(std::size_t channels, double step, CMatrix table) {
  Tabulated t;
  t.channels = channels;
  t.step = step;
  t.table = std::move(table);
  return t;
}

std::size_t KernelSpec::channels() const {
  return std::visit([](const auto& f) { return f.channels; }, form);
}

KernelSpec scaled(const KernelSpec& spec, Complex c) {
  return std::visit(
      [c](const auto& f) -> KernelSpec {
        using T = std::decay_t<decltype(f)>;
        T g = f;
        if constexpr (std::is_same_v<T, PronySum>) {
          for (auto& t : g.terms) t.weight *= c;
          if (c == Complex(0.0)) g.terms.clear();
        } else if constexpr (std::is_same_v<T, StationarySpectrum>) {
          for (auto& v : g.values) v *= c;
        } else if constexpr (std::is_same_v<T, TimeLocal>) {
          auto inner = f.matrix;
          g.matrix = [inner, c](double t) { return CMatrix(c * inner(t)); };
        } else {
          for (auto& v : g.lags) v *= c;
          if (g.table) *g.table *= c;
        }
        return KernelSpec{g};
      },
      spec.form);
}

std::string to_string(SKind kind) {
  switch (kind) {
    case SKind::Unitary: return "unitary";
    case SKind::QSD: return "qsd";
    case SKind::Collapse: return "collapse";
    case SKind::Custom: return "custom";
  }
  return "?";
}

SKind parse_s_kind(const std::string& name) {
  if (name == "unitary") return SKind::Unitary;
  if (name == "qsd") return SKind::QSD;
  if (name == "collapse") return SKind::Collapse;
  if (name == "custom") return SKind::Custom;
  throw InvalidInput("unknown S choice '" + name + "' (expected unitary, qsd, collapse or custom)");
}

CMatrix DiscretizedKernels::weighted_D() const {
  RVector w(D.rows());
  for (std::size_t n = 0; n < grid.size(); ++n)
    for (std::size_t j = 0; j < channels; ++j) w(flat(n, j)) = weights(static_cast<Eigen::Index>(n));
  return w.asDiagonal() * D * w.asDiagonal();
}

CMatrix DiscretizedKernels::weighted_S() const {
  RVector w(S.rows());
  for (std::size_t n = 0; n < grid.size(); ++n)
    for (std::size_t j = 0; j < channels; ++j) w(flat(n, j)) = weights(static_cast<Eigen::Index>(n));
  return w.asDiagonal() * S * w.asDiagonal();
}

namespace {

enum class Reflection { Hermitian, Symmetric };

CMatrix reflect(const CMatrix& m, Reflection r) {
  return r == Reflection::Hermitian ? CMatrix(m.adjoint()) : CMatrix(m.transpose());
}

// Stationary lag values at multiples of the grid step, k = 0..N.
std::vector<CMatrix> lags_on_grid(const KernelSpec& spec, const TimeGrid& grid) {
  const std::size_t count = grid.size();
  std::vector<CMatrix> lags;
  lags.reserve(count);
  if (const auto* p = std::get_if<PronySum>(&spec.form)) {
    for (const auto& t : p->terms)
      if (t.left >= p->channels || t.right >= p->channels)
        throw InvalidInput("prony term refers to a channel beyond the channel count");
    for (std::size_t k = 0; k < count; ++k) lags.push_back(p->lag_value(grid.time(k)));
    return lags;
  }
  if (const auto* s = std::get_if<StationarySpectrum>(&spec.form)) return spectrum_to_kernel(*s, grid).lags;
  const auto& tab = std::get<Tabulated>(spec.form);
  const double ratio = grid.dt() / tab.step;
  const auto stride = static_cast<std::size_t>(std::llround(ratio));
  if (stride == 0 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio)
    throw InvalidInput("tabulated kernel step " + std::to_string(tab.step) +
                       " does not divide the grid step " + std::to_string(grid.dt()));
  if ((count - 1) * stride >= tab.lags.size())
    throw InvalidInput("tabulated kernel covers " + std::to_string(tab.lags.size()) +
                       " lags, the grid needs " + std::to_string((count - 1) * stride + 1));
  for (std::size_t k = 0; k < count; ++k) lags.push_back(tab.lags[k * stride]);
  return lags;
}

CMatrix block_from_spec(const KernelSpec& spec, const TimeGrid& grid, Reflection r) {
  const auto J = static_cast<Eigen::Index>(spec.channels());
  const auto N = static_cast<Eigen::Index>(grid.size());
  if (spec.is_time_local())
    throw InvalidInput("time-local kernel cannot be discretized on the grid; use the Markovian engines");
  if (const auto* tab = std::get_if<Tabulated>(&spec.form); tab && !tab->is_stationary()) {
    const CMatrix& t = *tab->table;
    if (t.rows() != N * J || t.cols() != N * J || std::abs(tab->step - grid.dt()) > 1e-12 * grid.dt())
      throw InvalidInput("two-time table does not match the grid");
    return t;
  }

  auto lags = lags_on_grid(spec, grid);
  // Zero lag must already be Hermitian (symmetric); exponential fits of
  // separate channel pairs leave a residual-sized defect that is symmetrized.
  const CMatrix& zero = lags.front();
  const double defect = max_abs(CMatrix(zero - reflect(zero, r)));
  if (defect > 1e-6 * std::max(1.0, max_abs(zero)))
    throw InvalidInput("kernel at zero lag is not " +
                       std::string(r == Reflection::Hermitian ? "Hermitian" : "symmetric") + " (defect " +
                       std::to_string(defect) + ")");
  lags.front() = 0.5 * (zero + reflect(zero, r));

  CMatrix block(N * J, N * J);
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index m = 0; m <= n; ++m) {
      const CMatrix& v = lags[static_cast<std::size_t>(n - m)];
      block.block(n * J, m * J, J, J) = v;
      if (m != n) block.block(m * J, n * J, J, J) = reflect(v, r);
    }
  return block;
}

}  // namespace

CMatrix hermitian_block(const KernelSpec& spec, const TimeGrid& grid) {
  return block_from_spec(spec, grid, Reflection::Hermitian);
}

CMatrix symmetric_block(const KernelSpec& spec, const TimeGrid& grid) {
  return block_from_spec(spec, grid, Reflection::Symmetric);
}

PsdReport validate_psd(const CMatrix& D, const CMatrix& S, double tol) {
  const Eigen::Index n = D.rows();
  CMatrix full(2 * n, 2 * n);
  full.topLeftCorner(n, n) = D;
  full.topRightCorner(n, n) = S;
  full.bottomLeftCorner(n, n) = S.conjugate();
  full.bottomRightCorner(n, n) = D.conjugate();
  PsdReport r;
  r.scale = n == 0 ? 0.0 : full.diagonal().real().cwiseAbs().maxCoeff();
  r.tolerance = tol * r.scale;
  if (r.scale == 0.0 && max_abs(full) == 0.0) {
    r.accepted = true;
    return r;
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> es(full, Eigen::EigenvaluesOnly);
  r.min_eigenvalue = es.eigenvalues()(0);
  r.accepted = r.min_eigenvalue >= -r.tolerance;
  return r;
}

PsdReport validate_psd(const DiscretizedKernels& k, double tol) { return validate_psd(k.D, k.S, tol); }

DiscretizedKernels discretize(const KernelSpec& spec, const SChoice& s_choice, const TimeGrid& grid,
                              const DiscretizeOptions& options) {
  DiscretizedKernels k{grid, spec.channels(), hermitian_block(spec, grid), CMatrix(), grid.trapezoid_weights(), 0.0};
  const double scale = std::max(1.0, max_abs(k.D));
  if (hermiticity_defect(k.D) > 1e-10 * scale) throw InvalidInput("discretized D is not Hermitian");

  switch (s_choice.kind) {
    case SKind::Unitary:
    case SKind::Collapse: {
      const double imag = max_abs(RMatrix(k.D.imag()));
      if (imag > 1e-10 * scale)
        throw InvalidInput(to_string(s_choice.kind) + " unravelling needs a real kernel D (max |Im D| = " +
                           std::to_string(imag) + ")");
      k.S = s_choice.kind == SKind::Unitary ? k.D : CMatrix(-k.D);
      break;
    }
    case SKind::QSD:
      k.S = CMatrix::Zero(k.D.rows(), k.D.cols());
      break;
    case SKind::Custom:
      if (!s_choice.custom) throw InvalidInput("custom S choice without a kernel");
      if (s_choice.custom->channels() != spec.channels())
        throw InvalidInput("custom S kernel has a different channel count than D");
      k.S = symmetric_block(*s_choice.custom, grid);
      break;
  }
  if (max_abs(CMatrix(k.S - k.S.transpose())) > 1e-10 * scale) throw InvalidInput("discretized S is not symmetric");

  if (options.certify) {
    const auto report = validate_psd(k, options.psd_tolerance);
    k.psd_min_eigenvalue = report.min_eigenvalue;
    if (!report.accepted)
      throw NumericalRefusal("kernel certificate failed: min eigenvalue of [[D,S],[S*,D*]] is " +
                             std::to_string(report.min_eigenvalue) + " (tolerance " +
                             std::to_string(report.tolerance) + ")");
  }
  return k;
}

Tabulated spectrum_to_kernel(const StationarySpectrum& spec, const TimeGrid& grid) {
  const Eigen::Index count = spec.omega.size();
  const auto J = static_cast<Eigen::Index>(spec.channels);
  if (count < 2 || spec.values.size() != static_cast<std::size_t>(count))
    throw InvalidInput("spectrum needs at least two frequency samples with one matrix each");
  double max_gap = 0.0;
  for (Eigen::Index i = 1; i < count; ++i) {
    const double gap = spec.omega(i) - spec.omega(i - 1);
    if (!(gap > 0.0)) throw InvalidInput("spectrum frequencies must be strictly increasing");
    max_gap = std::max(max_gap, gap);
  }
  // Frequency quadrature with spacing dw aliases lags modulo 2 pi / dw.
  const double period = 2.0 * std::numbers::pi / max_gap;
  if (period < 2.0 * grid.final_time())
    throw InvalidInput("frequency grid too coarse: spacing " + std::to_string(max_gap) + " aliases lags beyond " +
                       std::to_string(period / 2.0) + ", but the time grid (dt " + std::to_string(grid.dt()) +
                       ") reaches " + std::to_string(grid.final_time()));
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto& v = spec.values[static_cast<std::size_t>(i)];
    if (v.rows() != J || v.cols() != J) throw InvalidInput("spectrum matrix has the wrong shape");
    if (!is_hermitian(v, 1e-10 * std::max(1.0, max_abs(v))))
      throw InvalidInput("spectrum is not Hermitian at w = " + std::to_string(spec.omega(i)));
    if (J > 0 && hermitian_eigen(v).values(0) < -1e-10 * std::max(1.0, max_abs(v)))
      throw InvalidInput("spectrum is not PSD at w = " + std::to_string(spec.omega(i)));
  }

  RVector w(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double left = i > 0 ? spec.omega(i) - spec.omega(i - 1) : 0.0;
    const double right = i + 1 < count ? spec.omega(i + 1) - spec.omega(i) : 0.0;
    w(i) = 0.5 * (left + right) / (2.0 * std::numbers::pi);
  }
  std::vector<CMatrix> lags;
  lags.reserve(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double lag = grid.time(n);
    CMatrix acc = CMatrix::Zero(J, J);
    for (Eigen::Index i = 0; i < count; ++i)
      acc += (w(i) * std::exp(-kI * spec.omega(i) * lag)) * spec.values[static_cast<std::size_t>(i)];
    lags.push_back(std::move(acc));
  }
  return Tabulated::stationary(spec.channels, grid.dt(), std::move(lags));
}

CMatrix kernel_to_spectrum(const Tabulated& tab, double omega) {
  if (!tab.is_stationary() || tab.lags.size() < 2) throw InvalidInput("kernel_to_spectrum needs a stationary table");
  const auto J = static_cast<Eigen::Index>(tab.channels);
  CMatrix acc = CMatrix::Zero(J, J);
  const std::size_t last = tab.lags.size() - 1;
  for (std::size_t k = 0; k <= last; ++k) {
    const double lag = static_cast<double>(k) * tab.step;
    const double w = (k == 0 || k == last) ? 0.5 * tab.step : tab.step;
    const Complex ph = std::exp(kI * omega * lag);
    acc += w * (ph * tab.lags[k] + std::conj(ph) * tab.lags[k].adjoint());
  }
  return acc;
}

namespace {

// Least-squares amplitudes for fixed rates; returns the max residual.
double fit_amplitudes(std::span<const Complex> y, double step, const std::vector<Complex>& rates,
                      std::vector<Complex>& weights) {
  const auto M = static_cast<Eigen::Index>(y.size());
  const auto n = static_cast<Eigen::Index>(rates.size());
  CMatrix Z(M, n);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index mu = 0; mu < n; ++mu)
      Z(m, mu) = std::exp(-rates[static_cast<std::size_t>(mu)] * (static_cast<double>(m) * step));
  const CVector rhs = Eigen::Map<const CVector>(y.data(), M);
  const CVector g = Z.colPivHouseholderQr().solve(rhs);
  weights.assign(g.data(), g.data() + n);
  return M == 0 ? 0.0 : (Z * g - rhs).cwiseAbs().maxCoeff();
}

}  // namespace

PronyFit prony_fit_scalar(std::span<const Complex> samples, double step, std::size_t n_terms, std::size_t left,
                          std::size_t right) {
  PronyFit fit;
  fit.sum.channels = std::max(left, right) + 1;
  const auto M = static_cast<Eigen::Index>(samples.size());
  if (M == 0 || Eigen::Map<const CVector>(samples.data(), M).cwiseAbs().maxCoeff() == 0.0) return fit;
  const Eigen::Index P = M / 2;
  const auto n = static_cast<Eigen::Index>(n_terms);
  if (n < 1 || n > std::min(P, M - P)) throw InvalidInput("prony fit: term count incompatible with sample count");

  CMatrix Y(M - P, P + 1);
  for (Eigen::Index r = 0; r < Y.rows(); ++r)
    for (Eigen::Index c = 0; c < Y.cols(); ++c) Y(r, c) = samples[static_cast<std::size_t>(r + c)];
  Eigen::BDCSVD<CMatrix> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const CMatrix V = svd.matrixV().leftCols(n);
  const CMatrix V0h = V.topRows(P).adjoint();
  const CMatrix V1h = V.bottomRows(P).adjoint();
  const CMatrix pencil = V1h * V0h.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::ComplexEigenSolver<CMatrix> ces(pencil);

  std::vector<Complex> rates;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex z = ces.eigenvalues()(i);
    if (std::abs(z) < 1e-300) continue;
    Complex rate = -std::log(z) / step;
    if (rate.real() < 0.0) rate.real(0.0);
    rates.push_back(rate);
  }
  std::vector<Complex> weights;
  fit.max_residual = fit_amplitudes(samples, step, rates, weights);
  for (std::size_t i = 0; i < rates.size(); ++i) fit.sum.terms.push_back({left, right, weights[i], rates[i]});
  return fit;
}

namespace {

PronyFit prony_fit_impl(const Tabulated& tab, std::size_t n_terms) {
  if (!tab.is_stationary()) throw InvalidInput("prony fit needs a stationary tabulated kernel");
  PronyFit out;
  out.sum.channels = tab.channels;
  std::vector<Complex> y(tab.lags.size());
  for (std::size_t j = 0; j < tab.channels; ++j)
    for (std::size_t k = 0; k < tab.channels; ++k) {
      for (std::size_t n = 0; n < y.size(); ++n)
        y[n] = tab.lags[n](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
      auto fit = prony_fit_scalar(y, tab.step, n_terms, j, k);
      out.max_residual = std::max(out.max_residual, fit.max_residual);
      out.sum.terms.insert(out.sum.terms.end(), fit.sum.terms.begin(), fit.sum.terms.end());
    }
  return out;
}

}  // namespace

PronyFit prony_fit(const Tabulated& tab, std::size_t n_terms, double tolerance) {
  auto fit = prony_fit_impl(tab, n_terms);
  if (fit.max_residual > tolerance)
    throw NumericalRefusal("prony fit residual " + std::to_string(fit.max_residual) + " exceeds tolerance " +
                           std::to_string(tolerance) + " with " + std::to_string(n_terms) + " terms");
  return fit;
}

PronyFit prony_fit_adaptive(const Tabulated& tab, std::size_t max_terms, double tolerance) {
  PronyFit best;
  best.max_residual = std::numeric_limits<double>::infinity();
  for (std::size_t n = 1; n <= max_terms; ++n) {
    auto fit = prony_fit_impl(tab, n);
    if (fit.max_residual < best.max_residual) best = std::move(fit);
    if (best.max_residual <= tolerance) return best;
  }
  throw NumericalRefusal("prony fit: best residual " + std::to_string(best.max_residual) + " with up to " +
                         std::to_string(max_terms) + " terms exceeds tolerance " + std::to_string(tolerance));
}

bool is_real_kernel(const KernelSpec& spec, double tol) {
  if (const auto* p = std::get_if<PronySum>(&spec.form)) {
    // Real iff the multiset of terms is closed under complex conjugation.
    std::vector<bool> used(p->terms.size(), false);
    for (std::size_t a = 0; a < p->terms.size(); ++a) {
      if (used[a]) continue;
      const auto& t = p->terms[a];
      bool found = false;
      for (std::size_t b = a; b < p->terms.size() && !found; ++b) {
        const auto& u = p->terms[b];
        if (used[b] && b != a) continue;
        if (u.left == t.left && u.right == t.right && std::abs(u.weight - std::conj(t.weight)) <= tol &&
            std::abs(u.rate - std::conj(t.rate)) <= tol) {
          used[a] = used[b] = true;
          found = true;
        }
      }
      if (!found) return false;
    }
    return true;
  }
  if (const auto* s = std::get_if<StationarySpectrum>(&spec.form)) {
    for (Eigen::Index i = 0; i < s->omega.size(); ++i) {
      bool found = false;
      for (Eigen::Index k = 0; k < s->omega.size(); ++k)
        if (std::abs(s->omega(k) + s->omega(i)) <= 1e-12 * std::max(1.0, std::abs(s->omega(i)))) {
          found = max_abs(CMatrix(s->values[static_cast<std::size_t>(k)] -
                                  s->values[static_cast<std::size_t>(i)].conjugate())) <= tol;
          break;
        }
      if (!found) return false;
    }
    return true;
  }
  if (const auto* tl = std::get_if<TimeLocal>(&spec.form)) return max_abs(RMatrix(tl->matrix(0.0).imag())) <= tol;
  const auto& tab = std::get<Tabulated>(spec.form);
  for (const auto& v : tab.lags)
    if (max_abs(RMatrix(v.imag())) > tol) return false;
  return !tab.table || max_abs(RMatrix(tab.table->imag())) <= tol;
}

KernelSpec preset_S(const SChoice& choice, const KernelSpec& D) {
  switch (choice.kind) {
    case SKind::Unitary:
      if (!is_real_kernel(D)) throw InvalidInput("unitary S choice requires a real kernel D");
      return D;
    case SKind::QSD:
      return scaled(D, 0.0);
    case SKind::Collapse:
      if (!is_real_kernel(D)) throw InvalidInput("collapse S choice requires a real kernel D");
      return scaled(D, -1.0);
    case SKind::Custom: {
      if (!choice.custom) throw InvalidInput("custom S choice without a kernel");
      const auto& s = *choice.custom;
      if (s.channels() != D.channels()) throw InvalidInput("custom S kernel has a different channel count than D");
      if (s.is_time_local()) {
        const CMatrix m = std::get<TimeLocal>(s.form).matrix(0.0);
        if (max_abs(CMatrix(m - m.transpose())) > 1e-10 * std::max(1.0, max_abs(m)))
          throw InvalidInput("custom S matrix is not symmetric");
      } else {
        // Zero-lag symmetry check on a one-point grid.
        (void)symmetric_block(s, TimeGrid(1.0, 0));
      }
      return s;
    }
  }
  throw InvalidInput("unknown S choice");
}

PronySum memory_kernel(const KernelSpec& D, const SChoice& s_choice) {
  const auto* d = std::get_if<PronySum>(&D.form);
  if (!d) throw InvalidInput("memory kernel needs an exponential-sum D; run prony_fit first");
  PronySum k;
  k.channels = d->channels;
  switch (s_choice.kind) {
    case SKind::Unitary:
      if (!is_real_kernel(D)) throw InvalidInput("unitary S choice requires a real kernel D");
      return k;
    case SKind::QSD:
      k.terms = d->terms;
      return k;
    case SKind::Collapse:
      if (!is_real_kernel(D)) throw InvalidInput("collapse S choice requires a real kernel D");
      k.terms = d->terms;
      for (auto& t : k.terms) t.weight *= 2.0;
      return k;
    case SKind::Custom: {
      const auto* s = s_choice.custom ? std::get_if<PronySum>(&s_choice.custom->form) : nullptr;
      if (!s) throw InvalidInput("custom S must be an exponential sum for the hierarchy engine");
      k.terms = d->terms;
      for (auto t : s->terms) {
        t.weight = -t.weight;
        k.terms.push_back(t);
      }
      return k;
    }
  }
  return k;
}

KernelSpec ornstein_uhlenbeck(double gamma, double lambda) {
  PronySum p;
  p.channels = 1;
  p.terms.push_back({0, 0, Complex(0.5 * gamma * lambda, 0.0), Complex(lambda, 0.0)});
  return KernelSpec{p};
}

}  // namespace nmg
