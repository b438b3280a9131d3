#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nmg/core.hpp"
#include "nmg/hilbert.hpp"

namespace nmg {

/// One exponential term g * exp(-rate * (tau - s)), tau >= s, contributing to
/// the (left, right) channel entry of a two-time kernel.
struct PronyTerm {
  std::size_t left = 0;
  std::size_t right = 0;
  Complex weight;
  Complex rate;
};

struct PronySum {
  std::size_t channels = 1;
  std::vector<PronyTerm> terms;

  /// J x J value at lag tau - s >= 0.
  CMatrix lag_value(double lag) const;
};

/// Frequency samples of the spectral matrix; kernel(lag) = (1/2pi) int e^{-i w lag} D~(w) dw.
struct StationarySpectrum {
  std::size_t channels = 1;
  RVector omega;                ///< strictly increasing
  std::vector<CMatrix> values;  ///< one J x J Hermitian PSD matrix per frequency
};

/// D_jk(t) delta(tau - s). Only the Markovian engines accept it.
struct TimeLocal {
  std::size_t channels = 1;
  std::function<CMatrix(double)> matrix;
};

/// Sampled kernel, either stationary (lags n * step, n >= 0) or a full
/// two-time table on a grid with flat index n * J + j.
struct Tabulated {
  std::size_t channels = 1;
  double step = 0.0;
  std::vector<CMatrix> lags;     ///< stationary form
  std::optional<CMatrix> table;  ///< two-time form

  static Tabulated stationary(std::size_t channels, double step, std::vector<CMatrix> lags);
  static Tabulated two_time(std::size_t channels, double step, CMatrix table);
  bool is_stationary() const { return !table.has_value(); }
};

struct KernelSpec {
  std::variant<PronySum, StationarySpectrum, TimeLocal, Tabulated> form;

  std::size_t channels() const;
  bool is_time_local() const { return std::holds_alternative<TimeLocal>(form); }
};

/// c * kernel, for every representation.
KernelSpec scaled(const KernelSpec& spec, Complex c);

enum class SKind { Unitary, QSD, Collapse, Custom };

/// Choice of the symmetric correlation S = E[phi phi] that selects the unravelling.
struct SChoice {
  SKind kind = SKind::QSD;
  std::optional<KernelSpec> custom;

  static SChoice unitary() { return {SKind::Unitary, std::nullopt}; }
  static SChoice qsd() { return {SKind::QSD, std::nullopt}; }
  static SChoice collapse() { return {SKind::Collapse, std::nullopt}; }
  static SChoice from(KernelSpec s) { return {SKind::Custom, std::move(s)}; }
};

std::string to_string(SKind kind);
SKind parse_s_kind(const std::string& name);

/// Kernel values on a grid. D and S are the unweighted (N+1)J square blocks
/// with flat index n * J + j; the quadrature weights are kept separately.
struct DiscretizedKernels {
  TimeGrid grid;
  std::size_t channels = 1;
  CMatrix D;
  CMatrix S;
  RVector weights;
  double psd_min_eigenvalue = 0.0;

  Eigen::Index flat(std::size_t n, std::size_t j) const {
    return static_cast<Eigen::Index>(n * channels + j);
  }
  Complex d(std::size_t n, std::size_t j, std::size_t m, std::size_t k) const { return D(flat(n, j), flat(m, k)); }
  Complex s(std::size_t n, std::size_t j, std::size_t m, std::size_t k) const { return S(flat(n, j), flat(m, k)); }

  /// D_{jk}(t_n, s_m) w_n w_m.
  CMatrix weighted_D() const;
  CMatrix weighted_S() const;
};

struct DiscretizeOptions {
  double psd_tolerance = 1e-8;  ///< relative to the largest diagonal entry
  bool certify = true;
};

/// Samples D and the chosen S on the grid and certifies [[D, S], [S*, D*]] >= 0.
/// Throws InvalidInput for time-local kernels and NumericalRefusal when the
/// certificate fails.
DiscretizedKernels discretize(const KernelSpec& spec, const SChoice& s_choice, const TimeGrid& grid,
                              const DiscretizeOptions& options = {});

/// (N+1)J block of D_{jk}(t_n, t_m), extended to tau < s by Hermitian reflection.
CMatrix hermitian_block(const KernelSpec& spec, const TimeGrid& grid);
/// Same for a symmetric kernel (reflection without conjugation).
CMatrix symmetric_block(const KernelSpec& spec, const TimeGrid& grid);

struct PsdReport {
  double min_eigenvalue = 0.0;
  double scale = 0.0;
  double tolerance = 0.0;
  bool accepted = false;
};

/// Smallest eigenvalue of [[D, S], [S*, D*]] against -tol * max diagonal.
PsdReport validate_psd(const DiscretizedKernels& k, double tol = 1e-8);
PsdReport validate_psd(const CMatrix& D, const CMatrix& S, double tol = 1e-8);

/// Trapezoidal Fourier quadrature of the spectrum onto the lags of the grid.
Tabulated spectrum_to_kernel(const StationarySpectrum& spec, const TimeGrid& grid);

/// D~(w) = int e^{i w lag} D(lag) dlag over [-T, T] by the trapezoid rule,
/// for a stationary table.
CMatrix kernel_to_spectrum(const Tabulated& tab, double omega);

struct PronyFit {
  PronySum sum;
  double max_residual = 0.0;
};

/// Matrix-pencil exponential fit of one sampled lag function y(n * step).
PronyFit prony_fit_scalar(std::span<const Complex> samples, double step, std::size_t n_terms,
                          std::size_t left = 0, std::size_t right = 0);

/// Fits every nonzero channel pair of a stationary table with n_terms
/// exponentials. Throws NumericalRefusal if the residual exceeds tolerance.
PronyFit prony_fit(const Tabulated& tab, std::size_t n_terms, double tolerance);

/// Smallest term count (up to max_terms) meeting the tolerance.
PronyFit prony_fit_adaptive(const Tabulated& tab, std::size_t max_terms, double tolerance);

/// S kernel for a preset tag: D, 0 or -D; Custom is validated for symmetry and
/// passed through.
KernelSpec preset_S(const SChoice& choice, const KernelSpec& D);

/// Exponential-sum form of the memory kernel D - S restricted to tau > s.
/// Requires Prony forms for D (and for a custom S).
PronySum memory_kernel(const KernelSpec& D, const SChoice& s_choice);

/// True when the kernel values are real (checked exactly where the
/// representation allows it).
bool is_real_kernel(const KernelSpec& spec, double tol = 1e-10);

/// gamma * lambda / 2 * exp(-lambda |tau - s|) on one channel.
KernelSpec ornstein_uhlenbeck(double gamma, double lambda);

}  // namespace nmg
