#pragma once

#include "nmg/core.hpp"

namespace nmg::detail {

/// Q(n) = sum_{m,l <= n} w^n_m w^n_l T(m, l) for every n, where w^n are the
/// trapezoidal weights of [0, t_n] on a uniform grid. O(N^2) overall.
inline CVector trapezoid_prefix_double_sums(const CMatrix& T, double dt) {
  const Eigen::Index count = T.rows();
  CVector q = CVector::Zero(count);
  if (count < 2) return q;
  // Running sums over the leading (n+1) x (n+1) square.
  Complex total = T(0, 0);
  Complex row0 = T(0, 0), col0 = T(0, 0);
  const double h2 = dt * dt;
  for (Eigen::Index n = 1; n < count; ++n) {
    const Complex row_n = T.row(n).head(n + 1).sum();
    const Complex col_n = T.col(n).head(n + 1).sum();
    total += row_n + col_n - T(n, n);
    row0 += T(0, n);
    col0 += T(n, 0);
    // w^n = dt (1 - e_0/2 - e_n/2)
    q(n) = h2 * total - 0.5 * h2 * (row0 + row_n + col0 + col_n) +
           0.25 * h2 * (T(0, 0) + T(0, n) + T(n, 0) + T(n, n));
  }
  return q;
}

}  // namespace nmg::detail
