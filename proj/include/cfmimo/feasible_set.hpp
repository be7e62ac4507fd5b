#pragma once

// The feasible set S = { mu >= 0, ||mu_m||^2 <= 1/N for every AP row m }.
// Projection onto S splits by row: clip to the nonnegative orthant, then
// scale back onto the ball of radius sqrt(1/N) if needed.

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfmimo/model.hpp"

namespace cfmimo {

// Per-(AP, user) selection; unselected entries are pinned to zero.
using ApMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

// Scales the already clipped rows [r0, r0 + n) of mu back onto the ball.
inline void scale_rows_into_ball(PowerAllocation& mu, Eigen::Index r0, Eigen::Index n, double radius) {
  const Eigen::Index M = mu.rows();
  double sq[kRowBlock] = {};
  for (Eigen::Index k = 0; k < mu.cols(); ++k) {
    const double* x = mu.data() + k * M + r0;
    for (Eigen::Index m = 0; m < n; ++m) sq[m] += x[m] * x[m];
  }
  constexpr double shrink = 1.0 - 2.0 * std::numeric_limits<double>::epsilon();
  for (Eigen::Index m = 0; m < n; ++m) {
    const double norm = std::sqrt(sq[m]);
    if (norm <= radius) continue;
    auto row = mu.row(r0 + m);
    row *= radius / norm;
    // Rounding may leave the row a hair outside the ball; shrink it by a few
    // ulps until a second projection is the identity. Same summation order as above.
    for (;;) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < mu.cols(); ++k) acc += row(k) * row(k);
      if (std::sqrt(acc) <= radius) break;
      row *= shrink;
    }
  }
}

}  // namespace detail

// Writes the projection of x into out one block of kRowBlock AP rows at a
// time and calls on_block(r0, n) after each, while the block is still cached.
template <typename Derived, typename OnBlock>
void project_blocks(const Eigen::MatrixBase<Derived>& x, int N, const ApMask* mask, PowerAllocation& out,
                    OnBlock&& on_block) {
  const double radius = std::sqrt(1.0 / static_cast<double>(N));
  out.resize(x.rows(), x.cols());
  for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += kRowBlock) {
    const Eigen::Index n = std::min(kRowBlock, x.rows() - r0);
    if (mask != nullptr)
      out.middleRows(r0, n) = mask->middleRows(r0, n).select(x.middleRows(r0, n).array().cwiseMax(0.0), 0.0).matrix();
    else
      out.middleRows(r0, n) = x.middleRows(r0, n).cwiseMax(0.0);
    detail::scale_rows_into_ball(out, r0, n, radius);
    on_block(r0, n);
  }
}

template <typename Derived>
PowerAllocation project(const Eigen::MatrixBase<Derived>& x, int N, const ApMask* mask = nullptr) {
  PowerAllocation mu;
  project_blocks(x, N, mask, mu, [](Eigen::Index, Eigen::Index) {});
  return mu;
}

inline bool is_feasible(const PowerAllocation& mu, int N, double tol = 1e-9) {
  if ((mu.array() < -tol).any()) return false;
  const double cap = 1.0 / static_cast<double>(N) + tol;
  return (row_squared_norms(mu).array() <= cap).all();
}

}  // namespace cfmimo
