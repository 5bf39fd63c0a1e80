#pragma once

#include <vector>

#include "trapsel/cluster/result.hpp"
#include "trapsel/common.hpp"

namespace trapsel {

/// Quantile of the pairwise Euclidean distances, floored at 1e-6.
inline double estimate_bandwidth(const Matrix& x, double quantile_level = 0.3) {
  if (x.rows() < 2) throw InvalidArgument("estimate_bandwidth needs at least two points");
  if (!(quantile_level > 0.0 && quantile_level <= 1.0)) throw InvalidArgument("quantile must lie in (0, 1]");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) d.push_back(distance(x, i, j));
  return std::max(quantile(std::move(d), quantile_level), 1e-6);
}

struct MeanShiftOptions {
  int max_iter = 300;
  double tol = 1e-6;
};

/// Gaussian-kernel mean-shift vector m(x) = sum K(x_j - x) x_j / sum K(x_j - x) - x.
inline Vector mean_shift_vector(const Matrix& x, const Vector& at, double bandwidth) {
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  Vector acc = Vector::Zero(x.cols());
  double wsum = 0.0;
  for (Index j = 0; j < x.rows(); ++j) {
    const double w = std::exp(-(x.row(j).transpose() - at).squaredNorm() * inv);
    acc += w * x.row(j).transpose();
    wsum += w;
  }
  if (wsum <= 0.0) return Vector::Zero(x.cols());
  return acc / wsum - at;
}

inline ClusterResult mean_shift(const Matrix& x, double bandwidth, const MeanShiftOptions& opt = {}) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw InvalidArgument("bandwidth must be positive");
  if (x.rows() < 1) throw InvalidArgument("mean_shift: empty dataset");
  if (!all_finite(x)) throw InvalidArgument("mean_shift: non-finite input");
  const Index m = x.rows();
  Matrix converged(m, x.cols());
  int max_steps = 0;
  int unconverged = 0;
  for (Index i = 0; i < m; ++i) {
    Vector p = x.row(i).transpose();
    int steps = 0;
    bool done = false;
    while (steps < opt.max_iter) {
      const Vector shift = mean_shift_vector(x, p, bandwidth);
      if (shift.norm() < opt.tol) {
        done = true;
        break;
      }
      p += shift;
      ++steps;
    }
    if (!done) ++unconverged;
    max_steps = std::max(max_steps, steps);
    converged.row(i) = p.transpose();
  }

  // Group converged points whose modes lie within bandwidth / 2 of a cluster's mode.
  const double merge = bandwidth / 2.0;
  std::vector<int> raw(static_cast<std::size_t>(m));
  std::vector<Index> mode_rows;
  for (Index i = 0; i < m; ++i) {
    int found = -1;
    double best = kInf;
    for (std::size_t c = 0; c < mode_rows.size(); ++c) {
      const double d = (converged.row(i) - converged.row(mode_rows[c])).norm();
      if (d <= merge && d < best) {
        best = d;
        found = static_cast<int>(c);
      }
    }
    if (found < 0) {
      found = static_cast<int>(mode_rows.size());
      mode_rows.push_back(i);
    }
    raw[static_cast<std::size_t>(i)] = found;
  }

  auto result = compact_labels(raw, [&](int c) {
    const Vector mode = converged.row(mode_rows[static_cast<std::size_t>(c)]).transpose();
    Index best = -1;
    double best_d = kInf;
    for (Index i = 0; i < m; ++i) {
      if (raw[static_cast<std::size_t>(i)] != c) continue;
      const double d = (x.row(i).transpose() - mode).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  });
  result.method = ClusterMethod::MeanShift;
  result.centers = Matrix(static_cast<Index>(mode_rows.size()), x.cols());
  for (std::size_t c = 0; c < mode_rows.size(); ++c) {
    result.centers.row(static_cast<Index>(c)) = converged.row(mode_rows[c]);
  }
  result.diagnostics = {{"bandwidth", bandwidth},
                        {"max_shift_iterations", static_cast<double>(max_steps)},
                        {"unconverged_points", static_cast<double>(unconverged)}};
  if (unconverged > 0) result.flags.emplace_back("not_converged");
  return result;
}

}  // namespace trapsel
