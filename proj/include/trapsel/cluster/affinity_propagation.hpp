#pragma once

// Affinity propagation: exemplar selection by responsibility/availability
// message passing over a dense similarity matrix.

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "trapsel/cluster/result.hpp"
#include "trapsel/common.hpp"

namespace trapsel {

/// s(i,k) = -||x_i - x_k||^2 off the diagonal, `preference` on it.
struct SimilarityMatrix {
  Matrix values;
  double preference = 0.0;
};

/// `preference` unset means the median of the off-diagonal similarities.
inline SimilarityMatrix similarity_matrix(const Matrix& x, std::optional<double> preference = std::nullopt) {
  if (x.rows() < 1) throw InvalidArgument("similarity_matrix: empty dataset");
  if (!all_finite(x)) throw InvalidArgument("similarity_matrix: non-finite input");
  const Index m = x.rows();
  SimilarityMatrix s;
  s.values = Matrix::Zero(m, m);
  std::vector<double> off;
  off.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Index i = 0; i < m; ++i) {
    for (Index k = i + 1; k < m; ++k) {
      const double v = -squared_distance(x, i, k);
      s.values(i, k) = s.values(k, i) = v;
      off.push_back(v);
    }
  }
  s.preference = preference ? *preference : (off.empty() ? 0.0 : median(off));
  s.values.diagonal().setConstant(s.preference);
  return s;
}

struct AffinityPropagationOptions {
  double damping = 0.9;
  int max_iter = 1000;
  int convergence_iter = 15;
  // Seed for the relative 1e-16-scale jitter that breaks exact similarity ties
  // (a median preference always equals some off-diagonal value when M(M-1)/2 is odd).
  std::uint64_t jitter_seed = 0;
};

namespace detail {

inline ClusterResult assign_to_exemplars(const Matrix& s, std::vector<Index> exemplars) {
  const Index m = s.rows();
  std::vector<int> labels(static_cast<std::size_t>(m), 0);
  for (Index i = 0; i < m; ++i) {
    int best = 0;
    for (std::size_t c = 0; c < exemplars.size(); ++c) {
      if (exemplars[c] == i) {
        best = static_cast<int>(c);
        break;
      }
      if (s(i, exemplars[c]) > s(i, exemplars[static_cast<std::size_t>(best)])) best = static_cast<int>(c);
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  ClusterResult r;
  r.labels = std::move(labels);
  r.exemplars = std::move(exemplars);
  r.method = ClusterMethod::AP;
  return r;
}

}  // namespace detail

inline ClusterResult affinity_propagation(const SimilarityMatrix& sim, const AffinityPropagationOptions& opt = {}) {
  if (!(opt.damping >= 0.5 && opt.damping < 1.0)) throw InvalidArgument("damping must lie in [0.5, 1)");
  if (opt.max_iter < 1 || opt.convergence_iter < 1) throw InvalidArgument("iteration bounds must be positive");
  const Matrix& s = sim.values;
  const Index m = s.rows();
  if (m < 1 || s.cols() != m) throw InvalidArgument("similarity matrix must be square and non-empty");

  if (m == 1) {
    auto r = detail::assign_to_exemplars(s, {0});
    r.diagnostics = {{"iterations", 0.0}, {"converged", 1.0}, {"preference", sim.preference}};
    return r;
  }

  // All pairs equally similar: messages carry no information. The optimum is
  // every point its own exemplar when the preference beats the common
  // similarity, otherwise a single cluster.
  {
    const double first = s(0, 1);
    bool equal = true;
    for (Index i = 0; i < m && equal; ++i) {
      for (Index k = 0; k < m; ++k) {
        if (i != k && s(i, k) != first) {
          equal = false;
          break;
        }
      }
    }
    if (equal) {
      std::vector<Index> ex;
      if (sim.preference > first) {
        for (Index i = 0; i < m; ++i) ex.push_back(i);
      } else {
        ex.push_back(0);
      }
      auto r = detail::assign_to_exemplars(s, std::move(ex));
      r.diagnostics = {{"iterations", 0.0}, {"converged", 1.0}, {"preference", sim.preference}};
      r.flags.push_back("equal_similarities");
      return r;
    }
  }

  const auto n = static_cast<std::size_t>(m);
  // Row-major working copies; Eigen's default layout is column-major.
  std::vector<double> S(n * n), R(n * n, 0.0), A(n * n, 0.0), col_pos(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) S[i * n + k] = s(static_cast<Index>(i), static_cast<Index>(k));
  {
    Rng jitter(opt.jitter_seed);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr double tiny = std::numeric_limits<double>::min();
    for (double& v : S) v += (eps * v + tiny * 100.0) * standard_normal(jitter);
  }

  const double lam = opt.damping;
  std::vector<char> exemplar(n, 0), previous(n, 0);
  int stable = 0;
  int it = 0;
  bool converged = false;
  for (it = 1; it <= opt.max_iter; ++it) {
    // Responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k')).
    for (std::size_t i = 0; i < n; ++i) {
      const double* srow = &S[i * n];
      const double* arow = &A[i * n];
      double* rrow = &R[i * n];
      double best = -kInf, second = -kInf;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = arow[k] + srow[k];
        if (v > best) {
          second = best;
          best = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double fresh = srow[k] - (k == arg ? second : best);
        rrow[k] = lam * rrow[k] + (1.0 - lam) * fresh;
      }
    }
    // Availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k))),
    // a(k,k) = sum_{i' != k} max(0, r(i',k)).
    std::fill(col_pos.begin(), col_pos.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* rrow = &R[i * n];
      for (std::size_t k = 0; k < n; ++k) {
        if (i != k && rrow[k] > 0.0) col_pos[k] += rrow[k];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* rrow = &R[i * n];
      double* arow = &A[i * n];
      for (std::size_t k = 0; k < n; ++k) {
        double fresh;
        if (i == k) {
          fresh = col_pos[k];
        } else {
          fresh = std::min(0.0, R[k * n + k] + col_pos[k] - std::max(0.0, rrow[k]));
        }
        arow[k] = lam * arow[k] + (1.0 - lam) * fresh;
      }
    }

    std::size_t count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      exemplar[k] = (R[k * n + k] + A[k * n + k] > 0.0) ? 1 : 0;
      count += static_cast<std::size_t>(exemplar[k]);
    }
    stable = (exemplar == previous) ? stable + 1 : 0;
    previous = exemplar;
    if (count > 0 && stable >= opt.convergence_iter) {
      converged = true;
      break;
    }
  }
  const int iterations = std::min(it, opt.max_iter);

  std::vector<Index> ex;
  for (std::size_t k = 0; k < n; ++k)
    if (exemplar[k]) ex.push_back(static_cast<Index>(k));

  std::vector<std::string> flags;
  if (ex.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (R[k * n + k] + A[k * n + k] > R[best * n + best] + A[best * n + best]) best = k;
    }
    ex.push_back(static_cast<Index>(best));
    flags.emplace_back("no_exemplar_fallback");
  }
  if (!converged) flags.emplace_back("not_converged");

  auto r = detail::assign_to_exemplars(s, std::move(ex));
  r.diagnostics = {{"iterations", static_cast<double>(iterations)},
                   {"converged", converged ? 1.0 : 0.0},
                   {"preference", sim.preference}};
  r.flags = std::move(flags);
  return r;
}

/// Net similarity of an exemplar set: exemplars contribute the preference,
/// every other point its best similarity to an exemplar.
inline double net_similarity(const SimilarityMatrix& sim, std::span<const Index> exemplars) {
  const Index m = sim.values.rows();
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    double best = -kInf;
    for (Index e : exemplars) {
      if (e == i) {
        best = sim.preference;
        break;
      }
      best = std::max(best, sim.values(i, e));
    }
    total += best;
  }
  return total;
}

}  // namespace trapsel
