#pragma once

// OPTICS ordering with an unbounded generating radius, reachability-cut
// cluster extraction, the DBCV validity index and DBCV-driven minPts choice.

#include <ostream>
#include <set>
#include <vector>

#include "trapsel/cluster/result.hpp"
#include "trapsel/common.hpp"

namespace trapsel {

struct ReachabilityOrdering {
  std::vector<Index> order;         // processing order, a permutation of [0, M)
  std::vector<double> reachability;  // indexed by point; +inf for each ordering seed
  std::vector<double> core_distance;  // indexed by point
  int min_pts = 0;
};

/// Distance to the min_pts-th nearest point, counting the point itself.
inline std::vector<double> core_distances(const Matrix& dist, int min_pts) {
  const Index m = dist.rows();
  std::vector<double> core(static_cast<std::size_t>(m));
  std::vector<double> row(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) row[static_cast<std::size_t>(j)] = dist(i, j);
    std::nth_element(row.begin(), row.begin() + (min_pts - 1), row.end());
    core[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(min_pts - 1)];
  }
  return core;
}

inline double reachability_distance(double core_p, double dist_pq) { return std::max(core_p, dist_pq); }

inline ReachabilityOrdering optics(const Matrix& x, int min_pts) {
  const Index m = x.rows();
  if (min_pts < 2) throw InvalidArgument("optics: minPts must be >= 2");
  if (min_pts > m) throw InvalidArgument("optics: minPts exceeds the number of points");
  const Matrix dist = pairwise_distances(x);
  ReachabilityOrdering out;
  out.min_pts = min_pts;
  out.core_distance = core_distances(dist, min_pts);
  out.reachability.assign(static_cast<std::size_t>(m), kInf);
  out.order.reserve(static_cast<std::size_t>(m));
  std::vector<char> processed(static_cast<std::size_t>(m), 0);

  // With an unbounded radius every point is a core point and every
  // unprocessed point is a neighbour, so the seed list is all unprocessed points.
  for (Index step = 0; step < m; ++step) {
    Index next = -1;
    for (Index q = 0; q < m; ++q) {
      if (processed[static_cast<std::size_t>(q)]) continue;
      if (next < 0 || out.reachability[static_cast<std::size_t>(q)] < out.reachability[static_cast<std::size_t>(next)]) next = q;
    }
    processed[static_cast<std::size_t>(next)] = 1;
    out.order.push_back(next);
    const double core = out.core_distance[static_cast<std::size_t>(next)];
    for (Index q = 0; q < m; ++q) {
      if (processed[static_cast<std::size_t>(q)]) continue;
      const double r = reachability_distance(core, dist(next, q));
      auto& slot = out.reachability[static_cast<std::size_t>(q)];
      if (r < slot) slot = r;
    }
  }
  return out;
}

/// Reachability plot as CSV: position in the ordering, point index, reachability.
inline void write_reachability_csv(const ReachabilityOrdering& ord, std::ostream& out) {
  out << "order_index,point,reachability\n";
  for (std::size_t i = 0; i < ord.order.size(); ++i) {
    const double r = ord.reachability[static_cast<std::size_t>(ord.order[i])];
    out << i << ',' << ord.order[i] << ',';
    if (std::isinf(r)) out << "inf";
    else out << r;
    out << '\n';
  }
}

/// Cuts the reachability plot at a quantile of its finite values. Each run of
/// points at or below the cut is a cluster; the point just before a run (the
/// spike that opens the valley) joins it. Remaining spike points join the
/// cluster of the nearest exemplar. Exemplars are cluster medoids.
inline ClusterResult extract_clusters(const Matrix& x, const ReachabilityOrdering& ord, double threshold_quantile = 0.75) {
  const Index m = x.rows();
  if (static_cast<Index>(ord.order.size()) != m) throw InvalidArgument("extract_clusters: ordering size mismatch");
  std::vector<double> finite;
  for (double r : ord.reachability)
    if (std::isfinite(r)) finite.push_back(r);

  ClusterResult out;
  out.method = ClusterMethod::OPTICS;
  std::vector<int> raw(static_cast<std::size_t>(m), -1);
  int clusters = 0;
  double cut = kInf;
  if (!finite.empty()) {
    cut = quantile(finite, threshold_quantile);
    int current = -1;
    for (std::size_t pos = 0; pos < ord.order.size(); ++pos) {
      const auto p = static_cast<std::size_t>(ord.order[pos]);
      const double r = ord.reachability[p];
      if (r <= cut) {
        if (current < 0) current = clusters++;
        raw[p] = current;
      } else {
        const bool opens = pos + 1 < ord.order.size() &&
                           ord.reachability[static_cast<std::size_t>(ord.order[pos + 1])] <= cut;
        if (opens) {
          current = clusters++;
          raw[p] = current;
        } else {
          current = -1;
        }
      }
    }
  }
  if (clusters == 0) {
    std::fill(raw.begin(), raw.end(), 0);
    clusters = 1;
    out.flags.emplace_back("no_finite_reachability");
  }

  std::vector<Index> exemplars(static_cast<std::size_t>(clusters));
  for (int c = 0; c < clusters; ++c) {
    std::vector<Index> members;
    for (Index i = 0; i < m; ++i)
      if (raw[static_cast<std::size_t>(i)] == c) members.push_back(i);
    exemplars[static_cast<std::size_t>(c)] = medoid(x, members);
  }
  for (Index i = 0; i < m; ++i) {
    if (raw[static_cast<std::size_t>(i)] >= 0) continue;
    int best = 0;
    double best_d = kInf;
    for (int c = 0; c < clusters; ++c) {
      const double d = distance(x, i, exemplars[static_cast<std::size_t>(c)]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    raw[static_cast<std::size_t>(i)] = best;
  }
  out.labels = raw;
  out.exemplars = std::move(exemplars);
  out.diagnostics = {{"min_pts", static_cast<double>(ord.min_pts)}, {"reachability_cut", cut}};
  return out;
}

struct DbcvScore {
  double value = -1.0;
  bool singleton_cluster = false;  // some cluster had one point and scored 0
};

namespace detail {

/// Prim's MST over the members of one cluster under mutual reachability.
/// Returns edges as (a, b, weight) in member-local indices.
struct MstEdge {
  std::size_t a, b;
  double w;
};

inline std::vector<MstEdge> prim_mst(const Matrix& mreach) {
  const auto n = static_cast<std::size_t>(mreach.rows());
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<char> in(n, 0);
  std::vector<double> best(n, kInf);
  std::vector<std::size_t> parent(n, 0);
  in[0] = 1;
  for (std::size_t j = 1; j < n; ++j) {
    best[j] = mreach(0, static_cast<Index>(j));
    parent[j] = 0;
  }
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j)
      if (!in[j] && (next == n || best[j] < best[next])) next = j;
    in[next] = 1;
    edges.push_back({parent[next], next, best[next]});
    for (std::size_t j = 0; j < n; ++j) {
      if (!in[j] && mreach(static_cast<Index>(next), static_cast<Index>(j)) < best[j]) {
        best[j] = mreach(static_cast<Index>(next), static_cast<Index>(j));
        parent[j] = next;
      }
    }
  }
  return edges;
}

}  // namespace detail

/// Density-based clustering validation index. Zero distances (duplicate
/// points) are floored at 1e-12 so core distances stay finite.
inline DbcvScore dbcv(const Matrix& x, std::span<const int> labels) {
  const Index m = x.rows();
  if (static_cast<Index>(labels.size()) != m) throw InvalidArgument("dbcv: label count mismatch");
  std::map<int, std::vector<Index>> clusters;
  for (Index i = 0; i < m; ++i) clusters[labels[static_cast<std::size_t>(i)]].push_back(i);
  DbcvScore score;
  if (clusters.size() < 2) return score;

  const double dim = static_cast<double>(std::max<Index>(1, x.cols()));
  const Matrix dist = pairwise_distances(x);
  auto floored = [](double d) { return std::max(d, 1e-12); };

  // All-points core distance within the point's own cluster.
  std::vector<double> apcd(static_cast<std::size_t>(m), 0.0);
  for (const auto& [label, members] : clusters) {
    const std::size_t n = members.size();
    if (n < 2) continue;
    for (Index p : members) {
      double acc = 0.0;
      for (Index q : members) {
        if (q == p) continue;
        acc += std::pow(1.0 / floored(dist(p, q)), dim);
      }
      apcd[static_cast<std::size_t>(p)] = std::pow(acc / static_cast<double>(n - 1), -1.0 / dim);
    }
  }
  auto mreach = [&](Index a, Index b) {
    return std::max({apcd[static_cast<std::size_t>(a)], apcd[static_cast<std::size_t>(b)], dist(a, b)});
  };

  // Density sparseness (largest internal MST edge) and internal nodes per cluster.
  struct Summary {
    double sparseness = 0.0;
    std::vector<Index> internal;
  };
  std::map<int, Summary> summaries;
  for (const auto& [label, members] : clusters) {
    Summary s;
    const std::size_t n = members.size();
    if (n < 2) {
      s.internal = members;
      summaries[label] = s;
      continue;
    }
    Matrix local(static_cast<Index>(n), static_cast<Index>(n));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        local(static_cast<Index>(a), static_cast<Index>(b)) = a == b ? 0.0 : mreach(members[a], members[b]);
    const auto edges = detail::prim_mst(local);
    std::vector<int> degree(n, 0);
    for (const auto& e : edges) {
      ++degree[e.a];
      ++degree[e.b];
    }
    for (std::size_t a = 0; a < n; ++a)
      if (degree[a] > 1) s.internal.push_back(members[a]);
    bool any_internal_edge = false;
    for (const auto& e : edges) {
      if (degree[e.a] > 1 && degree[e.b] > 1) {
        s.sparseness = std::max(s.sparseness, e.w);
        any_internal_edge = true;
      }
    }
    if (!any_internal_edge) {
      for (const auto& e : edges) s.sparseness = std::max(s.sparseness, e.w);
    }
    if (s.internal.empty()) s.internal = members;
    summaries[label] = std::move(s);
  }

  double total = 0.0;
  for (const auto& [label, members] : clusters) {
    if (members.size() < 2) {
      score.singleton_cluster = true;
      continue;
    }
    const auto& own = summaries[label];
    double separation = kInf;
    for (const auto& [other, other_summary] : summaries) {
      if (other == label) continue;
      for (Index a : own.internal)
        for (Index b : other_summary.internal) separation = std::min(separation, mreach(a, b));
    }
    const double denom = std::max(separation, own.sparseness);
    const double validity = denom > 0.0 ? (separation - own.sparseness) / denom : 0.0;
    total += static_cast<double>(members.size()) / static_cast<double>(m) * validity;
  }
  score.value = total;
  return score;
}

/// Default candidate set {2, 3, 5, max(5, ceil(ln M))} clipped to [2, M].
inline std::vector<int> default_minpts_candidates(Index m) {
  std::set<int> c;
  for (int v : {2, 3, 5, std::max(5, static_cast<int>(std::ceil(std::log(static_cast<double>(std::max<Index>(m, 1))))))}) {
    c.insert(static_cast<int>(std::clamp<Index>(v, 2, std::max<Index>(m, 2))));
  }
  return {c.begin(), c.end()};
}

struct MinPtsSelection {
  int min_pts = 0;
  ClusterResult clustering;
  std::vector<std::pair<int, double>> scores;
};

inline MinPtsSelection select_minpts(const Matrix& x, std::vector<int> candidates, double threshold_quantile = 0.75) {
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  MinPtsSelection best;
  double best_score = -kInf;
  for (int mp : candidates) {
    if (mp < 2 || mp > x.rows()) continue;
    auto clustering = extract_clusters(x, optics(x, mp), threshold_quantile);
    const auto s = dbcv(x, clustering.labels);
    best.scores.emplace_back(mp, s.value);
    if (s.value > best_score) {
      best_score = s.value;
      best.min_pts = mp;
      clustering.diagnostics["dbcv"] = s.value;
      if (s.singleton_cluster) clustering.flags.emplace_back("dbcv_singleton_cluster");
      best.clustering = std::move(clustering);
    }
  }
  if (best.min_pts == 0) throw InvalidArgument("select_minpts: no candidate lies in [2, M]");
  return best;
}

}  // namespace trapsel
