#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "trapsel/common.hpp"

namespace oracle {

using trapsel::Index;
using trapsel::Matrix;
using trapsel::Vector;

inline double dist(const Matrix& x, Index a, Index b) {
  double acc = 0.0;
  for (Index c = 0; c < x.cols(); ++c) {
    const double d = x(a, c) - x(b, c);
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct Optics {
  std::vector<Index> order;
  std::vector<double> reachability;
  std::vector<double> core;
};

/// OPTICS with an unbounded radius, re-deriving every reachability from
/// scratch at each step: reach(q) = min over processed p of max(core(p), d(p, q)).
inline Optics optics(const Matrix& x, int min_pts) {
  const Index m = x.rows();
  Optics o;
  o.core.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    std::vector<double> row;
    for (Index j = 0; j < m; ++j) row.push_back(i == j ? 0.0 : dist(x, std::min(i, j), std::max(i, j)));
    std::sort(row.begin(), row.end());
    o.core[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(min_pts - 1)];
  }
  o.reachability.assign(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  std::vector<bool> done(static_cast<std::size_t>(m), false);
  for (Index step = 0; step < m; ++step) {
    std::vector<double> reach(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    for (Index q = 0; q < m; ++q) {
      if (done[static_cast<std::size_t>(q)]) continue;
      for (Index p : o.order) {
        const double d = dist(x, std::min(p, q), std::max(p, q));
        reach[static_cast<std::size_t>(q)] = std::min(reach[static_cast<std::size_t>(q)], std::max(o.core[static_cast<std::size_t>(p)], d));
      }
    }
    Index pick = -1;
    for (Index q = 0; q < m; ++q) {
      if (done[static_cast<std::size_t>(q)]) continue;
      if (pick < 0 || reach[static_cast<std::size_t>(q)] < reach[static_cast<std::size_t>(pick)]) pick = q;
    }
    done[static_cast<std::size_t>(pick)] = true;
    o.reachability[static_cast<std::size_t>(pick)] = reach[static_cast<std::size_t>(pick)];
    o.order.push_back(pick);
  }
  return o;
}

/// Net similarity: exemplars score the diagonal, other points their best exemplar.
inline double net_similarity(const Matrix& s, const std::vector<Index>& exemplars) {
  double total = 0.0;
  for (Index i = 0; i < s.rows(); ++i) {
    if (std::find(exemplars.begin(), exemplars.end(), i) != exemplars.end()) {
      total += s(i, i);
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (Index e : exemplars) best = std::max(best, s(i, e));
    total += best;
  }
  return total;
}

/// Best net similarity over every non-empty exemplar subset.
inline double best_net_similarity(const Matrix& s) {
  const Index m = s.rows();
  double best = -std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1U << m); ++mask) {
    std::vector<Index> ex;
    for (Index i = 0; i < m; ++i)
      if (mask & (1U << i)) ex.push_back(i);
    best = std::max(best, net_similarity(s, ex));
  }
  return best;
}

/// Mixture density by the textbook formula with explicit inverse and determinant.
inline double gaussian_pdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  const double d = static_cast<double>(x.size());
  const Vector diff = x - mu;
  const double q = diff.dot(cov.inverse() * diff);
  return std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * M_PI, d) * cov.determinant());
}

/// DBCV with Kruskal's MST and union-find.
inline double dbcv(const Matrix& x, const std::vector<int>& labels) {
  const Index m = x.rows();
  std::map<int, std::vector<Index>> groups;
  for (Index i = 0; i < m; ++i) groups[labels[static_cast<std::size_t>(i)]].push_back(i);
  if (groups.size() < 2) return -1.0;
  const double dim = static_cast<double>(x.cols());
  auto d = [&](Index a, Index b) { return dist(x, std::min(a, b), std::max(a, b)); };
  std::vector<double> core(static_cast<std::size_t>(m), 0.0);
  for (const auto& [l, mem] : groups) {
    if (mem.size() < 2) continue;
    for (Index p : mem) {
      double s = 0.0;
      for (Index q : mem)
        if (q != p) s += std::pow(1.0 / std::max(d(p, q), 1e-12), dim);
      core[static_cast<std::size_t>(p)] = std::pow(s / static_cast<double>(mem.size() - 1), -1.0 / dim);
    }
  }
  auto mr = [&](Index a, Index b) {
    return std::max({core[static_cast<std::size_t>(a)], core[static_cast<std::size_t>(b)], d(a, b)});
  };
  struct Info {
    double dsc = 0.0;
    std::vector<Index> internal;
  };
  std::map<int, Info> info;
  for (const auto& [l, mem] : groups) {
    Info inf;
    const std::size_t n = mem.size();
    struct E {
      double w;
      std::size_t a, b;
    };
    std::vector<E> all;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) all.push_back({mr(mem[a], mem[b]), a, b});
    std::sort(all.begin(), all.end(), [](const E& p, const E& q) { return p.w < q.w; });
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    std::vector<E> tree;
    for (const auto& e : all) {
      const auto ra = find(e.a), rb = find(e.b);
      if (ra == rb) continue;
      parent[ra] = rb;
      tree.push_back(e);
    }
    std::vector<int> deg(n, 0);
    for (const auto& e : tree) ++deg[e.a], ++deg[e.b];
    for (std::size_t a = 0; a < n; ++a)
      if (deg[a] > 1) inf.internal.push_back(mem[a]);
    bool any = false;
    for (const auto& e : tree)
      if (deg[e.a] > 1 && deg[e.b] > 1) inf.dsc = std::max(inf.dsc, e.w), any = true;
    if (!any)
      for (const auto& e : tree) inf.dsc = std::max(inf.dsc, e.w);
    if (inf.internal.empty()) inf.internal = mem;
    info[l] = inf;
  }
  double total = 0.0;
  for (const auto& [l, mem] : groups) {
    if (mem.size() < 2) continue;
    double dspc = std::numeric_limits<double>::infinity();
    for (const auto& [o, oi] : info) {
      if (o == l) continue;
      for (Index a : info[l].internal)
        for (Index b : oi.internal) dspc = std::min(dspc, mr(a, b));
    }
    const double v = (dspc - info[l].dsc) / std::max(dspc, info[l].dsc);
    total += static_cast<double>(mem.size()) / static_cast<double>(m) * v;
  }
  return total;
}

}  // namespace oracle
