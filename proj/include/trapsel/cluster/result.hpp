#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trapsel/common.hpp"

namespace trapsel {

enum class ClusterMethod { AP, MeanShift, GMM, OPTICS };

inline std::string to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::AP: return "AP";
    case ClusterMethod::MeanShift: return "MeanShift";
    case ClusterMethod::GMM: return "GMM";
    case ClusterMethod::OPTICS: return "OPTICS";
  }
  return "?";
}

/// Hard partition of a dataset with one exemplar (a dataset row) per cluster.
struct ClusterResult {
  std::vector<int> labels;        // label[i] in [0, K)
  std::vector<Index> exemplars;   // exemplars[k] is the row representing cluster k
  ClusterMethod method = ClusterMethod::AP;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> flags;
  Matrix centers;  // optional: modes / means, one row per cluster

  [[nodiscard]] std::size_t k() const { return exemplars.size(); }
  [[nodiscard]] bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

/// Throws when the labels/exemplars pair breaks the partition contract.
inline void validate(const ClusterResult& r, std::size_t m) {
  const std::size_t k = r.exemplars.size();
  if (r.labels.size() != m) throw Error("cluster result: label count mismatch");
  if (k < 1 || k > m) throw Error("cluster result: cluster count out of range");
  std::set<Index> seen;
  for (std::size_t c = 0; c < k; ++c) {
    const Index e = r.exemplars[c];
    if (e < 0 || static_cast<std::size_t>(e) >= m) throw Error("cluster result: exemplar out of range");
    if (!seen.insert(e).second) throw Error("cluster result: duplicate exemplar");
    if (r.labels[static_cast<std::size_t>(e)] != static_cast<int>(c)) {
      throw Error("cluster result: exemplar not in its own cluster");
    }
  }
  for (int l : r.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw Error("cluster result: label out of range");
  }
}

/// Renumbers clusters so they appear in order of first member, dropping empty ones.
/// `exemplar_of` supplies an exemplar for each surviving old label.
template <class ExemplarFn>
ClusterResult compact_labels(const std::vector<int>& raw, ExemplarFn exemplar_of) {
  ClusterResult out;
  std::map<int, int> remap;
  out.labels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(raw[i], static_cast<int>(remap.size()));
    out.labels[i] = it->second;
  }
  out.exemplars.resize(remap.size());
  for (const auto& [old_label, new_label] : remap) {
    out.exemplars[static_cast<std::size_t>(new_label)] = exemplar_of(old_label);
  }
  return out;
}

/// Row minimizing summed distance to the other members; ties go to the lower index.
inline Index medoid(const Matrix& x, std::span<const Index> members) {
  if (members.empty()) throw InvalidArgument("medoid of empty set");
  Index best = members.front();
  double best_cost = kInf;
  for (Index a : members) {
    double cost = 0.0;
    for (Index b : members) cost += distance(x, a, b);
    if (cost < best_cost) {
      best_cost = cost;
      best = a;
    }
  }
  return best;
}

inline nlohmann::json to_json(const ClusterResult& r) {
  nlohmann::json diag = nlohmann::json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = v;
  return {{"method", to_string(r.method)},
          {"k", r.k()},
          {"labels", r.labels},
          {"exemplars", r.exemplars},
          {"diagnostics", diag},
          {"flags", r.flags}};
}

}  // namespace trapsel
