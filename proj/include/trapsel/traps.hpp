#pragma once

// Endpoint-wide trap selection: cluster every eligible directory, take the
// exemplar files as traps, rename them and persist the list.

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "trapsel/cluster.hpp"
#include "trapsel/common.hpp"
#include "trapsel/features.hpp"

namespace trapsel {

enum class TrapMethod { AP, GMM, MeanShift, OPTICS, APFO };

inline std::string to_string(TrapMethod m) {
  switch (m) {
    case TrapMethod::AP: return "AP";
    case TrapMethod::GMM: return "GMM";
    case TrapMethod::MeanShift: return "MeanShift";
    case TrapMethod::OPTICS: return "OPTICS";
    case TrapMethod::APFO: return "APFO";
  }
  return "?";
}

inline TrapMethod parse_method(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "ap") return TrapMethod::AP;
  if (l == "gmm") return TrapMethod::GMM;
  if (l == "meanshift" || l == "mean_shift" || l == "ms") return TrapMethod::MeanShift;
  if (l == "optics") return TrapMethod::OPTICS;
  if (l == "apfo") return TrapMethod::APFO;
  throw InvalidArgument("unknown trap selection method: " + std::string(s));
}

inline const std::vector<TrapMethod>& all_methods() {
  static const std::vector<TrapMethod> v{TrapMethod::AP, TrapMethod::GMM, TrapMethod::MeanShift, TrapMethod::OPTICS,
                                         TrapMethod::APFO};
  return v;
}

/// Which rule put a file on the list.
enum class TrapSource { AP, GMM, MeanShift, OPTICS, APFO_ML, APFO_alpha, APFO_revalpha };

inline std::string to_string(TrapSource s) {
  switch (s) {
    case TrapSource::AP: return "AP";
    case TrapSource::GMM: return "GMM";
    case TrapSource::MeanShift: return "MeanShift";
    case TrapSource::OPTICS: return "OPTICS";
    case TrapSource::APFO_ML: return "APFO-ML";
    case TrapSource::APFO_alpha: return "APFO-alpha";
    case TrapSource::APFO_revalpha: return "APFO-revalpha";
  }
  return "?";
}

inline TrapSource parse_source(std::string_view s) {
  for (auto v : {TrapSource::AP, TrapSource::GMM, TrapSource::MeanShift, TrapSource::OPTICS, TrapSource::APFO_ML,
                 TrapSource::APFO_alpha, TrapSource::APFO_revalpha}) {
    if (to_string(v) == s) return v;
  }
  throw InvalidArgument("unknown trap source: " + std::string(s));
}

struct TrapEntry {
  fs::path original_path;
  fs::path active_path;
  fs::path directory;
  TrapSource source = TrapSource::AP;

  bool operator==(const TrapEntry&) const = default;
};

struct TrapList {
  TrapMethod method = TrapMethod::AP;
  double created_at = 0.0;  // wall-clock seconds
  std::size_t total_files = 0;
  std::size_t eligible_directories = 0;
  std::vector<TrapEntry> entries;

  [[nodiscard]] double trap_percentage() const {
    return total_files == 0 ? 0.0 : 100.0 * static_cast<double>(entries.size()) / static_cast<double>(total_files);
  }
  bool operator==(const TrapList&) const = default;
};

struct SelectionOptions {
  DatasetOptions dataset{};
  std::uint64_t seed = 0;
  AffinityPropagationOptions ap{};
  GmmSelectOptions gmm{.k_max = 10, .criterion = InformationCriterion::BIC, .restarts = 5,
                       .em = {.reg_floor = 1e-6, .max_iter = 200, .tol = 1e-3}};
  double gmm_tol_per_point = 1e-3;  // EM stops when mean log-likelihood gains less than this
  double ms_quantile = 0.3;
  double ms_tol_factor = 1e-3;  // mean-shift tolerance as a fraction of the bandwidth
  int ms_max_iter = 300;
  std::vector<int> optics_minpts_candidates;  // empty: default set
  double optics_threshold_quantile = 0.75;
  unsigned workers = 0;  // 0: hardware concurrency
};

/// Runs one clustering method on a reduced feature matrix.
inline ClusterResult cluster_matrix(const Matrix& x, TrapMethod method, const SelectionOptions& opt, std::uint64_t seed) {
  switch (method) {
    case TrapMethod::AP:
    case TrapMethod::APFO: return affinity_propagation(similarity_matrix(x), opt.ap);
    case TrapMethod::GMM: {
      auto g = opt.gmm;
      g.em.tol = opt.gmm_tol_per_point * static_cast<double>(x.rows());
      return gmm_select(x, seed, g);
    }
    case TrapMethod::MeanShift: {
      const double bw = estimate_bandwidth(x, opt.ms_quantile);
      return mean_shift(x, bw, {.max_iter = opt.ms_max_iter, .tol = opt.ms_tol_factor * bw});
    }
    case TrapMethod::OPTICS: {
      auto candidates =
          opt.optics_minpts_candidates.empty() ? default_minpts_candidates(x.rows()) : opt.optics_minpts_candidates;
      return select_minpts(x, candidates, opt.optics_threshold_quantile).clustering;
    }
  }
  throw InvalidArgument("unsupported method");
}

struct DirectorySelection {
  std::vector<TrapEntry> entries;
  std::size_t files = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline TrapSource ml_source(TrapMethod m) {
  switch (m) {
    case TrapMethod::AP: return TrapSource::AP;
    case TrapMethod::GMM: return TrapSource::GMM;
    case TrapMethod::MeanShift: return TrapSource::MeanShift;
    case TrapMethod::OPTICS: return TrapSource::OPTICS;
    case TrapMethod::APFO: return TrapSource::APFO_ML;
  }
  return TrapSource::AP;
}

inline void add_unique(std::vector<TrapEntry>& out, const fs::path& file, const fs::path& dir, TrapSource src) {
  for (const auto& e : out)
    if (e.original_path == file) return;
  out.push_back({file, file, dir, src});
}

}  // namespace detail

inline DirectorySelection select_directory(const fs::path& dir, TrapMethod method, const SelectionOptions& opt) {
  DirectorySelection sel;
  std::vector<FileRecord> records;
  try {
    records = extract_records(dir, &sel.warnings);
  } catch (const Error& e) {
    sel.warnings.push_back(e.what());
    return sel;
  }
  sel.files = records.size();
  if (records.empty()) return sel;

  const TrapSource src = detail::ml_source(method);
  const std::uint64_t seed = mix_seed(opt.seed, hash_string(dir.string()));
  std::optional<DirectoryDataset> ds;
  try {
    ds = build_dataset_from_records(dir, records, opt.dataset);
    const auto result = cluster_matrix(ds->matrix, method, opt, seed);
    validate(result, records.size());
    for (Index e : result.exemplars) {
      detail::add_unique(sel.entries, records[static_cast<std::size_t>(e)].path, dir, src);
    }
  } catch (const std::exception& e) {
    sel.warnings.push_back("clustering failed for " + dir.string() + ", using medoid: " + e.what());
    sel.entries.clear();
    Index pick = 0;
    if (ds) {
      std::vector<Index> all(static_cast<std::size_t>(ds->matrix.rows()));
      std::iota(all.begin(), all.end(), Index{0});
      pick = medoid(ds->matrix, all);
    }
    detail::add_unique(sel.entries, records[static_cast<std::size_t>(pick)].path, dir, src);
  }

  if (method == TrapMethod::APFO) {
    auto by_name = records;
    std::sort(by_name.begin(), by_name.end(), [](const FileRecord& a, const FileRecord& b) {
      return name_less(a.path.filename().string(), b.path.filename().string());
    });
    detail::add_unique(sel.entries, by_name.front().path, dir, TrapSource::APFO_alpha);
    detail::add_unique(sel.entries, by_name.back().path, dir, TrapSource::APFO_revalpha);
  }
  return sel;
}

namespace detail {

inline std::size_t count_regular_files(const ScanConfig& config) {
  ScanConfig all = config;
  all.min_files = 1;
  std::size_t total = 0;
  for (const auto& d : scan_endpoint(all)) {
    std::error_code ec;
    total += regular_files(d, ec).size();
  }
  return total;
}

}  // namespace detail

/// Selects traps across every eligible directory. APFO adds, per directory,
/// the alphabetically first and last files to the AP exemplars.
inline TrapList select_traps(const ScanConfig& config, TrapMethod method, const SelectionOptions& opt = {},
                             Warnings* warnings = nullptr) {
  const auto dirs = scan_endpoint(config, warnings);
  TrapList list;
  list.method = method;
  list.created_at = wall_seconds();
  list.total_files = detail::count_regular_files(config);
  list.eligible_directories = dirs.size();
  if (dirs.empty()) {
    detail::warn(warnings, "no eligible directories found");
    return list;
  }

  std::vector<DirectorySelection> results(dirs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < dirs.size(); i = next++) results[i] = select_directory(dirs[i], method, opt);
  };
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  const unsigned n = std::min<unsigned>(opt.workers == 0 ? hw : opt.workers, static_cast<unsigned>(dirs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::set<fs::path> seen;
  for (auto& r : results) {
    for (auto& e : r.entries)
      if (seen.insert(e.original_path).second) list.entries.push_back(std::move(e));
    for (auto& w : r.warnings) detail::warn(warnings, std::move(w));
  }
  return list;
}

inline TrapList apfo_select(const ScanConfig& config, const SelectionOptions& opt = {}, Warnings* warnings = nullptr) {
  return select_traps(config, TrapMethod::APFO, opt, warnings);
}

/// Renames every trap to original + suffix. All-or-nothing: a failure rolls
/// back the renames already done and throws.
inline TrapList rename_traps(const TrapList& list, const std::string& suffix) {
  if (suffix.empty()) throw InvalidArgument("trap suffix must not be empty");
  for (const auto& e : list.entries) {
    const fs::path target = e.original_path.string() + suffix;
    std::error_code ec;
    if (fs::exists(target, ec)) throw Error("trap rename collision: " + target.string());
  }
  TrapList out = list;
  std::size_t done = 0;
  try {
    for (; done < out.entries.size(); ++done) {
      auto& e = out.entries[done];
      const fs::path target = e.original_path.string() + suffix;
      if (::rename(e.original_path.c_str(), target.c_str()) != 0) {
        throw Error("cannot rename trap " + e.original_path.string() + ": " + std::strerror(errno));
      }
      e.active_path = target;
    }
  } catch (...) {
    for (std::size_t i = 0; i < done; ++i) {
      auto& e = out.entries[i];
      ::rename(e.active_path.c_str(), e.original_path.c_str());
    }
    throw;
  }
  return out;
}

/// Renames traps back to their original names where possible. Returns the
/// number restored; traps that vanished (e.g. encrypted) are left to the caller.
inline std::size_t restore_traps(TrapList& list) {
  std::size_t restored = 0;
  for (auto& e : list.entries) {
    if (e.active_path == e.original_path) continue;
    std::error_code ec;
    if (fs::exists(e.active_path, ec) && !fs::exists(e.original_path, ec)) {
      if (::rename(e.active_path.c_str(), e.original_path.c_str()) == 0) {
        e.active_path = e.original_path;
        ++restored;
      }
    }
  }
  return restored;
}

inline nlohmann::json to_json(const TrapList& list) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : list.entries) {
    entries.push_back({{"original_path", e.original_path.string()},
                       {"active_path", e.active_path.string()},
                       {"directory", e.directory.string()},
                       {"method", to_string(list.method)},
                       {"source", to_string(e.source)}});
  }
  return {{"method", to_string(list.method)},
          {"created_at", list.created_at},
          {"total_files", list.total_files},
          {"eligible_directories", list.eligible_directories},
          {"trap_percentage", list.trap_percentage()},
          {"entries", entries}};
}

inline TrapList trap_list_from_json(const nlohmann::json& j) {
  TrapList list;
  const nlohmann::json* entries = &j;
  if (j.is_object()) {
    list.method = parse_method(j.at("method").get<std::string>());
    list.created_at = j.at("created_at").get<double>();
    list.total_files = j.at("total_files").get<std::size_t>();
    list.eligible_directories = j.at("eligible_directories").get<std::size_t>();
    entries = &j.at("entries");
  }
  if (!entries->is_array()) throw InvalidArgument("trap list entries must be an array");
  for (const auto& e : *entries) {
    list.entries.push_back({e.at("original_path").get<std::string>(), e.at("active_path").get<std::string>(),
                            e.at("directory").get<std::string>(), parse_source(e.at("source").get<std::string>())});
  }
  return list;
}

inline void persist_traps(const TrapList& list, const fs::path& file) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write trap list " + tmp.string());
    out << to_json(list).dump(2) << '\n';
    if (!out) throw Error("failed writing trap list " + tmp.string());
  }
  fs::rename(tmp, file);
}

inline TrapList load_traps(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open trap list " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  auto line_of = [&](std::size_t byte) {
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size())), '\n')) + 1;
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed trap list " + file.string() + ": " + e.what(), line_of(e.byte));
  }
  try {
    return trap_list_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid trap list " + file.string() + ": " + e.what(), 1);
  } catch (const InvalidArgument& e) {
    throw ParseError("invalid trap list " + file.string() + ": " + e.what(), 1);
  }
}

/// Calls `tick` every `interval` on a background thread until cancelled.
/// Exceptions from `tick` are reported to `on_error` and do not stop the schedule.
class RescanScheduler {
 public:
  RescanScheduler(std::chrono::milliseconds interval, std::function<void()> tick,
                  std::function<void(const std::string&)> on_error = {})
      : interval_(interval), tick_(std::move(tick)), on_error_(std::move(on_error)) {
    if (interval_.count() <= 0) throw InvalidArgument("rescan interval must be positive");
    thread_ = std::thread([this] { loop(); });
  }
  RescanScheduler(const RescanScheduler&) = delete;
  RescanScheduler& operator=(const RescanScheduler&) = delete;
  ~RescanScheduler() { cancel(); }

  void cancel() {
    {
      std::lock_guard lock(mu_);
      cancelled_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  [[nodiscard]] int invocations() const { return invocations_.load(); }
  [[nodiscard]] int failures() const { return failures_.load(); }

 private:
  void loop() {
    auto next = std::chrono::steady_clock::now() + interval_;
    std::unique_lock lock(mu_);
    while (!cv_.wait_until(lock, next, [&] { return cancelled_; })) {
      lock.unlock();
      ++invocations_;
      try {
        tick_();
      } catch (const std::exception& e) {
        ++failures_;
        if (on_error_) on_error_(e.what());
      }
      next += interval_;
      lock.lock();
    }
  }

  std::chrono::milliseconds interval_;
  std::function<void()> tick_;
  std::function<void(const std::string&)> on_error_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool cancelled_ = false;
  std::atomic<int> invocations_{0};
  std::atomic<int> failures_{0};
  std::thread thread_;
};

inline std::unique_ptr<RescanScheduler> schedule_rescan(std::chrono::milliseconds interval, std::function<void()> tick,
                                                        std::function<void(const std::string&)> on_error = {}) {
  return std::make_unique<RescanScheduler>(interval, std::move(tick), std::move(on_error));
}

/// The active trap set across rescans: restore the old traps, select and
/// rename a new set, and fall back to the old set when selection fails.
class TrapRotation {
 public:
  using Selector = std::function<TrapList()>;
  using Activate = std::function<void(const TrapList&)>;

  TrapRotation(TrapList active, std::string suffix, Selector select, Activate on_activate = {})
      : active_(std::move(active)), suffix_(std::move(suffix)), select_(std::move(select)),
        on_activate_(std::move(on_activate)) {}

  /// Returns true when a new set became active.
  bool rotate() {
    std::lock_guard lock(mu_);
    restore_traps(active_);
    try {
      TrapList fresh = rename_traps(select_(), suffix_);
      if (on_activate_) on_activate_(fresh);
      active_ = std::move(fresh);
      return true;
    } catch (...) {
      active_ = rename_traps(active_, suffix_);
      if (on_activate_) on_activate_(active_);
      throw;
    }
  }

  [[nodiscard]] TrapList active() const {
    std::lock_guard lock(mu_);
    return active_;
  }

 private:
  mutable std::mutex mu_;
  TrapList active_;
  std::string suffix_;
  Selector select_;
  Activate on_activate_;
};

}  // namespace trapsel
