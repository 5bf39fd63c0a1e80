#pragma once

// Ransomware behaviour emulator. "Encryption" overwrites a file with seeded
// pseudo-random bytes of the same length and appends the family extension.
// It only runs inside a directory tree carrying the corpus marker.

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "trapsel/common.hpp"
#include "trapsel/features.hpp"

namespace trapsel {

enum class TraversalOrder { Alphabetical, ReverseAlphabetical, DepthFirst, BreadthFirst, Random };

inline std::string to_string(TraversalOrder o) {
  switch (o) {
    case TraversalOrder::Alphabetical: return "alphabetical";
    case TraversalOrder::ReverseAlphabetical: return "reverse_alphabetical";
    case TraversalOrder::DepthFirst: return "depth_first";
    case TraversalOrder::BreadthFirst: return "breadth_first";
    case TraversalOrder::Random: return "random";
  }
  return "?";
}

inline TraversalOrder parse_order(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "alphabetical" || l == "alpha") return TraversalOrder::Alphabetical;
  if (l == "reverse_alphabetical" || l == "reverse" || l == "revalpha") return TraversalOrder::ReverseAlphabetical;
  if (l == "depth_first" || l == "dfs") return TraversalOrder::DepthFirst;
  if (l == "breadth_first" || l == "bfs") return TraversalOrder::BreadthFirst;
  if (l == "random") return TraversalOrder::Random;
  throw InvalidArgument("unknown traversal order: " + std::string(s));
}

struct AttackProfile {
  std::string name;
  TraversalOrder order = TraversalOrder::Random;
  int threads = 1;
  double pre_encryption_delay = 0.0;  // seconds
  std::string extension;              // appended to encrypted files, e.g. ".lockbit"
  std::uint64_t min_size_filter = 0;  // bytes; smaller files are skipped
  double throughput = 50.0;           // files per second per thread
};

/// Families with more than 10 encryption threads.
inline bool is_category_one(const AttackProfile& p) { return p.threads > 10; }

/// The eighteen built-in families. Thread counts respect the >10 / <10
/// category split; delays and throughputs are synthetic calibration knobs.
inline std::vector<AttackProfile> builtin_profiles() {
  using O = TraversalOrder;
  return {
      // Category 1
      {"Atomsilo", O::Alphabetical, 12, 0.20, ".atomsilo", 0, 60.0},
      {"AvosLocker", O::ReverseAlphabetical, 16, 0.05, ".avos2", 0, 80.0},
      {"Babuk", O::Alphabetical, 20, 0.10, ".babyk", 0, 80.0},
      {"BlackMatter", O::ReverseAlphabetical, 14, 0.15, ".blackmatter", 0, 60.0},
      {"Cerber", O::Random, 11, 0.05, ".cerber", 1024, 60.0},
      {"Lockbit", O::Alphabetical, 24, 0.10, ".lockbit", 0, 80.0},
      {"Lorenz", O::Random, 12, 0.20, ".lorenz", 0, 50.0},
      {"Surtr", O::Random, 16, 0.20, ".surtr", 0, 50.0},
      // Category 2
      {"Conti", O::ReverseAlphabetical, 8, 0.60, ".conti", 0, 50.0},
      {"Cuba", O::Random, 4, 0.05, ".cuba", 0, 50.0},
      {"Demonware", O::Random, 2, 0.60, ".demon", 0, 40.0},
      {"GlobeImposter", O::Random, 2, 0.60, ".globe", 0, 40.0},
      {"Intercobros", O::Random, 6, 0.05, ".intercobros", 0, 50.0},
      {"Karma", O::Random, 4, 0.30, ".karma", 0, 50.0},
      {"Magniber", O::Random, 3, 0.20, ".magniber", 0, 50.0},
      {"Makop", O::Random, 5, 0.20, ".makop", 0, 50.0},
      {"Mespinoza", O::Random, 6, 0.30, ".pysa", 0, 50.0},
      {"Mountlocker", O::Random, 8, 0.30, ".mount", 0, 50.0},
  };
}

inline AttackProfile find_profile(std::string_view name) {
  for (auto& p : builtin_profiles())
    if (to_lower(p.name) == to_lower(name)) return p;
  throw InvalidArgument("unknown attack profile: " + std::string(name));
}

/// Shared stop latch between an attack and whoever kills it.
class StopHandle {
 public:
  void request_stop() {
    std::lock_guard lock(mu_);
    if (!stop_.exchange(true)) stop_requested_at_ = mono_ns();
    if (live_ == 0 && !acknowledged_at_) acknowledged_at_ = mono_ns();
    cv_.notify_all();
  }

  [[nodiscard]] bool stop_requested() const { return stop_.load(std::memory_order_acquire); }

  /// Blocks until every worker has observed the stop (or exited). True on success.
  bool wait_acknowledged(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return acknowledged_at_.has_value(); });
  }

  [[nodiscard]] std::optional<std::int64_t> stop_requested_at() const {
    std::lock_guard lock(mu_);
    return stop_requested_at_;
  }
  [[nodiscard]] std::optional<std::int64_t> acknowledged_at() const {
    std::lock_guard lock(mu_);
    return acknowledged_at_;
  }

  /// Sleeps until `deadline_ns` (monotonic) or a stop request. Returns false when stopped.
  bool sleep_until(std::int64_t deadline_ns) {
    std::unique_lock lock(mu_);
    const auto deadline = std::chrono::steady_clock::time_point(std::chrono::nanoseconds(deadline_ns));
    cv_.wait_until(lock, deadline, [&] { return stop_.load(); });
    return !stop_.load();
  }

  // Worker bookkeeping, used by run_attack.
  void workers_started(int n) {
    std::lock_guard lock(mu_);
    live_ += n;
  }
  void worker_exited() {
    std::lock_guard lock(mu_);
    if (--live_ == 0 && stop_.load() && !acknowledged_at_) acknowledged_at_ = mono_ns();
    cv_.notify_all();
  }

 private:
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int live_ = 0;
  std::optional<std::int64_t> stop_requested_at_;
  std::optional<std::int64_t> acknowledged_at_;
};

enum class StopCause { Killed, Finished };

struct EncryptionRecord {
  std::string path;  // original path
  std::int64_t completed_at = 0;
  int thread = 0;
};

struct AttackLog {
  std::string profile;
  std::int64_t start_at = 0;  // before the pre-encryption delay
  std::int64_t stop_at = 0;
  StopCause stop_cause = StopCause::Finished;
  std::vector<EncryptionRecord> records;  // sorted by completion time
  std::vector<std::string> skipped;       // vanished or filtered files
};

struct AttackOptions {
  std::uint64_t seed = 0;
  std::optional<int> threads_override;
  std::optional<TraversalOrder> order_override;
  double delay_scale = 1.0;  // multiplies the profile's pre-encryption delay
};

inline bool is_corpus_root(const fs::path& root) {
  std::error_code ec;
  return fs::is_directory(root, ec) && fs::is_regular_file(root / std::string(kCorpusMarker), ec);
}

namespace detail {

inline std::vector<fs::path> child_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec); !ec && it != fs::directory_iterator(); it.increment(ec)) {
    std::error_code sec;
    if (fs::is_directory(it->symlink_status(sec)) && !sec) out.push_back(it->path());
  }
  return out;
}

inline void sort_names(std::vector<fs::path>& v, bool reverse) {
  std::sort(v.begin(), v.end(), [&](const fs::path& a, const fs::path& b) {
    const auto an = a.filename().string();
    const auto bn = b.filename().string();
    return reverse ? name_less(bn, an) : name_less(an, bn);
  });
}

inline std::vector<fs::path> traversal_directories(const fs::path& root, TraversalOrder order, Rng& rng) {
  std::vector<fs::path> out;
  if (order == TraversalOrder::BreadthFirst) {
    std::deque<fs::path> q{root};
    while (!q.empty()) {
      auto d = q.front();
      q.pop_front();
      out.push_back(d);
      auto kids = child_dirs(d);
      std::sort(kids.begin(), kids.end());
      shuffle(kids, rng);
      for (auto& k : kids) q.push_back(k);
    }
    return out;
  }
  std::vector<fs::path> stack{root};
  while (!stack.empty()) {
    auto d = stack.back();
    stack.pop_back();
    out.push_back(d);
    auto kids = child_dirs(d);
    switch (order) {
      case TraversalOrder::Alphabetical: sort_names(kids, false); break;
      case TraversalOrder::ReverseAlphabetical: sort_names(kids, true); break;
      default:
        std::sort(kids.begin(), kids.end());
        shuffle(kids, rng);
        break;
    }
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  if (order == TraversalOrder::Random) shuffle(out, rng);
  return out;
}

/// Files in the order the emulated family would visit them. Depth/breadth-first
/// families take the directory's enumeration order.
inline std::vector<fs::path> traversal_files(const fs::path& dir, TraversalOrder order, Rng& rng) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec); !ec && it != fs::directory_iterator(); it.increment(ec)) {
    std::error_code sec;
    if (fs::is_regular_file(it->symlink_status(sec)) && !sec && it->path().filename() != kCorpusMarker) {
      files.push_back(it->path());
    }
  }
  switch (order) {
    case TraversalOrder::Alphabetical: sort_names(files, false); break;
    case TraversalOrder::ReverseAlphabetical: sort_names(files, true); break;
    case TraversalOrder::Random:
      std::sort(files.begin(), files.end());
      shuffle(files, rng);
      break;
    default: break;
  }
  return files;
}

/// Overwrites in place with pseudo-random bytes of equal length, then renames.
inline bool emulate_encryption(const fs::path& p, const std::string& extension, std::uint64_t seed) {
  const int fd = ::open(p.c_str(), O_WRONLY | O_NOFOLLOW);
  if (fd < 0) return false;
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    return false;
  }
  Rng rng(seed);
  std::vector<char> buf(static_cast<std::size_t>(std::min<off_t>(st.st_size, 1 << 16)));
  off_t written = 0;
  while (written < st.st_size) {
    const auto chunk = static_cast<std::size_t>(std::min<off_t>(st.st_size - written, static_cast<off_t>(buf.size())));
    for (std::size_t i = 0; i < chunk; ++i) buf[i] = static_cast<char>(rng() & 0xff);
    const ssize_t n = ::pwrite(fd, buf.data(), chunk, written);
    if (n <= 0) break;
    written += n;
  }
  ::close(fd);
  return ::rename(p.c_str(), (p.string() + extension).c_str()) == 0;
}

}  // namespace detail

/// Runs an emulated attack against a marked corpus root. Directories are
/// dealt round-robin to worker threads; each worker checks the stop latch
/// between files and while pacing.
inline AttackLog run_attack(const AttackProfile& profile, const fs::path& root, StopHandle& stop,
                            const AttackOptions& opt = {}) {
  if (!is_corpus_root(root)) {
    throw Error("refusing to attack " + root.string() + ": not a marked corpus root");
  }
  const int threads = opt.threads_override.value_or(profile.threads);
  const TraversalOrder order = opt.order_override.value_or(profile.order);
  if (threads < 1) throw InvalidArgument("attack needs at least one thread");
  if (!(profile.throughput > 0.0)) throw InvalidArgument("throughput must be positive");
  if (profile.extension.empty()) throw InvalidArgument("attack profile needs an extension");

  AttackLog log;
  log.profile = profile.name;
  stop.workers_started(threads);
  log.start_at = mono_ns();

  const auto delay_ns = static_cast<std::int64_t>(profile.pre_encryption_delay * opt.delay_scale * 1e9);
  Rng dir_rng(mix_seed(opt.seed, hash_string(profile.name)));
  const auto dirs = detail::traversal_directories(root, order, dir_rng);

  std::vector<std::vector<EncryptionRecord>> per_thread(static_cast<std::size_t>(threads));
  std::vector<std::vector<std::string>> skipped(static_cast<std::size_t>(threads));
  std::vector<char> killed(static_cast<std::size_t>(threads), 0);
  const auto period_ns = static_cast<std::int64_t>(1e9 / profile.throughput);

  auto worker = [&](int t) {
    const auto tu = static_cast<std::size_t>(t);
    Rng rng(mix_seed(opt.seed, 7919U * static_cast<std::uint64_t>(t) + 1U));
    // Targets are enumerated up front, during the pre-encryption delay.
    std::vector<std::vector<fs::path>> plan;
    for (std::size_t d = tu; d < dirs.size(); d += static_cast<std::size_t>(threads)) {
      plan.push_back(detail::traversal_files(dirs[d], order, rng));
    }
    if (!stop.sleep_until(log.start_at + delay_ns)) {
      killed[tu] = 1;
      stop.worker_exited();
      return;
    }
    // Threads start out of phase, spread evenly over one pacing period.
    std::int64_t next_slot = log.start_at + delay_ns + period_ns * t / threads;
    for (const auto& files : plan) {
      for (const auto& file : files) {
        if (stop.stop_requested()) {
          killed[tu] = 1;
          stop.worker_exited();
          return;
        }
        const std::string name = file.filename().string();
        if (name.ends_with(profile.extension)) continue;
        std::error_code ec;
        const auto size = fs::file_size(file, ec);
        if (ec) {
          skipped[tu].push_back(file.string());
          continue;
        }
        if (size < profile.min_size_filter) {
          skipped[tu].push_back(file.string());
          continue;
        }
        if (!stop.sleep_until(next_slot)) {
          killed[tu] = 1;
          stop.worker_exited();
          return;
        }
        if (detail::emulate_encryption(file, profile.extension, mix_seed(opt.seed, hash_string(file.string())))) {
          per_thread[tu].push_back({file.string(), mono_ns(), t});
        } else {
          skipped[tu].push_back(file.string());
        }
        next_slot = std::max(next_slot + period_ns, mono_ns());
      }
    }
    stop.worker_exited();
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  for (auto& th : pool) th.join();

  log.stop_at = mono_ns();
  log.stop_cause =
      std::any_of(killed.begin(), killed.end(), [](char k) { return k != 0; }) ? StopCause::Killed : StopCause::Finished;
  for (auto& v : per_thread) log.records.insert(log.records.end(), v.begin(), v.end());
  for (auto& v : skipped) log.skipped.insert(log.skipped.end(), v.begin(), v.end());
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const auto& a, const auto& b) { return a.completed_at < b.completed_at; });
  return log;
}

/// One JSON object per line: a header, one line per encrypted file, a footer.
inline void write_attack_log(const AttackLog& log, std::ostream& out) {
  out << nlohmann::json{{"event", "start"}, {"profile", log.profile}, {"start_at_ns", log.start_at}}.dump() << '\n';
  for (const auto& r : log.records) {
    out << nlohmann::json{{"event", "encrypted"}, {"path", r.path}, {"completed_at_ns", r.completed_at}, {"thread", r.thread}}
               .dump()
        << '\n';
  }
  out << nlohmann::json{{"event", "stop"},
                        {"stop_at_ns", log.stop_at},
                        {"stop_cause", log.stop_cause == StopCause::Killed ? "killed" : "finished"},
                        {"encrypted", log.records.size()},
                        {"skipped", log.skipped.size()}}
             .dump()
      << '\n';
}

}  // namespace trapsel
