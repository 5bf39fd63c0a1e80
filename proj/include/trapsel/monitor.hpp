#pragma once

// inotify-based trap watcher. One watch per directory that holds traps;
// events are filtered to trap names by a single consumer thread.

#include <poll.h>
#include <signal.h>
#include <sys/eventfd.h>
#include <sys/resource.h>
#include <sys/inotify.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "trapsel/attack.hpp"
#include "trapsel/common.hpp"
#include "trapsel/traps.hpp"

namespace trapsel {

enum class EventKind { Modified, Renamed, Deleted, Created };

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::Modified: return "Modified";
    case EventKind::Renamed: return "Renamed";
    case EventKind::Deleted: return "Deleted";
    case EventKind::Created: return "Created";
  }
  return "?";
}

struct TrapEvent {
  fs::path path;
  EventKind kind = EventKind::Modified;
  std::int64_t observed_ns = 0;  // mono_ns()
  double observed_wall = 0.0;
};

enum class ActionOutcome { ActionInvoked, ActionFailed, DryRun };

inline std::string to_string(ActionOutcome o) {
  switch (o) {
    case ActionOutcome::ActionInvoked: return "ActionInvoked";
    case ActionOutcome::ActionFailed: return "ActionFailed";
    case ActionOutcome::DryRun: return "DryRun";
  }
  return "?";
}

struct AlertReport {
  TrapEvent event;
  std::int64_t alert_raised_ns = 0;
  double alert_raised_wall = 0.0;
  ActionOutcome outcome = ActionOutcome::DryRun;
  // Raised without a matching trap event (queue overflow, watched directory gone).
  bool conservative = false;
  std::string note;
};

inline nlohmann::json to_json(const AlertReport& a) {
  return {{"event",
           {{"path", a.event.path.string()},
            {"kind", to_string(a.event.kind)},
            {"observed_ns", a.event.observed_ns},
            {"observed_wall", a.event.observed_wall}}},
          {"alert_raised_ns", a.alert_raised_ns},
          {"alert_raised_wall", a.alert_raised_wall},
          {"action_outcome", to_string(a.outcome)},
          {"conservative", a.conservative},
          {"note", a.note}};
}

class KillAction {
 public:
  virtual ~KillAction() = default;
  virtual ActionOutcome invoke() = 0;
};

class DryRunAction final : public KillAction {
 public:
  ActionOutcome invoke() override { return ActionOutcome::DryRun; }
};

/// Stops an in-process emulated attack. Idempotent.
class EmulatorKillAction final : public KillAction {
 public:
  explicit EmulatorKillAction(StopHandle& stop) : stop_(stop) {}
  ActionOutcome invoke() override {
    stop_.request_stop();
    return ActionOutcome::ActionInvoked;
  }

 private:
  StopHandle& stop_;
};

/// Sends SIGTERM to a fixed process set. Already-exited processes count as stopped.
class ProcessKillAction final : public KillAction {
 public:
  explicit ProcessKillAction(std::vector<pid_t> pids) : pids_(std::move(pids)) {}
  ActionOutcome invoke() override {
    bool ok = true;
    for (pid_t p : pids_) {
      if (::kill(p, SIGTERM) != 0 && errno != ESRCH) ok = false;
    }
    return ok ? ActionOutcome::ActionInvoked : ActionOutcome::ActionFailed;
  }

 private:
  std::vector<pid_t> pids_;
};

/// Wraps any callable; an exception from it is recorded as ActionFailed.
class CallbackAction final : public KillAction {
 public:
  explicit CallbackAction(std::function<void()> fn) : fn_(std::move(fn)) {}
  ActionOutcome invoke() override {
    try {
      fn_();
      return ActionOutcome::ActionInvoked;
    } catch (...) {
      return ActionOutcome::ActionFailed;
    }
  }

 private:
  std::function<void()> fn_;
};

enum class WatchMode { FirstHit, Continuous };

struct MonitorOptions {
  WatchMode mode = WatchMode::FirstHit;
  std::optional<fs::path> audit_log;
  std::function<void(const AlertReport&)> on_alert;
  // Nice value requested for the consumer thread; best effort, ignored when not permitted.
  std::optional<int> consumer_nice = -10;
};

class TrapMonitor {
 public:
  TrapMonitor(TrapList traps, std::shared_ptr<KillAction> action, MonitorOptions options = {})
      : traps_(std::move(traps)), action_(std::move(action)), options_(std::move(options)) {
    if (!action_) throw InvalidArgument("monitor requires a kill action");
  }
  TrapMonitor(const TrapMonitor&) = delete;
  TrapMonitor& operator=(const TrapMonitor&) = delete;
  ~TrapMonitor() { stop(); }

  /// Registers every watch, then starts the consumer. Returns once ready.
  void start() {
    if (running_) return;
    for (const auto& e : traps_.entries) {
      std::error_code ec;
      if (!fs::exists(e.active_path, ec)) throw Error("trap does not exist: " + e.active_path.string());
    }
    fd_ = ::inotify_init1(IN_NONBLOCK | IN_CLOEXEC);
    if (fd_ < 0) throw Error(std::string("inotify_init1 failed: ") + std::strerror(errno));
    wake_ = ::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC);
    if (wake_ < 0) {
      close_fds();
      throw Error(std::string("eventfd failed: ") + std::strerror(errno));
    }
    try {
      install(traps_);
    } catch (...) {
      close_fds();
      throw;
    }
    running_ = true;
    consumer_ = std::thread([this] { loop(); });
  }

  void stop() {
    if (!running_) return;
    const std::uint64_t one = 1;
    [[maybe_unused]] auto n = ::write(wake_, &one, sizeof one);
    if (consumer_.joinable()) consumer_.join();
    running_ = false;
    close_fds();
  }

  [[nodiscard]] bool running() const { return running_; }

  /// Replaces the watched trap set. Events already queued for the old set
  /// are matched against the new one.
  void swap_traps(TrapList traps) {
    std::lock_guard lock(mu_);
    if (fd_ >= 0) {
      for (const auto& [wd, dir] : wd_dir_) ::inotify_rm_watch(fd_, wd);
      wd_dir_.clear();
      names_.clear();
      install(traps);
    }
    traps_ = std::move(traps);
  }

  std::optional<AlertReport> wait_first_alert(std::chrono::milliseconds timeout) {
    std::unique_lock lock(alert_mu_);
    if (!alert_cv_.wait_for(lock, timeout, [&] { return !alerts_.empty(); })) return std::nullopt;
    return alerts_.front();
  }

  [[nodiscard]] std::vector<AlertReport> alerts() const {
    std::lock_guard lock(alert_mu_);
    return alerts_;
  }

  [[nodiscard]] std::size_t watch_count() const {
    std::lock_guard lock(mu_);
    return wd_dir_.size();
  }

 private:
  static constexpr std::uint32_t kMask = IN_MODIFY | IN_MOVED_FROM | IN_MOVED_TO | IN_DELETE | IN_CREATE |
                                         IN_DELETE_SELF | IN_MOVE_SELF | IN_ONLYDIR;

  void close_fds() {
    if (fd_ >= 0) ::close(fd_);
    if (wake_ >= 0) ::close(wake_);
    fd_ = wake_ = -1;
    wd_dir_.clear();
    names_.clear();
  }

  // Caller holds mu_ or the consumer is not running.
  void install(const TrapList& traps) {
    std::map<fs::path, std::vector<std::string>> by_dir;
    for (const auto& e : traps.entries) by_dir[e.active_path.parent_path()].push_back(e.active_path.filename().string());
    std::vector<std::string> failed;
    for (auto& [dir, names] : by_dir) {
      const int wd = ::inotify_add_watch(fd_, dir.c_str(), kMask);
      if (wd < 0) {
        failed.push_back(dir.string() + " (" + std::strerror(errno) + ")");
        continue;
      }
      wd_dir_[wd] = dir;
      auto& set = names_[wd];
      set.insert(names.begin(), names.end());
    }
    if (!failed.empty()) {
      std::string msg = "cannot watch directories:";
      for (const auto& f : failed) msg += " " + f;
      for (const auto& [wd, dir] : wd_dir_) ::inotify_rm_watch(fd_, wd);
      wd_dir_.clear();
      names_.clear();
      throw Error(msg);
    }
  }

  void loop() {
    if (options_.consumer_nice) {
      [[maybe_unused]] int rc = ::setpriority(PRIO_PROCESS, static_cast<id_t>(::gettid()), *options_.consumer_nice);
    }
    alignas(struct inotify_event) char buf[64 * 1024];
    pollfd fds[2] = {{fd_, POLLIN, 0}, {wake_, POLLIN, 0}};
    for (;;) {
      const int r = ::poll(fds, 2, -1);
      if (r < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (fds[1].revents & POLLIN) return;
      if (!(fds[0].revents & POLLIN)) continue;
      for (;;) {
        const ssize_t len = ::read(fd_, buf, sizeof buf);
        if (len <= 0) break;
        const std::int64_t now = mono_ns();
        const double wall = wall_seconds();
        std::lock_guard lock(mu_);
        for (char* p = buf; p < buf + len;) {
          const auto* ev = reinterpret_cast<const struct inotify_event*>(p);
          p += sizeof(struct inotify_event) + ev->len;
          handle(*ev, now, wall);
        }
      }
    }
  }

  void handle(const struct inotify_event& ev, std::int64_t now, double wall) {
    if (ev.mask & IN_Q_OVERFLOW) {
      raise({"", EventKind::Modified, now, wall}, true, "event queue overflow");
      return;
    }
    const auto dir = wd_dir_.find(ev.wd);
    if (dir == wd_dir_.end()) return;
    if (ev.mask & (IN_DELETE_SELF | IN_MOVE_SELF)) {
      const auto kind = (ev.mask & IN_DELETE_SELF) ? EventKind::Deleted : EventKind::Renamed;
      raise({dir->second, kind, now, wall}, true, "watched directory removed or moved");
      return;
    }
    if (ev.len == 0) return;
    const std::string name(ev.name);
    const auto& set = names_[ev.wd];
    if (!set.contains(name)) return;
    EventKind kind;
    if (ev.mask & IN_MODIFY) kind = EventKind::Modified;
    else if (ev.mask & IN_MOVED_FROM) kind = EventKind::Renamed;
    else if (ev.mask & IN_DELETE) kind = EventKind::Deleted;
    else if (ev.mask & (IN_CREATE | IN_MOVED_TO)) kind = EventKind::Created;
    else return;
    raise({dir->second / name, kind, now, wall}, false, "");
  }

  void raise(TrapEvent event, bool conservative, std::string note) {
    if (options_.mode == WatchMode::FirstHit && fired_.exchange(true)) return;
    AlertReport report;
    report.event = std::move(event);
    report.conservative = conservative;
    report.note = std::move(note);
    report.outcome = action_->invoke();
    report.alert_raised_ns = mono_ns();
    report.alert_raised_wall = wall_seconds();
    if (options_.audit_log) {
      std::ofstream out(*options_.audit_log, std::ios::app);
      out << to_json(report).dump() << '\n';
    }
    if (options_.on_alert) options_.on_alert(report);
    {
      std::lock_guard lock(alert_mu_);
      alerts_.push_back(report);
    }
    alert_cv_.notify_all();
  }

  TrapList traps_;
  std::shared_ptr<KillAction> action_;
  MonitorOptions options_;
  int fd_ = -1;
  int wake_ = -1;
  bool running_ = false;
  std::thread consumer_;
  mutable std::mutex mu_;
  std::unordered_map<int, fs::path> wd_dir_;
  std::unordered_map<int, std::unordered_set<std::string>> names_;
  std::atomic<bool> fired_{false};
  mutable std::mutex alert_mu_;
  std::condition_variable alert_cv_;
  std::vector<AlertReport> alerts_;
};

/// Resident set size of a process in MB (MiB), from /proc/<pid>/status.
inline double resident_memory_mb(pid_t pid = ::getpid()) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/status");
  if (!in) throw Error("process " + std::to_string(pid) + " is not running");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmRSS:", 0) == 0) {
      std::istringstream fields(line.substr(6));
      double kb = 0.0;
      if (fields >> kb) return kb / 1024.0;
    }
  }
  throw Error("VmRSS unavailable for process " + std::to_string(pid));
}

/// Mean of `samples` (at least 3) RSS readings taken `interval` apart.
inline double measure_monitor_memory(pid_t pid, int samples = 3,
                                     std::chrono::milliseconds interval = std::chrono::milliseconds(50)) {
  samples = std::max(samples, 3);
  double total = 0.0;
  for (int i = 0; i < samples; ++i) {
    if (i > 0) std::this_thread::sleep_for(interval);
    total += resident_memory_mb(pid);
  }
  return total / samples;
}

inline double measure_monitor_memory(const TrapMonitor& monitor, int samples = 3) {
  if (!monitor.running()) throw Error("monitor is not running");
  return measure_monitor_memory(::getpid(), samples);
}

}  // namespace trapsel
