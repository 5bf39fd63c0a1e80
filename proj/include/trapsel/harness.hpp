#pragma once

// End-to-end experiments: select traps, rename, watch, attack, kill,
// measure, restore. Plus grids, reports and the toolkit configuration.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trapsel/attack.hpp"
#include "trapsel/corpus.hpp"
#include "trapsel/monitor.hpp"
#include "trapsel/traps.hpp"

namespace trapsel {

/// Regular files under `root` whose name ends with `extension`.
inline std::size_t count_file_loss(const fs::path& root, const std::string& extension) {
  if (extension.empty()) throw InvalidArgument("extension must not be empty");
  std::size_t n = 0;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    std::error_code sec;
    if (it->is_regular_file(sec) && !it->is_symlink(sec) && it->path().filename().string().ends_with(extension)) ++n;
  }
  if (ec) throw Error("cannot scan " + root.string() + ": " + ec.message());
  return n;
}

/// Seconds from attack start to the alert's observation time (same monotonic clock).
inline double detection_delay(std::int64_t attack_start_ns, std::int64_t observed_ns) {
  if (observed_ns < attack_start_ns) throw Error("alert observed before attack start: clock misuse");
  return static_cast<double>(observed_ns - attack_start_ns) * 1e-9;
}

inline double detection_delay(const AttackLog& log, const AlertReport& alert) {
  return detection_delay(log.start_at, alert.event.observed_ns);
}

struct ExperimentResult {
  std::string corpus;
  std::string method;
  std::string profile;
  std::uint64_t seed = 0;
  std::size_t files_total = 0;
  std::size_t files_lost = 0;
  double file_loss_pct = 0.0;
  std::optional<double> detection_delay_s;  // empty: missed detection
  std::size_t trap_count = 0;
  double trap_pct = 0.0;
  double monitor_memory_mb = 0.0;
  std::size_t files_untouched = 0;
  std::size_t traps_intact = 0;
  std::string stop_cause;
  bool restored_exact = false;
  std::string failure;  // non-empty: infrastructure failure, excluded from averages
  double started_at = 0.0;
  double finished_at = 0.0;

  [[nodiscard]] bool detected() const { return detection_delay_s.has_value(); }
  [[nodiscard]] bool failed() const { return !failure.empty(); }
};

inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json j{{"corpus", r.corpus},
                   {"method", r.method},
                   {"profile", r.profile},
                   {"seed", r.seed},
                   {"files_total", r.files_total},
                   {"files_lost", r.files_lost},
                   {"file_loss_pct", r.file_loss_pct},
                   {"trap_count", r.trap_count},
                   {"trap_pct", r.trap_pct},
                   {"monitor_memory_mb", r.monitor_memory_mb},
                   {"files_untouched", r.files_untouched},
                   {"traps_intact", r.traps_intact},
                   {"stop_cause", r.stop_cause},
                   {"restored_exact", r.restored_exact},
                   {"failure", r.failure},
                   {"started_at", r.started_at},
                   {"finished_at", r.finished_at}};
  if (r.detection_delay_s) j["detection_delay_s"] = *r.detection_delay_s;
  else j["detection_delay_s"] = "missed";
  return j;
}

inline ExperimentResult experiment_from_json(const nlohmann::json& j) {
  ExperimentResult r;
  r.corpus = j.at("corpus").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.profile = j.at("profile").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.files_total = j.at("files_total").get<std::size_t>();
  r.files_lost = j.at("files_lost").get<std::size_t>();
  r.file_loss_pct = j.at("file_loss_pct").get<double>();
  const auto& d = j.at("detection_delay_s");
  if (d.is_number()) r.detection_delay_s = d.get<double>();
  r.trap_count = j.at("trap_count").get<std::size_t>();
  r.trap_pct = j.at("trap_pct").get<double>();
  r.monitor_memory_mb = j.at("monitor_memory_mb").get<double>();
  r.files_untouched = j.value("files_untouched", std::size_t{0});
  r.traps_intact = j.value("traps_intact", std::size_t{0});
  r.stop_cause = j.value("stop_cause", std::string{});
  r.restored_exact = j.value("restored_exact", false);
  r.failure = j.value("failure", std::string{});
  r.started_at = j.value("started_at", 0.0);
  r.finished_at = j.value("finished_at", 0.0);
  return r;
}

/// Trap lists keyed by (root, method, seed). Valid only while the corpus is
/// restored to the same manifest between runs.
using TrapCache = std::map<std::tuple<std::string, std::string, std::uint64_t>, TrapList>;

struct ExperimentConfig {
  std::string corpus_label = "corpus";
  fs::path root;
  CorpusManifest manifest;
  TrapMethod method = TrapMethod::AP;
  AttackProfile profile;
  std::uint64_t seed = 0;
  SelectionOptions selection{};
  AttackOptions attack{};  // seed is taken from `seed`
  std::string suffix = "_tp";
  std::chrono::milliseconds ready_timeout{10000};
  std::chrono::milliseconds settle{150};  // wait for in-flight events after the attack ends
  bool restore_after = true;
  bool verify_restore = false;
  std::optional<TrapList> traps;  // preselected traps, skips selection
};

namespace detail {

inline TrapList obtain_traps(const ExperimentConfig& cfg, TrapCache* cache) {
  if (cfg.traps) return *cfg.traps;
  const auto key = std::make_tuple(cfg.root.string(), to_string(cfg.method), cfg.seed);
  if (cache != nullptr) {
    if (auto it = cache->find(key); it != cache->end()) return it->second;
  }
  auto sel = cfg.selection;
  sel.seed = cfg.seed;
  ScanConfig scan;
  scan.roots = {cfg.root};
  TrapList list = select_traps(scan, cfg.method, sel);
  if (cache != nullptr) (*cache)[key] = list;
  return list;
}

}  // namespace detail

/// One run of the full pipeline. The corpus is restored before and (by
/// default) after the run; the monitor and attack share the same filesystem.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, TrapCache* cache = nullptr) {
  ExperimentResult r;
  r.corpus = cfg.corpus_label;
  r.method = to_string(cfg.method);
  r.profile = cfg.profile.name;
  r.seed = cfg.seed;
  r.started_at = wall_seconds();
  r.files_total = cfg.manifest.files.size();

  restore_corpus(cfg.manifest, cfg.root);
  const TrapList selected = detail::obtain_traps(cfg, cache);
  r.trap_count = selected.entries.size();
  r.trap_pct = r.files_total == 0 ? 0.0 : 100.0 * static_cast<double>(r.trap_count) / static_cast<double>(r.files_total);

  TrapList active = rename_traps(selected, cfg.suffix);
  StopHandle stop;
  auto monitor = std::make_unique<TrapMonitor>(active, std::make_shared<EmulatorKillAction>(stop));
  const auto ready_deadline = mono_ns() + std::chrono::duration_cast<std::chrono::nanoseconds>(cfg.ready_timeout).count();
  try {
    monitor->start();
  } catch (const std::exception& e) {
    r.failure = std::string("monitor not ready: ") + e.what();
  }
  if (r.failed() || mono_ns() > ready_deadline) {
    if (r.failure.empty()) r.failure = "monitor not ready within timeout";
    monitor.reset();
    restore_traps(active);
    restore_corpus(cfg.manifest, cfg.root);
    r.finished_at = wall_seconds();
    return r;
  }

  std::vector<double> memory;
  std::atomic<bool> sampling{true};
  memory.push_back(resident_memory_mb());
  std::thread sampler([&] {
    while (sampling.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      if (sampling.load()) memory.push_back(resident_memory_mb());
    }
  });

  AttackOptions aopt = cfg.attack;
  aopt.seed = cfg.seed;
  AttackLog log;
  try {
    log = run_attack(cfg.profile, cfg.root, stop, aopt);
  } catch (const std::exception& e) {
    r.failure = std::string("attack failed: ") + e.what();
  }
  const auto alert = monitor->wait_first_alert(cfg.settle);
  sampling = false;
  sampler.join();
  while (memory.size() < 3) memory.push_back(resident_memory_mb());
  monitor->stop();

  r.monitor_memory_mb = std::accumulate(memory.begin(), memory.end(), 0.0) / static_cast<double>(memory.size());
  r.stop_cause = log.stop_cause == StopCause::Killed ? "killed" : "finished";
  if (alert && !r.failed()) r.detection_delay_s = detection_delay(log, *alert);

  r.files_lost = count_file_loss(cfg.root, cfg.profile.extension);
  r.file_loss_pct = r.files_total == 0 ? 0.0 : 100.0 * static_cast<double>(r.files_lost) / static_cast<double>(r.files_total);
  for (const auto& e : active.entries) {
    std::error_code ec;
    if (fs::exists(e.active_path, ec)) ++r.traps_intact;
  }
  {
    std::set<std::string> trap_originals;
    for (const auto& e : active.entries) trap_originals.insert(e.original_path.string());
    for (const auto& f : cfg.manifest.files) {
      const fs::path p = cfg.root / f.path;
      std::error_code ec;
      if (!trap_originals.contains(p.string()) && fs::exists(p, ec)) ++r.files_untouched;
    }
  }

  restore_traps(active);
  if (cfg.restore_after) {
    restore_corpus(cfg.manifest, cfg.root);
    r.restored_exact = !cfg.verify_restore || verify_corpus(cfg.manifest, cfg.root).empty();
  }
  r.finished_at = wall_seconds();
  return r;
}

struct GridCorpus {
  std::string label;
  fs::path root;
  CorpusManifest manifest;
};

struct GridSpec {
  std::vector<GridCorpus> corpora;
  std::vector<TrapMethod> methods;
  std::vector<AttackProfile> profiles;
  std::vector<std::uint64_t> seeds;
  SelectionOptions selection{};
  AttackOptions attack{};
  std::string suffix = "_tp";
  std::optional<fs::path> results_path;  // JSON-lines, appended per cell
};

inline std::string cell_key(const std::string& corpus, const std::string& method, const std::string& profile,
                            std::uint64_t seed) {
  return corpus + '|' + method + '|' + profile + '|' + std::to_string(seed);
}

inline std::string cell_key(const ExperimentResult& r) { return cell_key(r.corpus, r.method, r.profile, r.seed); }

inline std::vector<ExperimentResult> read_results(const fs::path& file) {
  std::vector<ExperimentResult> out;
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(experiment_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("malformed result in " + file.string() + ": " + e.what(), n);
    }
  }
  return out;
}

/// Runs every missing cell of the cross product. Cells already present in
/// `results_path` are loaded instead of re-run. Returns all cells.
inline std::vector<ExperimentResult> run_grid(const GridSpec& spec,
                                              const std::function<void(const ExperimentResult&)>& progress = {}) {
  std::vector<ExperimentResult> results;
  std::set<std::string> done;
  if (spec.results_path) {
    for (auto& r : read_results(*spec.results_path)) {
      if (done.insert(cell_key(r)).second) results.push_back(std::move(r));
    }
  }
  std::optional<std::ofstream> sink;
  if (spec.results_path) sink.emplace(*spec.results_path, std::ios::app);

  TrapCache cache;
  for (const auto& corpus : spec.corpora) {
    for (auto method : spec.methods) {
      for (const auto& profile : spec.profiles) {
        for (auto seed : spec.seeds) {
          if (done.contains(cell_key(corpus.label, to_string(method), profile.name, seed))) continue;
          ExperimentConfig cfg;
          cfg.corpus_label = corpus.label;
          cfg.root = corpus.root;
          cfg.manifest = corpus.manifest;
          cfg.method = method;
          cfg.profile = profile;
          cfg.seed = seed;
          cfg.selection = spec.selection;
          cfg.attack = spec.attack;
          cfg.suffix = spec.suffix;
          ExperimentResult r;
          try {
            r = run_experiment(cfg, &cache);
          } catch (const std::exception& e) {
            r.corpus = corpus.label;
            r.method = to_string(method);
            r.profile = profile.name;
            r.seed = seed;
            r.files_total = corpus.manifest.files.size();
            r.failure = e.what();
          }
          if (sink) *sink << to_json(r).dump() << '\n' << std::flush;
          if (progress) progress(r);
          done.insert(cell_key(r));
          results.push_back(std::move(r));
        }
      }
    }
  }
  return results;
}

struct MethodSummary {
  std::string corpus;
  std::string method;
  std::size_t runs = 0;
  std::size_t failures = 0;
  std::size_t missed = 0;
  double mean_trap_pct = 0.0;
  double mean_files_lost = 0.0;
  double mean_file_loss_pct = 0.0;
  std::optional<double> mean_delay_s;  // over detected runs only
  double mean_memory_mb = 0.0;
};

struct ComparisonReport {
  std::vector<ExperimentResult> cells;
  std::vector<MethodSummary> summaries;  // sorted by corpus, then mean file loss
};

/// Averages are computed from the cells alone; failed cells are counted but excluded.
inline ComparisonReport build_report(std::vector<ExperimentResult> cells) {
  ComparisonReport rep;
  std::map<std::pair<std::string, std::string>, std::vector<const ExperimentResult*>> groups;
  for (const auto& c : cells) groups[{c.corpus, c.method}].push_back(&c);
  for (const auto& [key, rs] : groups) {
    MethodSummary s;
    s.corpus = key.first;
    s.method = key.second;
    std::size_t detected = 0;
    double delay = 0.0;
    for (const auto* r : rs) {
      if (r->failed()) {
        ++s.failures;
        continue;
      }
      ++s.runs;
      s.mean_trap_pct += r->trap_pct;
      s.mean_files_lost += static_cast<double>(r->files_lost);
      s.mean_file_loss_pct += r->file_loss_pct;
      s.mean_memory_mb += r->monitor_memory_mb;
      if (r->detection_delay_s) {
        ++detected;
        delay += *r->detection_delay_s;
      } else {
        ++s.missed;
      }
    }
    if (s.runs > 0) {
      const auto n = static_cast<double>(s.runs);
      s.mean_trap_pct /= n;
      s.mean_files_lost /= n;
      s.mean_file_loss_pct /= n;
      s.mean_memory_mb /= n;
    }
    if (detected > 0) s.mean_delay_s = delay / static_cast<double>(detected);
    rep.summaries.push_back(s);
  }
  std::stable_sort(rep.summaries.begin(), rep.summaries.end(), [](const MethodSummary& a, const MethodSummary& b) {
    if (a.corpus != b.corpus) return a.corpus < b.corpus;
    return a.mean_files_lost < b.mean_files_lost;
  });
  rep.cells = std::move(cells);
  return rep;
}

inline void write_report_csv(const ComparisonReport& rep, std::ostream& out) {
  out << "corpus,method,runs,failures,missed,trap_pct,avg_files_lost,avg_file_loss_pct,avg_delay_s,avg_memory_mb\n";
  out.precision(10);
  for (const auto& s : rep.summaries) {
    out << s.corpus << ',' << s.method << ',' << s.runs << ',' << s.failures << ',' << s.missed << ','
        << s.mean_trap_pct << ',' << s.mean_files_lost << ',' << s.mean_file_loss_pct << ',';
    if (s.mean_delay_s) out << *s.mean_delay_s;
    out << ',' << s.mean_memory_mb << '\n';
  }
}

inline void write_report_markdown(const ComparisonReport& rep, std::ostream& out) {
  out << "| Corpus | Method | Trap % | Avg file loss | Avg file loss % | Avg delay (s) | Avg memory (MB) | Runs | Missed |"
         " Failed |\n";
  out << "|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  char buf[256];
  for (const auto& s : rep.summaries) {
    const std::string delay = s.mean_delay_s ? std::to_string(*s.mean_delay_s) : std::string("n/a");
    std::snprintf(buf, sizeof buf, "| %s | %s | %.3f | %.2f | %.4f | %s | %.2f | %zu | %zu | %zu |\n", s.corpus.c_str(),
                  s.method.c_str(), s.mean_trap_pct, s.mean_files_lost, s.mean_file_loss_pct, delay.c_str(),
                  s.mean_memory_mb, s.runs, s.missed, s.failures);
    out << buf;
  }
}

/// Toolkit configuration file. Every key is optional.
struct ToolkitConfig {
  ScanConfig scan{};
  TrapMethod method = TrapMethod::AP;
  std::string suffix = "_tp";
  std::uint64_t seed = 0;
  SelectionOptions selection{};
  std::map<std::string, nlohmann::json> profile_overrides;
  std::optional<double> rescan_interval;  // seconds
};

inline AttackProfile apply_profile_override(AttackProfile p, const nlohmann::json& o) {
  if (o.contains("order")) p.order = parse_order(o.at("order").get<std::string>());
  if (o.contains("threads")) p.threads = o.at("threads").get<int>();
  if (o.contains("pre_encryption_delay")) p.pre_encryption_delay = o.at("pre_encryption_delay").get<double>();
  if (o.contains("extension")) p.extension = o.at("extension").get<std::string>();
  if (o.contains("min_size_filter")) p.min_size_filter = o.at("min_size_filter").get<std::uint64_t>();
  if (o.contains("throughput")) p.throughput = o.at("throughput").get<double>();
  return p;
}

inline ToolkitConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("configuration must be a JSON object");
  ToolkitConfig c;
  // Nested keys may be written either as {"ap": {"damping": x}} or as "ap.damping".
  auto find = [&](const std::string& dotted) -> const nlohmann::json* {
    if (auto it = j.find(dotted); it != j.end()) return &*it;
    const auto dot = dotted.find('.');
    if (dot == std::string::npos) return nullptr;
    auto outer = j.find(dotted.substr(0, dot));
    if (outer == j.end() || !outer->is_object()) return nullptr;
    auto inner = outer->find(dotted.substr(dot + 1));
    return inner == outer->end() ? nullptr : &*inner;
  };
  try {
    if (auto* v = find("roots")) {
      for (const auto& r : *v) c.scan.roots.emplace_back(r.get<std::string>());
    }
    if (auto* v = find("exclusions")) c.scan.exclusions = v->get<std::vector<std::string>>();
    if (auto* v = find("min_files")) c.scan.min_files = v->get<int>();
    if (auto* v = find("method")) c.method = parse_method(v->get<std::string>());
    if (auto* v = find("suffix")) c.suffix = v->get<std::string>();
    if (auto* v = find("seed")) c.seed = v->get<std::uint64_t>();
    c.selection.seed = c.seed;
    if (auto* v = find("variance_retained")) c.selection.dataset.variance_retained = v->get<double>();
    if (auto* v = find("include_name_order")) c.selection.dataset.include_name_order = v->get<bool>();
    if (auto* v = find("ap.damping")) c.selection.ap.damping = v->get<double>();
    if (auto* v = find("gmm.criterion")) {
      const auto s = to_lower(v->get<std::string>());
      if (s == "aic") c.selection.gmm.criterion = InformationCriterion::AIC;
      else if (s == "bic") c.selection.gmm.criterion = InformationCriterion::BIC;
      else throw InvalidArgument("gmm.criterion must be aic or bic");
    }
    if (auto* v = find("ms.quantile")) c.selection.ms_quantile = v->get<double>();
    if (auto* v = find("optics.minpts_candidates")) c.selection.optics_minpts_candidates = v->get<std::vector<int>>();
    if (auto* v = find("rescan_interval")) c.rescan_interval = v->get<double>();
    if (auto* v = find("profiles")) {
      for (const auto& [name, o] : v->items()) c.profile_overrides[to_lower(name)] = o;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad configuration value: ") + e.what());
  }
  if (!(c.selection.dataset.variance_retained > 0.0 && c.selection.dataset.variance_retained <= 1.0)) {
    throw InvalidArgument("variance_retained must lie in (0, 1]");
  }
  if (!(c.selection.ap.damping >= 0.5 && c.selection.ap.damping < 1.0)) {
    throw InvalidArgument("ap.damping must lie in [0.5, 1)");
  }
  return c;
}

inline ToolkitConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open configuration " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = text.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(e.byte, text.size()));
    throw ParseError("malformed configuration " + file.string() + ": " + e.what(),
                     static_cast<std::size_t>(std::count(text.begin(), upto, '\n')) + 1);
  }
}

/// Built-in profile by name with any configured overrides applied.
inline AttackProfile resolve_profile(const ToolkitConfig& c, std::string_view name) {
  AttackProfile p;
  try {
    p = find_profile(name);
  } catch (const InvalidArgument&) {
    if (to_lower(name) != "custom" && !c.profile_overrides.contains(to_lower(name))) throw;
    p = AttackProfile{.name = std::string(name), .order = TraversalOrder::Random, .threads = 1,
                      .pre_encryption_delay = 0.0, .extension = ".custom", .min_size_filter = 0, .throughput = 50.0};
  }
  if (auto it = c.profile_overrides.find(to_lower(name)); it != c.profile_overrides.end()) {
    p = apply_profile_override(p, it->second);
  }
  return p;
}

}  // namespace trapsel
