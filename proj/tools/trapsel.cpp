// trapsel command-line front end.
//
// Exit codes: 0 success, 1 experiment or runtime failure, 2 usage error.

#include <signal.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "trapsel/trapsel.hpp"

namespace fs = std::filesystem;
using namespace trapsel;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

fs::path default_manifest_path(const fs::path& root) {
  fs::path r = root;
  if (r.filename().empty()) r = r.parent_path();
  return r.string() + ".manifest.json";
}

struct Common {
  std::string config;
  std::vector<std::string> roots;
  std::vector<std::string> exclusions;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::string suffix;

  ToolkitConfig resolve() const {
    ToolkitConfig c = config.empty() ? ToolkitConfig{} : load_config(config);
    if (!roots.empty()) {
      c.scan.roots.clear();
      for (const auto& r : roots) c.scan.roots.emplace_back(r);
    }
    for (const auto& e : exclusions) c.scan.exclusions.push_back(e);
    if (seed) c.seed = c.selection.seed = *seed;
    if (!method.empty()) c.method = parse_method(method);
    if (!suffix.empty()) c.suffix = suffix;
    return c;
  }
};

void add_common(CLI::App* cmd, Common& c, bool with_method) {
  cmd->add_option("--config", c.config, "Configuration file (JSON)");
  cmd->add_option("--root", c.roots, "Endpoint or corpus root");
  cmd->add_option("--exclude", c.exclusions, "Excluded path prefix");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--suffix", c.suffix, "Trap rename suffix");
  if (with_method) cmd->add_option("--method", c.method, "ap, gmm, meanshift, optics or apfo");
}

void print_warnings(const Warnings& w) {
  for (const auto& m : w) std::cerr << "warning: " << m << '\n';
}

// Blocks SIGINT/SIGTERM so that they can be awaited with sigtimedwait.
sigset_t block_termination_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

bool wait_signal(const sigset_t& set, std::chrono::milliseconds timeout) {
  timespec ts{static_cast<time_t>(timeout.count() / 1000), static_cast<long>((timeout.count() % 1000) * 1000000)};
  return sigtimedwait(&set, nullptr, &ts) > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoy-file ransomware early detection toolkit"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic endpoint corpus");
  std::string gen_root, gen_manifest;
  std::uint64_t gen_seed = 1;
  int gen_dirs = -1;
  double gen_files = -1;
  double gen_spread = 0;
  int gen_group = 0;
  gen->add_option("--root", gen_root, "Empty directory to populate")->required();
  gen->add_option("--manifest", gen_manifest, "Manifest output (default: <root>.manifest.json)");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--dirs", gen_dirs, "Number of directories");
  gen->add_option("--files-per-dir", gen_files, "Mean files per directory");
  gen->add_option("--spread", gen_spread, "Uniform half-width of files per directory");
  gen->add_option("--group", gen_group, "Directories per parent group (0: flat)");

  // select
  auto* sel = app.add_subcommand("select", "Select trap files");
  Common sel_c;
  std::string sel_out;
  bool sel_rename = false;
  add_common(sel, sel_c, true);
  sel->add_option("--out", sel_out, "Trap list output")->required();
  sel->add_flag("--rename", sel_rename, "Rename the selected traps with the suffix");

  // monitor
  auto* mon = app.add_subcommand("monitor", "Watch a trap list");
  std::string mon_traps, mon_audit;
  bool mon_continuous = false, mon_dry = false;
  std::vector<int> mon_pids;
  mon->add_option("--traps", mon_traps, "Trap list")->required();
  mon->add_option("--audit", mon_audit, "Append alerts to this JSON-lines file");
  mon->add_flag("--continuous", mon_continuous, "Keep reporting after the first alert");
  mon->add_flag("--dry-run", mon_dry, "Do not signal anything on alert");
  mon->add_option("--kill-pid", mon_pids, "Process to terminate on alert");

  // attack
  auto* att = app.add_subcommand("attack", "Run an emulated attack against a marked corpus");
  Common att_c;
  std::string att_profile, att_order, att_log;
  std::optional<int> att_threads;
  double att_delay_scale = 1.0;
  add_common(att, att_c, false);
  att->add_option("--profile", att_profile, "Attack profile")->required();
  att->add_option("--threads-override", att_threads, "Worker threads");
  att->add_option("--order-override", att_order, "Traversal order");
  att->add_option("--delay-scale", att_delay_scale, "Scale the pre-encryption delay");
  att->add_option("--log", att_log, "Attack log output (default: stdout)");

  // run
  auto* run = app.add_subcommand("run", "Run one experiment");
  Common run_c;
  std::string run_profile, run_manifest;
  add_common(run, run_c, true);
  run->add_option("--profile", run_profile, "Attack profile")->required();
  run->add_option("--manifest", run_manifest, "Corpus manifest (default: <root>.manifest.json)");

  // grid
  auto* grid = app.add_subcommand("grid", "Run methods x profiles x seeds");
  Common grid_c;
  std::string grid_methods = "ap,gmm,meanshift,optics,apfo", grid_profiles = "all", grid_seeds = "1", grid_results,
              grid_manifest, grid_label = "corpus";
  add_common(grid, grid_c, false);
  grid->add_option("--methods", grid_methods, "Comma-separated methods");
  grid->add_option("--profiles", grid_profiles, "Comma-separated profiles or 'all'");
  grid->add_option("--seeds", grid_seeds, "Comma-separated seeds");
  grid->add_option("--results", grid_results, "Results JSON-lines (resumable)")->required();
  grid->add_option("--manifest", grid_manifest, "Corpus manifest");
  grid->add_option("--label", grid_label, "Corpus label");

  // report
  auto* rep = app.add_subcommand("report", "Summarize experiment results");
  std::string rep_results, rep_csv, rep_md;
  rep->add_option("--results", rep_results, "Results JSON-lines")->required();
  rep->add_option("--csv", rep_csv, "CSV output");
  rep->add_option("--markdown", rep_md, "Markdown output (default: stdout)");

  // restore
  auto* res = app.add_subcommand("restore", "Restore a corpus to its manifest");
  std::string res_root, res_manifest;
  res->add_option("--root", res_root, "Corpus root")->required();
  res->add_option("--manifest", res_manifest, "Manifest (default: <root>.manifest.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      CorpusSpec spec = default_corpus_spec();
      spec.seed = gen_seed;
      if (gen_dirs > 0) spec.n_directories = gen_dirs;
      if (gen_files > 0) {
        spec.files_per_directory = {gen_files, 0.0, CountLaw::Fixed};
      }
      if (gen_spread > 0) {
        spec.files_per_directory.spread = gen_spread;
        spec.files_per_directory.law = CountLaw::Uniform;
      }
      spec.directories_per_group = gen_group;
      const auto manifest = generate_corpus(spec, gen_root);
      const fs::path out = gen_manifest.empty() ? default_manifest_path(gen_root) : fs::path(gen_manifest);
      write_manifest(manifest, out);
      std::cout << "generated " << manifest.files.size() << " files in " << manifest.directories.size()
                << " directories; manifest " << out.string() << '\n';
      return 0;
    }

    if (*sel) {
      const auto cfg = sel_c.resolve();
      if (cfg.scan.roots.empty()) throw InvalidArgument("no roots given (--root or config 'roots')");
      Warnings w;
      TrapList list = select_traps(cfg.scan, cfg.method, cfg.selection, &w);
      print_warnings(w);
      if (sel_rename) list = rename_traps(list, cfg.suffix);
      persist_traps(list, sel_out);
      std::cout << list.entries.size() << " traps (" << list.trap_percentage() << "% of " << list.total_files
                << " files) written to " << sel_out << '\n';
      return 0;
    }

    if (*mon) {
      const TrapList list = load_traps(mon_traps);
      std::shared_ptr<KillAction> action;
      if (mon_dry) {
        action = std::make_shared<DryRunAction>();
      } else if (!mon_pids.empty()) {
        action = std::make_shared<ProcessKillAction>(std::vector<pid_t>(mon_pids.begin(), mon_pids.end()));
      } else {
        action = std::make_shared<DryRunAction>();
      }
      const sigset_t sigs = block_termination_signals();
      MonitorOptions opt;
      opt.mode = mon_continuous ? WatchMode::Continuous : WatchMode::FirstHit;
      if (!mon_audit.empty()) opt.audit_log = mon_audit;
      opt.on_alert = [](const AlertReport& a) { std::cout << to_json(a).dump() << std::endl; };
      TrapMonitor monitor(list, action, opt);
      monitor.start();
      std::cout << "READY" << std::endl;
      for (;;) {
        if (wait_signal(sigs, std::chrono::milliseconds(100))) break;
        if (!mon_continuous && !monitor.alerts().empty()) break;
      }
      monitor.stop();
      return 0;
    }

    if (*att) {
      auto cfg = att_c.resolve();
      if (att_c.roots.size() != 1) throw InvalidArgument("attack needs exactly one --root");
      const AttackProfile profile = resolve_profile(cfg, att_profile);
      AttackOptions opt;
      opt.seed = cfg.seed;
      opt.threads_override = att_threads;
      if (!att_order.empty()) opt.order_override = parse_order(att_order);
      opt.delay_scale = att_delay_scale;
      const sigset_t sigs = block_termination_signals();
      StopHandle stop;
      std::atomic<bool> done{false};
      std::thread watcher([&] {
        while (!done.load()) {
          if (wait_signal(sigs, std::chrono::milliseconds(50))) {
            stop.request_stop();
            return;
          }
        }
      });
      AttackLog log;
      try {
        log = run_attack(profile, att_c.roots.front(), stop, opt);
      } catch (...) {
        done = true;
        watcher.join();
        throw;
      }
      done = true;
      watcher.join();
      if (att_log.empty()) {
        write_attack_log(log, std::cout);
      } else {
        std::ofstream out(att_log);
        write_attack_log(log, out);
      }
      return 0;
    }

    if (*run) {
      auto cfg = run_c.resolve();
      std::optional<fs::path> temp_root;
      ExperimentConfig ec;
      if (cfg.scan.roots.empty()) {
        temp_root = fs::temp_directory_path() / ("trapsel-run-" + std::to_string(::getpid()));
        fs::create_directories(*temp_root);
        CorpusSpec spec = default_corpus_spec();
        spec.seed = cfg.seed;
        ec.manifest = generate_corpus(spec, *temp_root);
        ec.root = *temp_root;
      } else {
        ec.root = cfg.scan.roots.front();
        ec.manifest = read_manifest(run_manifest.empty() ? default_manifest_path(ec.root) : fs::path(run_manifest));
      }
      ec.method = cfg.method;
      ec.profile = resolve_profile(cfg, run_profile);
      ec.seed = cfg.seed;
      ec.selection = cfg.selection;
      ec.suffix = cfg.suffix;
      ExperimentResult r;
      try {
        r = run_experiment(ec);
      } catch (...) {
        if (temp_root) fs::remove_all(*temp_root);
        throw;
      }
      if (temp_root) fs::remove_all(*temp_root);
      std::cout << to_json(r).dump() << std::endl;
      return r.failed() ? 1 : 0;
    }

    if (*grid) {
      auto cfg = grid_c.resolve();
      if (cfg.scan.roots.size() != 1) throw InvalidArgument("grid needs exactly one corpus root");
      GridSpec spec;
      const fs::path root = cfg.scan.roots.front();
      spec.corpora.push_back(
          {grid_label, root, read_manifest(grid_manifest.empty() ? default_manifest_path(root) : fs::path(grid_manifest))});
      for (const auto& m : split_list(grid_methods)) spec.methods.push_back(parse_method(m));
      if (grid_profiles == "all") {
        for (const auto& p : builtin_profiles()) spec.profiles.push_back(resolve_profile(cfg, p.name));
      } else {
        for (const auto& p : split_list(grid_profiles)) spec.profiles.push_back(resolve_profile(cfg, p));
      }
      for (const auto& s : split_list(grid_seeds)) spec.seeds.push_back(std::stoull(s));
      spec.selection = cfg.selection;
      spec.suffix = cfg.suffix;
      spec.results_path = grid_results;
      std::size_t failures = 0;
      const auto cells = run_grid(spec, [&](const ExperimentResult& r) {
        if (r.failed()) ++failures;
        std::cerr << r.method << ' ' << r.profile << " seed " << r.seed << ": lost " << r.files_lost
                  << (r.failed() ? " (failed: " + r.failure + ")" : std::string()) << '\n';
      });
      write_report_markdown(build_report(cells), std::cout);
      return failures == 0 ? 0 : 1;
    }

    if (*rep) {
      const auto report = build_report(read_results(rep_results));
      if (!rep_csv.empty()) {
        std::ofstream out(rep_csv);
        write_report_csv(report, out);
      }
      if (rep_md.empty()) {
        write_report_markdown(report, std::cout);
      } else {
        std::ofstream out(rep_md);
        write_report_markdown(report, out);
      }
      return 0;
    }

    if (*res) {
      const auto manifest = read_manifest(res_manifest.empty() ? default_manifest_path(res_root) : fs::path(res_manifest));
      const auto stats = restore_corpus(manifest, res_root);
      const auto problems = verify_corpus(manifest, res_root);
      std::cout << "renamed back " << stats.renamed_back << ", rewritten " << stats.rewritten << ", recreated "
                << stats.recreated << ", removed " << stats.removed << '\n';
      for (const auto& p : problems) std::cerr << "mismatch: " << p << '\n';
      return problems.empty() ? 0 : 1;
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
