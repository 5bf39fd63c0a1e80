#include <gtest/gtest.h>

#include "test_util.hpp"
#include "trapsel/harness.hpp"

using namespace trapsel;
using testutil::TempDir;
using testutil::write_file;

namespace {

CorpusSpec small_spec(std::uint64_t seed, int dirs, int files) {
  auto s = default_corpus_spec();
  s.seed = seed;
  s.n_directories = dirs;
  s.files_per_directory = {static_cast<double>(files), 0.0, CountLaw::Fixed};
  return s;
}

AttackProfile fast(TraversalOrder order, int threads = 1) {
  return {"fast", order, threads, 0.0, ".enc", 0, 400.0};
}

ExperimentResult cell(const std::string& method, std::uint64_t seed, std::size_t lost, std::optional<double> delay,
                      double mem = 10.0) {
  ExperimentResult r;
  r.corpus = "c";
  r.method = method;
  r.profile = "p";
  r.seed = seed;
  r.files_total = 1000;
  r.files_lost = lost;
  r.file_loss_pct = 100.0 * static_cast<double>(lost) / 1000.0;
  r.detection_delay_s = delay;
  r.trap_count = 10;
  r.trap_pct = 1.0;
  r.monitor_memory_mb = mem;
  return r;
}

}  // namespace

TEST(FileLoss, CountsExtensionRecursively) {
  TempDir t("h1");
  for (int i = 0; i < 7; ++i) write_file(t / ("d" + std::to_string(i % 3) + "/f" + std::to_string(i) + ".enc"), "x");
  write_file(t / "d0/plain.txt", "x");
  write_file(t / "d0/enc", "x");
  EXPECT_EQ(count_file_loss(t.path(), ".enc"), 7U);
  EXPECT_EQ(count_file_loss(t.path(), ".locky"), 0U);
  EXPECT_THROW(count_file_loss(t.path(), ""), InvalidArgument);
  TempDir u("h1b");
  for (int i = 0; i < 100; ++i) write_file(u / ("f" + std::to_string(i) + ".txt.enc"), "x");
  EXPECT_EQ(count_file_loss(u.path(), ".enc"), 100U);
}

TEST(DetectionDelay, Arithmetic) {
  EXPECT_DOUBLE_EQ(detection_delay(1'000'000'000, 2'500'000'000), 1.5);
  EXPECT_DOUBLE_EQ(detection_delay(5, 5), 0.0);
  EXPECT_THROW(detection_delay(2'000, 1'000), Error);
}

TEST(Experiment, EmptyTrapListIsMissedDetection) {
  TempDir t("h2");
  const auto m = generate_corpus(small_spec(1, 3, 20), t / "root");
  ExperimentConfig cfg;
  cfg.root = t / "root";
  cfg.manifest = m;
  cfg.profile = fast(TraversalOrder::Alphabetical, 2);
  cfg.traps = TrapList{};
  const auto r = run_experiment(cfg);
  ASSERT_FALSE(r.failed()) << r.failure;
  EXPECT_FALSE(r.detected());
  EXPECT_EQ(r.files_lost, 60U);
  EXPECT_DOUBLE_EQ(r.file_loss_pct, 100.0);
  EXPECT_EQ(r.trap_count, 0U);
  EXPECT_EQ(r.stop_cause, "finished");
  EXPECT_TRUE(verify_corpus(m, cfg.root).empty());
}

TEST(Experiment, DetectsAndStopsAndConservesFiles) {
  TempDir t("h3");
  const auto m = generate_corpus(small_spec(2, 4, 40), t / "root");
  for (auto method : {TrapMethod::APFO, TrapMethod::OPTICS}) {
    ExperimentConfig cfg;
    cfg.root = t / "root";
    cfg.manifest = m;
    cfg.method = method;
    cfg.profile = fast(TraversalOrder::Alphabetical);
    cfg.seed = 3;
    cfg.verify_restore = true;
    const auto r = run_experiment(cfg);
    ASSERT_FALSE(r.failed()) << r.failure;
    EXPECT_TRUE(r.detected());
    EXPECT_GE(*r.detection_delay_s, 0.0);
    EXPECT_EQ(r.stop_cause, "killed");
    EXPECT_GT(r.trap_count, 0U);
    EXPECT_GT(r.monitor_memory_mb, 0.0);
    EXPECT_LT(r.files_lost, 160U);
    EXPECT_EQ(r.files_lost + r.files_untouched + r.traps_intact, r.files_total);
    EXPECT_TRUE(r.restored_exact);
    EXPECT_NEAR(r.file_loss_pct, 100.0 * static_cast<double>(r.files_lost) / 160.0, 1e-12);
  }
  EXPECT_TRUE(verify_corpus(m, t / "root").empty());
}

TEST(Experiment, ResultJsonRoundTrip) {
  auto r = cell("AP", 4, 12, 0.25);
  r.failure = "";
  r.stop_cause = "killed";
  const auto back = experiment_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  const auto missed = experiment_from_json(to_json(cell("AP", 4, 12, std::nullopt)));
  EXPECT_FALSE(missed.detected());
  EXPECT_EQ(to_json(cell("AP", 4, 12, std::nullopt)).at("detection_delay_s"), "missed");
}

TEST(Grid, CellCountAndResume) {
  TempDir t("h4");
  const auto m = generate_corpus(small_spec(5, 2, 15), t / "root");
  GridSpec spec;
  spec.corpora = {{"small", t / "root", m}};
  spec.methods = {TrapMethod::AP, TrapMethod::MeanShift};
  spec.profiles = {fast(TraversalOrder::Alphabetical), fast(TraversalOrder::ReverseAlphabetical)};
  spec.profiles[1].name = "fast-rev";
  spec.seeds = {1, 2};
  spec.results_path = t / "results.jsonl";
  int ran = 0;
  const auto first = run_grid(spec, [&](const ExperimentResult&) { ++ran; });
  EXPECT_EQ(first.size(), 8U);
  EXPECT_EQ(ran, 8);
  std::set<std::string> keys;
  for (const auto& r : first) keys.insert(cell_key(r));
  EXPECT_EQ(keys.size(), 8U);

  // Drop the last three cells and resume: only those are re-run.
  std::vector<std::string> lines;
  {
    std::ifstream in(t / "results.jsonl");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  ASSERT_EQ(lines.size(), 8U);
  {
    std::ofstream out(t / "results.jsonl", std::ios::trunc);
    for (int i = 0; i < 5; ++i) out << lines[static_cast<std::size_t>(i)] << '\n';
  }
  ran = 0;
  const auto second = run_grid(spec, [&](const ExperimentResult&) { ++ran; });
  EXPECT_EQ(ran, 3);
  EXPECT_EQ(second.size(), 8U);
  ran = 0;
  run_grid(spec, [&](const ExperimentResult&) { ++ran; });
  EXPECT_EQ(ran, 0);
}

TEST(Grid, FullDesignHas270Cells) {
  // 3 corpora x 5 methods x 18 profiles; seeds multiply on top.
  EXPECT_EQ(3U * all_methods().size() * builtin_profiles().size(), 270U);
}

TEST(Grid, MalformedResultsFileIsParseError) {
  TempDir t("h5");
  write_file(t / "r.jsonl", "{\"corpus\": \"c\"}\n");
  EXPECT_THROW(read_results(t / "r.jsonl"), ParseError);
  EXPECT_TRUE(read_results(t / "absent.jsonl").empty());
}

TEST(Report, AveragesComputedFromCells) {
  std::vector<ExperimentResult> cells{cell("AP", 1, 10, 0.5, 10.0), cell("AP", 2, 30, std::nullopt, 20.0),
                                      cell("OPTICS", 1, 2, 0.1, 40.0), cell("OPTICS", 2, 4, 0.3, 44.0)};
  auto failed = cell("OPTICS", 3, 999, 9.0);
  failed.failure = "monitor not ready";
  cells.push_back(failed);
  const auto rep = build_report(cells);
  ASSERT_EQ(rep.summaries.size(), 2U);
  const auto& best = rep.summaries[0];
  EXPECT_EQ(best.method, "OPTICS");
  EXPECT_EQ(best.runs, 2U);
  EXPECT_EQ(best.failures, 1U);
  EXPECT_DOUBLE_EQ(best.mean_files_lost, 3.0);
  EXPECT_DOUBLE_EQ(*best.mean_delay_s, 0.2);
  EXPECT_DOUBLE_EQ(best.mean_memory_mb, 42.0);
  const auto& ap = rep.summaries[1];
  EXPECT_EQ(ap.missed, 1U);
  EXPECT_DOUBLE_EQ(ap.mean_files_lost, 20.0);
  EXPECT_DOUBLE_EQ(ap.mean_file_loss_pct, 2.0);
  EXPECT_DOUBLE_EQ(*ap.mean_delay_s, 0.5);
  EXPECT_EQ(rep.cells.size(), 5U);

  std::ostringstream csv, md;
  write_report_csv(rep, csv);
  write_report_markdown(rep, md);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
            "corpus,method,runs,failures,missed,trap_pct,avg_files_lost,avg_file_loss_pct,avg_delay_s,avg_memory_mb");
  EXPECT_NE(csv.str().find("c,OPTICS,2,1,0,1,3,0.3,0.2,42"), std::string::npos);
  EXPECT_NE(md.str().find("| c | AP |"), std::string::npos);
}

TEST(Config, DefaultsAndNestedOrDottedKeys) {
  const auto d = config_from_json(nlohmann::json::object());
  EXPECT_EQ(d.method, TrapMethod::AP);
  EXPECT_EQ(d.suffix, "_tp");
  EXPECT_DOUBLE_EQ(d.selection.ap.damping, 0.9);
  EXPECT_DOUBLE_EQ(d.selection.dataset.variance_retained, 0.95);

  const auto a = config_from_json(nlohmann::json::parse(
      R"({"roots": ["/x"], "method": "optics", "ap": {"damping": 0.7}, "gmm.criterion": "AIC",
          "optics.minpts_candidates": [4, 6], "seed": 12, "rescan_interval": 3600,
          "profiles": {"Conti": {"threads": 3}}})"));
  EXPECT_EQ(a.scan.roots, std::vector<fs::path>{"/x"});
  EXPECT_EQ(a.method, TrapMethod::OPTICS);
  EXPECT_DOUBLE_EQ(a.selection.ap.damping, 0.7);
  EXPECT_EQ(a.selection.gmm.criterion, InformationCriterion::AIC);
  EXPECT_EQ(a.selection.optics_minpts_candidates, (std::vector<int>{4, 6}));
  EXPECT_EQ(a.selection.seed, 12U);
  EXPECT_EQ(*a.rescan_interval, 3600.0);
  EXPECT_EQ(resolve_profile(a, "conti").threads, 3);
  EXPECT_EQ(resolve_profile(a, "conti").order, find_profile("conti").order);
  EXPECT_THROW(resolve_profile(a, "nope"), InvalidArgument);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"variance_retained": 1.5})")), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ap.damping": 1.0})")), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"gmm": {"criterion": "hqc"}})")), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), InvalidArgument);
  TempDir t("h6");
  write_file(t / "c.json", "{\n  \"method\": \"AP\",\n  oops\n}");
  try {
    load_config(t / "c.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3U);
  }
  EXPECT_THROW(load_config(t / "none.json"), Error);
}

TEST(Config, ShippedExampleParses) {
  const auto c = load_config(fs::path(TRAPSEL_SOURCE_DIR) / "config/trapsel.example.json");
  EXPECT_EQ(c.method, TrapMethod::APFO);
  EXPECT_EQ(c.scan.min_files, 3);
  EXPECT_EQ(resolve_profile(c, "conti").threads, 4);
  EXPECT_EQ(resolve_profile(c, "custom").order, TraversalOrder::Alphabetical);
}
