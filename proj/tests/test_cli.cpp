#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>

#include "test_util.hpp"
#include "trapsel/harness.hpp"

using namespace trapsel;
using testutil::TempDir;
using testutil::write_file;

namespace {

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::string& args, const TempDir& scratch) {
  const auto err_file = scratch / "stderr.txt";
  const std::string cmd = std::string(TRAPSEL_CLI_PATH) + " " + args + " 2>" + err_file.string();
  Outcome o;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) return o;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) o.out += buf;
  const int raw = ::pclose(p);
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  o.err = testutil::read_file(err_file);
  return o;
}

fs::path manifest_of(const fs::path& root) { return root.string() + ".manifest.json"; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, UnknownFlagIsUsageError) {
  TempDir t("c1");
  const auto o = run_cli("select --bogus", t);
  EXPECT_EQ(o.status, 2);
  EXPECT_NE(o.err.find("Usage"), std::string::npos);
  EXPECT_TRUE(o.out.empty());
  EXPECT_EQ(run_cli("select --root /tmp --method kmeans --out x.json", t).status, 2);
}

TEST(Cli, HelpExitsZero) {
  TempDir t("c2");
  const auto o = run_cli("--help", t);
  EXPECT_EQ(o.status, 0);
  for (const char* sub : {"gen-corpus", "select", "monitor", "attack", "run", "grid", "report", "restore"})
    EXPECT_NE(o.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, GenerateSelectRenameMonitorRestore) {
  TempDir t("c3");
  const auto root = t / "corpus";
  auto o = run_cli("gen-corpus --root " + q(root) + " --seed 3 --dirs 4 --files-per-dir 30", t);
  ASSERT_EQ(o.status, 0) << o.err;
  EXPECT_TRUE(fs::exists(manifest_of(root)));
  EXPECT_EQ(read_manifest(manifest_of(root)).files.size(), 120U);

  o = run_cli("select --root " + q(root) + " --method apfo --out " + q(t / "traps.json") + " --rename", t);
  ASSERT_EQ(o.status, 0) << o.err;
  const auto traps = load_traps(t / "traps.json");
  ASSERT_FALSE(traps.entries.empty());
  EXPECT_EQ(traps.method, TrapMethod::APFO);
  for (const auto& e : traps.entries) EXPECT_TRUE(fs::exists(e.active_path));

  const std::string cmd = std::string(TRAPSEL_CLI_PATH) + " monitor --dry-run --traps " + q(t / "traps.json") +
                          " --audit " + q(t / "audit.jsonl");
  FILE* p = ::popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  char buf[4096];
  ASSERT_NE(std::fgets(buf, sizeof buf, p), nullptr);
  EXPECT_EQ(std::string(buf), "READY\n");
  {
    std::ofstream out(traps.entries.front().active_path, std::ios::app);
    out << "tamper";
  }
  ASSERT_NE(std::fgets(buf, sizeof buf, p), nullptr);
  const auto alert = nlohmann::json::parse(buf);
  EXPECT_EQ(alert.at("event").at("kind"), "Modified");
  EXPECT_EQ(alert.at("action_outcome"), "DryRun");
  const int raw = ::pclose(p);
  EXPECT_TRUE(WIFEXITED(raw) && WEXITSTATUS(raw) == 0);
  EXPECT_TRUE(fs::exists(t / "audit.jsonl"));

  o = run_cli("restore --root " + q(root), t);
  EXPECT_EQ(o.status, 0) << o.err;
  EXPECT_TRUE(verify_corpus(read_manifest(manifest_of(root)), root).empty());
}

TEST(Cli, RunPrintsOneJsonLine) {
  TempDir t("c4");
  const auto root = t / "corpus";
  ASSERT_EQ(run_cli("gen-corpus --root " + q(root) + " --seed 8 --dirs 3 --files-per-dir 25", t).status, 0);
  const auto o = run_cli("run --root " + q(root) + " --method optics --profile Cuba --seed 2", t);
  ASSERT_EQ(o.status, 0) << o.err;
  ASSERT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 1);
  const auto r = experiment_from_json(nlohmann::json::parse(o.out));
  EXPECT_EQ(r.method, "OPTICS");
  EXPECT_EQ(r.profile, "Cuba");
  EXPECT_EQ(r.files_total, 75U);
  EXPECT_TRUE(r.failure.empty());
  EXPECT_TRUE(verify_corpus(read_manifest(manifest_of(root)), root).empty());
}

TEST(Cli, MissingTrapFileIsRuntimeError) {
  TempDir t("c5");
  const auto o = run_cli("monitor --traps " + q(t / "nope.json"), t);
  EXPECT_EQ(o.status, 1);
  EXPECT_NE(o.err.find("error:"), std::string::npos);
}
