#pragma once

// Synthetic endpoint corpora: deterministic generation from a seed, a JSON
// manifest describing every file, and bit-exact restore / verification.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trapsel/common.hpp"
#include "trapsel/features.hpp"

namespace trapsel {

enum class CountLaw { Fixed, Uniform, Normal };

struct CountDistribution {
  double mean = 100.0;
  double spread = 0.0;  // half-width for Uniform, standard deviation for Normal
  CountLaw law = CountLaw::Fixed;
};

struct CorpusSpec {
  int n_directories = 40;
  CountDistribution files_per_directory{450.0, 50.0, CountLaw::Uniform};
  // Per-type log-normal sizes: median bytes for each extension, shared sigma.
  double size_sigma = 1.0;
  std::uint64_t size_min = 1;
  std::uint64_t size_max = 1U << 20;
  std::map<std::string, double> type_mix;           // extension -> probability
  std::map<std::string, double> type_median_bytes;  // extension -> median size
  double modified_from = 1577836800.0;  // 2020-01-01
  double modified_to = 1704067200.0;    // 2024-01-01
  double created_lead_max = 30.0 * 86400.0;
  int sessions_min = 1;  // editing sessions per directory; files cluster around them in time
  int sessions_max = 6;
  double session_spread = 600.0;  // seconds
  int directories_per_group = 0;  // 0: flat; otherwise nest directories in groups
  std::uint64_t seed = 1;
};

/// Mix of common user-document types with desk-scale sizes.
inline CorpusSpec default_corpus_spec() {
  CorpusSpec s;
  s.type_mix = {{"pdf", 0.18}, {"docx", 0.14}, {"xlsx", 0.10}, {"txt", 0.10}, {"jpg", 0.16},
                {"png", 0.06}, {"mp3", 0.05}, {"csv", 0.08}, {"pptx", 0.05}, {"", 0.03}, {"zip", 0.05}};
  s.type_median_bytes = {{"pdf", 3000}, {"docx", 1500}, {"xlsx", 1250}, {"txt", 300},
                         {"jpg", 4000}, {"png", 2250},  {"mp3", 7500}, {"csv", 625},
                         {"pptx", 3500}, {"", 200},     {"zip", 5000}};
  return s;
}

struct ManifestEntry {
  std::string path;  // relative to the corpus root
  std::uint64_t size = 0;
  std::string type;
  double created = 0.0;  // intended; Linux cannot set birth time
  double modified = 0.0;
  std::uint64_t content_seed = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> directories;  // relative, sorted
  std::vector<ManifestEntry> files;      // sorted by path

  bool operator==(const CorpusManifest&) const = default;
};

inline nlohmann::json to_json(const CorpusManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files) {
    files.push_back({{"path", f.path},
                     {"size", f.size},
                     {"type", f.type},
                     {"created", f.created},
                     {"modified", f.modified},
                     {"content_seed", f.content_seed}});
  }
  return {{"seed", m.seed}, {"directories", m.directories}, {"files", files}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.directories = j.at("directories").get<std::vector<std::string>>();
  for (const auto& f : j.at("files")) {
    m.files.push_back({f.at("path").get<std::string>(), f.at("size").get<std::uint64_t>(),
                       f.at("type").get<std::string>(), f.at("created").get<double>(),
                       f.at("modified").get<double>(), f.at("content_seed").get<std::uint64_t>()});
  }
  return m;
}

inline void write_manifest(const CorpusManifest& m, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write manifest " + file.string());
  out << to_json(m).dump(1) << '\n';
  if (!out) throw Error("failed writing manifest " + file.string());
}

inline CorpusManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open manifest " + file.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed manifest " + file.string() + ": " + e.what(), 0);
  }
}

/// Deterministic file body for a content seed.
inline std::vector<char> content_bytes(std::uint64_t content_seed, std::uint64_t size) {
  std::vector<char> buf(size);
  Rng rng(content_seed);
  std::size_t i = 0;
  while (i < buf.size()) {
    std::uint64_t v = rng();
    for (int b = 0; b < 8 && i < buf.size(); ++b, ++i) {
      buf[i] = static_cast<char>(v & 0xff);
      v >>= 8;
    }
  }
  return buf;
}

namespace detail {

inline void write_file(const fs::path& p, const std::vector<char>& bytes, bool truncate_existing) {
  const int flags = O_WRONLY | O_CREAT | (truncate_existing ? O_TRUNC : 0);
  const int fd = ::open(p.c_str(), flags, 0644);
  if (fd < 0) throw Error("cannot open " + p.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      const int err = errno;
      ::close(fd);
      throw Error("write failed for " + p.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::close(fd) != 0) throw Error("close failed for " + p.string());
}

inline void set_mtime(const fs::path& p, double seconds) {
  struct timespec ts[2];
  const double whole = std::floor(seconds);
  ts[0].tv_sec = ts[1].tv_sec = static_cast<time_t>(whole);
  ts[0].tv_nsec = ts[1].tv_nsec = static_cast<long>((seconds - whole) * 1e9);
  if (::utimensat(AT_FDCWD, p.c_str(), ts, AT_SYMLINK_NOFOLLOW) != 0) {
    throw Error("cannot set timestamps on " + p.string() + ": " + std::strerror(errno));
  }
}

inline bool file_matches(const fs::path& p, const std::vector<char>& expected) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return false;
  std::vector<char> got(expected.size() + 1);
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (static_cast<std::size_t>(in.gcount()) != expected.size()) return false;
  return std::equal(expected.begin(), expected.end(), got.begin());
}

inline const std::vector<std::string>& name_words() {
  static const std::vector<std::string> words{
      "report", "invoice", "budget", "notes", "draft", "summary", "photo", "scan", "contract", "letter",
      "minutes", "agenda", "plan", "thesis", "resume", "receipt", "memo", "slides", "data", "export",
      "backup", "archive", "project", "review", "proposal", "statement", "ledger", "chart", "song", "track",
      "manual", "guide", "form", "policy", "quote", "order", "survey", "figure", "table", "log"};
  return words;
}

inline int draw_count(const CountDistribution& d, Rng& rng) {
  double v = d.mean;
  switch (d.law) {
    case CountLaw::Fixed: break;
    case CountLaw::Uniform: v = uniform(rng, d.mean - d.spread, d.mean + d.spread); break;
    case CountLaw::Normal: v = d.mean + d.spread * standard_normal(rng); break;
  }
  return std::max(0, static_cast<int>(std::lround(v)));
}

}  // namespace detail

/// Builds the manifest for a spec without touching the filesystem.
inline CorpusManifest plan_corpus(const CorpusSpec& spec) {
  if (spec.n_directories < 0) throw InvalidArgument("n_directories must be >= 0");
  if (spec.type_mix.empty()) throw InvalidArgument("type_mix must not be empty");
  double psum = 0.0;
  for (const auto& [ext, p] : spec.type_mix) {
    if (p < 0.0) throw InvalidArgument("negative type probability for '" + ext + "'");
    psum += p;
  }
  if (std::abs(psum - 1.0) > 1e-9) throw InvalidArgument("type_mix probabilities must sum to 1");
  if (spec.sessions_min < 1 || spec.sessions_max < spec.sessions_min) throw InvalidArgument("invalid session range");

  Rng rng(spec.seed);
  CorpusManifest m;
  m.seed = spec.seed;
  const auto& words = detail::name_words();
  std::vector<std::pair<std::string, double>> mix(spec.type_mix.begin(), spec.type_mix.end());

  for (int d = 0; d < spec.n_directories; ++d) {
    char dname[32];
    std::snprintf(dname, sizeof dname, "dir_%03d", d);
    std::string rel = dname;
    if (spec.directories_per_group > 0) {
      char gname[32];
      std::snprintf(gname, sizeof gname, "group_%02d", d / spec.directories_per_group);
      rel = std::string(gname) + "/" + dname;
    }
    m.directories.push_back(rel);

    // Directory-specific type preferences and editing sessions.
    std::vector<double> weights;
    double wsum = 0.0;
    for (const auto& [ext, p] : mix) {
      const double w = p * std::exp(1.2 * standard_normal(rng));
      weights.push_back(w);
      wsum += w;
    }
    const int sessions = spec.sessions_min + static_cast<int>(uniform_index(
                                                 rng, static_cast<std::uint64_t>(spec.sessions_max - spec.sessions_min + 1)));
    std::vector<double> session_at;
    for (int s = 0; s < sessions; ++s) session_at.push_back(uniform(rng, spec.modified_from, spec.modified_to));

    const int count = detail::draw_count(spec.files_per_directory, rng);
    std::set<std::string> used;
    for (int f = 0; f < count; ++f) {
      double pick = uniform01(rng) * wsum;
      std::size_t t = 0;
      for (; t + 1 < weights.size(); ++t) {
        if (pick < weights[t]) break;
        pick -= weights[t];
      }
      const std::string& ext = mix[t].first;
      std::string name;
      do {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s_%s_%04d", words[uniform_index(rng, words.size())].c_str(),
                      words[uniform_index(rng, words.size())].c_str(),
                      static_cast<int>(uniform_index(rng, 10000)));
        name = buf;
        if (!ext.empty()) name += "." + ext;
      } while (!used.insert(to_lower(name)).second);

      const auto med_it = spec.type_median_bytes.find(ext);
      const double med = med_it != spec.type_median_bytes.end() ? med_it->second : 4096.0;
      const double raw_size = med * std::exp(spec.size_sigma * standard_normal(rng));
      const auto size = std::clamp<std::uint64_t>(static_cast<std::uint64_t>(std::llround(raw_size)), spec.size_min,
                                                  spec.size_max);
      const double session = session_at[uniform_index(rng, session_at.size())];
      const double modified =
          std::floor(std::clamp(session + std::abs(standard_normal(rng)) * spec.session_spread, spec.modified_from,
                                spec.modified_to));
      const double created = std::floor(modified - uniform01(rng) * spec.created_lead_max);
      m.files.push_back({rel + "/" + name, size, ext, created, modified, rng()});
    }
  }
  std::sort(m.directories.begin(), m.directories.end());
  std::sort(m.files.begin(), m.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

/// Materializes a corpus under an empty (or absent) root and marks the root as
/// an emulator sandbox. On failure everything created so far is removed.
inline CorpusManifest generate_corpus(const CorpusSpec& spec, const fs::path& root) {
  auto manifest = plan_corpus(spec);
  std::error_code ec;
  if (fs::exists(root, ec)) {
    if (!fs::is_directory(root) || !fs::is_empty(root)) throw Error("corpus root must be empty: " + root.string());
  } else {
    fs::create_directories(root);
  }
  try {
    {
      std::ofstream marker(root / std::string(kCorpusMarker));
      marker << "{\"seed\": " << spec.seed << "}\n";
      if (!marker) throw Error("cannot write corpus marker");
    }
    for (const auto& d : manifest.directories) fs::create_directories(root / d);
    for (const auto& f : manifest.files) {
      const fs::path p = root / f.path;
      detail::write_file(p, content_bytes(f.content_seed, f.size), true);
      detail::set_mtime(p, f.modified);
    }
  } catch (...) {
    std::error_code cleanup;
    for (const auto& entry : fs::directory_iterator(root, cleanup)) fs::remove_all(entry.path(), cleanup);
    throw;
  }
  return manifest;
}

struct RestoreStats {
  std::size_t renamed_back = 0;
  std::size_t rewritten = 0;
  std::size_t recreated = 0;
  std::size_t removed = 0;
};

/// Returns the corpus to the manifest state. Stray files whose name extends a
/// manifest name (renamed traps, encrypted copies) are renamed back when the
/// original is missing, which keeps the original inode and birth time.
inline RestoreStats restore_corpus(const CorpusManifest& manifest, const fs::path& root) {
  RestoreStats stats;
  std::map<std::string, std::vector<const ManifestEntry*>> by_dir;
  std::set<std::string> expected;
  for (const auto& f : manifest.files) {
    by_dir[fs::path(f.path).parent_path().string()].push_back(&f);
    expected.insert(f.path);
  }
  for (const auto& d : manifest.directories) fs::create_directories(root / d);

  for (const auto& [dir, entries] : by_dir) {
    std::error_code ec;
    std::vector<fs::path> strays;
    for (const auto& e : fs::directory_iterator(root / dir, ec)) {
      std::error_code sec;
      if (!e.is_regular_file(sec)) continue;
      const std::string rel = (fs::path(dir) / e.path().filename()).string();
      if (!expected.contains(rel)) strays.push_back(e.path());
    }
    std::sort(strays.begin(), strays.end());
    for (const auto& stray : strays) {
      const std::string name = stray.filename().string();
      const ManifestEntry* owner = nullptr;
      for (const auto* entry : entries) {
        const std::string base = fs::path(entry->path).filename().string();
        if (name.size() > base.size() && name.starts_with(base) &&
            (owner == nullptr || base.size() > fs::path(owner->path).filename().string().size())) {
          owner = entry;
        }
      }
      if (owner != nullptr && !fs::exists(root / owner->path)) {
        fs::rename(stray, root / owner->path);
        ++stats.renamed_back;
      } else {
        fs::remove(stray);
        ++stats.removed;
      }
    }
  }

  for (const auto& f : manifest.files) {
    const fs::path p = root / f.path;
    const auto bytes = content_bytes(f.content_seed, f.size);
    if (!fs::exists(p)) {
      detail::write_file(p, bytes, true);
      ++stats.recreated;
    } else if (!detail::file_matches(p, bytes)) {
      detail::write_file(p, bytes, true);
      ++stats.rewritten;
    }
    struct stat st {};
    if (::stat(p.c_str(), &st) != 0 || st.st_mtim.tv_sec != static_cast<time_t>(f.modified) || st.st_mtim.tv_nsec != 0) {
      detail::set_mtime(p, f.modified);
    }
  }
  return stats;
}

/// Differences between the corpus on disk and its manifest; empty when bit-exact.
inline std::vector<std::string> verify_corpus(const CorpusManifest& manifest, const fs::path& root) {
  std::vector<std::string> problems;
  std::set<std::string> expected;
  for (const auto& f : manifest.files) {
    expected.insert(f.path);
    const fs::path p = root / f.path;
    struct stat st {};
    if (::stat(p.c_str(), &st) != 0) {
      problems.push_back("missing " + f.path);
      continue;
    }
    if (static_cast<std::uint64_t>(st.st_size) != f.size) problems.push_back("size differs " + f.path);
    if (st.st_mtim.tv_sec != static_cast<time_t>(f.modified)) problems.push_back("mtime differs " + f.path);
    if (!detail::file_matches(p, content_bytes(f.content_seed, f.size))) problems.push_back("content differs " + f.path);
  }
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file() || it->path().filename() == kCorpusMarker) continue;
    const std::string rel = it->path().lexically_relative(root).string();
    if (!expected.contains(rel)) problems.push_back("unexpected " + rel);
  }
  return problems;
}

}  // namespace trapsel
