#pragma once

// Directory scanning and per-directory feature matrices.

#include <sys/stat.h>
#include <fcntl.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "trapsel/common.hpp"

namespace trapsel {

namespace fs = std::filesystem;

/// Name of the marker file that flags a directory tree as an emulator corpus.
/// Scanning ignores it so it never becomes a feature row or a trap.
inline constexpr std::string_view kCorpusMarker = ".trapsel_corpus";

struct FileRecord {
  fs::path path;
  std::uint64_t size = 0;
  std::string type_tag;  // lowercase extension without the dot
  double created = 0.0;  // seconds since epoch
  double modified = 0.0;

  bool operator==(const FileRecord&) const = default;
};

struct ScanConfig {
  std::vector<fs::path> roots;
  std::vector<std::string> exclusions;
  int min_files = 3;
};

using Warnings = std::vector<std::string>;

namespace detail {

inline void warn(Warnings* sink, std::string msg) {
  if (sink != nullptr) sink->push_back(std::move(msg));
}

inline bool is_marker(const fs::path& p) { return p.filename() == kCorpusMarker; }

inline bool excluded(const fs::path& dir, const fs::path& root, const std::vector<std::string>& exclusions) {
  const std::string full = dir.lexically_normal().string();
  const std::string rel = dir.lexically_relative(root).string();
  for (const auto& ex : exclusions) {
    if (ex.empty()) continue;
    if (fs::path(ex).is_absolute()) {
      if (full.starts_with(fs::path(ex).lexically_normal().string())) return true;
    } else if (rel.starts_with(ex)) {
      return true;
    }
  }
  return false;
}

/// Regular files directly inside `dir` (no symlinks, no marker).
inline std::vector<fs::path> regular_files(const fs::path& dir, std::error_code& ec) {
  std::vector<fs::path> out;
  fs::directory_iterator it(dir, ec);
  if (ec) return out;
  for (; it != fs::directory_iterator(); it.increment(ec)) {
    if (ec) return out;
    std::error_code sec;
    const auto st = it->symlink_status(sec);
    if (sec) continue;
    if (fs::is_regular_file(st) && !is_marker(it->path())) out.push_back(it->path());
  }
  return out;
}

inline double to_seconds(const struct statx_timestamp& ts) {
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

// Civil-date arithmetic on the proleptic Gregorian calendar (UTC).
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2 ? 1 : 0;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t year_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return y + (m <= 2 ? 1 : 0);
}

}  // namespace detail

/// Directories under the configured roots holding at least `min_files`
/// regular files directly. Sorted ascending by path.
inline std::vector<fs::path> scan_endpoint(const ScanConfig& config, Warnings* warnings = nullptr) {
  if (config.min_files < 1) throw InvalidArgument("min_files must be >= 1");
  std::vector<fs::path> out;
  for (const auto& root_in : config.roots) {
    const fs::path root = root_in.lexically_normal();
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw Error("scan root is not a readable directory: " + root.string());
    std::vector<fs::path> pending{root};
    bool at_root = true;
    while (!pending.empty()) {
      const fs::path dir = pending.back();
      pending.pop_back();
      if (detail::excluded(dir, root, config.exclusions)) continue;
      std::error_code lec;
      const auto files = detail::regular_files(dir, lec);
      if (lec) {
        if (at_root) throw Error("cannot read scan root " + root.string() + ": " + lec.message());
        detail::warn(warnings, "skipped unreadable directory " + dir.string() + ": " + lec.message());
        continue;
      }
      at_root = false;
      if (static_cast<int>(files.size()) >= config.min_files) out.push_back(dir);
      fs::directory_iterator it(dir, lec);
      for (; !lec && it != fs::directory_iterator(); it.increment(lec)) {
        std::error_code sec;
        if (fs::is_directory(it->symlink_status(sec)) && !sec) pending.push_back(it->path());
      }
      if (lec) detail::warn(warnings, "incomplete listing of " + dir.string() + ": " + lec.message());
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Reads metadata for one file. Creation time is the filesystem birth time
/// when the platform reports it, otherwise the inode change time.
inline std::optional<FileRecord> stat_record(const fs::path& p) {
  struct statx sx {};
  if (::statx(AT_FDCWD, p.c_str(), AT_SYMLINK_NOFOLLOW, STATX_BASIC_STATS | STATX_BTIME, &sx) != 0) {
    return std::nullopt;
  }
  if (!S_ISREG(sx.stx_mode)) return std::nullopt;
  FileRecord r;
  r.path = p;
  r.size = sx.stx_size;
  const std::string ext = p.extension().string();
  r.type_tag = to_lower(ext.empty() ? std::string() : ext.substr(1));
  r.modified = detail::to_seconds(sx.stx_mtime);
  r.created = (sx.stx_mask & STATX_BTIME) != 0 ? detail::to_seconds(sx.stx_btime) : detail::to_seconds(sx.stx_ctime);
  return r;
}

inline std::vector<FileRecord> extract_records(const fs::path& directory, Warnings* warnings = nullptr) {
  std::error_code ec;
  auto files = detail::regular_files(directory, ec);
  if (ec) throw Error("cannot list directory " + directory.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<FileRecord> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    if (auto r = stat_record(f)) {
      out.push_back(std::move(*r));
    } else {
      detail::warn(warnings, "file vanished during scan: " + f.string());
    }
  }
  return out;
}

/// (v - mean) / population_std. Constant columns map to zeros.
inline std::vector<double> standardize_column(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("standardize_column: empty input");
  double mean = 0.0;
  double scale = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("standardize_column: non-finite value");
    mean += v;
    scale = std::max(scale, std::abs(v));
  }
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  std::vector<double> out(values.size(), 0.0);
  if (sd <= 1e-12 * std::max(1.0, scale)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
  return out;
}

/// Integer codes in first-appearance order, starting at 0.
inline std::vector<int> encode_types(std::span<const std::string> tags) {
  std::map<std::string, int> codes;
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) {
    auto [it, inserted] = codes.try_emplace(t, static_cast<int>(codes.size()));
    out.push_back(it->second);
  }
  return out;
}

/// Cyclic encoding of a UTC timestamp:
/// (sin, cos) of time-of-day followed by (sin, cos) of day-of-year.
inline std::array<double, 4> encode_datetime(double t) {
  if (!std::isfinite(t)) throw InvalidArgument("encode_datetime: non-finite timestamp");
  constexpr double kDay = 86400.0;
  const double day_index = std::floor(t / kDay);
  const double into_day = t - day_index * kDay;
  const auto days = static_cast<std::int64_t>(day_index);
  const std::int64_t year_start = detail::days_from_civil(detail::year_from_days(days), 1, 1);
  const double into_year = (t - static_cast<double>(year_start) * kDay) / kDay;
  const double theta_d = 2.0 * std::numbers::pi * into_day / kDay;
  const double theta_y = 2.0 * std::numbers::pi * into_year / 365.25;
  return {std::sin(theta_d), std::cos(theta_d), std::sin(theta_y), std::cos(theta_y)};
}

struct NameOrderColumns {
  std::vector<double> alphabetical;
  std::vector<double> reverse_alphabetical;
};

/// Alphabetical rank of each record's base name mapped linearly onto
/// [1, -1] (first name = 1), plus the mirrored reverse-alphabetical column.
inline NameOrderColumns name_order_features(std::span<const FileRecord> records) {
  const std::size_t m = records.size();
  NameOrderColumns out{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  if (m < 2) return out;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return name_less(records[a].path.filename().string(), records[b].path.filename().string());
  });
  const double denom = static_cast<double>(m - 1);
  for (std::size_t rank = 0; rank < m; ++rank) {
    const double a = 1.0 - 2.0 * static_cast<double>(rank) / denom;
    out.alphabetical[order[rank]] = a;
    out.reverse_alphabetical[order[rank]] = -a;
  }
  return out;
}

struct PcaResult {
  Matrix scores;      // M x K projected data
  Matrix components;  // N x K loadings, one component per column
  Vector mean;        // column means of the input
  Vector explained;   // variance of each retained component
  double total_variance = 0.0;
};

inline PcaResult apply_pca(const Matrix& x, double variance_retained = 0.95) {
  if (x.rows() < 2) throw InvalidArgument("apply_pca needs at least two rows");
  if (!(variance_retained > 0.0 && variance_retained <= 1.0)) {
    throw InvalidArgument("variance_retained must lie in (0, 1]");
  }
  if (!all_finite(x)) throw InvalidArgument("apply_pca: non-finite input");
  PcaResult out;
  out.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - out.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Index n = cov.rows();
  Vector values = eig.eigenvalues().reverse().cwiseMax(0.0);
  Matrix vectors = eig.eigenvectors().rowwise().reverse();
  out.total_variance = values.sum();

  // Variance below 1e-12 of the mean squared row norm is timestamp jitter or
  // rounding (files written microseconds apart), not structure.
  const double energy = x.squaredNorm() / static_cast<double>(x.rows());
  if (n == 0 || out.total_variance <= 1e-12 * std::max(1.0, energy)) {
    out.scores = Matrix::Zero(x.rows(), 1);
    out.components = Matrix::Zero(n, 1);
    out.explained = Vector::Zero(1);
    return out;
  }

  Index k = 0;
  double cumulative = 0.0;
  while (k < n) {
    cumulative += values(k);
    ++k;
    if (cumulative / out.total_variance >= variance_retained - 1e-12) break;
  }
  out.components = vectors.leftCols(k);
  for (Index c = 0; c < k; ++c) {
    Index arg = 0;
    for (Index r = 1; r < n; ++r) {
      if (std::abs(out.components(r, c)) > std::abs(out.components(arg, c)) + 1e-12) arg = r;
    }
    if (out.components(arg, c) < 0.0) out.components.col(c) *= -1.0;
  }
  out.explained = values.head(k);
  out.scores = centered * out.components;
  return out;
}

struct ColumnDescriptor {
  std::string source;     // size, type, created, modified, name
  std::string transform;  // standard, code+standard, sin_day, ...
};

struct DatasetOptions {
  bool include_name_order = false;
  double variance_retained = 0.95;
};

struct DirectoryDataset {
  fs::path directory;
  std::vector<FileRecord> records;
  Matrix features;  // pre-PCA standardized feature matrix
  std::vector<ColumnDescriptor> columns;
  Matrix matrix;  // PCA-reduced matrix handed to clustering
  Index components = 0;
};

inline DirectoryDataset build_dataset_from_records(fs::path directory, std::vector<FileRecord> records,
                                                   const DatasetOptions& options = {}) {
  const std::size_t m = records.size();
  if (m < 3) throw InvalidArgument("directory dataset needs at least 3 files: " + directory.string());
  DirectoryDataset ds;
  ds.directory = std::move(directory);
  ds.records = std::move(records);

  const Index cols = 10 + (options.include_name_order ? 2 : 0);
  ds.features = Matrix::Zero(static_cast<Index>(m), cols);

  std::vector<double> sizes(m);
  std::vector<std::string> tags(m);
  for (std::size_t i = 0; i < m; ++i) {
    sizes[i] = static_cast<double>(ds.records[i].size);
    tags[i] = ds.records[i].type_tag;
  }
  const auto codes = encode_types(tags);
  const std::vector<double> code_values(codes.begin(), codes.end());
  const auto scaled_size = standardize_column(sizes);
  const auto scaled_type = standardize_column(code_values);

  for (std::size_t i = 0; i < m; ++i) {
    const auto r = static_cast<Index>(i);
    ds.features(r, 0) = scaled_size[i];
    ds.features(r, 1) = scaled_type[i];
    const auto c = encode_datetime(ds.records[i].created);
    const auto u = encode_datetime(ds.records[i].modified);
    for (Index j = 0; j < 4; ++j) {
      ds.features(r, 2 + j) = c[static_cast<std::size_t>(j)];
      ds.features(r, 6 + j) = u[static_cast<std::size_t>(j)];
    }
  }
  ds.columns = {{"size", "standard"},       {"type", "code+standard"}, {"created", "sin_day"},
                {"created", "cos_day"},     {"created", "sin_year"},   {"created", "cos_year"},
                {"modified", "sin_day"},    {"modified", "cos_day"},   {"modified", "sin_year"},
                {"modified", "cos_year"}};
  if (options.include_name_order) {
    const auto names = name_order_features(ds.records);
    for (std::size_t i = 0; i < m; ++i) {
      ds.features(static_cast<Index>(i), 10) = names.alphabetical[i];
      ds.features(static_cast<Index>(i), 11) = names.reverse_alphabetical[i];
    }
    ds.columns.push_back({"name", "alphabetical"});
    ds.columns.push_back({"name", "reverse_alphabetical"});
  }
  auto pca = apply_pca(ds.features, options.variance_retained);
  ds.matrix = std::move(pca.scores);
  ds.components = ds.matrix.cols();
  return ds;
}

inline DirectoryDataset build_dataset(const fs::path& directory, const DatasetOptions& options = {},
                                      Warnings* warnings = nullptr) {
  return build_dataset_from_records(directory, extract_records(directory, warnings), options);
}

/// Diagnostic dump: paths, raw metadata, pre-PCA features and the reduced matrix.
inline nlohmann::json to_json(const DirectoryDataset& ds) {
  auto rows = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      out.push_back(row);
    }
    return out;
  };
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : ds.records) {
    records.push_back({{"path", r.path.string()},
                       {"size", r.size},
                       {"type", r.type_tag},
                       {"created", r.created},
                       {"modified", r.modified}});
  }
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& c : ds.columns) columns.push_back({{"source", c.source}, {"transform", c.transform}});
  return {{"directory", ds.directory.string()},
          {"records", records},
          {"columns", columns},
          {"features", rows(ds.features)},
          {"matrix", rows(ds.matrix)}};
}

}  // namespace trapsel
