#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "metacal/nnet.hpp"

namespace metacal {

using Timestamp = std::chrono::sys_seconds;

/// One hourly co-located sample: four low-cost sensor channels and the
/// reference monitor's PM2.5 (absent when only inference is wanted).
struct CalibrationRecord {
  Timestamp timestamp{};
  double pm25_raw = 0.0;     // ug/m3
  double pm10_raw = 0.0;     // ug/m3
  double temperature = 0.0;  // degC
  double humidity = 0.0;     // %RH
  std::optional<double> pm25_ref;  // ug/m3

  friend bool operator==(const CalibrationRecord&, const CalibrationRecord&) = default;
};

/// Whether a record satisfies the physical range invariants.
bool record_is_valid(const CalibrationRecord& r);

struct SiteDataset {
  std::string site_id;
  std::vector<CalibrationRecord> records;  // strictly increasing timestamps

  std::size_t size() const { return records.size(); }
  /// Adjacent pairs whose spacing is not exactly one hour.
  std::size_t gap_count() const;
  /// Throws DataError if timestamps are not strictly increasing or a record
  /// is out of range.
  void validate() const;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t dropped_invalid = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t gaps = 0;
};

struct LoadedSite {
  SiteDataset site;
  LoadReport report;
};

inline constexpr std::string_view kSiteCsvHeader =
    "timestamp,pm25_raw,pm10_raw,temperature,humidity,pm25_ref";

/// Parses a site CSV. Rows are sorted by timestamp; rows with missing or
/// out-of-range required fields are dropped, and of several rows sharing a
/// timestamp only the first in file order is kept. Throws DataError for an
/// unreadable file, a header other than kSiteCsvHeader, or zero valid rows.
LoadedSite load_site_csv(const std::filesystem::path& path, std::string site_id);
void write_site_csv(const std::filesystem::path& path, const SiteDataset& site);

/// "YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)", normalized to UTC.
Timestamp parse_rfc3339(std::string_view text);
/// Always "YYYY-MM-DDTHH:MM:SSZ".
std::string format_rfc3339(Timestamp t);

/// Half-open index range [begin, end) into a SiteDataset.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
  bool overlaps(const IndexRange& o) const {
    return !empty() && !o.empty() && begin < o.end && o.begin < end;
  }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

enum class SplitKind { SupportQuery, TrainValTest };

/// Chronological partition of one site's records. Holds index ranges only;
/// batches are materialized with a method-specific NormStats, so every
/// method of a paired comparison sees byte-identical rows.
struct TaskSplit {
  SplitKind kind = SplitKind::SupportQuery;
  IndexRange first;   // support (source) or train (target)
  IndexRange second;  // query (source) or validation (target)
  IndexRange test;    // empty for support/query splits

  const IndexRange& support() const { return first; }
  const IndexRange& query() const { return second; }
  const IndexRange& train() const { return first; }
  const IndexRange& val() const { return second; }
};

/// Uniform support start among valid positions, then a uniform query start
/// at or after the support end. Throws DataError if the site holds fewer
/// than support_hours + query_hours records.
TaskSplit sample_support_query(const SiteDataset& site, std::size_t support_hours,
                               std::size_t query_hours, std::uint64_t rng_seed);

/// First trainval_hours records split chronologically into train and
/// validation (validation gets round(trainval_hours * val_fraction)), then
/// the next test_hours records as test.
TaskSplit split_target(const SiteDataset& site, std::size_t trainval_hours = 72,
                       std::size_t test_hours = 360, double val_fraction = 0.25);

std::span<const CalibrationRecord> slice(const SiteDataset& site, const IndexRange& range);

/// Channel order used by NormStats and by the network input.
enum Channel : std::size_t { kPm25Raw = 0, kPm10Raw, kTemperature, kHumidity, kPm25Ref };
inline constexpr std::size_t kChannelCount = 5;
inline constexpr std::size_t kFeatureCount = 4;

/// Per-channel z-score statistics (population standard deviation).
struct NormStats {
  std::array<double, kChannelCount> mean{};
  std::array<double, kChannelCount> stddev{};

  /// Throws DegenerateError unless every stddev is finite and positive.
  void validate() const;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Which records a model's normalization is fitted on.
enum class NormScope {
  /// One fit on the pooled source records, reused unchanged at targets.
  SourcePool,
  /// Every site (or meta-task) standardized on its own adaptation window;
  /// at a target that is the target's train window.
  PerSite,
};

/// Fitted on exactly the given records. Needs >= 2 records, all carrying a
/// reference value, and no constant channel.
NormStats fit_norm(std::span<const CalibrationRecord> records);

/// Features (x - mean) / std for the four sensor channels. Records must
/// carry pm25_ref, which becomes the normalized target.
Batch apply_norm(std::span<const CalibrationRecord> records, const NormStats& stats);
/// Features only; for inference on records without reference values.
Eigen::MatrixXd normalize_features(std::span<const CalibrationRecord> records, const NormStats& stats);
/// Maps normalized target-channel values back to ug/m3.
Eigen::VectorXd denorm_predictions(const Eigen::VectorXd& normalized, const NormStats& stats);

std::string norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(std::string_view json);
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

enum class SiteRole { Source, Target };

struct ManifestEntry {
  std::string site_id;
  SiteRole role = SiteRole::Source;
  std::filesystem::path path;  // relative paths resolve against the manifest's directory
};

/// Site list of an experiment:
///   {"sites": [{"site_id": "...", "role": "source"|"target", "path": "..."}]}
struct Manifest {
  std::vector<ManifestEntry> sites;
  std::filesystem::path base_dir;

  std::vector<const ManifestEntry*> with_role(SiteRole role) const;
  const ManifestEntry* find(std::string_view site_id) const;
  std::filesystem::path resolve(const ManifestEntry& e) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace metacal
