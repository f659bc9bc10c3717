#include "metacal/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "metacal/error.hpp"
#include "metacal/random.hpp"

namespace metacal {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_real(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw DataError(fmt::format("timestamp '{}' is truncated", s));
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') throw DataError(fmt::format("timestamp '{}' is malformed", s));
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, std::string_view allowed) {
  if (pos >= s.size() || allowed.find(s[pos]) == std::string_view::npos) {
    throw DataError(fmt::format("timestamp '{}' is malformed", s));
  }
}

json stats_to_json(const NormStats& s) {
  return json{{"channels", {"pm25_raw", "pm10_raw", "temperature", "humidity", "pm25_ref"}},
              {"mean", s.mean},
              {"std", s.stddev}};
}

}  // namespace

bool record_is_valid(const CalibrationRecord& r) {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(r.pm25_raw) || !finite(r.pm10_raw) || !finite(r.temperature) || !finite(r.humidity)) {
    return false;
  }
  if (r.pm25_raw < 0.0 || r.pm10_raw < 0.0) return false;
  if (r.humidity < 0.0 || r.humidity > 100.0) return false;
  if (r.pm25_ref && (!finite(*r.pm25_ref) || *r.pm25_ref < 0.0)) return false;
  return true;
}

std::size_t SiteDataset::gap_count() const {
  std::size_t gaps = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp - records[i - 1].timestamp != std::chrono::hours(1)) ++gaps;
  }
  return gaps;
}

void SiteDataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!record_is_valid(records[i])) {
      throw DataError(fmt::format("site {}: record {} violates range invariants", site_id, i));
    }
    if (i > 0 && records[i].timestamp <= records[i - 1].timestamp) {
      throw DataError(fmt::format("site {}: timestamps not strictly increasing at record {}", site_id, i));
    }
  }
}

Timestamp parse_rfc3339(std::string_view s) {
  s = trim(s);
  using namespace std::chrono;
  const int y = digits(s, 0, 4);
  expect(s, 4, "-");
  const int mo = digits(s, 5, 2);
  expect(s, 7, "-");
  const int d = digits(s, 8, 2);
  expect(s, 10, "Tt ");
  const int h = digits(s, 11, 2);
  expect(s, 13, ":");
  const int mi = digits(s, 14, 2);
  expect(s, 16, ":");
  const int sec = digits(s, 17, 2);
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const auto frac_start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == frac_start) throw DataError(fmt::format("timestamp '{}' is malformed", s));
  }
  int offset_minutes = 0;
  expect(s, pos, "Zz+-");
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else {
    const int sign = s[pos] == '-' ? -1 : 1;
    const int oh = digits(s, pos + 1, 2);
    expect(s, pos + 3, ":");
    const int om = digits(s, pos + 4, 2);
    offset_minutes = sign * (oh * 60 + om);
    pos += 6;
  }
  if (pos != s.size()) throw DataError(fmt::format("timestamp '{}' has trailing characters", s));

  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) {
    throw DataError(fmt::format("timestamp '{}' is out of range", s));
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} - minutes{offset_minutes};
}

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss<seconds> tod{t - day_point};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", int(ymd.year()),
                     unsigned(ymd.month()), unsigned(ymd.day()), tod.hours().count(),
                     tod.minutes().count(), tod.seconds().count());
}

LoadedSite load_site_csv(const std::filesystem::path& path, std::string site_id) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read site file {}", path.string()));

  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{}: missing header", path.string()));
  std::string_view header = trim(line);
  if (header.starts_with("\xEF\xBB\xBF")) header.remove_prefix(3);
  if (header != kSiteCsvHeader) {
    throw DataError(fmt::format("{}: malformed header '{}', expected '{}'", path.string(), header,
                                kSiteCsvHeader));
  }

  LoadedSite out;
  out.site.site_id = std::move(site_id);
  auto& records = out.site.records;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++out.report.rows_read;
    const auto f = split_fields(line);
    if (f.size() != 6) {
      ++out.report.dropped_invalid;
      continue;
    }
    CalibrationRecord r;
    try {
      r.timestamp = parse_rfc3339(f[0]);
    } catch (const DataError&) {
      ++out.report.dropped_invalid;
      continue;
    }
    const auto pm25 = parse_real(f[1]);
    const auto pm10 = parse_real(f[2]);
    const auto temp = parse_real(f[3]);
    const auto rh = parse_real(f[4]);
    if (!pm25 || !pm10 || !temp || !rh) {
      ++out.report.dropped_invalid;
      continue;
    }
    r.pm25_raw = *pm25;
    r.pm10_raw = *pm10;
    r.temperature = *temp;
    r.humidity = *rh;
    if (!f[5].empty()) {
      r.pm25_ref = parse_real(f[5]);
      if (!r.pm25_ref) {
        ++out.report.dropped_invalid;
        continue;
      }
    }
    if (!record_is_valid(r)) {
      ++out.report.dropped_invalid;
      continue;
    }
    records.push_back(r);
  }

  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  const auto last = std::unique(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.timestamp == b.timestamp;
  });
  out.report.dropped_duplicate = static_cast<std::size_t>(records.end() - last);
  records.erase(last, records.end());

  if (records.empty()) throw DataError(fmt::format("{}: no valid data rows", path.string()));
  out.report.gaps = out.site.gap_count();
  if (out.report.dropped_invalid + out.report.dropped_duplicate > 0) {
    spdlog::warn("site {}: dropped {} invalid and {} duplicate rows", out.site.site_id,
                 out.report.dropped_invalid, out.report.dropped_duplicate);
  }
  return out;
}

void write_site_csv(const std::filesystem::path& path, const SiteDataset& site) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << kSiteCsvHeader << '\n';
  for (const auto& r : site.records) {
    out << fmt::format("{},{:.4f},{:.4f},{:.4f},{:.4f},", format_rfc3339(r.timestamp), r.pm25_raw,
                       r.pm10_raw, r.temperature, r.humidity);
    if (r.pm25_ref) out << fmt::format("{:.4f}", *r.pm25_ref);
    out << '\n';
  }
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

TaskSplit sample_support_query(const SiteDataset& site, std::size_t support_hours,
                               std::size_t query_hours, std::uint64_t rng_seed) {
  if (support_hours == 0 || query_hours == 0) {
    throw InvalidArgument("support and query windows must be non-empty");
  }
  const std::size_t n = site.size();
  if (n < support_hours + query_hours) {
    throw DataError(fmt::format("site {} has {} records, needs {} for support+query", site.site_id,
                                n, support_hours + query_hours));
  }
  Rng rng(rng_seed);
  const std::size_t slack = n - support_hours - query_hours;
  const std::size_t support_start = rng.uniform_index(slack + 1);
  const std::size_t support_end = support_start + support_hours;
  const std::size_t query_start = support_end + rng.uniform_index(n - query_hours - support_end + 1);
  TaskSplit s;
  s.kind = SplitKind::SupportQuery;
  s.first = {support_start, support_end};
  s.second = {query_start, query_start + query_hours};
  return s;
}

TaskSplit split_target(const SiteDataset& site, std::size_t trainval_hours, std::size_t test_hours,
                       double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument(fmt::format("val_fraction must lie in [0, 1), got {}", val_fraction));
  }
  if (site.size() < trainval_hours + test_hours) {
    throw DataError(fmt::format("target site {} has {} records, needs {}", site.site_id, site.size(),
                                trainval_hours + test_hours));
  }
  const auto val = static_cast<std::size_t>(std::llround(double(trainval_hours) * val_fraction));
  const std::size_t train = trainval_hours - val;
  if (train == 0) throw InvalidArgument("target split leaves no training records");
  TaskSplit s;
  s.kind = SplitKind::TrainValTest;
  s.first = {0, train};
  s.second = {train, trainval_hours};
  s.test = {trainval_hours, trainval_hours + test_hours};
  return s;
}

std::span<const CalibrationRecord> slice(const SiteDataset& site, const IndexRange& range) {
  if (range.begin > range.end || range.end > site.size()) {
    throw ShapeError(fmt::format("range [{}, {}) outside site {} of size {}", range.begin, range.end,
                                 site.site_id, site.size()));
  }
  return std::span<const CalibrationRecord>(site.records).subspan(range.begin, range.size());
}

void NormStats::validate() const {
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (!(stddev[c] > 0.0) || !std::isfinite(stddev[c]) || !std::isfinite(mean[c])) {
      throw DegenerateError(fmt::format("normalization channel {} is degenerate (std {})", c, stddev[c]));
    }
  }
}

namespace {

std::array<double, kChannelCount> channels(const CalibrationRecord& r) {
  if (!r.pm25_ref) throw DataError("record has no reference PM2.5 value");
  return {r.pm25_raw, r.pm10_raw, r.temperature, r.humidity, *r.pm25_ref};
}

}  // namespace

NormStats fit_norm(std::span<const CalibrationRecord> records) {
  if (records.size() < 2) throw DegenerateError("normalization needs at least 2 records");
  NormStats s;
  const double n = static_cast<double>(records.size());
  for (const auto& r : records) {
    const auto v = channels(r);
    for (std::size_t c = 0; c < kChannelCount; ++c) s.mean[c] += v[c];
  }
  for (auto& m : s.mean) m /= n;
  std::array<double, kChannelCount> sq{};
  for (const auto& r : records) {
    const auto v = channels(r);
    for (std::size_t c = 0; c < kChannelCount; ++c) sq[c] += (v[c] - s.mean[c]) * (v[c] - s.mean[c]);
  }
  for (std::size_t c = 0; c < kChannelCount; ++c) s.stddev[c] = std::sqrt(sq[c] / n);
  s.validate();
  return s;
}

Eigen::MatrixXd normalize_features(std::span<const CalibrationRecord> records, const NormStats& stats) {
  stats.validate();
  Eigen::MatrixXd x(Eigen::Index(records.size()), Eigen::Index(kFeatureCount));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const double raw[kFeatureCount] = {r.pm25_raw, r.pm10_raw, r.temperature, r.humidity};
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      x(Eigen::Index(i), Eigen::Index(c)) = (raw[c] - stats.mean[c]) / stats.stddev[c];
    }
  }
  return x;
}

Batch apply_norm(std::span<const CalibrationRecord> records, const NormStats& stats) {
  Batch b{normalize_features(records, stats), Eigen::VectorXd(Eigen::Index(records.size()))};
  for (std::size_t i = 0; i < records.size(); ++i) {
    b.targets(Eigen::Index(i)) = (channels(records[i])[kPm25Ref] - stats.mean[kPm25Ref]) / stats.stddev[kPm25Ref];
  }
  return b;
}

Eigen::VectorXd denorm_predictions(const Eigen::VectorXd& normalized, const NormStats& stats) {
  stats.validate();
  return (normalized.array() * stats.stddev[kPm25Ref] + stats.mean[kPm25Ref]).matrix();
}

std::string norm_stats_to_json(const NormStats& stats) { return stats_to_json(stats).dump(2); }

NormStats norm_stats_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    NormStats s;
    s.mean = j.at("mean").get<std::array<double, kChannelCount>>();
    s.stddev = j.at("std").get<std::array<double, kChannelCount>>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("bad normalization statistics: {}", e.what()));
  }
}

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << norm_stats_to_json(stats) << '\n';
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read normalization statistics {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return norm_stats_from_json(ss.str());
}

std::vector<const ManifestEntry*> Manifest::with_role(SiteRole role) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : sites) {
    if (e.role == role) out.push_back(&e);
  }
  return out;
}

const ManifestEntry* Manifest::find(std::string_view site_id) const {
  for (const auto& e : sites) {
    if (e.site_id == site_id) return &e;
  }
  return nullptr;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
  return e.path.is_absolute() ? e.path : base_dir / e.path;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read manifest {}", path.string()));
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    const auto j = json::parse(in);
    for (const auto& s : j.at("sites")) {
      ManifestEntry e;
      e.site_id = s.at("site_id").get<std::string>();
      const auto role = s.at("role").get<std::string>();
      if (role == "source") {
        e.role = SiteRole::Source;
      } else if (role == "target") {
        e.role = SiteRole::Target;
      } else {
        throw DataError(fmt::format("manifest site {} has unknown role '{}'", e.site_id, role));
      }
      e.path = s.at("path").get<std::string>();
      if (m.find(e.site_id)) throw DataError(fmt::format("manifest lists site {} twice", e.site_id));
      m.sites.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed manifest {}: {}", path.string(), e.what()));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json sites = json::array();
  for (const auto& e : manifest.sites) {
    sites.push_back({{"site_id", e.site_id},
                     {"role", e.role == SiteRole::Source ? "source" : "target"},
                     {"path", e.path.generic_string()}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write manifest {}", path.string()));
  out << json{{"sites", sites}}.dump(2) << '\n';
}

}  // namespace metacal
