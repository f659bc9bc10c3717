#include "metacal/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "metacal/error.hpp"
#include "metacal/random.hpp"

namespace metacal {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kWalkPersistence = 0.98;
constexpr double kWalkStepFraction = 0.04;  // walk innovation std as a fraction of base

}  // namespace

SiteProfile SiteProfile::sample(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xfeed));
  SiteProfile p;
  p.gain = rng.uniform(0.6, 1.4);
  p.offset = rng.uniform(-10.0, 10.0);
  p.humidity_coeff = rng.uniform(0.0, 0.5);
  p.noise_std = rng.uniform(1.0, 5.0);
  p.seed = seed;
  return p;
}

std::vector<double> gen_reference_series(std::size_t hours, std::uint64_t seed) {
  if (hours == 0) throw InvalidArgument("series length must be at least 1 hour");
  Rng rng(mix_seed(seed, 0x2e5));
  const double base = rng.uniform(30.0, 120.0);
  const double psi = rng.uniform(0.0, kTwoPi);
  const double step_std = kWalkStepFraction * base;
  std::vector<double> out(hours);
  double walk = 0.0;
  for (std::size_t t = 0; t < hours; ++t) {
    const double diurnal = base * (1.0 + 0.4 * std::sin(kTwoPi * double(t) / 24.0 + psi));
    out[t] = std::clamp(diurnal + walk, 2.0, 500.0);
    walk = kWalkPersistence * walk + rng.normal(0.0, step_std);
  }
  return out;
}

Timestamp synthetic_epoch() {
  using namespace std::chrono;
  return sys_days{year{2020} / November / 1};
}

SiteDataset gen_site(const SiteProfile& profile, std::size_t hours, std::string site_id) {
  if (hours == 0) throw InvalidArgument("site length must be at least 1 hour");
  if (!(profile.noise_std > 0.0)) throw InvalidArgument("noise_std must be positive");
  const auto reference = gen_reference_series(hours, mix_seed(profile.seed, 1));
  Rng rng(mix_seed(profile.seed, 2));
  const double weather_phase = rng.uniform(0.0, kTwoPi);

  SiteDataset site;
  site.site_id = std::move(site_id);
  site.records.reserve(hours);
  for (std::size_t t = 0; t < hours; ++t) {
    const double cycle = std::sin(kTwoPi * double(t) / 24.0 + weather_phase);
    CalibrationRecord r;
    r.timestamp = synthetic_epoch() + std::chrono::hours(t);
    r.temperature = std::clamp(26.5 + 6.5 * cycle + rng.normal(0.0, 1.0), 18.0, 35.0);
    r.humidity = std::clamp(62.5 - 25.0 * cycle + rng.normal(0.0, 3.0), 30.0, 95.0);
    const double ref = reference[t];
    const double humid_excess = std::max(0.0, r.humidity - 60.0);
    r.pm25_raw = std::max(0.0, profile.gain * ref + profile.offset +
                                   profile.humidity_coeff * humid_excess +
                                   rng.normal(0.0, profile.noise_std));
    const double ratio = rng.uniform(1.2, 1.8);
    r.pm10_raw = std::max(0.0, ref * ratio + rng.normal(0.0, profile.noise_std));
    r.pm25_ref = ref;
    site.records.push_back(r);
  }
  return site;
}

Benchmark gen_benchmark(const std::filesystem::path& out_dir, std::size_t n_sources,
                        std::size_t n_targets, std::size_t hours, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  Benchmark b;
  b.manifest.base_dir = out_dir;
  auto emit = [&](SiteRole role, std::size_t index) {
    const bool source = role == SiteRole::Source;
    const std::string id = fmt::format("{}_{:02d}", source ? "source" : "target", index);
    const SiteProfile profile = SiteProfile::sample(mix_seed(seed, source ? 1 : 2, index));
    const std::size_t n = source ? hours : std::max<std::size_t>(hours, 432);
    const std::string file = id + ".csv";
    write_site_csv(out_dir / file, gen_site(profile, n, id));
    b.manifest.sites.push_back({id, role, file});
    b.profiles.push_back(profile);
  };
  for (std::size_t i = 0; i < n_sources; ++i) emit(SiteRole::Source, i);
  for (std::size_t i = 0; i < n_targets; ++i) emit(SiteRole::Target, i);

  b.manifest_path = out_dir / "manifest.json";
  write_manifest(b.manifest_path, b.manifest);
  return b;
}

double SinusoidTask::operator()(double x) const { return amplitude * std::sin(x + phase); }

SinusoidTask gen_sinusoid_task(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5155));
  SinusoidTask t;
  t.amplitude = rng.uniform(0.1, 5.0);
  t.phase = rng.uniform(0.0, std::numbers::pi);
  return t;
}

Batch sample_task_points(const SinusoidTask& task, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("need at least one task point");
  Rng rng(mix_seed(seed, 0x9017));
  Batch b{Eigen::MatrixXd(Eigen::Index(n), 1), Eigen::VectorXd(Eigen::Index(n))};
  for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    b.inputs(i, 0) = x;
    b.targets(i) = task(x);
  }
  return b;
}

}  // namespace metacal
