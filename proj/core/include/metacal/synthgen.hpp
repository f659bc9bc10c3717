#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metacal/dataio.hpp"
#include "metacal/nnet.hpp"

namespace metacal {

/// Distortion of one simulated low-cost sensor relative to the reference:
///   pm25_raw = max(0, gain * ref + offset + humidity_coeff * max(0, RH - 60) + noise)
struct SiteProfile {
  double gain = 1.0;            // unitless
  double offset = 0.0;          // ug/m3
  double humidity_coeff = 0.0;  // ug/m3 per %RH above 60
  double noise_std = 1.0;       // ug/m3, > 0
  std::uint64_t seed = 0;

  /// gain ~ U[0.6, 1.4], offset ~ U[-10, 10], humidity_coeff ~ U[0, 0.5],
  /// noise_std ~ U[1, 5].
  static SiteProfile sample(std::uint64_t seed);
};

/// Hourly reference PM2.5: base * (1 + 0.4 sin(2 pi t / 24 + psi)) plus a
/// mean-reverting random walk, clipped to [2, 500]; base ~ U[30, 120].
std::vector<double> gen_reference_series(std::size_t hours, std::uint64_t seed);

/// Series start for generated sites.
Timestamp synthetic_epoch();

SiteDataset gen_site(const SiteProfile& profile, std::size_t hours, std::string site_id = "site");

struct Benchmark {
  std::filesystem::path manifest_path;
  Manifest manifest;
  std::vector<SiteProfile> profiles;  // manifest order
};

/// Writes source_NN.csv, target_NN.csv and manifest.json into out_dir.
/// Target sites get at least 432 hours.
Benchmark gen_benchmark(const std::filesystem::path& out_dir, std::size_t n_sources = 10,
                        std::size_t n_targets = 5, std::size_t hours = 3000, std::uint64_t seed = 0);

/// y = amplitude * sin(x + phase) on x in [-5, 5].
struct SinusoidTask {
  double amplitude = 1.0;  // U[0.1, 5.0]
  double phase = 0.0;      // U[0, pi]
  double operator()(double x) const;
};

SinusoidTask gen_sinusoid_task(std::uint64_t seed);
/// n noise-free points with x ~ U[-5, 5]; a one-column batch.
Batch sample_task_points(const SinusoidTask& task, std::size_t n, std::uint64_t seed);

}  // namespace metacal
