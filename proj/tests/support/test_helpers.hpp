#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metacal/dataio.hpp"
#include "metacal/nnet.hpp"
#include "metacal/random.hpp"

namespace testutil {

inline metacal::MlpSpec small_spec(std::size_t in, std::vector<std::size_t> hidden) {
  metacal::MlpSpec s;
  s.input_dim = in;
  s.hidden_widths = std::move(hidden);
  return s;
}

/// Gaussian inputs and targets.
inline metacal::Batch random_batch(std::size_t n, std::size_t d, std::uint64_t seed, double target_scale = 1.0) {
  metacal::Rng rng(seed);
  metacal::Batch b;
  b.inputs.resize(Eigen::Index(n), Eigen::Index(d));
  b.targets.resize(Eigen::Index(n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) b.inputs(Eigen::Index(r), Eigen::Index(c)) = rng.normal();
    b.targets(Eigen::Index(r)) = target_scale * rng.normal();
  }
  return b;
}

/// Every coordinate (biases included) Gaussian with the given scale.
inline metacal::ParamVector random_params(const metacal::MlpSpec& spec, std::uint64_t seed, double scale = 0.7) {
  metacal::Rng rng(seed);
  metacal::ParamVector p(spec);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = scale * rng.normal();
  return p;
}

inline metacal::ParamVector random_direction(const metacal::MlpSpec& spec, std::uint64_t seed) {
  return random_params(spec, seed, 1.0);
}

/// Hourly site with smooth, non-constant channels.
inline metacal::SiteDataset ramp_site(std::size_t hours, std::string id = "ramp") {
  metacal::SiteDataset s{std::move(id), {}};
  const auto t0 = metacal::parse_rfc3339("2021-01-01T00:00:00Z");
  for (std::size_t h = 0; h < hours; ++h) {
    const double u = double(h);
    s.records.push_back({t0 + std::chrono::hours(h), 20.0 + 0.1 * u + 5.0 * std::sin(u / 3.0),
                         35.0 + 0.2 * std::cos(u / 5.0) * 10.0, 25.0 + 3.0 * std::sin(u / 4.0),
                         60.0 + 10.0 * std::cos(u / 7.0), 18.0 + 0.08 * u + 4.0 * std::sin(u / 3.0 + 0.2)});
  }
  return s;
}

/// Fresh empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("metacal_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
