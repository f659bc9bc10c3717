#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "metacal/dataio.hpp"
#include "metacal/nnet.hpp"

namespace metacal {

enum class Method { B1, B2, B3, MAML, RAW };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);

/// Errors e = pred - truth, all in ug/m3. mae_std is the population standard
/// deviation of |e|. r2 is the raw coefficient of determination (not x100).
double mae(std::span<const double> pred, std::span<const double> truth);
double mae_std(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
/// Throws DegenerateError when truth is constant.
double r2(std::span<const double> pred, std::span<const double> truth);

struct EvalReport {
  std::string site_id;
  Method method = Method::RAW;
  double mae = 0.0;
  double mae_std = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  std::size_t n_samples = 0;
};

EvalReport make_report(std::span<const double> pred, std::span<const double> truth, std::string site_id,
                       Method method);

/// Forward pass, then predictions and targets mapped back to ug/m3 through
/// `stats` before any metric is computed.
EvalReport evaluate(const ParamVector& params, const Batch& test, const NormStats& stats,
                    std::string site_id, Method method);

/// Uncalibrated sensor: pm25_raw used directly as the prediction.
EvalReport evaluate_raw(std::span<const CalibrationRecord> records, std::string site_id);

/// Calibrated PM2.5 in ug/m3 for arbitrary records (reference not needed).
Eigen::VectorXd calibrate(const ParamVector& params, std::span<const CalibrationRecord> records,
                          const NormStats& stats);

}  // namespace metacal
