#include "metacal/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "metacal/error.hpp"

namespace metacal {

namespace {

void check(std::span<const double> pred, std::span<const double> truth, std::size_t min_len) {
  if (pred.size() != truth.size()) {
    throw ShapeError(fmt::format("prediction/truth length mismatch: {} vs {}", pred.size(), truth.size()));
  }
  if (pred.size() < min_len) {
    throw InvalidArgument(fmt::format("metric needs at least {} samples, got {}", min_len, pred.size()));
  }
}

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), std::size_t(v.size())}; }

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::B1: return "B1";
    case Method::B2: return "B2";
    case Method::B3: return "B3";
    case Method::MAML: return "MAML";
    case Method::RAW: return "RAW";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view name) {
  // Case-insensitive: "maml" and "MAML" both parse.
  auto same = [](std::string_view a, std::string_view b) {
    return std::ranges::equal(a, b, [](char x, char y) { return std::toupper((unsigned char)x) == y; });
  };
  for (Method m : {Method::B1, Method::B2, Method::B3, Method::MAML, Method::RAW}) {
    if (same(name, method_name(m))) return m;
  }
  return std::nullopt;
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / double(pred.size());
}

double mae_std(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth, 2);
  const double m = mae(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred[i] - truth[i]) - m;
    s += d * d;
  }
  return std::sqrt(s / double(pred.size()));
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / double(pred.size()));
}

double r2(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth, 2);
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= double(truth.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw DegenerateError("R^2 undefined for constant truth");
  return 1.0 - ss_res / ss_tot;
}

EvalReport make_report(std::span<const double> pred, std::span<const double> truth, std::string site_id,
                       Method method) {
  check(pred, truth, 2);
  return {std::move(site_id), method,          mae(pred, truth), mae_std(pred, truth),
          rmse(pred, truth),  r2(pred, truth), pred.size()};
}

Eigen::VectorXd calibrate(const ParamVector& params, std::span<const CalibrationRecord> records,
                          const NormStats& stats) {
  const Eigen::MatrixXd out = forward(params, normalize_features(records, stats));
  return denorm_predictions(out.col(0), stats);
}

EvalReport evaluate(const ParamVector& params, const Batch& test, const NormStats& stats,
                    std::string site_id, Method method) {
  if (test.empty()) throw InvalidArgument("test set is empty");
  if (params.spec().output_dim != 1) throw ShapeError("evaluation needs a scalar-output network");
  const Eigen::VectorXd pred = denorm_predictions(forward(params, test.inputs).col(0), stats);
  const Eigen::VectorXd truth = denorm_predictions(test.targets, stats);
  return make_report(as_span(pred), as_span(truth), std::move(site_id), method);
}

EvalReport evaluate_raw(std::span<const CalibrationRecord> records, std::string site_id) {
  std::vector<double> pred;
  std::vector<double> truth;
  pred.reserve(records.size());
  truth.reserve(records.size());
  for (const auto& r : records) {
    if (!r.pm25_ref) throw DataError("raw evaluation needs reference values");
    pred.push_back(r.pm25_raw);
    truth.push_back(*r.pm25_ref);
  }
  return make_report(pred, truth, std::move(site_id), Method::RAW);
}

}  // namespace metacal
