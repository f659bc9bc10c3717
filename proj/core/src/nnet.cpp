#include "metacal/nnet.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "metacal/error.hpp"
#include "metacal/random.hpp"

namespace metacal {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajorMatrix>;
using Weights = Eigen::Map<RowMajorMatrix>;
using ConstBias = Eigen::Map<const Eigen::VectorXd>;
using Bias = Eigen::Map<Eigen::VectorXd>;

ConstWeights weights(const ParamVector& p, const LayerSlice& s) {
  return {p.values().data() + s.weight_offset, Eigen::Index(s.fan_out), Eigen::Index(s.fan_in)};
}
Weights weights(ParamVector& p, const LayerSlice& s) {
  return {p.values().data() + s.weight_offset, Eigen::Index(s.fan_out), Eigen::Index(s.fan_in)};
}
ConstBias bias(const ParamVector& p, const LayerSlice& s) {
  return {p.values().data() + s.bias_offset, Eigen::Index(s.fan_out)};
}
Bias bias(ParamVector& p, const LayerSlice& s) {
  return {p.values().data() + s.bias_offset, Eigen::Index(s.fan_out)};
}

void activate(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::ReLU) z = z.cwiseMax(0.0);
}

// Elementwise derivative of the activation evaluated at pre-activation z,
// with ReLU'(0) = 0.
Eigen::MatrixXd activation_slope(Activation act, const Eigen::MatrixXd& z) {
  if (act == Activation::Linear) return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  return (z.array() > 0.0).cast<double>().matrix();
}

double sign(double u) { return u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0); }

void require_input_width(const MlpSpec& spec, const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim) {
    throw ShapeError(fmt::format("input width mismatch: expected {} columns, got {}",
                                 spec.input_dim, inputs.cols()));
  }
}

void require_loss_batch(const ParamVector& params, const Batch& batch) {
  if (batch.empty()) throw InvalidArgument("loss requires a non-empty batch");
  if (params.spec().output_dim != 1) {
    throw ShapeError(fmt::format("MAE loss needs a scalar output, spec has output_dim {}",
                                 params.spec().output_dim));
  }
  require_input_width(params.spec(), batch.inputs);
  if (batch.inputs.rows() != batch.targets.size()) {
    throw ShapeError(fmt::format("batch has {} input rows but {} targets", batch.inputs.rows(),
                                 batch.targets.size()));
  }
}

// Pre-activations z_l and post-activations a_l of every layer; a_0 = inputs.
struct Trace {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
};

Trace run_forward(const ParamVector& params, const std::vector<LayerSlice>& layout,
                  const Eigen::MatrixXd& inputs) {
  Trace t;
  t.pre.reserve(layout.size());
  t.post.reserve(layout.size() + 1);
  t.post.push_back(inputs);
  for (const auto& s : layout) {
    Eigen::MatrixXd z = t.post.back() * weights(params, s).transpose();
    z.rowwise() += bias(params, s).transpose();
    Eigen::MatrixXd a = z;
    activate(s.activation, a);
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(a));
  }
  return t;
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim == 0) throw InvalidArgument("input_dim must be at least 1");
  if (output_dim == 0) throw InvalidArgument("output_dim must be at least 1");
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    if (hidden_widths[i] == 0) {
      throw InvalidArgument(fmt::format("hidden layer {} has width 0", i));
    }
  }
}

std::size_t MlpSpec::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_widths[layer - 1];
}

std::size_t MlpSpec::fan_out(std::size_t layer) const {
  return layer == hidden_widths.size() ? output_dim : hidden_widths[layer];
}

Activation MlpSpec::activation(std::size_t layer) const {
  return layer == hidden_widths.size() ? output_activation : hidden_activation;
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) n += fan_in(l) * fan_out(l) + fan_out(l);
  return n;
}

std::vector<LayerSlice> layer_layout(const MlpSpec& spec) {
  std::vector<LayerSlice> out;
  out.reserve(spec.layer_count());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.fan_in(l);
    const std::size_t outw = spec.fan_out(l);
    out.push_back({offset, offset + in * outw, in, outw, spec.activation(l)});
    offset += in * outw + outw;
  }
  return out;
}

ParamVector::ParamVector(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  values_.assign(spec_.param_count(), 0.0);
}

ParamVector::ParamVector(MlpSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
  spec_.validate();
  if (values_.size() != spec_.param_count()) {
    throw ShapeError(fmt::format("parameter vector has {} values, spec needs {}", values_.size(),
                                 spec_.param_count()));
  }
}

Eigen::Map<const Eigen::VectorXd> ParamVector::as_eigen() const {
  return {values_.data(), Eigen::Index(values_.size())};
}

Eigen::Map<Eigen::VectorXd> ParamVector::as_eigen() {
  return {values_.data(), Eigen::Index(values_.size())};
}

void ParamVector::require_compatible(const ParamVector& other) const {
  if (other.size() != size() || !(other.spec_ == spec_)) {
    throw ShapeError(fmt::format("parameter vectors differ: {} vs {} values", size(), other.size()));
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  require_compatible(other);
  as_eigen() += other.as_eigen();
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  require_compatible(other);
  as_eigen() -= other.as_eigen();
  return *this;
}

ParamVector& ParamVector::operator*=(double scale) {
  as_eigen() *= scale;
  return *this;
}

ParamVector& ParamVector::add_scaled(const ParamVector& other, double scale) {
  require_compatible(other);
  as_eigen() += scale * other.as_eigen();
  return *this;
}

double ParamVector::dot(const ParamVector& other) const {
  require_compatible(other);
  return as_eigen().dot(other.as_eigen());
}

double ParamVector::norm() const { return as_eigen().norm(); }

void Batch::validate() const {
  if (inputs.rows() != targets.size()) {
    throw ShapeError(
        fmt::format("batch has {} input rows but {} targets", inputs.rows(), targets.size()));
  }
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw DataError("batch contains NaN or infinite entries");
  }
}

Batch concatenate(std::span<const Batch> parts) {
  Eigen::Index rows = 0;
  Eigen::Index cols = parts.empty() ? 0 : parts.front().inputs.cols();
  for (const auto& p : parts) {
    if (p.inputs.cols() != cols && p.size() > 0) {
      throw ShapeError(fmt::format("cannot concatenate batches of width {} and {}", cols,
                                   p.inputs.cols()));
    }
    rows += p.inputs.rows();
  }
  Batch out{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    const auto n = p.inputs.rows();
    if (n == 0) continue;
    out.inputs.middleRows(at, n) = p.inputs;
    out.targets.segment(at, n) = p.targets;
    at += n;
  }
  return out;
}

Eigen::MatrixXd forward(const ParamVector& params, const Eigen::MatrixXd& inputs) {
  require_input_width(params.spec(), inputs);
  const auto layout = layer_layout(params.spec());
  Eigen::MatrixXd a = inputs;
  for (const auto& s : layout) {
    Eigen::MatrixXd z = a * weights(params, s).transpose();
    z.rowwise() += bias(params, s).transpose();
    activate(s.activation, z);
    a = std::move(z);
  }
  return a;
}

double loss_mae(const ParamVector& params, const Batch& batch) {
  require_loss_batch(params, batch);
  const Eigen::MatrixXd pred = forward(params, batch.inputs);
  return (pred.col(0) - batch.targets).cwiseAbs().mean();
}

LossGrad loss_and_grad(const ParamVector& params, const Batch& batch) {
  require_loss_batch(params, batch);
  const auto layout = layer_layout(params.spec());
  const Trace t = run_forward(params, layout, batch.inputs);
  const Eigen::VectorXd residual = t.post.back().col(0) - batch.targets;
  const double n = static_cast<double>(batch.size());

  LossGrad out{residual.cwiseAbs().mean(), ParamVector(params.spec())};

  // upstream = dL/d(post-activation of the current layer)
  Eigen::MatrixXd upstream = residual.unaryExpr([n](double r) { return sign(r) / n; });
  for (std::size_t l = layout.size(); l-- > 0;) {
    const auto& s = layout[l];
    const Eigen::MatrixXd delta =
        activation_slope(s.activation, t.pre[l]).cwiseProduct(upstream);
    weights(out.gradient, s).noalias() = delta.transpose() * t.post[l];
    bias(out.gradient, s) = delta.colwise().sum().transpose();
    if (l > 0) upstream = delta * weights(params, s);
  }
  return out;
}

ParamVector grad(const ParamVector& params, const Batch& batch) {
  return loss_and_grad(params, batch).gradient;
}

ParamVector hvp(const ParamVector& params, const Batch& batch, const ParamVector& direction) {
  require_loss_batch(params, batch);
  params.require_compatible(direction);
  const auto layout = layer_layout(params.spec());
  const Trace t = run_forward(params, layout, batch.inputs);
  const Eigen::VectorXd residual = t.post.back().col(0) - batch.targets;
  const double n = static_cast<double>(batch.size());

  // Tangent of every layer's activations along `direction` (R-forward).
  // Both activations are piecewise linear, so their second derivatives vanish
  // and tangents of the slopes are zero.
  std::vector<Eigen::MatrixXd> slope(layout.size());
  std::vector<Eigen::MatrixXd> post_tangent(layout.size() + 1);
  post_tangent[0] = Eigen::MatrixXd::Zero(batch.inputs.rows(), batch.inputs.cols());
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto& s = layout[l];
    slope[l] = activation_slope(s.activation, t.pre[l]);
    Eigen::MatrixXd pre_tangent = t.post[l] * weights(direction, s).transpose() +
                                  post_tangent[l] * weights(params, s).transpose();
    pre_tangent.rowwise() += bias(direction, s).transpose();
    post_tangent[l + 1] = slope[l].cwiseProduct(pre_tangent);
  }

  ParamVector out(params.spec());
  // d sign(r)/dr = 0 almost everywhere, so the output adjoint has no tangent.
  Eigen::MatrixXd upstream = residual.unaryExpr([n](double r) { return sign(r) / n; });
  Eigen::MatrixXd upstream_tangent = Eigen::MatrixXd::Zero(upstream.rows(), upstream.cols());
  for (std::size_t l = layout.size(); l-- > 0;) {
    const auto& s = layout[l];
    const Eigen::MatrixXd delta = slope[l].cwiseProduct(upstream);
    const Eigen::MatrixXd delta_tangent = slope[l].cwiseProduct(upstream_tangent);
    weights(out, s).noalias() =
        delta_tangent.transpose() * t.post[l] + delta.transpose() * post_tangent[l];
    bias(out, s) = delta_tangent.colwise().sum().transpose();
    if (l > 0) {
      upstream_tangent = delta_tangent * weights(params, s) + delta * weights(direction, s);
      upstream = delta * weights(params, s);
    }
  }
  return out;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  ParamVector p(spec);
  Rng rng(mix_seed(seed, 0x1417));
  for (const auto& s : layer_layout(spec)) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
    auto w = weights(p, s);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    }
  }
  return p;
}

}  // namespace metacal
