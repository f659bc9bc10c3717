#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace metacal {

enum class Activation : std::uint8_t { ReLU = 0, Linear = 1 };

/// Architecture of a dense feed-forward network. The default is the
/// calibration model: 4 sensor channels -> 128 -> 128 -> 1 corrected PM2.5.
struct MlpSpec {
  std::size_t input_dim = 4;
  std::vector<std::size_t> hidden_widths{128, 128};
  Activation hidden_activation = Activation::ReLU;
  std::size_t output_dim = 1;
  Activation output_activation = Activation::Linear;

  /// Throws InvalidArgument if any dimension is zero.
  void validate() const;

  std::size_t layer_count() const { return hidden_widths.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;
  Activation activation(std::size_t layer) const;

  /// Sum over layers of fan_in * fan_out + fan_out.
  std::size_t param_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Where one layer lives inside the flat parameter vector.
///
/// Layout (frozen; checkpoints depend on it): layers in input-to-output
/// order; for each layer the weight matrix W[fan_out x fan_in] stored
/// row-major, immediately followed by the bias vector b[fan_out].
struct LayerSlice {
  std::size_t weight_offset;
  std::size_t bias_offset;
  std::size_t fan_in;
  std::size_t fan_out;
  Activation activation;
};

std::vector<LayerSlice> layer_layout(const MlpSpec& spec);

/// Flat vector of every weight and bias of a network with a given spec.
/// Holds both adapted task parameters and the meta-learned initialization.
class ParamVector {
 public:
  ParamVector() = default;
  /// All-zero parameters for `spec`.
  explicit ParamVector(MlpSpec spec);
  /// Throws ShapeError unless values.size() == spec.param_count().
  ParamVector(MlpSpec spec, std::vector<double> values);

  const MlpSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  Eigen::Map<const Eigen::VectorXd> as_eigen() const;
  Eigen::Map<Eigen::VectorXd> as_eigen();

  /// Throws ShapeError if `other` has a different length or spec.
  void require_compatible(const ParamVector& other) const;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double scale);
  /// this += scale * other
  ParamVector& add_scaled(const ParamVector& other, double scale);

  double dot(const ParamVector& other) const;
  double norm() const;

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }
  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  MlpSpec spec_;
  std::vector<double> values_;
};

/// Normalized inputs [n x input_dim] with their normalized reference targets.
/// An empty batch is representable (e.g. a zero-length validation split),
/// but every loss/gradient entry point rejects it.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;

  std::size_t size() const { return static_cast<std::size_t>(targets.size()); }
  bool empty() const { return targets.size() == 0; }

  /// Row/target count agreement and finiteness of every entry.
  void validate() const;
};

/// Row-wise concatenation; all parts must share a column count.
Batch concatenate(std::span<const Batch> parts);

/// Predictions [n x output_dim]. Throws ShapeError if the input width does
/// not match spec.input_dim.
Eigen::MatrixXd forward(const ParamVector& params, const Eigen::MatrixXd& inputs);

/// Mean absolute error (1/n) sum |f(x) - y| over the batch.
double loss_mae(const ParamVector& params, const Batch& batch);

struct LossGrad {
  double loss;
  ParamVector gradient;
};

/// Loss and its reverse-mode gradient in one pass. Subgradient conventions:
/// d|u|/du = sign(u) with sign(0) = 0, and ReLU'(0) = 0.
LossGrad loss_and_grad(const ParamVector& params, const Batch& batch);
ParamVector grad(const ParamVector& params, const Batch& batch);

/// Hessian of loss_mae at `params` applied to `direction`, by forward-mode
/// differentiation of the backward pass (R-operator). Exact wherever the
/// loss is twice differentiable, i.e. away from ReLU and residual kinks.
ParamVector hvp(const ParamVector& params, const Batch& batch, const ParamVector& direction);

/// Glorot-uniform weights, bound sqrt(6 / (fan_in + fan_out)) per layer,
/// and zero biases. Deterministic in (spec, seed).
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);

}  // namespace metacal
