#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcpo/rng.hpp"

namespace gcpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace nn {

enum class Activation { kTanh, kSoftsign, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Intermediate values of a batched forward pass, consumed by `DenseNet::backward`.
/// A default-constructed tape is empty and rejected by `backward`.
struct ForwardTape {
  std::vector<Matrix> inputs;       // input to each layer, columns are samples
  std::vector<Matrix> activations;  // post-activation output of each layer
  bool empty() const { return inputs.empty(); }
  const Matrix& output() const { return activations.back(); }
};

struct Gradients {
  Vector parameters;  // same layout as DenseNet::parameters()
  Matrix input;       // d/d input, one column per sample
};

/// Fully connected network. All parameters live in one flat vector; for each
/// layer the weight block (out x in, column-major) is followed by the bias.
class DenseNet {
 public:
  DenseNet() = default;
  /// Zero-initialized net. `activations` has one entry per layer (size - 1)
  /// and the last one must be identity.
  DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations);

  /// Uniform Glorot weights, zero biases, `hidden` activation on all but the last layer.
  static DenseNet glorot(const std::vector<int>& layer_sizes, Activation hidden, Rng& rng);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(activations_.size()); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::vector<Activation>& activations() const { return activations_; }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Vector> bias(int layer);

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector forward(const Vector& input) const;
  /// Batched forward; columns of `inputs` are samples.
  Matrix forward(const Matrix& inputs) const;
  ForwardTape forward_tape(const Matrix& inputs) const;

  /// Gradients of sum(output .* output_gradient) w.r.t. parameters and inputs.
  Gradients backward(const ForwardTape& tape, const Matrix& output_gradient) const;
  Gradients backward(const Vector& input, const Vector& output_gradient) const;

  /// Text record:
  ///   densenet 1
  ///   layers <n> <size_0> ... <size_n-1>
  ///   activations <act_1> ... <act_n-1>
  ///   <per layer: weights row-major (out x in), then bias>   one value per line
  void save(std::ostream& os) const;
  static DenseNet load(std::istream& is);

 private:
  std::vector<int> sizes_;
  std::vector<Activation> activations_;
  std::vector<Eigen::Index> offsets_;  // start of each layer's weight block
  Vector params_;
};

/// Bias-corrected Adam. Moments are shape-congruent with the parameter vector.
struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(Eigen::Index n, double learning_rate = 3e-4);
};

/// Applies one Adam update in place. Throws NonFiniteError (params and state
/// untouched) if any gradient component is NaN/inf.
void adam_step(Vector& params, const Vector& grads, AdamState& state);

}  // namespace nn
}  // namespace gcpo
