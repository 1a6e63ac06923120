#include "gcpo/nn.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>

#include "gcpo/errors.hpp"

namespace gcpo::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kSoftsign: return "softsign";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "softsign") return Activation::kSoftsign;
  if (s == "identity") return Activation::kIdentity;
  throw InvalidInput("unknown activation '" + s + "'");
}

namespace {

void activate(Activation a, Matrix& z) {
  switch (a) {
    case Activation::kTanh: z = z.array().tanh().matrix(); break;
    case Activation::kSoftsign: z = (z.array() / (1.0 + z.array().abs())).matrix(); break;
    case Activation::kIdentity: break;
  }
}

// Multiplies `grad` in place by the activation derivative, written in terms of
// the activation output y.
void scale_by_derivative(Activation a, const Matrix& y, Matrix& grad) {
  switch (a) {
    case Activation::kTanh: grad.array() *= 1.0 - y.array().square(); break;
    // softsign: y = z/(1+|z|)  =>  dy/dz = (1-|y|)^2
    case Activation::kSoftsign: grad.array() *= (1.0 - y.array().abs()).square(); break;
    case Activation::kIdentity: break;
  }
}

}  // namespace

DenseNet::DenseNet(std::vector<int> layer_sizes, std::vector<Activation> activations)
    : sizes_(std::move(layer_sizes)), activations_(std::move(activations)) {
  if (sizes_.size() < 2) throw InvalidInput("DenseNet needs at least an input and an output layer");
  for (int s : sizes_)
    if (s <= 0) throw InvalidInput("layer sizes must be positive");
  if (activations_.size() != sizes_.size() - 1)
    throw InvalidInput("one activation per layer is required");
  if (activations_.back() != Activation::kIdentity)
    throw InvalidInput("final layer activation must be identity");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(total);
}

DenseNet DenseNet::glorot(const std::vector<int>& layer_sizes, Activation hidden, Rng& rng) {
  std::vector<Activation> acts(layer_sizes.size() - 1, hidden);
  acts.back() = Activation::kIdentity;
  DenseNet net(layer_sizes, acts);
  for (int l = 0; l < net.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / (layer_sizes[l] + layer_sizes[l + 1]));
    auto w = net.weight(l);
    // column-major fill order keeps the draw sequence independent of Eigen internals
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
  }
  return net;
}

Eigen::Map<const Matrix> DenseNet::weight(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<Matrix> DenseNet::weight(int layer) {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<const Vector> DenseNet::bias(int layer) const {
  return {params_.data() + offsets_[layer] + sizes_[layer + 1] * sizes_[layer], sizes_[layer + 1]};
}
Eigen::Map<Vector> DenseNet::bias(int layer) {
  return {params_.data() + offsets_[layer] + sizes_[layer + 1] * sizes_[layer], sizes_[layer + 1]};
}

Vector DenseNet::forward(const Vector& input) const {
  if (input.size() != input_size())
    throw InvalidInput("net_forward: expected input of length " + std::to_string(input_size()) +
                       ", got " + std::to_string(input.size()));
  Matrix x = input;
  for (int l = 0; l < layer_count(); ++l) {
    Matrix z = weight(l) * x;
    z += bias(l);
    activate(activations_[l], z);
    x = std::move(z);
  }
  return x.col(0);
}

Matrix DenseNet::forward(const Matrix& inputs) const {
  if (inputs.rows() != input_size())
    throw InvalidInput("net_forward: expected inputs with " + std::to_string(input_size()) +
                       " rows, got " + std::to_string(inputs.rows()));
  Matrix x = inputs;
  for (int l = 0; l < layer_count(); ++l) {
    Matrix z = weight(l) * x;
    z.colwise() += bias(l);
    activate(activations_[l], z);
    x = std::move(z);
  }
  return x;
}

ForwardTape DenseNet::forward_tape(const Matrix& inputs) const {
  if (inputs.rows() != input_size())
    throw InvalidInput("net_forward: expected inputs with " + std::to_string(input_size()) + " rows");
  ForwardTape tape;
  tape.inputs.reserve(layer_count());
  tape.activations.reserve(layer_count());
  const Matrix* x = &inputs;
  for (int l = 0; l < layer_count(); ++l) {
    tape.inputs.push_back(*x);
    Matrix z = weight(l) * (*x);
    z.colwise() += bias(l);
    activate(activations_[l], z);
    tape.activations.push_back(std::move(z));
    x = &tape.activations.back();
  }
  return tape;
}

Gradients DenseNet::backward(const ForwardTape& tape, const Matrix& output_gradient) const {
  if (tape.empty() || static_cast<int>(tape.inputs.size()) != layer_count())
    throw InvalidState("net_backward: no forward tape for this net");
  if (output_gradient.rows() != output_size() || output_gradient.cols() != tape.output().cols())
    throw InvalidInput("net_backward: output gradient shape does not match the forward pass");
  Gradients g;
  g.parameters = Vector::Zero(params_.size());
  Matrix delta = output_gradient;
  for (int l = layer_count() - 1; l >= 0; --l) {
    scale_by_derivative(activations_[l], tape.activations[l], delta);
    const Eigen::Index in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<Matrix> dw(g.parameters.data() + offsets_[l], out, in);
    Eigen::Map<Vector> db(g.parameters.data() + offsets_[l] + out * in, out);
    dw.noalias() = delta * tape.inputs[l].transpose();
    db = delta.rowwise().sum();
    delta = weight(l).transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

Gradients DenseNet::backward(const Vector& input, const Vector& output_gradient) const {
  return backward(forward_tape(input), Matrix(output_gradient));
}

void DenseNet::save(std::ostream& os) const {
  os << "densenet 1\nlayers " << sizes_.size();
  for (int s : sizes_) os << ' ' << s;
  os << "\nactivations";
  for (auto a : activations_) os << ' ' << to_string(a);
  os << '\n' << std::setprecision(17);
  for (int l = 0; l < layer_count(); ++l) {
    auto w = weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) os << w(r, c) << '\n';
    auto b = bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) os << b(r) << '\n';
  }
}

DenseNet DenseNet::load(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "densenet" || version != 1)
    throw InvalidInput("not a densenet v1 record");
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "layers" || n < 2) throw InvalidInput("bad densenet layer header");
  std::vector<int> sizes(n);
  for (auto& s : sizes) is >> s;
  is >> tag;
  if (tag != "activations") throw InvalidInput("bad densenet activation header");
  std::vector<Activation> acts(n - 1);
  for (auto& a : acts) {
    std::string name;
    is >> name;
    a = activation_from_string(name);
  }
  DenseNet net(sizes, acts);
  for (int l = 0; l < net.layer_count(); ++l) {
    auto w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) is >> w(r, c);
    auto b = net.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) is >> b(r);
  }
  if (!is) throw InvalidInput("truncated densenet parameter block");
  return net;
}

AdamState AdamState::zeros(Eigen::Index n, double learning_rate) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw InvalidInput("adam_step: gradient/moment shape does not match parameters");
  for (Eigen::Index i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NonFiniteError("adam_step: non-finite gradient", i);

  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace gcpo::nn
