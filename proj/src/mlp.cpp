#include "langsplit/mlp.hpp"

#include "langsplit/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace langsplit {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::silu: return "silu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "silu" || name == "swish") return Activation::silu;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

namespace {

Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::silu: return (z.array() / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

Matrix activation_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::tanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::silu: {
      const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z.array()).exp());
      return (sig * (1.0 + z.array() * (1.0 - sig))).matrix();
    }
  }
  return z;
}

}  // namespace

Vector Gradients::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) n += weight[l].size() + bias[l].size();
  Vector flat(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    flat.segment(at, weight[l].size()) = weight[l].reshaped<Eigen::RowMajor>();
    at += weight[l].size();
    flat.segment(at, bias[l].size()) = bias[l];
    at += bias[l].size();
  }
  return flat;
}

MLPModel::MLPModel(PredictionKind kind, Eigen::Index dim, bool level_embedding, std::vector<DenseLayer> layers)
    : kind_(kind), dim_(dim), level_embedding_(level_embedding), layers_(std::move(layers)) {
  check();
}

void MLPModel::check() const {
  if (dim_ < 1) throw ArgumentError("model dimension must be >= 1");
  if (layers_.empty()) throw ArgumentError("model needs at least one layer");
  Eigen::Index width = input_dim();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DenseLayer& layer = layers_[l];
    if (layer.weight.cols() != width)
      throw ArgumentError("layer " + std::to_string(l) + " expects " + std::to_string(layer.weight.cols()) +
                          " inputs but receives " + std::to_string(width));
    if (layer.bias.size() != 0 && layer.bias.size() != layer.weight.rows())
      throw ArgumentError("layer " + std::to_string(l) + " bias has the wrong length");
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw ArgumentError("layer " + std::to_string(l) + " has non-finite parameters");
    width = layer.weight.rows();
  }
  if (width != dim_) throw ArgumentError("model output width differs from the state dimension");
}

MLPModel MLPModel::create(PredictionKind kind, const MLPConfig& config, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<DenseLayer> layers;
  Eigen::Index in = config.dim + (config.level_embedding ? kEmbeddingWidth : 0);
  std::vector<int> widths = config.hidden;
  widths.push_back(int(config.dim));
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const Eigen::Index out = widths[l];
    if (out < 1) throw ArgumentError("layer widths must be positive");
    DenseLayer layer;
    layer.weight.resize(out, in);
    const double scale = 1.0 / std::sqrt(double(in));
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = scale * rng.normal();
    if (config.bias) layer.bias = Vector::Zero(out);
    layer.activation = l + 1 == widths.size() ? Activation::identity : config.activation;
    layers.push_back(std::move(layer));
    in = out;
  }
  return MLPModel(kind, config.dim, config.level_embedding, std::move(layers));
}

Matrix MLPModel::features(const Matrix& states, const Vector& levels) const {
  if (states.rows() != dim_) throw ArgumentError("model input has the wrong state dimension");
  if (levels.size() != states.cols()) throw ArgumentError("one level per input column is required");
  if (!level_embedding_) return states;
  Matrix f(input_dim(), states.cols());
  f.topRows(dim_) = states;
  f.row(dim_) = levels.transpose();
  for (int k = 0; k < kEmbeddingFrequencies; ++k) {
    const double w = std::numbers::pi * double(1 << k);
    f.row(dim_ + 1 + 2 * k) = (w * levels.array()).sin().matrix().transpose();
    f.row(dim_ + 2 + 2 * k) = (w * levels.array()).cos().matrix().transpose();
  }
  return f;
}

Matrix MLPModel::forward(const Matrix& input, Tape* tape) const {
  Matrix a = input;
  if (tape) {
    tape->inputs.clear();
    tape->pre_activation.clear();
  }
  for (const DenseLayer& layer : layers_) {
    Matrix z = layer.weight * a;
    if (layer.bias.size()) z.colwise() += layer.bias;
    Matrix next = activate(layer.activation, z);
    if (tape) {
      tape->inputs.push_back(std::move(a));
      tape->pre_activation.push_back(std::move(z));
    }
    a = std::move(next);
  }
  return a;
}

Matrix MLPModel::predict(const Matrix& states, double level) const {
  return predict(states, Vector::Constant(states.cols(), level));
}

Matrix MLPModel::predict(const Matrix& states, const Vector& levels) const {
  return forward(features(states, levels), nullptr);
}

Gradients MLPModel::backward(const Tape& tape, const Matrix& grad_out) const {
  if (tape.inputs.size() != layers_.size()) throw ArgumentError("tape does not match the model");
  Gradients g = zero_gradients();
  Matrix delta = grad_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const DenseLayer& layer = layers_[l];
    delta.array() *= activation_derivative(layer.activation, tape.pre_activation[l]).array();
    g.weight[l] = delta * tape.inputs[l].transpose();
    if (layer.bias.size()) g.bias[l] = delta.rowwise().sum();
    if (l > 0) delta = layer.weight.transpose() * delta;
  }
  return g;
}

Gradients MLPModel::zero_gradients() const {
  Gradients g;
  for (const DenseLayer& layer : layers_) {
    g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return g;
}

Eigen::Index MLPModel::parameter_count() const {
  Eigen::Index n = 0;
  for (const DenseLayer& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Vector MLPModel::parameters() const {
  Gradients as_grad;
  for (const DenseLayer& layer : layers_) {
    as_grad.weight.push_back(layer.weight);
    as_grad.bias.push_back(layer.bias);
  }
  return as_grad.flatten();
}

void MLPModel::set_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw ArgumentError("flat parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (DenseLayer& layer : layers_) {
    layer.weight.reshaped<Eigen::RowMajor>() = flat.segment(at, layer.weight.size());
    at += layer.weight.size();
    layer.bias = flat.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
  check();
}

}  // namespace langsplit
