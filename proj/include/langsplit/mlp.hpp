#pragma once

#include "langsplit/core.hpp"

#include <cstdint>
#include <vector>

namespace langsplit {

enum class Activation { identity, tanh, silu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out, or empty for a bias-free layer
  Activation activation = Activation::identity;
};

/// Parameter gradients with the same shapes as the model's layers.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Vector flatten() const;
};

struct MLPConfig {
  Eigen::Index dim = 1;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::silu;
  bool level_embedding = true;
  bool bias = true;
};

/// Small fully connected network. Its input is the state concatenated with a
/// level embedding (level, sin(w_k level), cos(w_k level)) at the frequencies
/// w_k = pi * 2^k, k = 0..3; its output is a d-vector of kind
/// `prediction_kind`, read in that kind's native coordinates.
class MLPModel {
 public:
  static constexpr int kEmbeddingFrequencies = 4;
  static constexpr int kEmbeddingWidth = 1 + 2 * kEmbeddingFrequencies;

  MLPModel(PredictionKind kind, Eigen::Index dim, bool level_embedding, std::vector<DenseLayer> layers);

  /// Hidden layers use config.activation, the output layer is linear.
  /// Weights ~ N(0, 1 / fan_in), biases zero.
  static MLPModel create(PredictionKind kind, const MLPConfig& config, std::uint64_t seed);

  PredictionKind prediction_kind() const { return kind_; }
  Eigen::Index dim() const { return dim_; }
  bool level_embedding() const { return level_embedding_; }
  Eigen::Index input_dim() const { return dim_ + (level_embedding_ ? kEmbeddingWidth : 0); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Matrix features(const Matrix& states, const Vector& levels) const;
  Matrix predict(const Matrix& states, double level) const;
  Matrix predict(const Matrix& states, const Vector& levels) const;

  /// Activations kept for backpropagation.
  struct Tape {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> pre_activation;
  };
  Matrix forward(const Matrix& features, Tape* tape) const;
  /// Gradients of sum_j <grad_out_j, output_j> with respect to the parameters.
  Gradients backward(const Tape& tape, const Matrix& grad_out) const;

  Eigen::Index parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);
  Gradients zero_gradients() const;

 private:
  void check() const;

  PredictionKind kind_;
  Eigen::Index dim_;
  bool level_embedding_;
  std::vector<DenseLayer> layers_;
};

}  // namespace langsplit
