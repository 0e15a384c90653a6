#pragma once

#include <vector>

#include "perturbnet/linalg.hpp"
#include "perturbnet/rng.hpp"

namespace perturbnet {

enum class LossKind { Cce, Mse };

struct NetworkSpec {
  /// Layer widths N_0..N_L; widths.size() == L + 1, L >= 1.
  std::vector<int> widths;
  /// Leaky-ReLU negative slope, in [0, 1).
  double leaky_slope = 0.01;
  bool use_decorrelation = false;
  /// Skip the activation on layer L (raw logits, for CCE-with-softmax).
  bool output_layer_linear = true;

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
};

/// Fully-connected network without biases: a_l = W_l x*_{l-1},
/// x*_{l-1} = R_{l-1} x_{l-1} when decorrelation is enabled.
struct Network {
  NetworkSpec spec;
  /// weights[l-1] is W_l, shape N_l x N_{l-1}, for l = 1..L.
  std::vector<Matrix> weights;
  /// decorrelation[l] is R_l, shape N_l x N_l, for l = 0..L-1.
  std::vector<Matrix> decorrelation;

  int depth() const { return spec.depth(); }
  int width(int l) const { return spec.widths[static_cast<std::size_t>(l)]; }
  /// Number of noise-receiving units, sum of N_1..N_L.
  int noisy_unit_count() const;
  /// All units including the input layer, sum of N_0..N_L.
  int total_unit_count() const;
};

enum class NoiseMode { AllLayers, SingleLayer, SingleUnit };

/// Per-layer pre-activation perturbations for one (possibly batched) pass.
/// Columns index samples in the batch.
struct NoiseBundle {
  NoiseMode mode = NoiseMode::AllLayers;
  int layer = -1; // 1-based, SingleLayer / SingleUnit only
  int unit = -1;  // 0-based, SingleUnit only
  double variance = 0.0;
  /// values[l-1] is the perturbation of layer l's pre-activation, N_l x B.
  std::vector<Matrix> values;

  bool empty() const { return values.empty(); }
};

/// Everything one forward pass produced. Columns index samples.
struct ForwardTrace {
  Matrix input; // x_0, N_0 x B
  /// decorrelated_inputs[l-1] is x*_{l-1} (the input that fed W_l), l = 1..L.
  std::vector<Matrix> decorrelated_inputs;
  /// preactivations[l-1] is a_l, l = 1..L.
  std::vector<Matrix> preactivations;
  /// outputs[l-1] is x_l, l = 1..L.
  std::vector<Matrix> outputs;
  NoiseBundle noise; // empty for a clean pass

  Eigen::Index batch_size() const { return input.cols(); }
  const Matrix& output() const { return outputs.back(); }
};

/// Weights uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)], R_l = I.
Network init_network(const NetworkSpec& spec, RngStream stream);

/// Clean or noisy forward pass over a batch (columns = samples).
ForwardTrace forward(const Network& net, const Matrix& x0, const NoiseBundle& noise = {});
ForwardTrace forward(const Network& net, const Vector& x0, const NoiseBundle& noise = {});

NoiseBundle sample_noise(const Network& net, NoiseMode mode, double variance,
                         RngStream stream, Eigen::Index batch = 1, int layer = -1,
                         int unit = -1);

/// Categorical cross-entropy of raw logits against a one-hot target,
/// stabilized by max-subtraction.
double loss_cce(const Vector& logits, const Vector& target);

/// Sum of squared componentwise errors.
double loss_mse(const Vector& output, const Vector& target);

double loss_value(LossKind kind, const Vector& output, const Vector& target);

/// Per-sample losses over a batch, one entry per column.
Vector loss_columns(LossKind kind, const Matrix& outputs, const Matrix& targets);

} // namespace perturbnet
