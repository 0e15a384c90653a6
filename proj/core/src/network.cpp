#include "perturbnet/network.hpp"

#include <cmath>
#include <numeric>

#include "perturbnet/errors.hpp"

namespace perturbnet {

void NetworkSpec::validate() const {
  if (widths.size() < 2) {
    throw InvalidParameter("NetworkSpec: need at least input and output widths");
  }
  for (int w : widths) {
    if (w < 1) {
      throw InvalidParameter("NetworkSpec: widths must be >= 1");
    }
  }
  if (leaky_slope < 0.0 || leaky_slope >= 1.0) {
    throw InvalidParameter("NetworkSpec: leaky slope must be in [0, 1)");
  }
}

int Network::noisy_unit_count() const {
  return std::accumulate(spec.widths.begin() + 1, spec.widths.end(), 0);
}

int Network::total_unit_count() const {
  return std::accumulate(spec.widths.begin(), spec.widths.end(), 0);
}

Network init_network(const NetworkSpec& spec, RngStream stream) {
  spec.validate();
  Network net;
  net.spec = spec;
  const int L = spec.depth();
  net.weights.reserve(static_cast<std::size_t>(L));
  for (int l = 1; l <= L; ++l) {
    const int fan_in = spec.widths[static_cast<std::size_t>(l - 1)];
    const int fan_out = spec.widths[static_cast<std::size_t>(l)];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    RngStream layer_stream = stream.derive(static_cast<std::uint64_t>(l));
    Matrix w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        w(r, c) = layer_stream.uniform(-bound, bound);
      }
    }
    net.weights.push_back(std::move(w));
  }
  net.decorrelation.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    net.decorrelation.push_back(Matrix::Identity(spec.widths[static_cast<std::size_t>(l)],
                                                 spec.widths[static_cast<std::size_t>(l)]));
  }
  return net;
}

namespace {

Matrix leaky_relu(const Matrix& a, double slope) {
  return (a.array() >= 0.0).select(a, slope * a);
}

} // namespace

ForwardTrace forward(const Network& net, const Matrix& x0, const NoiseBundle& noise) {
  const int L = net.depth();
  if (x0.rows() != net.width(0)) {
    throw InvalidParameter("forward: input width mismatch");
  }
  if (!noise.empty()) {
    if (static_cast<int>(noise.values.size()) != L) {
      throw InvalidParameter("forward: noise bundle layer count mismatch");
    }
    for (int l = 1; l <= L; ++l) {
      const Matrix& nu = noise.values[static_cast<std::size_t>(l - 1)];
      if (nu.rows() != net.width(l) || nu.cols() != x0.cols()) {
        throw InvalidParameter("forward: noise bundle shape mismatch");
      }
    }
  }

  ForwardTrace trace;
  trace.input = x0;
  trace.noise = noise;
  trace.decorrelated_inputs.reserve(static_cast<std::size_t>(L));
  trace.preactivations.reserve(static_cast<std::size_t>(L));
  trace.outputs.reserve(static_cast<std::size_t>(L));

  const Matrix* x = &trace.input;
  for (int l = 1; l <= L; ++l) {
    if (net.spec.use_decorrelation) {
      trace.decorrelated_inputs.push_back(net.decorrelation[static_cast<std::size_t>(l - 1)] * (*x));
    } else {
      trace.decorrelated_inputs.push_back(*x);
    }
    Matrix a = net.weights[static_cast<std::size_t>(l - 1)] * trace.decorrelated_inputs.back();
    if (!noise.empty()) {
      a += noise.values[static_cast<std::size_t>(l - 1)];
    }
    const bool linear_layer = (l == L) && net.spec.output_layer_linear;
    trace.preactivations.push_back(std::move(a));
    trace.outputs.push_back(linear_layer ? trace.preactivations.back()
                                         : leaky_relu(trace.preactivations.back(), net.spec.leaky_slope));
    x = &trace.outputs.back();
  }
  return trace;
}

ForwardTrace forward(const Network& net, const Vector& x0, const NoiseBundle& noise) {
  return forward(net, Matrix(x0), noise);
}

NoiseBundle sample_noise(const Network& net, NoiseMode mode, double variance,
                         RngStream stream, Eigen::Index batch, int layer, int unit) {
  if (variance <= 0.0) {
    throw InvalidParameter("sample_noise: variance must be positive");
  }
  const int L = net.depth();
  if (mode != NoiseMode::AllLayers) {
    if (layer < 1 || layer > L) {
      throw InvalidParameter("sample_noise: layer index out of range");
    }
    if (mode == NoiseMode::SingleUnit && (unit < 0 || unit >= net.width(layer))) {
      throw InvalidParameter("sample_noise: unit index out of range");
    }
  }

  NoiseBundle bundle;
  bundle.mode = mode;
  bundle.layer = (mode == NoiseMode::AllLayers) ? -1 : layer;
  bundle.unit = (mode == NoiseMode::SingleUnit) ? unit : -1;
  bundle.variance = variance;
  bundle.values.reserve(static_cast<std::size_t>(L));
  for (int l = 1; l <= L; ++l) {
    RngStream layer_stream = stream.derive(static_cast<std::uint64_t>(l));
    const Eigen::Index n = net.width(l);
    switch (mode) {
    case NoiseMode::AllLayers:
      bundle.values.push_back(layer_stream.gaussian_matrix(n, batch, variance));
      break;
    case NoiseMode::SingleLayer:
      bundle.values.push_back(l == layer ? layer_stream.gaussian_matrix(n, batch, variance)
                                         : Matrix::Zero(n, batch));
      break;
    case NoiseMode::SingleUnit: {
      Matrix nu = Matrix::Zero(n, batch);
      if (l == layer) {
        nu.row(unit) = layer_stream.gaussian(batch, variance).transpose();
      }
      bundle.values.push_back(std::move(nu));
      break;
    }
    }
  }
  return bundle;
}

double loss_cce(const Vector& logits, const Vector& target) {
  if (logits.size() != target.size()) {
    throw InvalidParameter("loss_cce: size mismatch");
  }
  int hot = -1;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] == 1.0) {
      if (hot >= 0) {
        throw InvalidParameter("loss_cce: target is not one-hot");
      }
      hot = static_cast<int>(i);
    } else if (target[i] != 0.0) {
      throw InvalidParameter("loss_cce: target is not one-hot");
    }
  }
  if (hot < 0) {
    throw InvalidParameter("loss_cce: target is not one-hot");
  }
  const double m = logits.maxCoeff();
  const double lse = std::log((logits.array() - m).exp().sum());
  return lse - (logits[hot] - m);
}

double loss_mse(const Vector& output, const Vector& target) {
  if (output.size() != target.size()) {
    throw InvalidParameter("loss_mse: size mismatch");
  }
  return (output - target).squaredNorm();
}

double loss_value(LossKind kind, const Vector& output, const Vector& target) {
  return kind == LossKind::Cce ? loss_cce(output, target) : loss_mse(output, target);
}

Vector loss_columns(LossKind kind, const Matrix& outputs, const Matrix& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw InvalidParameter("loss_columns: shape mismatch");
  }
  Vector losses(outputs.cols());
  for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
    losses[c] = loss_value(kind, outputs.col(c), targets.col(c));
  }
  return losses;
}

} // namespace perturbnet
