#include "perturbnet/learners.hpp"

#include <cmath>

#include "perturbnet/errors.hpp"

namespace perturbnet {

namespace {

constexpr double kDegenerateSqNorm = 1e-30;

Matrix softmax_columns(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Vector z = logits.col(c);
    z.array() -= z.maxCoeff();
    Vector e = z.array().exp();
    p.col(c) = e / e.sum();
  }
  return p;
}

// f'(a): 1 for a >= 0, slope otherwise.
Matrix leaky_relu_grad(const Matrix& a, double slope) {
  return (a.array() >= 0.0).select(Matrix::Ones(a.rows(), a.cols()), slope * Matrix::Ones(a.rows(), a.cols()));
}

void check_same_input(const ForwardTrace& a, const ForwardTrace& b) {
  if (a.input.rows() != b.input.rows() || a.input.cols() != b.input.cols()) {
    throw InvalidParameter("traces have mismatched inputs");
  }
}

} // namespace

void RuleConfig::validate() const {
  if (sigma2 <= 0.0) {
    throw InvalidParameter("RuleConfig: sigma2 must be positive");
  }
  if (resample < 1) {
    throw InvalidParameter("RuleConfig: resample count must be >= 1");
  }
  if (double_noisy && kind != RuleKind::Np && kind != RuleKind::Anp) {
    throw InvalidParameter("RuleConfig: double-noisy mode only valid for NP and ANP");
  }
}

UpdateSet UpdateSet::zeros_like(const Network& net) {
  UpdateSet u;
  u.layers.reserve(net.weights.size());
  for (const Matrix& w : net.weights) {
    u.layers.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  return u;
}

UpdateSet& UpdateSet::operator+=(const UpdateSet& other) {
  if (layers.size() != other.layers.size()) {
    throw InvalidParameter("UpdateSet: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l] += other.layers[l];
  }
  return *this;
}

UpdateSet& UpdateSet::operator*=(double scale) {
  for (Matrix& m : layers) {
    m *= scale;
  }
  return *this;
}

bool UpdateSet::all_finite() const {
  for (const Matrix& m : layers) {
    if (!m.allFinite()) {
      return false;
    }
  }
  return true;
}

double angle_degrees(const UpdateSet& a, const UpdateSet& b) {
  return angle_degrees(a.layers, b.layers);
}

double layer_angle_degrees(const UpdateSet& a, const UpdateSet& b, int layer) {
  return angle_degrees(a.layers.at(static_cast<std::size_t>(layer - 1)),
                       b.layers.at(static_cast<std::size_t>(layer - 1)));
}

UpdateSet bp_update(const Network& net, const ForwardTrace& trace, const Matrix& targets,
                    LossKind loss) {
  const int L = net.depth();
  if (!trace.noise.empty()) {
    throw InvalidParameter("bp_update: requires a clean trace");
  }
  if (targets.rows() != trace.output().rows() || targets.cols() != trace.output().cols()) {
    throw InvalidParameter("bp_update: target shape mismatch");
  }
  const double inv_b = 1.0 / static_cast<double>(trace.batch_size());

  // dL/dx_L, columnwise.
  Matrix dx = loss == LossKind::Cce ? Matrix(softmax_columns(trace.output()) - targets)
                                    : Matrix(2.0 * (trace.output() - targets));

  UpdateSet u;
  u.layers.resize(static_cast<std::size_t>(L));
  Matrix g; // dL/da_l
  for (int l = L; l >= 1; --l) {
    const Matrix& a = trace.preactivations[static_cast<std::size_t>(l - 1)];
    const bool linear_layer = (l == L) && net.spec.output_layer_linear;
    g = linear_layer ? dx : Matrix(dx.cwiseProduct(leaky_relu_grad(a, net.spec.leaky_slope)));
    u.layers[static_cast<std::size_t>(l - 1)] =
        inv_b * g * trace.decorrelated_inputs[static_cast<std::size_t>(l - 1)].transpose();
    if (l > 1) {
      dx = net.weights[static_cast<std::size_t>(l - 1)].transpose() * g;
      if (net.spec.use_decorrelation) {
        dx = net.decorrelation[static_cast<std::size_t>(l - 1)].transpose() * dx;
      }
    }
  }
  return u;
}

UpdateSet np_update(const ForwardTrace& clean, const ForwardTrace& noisy,
                    const Vector& loss_diff, double sigma2) {
  if (noisy.noise.empty() || noisy.noise.mode != NoiseMode::AllLayers) {
    throw InvalidParameter("np_update: noisy trace must carry an all-layers bundle");
  }
  check_same_input(clean, noisy);
  if (loss_diff.size() != clean.batch_size()) {
    throw InvalidParameter("np_update: loss differential count mismatch");
  }
  const double inv_b = 1.0 / static_cast<double>(clean.batch_size());
  const Vector scale = loss_diff * (inv_b / sigma2);

  UpdateSet u;
  u.layers.reserve(clean.preactivations.size());
  for (std::size_t l = 0; l < clean.preactivations.size(); ++l) {
    u.layers.push_back((noisy.noise.values[l] * scale.asDiagonal()) *
                       clean.decorrelated_inputs[l].transpose());
  }
  return u;
}

UpdateSet inp_update(const Network& net, const Matrix& x0, const Matrix& targets,
                     double sigma2, RngStream stream, LossKind loss,
                     long* forward_passes) {
  const ForwardTrace clean = forward(net, x0);
  if (forward_passes) {
    *forward_passes += x0.cols();
  }
  return inp_update(net, clean, loss_columns(loss, clean.output(), targets), targets, sigma2,
                    stream, loss, forward_passes);
}

UpdateSet inp_update(const Network& net, const ForwardTrace& clean, const Vector& clean_loss,
                     const Matrix& targets, double sigma2, RngStream stream, LossKind loss,
                     long* forward_passes) {
  const int L = net.depth();
  const Eigen::Index b = clean.batch_size();
  const Matrix& x0 = clean.input;

  UpdateSet u;
  u.layers.resize(static_cast<std::size_t>(L));
  for (int l = 1; l <= L; ++l) {
    const NoiseBundle bundle = sample_noise(net, NoiseMode::SingleLayer, sigma2,
                                            stream.derive(static_cast<std::uint64_t>(l)), b, l);
    const ForwardTrace noisy = forward(net, x0, bundle);
    if (forward_passes) {
      *forward_passes += b;
    }
    const Vector noisy_loss = loss_columns(loss, noisy.output(), targets);
    const Matrix& v = bundle.values[static_cast<std::size_t>(l - 1)];

    Vector scale(b);
    for (Eigen::Index c = 0; c < b; ++c) {
      const double sq = v.col(c).squaredNorm();
      // Zero-norm draws are skipped instead of poisoning the batch mean.
      scale[c] = sq < kDegenerateSqNorm ? 0.0 : (noisy_loss[c] - clean_loss[c]) / sq;
    }
    scale *= static_cast<double>(net.width(l)) / static_cast<double>(b);
    u.layers[static_cast<std::size_t>(l - 1)] =
        (v * scale.asDiagonal()) * clean.decorrelated_inputs[static_cast<std::size_t>(l - 1)].transpose();
  }
  return u;
}

ActivityDiff activity_differences(const ForwardTrace& noisy, const ForwardTrace& reference,
                                  LossKind loss, const Matrix& targets) {
  check_same_input(noisy, reference);
  ActivityDiff diff;
  diff.delta_preact.reserve(noisy.preactivations.size());
  for (std::size_t l = 0; l < noisy.preactivations.size(); ++l) {
    diff.delta_preact.push_back(noisy.preactivations[l] - reference.preactivations[l]);
  }
  diff.delta_loss = loss_columns(loss, noisy.output(), targets) -
                    loss_columns(loss, reference.output(), targets);
  return diff;
}

ActivityDiff double_noisy_differences(const ForwardTrace& pass1, const ForwardTrace& pass2,
                                      LossKind loss, const Matrix& targets) {
  if (pass1.noise.empty() || pass2.noise.empty()) {
    throw InvalidParameter("double_noisy_differences: both passes must be noisy");
  }
  bool identical = true;
  for (std::size_t l = 0; l < pass1.noise.values.size() && identical; ++l) {
    identical = pass1.noise.values[l] == pass2.noise.values[l];
  }
  if (identical) {
    throw DegenerateInput("double_noisy_differences: identical noise bundles");
  }
  return activity_differences(pass1, pass2, loss, targets);
}

UpdateSet anp_update_from_diff(const ForwardTrace& reference, const ActivityDiff& diff,
                               double unit_count) {
  const Eigen::Index b = reference.batch_size();
  Vector sq_norm = Vector::Zero(b);
  for (const Matrix& da : diff.delta_preact) {
    sq_norm += da.colwise().squaredNorm().transpose();
  }
  if (b == 1 && sq_norm[0] < kDegenerateSqNorm) {
    throw DegenerateInput("anp_update: zero activity difference");
  }

  Vector scale(b);
  for (Eigen::Index c = 0; c < b; ++c) {
    scale[c] = sq_norm[c] < kDegenerateSqNorm ? 0.0 : diff.delta_loss[c] / sq_norm[c];
  }
  scale *= unit_count / static_cast<double>(b);

  UpdateSet u;
  u.layers.reserve(diff.delta_preact.size());
  for (std::size_t l = 0; l < diff.delta_preact.size(); ++l) {
    u.layers.push_back((diff.delta_preact[l] * scale.asDiagonal()) *
                       reference.decorrelated_inputs[l].transpose());
  }
  return u;
}

UpdateSet anp_update(const ForwardTrace& clean, const ForwardTrace& noisy,
                     LossKind loss, const Matrix& targets, UnitCountMode n_mode) {
  if (!clean.noise.empty()) {
    throw InvalidParameter("anp_update: reference trace must be clean");
  }
  check_same_input(clean, noisy);
  double n = 0.0;
  for (const Matrix& a : clean.preactivations) {
    n += static_cast<double>(a.rows());
  }
  if (n_mode == UnitCountMode::AllUnits) {
    n += static_cast<double>(clean.input.rows());
  }
  return anp_update_from_diff(clean, activity_differences(noisy, clean, loss, targets), n);
}

UpdateSet resample_update(const std::function<UpdateSet(int)>& make, int k_count) {
  if (k_count < 1) {
    throw InvalidParameter("resample_update: K must be >= 1");
  }
  UpdateSet mean = make(0);
  for (int k = 1; k < k_count; ++k) {
    mean += make(k);
  }
  mean *= 1.0 / static_cast<double>(k_count);
  return mean;
}

Matrix decorrelation_step(const Matrix& r, const Matrix& x_star, double alpha) {
  if (r.rows() != r.cols() || r.rows() != x_star.rows()) {
    throw InvalidParameter("decorrelation_step: shape mismatch");
  }
  Matrix c = (x_star * x_star.transpose()) / static_cast<double>(x_star.cols());
  c.diagonal().setZero(); // x*x*^T and diag((x*)^2) cancel exactly there
  return r - alpha * c * r;
}

AdamState AdamState::for_network(const Network& net) {
  AdamState s;
  s.m.reserve(net.weights.size());
  s.v.reserve(net.weights.size());
  for (const Matrix& w : net.weights) {
    s.m.push_back(Matrix::Zero(w.rows(), w.cols()));
    s.v.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  return s;
}

void adam_step(AdamState& state, const UpdateSet& updates, double lr, Network& net) {
  if (state.m.size() != net.weights.size() || updates.layers.size() != net.weights.size()) {
    throw InvalidParameter("adam_step: state/update shape mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Matrix& g = updates.layers[l];
    state.m[l] = state.beta1 * state.m[l] + (1.0 - state.beta1) * g;
    state.v[l] = state.beta2 * state.v[l] + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.m[l] / bc1;
    const Matrix v_hat = state.v[l] / bc2;
    net.weights[l].array() -= lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
  }
}

} // namespace perturbnet
