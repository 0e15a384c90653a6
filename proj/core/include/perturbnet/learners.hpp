#pragma once

#include <functional>
#include <vector>

#include "perturbnet/network.hpp"

namespace perturbnet {

enum class RuleKind { Bp, Np, Inp, Anp };

/// Which units the ANP normalization constant N counts. Including the input
/// layer or not only rescales updates, so both conventions are supported.
enum class UnitCountMode { NoisyUnits, AllUnits };

struct RuleConfig {
  RuleKind kind = RuleKind::Np;
  bool decorrelate = false;
  double sigma2 = 1e-6;
  int resample = 1; // K noise draws averaged per update
  bool double_noisy = false;
  double lr = 1e-3;        // eta
  double decor_lr = 1e-3;  // alpha
  UnitCountMode n_mode = UnitCountMode::NoisyUnits;

  void validate() const;
};

/// Per-layer weight-update matrices, the common currency between rules,
/// Adam and the oracle.
struct UpdateSet {
  std::vector<Matrix> layers; // layers[l-1] is dW_l

  static UpdateSet zeros_like(const Network& net);

  UpdateSet& operator+=(const UpdateSet& other);
  UpdateSet& operator*=(double scale);
  bool all_finite() const;
};

double angle_degrees(const UpdateSet& a, const UpdateSet& b);
double layer_angle_degrees(const UpdateSet& a, const UpdateSet& b, int layer);

/// Clean/noisy activity differences, plus the per-sample loss differential.
struct ActivityDiff {
  std::vector<Matrix> delta_preact; // delta a_l = a~_l - a_l, l = 1..L
  Vector delta_loss;                // one entry per batch column
};

/// Hand-derived backpropagation through leaky ReLU and the loss; batch mean.
/// Decorrelation matrices are constants in the chain rule.
UpdateSet bp_update(const Network& net, const ForwardTrace& trace, const Matrix& targets,
                    LossKind loss);

/// dW_l = deltaL * (eps_l / sigma^2) * x*_{l-1}^T, with x* from the clean
/// pass; batch mean over columns.
UpdateSet np_update(const ForwardTrace& clean, const ForwardTrace& noisy,
                    const Vector& loss_diff, double sigma2);

/// One clean pass plus L single-layer-perturbed passes; layer l's update is
/// N_l * deltaL_l * (v_l / |v_l|^2) * x*_{l-1}^T, batch mean. The optional
/// counter accrues the forward passes consumed (L + 1 per call).
UpdateSet inp_update(const Network& net, const Matrix& x0, const Matrix& targets,
                     double sigma2, RngStream stream, LossKind loss,
                     long* forward_passes = nullptr);

/// INP against an already-computed clean trace (L noisy passes only).
UpdateSet inp_update(const Network& net, const ForwardTrace& clean, const Vector& clean_loss,
                     const Matrix& targets, double sigma2, RngStream stream, LossKind loss,
                     long* forward_passes = nullptr);

ActivityDiff activity_differences(const ForwardTrace& noisy, const ForwardTrace& reference,
                                  LossKind loss, const Matrix& targets);

/// Both passes noisy with independent bundles; pass2 is the reference whose
/// x* feeds the update. Throws DegenerateInput when the bundles coincide.
ActivityDiff double_noisy_differences(const ForwardTrace& pass1, const ForwardTrace& pass2,
                                      LossKind loss, const Matrix& targets);

/// dW_l = N * deltaL * (delta a_l / |delta a|^2) * x*_{l-1}^T. Reads only
/// activity differences, never the noise bundle.
UpdateSet anp_update(const ForwardTrace& clean, const ForwardTrace& noisy,
                     LossKind loss, const Matrix& targets,
                     UnitCountMode n_mode = UnitCountMode::NoisyUnits);
UpdateSet anp_update_from_diff(const ForwardTrace& reference, const ActivityDiff& diff,
                               double unit_count);

/// Arithmetic mean of K updates produced by `make(k)` with independent noise.
UpdateSet resample_update(const std::function<UpdateSet(int)>& make, int k_count);

/// R <- R - alpha (x* x*^T - diag((x*)^2)) R, averaged over batch columns.
/// The update term has exactly zero diagonal.
Matrix decorrelation_step(const Matrix& r, const Matrix& x_star, double alpha);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;

  static AdamState for_network(const Network& net);
};

/// One bias-corrected Adam step: W <- W - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(AdamState& state, const UpdateSet& updates, double lr, Network& net);

} // namespace perturbnet
