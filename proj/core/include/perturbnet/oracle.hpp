#pragma once

#include <string>
#include <vector>

#include "perturbnet/learners.hpp"
#include "perturbnet/network.hpp"

namespace perturbnet {

struct AlignmentRow {
  std::string algorithm;
  int layer = 0; // 0 means whole-network angle
  long averaging_count = 0;
  long forward_passes = 0; // per sample-update, clean pass included
  double sigma2 = 0.0;
  double angle_degrees = 0.0;
  std::uint64_t seed = 0;
};

struct AlignmentReport {
  std::vector<AlignmentRow> rows;

  /// CSV columns: algorithm,layer,averaging_count,forward_passes,sigma2,angle_degrees,seed
  void write_csv(const std::string& path) const;
};

/// Central differences on every weight entry, decorrelation matrices held
/// fixed. Loss is the batch mean over columns of x0.
UpdateSet fd_gradient(const Network& net, const Matrix& x0, const Matrix& targets,
                      LossKind loss, double step = 1e-5);

/// Directional-derivative gradient recovery: g_l estimated as
/// N_l * mean over S single-layer draws of [deltaL * v_l / |v_l|^2].
Vector directional_gradient_estimate(const Network& net, const Vector& x0, const Vector& target,
                                     int layer, long samples, double sigma2,
                                     LossKind loss, RngStream stream);

struct CovarianceCheck {
  Matrix empirical_cov;
  double relative_error; // |cov - W W^T| / |W W^T|, Frobenius
};

/// Draws whitened inputs, compares empirical cov(Wx) against W W^T.
CovarianceCheck covariance_propagation_check(const Matrix& w, long samples, RngStream stream);

struct AlignmentOptions {
  std::vector<RuleKind> algorithms{RuleKind::Np, RuleKind::Anp, RuleKind::Inp};
  std::vector<long> averaging_counts{1, 10, 100, 1000};
  std::vector<double> sigma2s{1e-6};
  LossKind loss = LossKind::Cce;
  UnitCountMode n_mode = UnitCountMode::NoisyUnits;
};

/// Frozen-network alignment of perturbation updates against BP as a
/// function of averaged noise iterations (and optionally sigma^2).
AlignmentReport alignment_experiment(const Network& net, const Matrix& x0, const Matrix& targets,
                                     const AlignmentOptions& options, RngStream stream,
                                     std::uint64_t seed_label = 0);

/// True when no pre-activation lies within `margin` of a leaky-ReLU kink,
/// i.e. finite differences across the point are trustworthy.
bool smooth_at(const Network& net, const Matrix& x0, double margin = 1e-3);

} // namespace perturbnet
