#include "perturbnet/oracle.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "perturbnet/errors.hpp"

namespace perturbnet {

void AlignmentReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  out << "algorithm,layer,averaging_count,forward_passes,sigma2,angle_degrees,seed\n";
  char buf[64];
  for (const AlignmentRow& r : rows) {
    out << r.algorithm << ',' << r.layer << ',' << r.averaging_count << ','
        << r.forward_passes << ',';
    std::snprintf(buf, sizeof buf, "%.6g", r.sigma2);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6g", r.angle_degrees);
    out << buf << ',' << r.seed << '\n';
  }
}

UpdateSet fd_gradient(const Network& net, const Matrix& x0, const Matrix& targets,
                      LossKind loss, double step) {
  if (step <= 0.0) {
    throw InvalidParameter("fd_gradient: step must be positive");
  }
  Network probe = net;
  const double inv_b = 1.0 / static_cast<double>(x0.cols());
  const auto mean_loss = [&]() {
    return loss_columns(loss, forward(probe, x0).output(), targets).sum() * inv_b;
  };

  UpdateSet grad = UpdateSet::zeros_like(net);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Matrix& w = probe.weights[l];
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        const double saved = w(r, c);
        w(r, c) = saved + step;
        const double up = mean_loss();
        w(r, c) = saved - step;
        const double down = mean_loss();
        w(r, c) = saved;
        grad.layers[l](r, c) = (up - down) / (2.0 * step);
      }
    }
  }
  return grad;
}

Vector directional_gradient_estimate(const Network& net, const Vector& x0, const Vector& target,
                                     int layer, long samples, double sigma2,
                                     LossKind loss, RngStream stream) {
  if (samples < 1) {
    throw InvalidParameter("directional_gradient_estimate: samples must be >= 1");
  }
  const ForwardTrace clean = forward(net, x0);
  const double clean_loss = loss_value(loss, clean.output().col(0), target);

  Vector estimate = Vector::Zero(net.width(layer));
  const Matrix targets(target);
  for (long s = 0; s < samples; ++s) {
    const NoiseBundle bundle =
        sample_noise(net, NoiseMode::SingleLayer, sigma2,
                     stream.derive(static_cast<std::uint64_t>(s)), 1, layer);
    const ForwardTrace noisy = forward(net, x0, bundle);
    const double dl = loss_value(loss, noisy.output().col(0), target) - clean_loss;
    const Vector v = bundle.values[static_cast<std::size_t>(layer - 1)].col(0);
    const double sq = v.squaredNorm();
    if (sq > 0.0) {
      estimate += dl / sq * v;
    }
  }
  estimate *= static_cast<double>(net.width(layer)) / static_cast<double>(samples);
  return estimate;
}

CovarianceCheck covariance_propagation_check(const Matrix& w, long samples, RngStream stream) {
  if (samples < 2) {
    throw InvalidParameter("covariance_propagation_check: need at least 2 samples");
  }
  const Matrix x = stream.gaussian_matrix(w.cols(), samples, 1.0);
  const Matrix y = w * x;
  CovarianceCheck check;
  check.empirical_cov = (y * y.transpose()) / static_cast<double>(samples);
  const Matrix expected = w * w.transpose();
  check.relative_error = (check.empirical_cov - expected).norm() / expected.norm();
  return check;
}

AlignmentReport alignment_experiment(const Network& net, const Matrix& x0, const Matrix& targets,
                                     const AlignmentOptions& options, RngStream stream,
                                     std::uint64_t seed_label) {
  const int L = net.depth();
  const ForwardTrace clean = forward(net, x0);
  const UpdateSet bp = bp_update(net, clean, targets, options.loss);
  const Vector clean_loss = loss_columns(options.loss, clean.output(), targets);

  long max_count = 1;
  for (long c : options.averaging_counts) {
    max_count = std::max(max_count, c);
  }

  AlignmentReport report;
  for (std::size_t si = 0; si < options.sigma2s.size(); ++si) {
    const double sigma2 = options.sigma2s[si];
    RngStream sigma_stream = stream.derive(si);
    for (const RuleKind kind : options.algorithms) {
      if (kind == RuleKind::Bp) {
        continue;
      }
      const char* name = kind == RuleKind::Np ? "np" : (kind == RuleKind::Anp ? "anp" : "inp");
      RngStream algo_stream = sigma_stream.derive(static_cast<std::uint64_t>(kind));
      UpdateSet mean = UpdateSet::zeros_like(net);
      for (long it = 1; it <= max_count; ++it) {
        RngStream draw = algo_stream.derive(static_cast<std::uint64_t>(it));
        UpdateSet sample;
        switch (kind) {
        case RuleKind::Np: {
          const NoiseBundle bundle =
              sample_noise(net, NoiseMode::AllLayers, sigma2, draw, x0.cols());
          const ForwardTrace noisy = forward(net, x0, bundle);
          const Vector dl = loss_columns(options.loss, noisy.output(), targets) - clean_loss;
          sample = np_update(clean, noisy, dl, sigma2);
          break;
        }
        case RuleKind::Anp: {
          const NoiseBundle bundle =
              sample_noise(net, NoiseMode::AllLayers, sigma2, draw, x0.cols());
          const ForwardTrace noisy = forward(net, x0, bundle);
          sample = anp_update(clean, noisy, options.loss, targets, options.n_mode);
          break;
        }
        case RuleKind::Inp:
          sample = inp_update(net, x0, targets, sigma2, draw, options.loss);
          break;
        default:
          break;
        }
        mean += sample;

        if (std::find(options.averaging_counts.begin(), options.averaging_counts.end(), it) !=
            options.averaging_counts.end()) {
          UpdateSet averaged = mean;
          averaged *= 1.0 / static_cast<double>(it);
          const long passes = kind == RuleKind::Inp ? 1 + it * L : 1 + it;
          AlignmentRow row;
          row.algorithm = name;
          row.averaging_count = it;
          row.forward_passes = passes;
          row.sigma2 = sigma2;
          row.seed = seed_label;
          row.layer = 0;
          row.angle_degrees = angle_degrees(averaged, bp);
          report.rows.push_back(row);
          for (int l = 1; l <= L; ++l) {
            row.layer = l;
            row.angle_degrees = layer_angle_degrees(averaged, bp, l);
            report.rows.push_back(row);
          }
        }
      }
    }
  }
  return report;
}

bool smooth_at(const Network& net, const Matrix& x0, double margin) {
  const ForwardTrace trace = forward(net, x0);
  const int L = net.depth();
  for (int l = 1; l <= L; ++l) {
    if (l == L && net.spec.output_layer_linear) {
      continue; // no kink on a linear output layer
    }
    if (trace.preactivations[static_cast<std::size_t>(l - 1)].cwiseAbs().minCoeff() < margin) {
      return false;
    }
  }
  return true;
}

} // namespace perturbnet
