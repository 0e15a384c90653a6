#pragma once

#include <string>
#include <vector>

#include "perturbnet/rng.hpp"

namespace perturbnet {

/// Columns are samples; targets are one-hot columns for classification or
/// plain regression vectors.
struct Dataset {
  Matrix inputs;  // N_0 x n
  Matrix targets; // classes x n
  std::string split; // "train" or "test"

  Eigen::Index size() const { return inputs.cols(); }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

struct BatchPlan {
  Eigen::Index batch_size = 1000;
  std::uint64_t shuffle_seed = 0;
  int epoch = 0;
};

/// Standard CIFAR-10 binary format: five train batch files plus one test
/// batch file of 3073-byte records (1 label byte, 3072 channel-major pixel
/// bytes). Pixels are scaled to [0,1]; when `standardize` is set, features
/// are standardized with train-split statistics.
DatasetPair load_cifar10(const std::string& dir, bool standardize = true);

/// Gaussian clusters with class means `margin` apart in random directions;
/// `n` train samples plus n/5 test samples, deterministic in the stream.
DatasetPair synthetic_classification(long n, int dim, int classes, double margin,
                                     RngStream stream);

/// Per-epoch shuffled mini-batch index lists; the concatenation covers every
/// index exactly once and the last short batch is kept.
std::vector<std::vector<Eigen::Index>> batches(const Dataset& dataset, const BatchPlan& plan);

/// Gather the given columns of a dataset into dense batch matrices.
void gather_batch(const Dataset& dataset, const std::vector<Eigen::Index>& indices,
                  Matrix& inputs, Matrix& targets);

} // namespace perturbnet
