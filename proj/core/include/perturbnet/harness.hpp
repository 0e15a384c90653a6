#pragma once

#include <string>
#include <vector>

#include "perturbnet/data.hpp"
#include "perturbnet/learners.hpp"
#include "perturbnet/network.hpp"
#include "perturbnet/oracle.hpp"

namespace perturbnet {

enum class DatasetKind { Cifar10, Synthetic };

struct ExperimentConfig {
  NetworkSpec network;
  RuleConfig rule;
  int epochs = 10;
  Eigen::Index batch_size = 1000;
  std::vector<std::uint64_t> seeds{1};
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string data_dir; // CIFAR-10 directory
  bool standardize = true;
  LossKind loss = LossKind::Cce;
  std::string out_path;

  long synthetic_n = 10000;
  int synthetic_classes = 10;
  double synthetic_margin = 3.0;

  void validate() const;
};

struct MetricsRecord {
  std::uint64_t seed = 0;
  int epoch = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  long forward_passes = 0; // cumulative training passes, sample-wise
  double wall_seconds = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Load the dataset named by the config (CIFAR-10 binary or synthetic).
DatasetPair load_dataset(const ExperimentConfig& config);

/// Full training loop: per batch one clean pass, K noisy passes (2K in
/// double-noisy mode), batch-mean update, Adam step and decorrelation step,
/// with per-epoch evaluation. Deterministic in the seed. Throws DivergedRun
/// on a non-finite loss.
std::vector<MetricsRecord> train(const ExperimentConfig& config, const DatasetPair& data);

/// Single-seed variant returning the trained network as well.
std::vector<MetricsRecord> train_one(const ExperimentConfig& config, const DatasetPair& data,
                                     std::uint64_t seed, Network* trained = nullptr);

/// Clean decorrelated passes; accuracy is argmax agreement.
EvalResult evaluate(const Network& net, const Dataset& dataset, LossKind loss);

/// Frozen-network alignment angles for NP/INP/ANP across a sigma^2 list.
AlignmentReport sigma_sweep(const ExperimentConfig& config, const std::vector<double>& sigma2s,
                            const DatasetPair& data);

/// CSV header: seed,epoch,train_acc,test_acc,train_loss,test_loss,forward_passes,wall_seconds
void write_metrics(const std::vector<MetricsRecord>& records, const std::string& path);

/// Sibling `<path>.meta` provenance file with key=value lines.
void write_meta(const ExperimentConfig& config, const std::string& csv_path);

std::string rule_name(const RuleConfig& rule);

} // namespace perturbnet
