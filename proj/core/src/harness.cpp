#include "perturbnet/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "perturbnet/errors.hpp"

namespace perturbnet {

namespace {

// Stream-path tags; fixed so every draw is addressable by
// (seed, purpose, epoch, batch, resample, ...).
enum StreamTag : std::uint64_t {
  kTagInit = 1,
  kTagNoise = 2,
  kTagData = 3,
};

int argmax(const Eigen::Ref<const Vector>& v) {
  Eigen::Index idx = 0;
  v.maxCoeff(&idx);
  return static_cast<int>(idx);
}

} // namespace

void ExperimentConfig::validate() const {
  network.validate();
  rule.validate();
  if (epochs < 1) {
    throw InvalidParameter("ExperimentConfig: epochs must be positive");
  }
  if (batch_size < 1) {
    throw InvalidParameter("ExperimentConfig: batch size must be positive");
  }
  if (seeds.empty()) {
    throw InvalidParameter("ExperimentConfig: need at least one seed");
  }
  if (dataset == DatasetKind::Cifar10 && data_dir.empty()) {
    throw InvalidParameter("ExperimentConfig: CIFAR-10 requires a data directory");
  }
}

DatasetPair load_dataset(const ExperimentConfig& config) {
  if (config.dataset == DatasetKind::Cifar10) {
    return load_cifar10(config.data_dir, config.standardize);
  }
  return synthetic_classification(config.synthetic_n, config.network.widths.front(),
                                  config.synthetic_classes, config.synthetic_margin,
                                  RngStream(config.seeds.front()).derive(kTagData));
}

EvalResult evaluate(const Network& net, const Dataset& dataset, LossKind loss) {
  if (dataset.inputs.rows() != net.width(0)) {
    throw InvalidParameter("evaluate: input width mismatch");
  }
  const Eigen::Index n = dataset.size();
  const Eigen::Index chunk = 2000;
  long correct = 0;
  double total_loss = 0.0;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    const Matrix out = forward(net, Matrix(dataset.inputs.middleCols(start, len))).output();
    const Matrix tgt = dataset.targets.middleCols(start, len);
    total_loss += loss_columns(loss, out, tgt).sum();
    for (Eigen::Index c = 0; c < len; ++c) {
      if (argmax(out.col(c)) == argmax(tgt.col(c))) {
        ++correct;
      }
    }
  }
  return {static_cast<double>(correct) / static_cast<double>(n),
          total_loss / static_cast<double>(n)};
}

std::vector<MetricsRecord> train_one(const ExperimentConfig& config, const DatasetPair& data,
                                     std::uint64_t seed, Network* trained) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  NetworkSpec spec = config.network;
  spec.use_decorrelation = config.rule.decorrelate;
  RngStream root(seed);
  Network net = init_network(spec, root.derive(kTagInit));
  AdamState adam = AdamState::for_network(net);
  const int L = net.depth();
  const int K = config.rule.resample;
  const RuleKind kind = config.rule.kind;

  long forward_passes = 0;
  std::vector<MetricsRecord> records;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const BatchPlan plan{config.batch_size, seed, epoch};
    const auto batch_indices = batches(data.train, plan);
    RngStream epoch_stream = root.derive(kTagNoise).derive(static_cast<std::uint64_t>(epoch));

    Matrix x0, targets;
    for (std::size_t bi = 0; bi < batch_indices.size(); ++bi) {
      gather_batch(data.train, batch_indices[bi], x0, targets);
      const Eigen::Index b = x0.cols();
      RngStream batch_stream = epoch_stream.derive(bi);

      UpdateSet update;
      const ForwardTrace* reference = nullptr; // pass whose x* feeds R updates
      ForwardTrace clean, last_ref;
      Vector clean_loss;

      if (!config.rule.double_noisy) {
        clean = forward(net, x0);
        forward_passes += b;
        clean_loss = loss_columns(config.loss, clean.output(), targets);
        if (!clean_loss.allFinite()) {
          throw DivergedRun("diverged: non-finite loss", epoch, static_cast<int>(bi));
        }
        reference = &clean;
      }

      switch (kind) {
      case RuleKind::Bp:
        update = bp_update(net, clean, targets, config.loss);
        break;
      case RuleKind::Inp:
        update = resample_update(
            [&](int k) {
              return inp_update(net, clean, clean_loss, targets, config.rule.sigma2,
                                batch_stream.derive(static_cast<std::uint64_t>(k)), config.loss,
                                &forward_passes);
            },
            K);
        break;
      case RuleKind::Np:
      case RuleKind::Anp:
        update = resample_update(
            [&](int k) {
              RngStream draw = batch_stream.derive(static_cast<std::uint64_t>(k));
              if (config.rule.double_noisy) {
                const NoiseBundle b1 =
                    sample_noise(net, NoiseMode::AllLayers, config.rule.sigma2, draw.derive(1), b);
                const NoiseBundle b2 =
                    sample_noise(net, NoiseMode::AllLayers, config.rule.sigma2, draw.derive(2), b);
                const ForwardTrace p1 = forward(net, x0, b1);
                const ForwardTrace p2 = forward(net, x0, b2);
                forward_passes += 2 * b;
                const ActivityDiff diff = double_noisy_differences(p1, p2, config.loss, targets);
                if (!diff.delta_loss.allFinite()) {
                  throw DivergedRun("diverged: non-finite loss", epoch, static_cast<int>(bi));
                }
                last_ref = p2;
                reference = &last_ref;
                if (kind == RuleKind::Anp) {
                  double n_units = net.noisy_unit_count();
                  if (config.rule.n_mode == UnitCountMode::AllUnits) {
                    n_units = net.total_unit_count();
                  }
                  return anp_update_from_diff(p2, diff, n_units);
                }
                // NP without a clean pass: pass1's injected noise against
                // the second pass taken as reference.
                UpdateSet u;
                const double inv = 1.0 / (static_cast<double>(b) * config.rule.sigma2);
                const Vector scale = diff.delta_loss * inv;
                for (int l = 1; l <= L; ++l) {
                  u.layers.push_back(
                      (p1.noise.values[static_cast<std::size_t>(l - 1)] * scale.asDiagonal()) *
                      p2.decorrelated_inputs[static_cast<std::size_t>(l - 1)].transpose());
                }
                return u;
              }
              const NoiseBundle bundle =
                  sample_noise(net, NoiseMode::AllLayers, config.rule.sigma2, draw, b);
              const ForwardTrace noisy = forward(net, x0, bundle);
              forward_passes += b;
              if (kind == RuleKind::Anp) {
                return anp_update(clean, noisy, config.loss, targets, config.rule.n_mode);
              }
              const Vector dl =
                  loss_columns(config.loss, noisy.output(), targets) - clean_loss;
              return np_update(clean, noisy, dl, config.rule.sigma2);
            },
            K);
        break;
      }

      if (!update.all_finite()) {
        throw DivergedRun("diverged: non-finite update", epoch, static_cast<int>(bi));
      }
      adam_step(adam, update, config.rule.lr, net);
      if (config.rule.decorrelate && reference != nullptr) {
        for (int l = 0; l < L; ++l) {
          net.decorrelation[static_cast<std::size_t>(l)] = decorrelation_step(
              net.decorrelation[static_cast<std::size_t>(l)],
              reference->decorrelated_inputs[static_cast<std::size_t>(l)], config.rule.decor_lr);
        }
      }
    }

    const EvalResult train_eval = evaluate(net, data.train, config.loss);
    const EvalResult test_eval = evaluate(net, data.test, config.loss);
    if (!std::isfinite(train_eval.mean_loss) || !std::isfinite(test_eval.mean_loss)) {
      throw DivergedRun("diverged: non-finite evaluation loss", epoch, -1);
    }
    MetricsRecord rec;
    rec.seed = seed;
    rec.epoch = epoch;
    rec.train_accuracy = train_eval.accuracy;
    rec.test_accuracy = test_eval.accuracy;
    rec.train_loss = train_eval.mean_loss;
    rec.test_loss = test_eval.mean_loss;
    rec.forward_passes = forward_passes;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    records.push_back(rec);
  }

  if (trained != nullptr) {
    *trained = std::move(net);
  }
  return records;
}

std::vector<MetricsRecord> train(const ExperimentConfig& config, const DatasetPair& data) {
  config.validate();
  std::vector<MetricsRecord> all;
  for (std::uint64_t seed : config.seeds) {
    const auto records = train_one(config, data, seed);
    all.insert(all.end(), records.begin(), records.end());
  }
  return all;
}

AlignmentReport sigma_sweep(const ExperimentConfig& config, const std::vector<double>& sigma2s,
                            const DatasetPair& data) {
  config.validate();
  NetworkSpec spec = config.network;
  spec.use_decorrelation = config.rule.decorrelate;

  AlignmentReport report;
  for (std::uint64_t seed : config.seeds) {
    RngStream root(seed);
    const Network net = init_network(spec, root.derive(kTagInit));
    const BatchPlan plan{config.batch_size, seed, 0};
    const auto batch_indices = batches(data.train, plan);
    Matrix x0, targets;
    gather_batch(data.train, batch_indices.front(), x0, targets);

    AlignmentOptions options;
    options.sigma2s = sigma2s;
    options.loss = config.loss;
    options.n_mode = config.rule.n_mode;
    options.averaging_counts = {config.rule.resample};
    const AlignmentReport one =
        alignment_experiment(net, x0, targets, options, root.derive(kTagNoise), seed);
    report.rows.insert(report.rows.end(), one.rows.begin(), one.rows.end());
  }
  return report;
}

void write_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  out << "seed,epoch,train_acc,test_acc,train_loss,test_loss,forward_passes,wall_seconds\n";
  char buf[256];
  for (const MetricsRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%llu,%d,%.6g,%.6g,%.6g,%.6g,%ld,%.6g\n",
                  static_cast<unsigned long long>(r.seed), r.epoch, r.train_accuracy,
                  r.test_accuracy, r.train_loss, r.test_loss, r.forward_passes, r.wall_seconds);
    out << buf;
  }
}

std::string rule_name(const RuleConfig& rule) {
  std::string name;
  switch (rule.kind) {
  case RuleKind::Bp: name = "bp"; break;
  case RuleKind::Np: name = "np"; break;
  case RuleKind::Inp: name = "inp"; break;
  case RuleKind::Anp: name = "anp"; break;
  }
  return rule.decorrelate ? "d" + name : name;
}

void write_meta(const ExperimentConfig& config, const std::string& csv_path) {
  std::ofstream out(csv_path + ".meta");
  if (!out) {
    throw std::runtime_error("cannot open " + csv_path + ".meta for writing");
  }
  out << "algorithm=" << rule_name(config.rule) << '\n';
  out << "layers=";
  for (std::size_t i = 0; i < config.network.widths.size(); ++i) {
    out << (i ? "," : "") << config.network.widths[i];
  }
  out << '\n';
  out << "loss=" << (config.loss == LossKind::Cce ? "cce" : "mse") << '\n';
  out << "dataset=" << (config.dataset == DatasetKind::Cifar10 ? "cifar10" : "synthetic") << '\n';
  out << "epochs=" << config.epochs << '\n';
  out << "batch_size=" << config.batch_size << '\n';
  out << "lr=" << config.rule.lr << '\n';
  out << "decor_lr=" << config.rule.decor_lr << '\n';
  out << "sigma2=" << config.rule.sigma2 << '\n';
  out << "noise_samples=" << config.rule.resample << '\n';
  out << "double_noisy=" << (config.rule.double_noisy ? 1 : 0) << '\n';
  out << "slope=" << config.network.leaky_slope << '\n';
  out << "n_mode="
      << (config.rule.n_mode == UnitCountMode::NoisyUnits ? "noisy-units" : "all-units") << '\n';
  out << "seeds=";
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    out << (i ? "," : "") << config.seeds[i];
  }
  out << '\n';
}

} // namespace perturbnet
