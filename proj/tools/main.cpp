#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "perturbnet/errors.hpp"
#include "perturbnet/harness.hpp"
#include "perturbnet/oracle.hpp"

namespace {

using namespace perturbnet;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitIo = 3;

struct CliOptions {
  std::string algo = "np";
  bool decorrelate = false;
  std::string layers = "3072,10";
  int epochs = 10;
  long batch_size = 1000;
  double lr = 1e-3;
  double decor_lr = 1e-3;
  std::vector<double> sigma2{};
  int noise_samples = 1;
  bool double_noisy = false;
  std::string loss = "cce";
  std::string dataset = "synthetic";
  std::string data_dir;
  std::vector<std::uint64_t> seeds;
  std::string out = "metrics.csv";
  double slope = 0.01;
  std::string n_mode = "noisy-units";
  std::vector<long> counts{1, 10, 100, 1000};
  long synthetic_n = 10000;
  double synthetic_margin = 3.0;
};

std::vector<int> parse_layers(const std::string& spec) {
  std::vector<int> widths;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t next = spec.find(',', pos);
    if (next == std::string::npos) {
      next = spec.size();
    }
    widths.push_back(std::stoi(spec.substr(pos, next - pos)));
    pos = next + 1;
  }
  return widths;
}

ExperimentConfig build_config(const CliOptions& opt) {
  ExperimentConfig config;
  config.network.widths = parse_layers(opt.layers);
  config.network.leaky_slope = opt.slope;

  if (opt.algo == "bp") {
    config.rule.kind = RuleKind::Bp;
  } else if (opt.algo == "np") {
    config.rule.kind = RuleKind::Np;
  } else if (opt.algo == "inp") {
    config.rule.kind = RuleKind::Inp;
  } else if (opt.algo == "anp") {
    config.rule.kind = RuleKind::Anp;
  } else {
    throw InvalidParameter("unknown --algo: " + opt.algo);
  }
  config.rule.decorrelate = opt.decorrelate;
  config.rule.sigma2 = opt.sigma2.empty() ? 1e-6 : opt.sigma2.front();
  config.rule.resample = opt.noise_samples;
  config.rule.double_noisy = opt.double_noisy;
  config.rule.lr = opt.lr;
  config.rule.decor_lr = opt.decor_lr;
  if (opt.n_mode == "noisy-units") {
    config.rule.n_mode = UnitCountMode::NoisyUnits;
  } else if (opt.n_mode == "all-units") {
    config.rule.n_mode = UnitCountMode::AllUnits;
  } else {
    throw InvalidParameter("unknown --n-mode: " + opt.n_mode);
  }

  config.epochs = opt.epochs;
  config.batch_size = opt.batch_size;
  config.seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{1} : opt.seeds;

  if (opt.loss == "cce") {
    config.loss = LossKind::Cce;
    config.network.output_layer_linear = true;
  } else if (opt.loss == "mse") {
    config.loss = LossKind::Mse;
    config.network.output_layer_linear = false;
  } else {
    throw InvalidParameter("unknown --loss: " + opt.loss);
  }

  if (opt.dataset == "cifar10") {
    config.dataset = DatasetKind::Cifar10;
  } else if (opt.dataset == "synthetic") {
    config.dataset = DatasetKind::Synthetic;
  } else {
    throw InvalidParameter("unknown --dataset: " + opt.dataset);
  }
  config.data_dir = opt.data_dir;
  if (config.data_dir.empty()) {
    if (const char* env = std::getenv("PERTURBNET_DATA")) {
      config.data_dir = env;
    }
  }
  config.out_path = opt.out;
  config.synthetic_n = opt.synthetic_n;
  config.synthetic_classes = config.network.widths.back();
  config.synthetic_margin = opt.synthetic_margin;
  return config;
}

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--layers", opt.layers, "Comma-separated layer widths, input first");
  cmd->add_option("--batch-size", opt.batch_size, "Mini-batch size");
  cmd->add_option("--sigma2", opt.sigma2, "Perturbation variance (repeatable for sweep-sigma)");
  cmd->add_option("--loss", opt.loss)->check(CLI::IsMember({"cce", "mse"}));
  cmd->add_option("--dataset", opt.dataset)->check(CLI::IsMember({"cifar10", "synthetic"}));
  cmd->add_option("--data-dir", opt.data_dir, "CIFAR-10 directory (or env PERTURBNET_DATA)");
  cmd->add_option("--seed", opt.seeds, "Random seed, repeatable");
  cmd->add_option("--out", opt.out, "Output CSV path");
  cmd->add_option("--slope", opt.slope, "Leaky-ReLU negative slope");
  cmd->add_option("--n-mode", opt.n_mode)->check(CLI::IsMember({"noisy-units", "all-units"}));
  cmd->add_option("--synthetic-n", opt.synthetic_n, "Synthetic train-set size");
  cmd->add_option("--synthetic-margin", opt.synthetic_margin, "Synthetic class-mean separation");
}

int run_check();

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Node-perturbation training toolkit"};
  app.require_subcommand(1);
  CliOptions opt;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a network with one learning rule");
  train_cmd->add_option("--algo", opt.algo)->check(CLI::IsMember({"bp", "np", "inp", "anp"}));
  train_cmd->add_flag("--decorrelate", opt.decorrelate, "Train decorrelation matrices");
  train_cmd->add_option("--epochs", opt.epochs);
  train_cmd->add_option("--lr", opt.lr, "Weight learning rate");
  train_cmd->add_option("--decor-lr", opt.decor_lr, "Decorrelation learning rate");
  train_cmd->add_option("--noise-samples", opt.noise_samples, "Noise resamples K per update");
  train_cmd->add_flag("--double-noisy", opt.double_noisy, "Two noisy passes, no clean pass");
  add_common_flags(train_cmd, opt);

  CLI::App* align_cmd = app.add_subcommand("align", "Frozen-network alignment angles vs BP");
  align_cmd->add_option("--counts", opt.counts, "Averaging counts to report");
  add_common_flags(align_cmd, opt);

  CLI::App* sweep_cmd = app.add_subcommand("sweep-sigma", "Alignment angles across sigma^2 values");
  sweep_cmd->add_option("--noise-samples", opt.noise_samples, "Averaged noise draws per angle");
  add_common_flags(sweep_cmd, opt);

  app.add_subcommand("check", "Run the gradient-oracle verification suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("check")) {
      return run_check();
    }

    const ExperimentConfig config = build_config(opt);
    if (app.got_subcommand("train")) {
      const DatasetPair data = load_dataset(config);
      const auto records = train(config, data);
      write_metrics(records, config.out_path);
      write_meta(config, config.out_path);
      std::printf("wrote %zu records to %s\n", records.size(), config.out_path.c_str());
      return kExitOk;
    }

    if (app.got_subcommand("align")) {
      const DatasetPair data = load_dataset(config);
      AlignmentReport report;
      for (std::uint64_t seed : config.seeds) {
        RngStream root(seed);
        NetworkSpec spec = config.network;
        spec.use_decorrelation = config.rule.decorrelate;
        const Network net = init_network(spec, root.derive(1));
        Matrix x0, targets;
        gather_batch(data.train, batches(data.train, {config.batch_size, seed, 0}).front(), x0,
                     targets);
        AlignmentOptions options;
        options.averaging_counts = opt.counts;
        options.sigma2s = {config.rule.sigma2};
        options.loss = config.loss;
        options.n_mode = config.rule.n_mode;
        const AlignmentReport one =
            alignment_experiment(net, x0, targets, options, root.derive(2), seed);
        report.rows.insert(report.rows.end(), one.rows.begin(), one.rows.end());
      }
      report.write_csv(config.out_path);
      std::printf("wrote %zu rows to %s\n", report.rows.size(), config.out_path.c_str());
      return kExitOk;
    }

    // sweep-sigma
    const DatasetPair data = load_dataset(config);
    const std::vector<double> sigmas =
        opt.sigma2.empty() ? std::vector<double>{1e-6, 1e-5, 1e-4} : opt.sigma2;
    const AlignmentReport report = sigma_sweep(config, sigmas, data);
    report.write_csv(config.out_path);
    std::printf("wrote %zu rows to %s\n", report.rows.size(), config.out_path.c_str());
    return kExitOk;
  } catch (const DivergedRun& e) {
    std::fprintf(stderr, "error: %s (epoch %d, batch %d)\n", e.what(), e.epoch, e.batch);
    return kExitDiverged;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const InvalidParameter& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
}

namespace {

int run_check() {
  int failures = 0;
  const auto report = [&](const char* name, bool ok, double value, const char* detail) {
    std::printf("[%s] %s: %.3g %s\n", ok ? "PASS" : "FAIL", name, value, detail);
    if (!ok) {
      ++failures;
    }
  };

  RngStream root(42);

  // BP against central differences on a smooth configuration.
  {
    NetworkSpec spec{{24, 16, 12, 6}, 0.01, false, true};
    const Network net = init_network(spec, root.derive(1));
    RngStream in = root.derive(2);
    Matrix x0 = in.gaussian_matrix(24, 4, 1.0);
    Matrix targets = Matrix::Zero(6, 4);
    for (int c = 0; c < 4; ++c) {
      targets(c % 6, c) = 1.0;
    }
    while (!smooth_at(net, x0)) {
      x0 = in.gaussian_matrix(24, 4, 1.0);
    }
    const UpdateSet bp = bp_update(net, forward(net, x0), targets, LossKind::Cce);
    const UpdateSet fd = fd_gradient(net, x0, targets, LossKind::Cce, 1e-5);
    const double angle = angle_degrees(bp, fd);
    report("bp-vs-central-differences", angle < 0.01, angle, "degrees (< 0.01)");
  }

  // Covariance propagation: cov(Wx) approaches W W^T for whitened x.
  {
    const Matrix w = root.derive(3).gaussian_matrix(8, 8, 1.0);
    const CovarianceCheck check = covariance_propagation_check(w, 100000, root.derive(4));
    report("covariance-propagation", check.relative_error < 0.05, check.relative_error,
           "relative error (< 0.05)");
  }

  // Gradient recovery by averaging directional derivatives.
  {
    NetworkSpec spec{{32, 16, 10}, 0.01, false, true};
    const Network net = init_network(spec, root.derive(5));
    const Vector x0 = root.derive(6).gaussian(32, 1.0);
    Vector target = Vector::Zero(10);
    target[3] = 1.0;
    const ForwardTrace clean = forward(net, x0);
    const UpdateSet bp = bp_update(net, clean, Matrix(target), LossKind::Cce);
    double angle_small = 0.0, angle_large = 0.0;
    for (int layer = 1; layer <= 2; ++layer) {
      // True g_l recovered from dW_l = g_l x*^T (single sample).
      const Vector x_star = clean.decorrelated_inputs[static_cast<std::size_t>(layer - 1)].col(0);
      const Vector g_true = bp.layers[static_cast<std::size_t>(layer - 1)] * x_star / x_star.squaredNorm();
      const Vector est_small = directional_gradient_estimate(net, x0, target, layer, 100, 1e-6,
                                                             LossKind::Cce, root.derive(7 + layer));
      const Vector est_large = directional_gradient_estimate(net, x0, target, layer, 2000, 1e-6,
                                                             LossKind::Cce, root.derive(7 + layer));
      angle_small += angle_degrees(est_small, g_true);
      angle_large += angle_degrees(est_large, g_true);
    }
    report("directional-derivative-recovery", angle_large < angle_small,
           angle_large - angle_small, "angle change with 20x samples (< 0)");
  }

  // Mean ANP update stays within 90 degrees of BP.
  {
    NetworkSpec spec{{16, 12, 6}, 0.01, false, true};
    const Network net = init_network(spec, root.derive(10));
    const Matrix x0 = root.derive(11).gaussian_matrix(16, 1, 1.0);
    Matrix target = Matrix::Zero(6, 1);
    target(2, 0) = 1.0;
    const ForwardTrace clean = forward(net, x0);
    const UpdateSet bp = bp_update(net, clean, target, LossKind::Cce);
    UpdateSet mean = UpdateSet::zeros_like(net);
    RngStream noise = root.derive(12);
    const int draws = 2000;
    for (int i = 0; i < draws; ++i) {
      const NoiseBundle bundle = sample_noise(net, NoiseMode::AllLayers, 1e-6,
                                              noise.derive(static_cast<std::uint64_t>(i)), 1);
      mean += anp_update(clean, forward(net, x0, bundle), LossKind::Cce, target);
    }
    mean *= 1.0 / draws;
    const double angle = angle_degrees(mean, bp);
    report("anp-positive-alignment", angle < 90.0, angle, "degrees (< 90)");
  }

  std::printf("%s\n", failures == 0 ? "all checks passed" : "some checks FAILED");
  return failures == 0 ? kExitOk : kExitConfig;
}

} // namespace
