#include "perturbnet/data.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "perturbnet/errors.hpp"

namespace perturbnet {

namespace {

constexpr Eigen::Index kCifarPixels = 3072;
constexpr Eigen::Index kCifarRecord = kCifarPixels + 1;
constexpr int kCifarClasses = 10;

void append_cifar_file(const std::string& path, std::vector<std::uint8_t>& labels,
                       std::vector<std::uint8_t>& pixels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path);
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % static_cast<std::size_t>(kCifarRecord) != 0) {
    throw FormatError(path + ": length is not a multiple of 3073 bytes");
  }
  const std::size_t records = bytes.size() / static_cast<std::size_t>(kCifarRecord);
  for (std::size_t r = 0; r < records; ++r) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * kCifarRecord;
    if (rec[0] >= kCifarClasses) {
      throw FormatError(path + ": label byte out of range");
    }
    labels.push_back(rec[0]);
    pixels.insert(pixels.end(), rec + 1, rec + kCifarRecord);
  }
}

Dataset to_dataset(const std::vector<std::uint8_t>& labels, const std::vector<std::uint8_t>& pixels,
                   const std::string& split) {
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  Dataset d;
  d.split = split;
  d.inputs.resize(kCifarPixels, n);
  d.targets = Matrix::Zero(kCifarClasses, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index p = 0; p < kCifarPixels; ++p) {
      d.inputs(p, s) = static_cast<double>(pixels[static_cast<std::size_t>(s * kCifarPixels + p)]) / 255.0;
    }
    d.targets(labels[static_cast<std::size_t>(s)], s) = 1.0;
  }
  return d;
}

} // namespace

DatasetPair load_cifar10(const std::string& dir, bool standardize) {
  std::vector<std::uint8_t> train_labels, train_pixels;
  for (int i = 1; i <= 5; ++i) {
    append_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin", train_labels, train_pixels);
  }
  std::vector<std::uint8_t> test_labels, test_pixels;
  append_cifar_file(dir + "/test_batch.bin", test_labels, test_pixels);

  DatasetPair pair;
  pair.train = to_dataset(train_labels, train_pixels, "train");
  pair.test = to_dataset(test_labels, test_pixels, "test");

  if (standardize) {
    // Train-split statistics only; reused verbatim on test.
    const Vector mean = pair.train.inputs.rowwise().mean();
    Vector sd(mean.size());
    const double inv_n = 1.0 / static_cast<double>(pair.train.inputs.cols());
    for (Eigen::Index p = 0; p < mean.size(); ++p) {
      const double var = (pair.train.inputs.row(p).array() - mean[p]).square().sum() * inv_n;
      sd[p] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    for (Dataset* d : {&pair.train, &pair.test}) {
      d->inputs = (d->inputs.colwise() - mean).array().colwise() / sd.array();
    }
  }
  return pair;
}

namespace {

Dataset make_clusters(const Matrix& means, long n, int dim, int classes, RngStream stream,
                      const std::string& split) {
  Dataset d;
  d.split = split;
  d.inputs.resize(dim, n);
  d.targets = Matrix::Zero(classes, n);
  for (long s = 0; s < n; ++s) {
    const int c = static_cast<int>(s % classes);
    RngStream sample_stream = stream.derive(static_cast<std::uint64_t>(s));
    d.inputs.col(s) = means.col(c) + sample_stream.gaussian(dim, 1.0);
    d.targets(c, s) = 1.0;
  }
  return d;
}

} // namespace

DatasetPair synthetic_classification(long n, int dim, int classes, double margin,
                                     RngStream stream) {
  if (classes < 2) {
    throw InvalidParameter("synthetic_classification: need at least 2 classes");
  }
  if (n < 1 || dim < 1) {
    throw InvalidParameter("synthetic_classification: n and dim must be positive");
  }
  // Random unit directions are near-orthogonal in high dimension, so scaling
  // by margin/sqrt(2) puts class means ~margin apart.
  RngStream mean_stream = stream.derive(0);
  Matrix means(dim, classes);
  for (int c = 0; c < classes; ++c) {
    Vector u = mean_stream.gaussian(dim, 1.0);
    const double norm = u.norm();
    means.col(c) = margin / std::sqrt(2.0) * (norm > 0.0 ? Vector(u / norm) : u);
  }
  DatasetPair pair;
  pair.train = make_clusters(means, n, dim, classes, stream.derive(1), "train");
  pair.test = make_clusters(means, std::max<long>(classes, n / 5), dim, classes,
                            stream.derive(2), "test");
  return pair;
}

std::vector<std::vector<Eigen::Index>> batches(const Dataset& dataset, const BatchPlan& plan) {
  if (plan.batch_size < 1) {
    throw InvalidParameter("batches: batch size must be >= 1");
  }
  const Eigen::Index n = dataset.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  RngStream shuffle = RngStream(plan.shuffle_seed)
                          .derive(0xba7c4ull)
                          .derive(static_cast<std::uint64_t>(plan.epoch));
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const Eigen::Index j = static_cast<Eigen::Index>(shuffle.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  std::vector<std::vector<Eigen::Index>> out;
  for (Eigen::Index start = 0; start < n; start += plan.batch_size) {
    const Eigen::Index end = std::min(n, start + plan.batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

void gather_batch(const Dataset& dataset, const std::vector<Eigen::Index>& indices,
                  Matrix& inputs, Matrix& targets) {
  inputs.resize(dataset.inputs.rows(), static_cast<Eigen::Index>(indices.size()));
  targets.resize(dataset.targets.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    inputs.col(static_cast<Eigen::Index>(i)) = dataset.inputs.col(indices[i]);
    targets.col(static_cast<Eigen::Index>(i)) = dataset.targets.col(indices[i]);
  }
}

} // namespace perturbnet
