#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace perturbnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Counter-based, splittable random stream.
///
/// A stream is identified by a 64-bit key derived by hashing the root seed
/// with every tag on its derivation path, so a stream addressed by
/// (seed, purpose, epoch, batch, layer) produces the same draws no matter
/// where or when it is constructed. Draw i is a pure function of (key, i),
/// which keeps parallel batch evaluation bit-identical to serial.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed);

  /// Child stream keyed by (this stream, tag). Distinct tags give
  /// statistically independent streams.
  RngStream derive(std::uint64_t tag) const;

  std::uint64_t next_u64();

  /// Uniform draw in the open interval (0, 1).
  double uniform();

  /// Uniform draw in [lo, hi].
  double uniform(double lo, double hi);

  /// Standard normal draw (Box-Muller).
  double normal();

  /// n i.i.d. draws from N(0, variance). Throws InvalidParameter for
  /// variance <= 0.
  Vector gaussian(Eigen::Index n, double variance);

  /// rows x cols matrix of i.i.d. N(0, variance) draws.
  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance);

  std::uint64_t key() const { return key_; }

private:
  RngStream(std::uint64_t key, int /*tag_ctor*/) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

} // namespace perturbnet
