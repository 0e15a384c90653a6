#include "perturbnet/rng.hpp"

#include <cmath>
#include <numbers>

#include "perturbnet/errors.hpp"

namespace perturbnet {

namespace {

// splitmix64 finalizer; full 64-bit avalanche.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

} // namespace

RngStream::RngStream(std::uint64_t seed) : key_(mix64(mix64(seed) ^ 0x2545f4914f6cdd1dull)) {}

RngStream RngStream::derive(std::uint64_t tag) const {
  return RngStream(mix64(key_ ^ mix64(tag ^ 0xd1b54a32d192ed03ull)), 0);
}

std::uint64_t RngStream::next_u64() {
  return mix64(key_ ^ (counter_++ * 0x9e3779b97f4a7c15ull));
}

double RngStream::uniform() {
  // 53-bit mantissa, shifted half a ulp into (0, 1) so log() is safe.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

Vector RngStream::gaussian(Eigen::Index n, double variance) {
  if (variance <= 0.0) {
    throw InvalidParameter("gaussian: variance must be positive");
  }
  const double sd = std::sqrt(variance);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] = sd * normal();
  }
  return out;
}

Matrix RngStream::gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance) {
  if (variance <= 0.0) {
    throw InvalidParameter("gaussian_matrix: variance must be positive");
  }
  const double sd = std::sqrt(variance);
  Matrix out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      out(r, c) = sd * normal();
    }
  }
  return out;
}

} // namespace perturbnet
