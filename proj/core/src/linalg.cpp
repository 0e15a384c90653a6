#include "perturbnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "perturbnet/errors.hpp"

namespace perturbnet {

namespace {

double angle_from_sums(double dot, double na2, double nb2) {
  if (na2 == 0.0 || nb2 == 0.0) {
    throw DegenerateInput("angle_degrees: zero-norm argument");
  }
  const double c = std::clamp(dot / std::sqrt(na2 * nb2), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

} // namespace

double angle_degrees(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw InvalidParameter("angle_degrees: size mismatch");
  }
  return angle_from_sums(a.dot(b), a.squaredNorm(), b.squaredNorm());
}

double angle_degrees(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidParameter("angle_degrees: shape mismatch");
  }
  return angle_from_sums(a.cwiseProduct(b).sum(), a.squaredNorm(), b.squaredNorm());
}

double angle_degrees(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) {
    throw InvalidParameter("angle_degrees: layer count mismatch");
  }
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].rows() != b[l].rows() || a[l].cols() != b[l].cols()) {
      throw InvalidParameter("angle_degrees: shape mismatch at layer");
    }
    dot += a[l].cwiseProduct(b[l]).sum();
    na2 += a[l].squaredNorm();
    nb2 += b[l].squaredNorm();
  }
  return angle_from_sums(dot, na2, nb2);
}

} // namespace perturbnet
