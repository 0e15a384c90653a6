#pragma once

#include <vector>

#include <Eigen/Core>

#include "perturbnet/rng.hpp"

namespace perturbnet {

/// Angle in degrees between two same-shaped vectors, in [0, 180].
/// Throws DegenerateInput when either argument has zero norm.
double angle_degrees(const Vector& a, const Vector& b);

/// Angle between two matrices, flattened entrywise.
double angle_degrees(const Matrix& a, const Matrix& b);

/// Angle between the concatenation of all entries of two matrix lists
/// (e.g. per-layer weight updates).
double angle_degrees(const std::vector<Matrix>& a, const std::vector<Matrix>& b);

} // namespace perturbnet
