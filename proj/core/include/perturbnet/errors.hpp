#pragma once

#include <stdexcept>
#include <string>

namespace perturbnet {

// Bad argument values or mismatched shapes.
class InvalidParameter : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Inputs that make an operation mathematically undefined (zero norms,
// identical noise bundles, ...).
class DegenerateInput : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset files.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergedRun : public std::runtime_error {
public:
  DivergedRun(const std::string& msg, int epoch, int batch)
      : std::runtime_error(msg), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

} // namespace perturbnet
