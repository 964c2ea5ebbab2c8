#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace subgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using PointList = std::vector<Vector>;

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad arguments, mismatched dimensions, out-of-range parameters.
struct invalid_argument_error : error {
  using error::error;
};

struct dimension_mismatch_error : invalid_argument_error {
  using invalid_argument_error::invalid_argument_error;
};

/// A numerical routine failed beyond recovery (non-PSD Gram, zero MC hits, ...).
struct numerical_error : error {
  using error::error;
};

/// All floats cross serialization boundaries with 17 significant digits.
inline std::string format17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw invalid_argument_error(msg);
}

}  // namespace subgp
