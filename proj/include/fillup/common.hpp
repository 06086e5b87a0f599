#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fillup {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Invalid configuration or argument. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation aborted (non-finite loss, broken contract). Exit code 3.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An on-disk artifact disagrees with what a command would write. Exit code 4.
class ArtifactConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

}  // namespace fillup
