#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <stdexcept>
#include <string>

namespace phmb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A position left the admissible open set of the model.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A user-supplied function returned a matrix or vector of the wrong size.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numerical rank differs from the one the construction requires.
class RankError : public Error {
 public:
  using Error::Error;
};

/// A point that should lie on a constraint set does not.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  using Error::Error;
};

/// Invalid model parameters.
class ParamError : public Error {
 public:
  using Error::Error;
};

/// Invalid port index lists in a coupling.
class PortError : public Error {
 public:
  using Error::Error;
};

inline void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

inline void require_size(const Vec& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                     std::to_string(v.size()));
  }
}

/// Largest absolute entry; zero for empty operands.
template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Shortest round-trip-safe text for a double (17 significant digits).
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace phmb
