#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace omec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class ErrorCode {
  kInvalidInput,
  kInvalidModel,
  kDimensionMismatch,
  kInsufficientData,
  kInvalidArgument,
  kInvalidCovariance,
  kIntegrationBlowup,
  kFilterDivergence,
  kNumericalFailure,
  kInvalidConfig,
  kIo,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code distinguishes the failure
// class so the CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Carries the time step at which integration or filtering produced a
// non-finite value.
class StepError : public Error {
 public:
  StepError(ErrorCode code, Index step, const std::string& what)
      : Error(code, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  Index step() const noexcept { return step_; }

 private:
  Index step_;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// Symmetrizes and clips eigenvalues from below at `floor`.
Matrix clip_eigenvalues(const Matrix& m, double floor);

// Symmetric positive semidefinite square root of the symmetrized input with
// negative eigenvalues clipped at zero. Optionally reports the smallest
// eigenvalue seen before clipping.
Matrix psd_sqrt(const Matrix& m, double* min_eigenvalue = nullptr);

// Moore-Penrose inverse of a symmetric matrix; eigenvalues below
// rel_tol * max|eigenvalue| are treated as zero.
Matrix symmetric_pinv(const Matrix& m, double rel_tol = 1e-12);

}  // namespace omec
