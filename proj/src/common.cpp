#include "omec/common.hpp"

#include <algorithm>

namespace omec {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kInvalidModel: return "invalid model";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kInsufficientData: return "insufficient data";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kInvalidCovariance: return "invalid covariance";
    case ErrorCode::kIntegrationBlowup: return "integration blowup";
    case ErrorCode::kFilterDivergence: return "filter divergence";
    case ErrorCode::kNumericalFailure: return "numerical failure";
    case ErrorCode::kInvalidConfig: return "invalid config";
    case ErrorCode::kIo: return "i/o error";
  }
  return "error";
}

Matrix clip_eigenvalues(const Matrix& m, double floor) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumericalFailure, "eigendecomposition failed");
  }
  const Vector values = eig.eigenvalues().cwiseMax(floor);
  Matrix out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

Matrix psd_sqrt(const Matrix& m, double* min_eigenvalue) {
  // For a symmetric matrix the SVD and the eigendecomposition coincide once
  // negative eigenvalues are clipped, so the self-adjoint solver is used.
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumericalFailure, "eigendecomposition failed");
  }
  if (min_eigenvalue != nullptr) *min_eigenvalue = eig.eigenvalues().minCoeff();
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Matrix s = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

Matrix symmetric_pinv(const Matrix& m, double rel_tol) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumericalFailure, "eigendecomposition failed");
  }
  const Vector& values = eig.eigenvalues();
  const double cutoff = rel_tol * std::max(values.cwiseAbs().maxCoeff(), 0.0);
  Vector inv(values.size());
  for (Index i = 0; i < values.size(); ++i) {
    inv(i) = std::abs(values(i)) > cutoff && values(i) != 0.0 ? 1.0 / values(i) : 0.0;
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace omec
