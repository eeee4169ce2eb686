#include "omec/metrics.hpp"

#include <cmath>

namespace omec {

Vector rmse(const Matrix& estimate, const Matrix& truth, Index spin_up) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "estimate and truth shapes differ");
  }
  if (spin_up < 0 || spin_up >= estimate.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "spin-up must be in [0, T)");
  }
  const Index rows = estimate.rows() - spin_up;
  const Matrix diff = estimate.bottomRows(rows) - truth.bottomRows(rows);
  return (diff.colwise().squaredNorm().transpose() / static_cast<double>(rows)).cwiseSqrt();
}

double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::kDimensionMismatch, "correlation needs two equal-length series");
  }
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  return denom > 0.0 ? da.dot(db) / denom : 0.0;
}

}  // namespace omec
