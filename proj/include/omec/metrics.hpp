#pragma once

#include "omec/common.hpp"

namespace omec {

// Per-component root mean square of (estimate - truth) over rows >= spin_up.
Vector rmse(const Matrix& estimate, const Matrix& truth, Index spin_up);

// Pearson correlation of two equally sized vectors.
double pearson(const Vector& a, const Vector& b);

}  // namespace omec
