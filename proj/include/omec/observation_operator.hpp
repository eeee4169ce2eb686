#pragma once

#include "omec/common.hpp"

namespace omec {

// Anything that maps a state to observation space at a given filter step.
// Plain observation functions ignore the step; corrected ones look up the
// per-step correction.
class ObservationOperator {
 public:
  virtual ~ObservationOperator() = default;

  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Vector apply(const Vector& x, Index step) const = 0;
};

}  // namespace omec
