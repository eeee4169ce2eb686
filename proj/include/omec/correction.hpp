#pragma once

#include "omec/common.hpp"
#include "omec/dynamics.hpp"
#include "omec/enkf.hpp"
#include "omec/observation.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace omec {

// Iterative observation-model-error correction: alternate a filter pass
// using g + b with a nonparametric re-estimate of b from the filter's states.

enum class Localization { kNone, kRing3 };
enum class ResidualEstimator {
  kSimple,        // b-hat_k = y_k - g(x_k)
  kLinearSystem,  // solve W b-hat = y - g(x) for the kernel weight matrix W
};

const char* to_string(Localization loc);
const char* to_string(ResidualEstimator est);

struct OmecConfig {
  Index max_iterations = 20;  // M: filter passes run for l = 0..M
  // Stop once delta_g falls below this; unset selects 1e-3 * mean|y|.
  std::optional<double> delta_g_threshold;
  Index delays = 2;
  Index neighbors = 100;
  Localization localization = Localization::kNone;
  ResidualEstimator estimator = ResidualEstimator::kSimple;
  bool record_history = true;
  // RMSE discards this many initial steps; unset selects max(d, 50).
  std::optional<Index> spin_up;

  void validate(Index length) const;
  double threshold_for(const ObservationSeries& obs) const;
  Index spin_up_steps() const;
};

struct IterationRecord {
  Index iteration = 0;
  double delta_g = 0.0;  // NaN at iteration 0
  Vector rmse;           // empty without truth
  double nll = 0.0;
  double stabilized_trace_r = 0.0;  // mean trace(R_k) over the second half
  FilterRun run;                    // kept when record_history
  CorrectionTable table;
  bool linear_system_regularized = false;
};

struct OmecResult {
  std::vector<IterationRecord> iterations;
  std::shared_ptr<const NeighborModel> neighbors;
  Matrix final_correction;  // b used by g^(final)
  Matrix final_states;      // posterior means of the last completed pass
  bool converged = false;   // stopped on the delta_g threshold
  bool failed = false;
  ErrorCode failure_code = ErrorCode::kNumericalFailure;
  std::string failure_message;

  Index executed() const { return static_cast<Index>(iterations.size()); }
};

// y_k - g(x_k) with the uncorrected base g.
Matrix raw_residuals(const ObservationSeries& obs, const ObservationOperator& base_g,
                     const Matrix& states);
Matrix raw_residuals(const ObservationSeries& obs, const ObservationOperator& base_g,
                     const FilterRun& run);

// (1/T) sum_k ||current_k - previous_k||_1
double delta_g(const Matrix& current, const Matrix& previous);

struct LinearSystemSolution {
  Matrix parameters;       // b-hat solving W b-hat = targets
  bool regularized = false;  // ridge fallback was needed
};

// Least-squares solve of W b-hat = targets per observation component, where
// row k of W holds the kernel weights of step k's neighbors (identity rows
// for steps without a delay vector).
LinearSystemSolution solve_correction_system(const NeighborModel& neighbors, const Matrix& targets);
LinearSystemSolution solve_correction_system(const DelayIndex& index, Index neighbors,
                                             const Matrix& targets);

// sum_k 1/2 ||y_k - g(x_k) - b_k||^2_R + 1/2 ||x_{k+1} - f(x_k)||^2_Q
double negative_log_likelihood(const Matrix& states, const Matrix& corrections,
                               const ObservationSeries& obs, const ObservationOperator& base_g,
                               const ModelSpec& model, const Matrix& q, const Matrix& r);

// Produces the filter's state estimates for iteration l given g^(l).
using FilterFunction =
    std::function<FilterRun(const ObservationOperator& g_current, Index iteration)>;

OmecResult iterate(const ObservationSeries& obs, const ModelSpec& model,
                   std::shared_ptr<const ObservationOperator> wrong_g, const FilterConfig& filter,
                   const OmecConfig& config, const Matrix* truth = nullptr);

// Same loop with the filter pass supplied by the caller.
OmecResult iterate_with(const ObservationSeries& obs, const ModelSpec& model,
                        std::shared_ptr<const ObservationOperator> wrong_g,
                        const FilterFunction& filter, const OmecConfig& config,
                        const Matrix* truth = nullptr);

// iterations.csv: `iter, delta_g, rmse_1..rmse_n, nll`
void write_iterations_csv(const std::filesystem::path& path, const OmecResult& result,
                          Index state_dim);
// `k, g_corrected_1..m`: g(x_k) + b_k on the final states.
void write_corrected_observations_csv(const std::filesystem::path& path,
                                      const OmecResult& result, const ObservationOperator& base_g);

}  // namespace omec
