#pragma once

#include "omec/common.hpp"
#include "omec/dynamics.hpp"
#include "omec/observation_operator.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace omec {

// Unscented-ensemble Kalman filter with equal member weights and optional
// online estimation of Q and R from lag-0/lag-1 innovation statistics.

struct FilterConfig {
  Index ensemble_size = 0;  // 0 selects 2n + 1
  Vector initial_mean;      // empty selects zeros
  Matrix initial_cov;       // empty selects the identity
  bool adaptive = true;
  double adaptive_window = 50.0;  // tau; infinity freezes Q and R
  Matrix q_init;                  // empty selects 0.1 I
  Matrix r_init;                  // empty selects the innovation-variance warm-up
  Index r_init_window = 100;      // steps in the warm-up pass that sets R_init
  double r_inflation = 1.0;       // multiplies R when adaptive is off
  double covariance_floor = 1e-8;
  bool store_covariances = true;
  // Relative cutoff for the pseudo-inverses of H and HF in the Q estimate.
  // Directions the observations barely see are dropped instead of blowing
  // the estimate up.
  double pinv_tolerance = 0.1;
};

struct FilterRun {
  Matrix posterior_mean;  // T x n
  Matrix prior_mean;      // T x n
  Matrix predicted_obs;   // T x m
  Matrix innovations;     // T x m
  std::vector<Matrix> posterior_cov;  // T entries when stored
  Vector trace_q;  // Q used at step k
  Vector trace_r;  // R used at step k
  // Smallest eigenvalue and max |P - P^T| of each posterior covariance
  // before it is conditioned for the next ensemble.
  Vector min_eigenvalue;
  Vector asymmetry;
  Matrix final_q;
  Matrix final_r;
  Matrix initial_r;

  Index length() const { return posterior_mean.rows(); }
};

// Members are columns. For E = 2n + 1 the ensemble is the mean plus
// mean +/- c * S e_i with S the PSD square root of cov and c = sqrt(E / 2),
// so the 1/E sample covariance reproduces cov. E >= 2n is required; members
// beyond 2n sit at the mean.
Matrix make_ensemble(const Vector& mean, const Matrix& cov, Index ensemble_size,
                     double* min_eigenvalue = nullptr);

struct Forecast {
  Matrix states;        // n x E
  Matrix observations;  // m x E
};

// Propagates every member through one noiseless interval, then observes it
// at filter step `step`. Throws StepError(kFilterDivergence).
Forecast forecast_step(const Matrix& ensemble, const ModelSpec& model,
                       const ObservationOperator& obs_fn, Index step);

struct Analysis {
  Vector prior_mean;
  Vector predicted_obs;
  Vector mean;        // x+
  Matrix cov;         // P+ (symmetrized)
  Vector innovation;  // y - y-
  Matrix gain;        // K
  Matrix state_spread;  // ensemble part of P- (no Q)
  Matrix obs_spread;    // ensemble part of P^y (no R)
  Matrix cross_cov;     // P^xy
  double asymmetry = 0.0;  // max |P+ - P+^T| before symmetrizing
};

// Equal-weight (1/E) moments, K = P^xy (P^y)^-1, P+ = P- - K P^yx.
Analysis analysis_step(const Matrix& prior, const Matrix& predicted, const Vector& y,
                       const Matrix& q, const Matrix& r);

// Per-step quantities the adaptive estimator needs.
struct StepStatistics {
  Vector innovation;     // eps_k
  Matrix forecast_map;   // F: previous posterior -> current prior (linearized)
  Matrix obs_map;        // H: prior -> observation (linearized)
  Matrix gain;           // K_k
  Matrix posterior_cov;  // P+_k
  Matrix obs_spread;     // H P- H^T estimated by the ensemble
};

// Exponential moving average of instantaneous Q and R estimates built from
// consecutive innovations (^+ is a truncated pseudo-inverse):
//   P~_{k-1} = (H_k F_k)^+ eps_k (H_{k-1}^+ eps_{k-1})^T + K_{k-1} eps_{k-1} (H_{k-1}^+ eps_{k-1})^T
//   Q~ = P~_{k-1} - F_{k-1} P+_{k-2} F_{k-1}^T
//   R~ = eps_{k-1} eps_{k-1}^T - H_{k-1} P-_{k-1} H_{k-1}^T
//   Q <- Q + (Q~ - Q) / tau,  R <- R + (R~ - R) / tau
// followed by symmetrizing and clipping eigenvalues at the floor.
class AdaptiveNoiseEstimator {
 public:
  AdaptiveNoiseEstimator(Matrix q_init, Matrix r_init, double window, double floor,
                         double pinv_tolerance = 0.1);

  // Returns true when Q and R were updated (needs three recorded steps).
  bool observe(StepStatistics stats);

  const Matrix& q() const { return q_; }
  const Matrix& r() const { return r_; }

 private:
  Vector truncated_solve(const Matrix& a, const Vector& b) const;

  Matrix q_;
  Matrix r_;
  double window_;
  double floor_;
  double pinv_tolerance_;
  std::vector<StepStatistics> history_;  // at most the last three steps
};

FilterRun run_filter(const ObservationSeries& obs, const ModelSpec& model,
                     const ObservationOperator& obs_fn, const FilterConfig& config);

// `k, x1+..xn+, innov_1..innov_m, trace_Q, trace_R`
void write_csv(const std::filesystem::path& path, const FilterRun& run);

// Sidecar: "OMEC", u32 version, u64 T, u64 n, then T*n*n row-major doubles
// (little-endian host order).
void write_covariances(const std::filesystem::path& path, const FilterRun& run);
std::vector<Matrix> read_covariances(const std::filesystem::path& path);

}  // namespace omec
