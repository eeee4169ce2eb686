#pragma once

#include "omec/common.hpp"
#include "omec/observation_operator.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>

namespace omec {

enum class ModelKind { kLorenz63, kLorenz96, kCustom };

const char* to_string(ModelKind kind);

// Writes dx/dt for state x into out (already sized to n).
using RhsFunction = std::function<void(const Vector& x, Vector& out)>;

struct ModelSpec {
  ModelKind kind = ModelKind::kLorenz63;
  Index dimension = 3;
  // lorenz63: sigma, rho, beta. lorenz96: a, F, K.
  std::map<std::string, double> parameters;
  // Model time between consecutive observations.
  double dt = 0.1;
  int substeps = 10;
  // Additive noise covariance applied once per observation interval.
  Matrix process_noise_cov;
  RhsFunction custom_rhs;

  double parameter(const std::string& name) const;
  void validate() const;
  void rhs(const Vector& x, Vector& out) const;
  Vector rhs(const Vector& x) const;
};

ModelSpec lorenz63_model(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);
ModelSpec lorenz96_model(Index nodes, double a = 1.0, double forcing = 8.0);
ModelSpec custom_model(Index dimension, RhsFunction rhs);

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

Vector lorenz63_rhs(const Vector& x, const Lorenz63Params& params = {});
Vector lorenz96_rhs(const Vector& x, double a = 1.0, double forcing = 8.0);

struct Trajectory {
  Matrix states;  // T x n, row k is x_k
  double t0 = 0.0;  // time of row 0
  double dt = 0.1;

  Index length() const { return states.rows(); }
  Index dimension() const { return states.cols(); }
  void validate() const;
};

struct ObservationSeries {
  Matrix observations;  // T x m
  double t0 = 0.0;
  double dt = 0.1;
  Matrix noise_cov;  // R used when generating

  Index length() const { return observations.rows(); }
  Index dimension() const { return observations.cols(); }
  void validate() const;
};

// Reusable RK4 stepper; holds scratch vectors so repeated propagation does
// not allocate.
class Rk4Propagator {
 public:
  explicit Rk4Propagator(const ModelSpec& model);

  // Advances x in place by one observation interval (substeps RK4 steps).
  // Returns false if any component became non-finite.
  bool advance(Vector& x);

 private:
  const ModelSpec& model_;
  double h_;
  Vector k1_, k2_, k3_, k4_, tmp_;
};

// Deterministic one-interval propagation; throws StepError(kIntegrationBlowup).
Vector propagate(const ModelSpec& model, const Vector& x);

// Draws N(0, cov) with a fixed square root computed once.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Matrix& cov);

  Vector draw(std::mt19937_64& rng);
  bool is_zero() const { return zero_; }

 private:
  Matrix root_;
  bool zero_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// RK4 over num_obs_steps intervals, adding N(0, Q_true) after each one.
// Row 0 is the state one interval after x0.
Trajectory integrate(const ModelSpec& model, const Vector& x0, Index num_obs_steps,
                     std::uint64_t seed);

// Uniform [-1,1]^n initial condition, burn_in discarded intervals, then T
// recorded intervals; one generator drives the initial condition and noise.
Trajectory generate_truth(const ModelSpec& model, Index num_obs_steps, Index burn_in,
                          std::uint64_t seed);

ObservationSeries observe(const Trajectory& traj, const ObservationOperator& obs_fn,
                          const Matrix& noise_cov, std::uint64_t seed);

void write_csv(const std::filesystem::path& path, const Trajectory& traj);
void write_csv(const std::filesystem::path& path, const ObservationSeries& obs);
Trajectory read_trajectory_csv(const std::filesystem::path& path);
ObservationSeries read_observation_csv(const std::filesystem::path& path);

}  // namespace omec
