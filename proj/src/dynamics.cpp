#include "omec/dynamics.hpp"

#include "omec/csv.hpp"

#include <cmath>

namespace omec {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLorenz63: return "lorenz63";
    case ModelKind::kLorenz96: return "lorenz96";
    case ModelKind::kCustom: return "custom";
  }
  return "unknown";
}

double ModelSpec::parameter(const std::string& name) const {
  const auto it = parameters.find(name);
  if (it == parameters.end()) {
    throw Error(ErrorCode::kInvalidModel, std::string(to_string(kind)) +
                                              " model is missing parameter '" + name + "'");
  }
  return it->second;
}

void ModelSpec::validate() const {
  if (dimension <= 0) throw Error(ErrorCode::kInvalidModel, "dimension must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw Error(ErrorCode::kInvalidModel, "observation interval dt must be > 0");
  }
  if (substeps <= 0) throw Error(ErrorCode::kInvalidModel, "substeps must be positive");
  switch (kind) {
    case ModelKind::kLorenz63:
      if (dimension != 3) throw Error(ErrorCode::kInvalidModel, "lorenz63 requires n = 3");
      parameter("sigma");
      parameter("rho");
      parameter("beta");
      break;
    case ModelKind::kLorenz96: {
      parameter("a");
      parameter("F");
      if (dimension < 4) throw Error(ErrorCode::kInvalidModel, "lorenz96 requires K >= 4");
      const auto k = parameters.find("K");
      if (k != parameters.end() && static_cast<Index>(k->second) != dimension) {
        throw Error(ErrorCode::kInvalidModel, "lorenz96 requires n = K");
      }
      break;
    }
    case ModelKind::kCustom:
      if (!custom_rhs) throw Error(ErrorCode::kInvalidModel, "custom model has no rhs");
      break;
  }
  if (process_noise_cov.size() != 0) {
    if (process_noise_cov.rows() != dimension || process_noise_cov.cols() != dimension) {
      throw Error(ErrorCode::kDimensionMismatch, "process noise covariance must be n x n");
    }
    if (!process_noise_cov.isApprox(process_noise_cov.transpose(), 1e-12) &&
        !process_noise_cov.isZero()) {
      throw Error(ErrorCode::kInvalidCovariance, "process noise covariance is not symmetric");
    }
  }
}

void ModelSpec::rhs(const Vector& x, Vector& out) const {
  switch (kind) {
    case ModelKind::kLorenz63: {
      const double sigma = parameters.at("sigma");
      const double rho = parameters.at("rho");
      const double beta = parameters.at("beta");
      out(0) = sigma * (x(1) - x(0));
      out(1) = x(0) * (rho - x(2)) - x(1);
      out(2) = x(0) * x(1) - beta * x(2);
      return;
    }
    case ModelKind::kLorenz96: {
      const double a = parameters.at("a");
      const double forcing = parameters.at("F");
      const Index k = x.size();
      for (Index i = 0; i < k; ++i) {
        const double next = x((i + 1) % k);
        const double prev = x((i + k - 1) % k);
        const double prev2 = x((i + k - 2) % k);
        out(i) = (a * next - prev2) * prev - x(i) + forcing;
      }
      return;
    }
    case ModelKind::kCustom:
      custom_rhs(x, out);
      return;
  }
}

Vector ModelSpec::rhs(const Vector& x) const {
  Vector out(x.size());
  rhs(x, out);
  return out;
}

ModelSpec lorenz63_model(double sigma, double rho, double beta) {
  ModelSpec m;
  m.kind = ModelKind::kLorenz63;
  m.dimension = 3;
  m.parameters = {{"sigma", sigma}, {"rho", rho}, {"beta", beta}};
  m.dt = 0.1;
  m.substeps = 10;
  m.process_noise_cov = 0.01 * Matrix::Identity(3, 3);
  return m;
}

ModelSpec lorenz96_model(Index nodes, double a, double forcing) {
  ModelSpec m;
  m.kind = ModelKind::kLorenz96;
  m.dimension = nodes;
  m.parameters = {{"a", a}, {"F", forcing}, {"K", static_cast<double>(nodes)}};
  m.dt = 0.1;
  m.substeps = 10;
  m.process_noise_cov = Matrix::Zero(nodes, nodes);
  return m;
}

ModelSpec custom_model(Index dimension, RhsFunction rhs) {
  ModelSpec m;
  m.kind = ModelKind::kCustom;
  m.dimension = dimension;
  m.custom_rhs = std::move(rhs);
  m.process_noise_cov = Matrix::Zero(dimension, dimension);
  return m;
}

Vector lorenz63_rhs(const Vector& x, const Lorenz63Params& params) {
  if (x.size() != 3) throw Error(ErrorCode::kDimensionMismatch, "lorenz63 state must have 3 components");
  if (!x.allFinite()) throw Error(ErrorCode::kInvalidInput, "non-finite lorenz63 state");
  return lorenz63_model(params.sigma, params.rho, params.beta).rhs(x);
}

Vector lorenz96_rhs(const Vector& x, double a, double forcing) {
  if (x.size() < 4) throw Error(ErrorCode::kInvalidModel, "lorenz96 requires K >= 4");
  if (!x.allFinite()) throw Error(ErrorCode::kInvalidInput, "non-finite lorenz96 state");
  return lorenz96_model(x.size(), a, forcing).rhs(x);
}

void Trajectory::validate() const {
  if (states.rows() < 1) throw Error(ErrorCode::kInvalidInput, "trajectory is empty");
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidInput, "trajectory dt must be > 0");
  if (!states.allFinite()) throw Error(ErrorCode::kInvalidInput, "trajectory has non-finite rows");
}

void ObservationSeries::validate() const {
  if (observations.rows() < 1) throw Error(ErrorCode::kInvalidInput, "observation series is empty");
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidInput, "observation dt must be > 0");
  if (!observations.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "observation series has non-finite entries");
  }
}

Rk4Propagator::Rk4Propagator(const ModelSpec& model)
    : model_(model),
      h_(model.dt / model.substeps),
      k1_(model.dimension),
      k2_(model.dimension),
      k3_(model.dimension),
      k4_(model.dimension),
      tmp_(model.dimension) {}

bool Rk4Propagator::advance(Vector& x) {
  for (int s = 0; s < model_.substeps; ++s) {
    model_.rhs(x, k1_);
    tmp_ = x + 0.5 * h_ * k1_;
    model_.rhs(tmp_, k2_);
    tmp_ = x + 0.5 * h_ * k2_;
    model_.rhs(tmp_, k3_);
    tmp_ = x + h_ * k3_;
    model_.rhs(tmp_, k4_);
    x += (h_ / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
  }
  return x.allFinite();
}

Vector propagate(const ModelSpec& model, const Vector& x) {
  Rk4Propagator rk4(model);
  Vector out = x;
  if (!rk4.advance(out)) throw StepError(ErrorCode::kIntegrationBlowup, 0, "state diverged");
  return out;
}

GaussianSampler::GaussianSampler(const Matrix& cov) {
  zero_ = cov.size() == 0 || cov.isZero(0.0);
  if (!zero_) root_ = psd_sqrt(cov);
}

Vector GaussianSampler::draw(std::mt19937_64& rng) {
  Vector z(root_.cols());
  for (Index i = 0; i < z.size(); ++i) z(i) = normal_(rng);
  return root_ * z;
}

namespace {

Trajectory run_intervals(const ModelSpec& model, Vector x, Index num_obs_steps, Index skip,
                         std::mt19937_64& rng) {
  Rk4Propagator rk4(model);
  GaussianSampler noise(model.process_noise_cov);
  Trajectory traj;
  traj.dt = model.dt;
  traj.t0 = static_cast<double>(skip + 1) * model.dt;
  traj.states.resize(num_obs_steps, model.dimension);
  for (Index k = 0; k < skip + num_obs_steps; ++k) {
    if (!rk4.advance(x)) {
      throw StepError(ErrorCode::kIntegrationBlowup, k, "trajectory diverged");
    }
    if (!noise.is_zero()) x += noise.draw(rng);
    if (k >= skip) traj.states.row(k - skip) = x.transpose();
  }
  return traj;
}

}  // namespace

Trajectory integrate(const ModelSpec& model, const Vector& x0, Index num_obs_steps,
                     std::uint64_t seed) {
  model.validate();
  if (x0.size() != model.dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "initial state has wrong dimension");
  }
  if (!x0.allFinite()) throw Error(ErrorCode::kInvalidInput, "initial state is not finite");
  if (num_obs_steps < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one step");
  std::mt19937_64 rng(seed);
  return run_intervals(model, x0, num_obs_steps, 0, rng);
}

Trajectory generate_truth(const ModelSpec& model, Index num_obs_steps, Index burn_in,
                          std::uint64_t seed) {
  model.validate();
  if (num_obs_steps < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one step");
  if (burn_in < 0) throw Error(ErrorCode::kInvalidArgument, "burn-in must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  Vector x0(model.dimension);
  for (Index i = 0; i < x0.size(); ++i) x0(i) = uniform(rng);
  return run_intervals(model, x0, num_obs_steps, burn_in, rng);
}

ObservationSeries observe(const Trajectory& traj, const ObservationOperator& obs_fn,
                          const Matrix& noise_cov, std::uint64_t seed) {
  if (obs_fn.input_dim() != traj.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function expects dimension " +
                                                   std::to_string(obs_fn.input_dim()) +
                                                   ", trajectory has " +
                                                   std::to_string(traj.dimension()));
  }
  const Index m = obs_fn.output_dim();
  if (noise_cov.rows() != m || noise_cov.cols() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "observation noise covariance must be m x m");
  }
  std::mt19937_64 rng(seed);
  GaussianSampler noise(noise_cov);
  ObservationSeries obs;
  obs.t0 = traj.t0;
  obs.dt = traj.dt;
  obs.noise_cov = noise_cov;
  obs.observations.resize(traj.length(), m);
  for (Index k = 0; k < traj.length(); ++k) {
    Vector y = obs_fn.apply(traj.states.row(k).transpose(), k);
    if (!noise.is_zero()) y += noise.draw(rng);
    obs.observations.row(k) = y.transpose();
  }
  return obs;
}

namespace {

Matrix with_time_column(const Matrix& values, double t0, double dt) {
  Matrix out(values.rows(), values.cols() + 1);
  for (Index k = 0; k < values.rows(); ++k) out(k, 0) = t0 + static_cast<double>(k) * dt;
  out.rightCols(values.cols()) = values;
  return out;
}

std::vector<std::string> time_header(const std::string& prefix, Index count) {
  auto header = csv::numbered(prefix, count);
  header.insert(header.begin(), "t");
  return header;
}

void split_time_column(const csv::Table& table, Matrix& values, double& t0, double& dt) {
  if (table.rows.cols() < 2 || table.header.front() != "t") {
    throw Error(ErrorCode::kIo, "expected a leading 't' column");
  }
  values = table.rows.rightCols(table.rows.cols() - 1);
  t0 = table.rows.rows() > 0 ? table.rows(0, 0) : 0.0;
  dt = table.rows.rows() > 1 ? table.rows(1, 0) - table.rows(0, 0) : 1.0;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const Trajectory& traj) {
  csv::write(path, time_header("x", traj.dimension()), with_time_column(traj.states, traj.t0, traj.dt));
}

void write_csv(const std::filesystem::path& path, const ObservationSeries& obs) {
  csv::write(path, time_header("y", obs.dimension()),
             with_time_column(obs.observations, obs.t0, obs.dt));
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  Trajectory traj;
  split_time_column(csv::read(path), traj.states, traj.t0, traj.dt);
  return traj;
}

ObservationSeries read_observation_csv(const std::filesystem::path& path) {
  ObservationSeries obs;
  split_time_column(csv::read(path), obs.observations, obs.t0, obs.dt);
  return obs;
}

}  // namespace omec
