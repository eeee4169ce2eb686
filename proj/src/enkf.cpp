#include "omec/enkf.hpp"

#include "omec/csv.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace omec {

Matrix make_ensemble(const Vector& mean, const Matrix& cov, Index ensemble_size,
                     double* min_eigenvalue) {
  const Index n = mean.size();
  if (cov.rows() != cov.cols()) throw Error(ErrorCode::kInvalidCovariance, "covariance is not square");
  if (cov.rows() != n) throw Error(ErrorCode::kDimensionMismatch, "covariance does not match mean");
  if (!cov.allFinite() || !mean.allFinite()) {
    throw Error(ErrorCode::kInvalidCovariance, "non-finite mean or covariance");
  }
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw Error(ErrorCode::kInvalidCovariance, "covariance is not symmetric");
  }
  if (ensemble_size < 2 * n) {
    throw Error(ErrorCode::kInvalidArgument, "symmetric ensemble needs E >= 2n, got E = " +
                                                 std::to_string(ensemble_size));
  }
  const Matrix root = psd_sqrt(cov, min_eigenvalue);
  const double c = std::sqrt(static_cast<double>(ensemble_size) / 2.0);
  Matrix ensemble = mean.replicate(1, ensemble_size);
  // Centre member first when E is odd, then the +/- pairs.
  const Index offset = ensemble_size % 2;
  for (Index i = 0; i < n; ++i) {
    ensemble.col(offset + i) += c * root.col(i);
    ensemble.col(offset + n + i) -= c * root.col(i);
  }
  return ensemble;
}

Forecast forecast_step(const Matrix& ensemble, const ModelSpec& model,
                       const ObservationOperator& obs_fn, Index step) {
  if (ensemble.rows() != model.dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "ensemble rows must equal model dimension");
  }
  if (obs_fn.input_dim() != model.dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function input must equal n");
  }
  Forecast out;
  out.states.resize(ensemble.rows(), ensemble.cols());
  out.observations.resize(obs_fn.output_dim(), ensemble.cols());
  Rk4Propagator rk4(model);
  Vector x(model.dimension);
  for (Index i = 0; i < ensemble.cols(); ++i) {
    x = ensemble.col(i);
    if (!rk4.advance(x)) {
      throw StepError(ErrorCode::kFilterDivergence, step,
                      "ensemble member " + std::to_string(i) + " diverged");
    }
    out.states.col(i) = x;
    out.observations.col(i) = obs_fn.apply(x, step);
  }
  if (!out.observations.allFinite()) {
    throw StepError(ErrorCode::kFilterDivergence, step, "non-finite predicted observation");
  }
  return out;
}

namespace {

Matrix solve_symmetric(const Matrix& a, const Matrix& b) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) {
    Matrix x = llt.solve(b);
    if (x.allFinite()) return x;
  }
  const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  Eigen::LLT<Matrix> retry(a + jitter * Matrix::Identity(a.rows(), a.cols()));
  if (retry.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumericalFailure, "innovation covariance is not positive definite");
  }
  Matrix x = retry.solve(b);
  if (!x.allFinite()) throw Error(ErrorCode::kNumericalFailure, "innovation solve failed");
  return x;
}

}  // namespace

Analysis analysis_step(const Matrix& prior, const Matrix& predicted, const Vector& y,
                       const Matrix& q, const Matrix& r) {
  const Index n = prior.rows();
  const Index m = predicted.rows();
  const Index e = prior.cols();
  if (predicted.cols() != e) throw Error(ErrorCode::kDimensionMismatch, "ensemble sizes differ");
  if (y.size() != m) throw Error(ErrorCode::kDimensionMismatch, "observation has wrong dimension");
  if (q.rows() != n || q.cols() != n) throw Error(ErrorCode::kDimensionMismatch, "Q must be n x n");
  if (r.rows() != m || r.cols() != m) throw Error(ErrorCode::kDimensionMismatch, "R must be m x m");

  Analysis a;
  const double inv_e = 1.0 / static_cast<double>(e);
  a.prior_mean = prior.rowwise().mean();
  a.predicted_obs = predicted.rowwise().mean();
  const Matrix dx = prior.colwise() - a.prior_mean;
  const Matrix dy = predicted.colwise() - a.predicted_obs;
  a.state_spread = inv_e * dx * dx.transpose();
  a.obs_spread = inv_e * dy * dy.transpose();
  a.cross_cov = inv_e * dx * dy.transpose();
  const Matrix p_prior = a.state_spread + q;
  const Matrix p_y = a.obs_spread + r;

  // K = P^xy (P^y)^-1  <=>  P^y K^T = P^yx
  a.gain = solve_symmetric(p_y, a.cross_cov.transpose()).transpose();
  a.innovation = y - a.predicted_obs;
  a.mean = a.prior_mean + a.gain * a.innovation;
  const Matrix p_post = p_prior - a.gain * a.cross_cov.transpose();
  a.asymmetry = (p_post - p_post.transpose()).cwiseAbs().maxCoeff();
  a.cov = 0.5 * (p_post + p_post.transpose());
  return a;
}

AdaptiveNoiseEstimator::AdaptiveNoiseEstimator(Matrix q_init, Matrix r_init, double window,
                                               double floor, double pinv_tolerance)
    : q_(std::move(q_init)),
      r_(std::move(r_init)),
      window_(window),
      floor_(floor),
      pinv_tolerance_(pinv_tolerance) {
  if (!(window_ > 0.0)) throw Error(ErrorCode::kInvalidArgument, "adaptive window must be > 0");
  if (!(pinv_tolerance_ >= 0.0 && pinv_tolerance_ < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "pseudo-inverse tolerance must lie in [0, 1)");
  }
}

Vector AdaptiveNoiseEstimator::truncated_solve(const Matrix& a, const Vector& b) const {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(pinv_tolerance_);
  cod.compute(a);
  return cod.solve(b);
}

bool AdaptiveNoiseEstimator::observe(StepStatistics stats) {
  history_.push_back(std::move(stats));
  if (history_.size() > 3) history_.erase(history_.begin());
  if (history_.size() < 3 || std::isinf(window_)) return false;

  const StepStatistics& older = history_[0];     // k - 2
  const StepStatistics& previous = history_[1];  // k - 1
  const StepStatistics& current = history_[2];   // k

  const Matrix hf = current.obs_map * current.forecast_map;
  const Vector u = truncated_solve(hf, current.innovation);
  const Vector v = truncated_solve(previous.obs_map, previous.innovation);
  const Matrix p_est = u * v.transpose() + previous.gain * previous.innovation * v.transpose();
  const Matrix q_est = p_est - previous.forecast_map * older.posterior_cov *
                                   previous.forecast_map.transpose();
  const Matrix r_est = previous.innovation * previous.innovation.transpose() - previous.obs_spread;
  if (!q_est.allFinite() || !r_est.allFinite()) return false;

  const double rate = 1.0 / window_;
  q_ = clip_eigenvalues(q_ + rate * (q_est - q_), floor_);
  r_ = clip_eigenvalues(r_ + rate * (r_est - r_), floor_);
  return true;
}

namespace {

FilterRun filter_pass(const ObservationSeries& obs, const ModelSpec& model,
                      const ObservationOperator& obs_fn, const FilterConfig& config,
                      const Matrix& q_init, const Matrix& r_init, Index steps, bool adaptive) {
  const Index n = model.dimension;
  const Index m = obs_fn.output_dim();
  const Index e = config.ensemble_size > 0 ? config.ensemble_size : 2 * n + 1;

  FilterRun run;
  run.posterior_mean.resize(steps, n);
  run.prior_mean.resize(steps, n);
  run.predicted_obs.resize(steps, m);
  run.innovations.resize(steps, m);
  run.trace_q.resize(steps);
  run.trace_r.resize(steps);
  run.min_eigenvalue.resize(steps);
  run.asymmetry.resize(steps);
  if (config.store_covariances) run.posterior_cov.reserve(static_cast<std::size_t>(steps));
  run.initial_r = r_init;

  Vector mean = config.initial_mean.size() ? config.initial_mean : Vector::Zero(n);
  Matrix cov = config.initial_cov.size() ? config.initial_cov : Matrix::Identity(n, n);
  AdaptiveNoiseEstimator estimator(q_init, r_init, config.adaptive_window, config.covariance_floor,
                                   config.pinv_tolerance);
  Matrix q = q_init;
  Matrix r = adaptive ? r_init : config.r_inflation * r_init;

  for (Index k = 0; k < steps; ++k) {
    double min_eig = 0.0;
    const Matrix ensemble = make_ensemble(mean, cov, e, &min_eig);
    if (k > 0) run.min_eigenvalue(k - 1) = min_eig;
    const Forecast fc = forecast_step(ensemble, model, obs_fn, k);
    Analysis an;
    try {
      const Vector y = obs.observations.row(k).transpose();
      an = analysis_step(fc.states, fc.observations, y, q, r);
    } catch (const Error& err) {
      throw StepError(ErrorCode::kFilterDivergence, k, err.what());
    }
    if (!an.mean.allFinite() || !an.cov.allFinite()) {
      throw StepError(ErrorCode::kFilterDivergence, k, "non-finite analysis");
    }

    run.posterior_mean.row(k) = an.mean.transpose();
    run.prior_mean.row(k) = an.prior_mean.transpose();
    run.predicted_obs.row(k) = an.predicted_obs.transpose();
    run.innovations.row(k) = an.innovation.transpose();
    run.trace_q(k) = q.trace();
    run.trace_r(k) = r.trace();
    run.asymmetry(k) = an.asymmetry;
    if (config.store_covariances) run.posterior_cov.push_back(an.cov);

    if (adaptive) {
      // Linearizations from ensemble moments: F maps the previous posterior
      // deviations onto the prior deviations, H the prior onto observations.
      const double inv_e = 1.0 / static_cast<double>(e);
      const Matrix prev_dev = ensemble.colwise() - mean;
      const Matrix prior_dev = fc.states.colwise() - an.prior_mean;
      StepStatistics stats;
      stats.innovation = an.innovation;
      stats.forecast_map = (inv_e * prior_dev * prev_dev.transpose()) *
                           symmetric_pinv(inv_e * prev_dev * prev_dev.transpose());
      stats.obs_map = an.cross_cov.transpose() * symmetric_pinv(an.state_spread);
      stats.gain = an.gain;
      stats.posterior_cov = an.cov;
      stats.obs_spread = an.obs_spread;
      if (estimator.observe(std::move(stats))) {
        q = estimator.q();
        r = estimator.r();
      }
    }
    mean = an.mean;
    cov = an.cov;
  }
  if (steps > 0) {
    double min_eig = 0.0;
    psd_sqrt(cov, &min_eig);
    run.min_eigenvalue(steps - 1) = min_eig;
  }
  run.final_q = q;
  run.final_r = r;
  return run;
}

Matrix innovation_warmup(const ObservationSeries& obs, const ModelSpec& model,
                         const ObservationOperator& obs_fn, const FilterConfig& config,
                         const Matrix& q_init) {
  const Index m = obs_fn.output_dim();
  const Index steps = std::min<Index>(std::max<Index>(config.r_init_window, 2), obs.length());
  const Matrix head = obs.observations.topRows(steps);
  const Matrix centered = head.rowwise() - head.colwise().mean();
  Vector variance = centered.colwise().squaredNorm().transpose() / static_cast<double>(steps);
  for (Index i = 0; i < m; ++i) {
    if (!(variance(i) > config.covariance_floor)) variance(i) = 1.0;
  }
  FilterConfig warm = config;
  warm.store_covariances = false;
  const FilterRun pilot =
      filter_pass(obs, model, obs_fn, warm, q_init, Matrix(variance.asDiagonal()), steps, false);
  const Matrix innov = pilot.innovations.rowwise() - pilot.innovations.colwise().mean();
  Vector r = innov.colwise().squaredNorm().transpose() / static_cast<double>(steps);
  r = r.cwiseMax(config.covariance_floor);
  return r.asDiagonal();
}

}  // namespace

FilterRun run_filter(const ObservationSeries& obs, const ModelSpec& model,
                     const ObservationOperator& obs_fn, const FilterConfig& config) {
  model.validate();
  obs.validate();
  const Index n = model.dimension;
  const Index m = obs_fn.output_dim();
  if (obs_fn.input_dim() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function input must equal n");
  }
  if (obs.dimension() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "observations have " +
                                                   std::to_string(obs.dimension()) +
                                                   " components, observation function gives " +
                                                   std::to_string(m));
  }
  if (config.initial_mean.size() && config.initial_mean.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "initial mean must have n components");
  }
  if (config.initial_cov.size() && (config.initial_cov.rows() != n || config.initial_cov.cols() != n)) {
    throw Error(ErrorCode::kDimensionMismatch, "initial covariance must be n x n");
  }
  if (config.r_inflation < 1.0) throw Error(ErrorCode::kInvalidArgument, "R inflation must be >= 1");

  const Matrix q_init = config.q_init.size() ? config.q_init : Matrix(0.1 * Matrix::Identity(n, n));
  if (q_init.rows() != n || q_init.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "Q_init must be n x n");
  }
  Matrix r_init = config.r_init;
  if (r_init.size() == 0) r_init = innovation_warmup(obs, model, obs_fn, config, q_init);
  if (r_init.rows() != m || r_init.cols() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "R_init must be m x m");
  }
  return filter_pass(obs, model, obs_fn, config, q_init, r_init, obs.length(), config.adaptive);
}

void write_csv(const std::filesystem::path& path, const FilterRun& run) {
  const Index n = run.posterior_mean.cols();
  const Index m = run.innovations.cols();
  std::vector<std::string> header{"k"};
  for (Index i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i) + "+");
  for (const auto& h : csv::numbered("innov_", m)) header.push_back(h);
  header.push_back("trace_Q");
  header.push_back("trace_R");
  Matrix rows(run.length(), 3 + n + m);
  for (Index k = 0; k < rows.rows(); ++k) rows(k, 0) = static_cast<double>(k);
  rows.middleCols(1, n) = run.posterior_mean;
  rows.middleCols(1 + n, m) = run.innovations;
  rows.col(1 + n + m) = run.trace_q;
  rows.col(2 + n + m) = run.trace_r;
  csv::write(path, header, rows);
}

namespace {
constexpr char kMagic[4] = {'O', 'M', 'E', 'C'};
constexpr std::uint32_t kCovarianceVersion = 1;
}  // namespace

void write_covariances(const std::filesystem::path& path, const FilterRun& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const auto t = static_cast<std::uint64_t>(run.posterior_cov.size());
  const auto n = static_cast<std::uint64_t>(run.posterior_mean.cols());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCovarianceVersion), sizeof(kCovarianceVersion));
  out.write(reinterpret_cast<const char*>(&t), sizeof(t));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const Matrix& p : run.posterior_cov) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = p;
    out.write(reinterpret_cast<const char*>(row_major.data()),
              static_cast<std::streamsize>(sizeof(double) * n * n));
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<Matrix> read_covariances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t t = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&t), sizeof(t));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kCovarianceVersion) {
    throw Error(ErrorCode::kIo, "not an OMEC covariance file: " + path.string());
  }
  std::vector<Matrix> out;
  out.reserve(t);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> buf(n, n);
  for (std::uint64_t k = 0; k < t; ++k) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(double) * n * n));
    if (!in) throw Error(ErrorCode::kIo, "truncated covariance file");
    out.emplace_back(buf);
  }
  return out;
}

}  // namespace omec
