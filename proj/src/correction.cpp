#include "omec/correction.hpp"

#include "omec/csv.hpp"
#include "omec/metrics.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdlib>
#include <limits>

namespace omec {

const char* to_string(Localization loc) {
  return loc == Localization::kRing3 ? "ring3" : "none";
}

const char* to_string(ResidualEstimator est) {
  return est == ResidualEstimator::kLinearSystem ? "linear_system" : "simple";
}

void OmecConfig::validate(Index length) const {
  if (max_iterations < 1) throw Error(ErrorCode::kInvalidConfig, "max_iterations must be >= 1");
  if (delays < 0) throw Error(ErrorCode::kInvalidConfig, "delays must be >= 0");
  if (neighbors < 1) throw Error(ErrorCode::kInvalidConfig, "neighbors must be >= 1");
  if (length <= delays) {
    throw Error(ErrorCode::kInsufficientData, "need T > d observations");
  }
  if (neighbors > length - delays) {
    throw Error(ErrorCode::kInvalidConfig, "neighbors must not exceed T - d = " +
                                               std::to_string(length - delays));
  }
  if (delta_g_threshold && !(*delta_g_threshold >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "delta_g threshold must be >= 0");
  }
  if (spin_up && (*spin_up < 0 || *spin_up >= length)) {
    throw Error(ErrorCode::kInvalidConfig, "spin-up must be in [0, T)");
  }
}

double OmecConfig::threshold_for(const ObservationSeries& obs) const {
  if (delta_g_threshold) return *delta_g_threshold;
  return 1e-3 * obs.observations.cwiseAbs().mean();
}

Index OmecConfig::spin_up_steps() const {
  return spin_up ? *spin_up : std::max<Index>(delays, 50);
}

Matrix raw_residuals(const ObservationSeries& obs, const ObservationOperator& base_g,
                     const Matrix& states) {
  if (states.rows() != obs.length()) {
    throw Error(ErrorCode::kDimensionMismatch, "state estimates and observations differ in length");
  }
  if (states.cols() != base_g.input_dim() || obs.dimension() != base_g.output_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function does not match the data");
  }
  Matrix out(obs.length(), obs.dimension());
  for (Index k = 0; k < obs.length(); ++k) {
    out.row(k) = obs.observations.row(k) - base_g.apply(states.row(k).transpose(), k).transpose();
  }
  return out;
}

Matrix raw_residuals(const ObservationSeries& obs, const ObservationOperator& base_g,
                     const FilterRun& run) {
  return raw_residuals(obs, base_g, run.posterior_mean);
}

double delta_g(const Matrix& current, const Matrix& previous) {
  if (current.rows() != previous.rows() || current.cols() != previous.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "residual tables differ in shape");
  }
  if (current.rows() == 0) return 0.0;
  return (current - previous).cwiseAbs().sum() / static_cast<double>(current.rows());
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

SparseMatrix weight_matrix(const NeighborTable& table) {
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(table.first_valid + table.steps() * table.per_step));
  for (Index k = 0; k < table.first_valid; ++k) entries.emplace_back(k, k, 1.0);
  for (Index k = table.first_valid; k < table.length; ++k) {
    const auto base = static_cast<std::size_t>((k - table.first_valid) * table.per_step);
    for (Index j = 0; j < table.per_step; ++j) {
      entries.emplace_back(k, table.indices[base + static_cast<std::size_t>(j)],
                           table.weights[base + static_cast<std::size_t>(j)]);
    }
  }
  SparseMatrix w(table.length, table.length);
  w.setFromTriplets(entries.begin(), entries.end());
  return w;
}

constexpr double kRidge = 1e-8;
constexpr double kSolveTolerance = 1e-10;
constexpr Index kMaxSolveIterations = 4000;

Vector solve_column(const SparseMatrix& w, const Vector& target, bool& regularized) {
  Eigen::LeastSquaresConjugateGradient<SparseMatrix> solver;
  solver.setTolerance(kSolveTolerance);
  solver.setMaxIterations(kMaxSolveIterations);
  solver.compute(w);
  Vector x = solver.solve(target);
  if (solver.info() == Eigen::Success && x.allFinite()) return x;

  // Ridge: minimize ||W x - t||^2 + ridge ||x||^2 via the stacked system.
  regularized = true;
  const Index t = w.rows();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(w.nonZeros() + t));
  for (Index c = 0; c < w.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(w, c); it; ++it) entries.emplace_back(it.row(), it.col(), it.value());
  }
  const double root = std::sqrt(kRidge);
  for (Index i = 0; i < t; ++i) entries.emplace_back(t + i, i, root);
  SparseMatrix stacked(2 * t, t);
  stacked.setFromTriplets(entries.begin(), entries.end());
  Vector rhs = Vector::Zero(2 * t);
  rhs.head(t) = target;
  solver.compute(stacked);
  x = solver.solve(rhs);
  if (!x.allFinite()) throw Error(ErrorCode::kNumericalFailure, "regularized correction solve failed");
  return x;
}

}  // namespace

LinearSystemSolution solve_correction_system(const NeighborModel& neighbors, const Matrix& targets) {
  if (neighbors.tables.empty()) throw Error(ErrorCode::kInvalidArgument, "empty neighbor model");
  if (neighbors.localized && static_cast<Index>(neighbors.tables.size()) != targets.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "node count mismatch");
  }
  LinearSystemSolution out;
  out.parameters.resize(targets.rows(), targets.cols());
  std::optional<SparseMatrix> shared;
  for (Index c = 0; c < targets.cols(); ++c) {
    const NeighborTable& table =
        neighbors.tables[neighbors.localized ? static_cast<std::size_t>(c) : 0];
    if (table.length != targets.rows()) {
      throw Error(ErrorCode::kDimensionMismatch, "targets do not match the index length");
    }
    if (neighbors.localized) {
      out.parameters.col(c) = solve_column(weight_matrix(table), targets.col(c), out.regularized);
    } else {
      if (!shared) shared = weight_matrix(table);
      out.parameters.col(c) = solve_column(*shared, targets.col(c), out.regularized);
    }
  }
  return out;
}

LinearSystemSolution solve_correction_system(const DelayIndex& index, Index neighbors,
                                             const Matrix& targets) {
  NeighborModel model;
  model.tables.push_back(build_neighbor_table(index, neighbors));
  return solve_correction_system(model, targets);
}

double negative_log_likelihood(const Matrix& states, const Matrix& corrections,
                               const ObservationSeries& obs, const ObservationOperator& base_g,
                               const ModelSpec& model, const Matrix& q, const Matrix& r) {
  const Index t = obs.length();
  if (states.rows() != t || corrections.rows() != t || corrections.cols() != obs.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "likelihood inputs differ in length");
  }
  if (q.rows() != model.dimension || q.cols() != model.dimension || r.rows() != obs.dimension() ||
      r.cols() != obs.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "Q or R has the wrong shape");
  }
  Eigen::LLT<Matrix> r_chol(0.5 * (r + r.transpose()));
  Eigen::LLT<Matrix> q_chol(0.5 * (q + q.transpose()));
  if (r_chol.info() != Eigen::Success) throw Error(ErrorCode::kInvalidCovariance, "R is singular");
  if (q_chol.info() != Eigen::Success) throw Error(ErrorCode::kInvalidCovariance, "Q is singular");

  const Matrix residual_obs = raw_residuals(obs, base_g, states) - corrections;
  double total = 0.0;
  for (Index k = 0; k < t; ++k) {
    const Vector v = residual_obs.row(k).transpose();
    total += 0.5 * v.dot(r_chol.solve(v));
  }
  Rk4Propagator rk4(model);
  Vector x(model.dimension);
  for (Index k = 0; k + 1 < t; ++k) {
    x = states.row(k).transpose();
    if (!rk4.advance(x)) throw StepError(ErrorCode::kIntegrationBlowup, k, "likelihood propagation");
    const Vector v = states.row(k + 1).transpose() - x;
    total += 0.5 * v.dot(q_chol.solve(v));
  }
  return total;
}

OmecResult iterate(const ObservationSeries& obs, const ModelSpec& model,
                   std::shared_ptr<const ObservationOperator> wrong_g, const FilterConfig& filter,
                   const OmecConfig& config, const Matrix* truth) {
  const FilterFunction pass = [&](const ObservationOperator& g_current, Index) {
    return run_filter(obs, model, g_current, filter);
  };
  return iterate_with(obs, model, std::move(wrong_g), pass, config, truth);
}

OmecResult iterate_with(const ObservationSeries& obs, const ModelSpec& model,
                        std::shared_ptr<const ObservationOperator> wrong_g,
                        const FilterFunction& filter, const OmecConfig& config,
                        const Matrix* truth) {
  if (!wrong_g) throw Error(ErrorCode::kInvalidArgument, "null observation function");
  obs.validate();
  config.validate(obs.length());
  if (wrong_g->output_dim() != obs.dimension() || wrong_g->input_dim() != model.dimension) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function does not match the data");
  }
  if (truth && (truth->rows() != obs.length() || truth->cols() != model.dimension)) {
    throw Error(ErrorCode::kDimensionMismatch, "truth has the wrong shape");
  }

  OmecResult result;
  result.neighbors = std::make_shared<const NeighborModel>(build_neighbor_model(
      obs, config.delays, config.neighbors, config.localization == Localization::kRing3));
  const double threshold = config.threshold_for(obs);
  const Index spin_up = config.spin_up_steps();

  std::shared_ptr<const ObservationOperator> current = wrong_g;
  Matrix previous_raw;
  Matrix nll_q;
  Matrix nll_r;

  for (Index iteration = 0; iteration <= config.max_iterations; ++iteration) {
    IterationRecord record;
    record.iteration = iteration;
    try {
      record.run = filter(*current, iteration);
      const Matrix& states = record.run.posterior_mean;
      const Matrix raw = raw_residuals(obs, *wrong_g, states);
      Matrix smoothed;
      if (config.estimator == ResidualEstimator::kLinearSystem) {
        const LinearSystemSolution solved = solve_correction_system(*result.neighbors, raw);
        record.linear_system_regularized = solved.regularized;
        smoothed = result.neighbors->smooth(solved.parameters);
        record.table.raw = solved.parameters;
      } else {
        smoothed = result.neighbors->smooth(raw);
        record.table.raw = raw;
      }
      record.table.iteration = iteration;
      record.table.smoothed = smoothed;
      record.table.neighbors = result.neighbors;

      record.delta_g = iteration == 0 ? std::numeric_limits<double>::quiet_NaN()
                                      : delta_g(raw, previous_raw);
      if (truth) record.rmse = rmse(states, *truth, spin_up);
      if (record.run.trace_r.size() > 0) {
        const Index half = record.run.trace_r.size() / 2;
        record.stabilized_trace_r = record.run.trace_r.tail(record.run.trace_r.size() - half).mean();
      }
      // The objective uses one fixed (Q, R) for every iteration: the final
      // adaptive estimates of the uncorrected pass with eigenvalues floored
      // at 1% of their mean (the floor-clipped estimates are near singular),
      // or the identity.
      if (iteration == 0) {
        const auto fixed = [](const Matrix& m, Index dim) -> Matrix {
          if (m.rows() != dim || m.cols() != dim || !m.allFinite() || !(m.trace() > 0.0)) {
            return Matrix::Identity(dim, dim);
          }
          return clip_eigenvalues(m, 0.01 * m.trace() / static_cast<double>(dim));
        };
        nll_q = fixed(record.run.final_q, model.dimension);
        nll_r = fixed(record.run.final_r, obs.dimension());
      }
      record.nll = negative_log_likelihood(states, smoothed, obs, *wrong_g, model, nll_q, nll_r);

      previous_raw = raw;
      result.final_correction = smoothed;
      result.final_states = states;
      if (!config.record_history) {
        record.run = FilterRun{};
        record.table.raw.resize(0, 0);
        record.table.smoothed.resize(0, 0);
      } else if (iteration < config.max_iterations) {
        record.run.posterior_cov.clear();
      }
      const bool stop = iteration > 0 && record.delta_g < threshold;
      result.iterations.push_back(std::move(record));
      if (stop) {
        result.converged = true;
        break;
      }
      current = std::make_shared<CorrectedObservationFunction>(
          wrong_g, std::make_shared<const Matrix>(smoothed));
    } catch (const Error& err) {
      result.failed = true;
      result.failure_code = err.code();
      result.failure_message = "iteration " + std::to_string(iteration) + ": " + err.what();
      break;
    }
  }
  return result;
}

void write_iterations_csv(const std::filesystem::path& path, const OmecResult& result,
                          Index state_dim) {
  std::vector<std::string> header{"iter", "delta_g"};
  for (const auto& h : csv::numbered("rmse_", state_dim)) header.push_back(h);
  header.push_back("nll");
  Matrix rows(result.executed(), 3 + state_dim);
  for (Index i = 0; i < result.executed(); ++i) {
    const auto& rec = result.iterations[static_cast<std::size_t>(i)];
    rows(i, 0) = static_cast<double>(rec.iteration);
    rows(i, 1) = rec.delta_g;
    for (Index j = 0; j < state_dim; ++j) {
      rows(i, 2 + j) = rec.rmse.size() == state_dim ? rec.rmse(j)
                                                    : std::numeric_limits<double>::quiet_NaN();
    }
    rows(i, 2 + state_dim) = rec.nll;
  }
  csv::write(path, header, rows);
}

void write_corrected_observations_csv(const std::filesystem::path& path,
                                      const OmecResult& result, const ObservationOperator& base_g) {
  const Index t = result.final_states.rows();
  const Index m = base_g.output_dim();
  std::vector<std::string> header{"k"};
  for (const auto& h : csv::numbered("g_corrected_", m)) header.push_back(h);
  Matrix rows(t, 1 + m);
  for (Index k = 0; k < t; ++k) {
    rows(k, 0) = static_cast<double>(k);
    rows.row(k).tail(m) = (base_g.apply(result.final_states.row(k).transpose(), k) +
                           result.final_correction.row(k).transpose())
                              .transpose();
  }
  csv::write(path, header, rows);
}

}  // namespace omec
