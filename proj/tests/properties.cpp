#include "properties.hpp"

#include "omec/correction.hpp"
#include "omec/enkf.hpp"
#include "omec/harness.hpp"
#include "omec/observation.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

namespace omec::props {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

ObservationSeries series_from(const Matrix& values) {
  ObservationSeries obs;
  obs.observations = values;
  obs.noise_cov = Matrix::Identity(values.cols(), values.cols());
  return obs;
}

// Plain loops over the raw series: z_k = [y_k, y_{k-1}, ..., y_{k-d}].
Neighbors brute_force(const Matrix& series, Index delays, Index k, Index count) {
  std::vector<std::pair<double, Index>> all;
  for (Index j = delays; j < series.rows(); ++j) {
    double acc = 0.0;
    for (Index lag = 0; lag <= delays; ++lag) {
      for (Index c = 0; c < series.cols(); ++c) {
        const double diff = series(j - lag, c) - series(k - lag, c);
        acc += diff * diff;
      }
    }
    all.emplace_back(std::sqrt(acc), j);
  }
  std::sort(all.begin(), all.end());
  Neighbors out;
  for (Index i = 0; i < count; ++i) {
    out.indices.push_back(all[static_cast<std::size_t>(i)].second);
    out.distances.push_back(all[static_cast<std::size_t>(i)].first);
  }
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Check weights_normalized_and_scale_invariant() {
  Check c{"weights sum to one and ignore distance scale", true, ""};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 5.0);
  double worst_sum = 0.0;
  double worst_scale = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 40;
    std::vector<double> d(static_cast<std::size_t>(n));
    for (double& v : d) v = unif(rng);
    std::sort(d.begin(), d.end());
    d.front() = 0.0;
    const Vector w = neighbor_weights(d);
    worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
    if ((w.array() < 0.0).any()) c.ok = false;
    for (double alpha : {1e-3, 0.5, 7.0, 1e4}) {
      std::vector<double> scaled = d;
      for (double& v : scaled) v *= alpha;
      worst_scale = std::max(worst_scale, (neighbor_weights(scaled) - w).cwiseAbs().maxCoeff());
    }
  }
  c.ok = c.ok && worst_sum <= 1e-12 && worst_scale <= 1e-12;
  c.detail = "max |sum-1| " + fmt(worst_sum) + ", max scale change " + fmt(worst_scale);
  return c;
}

Check self_neighbor_identity() {
  Check c{"every delay vector is its own nearest neighbor", true, ""};
  const Trajectory truth = generate_truth(lorenz63_model(), 600, 200, 5);
  const ObservationSeries obs = observe(truth, ObservationFunction::identity(3), 2.0 * Matrix::Identity(3, 3), 6);
  Index bad = 0;
  for (Index d : {0, 2}) {
    const DelayIndex index = build_delay_index(obs, d);
    for (Index k = index.first_valid(); k <= index.last_valid(); ++k) {
      const Neighbors nb = index.query(k, 5);
      if (nb.indices.front() != k || nb.distances.front() != 0.0) ++bad;
    }
  }
  c.ok = bad == 0;
  c.detail = std::to_string(bad) + " steps without self as first neighbor";
  return c;
}

Check smoothing_is_linear() {
  Check c{"smoothing is linear in the residuals", true, ""};
  const Matrix series = random_matrix(400, 2, 21);
  const DelayIndex index(series, 2);
  const NeighborTable table = build_neighbor_table(index, 15);
  const Matrix a = random_matrix(400, 3, 22);
  const Matrix b = random_matrix(400, 3, 23);
  const double alpha = 1.7, beta = -0.35;
  const Matrix lhs = smooth_residuals(table, alpha * a + beta * b);
  const Matrix rhs = alpha * smooth_residuals(table, a) + beta * smooth_residuals(table, b);
  const double err = (lhs - rhs).cwiseAbs().maxCoeff();
  c.ok = err <= 1e-12;
  c.detail = "max deviation " + fmt(err);
  return c;
}

Check knn_matches_brute_force() {
  Check c{"exact neighbors equal a brute-force scan", true, ""};
  Index mismatches = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (Index d : {0, 1}) {
      Matrix series = random_matrix(100 + d, 3, 100 * seed + static_cast<std::uint64_t>(d));
      // Duplicated rows force exact distance ties.
      series.row(40) = series.row(10);
      series.row(70) = series.row(10);
      if (d == 1) {
        series.row(39) = series.row(9);
        series.row(69) = series.row(9);
      }
      const DelayIndex index(series, d);
      for (Index k = index.first_valid(); k <= index.last_valid(); ++k) {
        const Neighbors got = index.query(k, 10);
        const Neighbors want = brute_force(series, d, k, 10);
        if (got.indices != want.indices) ++mismatches;
        for (std::size_t j = 0; j < want.distances.size(); ++j) {
          worst = std::max(worst, std::abs(got.distances[j] - want.distances[j]));
        }
      }
    }
  }
  c.ok = mismatches == 0 && worst <= 1e-12;
  c.detail = std::to_string(mismatches) + " index mismatches over 10 sets, max distance error " + fmt(worst);
  return c;
}

Check analysis_matches_scalar_kalman() {
  Check c{"scalar analysis equals the Kalman update", true, ""};
  const double s = std::sqrt(1.5);
  Matrix prior(1, 3);
  prior << 0.0, s, -s;
  const Analysis a = analysis_step(prior, prior, Vector::Constant(1, 2.0), Matrix::Zero(1, 1),
                                   Matrix::Identity(1, 1));
  const double err = std::max({std::abs(a.gain(0, 0) - 0.5), std::abs(a.mean(0) - 1.0),
                               std::abs(a.cov(0, 0) - 0.5)});
  c.ok = err <= 1e-12;
  c.detail = "K " + fmt(a.gain(0, 0)) + ", x+ " + fmt(a.mean(0)) + ", P+ " + fmt(a.cov(0, 0));
  return c;
}

Check analysis_matches_joseph_form() {
  Check c{"analysis covariance equals the Joseph form", true, ""};
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Index n = 3, m = 2, e = 7;
    const Matrix prior = random_matrix(n, e, seed);
    const Matrix h = random_matrix(m, n, seed + 1000);
    const Matrix predicted = h * prior;
    const Matrix l = random_matrix(m, m, seed + 2000);
    const Matrix r = l * l.transpose() + 0.1 * Matrix::Identity(m, m);
    const Vector y = random_matrix(m, 1, seed + 3000);
    const Analysis a = analysis_step(prior, predicted, y, Matrix::Zero(n, n), r);

    const Vector mean = prior.rowwise().mean();
    const Matrix dev = prior.colwise() - mean;
    const Matrix p = dev * dev.transpose() / static_cast<double>(e);
    const Matrix k = p * h.transpose() * (h * p * h.transpose() + r).inverse();
    const Matrix ikh = Matrix::Identity(n, n) - k * h;
    const Matrix joseph = ikh * p * ikh.transpose() + k * r * k.transpose();
    worst = std::max(worst, (a.cov - joseph).cwiseAbs().maxCoeff());
  }
  c.ok = worst <= 1e-8;
  c.detail = "max |P+ - Joseph| " + fmt(worst) + " over 20 instances";
  return c;
}

Check covariances_symmetric_psd() {
  Check c{"posterior covariances symmetric and PSD at every step", true, ""};
  ModelSpec model = lorenz63_model();
  const Trajectory truth = generate_truth(model, 1500, 500, 3);
  const ObservationFunction h = ObservationFunction::componentwise(
      {{ElementaryMap::kSin, 0.0}, {ElementaryMap::kShift, -6.0}, {ElementaryMap::kCos, 0.0}});
  const ObservationSeries obs = observe(truth, h, 2.0 * Matrix::Identity(3, 3), 4);
  FilterConfig fc;
  fc.store_covariances = true;
  const FilterRun run = run_filter(obs, model, ObservationFunction::identity(3), fc);
  const double asym = run.asymmetry.maxCoeff();
  const double min_eig = run.min_eigenvalue.minCoeff();
  double stored_asym = 0.0;
  for (const Matrix& p : run.posterior_cov) {
    stored_asym = std::max(stored_asym, (p - p.transpose()).cwiseAbs().maxCoeff());
  }
  c.ok = asym <= 1e-10 && stored_asym <= 1e-10 && min_eig >= -1e-10 &&
         static_cast<Index>(run.posterior_cov.size()) == obs.length();
  c.detail = "max asymmetry " + fmt(asym) + ", smallest eigenvalue " + fmt(min_eig) + " over " +
             std::to_string(obs.length()) + " steps";
  return c;
}

Check stub_filter_fixed_point() {
  Check c{"fixed states give delta_g = 0", true, ""};
  const Matrix truth = random_matrix(300, 3, 31);
  const ObservationSeries obs = series_from(truth + 0.3 * random_matrix(300, 3, 32));
  const Matrix fixed = truth + 0.1 * random_matrix(300, 3, 33);
  const FilterFunction stub = [&](const ObservationOperator&, Index) {
    FilterRun run;
    run.posterior_mean = fixed;
    return run;
  };
  OmecConfig oc;
  oc.max_iterations = 4;
  oc.delta_g_threshold = 0.0;  // never stop early
  oc.neighbors = 10;
  const OmecResult result = iterate_with(obs, custom_model(3, [](const Vector&, Vector& out) { out.setZero(); }),
                                         std::make_shared<ObservationFunction>(ObservationFunction::identity(3)),
                                         stub, oc);
  double worst = 0.0;
  for (std::size_t i = 1; i < result.iterations.size(); ++i) worst = std::max(worst, result.iterations[i].delta_g);
  c.ok = !result.failed && result.executed() == 5 && worst == 0.0;
  c.detail = "max delta_g after iteration 0: " + fmt(worst);
  return c;
}

Check residuals_use_base_g() {
  Check c{"residuals are taken against the uncorrected g", true, ""};
  const Matrix states = random_matrix(300, 3, 41);
  const ObservationSeries obs = series_from(states + Matrix::Constant(300, 3, 5.0) + 0.2 * random_matrix(300, 3, 42));
  bool shared_offset = true;
  const FilterFunction stub = [&](const ObservationOperator& g, Index iteration) {
    if (iteration > 0) {
      // g^(l) = g + b_k: the same offset for any state at step k.
      for (Index k : {Index{0}, Index{150}, Index{299}}) {
        const Vector a = g.apply(Vector::Zero(3), k);
        const Vector b = g.apply(Vector::Constant(3, 2.0), k) - Vector::Constant(3, 2.0);
        if ((a - b).cwiseAbs().maxCoeff() > 1e-12) shared_offset = false;
      }
    }
    FilterRun run;
    run.posterior_mean = states;
    return run;
  };
  OmecConfig oc;
  oc.max_iterations = 2;
  oc.delta_g_threshold = 0.0;
  oc.neighbors = 10;
  const OmecResult result =
      iterate_with(obs, custom_model(3, [](const Vector&, Vector& out) { out.setZero(); }),
                   std::make_shared<ObservationFunction>(ObservationFunction::identity(3)), stub, oc);
  const Matrix expected = obs.observations - states;
  double worst = 0.0;
  for (const IterationRecord& rec : result.iterations) {
    worst = std::max(worst, (rec.table.raw - expected).cwiseAbs().maxCoeff());
  }
  c.ok = !result.failed && result.executed() == 3 && worst == 0.0 && shared_offset;
  c.detail = "max |b-hat - (y - g(x))| " + fmt(worst) + (shared_offset ? "" : ", correction differs across states");
  return c;
}

Check replay_is_byte_identical() {
  Check c{"same seeds replay byte-identical artifacts", true, ""};
  ScenarioConfig config = preset("l63");
  config.length = 600;
  config.burn_in = 200;
  config.omec.max_iterations = 2;
  config.omec.neighbors = 20;
  config.seed_truth = 9;
  config.seed_noise = 1009;
  const fs::path root = fs::temp_directory_path() / ("omec_replay_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> diffs;
  std::size_t files = 0;
  try {
    for (const char* sub : {"a", "b"}) {
      config.output_dir = root / sub;
      const Report r = run_scenario(config);
      if (!r.ok) diffs.push_back(std::string("run failed: ") + r.error);
    }
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
      if (!entry.is_regular_file() || entry.path().filename() == "report.json") continue;
      ++files;
      const fs::path other = root / "b" / fs::relative(entry.path(), root / "a");
      if (slurp(entry.path()) != slurp(other)) diffs.push_back(fs::relative(entry.path(), root / "a").string());
    }
  } catch (const std::exception& err) {
    diffs.push_back(err.what());
  }
  fs::remove_all(root);
  c.ok = diffs.empty() && files >= 5;
  c.detail = std::to_string(files) + " files compared";
  for (const std::string& d : diffs) c.detail += "; differs: " + d;
  return c;
}

std::vector<Check> all() {
  return {weights_normalized_and_scale_invariant(),
          self_neighbor_identity(),
          smoothing_is_linear(),
          knn_matches_brute_force(),
          analysis_matches_scalar_kalman(),
          analysis_matches_joseph_form(),
          covariances_symmetric_psd(),
          stub_filter_fixed_point(),
          residuals_use_base_g(),
          replay_is_byte_identical()};
}

}  // namespace omec::props
