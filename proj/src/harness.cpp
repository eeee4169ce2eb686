#include "omec/harness.hpp"

#include "omec/csv.hpp"
#include "omec/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

namespace omec {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

ScenarioConfig lorenz96_preset(const std::string& name, Index nodes, bool localized) {
  ScenarioConfig c;
  c.name = name;
  c.model = lorenz96_model(nodes, 1.0, 8.0);
  c.true_obs = ObservationFunction::circulant(nodes, 1.0, 1.2, 1.1);
  c.wrong_obs = ObservationFunction::identity(nodes);
  c.length = 10000;
  c.noise_cov = 2.0 * Matrix::Identity(nodes, nodes);
  c.omec.delays = 2;
  c.omec.neighbors = 100;
  c.omec.max_iterations = 15;
  c.omec.localization = localized ? Localization::kRing3 : Localization::kNone;
  return c;
}

std::string number(double v) { return csv::format_double(v); }

std::string matrix_text(const Matrix& m) {
  if (m.size() == 0) return "default";
  std::string out;
  const bool diagonal = m.rows() == m.cols() && Matrix(m.diagonal().asDiagonal()) == m;
  if (diagonal) {
    out = "diag:";
    for (Index i = 0; i < m.rows(); ++i) out += (i ? "," : "") + number(m(i, i));
    return out;
  }
  out = "full:";
  for (Index i = 0; i < m.rows(); ++i) {
    if (i) out += ";";
    for (Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + number(m(i, j));
  }
  return out;
}

std::string vector_text(const Vector& v) {
  if (v.size() == 0) return "default";
  std::string out;
  for (Index i = 0; i < v.size(); ++i) out += (i ? "," : "") + number(v(i));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kInvalidConfig, "bad value '" + value + "' for " + key);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) bad_value(key, value);
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    bad_value(key, value);
  }
}

Index parse_index(const std::string& key, const std::string& value) {
  const std::uint64_t v = parse_u64(key, value);
  if (v > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) bad_value(key, value);
  return static_cast<Index>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::exception&) {
    bad_value(key, value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value.empty() || value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  bad_value(key, value);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::map<std::string, std::string> config_echo(const ScenarioConfig& config) {
  std::map<std::string, std::string> out;
  std::istringstream in(serialize(config));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

double stabilized_trace(const Vector& trace) {
  if (trace.size() == 0) return 0.0;
  const Index half = trace.size() / 2;
  return trace.tail(trace.size() - half).mean();
}

std::string iteration_file(Index iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%02ld.csv", static_cast<long>(iteration));
  return buf;
}

void write_artifacts(const ScenarioConfig& config, const ScenarioRun& run) {
  const fs::path& dir = config.output_dir;
  const OmecResult& result = run.result;
  if (result.executed() == 0) return;
  write_iterations_csv(dir / "iterations.csv", result, config.model.dimension);
  if (config.omec.record_history) {
    fs::create_directories(dir / "corrections");
    for (const IterationRecord& rec : result.iterations) {
      if (rec.table.raw.size() != 0) write_csv(dir / "corrections" / iteration_file(rec.iteration), rec.table);
    }
  }
  write_corrected_observations_csv(dir / "corrected_observations.csv", result, config.wrong_obs);
  const IterationRecord& first = result.iterations.front();
  const IterationRecord& last = result.iterations.back();
  if (first.run.length() > 0) write_csv(dir / "filter_iter0.csv", first.run);
  if (last.run.length() > 0) {
    write_csv(dir / "filter_final.csv", last.run);
    if (config.write_covariances && !last.run.posterior_cov.empty()) {
      write_covariances(dir / "covariances_final.bin", last.run);
    }
  }
  if (config.write_neighbors && result.neighbors) write_neighbors_csv(dir / "neighbors.csv", *result.neighbors);
}

}  // namespace

void ScenarioConfig::validate() const {
  try {
    model.validate();
  } catch (const Error& err) {
    throw Error(ErrorCode::kInvalidConfig, err.what());
  }
  if (true_obs.input_dim() != model.dimension || wrong_obs.input_dim() != model.dimension) {
    throw Error(ErrorCode::kInvalidConfig, "observation functions must take the model state");
  }
  if (true_obs.output_dim() != wrong_obs.output_dim()) {
    throw Error(ErrorCode::kInvalidConfig, "h and g must have the same output dimension");
  }
  const Index m = true_obs.output_dim();
  if (noise_cov.rows() != m || noise_cov.cols() != m) {
    throw Error(ErrorCode::kInvalidConfig, "noise covariance must be m x m");
  }
  if (length < 1) throw Error(ErrorCode::kInvalidConfig, "length must be >= 1");
  if (burn_in < 0) throw Error(ErrorCode::kInvalidConfig, "burn-in must be >= 0");
  if (!(filter.adaptive_window > 0.0)) throw Error(ErrorCode::kInvalidConfig, "tau must be > 0");
  if (filter.ensemble_size != 0 && filter.ensemble_size < 2 * model.dimension) {
    throw Error(ErrorCode::kInvalidConfig, "ensemble size must be 0 or >= 2n");
  }
  if (omec.delta_g_threshold && !(*omec.delta_g_threshold >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "threshold must be >= 0");
  }
  omec.validate(length);
  if (omec.localization == Localization::kRing3 && m != model.dimension) {
    throw Error(ErrorCode::kInvalidConfig, "ring3 localization needs one observation per node");
  }
}

std::vector<std::string> preset_names() { return {"l63", "l96_10", "l96_40"}; }

ScenarioConfig preset(const std::string& name) {
  if (name == "l63") {
    ScenarioConfig c;
    c.name = name;
    c.model = lorenz63_model();
    c.true_obs = ObservationFunction::componentwise(
        {{ElementaryMap::kSin, 0.0}, {ElementaryMap::kShift, -6.0}, {ElementaryMap::kCos, 0.0}});
    c.wrong_obs = ObservationFunction::identity(3);
    c.length = 8000;
    c.noise_cov = 2.0 * Matrix::Identity(3, 3);
    c.omec.delays = 2;
    c.omec.neighbors = 100;
    c.omec.max_iterations = 20;
    return c;
  }
  if (name == "l96_10") return lorenz96_preset(name, 10, false);
  if (name == "l96_40") return lorenz96_preset(name, 40, true);
  throw Error(ErrorCode::kInvalidConfig, "unknown preset '" + name + "' (l63, l96_10, l96_40)");
}

std::string serialize(const ScenarioConfig& c) {
  std::ostringstream out;
  out << "name=" << c.name << '\n';
  out << "model=" << to_string(c.model.kind) << '\n';
  out << "dimension=" << c.model.dimension << '\n';
  for (const auto& [key, value] : c.model.parameters) out << "param." << key << '=' << number(value) << '\n';
  out << "dt=" << number(c.model.dt) << '\n';
  out << "substeps=" << c.model.substeps << '\n';
  out << "process_noise=" << matrix_text(c.model.process_noise_cov) << '\n';
  out << "true_obs=" << c.true_obs.describe() << '\n';
  out << "wrong_obs=" << c.wrong_obs.describe() << '\n';
  out << "length=" << c.length << '\n';
  out << "burn_in=" << c.burn_in << '\n';
  out << "noise_cov=" << matrix_text(c.noise_cov) << '\n';
  out << "seed_truth=" << c.seed_truth << '\n';
  out << "seed_noise=" << c.seed_noise << '\n';
  out << "filter.ensemble_size=" << c.filter.ensemble_size << '\n';
  out << "filter.initial_mean=" << vector_text(c.filter.initial_mean) << '\n';
  out << "filter.initial_cov=" << matrix_text(c.filter.initial_cov) << '\n';
  out << "filter.adaptive=" << (c.filter.adaptive ? "true" : "false") << '\n';
  out << "filter.tau=" << number(c.filter.adaptive_window) << '\n';
  out << "filter.q_init=" << matrix_text(c.filter.q_init) << '\n';
  out << "filter.r_init=" << matrix_text(c.filter.r_init) << '\n';
  out << "filter.r_init_window=" << c.filter.r_init_window << '\n';
  out << "filter.r_inflation=" << number(c.filter.r_inflation) << '\n';
  out << "filter.covariance_floor=" << number(c.filter.covariance_floor) << '\n';
  out << "filter.pinv_tolerance=" << number(c.filter.pinv_tolerance) << '\n';
  out << "omec.max_iterations=" << c.omec.max_iterations << '\n';
  out << "omec.threshold="
      << (c.omec.delta_g_threshold ? number(*c.omec.delta_g_threshold) : std::string("auto")) << '\n';
  out << "omec.delays=" << c.omec.delays << '\n';
  out << "omec.neighbors=" << c.omec.neighbors << '\n';
  out << "omec.localization=" << to_string(c.omec.localization) << '\n';
  out << "omec.estimator=" << to_string(c.omec.estimator) << '\n';
  out << "omec.spin_up=" << c.omec.spin_up_steps() << '\n';
  return out.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void apply_setting(ScenarioConfig& c, const std::string& key, const std::string& value) {
  if (key == "seed-truth") {
    c.seed_truth = parse_u64(key, value);
  } else if (key == "seed-noise") {
    c.seed_noise = parse_u64(key, value);
  } else if (key == "out") {
    c.output_dir = value;
  } else if (key == "max-iter") {
    c.omec.max_iterations = parse_index(key, value);
  } else if (key == "neighbors") {
    c.omec.neighbors = parse_index(key, value);
  } else if (key == "delays") {
    c.omec.delays = parse_index(key, value);
  } else if (key == "no-adaptive") {
    c.filter.adaptive = !parse_bool(key, value);
  } else if (key == "diag-linear-system") {
    c.omec.estimator = parse_bool(key, value) ? ResidualEstimator::kLinearSystem : ResidualEstimator::kSimple;
  } else if (key == "length") {
    c.length = parse_index(key, value);
  } else if (key == "burn-in") {
    c.burn_in = parse_index(key, value);
  } else if (key == "tau") {
    c.filter.adaptive_window = value == "inf" ? std::numeric_limits<double>::infinity() : parse_real(key, value);
  } else if (key == "threshold") {
    if (value == "auto") {
      c.omec.delta_g_threshold.reset();
    } else {
      c.omec.delta_g_threshold = parse_real(key, value);
    }
  } else if (key == "localization") {
    if (value == "none") {
      c.omec.localization = Localization::kNone;
    } else if (value == "ring3") {
      c.omec.localization = Localization::kRing3;
    } else {
      bad_value(key, value);
    }
  } else if (key == "ensemble-size") {
    c.filter.ensemble_size = parse_index(key, value);
  } else if (key == "r-inflation") {
    c.filter.r_inflation = parse_real(key, value);
  } else if (key == "pinv-tolerance") {
    c.filter.pinv_tolerance = parse_real(key, value);
  } else if (key == "spin-up") {
    c.omec.spin_up = parse_index(key, value);
  } else if (key == "write-neighbors") {
    c.write_neighbors = parse_bool(key, value);
  } else if (key == "write-covariances") {
    c.write_covariances = parse_bool(key, value);
  } else if (key == "write-svg") {
    c.write_svg = parse_bool(key, value);
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown setting '" + key + "'");
  }
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidConfig, "cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig,
                  path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

ScenarioConfig load_config(const std::vector<std::pair<std::string, std::string>>& file_settings,
                           const std::vector<std::pair<std::string, std::string>>& overrides,
                           const std::string& fallback_preset) {
  std::string name = fallback_preset;
  for (const auto& [k, v] : file_settings) {
    if (k == "preset") name = v;
  }
  for (const auto& [k, v] : overrides) {
    if (k == "preset") name = v;
  }
  if (name.empty()) throw Error(ErrorCode::kInvalidConfig, "no preset given");
  ScenarioConfig c = preset(name);
  for (const auto* list : {&file_settings, &overrides}) {
    for (const auto& [k, v] : *list) {
      if (k != "preset") apply_setting(c, k, v);
    }
  }
  return c;
}

ScenarioRun execute_scenario(const ScenarioConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ScenarioRun run;
  Report& report = run.report;
  report.scenario = config.name;
  report.seed_truth = config.seed_truth;
  report.seed_noise = config.seed_noise;
  report.config = config_echo(config);

  const bool write = !config.output_dir.empty();
  try {
    if (write) fs::create_directories(config.output_dir);
    run.truth = generate_truth(config.model, config.length, config.burn_in, config.seed_truth);
    run.observations = observe(run.truth, config.true_obs, config.noise_cov, config.seed_noise);
    if (write) {
      write_csv(config.output_dir / "truth.csv", run.truth);
      write_csv(config.output_dir / "observations.csv", run.observations);
    }
    FilterConfig filter = config.filter;
    filter.store_covariances = config.write_covariances;
    run.result = iterate(run.observations, config.model,
                         std::make_shared<ObservationFunction>(config.wrong_obs), filter, config.omec,
                         &run.truth.states);
    if (run.result.failed) {
      report.ok = false;
      report.error_code = run.result.failure_code;
      report.error = run.result.failure_message;
    }
    if (write) write_artifacts(config, run);
  } catch (const Error& err) {
    report.ok = false;
    report.error_code = err.code();
    report.error = err.what();
  } catch (const fs::filesystem_error& err) {
    report.ok = false;
    report.error_code = ErrorCode::kIo;
    report.error = err.what();
  }

  const OmecResult& result = run.result;
  report.iterations = result.executed();
  report.converged = result.converged;
  for (const IterationRecord& rec : result.iterations) {
    report.rmse_by_iteration.push_back(rec.rmse);
    report.delta_g.push_back(rec.delta_g);
    report.nll.push_back(rec.nll);
  }
  if (!result.iterations.empty()) {
    report.rmse_uncorrected = result.iterations.front().rmse;
    report.rmse_corrected = result.iterations.back().rmse;
    report.trace_r_first = result.iterations.front().stabilized_trace_r;
    report.trace_r_last = result.iterations.back().stabilized_trace_r;
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (write) {
    try {
      write_text(config.output_dir / "report.json", report_json(report));
      if (config.write_svg && !report.rmse_by_iteration.empty()) {
        write_text(config.output_dir / "rmse.svg", rmse_svg(report));
      }
    } catch (const Error& err) {
      report.ok = false;
      report.error_code = err.code();
      report.error = err.what();
    }
  }
  return run;
}

Report run_scenario(const ScenarioConfig& config) { return execute_scenario(config).report; }

std::string report_json(const Report& r) {
  json j;
  j["library_version"] = kLibraryVersion;
  j["scenario"] = r.scenario;
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) {
    j["error_code"] = to_string(r.error_code);
    j["error"] = r.error;
  }
  j["seeds"] = {{"truth", r.seed_truth}, {"noise", r.seed_noise}};
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["rmse_uncorrected"] = vector_json(r.rmse_uncorrected);
  j["rmse_corrected"] = vector_json(r.rmse_corrected);
  json series = json::array();
  for (const Vector& v : r.rmse_by_iteration) series.push_back(vector_json(v));
  j["rmse_by_iteration"] = series;
  json dg = json::array();
  for (double v : r.delta_g) dg.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j["delta_g"] = dg;
  j["nll"] = r.nll;
  j["trace_r"] = {{"first_pass", r.trace_r_first}, {"last_pass", r.trace_r_last}};
  j["runtime_seconds"] = r.runtime_seconds;
  j["config"] = r.config;
  return j.dump(2) + "\n";
}

Report summarize_directory(const fs::path& dir) {
  Report r;
  const fs::path report_path = dir / "report.json";
  if (fs::exists(report_path)) {
    std::ifstream in(report_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& err) {
      throw Error(ErrorCode::kIo, "cannot parse " + report_path.string() + ": " + err.what());
    }
    r.scenario = j.value("scenario", std::string());
    r.ok = j.value("status", std::string("ok")) == "ok";
    r.error = j.value("error", std::string());
    if (j.contains("seeds")) {
      r.seed_truth = j["seeds"].value("truth", std::uint64_t{0});
      r.seed_noise = j["seeds"].value("noise", std::uint64_t{0});
    }
    r.converged = j.value("converged", false);
    r.runtime_seconds = j.value("runtime_seconds", 0.0);
    if (j.contains("config")) r.config = j["config"].get<std::map<std::string, std::string>>();
    if (j.contains("trace_r")) {
      r.trace_r_first = j["trace_r"].value("first_pass", 0.0);
      r.trace_r_last = j["trace_r"].value("last_pass", 0.0);
    }
  }

  const csv::Table it = csv::read(dir / "iterations.csv");
  const Index cols = static_cast<Index>(it.header.size());
  if (cols < 3 || it.header.front() != "iter" || it.header[1] != "delta_g" || it.header.back() != "nll") {
    throw Error(ErrorCode::kIo, "unexpected iterations.csv header");
  }
  const Index n = cols - 3;
  r.iterations = it.rows.rows();
  for (Index i = 0; i < it.rows.rows(); ++i) {
    r.delta_g.push_back(it.rows(i, 1));
    r.rmse_by_iteration.push_back(it.rows.row(i).segment(2, n).transpose());
    r.nll.push_back(it.rows(i, cols - 1));
  }
  if (!r.rmse_by_iteration.empty()) {
    r.rmse_uncorrected = r.rmse_by_iteration.front();
    r.rmse_corrected = r.rmse_by_iteration.back();
  }
  const auto trace_from = [&](const fs::path& path, double& target) {
    if (!fs::exists(path)) return;
    const csv::Table t = csv::read(path);
    const auto col = std::find(t.header.begin(), t.header.end(), "trace_R");
    if (col == t.header.end()) return;
    target = stabilized_trace(t.rows.col(col - t.header.begin()));
  };
  trace_from(dir / "filter_iter0.csv", r.trace_r_first);
  trace_from(dir / "filter_final.csv", r.trace_r_last);
  return r;
}

std::string render_summary(const Report& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "scenario " << r.scenario << "  seeds truth=" << r.seed_truth << " noise=" << r.seed_noise
      << "  status " << (r.ok ? "ok" : "failed") << '\n';
  if (!r.ok) out << "error: " << r.error << '\n';
  out << "filter passes " << r.iterations << (r.converged ? " (stopped on delta_g)" : "")
      << "  runtime " << std::setprecision(1) << r.runtime_seconds << " s\n"
      << std::setprecision(3);
  if (r.rmse_uncorrected.size() > 0) {
    out << "component   uncorrected   corrected   ratio\n";
    for (Index i = 0; i < r.rmse_uncorrected.size(); ++i) {
      const double c = r.rmse_corrected(i);
      out << "x" << std::left << std::setw(10) << (i + 1) << std::right << std::setw(11)
          << r.rmse_uncorrected(i) << std::setw(12) << c << std::setw(8)
          << (c > 0.0 ? r.rmse_uncorrected(i) / c : std::numeric_limits<double>::infinity()) << '\n';
    }
    if (r.rmse_uncorrected.size() > 3) {
      out << "mean        " << std::setw(10) << r.rmse_uncorrected.mean() << std::setw(12)
          << r.rmse_corrected.mean() << '\n';
    }
  }
  out << "stabilized trace R: first pass " << r.trace_r_first << ", last pass " << r.trace_r_last << '\n';
  if (r.delta_g.size() > 1) out << "final delta_g " << r.delta_g.back() << '\n';
  return out.str();
}

std::string rmse_svg(const Report& r) {
  constexpr double width = 640.0, height = 400.0;
  constexpr double left = 60.0, right = 120.0, top = 30.0, bottom = 50.0;
  const Index iters = static_cast<Index>(r.rmse_by_iteration.size());
  const Index comps = iters > 0 ? r.rmse_by_iteration.front().size() : 0;
  double ymax = 0.0;
  for (const Vector& v : r.rmse_by_iteration) {
    for (Index i = 0; i < v.size(); ++i) {
      if (std::isfinite(v(i))) ymax = std::max(ymax, v(i));
    }
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const auto px = [&](double it) { return left + plot_w * (iters > 1 ? it / double(iters - 1) : 0.5); };
  const auto py = [&](double v) { return top + plot_h * (1.0 - v / ymax); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"18\">RMSE by iteration (" << r.scenario << ")</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
    << top + plot_h << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  const Index step = std::max<Index>(1, (iters + 9) / 10);
  for (Index it = 0; it < iters; it += step) {
    s << "<text x=\"" << px(double(it)) << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
      << it << "</text>\n";
  }
  s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
    << "\" text-anchor=\"middle\">iteration</text>\n";
  // Many components (Lorenz-96 rings) collapse to the node average.
  const bool average = comps > 10;
  const Index lines = average ? 1 : comps;
  for (Index c = 0; c < lines; ++c) {
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colors[c % 10] << "\" points=\"";
    for (Index it = 0; it < iters; ++it) {
      const Vector& v = r.rmse_by_iteration[static_cast<std::size_t>(it)];
      const double y = average ? v.mean() : v(c);
      s << (it ? " " : "") << px(double(it)) << "," << py(y);
    }
    s << "\"/>\n";
    const double ly = top + 16.0 * c + 8.0;
    s << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 32
      << "\" y2=\"" << ly << "\" stroke-width=\"2\" stroke=\"" << colors[c % 10] << "\"/>\n";
    s << "<text x=\"" << left + plot_w + 36 << "\" y=\"" << ly + 4 << "\">"
      << (average ? std::string("node mean") : "x" + std::to_string(c + 1)) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

unsigned sweep_threads() {
  if (const char* env = std::getenv("OMEC_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SweepResult run_sweep(const ScenarioConfig& base, const std::vector<std::uint64_t>& seeds,
                      unsigned threads) {
  base.validate();
  if (seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "sweep needs at least one seed");
  if (threads == 0) threads = sweep_threads();
  threads = std::min<unsigned>(threads, static_cast<unsigned>(seeds.size()));

  SweepResult sweep;
  sweep.runs.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      ScenarioConfig c = base;
      c.seed_truth = seeds[i];
      c.seed_noise = seeds[i] + 1000;
      if (!base.output_dir.empty()) c.output_dir = base.output_dir / ("seed_" + std::to_string(seeds[i]));
      sweep.runs[i] = run_scenario(c);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<const Report*> good;
  for (const Report& r : sweep.runs) {
    if (r.ok && r.rmse_corrected.size() > 0) {
      good.push_back(&r);
    } else {
      ++sweep.failures;
    }
  }
  if (good.empty()) return sweep;
  const Index n = good.front()->rmse_corrected.size();
  const auto stats = [&](bool corrected, Vector& mean, Vector& sd) {
    mean = Vector::Zero(n);
    sd = Vector::Zero(n);
    for (const Report* r : good) mean += corrected ? r->rmse_corrected : r->rmse_uncorrected;
    mean /= static_cast<double>(good.size());
    if (good.size() < 2) return;
    for (const Report* r : good) {
      sd += ((corrected ? r->rmse_corrected : r->rmse_uncorrected) - mean).array().square().matrix();
    }
    sd = (sd / static_cast<double>(good.size() - 1)).cwiseSqrt();
  };
  stats(false, sweep.mean_uncorrected, sweep.std_uncorrected);
  stats(true, sweep.mean_corrected, sweep.std_corrected);
  return sweep;
}

void write_sweep(const fs::path& dir, const SweepResult& sweep) {
  fs::create_directories(dir);
  Index n = 0;
  for (const Report& r : sweep.runs) n = std::max<Index>(n, r.rmse_corrected.size());
  std::vector<std::string> header{"seed_truth", "seed_noise", "ok"};
  for (const auto& h : csv::numbered("rmse_uncorrected_", n)) header.push_back(h);
  for (const auto& h : csv::numbered("rmse_corrected_", n)) header.push_back(h);
  Matrix rows = Matrix::Constant(static_cast<Index>(sweep.runs.size()), 3 + 2 * n,
                                 std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < sweep.runs.size(); ++i) {
    const Report& r = sweep.runs[i];
    const auto row = static_cast<Index>(i);
    rows(row, 0) = static_cast<double>(r.seed_truth);
    rows(row, 1) = static_cast<double>(r.seed_noise);
    rows(row, 2) = r.ok ? 1.0 : 0.0;
    if (r.rmse_uncorrected.size() == n) rows.row(row).segment(3, n) = r.rmse_uncorrected.transpose();
    if (r.rmse_corrected.size() == n) rows.row(row).segment(3 + n, n) = r.rmse_corrected.transpose();
  }
  csv::write(dir / "sweep.csv", header, rows);

  json j;
  j["library_version"] = kLibraryVersion;
  j["runs"] = sweep.runs.size();
  j["failures"] = sweep.failures;
  j["mean_uncorrected"] = vector_json(sweep.mean_uncorrected);
  j["std_uncorrected"] = vector_json(sweep.std_uncorrected);
  j["mean_corrected"] = vector_json(sweep.mean_corrected);
  j["std_corrected"] = vector_json(sweep.std_corrected);
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIntegrationBlowup:
    case ErrorCode::kFilterDivergence:
    case ErrorCode::kNumericalFailure:
    case ErrorCode::kInvalidCovariance:
      return 2;
    default:
      return 1;
  }
}

}  // namespace omec
