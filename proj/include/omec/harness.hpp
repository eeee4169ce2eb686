#pragma once

#include "omec/common.hpp"
#include "omec/correction.hpp"
#include "omec/dynamics.hpp"
#include "omec/enkf.hpp"
#include "omec/observation.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace omec {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Twin experiment: truth from the model, observations through h, filtering
// and correction with the wrong g.
struct ScenarioConfig {
  std::string name = "custom";
  ModelSpec model;
  ObservationFunction true_obs;
  ObservationFunction wrong_obs;
  Index length = 8000;
  Index burn_in = 1000;
  Matrix noise_cov;
  std::uint64_t seed_truth = 1;
  std::uint64_t seed_noise = 1001;
  FilterConfig filter;
  OmecConfig omec;
  // Empty runs in memory without writing artifacts.
  std::filesystem::path output_dir;
  bool write_neighbors = false;
  bool write_covariances = false;  // final pass only
  bool write_svg = true;

  void validate() const;
};

std::vector<std::string> preset_names();
// l63, l96_10, l96_40; throws kInvalidConfig for anything else.
ScenarioConfig preset(const std::string& name);

// Stable `key=value` lines covering every numeric setting; the output
// directory is excluded so it cannot change the hash.
std::string serialize(const ScenarioConfig& config);
std::uint64_t fnv1a64(const std::string& text);

// Keys mirror the CLI flags: seed-truth, seed-noise, max-iter, neighbors,
// delays, no-adaptive, diag-linear-system, out, plus length, burn-in, tau,
// threshold, localization, ensemble-size, write-neighbors,
// write-covariances, write-svg. `preset` is handled by the loader.
void apply_setting(ScenarioConfig& config, const std::string& key, const std::string& value);

// Flat key=value file; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// Preset from `preset` in the file settings or `fallback_preset`, then file
// settings, then overrides (CLI flags) in order.
ScenarioConfig load_config(const std::vector<std::pair<std::string, std::string>>& file_settings,
                           const std::vector<std::pair<std::string, std::string>>& overrides,
                           const std::string& fallback_preset);

struct Report {
  std::string scenario;
  bool ok = true;
  ErrorCode error_code = ErrorCode::kNumericalFailure;
  std::string error;
  std::uint64_t seed_truth = 0;
  std::uint64_t seed_noise = 0;
  Index iterations = 0;  // filter passes completed
  bool converged = false;
  Vector rmse_uncorrected;
  Vector rmse_corrected;
  std::vector<Vector> rmse_by_iteration;
  std::vector<double> delta_g;  // NaN at iteration 0
  std::vector<double> nll;
  double trace_r_first = 0.0;  // stabilized mean trace(R), first pass
  double trace_r_last = 0.0;   // and last pass
  double runtime_seconds = 0.0;
  std::map<std::string, std::string> config;
};

struct ScenarioRun {
  Trajectory truth;
  ObservationSeries observations;
  OmecResult result;
  Report report;
};

// Generates the data, iterates and writes artifacts when output_dir is set.
// Module errors end up in the report (ok = false) with partial artifacts;
// an invalid configuration throws.
ScenarioRun execute_scenario(const ScenarioConfig& config);
Report run_scenario(const ScenarioConfig& config);

// Rebuilds the report numbers from iterations.csv and the filter CSVs of a
// run directory; report.json supplies the metadata only.
Report summarize_directory(const std::filesystem::path& dir);

std::string report_json(const Report& report);
std::string render_summary(const Report& report);
// Self-contained SVG of RMSE against iteration, one line per component.
std::string rmse_svg(const Report& report);

struct SweepResult {
  std::vector<Report> runs;  // one per seed, in seed order
  Vector mean_uncorrected;
  Vector std_uncorrected;
  Vector mean_corrected;
  Vector std_corrected;
  Index failures = 0;
};

// Seed s uses truth seed s and noise seed s + 1000; each run writes to
// output_dir/seed_<s> when output_dir is set. Threads default to
// OMEC_THREADS or the hardware concurrency.
SweepResult run_sweep(const ScenarioConfig& base, const std::vector<std::uint64_t>& seeds,
                      unsigned threads = 0);
unsigned sweep_threads();
void write_sweep(const std::filesystem::path& dir, const SweepResult& sweep);

// 0 success, 1 invalid configuration or input, 2 numerical failure.
int exit_code(ErrorCode code);

}  // namespace omec
