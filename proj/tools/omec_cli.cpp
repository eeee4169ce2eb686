// omec: twin experiments with iterative observation-model-error correction.
//
//   omec run --preset l63 --out runs/l63
//   omec report runs/l63
//   omec sweep --preset l63 --seeds 1-10 --out runs/sweep

#include "omec/harness.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

using Settings = std::vector<std::pair<std::string, std::string>>;

// Flags shared by run and sweep; only the ones given on the command line
// override the preset and config file.
struct ScenarioFlags {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed_truth;
  std::optional<std::uint64_t> seed_noise;
  std::string out;
  std::optional<int> max_iter;
  std::optional<int> neighbors;
  std::optional<int> delays;
  bool no_adaptive = false;
  bool diag_linear_system = false;
  std::vector<std::string> extra;

  void attach(CLI::App& app, bool seeds) {
    app.add_option("--preset", preset, "l63, l96_10 or l96_40");
    app.add_option("--config", config, "key=value file; flags override it");
    if (seeds) {
      app.add_option("--seed-truth", seed_truth, "seed for the true trajectory");
      app.add_option("--seed-noise", seed_noise, "seed for the observation noise");
    }
    app.add_option("--out", out, "output directory");
    app.add_option("--max-iter", max_iter, "iteration cap M")->check(CLI::PositiveNumber);
    app.add_option("--neighbors", neighbors, "nearest neighbors N")->check(CLI::PositiveNumber);
    app.add_option("--delays", delays, "delay count d")->check(CLI::NonNegativeNumber);
    app.add_flag("--no-adaptive", no_adaptive, "freeze Q and R at their initial values");
    app.add_flag("--diag-linear-system", diag_linear_system,
                 "estimate corrections by solving the kernel linear system");
    app.add_option("--set", extra, "extra KEY=VALUE setting (repeatable)");
  }

  omec::ScenarioConfig build() const {
    Settings file;
    if (!config.empty()) file = omec::read_config_file(config);
    Settings cli;
    if (!preset.empty()) cli.emplace_back("preset", preset);
    if (seed_truth) cli.emplace_back("seed-truth", std::to_string(*seed_truth));
    if (seed_noise) cli.emplace_back("seed-noise", std::to_string(*seed_noise));
    if (!out.empty()) cli.emplace_back("out", out);
    if (max_iter) cli.emplace_back("max-iter", std::to_string(*max_iter));
    if (neighbors) cli.emplace_back("neighbors", std::to_string(*neighbors));
    if (delays) cli.emplace_back("delays", std::to_string(*delays));
    if (no_adaptive) cli.emplace_back("no-adaptive", "true");
    if (diag_linear_system) cli.emplace_back("diag-linear-system", "true");
    for (const std::string& kv : extra) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw omec::Error(omec::ErrorCode::kInvalidConfig, "--set expects KEY=VALUE, got " + kv);
      }
      cli.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return omec::load_config(file, cli, "");
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw std::invalid_argument("range");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      }
    } catch (const std::exception&) {
      throw omec::Error(omec::ErrorCode::kInvalidConfig, "bad seed list '" + text + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

int run_command(const ScenarioFlags& flags) {
  const omec::ScenarioConfig config = flags.build();
  const omec::Report report = omec::run_scenario(config);
  std::cout << omec::render_summary(report);
  if (!config.output_dir.empty()) std::cout << "artifacts in " << config.output_dir.string() << '\n';
  if (!report.ok) {
    std::cerr << "omec: " << report.error << '\n';
    return omec::exit_code(report.error_code);
  }
  return 0;
}

int report_command(const std::string& dir) {
  const omec::Report report = omec::summarize_directory(dir);
  std::cout << omec::render_summary(report);
  std::ofstream svg(std::filesystem::path(dir) / "rmse.svg", std::ios::binary);
  if (svg) svg << omec::rmse_svg(report);
  return report.ok ? 0 : omec::exit_code(report.error_code);
}

int sweep_command(const ScenarioFlags& flags, const std::string& seed_text, unsigned threads) {
  const omec::ScenarioConfig config = flags.build();
  const std::vector<std::uint64_t> seeds = parse_seeds(seed_text);
  const omec::SweepResult sweep = omec::run_sweep(config, seeds, threads);
  for (const omec::Report& r : sweep.runs) {
    std::cout << "seed " << r.seed_truth << ": " << (r.ok ? "ok" : "failed");
    if (r.rmse_corrected.size() > 0) {
      std::cout << "  uncorrected " << r.rmse_uncorrected.transpose() << "  corrected "
                << r.rmse_corrected.transpose();
    }
    std::cout << '\n';
  }
  if (sweep.mean_corrected.size() > 0) {
    std::cout << "mean uncorrected " << sweep.mean_uncorrected.transpose() << "  (sd "
              << sweep.std_uncorrected.transpose() << ")\n";
    std::cout << "mean corrected   " << sweep.mean_corrected.transpose() << "  (sd "
              << sweep.std_corrected.transpose() << ")\n";
  }
  if (!config.output_dir.empty()) omec::write_sweep(config.output_dir, sweep);
  if (sweep.failures > 0) {
    std::cerr << "omec: " << sweep.failures << " of " << sweep.runs.size() << " runs failed\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative observation-model-error correction for ensemble Kalman filtering"};
  app.require_subcommand(1);

  ScenarioFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "run one twin experiment");
  run_flags.attach(*run, true);

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "re-render the summary of a run directory");
  report->add_option("dir", report_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  ScenarioFlags sweep_flags;
  std::string seeds = "1-10";
  unsigned threads = 0;
  CLI::App* sweep = app.add_subcommand("sweep", "run a preset over several seeds");
  sweep_flags.attach(*sweep, false);
  sweep->add_option("--seeds", seeds, "seed list, e.g. 1-10 or 1,4,7 (noise seed = seed + 1000)");
  sweep->add_option("--threads", threads, "worker count (default OMEC_THREADS or all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return run_command(run_flags);
    if (*report) return report_command(report_dir);
    if (*sweep) return sweep_command(sweep_flags, seeds, threads);
  } catch (const omec::Error& err) {
    std::cerr << "omec: " << err.what() << '\n';
    return omec::exit_code(err.code());
  } catch (const std::exception& err) {
    std::cerr << "omec: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
