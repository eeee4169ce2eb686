#include <doctest.h>

#include "omec/harness.hpp"

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace omec;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("omec_h_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

ScenarioConfig small_l63() {
  ScenarioConfig c = preset("l63");
  c.length = 600;
  c.burn_in = 200;
  c.omec.max_iterations = 2;
  c.omec.neighbors = 20;
  c.seed_truth = 4;
  c.seed_noise = 1004;
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OMEC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("presets") {
  CHECK(preset_names() == std::vector<std::string>{"l63", "l96_10", "l96_40"});

  const ScenarioConfig l63 = preset("l63");
  CHECK(l63.model.kind == ModelKind::kLorenz63);
  CHECK(l63.model.parameter("sigma") == 10.0);
  CHECK(l63.model.parameter("rho") == 28.0);
  CHECK(l63.model.parameter("beta") == 8.0 / 3.0);
  CHECK(l63.model.dt == 0.1);
  CHECK(l63.length == 8000);
  CHECK(l63.noise_cov == 2.0 * Matrix::Identity(3, 3));
  CHECK(l63.omec.delays == 2);
  CHECK(l63.omec.neighbors == 100);
  CHECK(l63.omec.max_iterations == 20);
  CHECK(l63.omec.localization == Localization::kNone);
  Vector x(3);
  x << 0.5, 1.0, 2.0;
  CHECK(l63.true_obs.evaluate(x) == Vector((Vector(3) << std::sin(0.5), -5.0, std::cos(2.0)).finished()));
  CHECK(l63.wrong_obs.evaluate(x) == x);

  const ScenarioConfig k10 = preset("l96_10");
  CHECK(k10.model.kind == ModelKind::kLorenz96);
  CHECK(k10.model.dimension == 10);
  CHECK(k10.model.parameter("F") == 8.0);
  CHECK(k10.model.parameter("a") == 1.0);
  CHECK(k10.length == 10000);
  CHECK(k10.noise_cov == 2.0 * Matrix::Identity(10, 10));
  CHECK(k10.omec.max_iterations == 15);
  CHECK(k10.omec.localization == Localization::kNone);

  const ScenarioConfig k40 = preset("l96_40");
  CHECK(k40.model.dimension == 40);
  CHECK(k40.omec.localization == Localization::kRing3);
  // Node 5 (row 4): 1.1 x_4 + 1.0 x_5 + 1.2 x_6, columns 3..5 zero-based.
  const Matrix& c = k40.true_obs.matrix();
  CHECK(c(4, 3) == 1.1);
  CHECK(c(4, 4) == 1.0);
  CHECK(c(4, 5) == 1.2);
  CHECK((c.row(4).array() != 0.0).count() == 3);

  CHECK(code_of([] { preset("l95"); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("presets are frozen") {
  // Serialized form hashed once and pinned; any change to a preset default
  // shows up here.
  CHECK(fnv1a64(serialize(preset("l63"))) == 0x4fcb38e07de62302ull);
  CHECK(fnv1a64(serialize(preset("l96_10"))) == 0x040abaf80e8e2e2full);
  CHECK(fnv1a64(serialize(preset("l96_40"))) == 0x7a2d1ac003822915ull);
  CHECK(fnv1a64("") == 14695981039346656037ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);

  ScenarioConfig c = preset("l63");
  const std::string before = serialize(c);
  c.output_dir = "/somewhere/else";
  CHECK(serialize(c) == before);
  c.seed_truth = 2;
  CHECK(serialize(c) != before);
}

TEST_CASE("settings and config files") {
  ScenarioConfig c = preset("l63");
  apply_setting(c, "max-iter", "7");
  apply_setting(c, "neighbors", "50");
  apply_setting(c, "delays", "3");
  apply_setting(c, "no-adaptive", "true");
  apply_setting(c, "diag-linear-system", "1");
  apply_setting(c, "tau", "inf");
  apply_setting(c, "threshold", "0.25");
  apply_setting(c, "localization", "none");
  apply_setting(c, "seed-truth", "18446744073709551615");
  CHECK(c.omec.max_iterations == 7);
  CHECK(c.omec.neighbors == 50);
  CHECK(c.omec.delays == 3);
  CHECK_FALSE(c.filter.adaptive);
  CHECK(c.omec.estimator == ResidualEstimator::kLinearSystem);
  CHECK(std::isinf(c.filter.adaptive_window));
  CHECK(*c.omec.delta_g_threshold == 0.25);
  CHECK(c.seed_truth == 18446744073709551615ull);

  CHECK(code_of([&] { apply_setting(c, "colour", "blue"); }) == ErrorCode::kInvalidConfig);
  CHECK(code_of([&] { apply_setting(c, "max-iter", "lots"); }) == ErrorCode::kInvalidConfig);
  CHECK(code_of([&] { apply_setting(c, "localization", "ring5"); }) == ErrorCode::kInvalidConfig);

  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "run.cfg");
    f << "# scenario\npreset = l96_10\nmax-iter=9\n\nneighbors = 40   # fewer\nseed-noise=77\n";
  }
  const auto file = read_config_file(dir / "run.cfg");
  CHECK(file.size() == 4);
  const ScenarioConfig loaded = load_config(file, {{"max-iter", "3"}}, "l63");
  CHECK(loaded.name == "l96_10");
  CHECK(loaded.omec.max_iterations == 3);  // flag beats file
  CHECK(loaded.omec.neighbors == 40);
  CHECK(loaded.seed_noise == 77);
  CHECK(load_config({}, {{"preset", "l63"}}, "").name == "l63");
  CHECK(code_of([] { load_config({}, {}, ""); }) == ErrorCode::kInvalidConfig);
  {
    std::ofstream f(dir / "bad.cfg");
    f << "preset l63\n";
  }
  CHECK(code_of([&] { read_config_file(dir / "bad.cfg"); }) == ErrorCode::kInvalidConfig);
  CHECK(code_of([&] { read_config_file(dir / "missing.cfg"); }) == ErrorCode::kInvalidConfig);
  fs::remove_all(dir);
}

TEST_CASE("validation") {
  ScenarioConfig c = preset("l63");
  c.wrong_obs = ObservationFunction::identity(2);
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kInvalidConfig);
  c = preset("l63");
  c.omec.localization = Localization::kRing3;
  c.true_obs = ObservationFunction::linear(Matrix::Ones(2, 3));
  c.wrong_obs = ObservationFunction::linear(Matrix::Ones(2, 3));
  c.noise_cov = Matrix::Identity(2, 2);
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kInvalidConfig);
  c = preset("l63");
  c.omec.neighbors = c.length;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("exit codes") {
  CHECK(exit_code(ErrorCode::kInvalidConfig) == 1);
  CHECK(exit_code(ErrorCode::kInvalidInput) == 1);
  CHECK(exit_code(ErrorCode::kIo) == 1);
  CHECK(exit_code(ErrorCode::kIntegrationBlowup) == 2);
  CHECK(exit_code(ErrorCode::kFilterDivergence) == 2);
  CHECK(exit_code(ErrorCode::kNumericalFailure) == 2);
}

TEST_CASE("scenario run, artifacts and report round trip") {
  const ScenarioConfig base = small_l63();
  const Report memory = run_scenario(base);
  REQUIRE(memory.ok);
  CHECK(memory.iterations == 3);
  CHECK(memory.rmse_by_iteration.size() == 3);
  CHECK(memory.rmse_uncorrected == memory.rmse_by_iteration.front());
  CHECK(memory.rmse_corrected == memory.rmse_by_iteration.back());
  CHECK(memory.trace_r_first > 0.0);

  ScenarioConfig disk = base;
  disk.output_dir = scratch("run");
  disk.write_neighbors = true;
  disk.write_covariances = true;
  const Report written = run_scenario(disk);
  REQUIRE(written.ok);
  // Writing artifacts changes no numbers.
  CHECK(written.rmse_by_iteration == memory.rmse_by_iteration);
  CHECK(written.nll == memory.nll);
  CHECK(written.trace_r_last == memory.trace_r_last);

  for (const char* f : {"truth.csv", "observations.csv", "iterations.csv", "corrected_observations.csv",
                        "filter_iter0.csv", "filter_final.csv", "covariances_final.bin", "neighbors.csv",
                        "report.json", "rmse.svg", "corrections/iter_00.csv", "corrections/iter_02.csv"}) {
    INFO(f);
    CHECK(fs::exists(disk.output_dir / f));
  }

  const Report back = summarize_directory(disk.output_dir);
  CHECK(back.scenario == "l63");
  CHECK(back.seed_truth == 4);
  CHECK(back.seed_noise == 1004);
  CHECK(back.iterations == written.iterations);
  CHECK(back.rmse_by_iteration == written.rmse_by_iteration);
  CHECK(back.nll == written.nll);
  CHECK(back.trace_r_first == doctest::Approx(written.trace_r_first).epsilon(1e-14));
  CHECK(back.trace_r_last == doctest::Approx(written.trace_r_last).epsilon(1e-14));

  std::ifstream in(disk.output_dir / "report.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j["library_version"] == kLibraryVersion);
  CHECK(j["status"] == "ok");
  CHECK(j["delta_g"][0].is_null());
  CHECK(j["rmse_corrected"][1].get<double>() == written.rmse_corrected(1));
  CHECK(j["config"]["omec.neighbors"] == "20");

  const std::string summary = render_summary(back);
  CHECK(summary.find("uncorrected") != std::string::npos);
  fs::remove_all(disk.output_dir);
}

TEST_CASE("failed runs report instead of throwing") {
  ScenarioConfig c = small_l63();
  c.model.dt = 50.0;
  c.model.substeps = 1;
  c.output_dir = scratch("fail");
  const Report r = run_scenario(c);
  CHECK_FALSE(r.ok);
  CHECK(r.error_code == ErrorCode::kIntegrationBlowup);
  CHECK(exit_code(r.error_code) == 2);
  CHECK(fs::exists(c.output_dir / "report.json"));
  fs::remove_all(c.output_dir);

  ScenarioConfig bad = small_l63();
  bad.length = 0;
  CHECK(code_of([&] { run_scenario(bad); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("svg chart") {
  Report r;
  r.scenario = "demo";
  for (int i = 0; i < 4; ++i) r.rmse_by_iteration.push_back(Vector::Constant(3, 4.0 - i));
  const std::string svg = rmse_svg(r);
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  CHECK(lines == 3);

  Report wide;
  for (int i = 0; i < 3; ++i) wide.rmse_by_iteration.push_back(Vector::Constant(40, 1.0 + i));
  const std::string w = rmse_svg(wide);
  CHECK(w.find("node mean") != std::string::npos);
}

TEST_CASE("sweep") {
  ScenarioConfig c = small_l63();
  c.output_dir = scratch("sweep");
  const SweepResult s = run_sweep(c, {3, 5}, 2);
  REQUIRE(s.runs.size() == 2);
  CHECK(s.failures == 0);
  CHECK(s.runs[0].seed_truth == 3);
  CHECK(s.runs[0].seed_noise == 1003);
  CHECK(s.runs[1].seed_truth == 5);
  const Vector mean = (s.runs[0].rmse_corrected + s.runs[1].rmse_corrected) / 2.0;
  CHECK((s.mean_corrected - mean).cwiseAbs().maxCoeff() < 1e-12);
  const Vector sd = (s.runs[0].rmse_corrected - s.runs[1].rmse_corrected).cwiseAbs() / std::sqrt(2.0);
  CHECK((s.std_corrected - sd).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(fs::exists(c.output_dir / "seed_3" / "iterations.csv"));

  // Parallel workers give the same numbers as a single one.
  ScenarioConfig mem = small_l63();
  const SweepResult serial = run_sweep(mem, {3, 5}, 1);
  CHECK(serial.runs[1].rmse_by_iteration == s.runs[1].rmse_by_iteration);

  write_sweep(c.output_dir, s);
  CHECK(fs::exists(c.output_dir / "sweep.csv"));
  CHECK(fs::exists(c.output_dir / "summary.json"));
  CHECK(code_of([&] { run_sweep(mem, {}, 1); }) == ErrorCode::kInvalidConfig);
  fs::remove_all(c.output_dir);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  const std::string small = "--preset l63 --set length=500 --set burn-in=100 --max-iter 1 --neighbors 20";
  CHECK(run_cli("run " + small + " --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "iterations.csv"));
  CHECK(run_cli("report " + dir.string()) == 0);
  CHECK(run_cli("run --preset nope") == 1);
  CHECK(run_cli("run " + small + " --set colour=red") == 1);
  CHECK(run_cli("run --preset l63 --max-iter 0") == 1);
  CHECK(run_cli("frobnicate") == 1);
  {
    std::ofstream f(dir / "c.cfg");
    f << "preset=l63\nlength=500\nburn-in=100\nmax-iter=1\nneighbors=20\n";
  }
  CHECK(run_cli("run --config " + (dir / "c.cfg").string() + " --out " + (dir / "cfg").string()) == 0);
  CHECK(run_cli("sweep " + small + " --seeds 1,2 --threads 1 --out " + (dir / "sw").string()) == 0);
  CHECK(fs::exists(dir / "sw" / "seed_2" / "report.json"));
  CHECK(run_cli("sweep " + small + " --seeds 3-1") == 1);
  fs::remove_all(dir);
}
