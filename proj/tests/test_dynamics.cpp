#include <doctest.h>

#include "omec/dynamics.hpp"
#include "omec/observation.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace omec;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ModelSpec noiseless_l63(int substeps) {
  ModelSpec m = lorenz63_model();
  m.process_noise_cov = Matrix::Zero(3, 3);
  m.substeps = substeps;
  return m;
}

// Reference states from a tight-tolerance DOP853 integration (scipy,
// rtol = atol = 1e-13) starting at [1, 1, 1].
const Vector kL63At01 = vec({2.133107618644542, 4.471420177185396, 1.1138988857786347});
const Vector kL63At1 = vec({-9.378570010925383, -8.357033788427014, 29.362325337363757});

}  // namespace

TEST_CASE("lorenz63 rhs") {
  const Vector r = lorenz63_rhs(vec({1, 1, 1}));
  CHECK(r(0) == 0.0);
  CHECK(r(1) == 26.0);
  CHECK(r(2) == doctest::Approx(1.0 - 8.0 / 3.0));
  CHECK(lorenz63_rhs(Vector::Zero(3)).isZero(0.0));
  const double c = std::sqrt(72.0);
  CHECK(lorenz63_rhs(vec({c, c, 27})).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(lorenz63_rhs(vec({-c, -c, 27})).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(lorenz63_rhs(vec({1, std::nan(""), 0})), Error);
  CHECK((lorenz63_model().rhs(vec({1, 1, 1})) - r).isZero(0.0));
}

TEST_CASE("lorenz96 rhs") {
  CHECK(lorenz96_rhs(vec({1, 2, 3, 4}), 1.0, 8.0) == vec({3, 5, 11, 1}));
  CHECK(lorenz96_rhs(Vector::Constant(10, 8.0), 1.0, 8.0).isZero(0.0));
  CHECK(lorenz96_rhs(Vector::Zero(6), 1.0, 8.0) == Vector::Constant(6, 8.0));
  CHECK((lorenz96_model(4).rhs(vec({1, 2, 3, 4})) - vec({3, 5, 11, 1})).isZero(0.0));
  try {
    lorenz96_rhs(Vector::Zero(3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidModel);
  }
  CHECK_THROWS_AS(lorenz96_model(3).validate(), Error);
}

TEST_CASE("model validation") {
  ModelSpec m = lorenz63_model();
  m.dt = 0.0;
  CHECK_THROWS_AS(m.validate(), Error);
  m = lorenz63_model();
  m.substeps = 0;
  CHECK_THROWS_AS(m.validate(), Error);
  m = lorenz63_model();
  m.process_noise_cov = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(m.validate(), Error);
  CHECK_THROWS_AS(custom_model(2, nullptr).validate(), Error);
}

TEST_CASE("rk4 matches a tight reference integration") {
  const Trajectory t = integrate(noiseless_l63(10), vec({1, 1, 1}), 10, 1);
  CHECK((t.states.row(0).transpose() - kL63At01).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((t.states.row(9).transpose() - kL63At1).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("rk4 substep halving: Richardson self-consistency and fourth order") {
  const Trajectory a = integrate(noiseless_l63(10), vec({1, 1, 1}), 10, 1);
  const Trajectory b = integrate(noiseless_l63(20), vec({1, 1, 1}), 10, 1);
  const Trajectory c = integrate(noiseless_l63(40), vec({1, 1, 1}), 10, 1);
  const double d1 = (a.states - b.states).cwiseAbs().maxCoeff();
  const double d2 = (b.states - c.states).cwiseAbs().maxCoeff();
  INFO("halving differences " << d1 << " " << d2);
  CHECK(d1 < 1e-3);
  CHECK(d1 / d2 == doctest::Approx(16.75).epsilon(0.01));  // numpy rk4: 6.7707e-4 / 4.0412e-5

  // One interval with 2 and 4 substeps against the reference.
  const double e2 = (integrate(noiseless_l63(2), vec({1, 1, 1}), 1, 1).states.row(0).transpose() - kL63At01)
                        .norm();
  const double e4 = (integrate(noiseless_l63(4), vec({1, 1, 1}), 1, 1).states.row(0).transpose() - kL63At01)
                        .norm();
  const double ratio = e2 / e4;
  INFO("error ratio " << ratio);
  CHECK(ratio >= 8.0);
  CHECK(ratio <= 32.0);
}

TEST_CASE("integrate: first row is one interval after x0; constant model; blowup") {
  const ModelSpec m = noiseless_l63(10);
  const Trajectory t = integrate(m, vec({1, 1, 1}), 3, 7);
  CHECK((t.states.row(0).transpose() - propagate(m, vec({1, 1, 1}))).isZero(0.0));

  const ModelSpec still = custom_model(4, [](const Vector&, Vector& out) { out.setZero(); });
  const Vector x0 = vec({0.5, -2, 3, 1e3});
  const Trajectory s = integrate(still, x0, 25, 3);
  for (Index k = 0; k < s.length(); ++k) CHECK(s.states.row(k).transpose() == x0);

  const ModelSpec blow = custom_model(1, [](const Vector& x, Vector& out) { out = x.array().square(); });
  try {
    integrate(blow, vec({10.0}), 50, 1);
    FAIL("expected blowup");
  } catch (const StepError& e) {
    CHECK(e.code() == ErrorCode::kIntegrationBlowup);
    CHECK(e.step() >= 0);
  }
}

TEST_CASE("integrate is deterministic; the seed only moves the noise") {
  const ModelSpec m = lorenz63_model();
  const Trajectory a = integrate(m, vec({1, 2, 3}), 200, 42);
  const Trajectory b = integrate(m, vec({1, 2, 3}), 200, 42);
  CHECK(a.states == b.states);
  const Trajectory c = integrate(m, vec({1, 2, 3}), 200, 43);
  CHECK(a.states != c.states);

  const ModelSpec quiet = noiseless_l63(10);
  CHECK(integrate(quiet, vec({1, 2, 3}), 50, 1).states == integrate(quiet, vec({1, 2, 3}), 50, 2).states);

  const Trajectory g1 = generate_truth(m, 100, 50, 5);
  const Trajectory g2 = generate_truth(m, 100, 50, 5);
  CHECK(g1.states == g2.states);
  CHECK(g1.t0 == doctest::Approx(5.1));
}

TEST_CASE("lorenz96 one interval against the reference") {
  ModelSpec m = lorenz96_model(5);
  const Trajectory t = integrate(m, vec({8.01, 8, 8, 8, 8}), 1, 1);
  const Vector ref = vec({8.00617314963786, 7.99387920840709, 7.994553449458801, 8.0051696611403,
                          8.009264148698236});
  CHECK((t.states.row(0).transpose() - ref).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("observe: zero noise is exact, noise statistics match R") {
  const Trajectory truth = generate_truth(lorenz63_model(), 8000, 100, 1);
  const ObservationFunction h = ObservationFunction::componentwise(
      {{ElementaryMap::kSin, 0.0}, {ElementaryMap::kShift, -6.0}, {ElementaryMap::kCos, 0.0}});
  const ObservationSeries exact = observe(truth, h, Matrix::Zero(3, 3), 2);
  for (Index k = 0; k < 50; ++k) {
    CHECK(exact.observations.row(k).transpose() == h.evaluate(truth.states.row(k).transpose()));
  }

  Matrix r(3, 3);
  r << 2.0, 0.8, 0.0, 0.8, 1.5, 0.3, 0.0, 0.3, 1.0;
  const ObservationSeries noisy = observe(truth, h, r, 2);
  const Matrix v = noisy.observations - exact.observations;
  const Matrix centered = v.rowwise() - v.colwise().mean();
  const Matrix sample = centered.transpose() * centered / static_cast<double>(v.rows() - 1);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      INFO("entry " << i << "," << j << " sample " << sample(i, j));
      CHECK(std::abs(sample(i, j) - r(i, j)) <= 0.1 * std::sqrt(r(i, i) * r(j, j)));
    }
  }

  const ObservationSeries twice = observe(truth, h, 2.0 * Matrix::Identity(3, 3), 9);
  CHECK(twice.observations == observe(truth, h, 2.0 * Matrix::Identity(3, 3), 9).observations);
  CHECK_THROWS_AS(observe(truth, ObservationFunction::identity(2), Matrix::Identity(2, 2), 1), Error);
  CHECK_THROWS_AS(observe(truth, h, Matrix::Identity(2, 2), 1), Error);
}

TEST_CASE("trajectory and observation csv round trip") {
  const auto dir = std::filesystem::temp_directory_path() / ("omec_dyn_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const Trajectory t = generate_truth(lorenz63_model(), 40, 10, 3);
  write_csv(dir / "truth.csv", t);
  const Trajectory back = read_trajectory_csv(dir / "truth.csv");
  CHECK(back.states == t.states);
  CHECK(back.t0 == doctest::Approx(t.t0));
  CHECK(back.dt == doctest::Approx(t.dt));

  const ObservationSeries o = observe(t, ObservationFunction::identity(3), 2.0 * Matrix::Identity(3, 3), 4);
  write_csv(dir / "obs.csv", o);
  CHECK(read_observation_csv(dir / "obs.csv").observations == o.observations);
  std::filesystem::remove_all(dir);
}
