#include "dynens/params.hpp"
#include "dynens/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace dynens;

namespace {

// Scalar Adam written out by hand.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double x, double g, double lr = 1e-3) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    return x - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST_CASE("first Adam step moves each entry by the learning rate") {
  ParameterSet set;
  Parameter& p = set.add("w", Matrix::Constant(2, 2, 1.0));
  p.grad << 0.5, -2.0, 1e-3, 7.0;
  Adam adam({&set});
  adam.step();
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
  CHECK(p.value(0, 1) == doctest::Approx(1.0 + 1e-3).epsilon(1e-9));
  CHECK(p.value(1, 0) == doctest::Approx(1.0 - 1e-3 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
  CHECK(p.value(1, 1) == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
  CHECK(p.grad.isZero());
  CHECK(adam.step_count() == 1);
}

TEST_CASE("Adam follows the bias-corrected recurrence") {
  ParameterSet set;
  Parameter& p = set.add("w", Matrix::Constant(1, 1, 0.3));
  Adam adam({&set});
  ScalarAdam ref;
  double x = 0.3;
  const double grads[] = {1.0, -1.0, 0.25, 3.0, -0.5, 0.0, 2.0};
  for (double g : grads) {
    p.grad(0, 0) = g;
    adam.step();
    x = ref.step(x, g);
    CHECK(p.value(0, 0) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("sets sharing one optimizer share the step counter") {
  ParameterSet a, b;
  a.add("a", Matrix::Constant(1, 1, 0.0));
  b.add("b", Matrix::Constant(1, 1, 0.0));
  Adam adam({&a, &b});
  ScalarAdam ra, rb;
  double xa = 0.0, xb = 0.0;
  for (int t = 0; t < 3; ++t) {
    a[0].grad(0, 0) = 1.0 + t;
    b[0].grad(0, 0) = -0.5 * t;
    adam.step();
    xa = ra.step(xa, 1.0 + t);
    xb = rb.step(xb, -0.5 * t);
  }
  CHECK(a[0].value(0, 0) == doctest::Approx(xa).epsilon(1e-12));
  CHECK(b[0].value(0, 0) == doctest::Approx(xb).epsilon(1e-12));
}

TEST_CASE("non-finite gradients are rejected before any update") {
  ParameterSet set;
  Parameter& p = set.add("w", Matrix::Constant(1, 2, 1.0));
  p.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  Adam adam({&set});
  CHECK_THROWS_AS(adam.step(), NonFiniteGradient);
  CHECK(p.value(0, 0) == 1.0);
}

TEST_CASE("reset clears moments and the step counter") {
  ParameterSet set;
  Parameter& p = set.add("w", Matrix::Constant(1, 1, 0.0));
  Adam adam({&set});
  p.grad(0, 0) = 1.0;
  adam.step();
  adam.reset();
  CHECK(adam.step_count() == 0);
  CHECK(p.first_moment.isZero());
  CHECK(p.second_moment.isZero());
}

TEST_CASE("checkpoints round-trip values, moments and the step") {
  Rng rng(3);
  ParameterSet set;
  set.add("a", uniform_fan_in(3, 4, rng));
  set.add("b", Matrix::Constant(1, 4, -0.25));
  set[0].first_moment.setConstant(0.125);
  set[1].second_moment.setConstant(3.5);

  const auto path = std::filesystem::temp_directory_path() / "dynens_ckpt_test.json";
  save_checkpoint(path, set, 17);
  std::int64_t step = 0;
  ParameterSet back = load_checkpoint(path, &step);
  std::filesystem::remove(path);
  CHECK(step == 17);
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").value == set.at("a").value);
  CHECK(back.at("a").first_moment == set.at("a").first_moment);
  CHECK(back.at("b").second_moment == set.at("b").second_moment);

  ParameterSet wrong;
  wrong.add("a", Matrix::Zero(4, 3));
  wrong.add("b", Matrix::Zero(1, 4));
  CHECK_THROWS(from_json(to_json(set), wrong));
}

TEST_CASE("fan-in initialisation stays inside its bound") {
  Rng rng(1);
  const Matrix w = uniform_fan_in(25, 40, rng);
  CHECK(w.rows() == 25);
  CHECK(w.cols() == 40);
  CHECK(w.cwiseAbs().maxCoeff() <= 0.2);
  CHECK(w.cwiseAbs().maxCoeff() > 0.15);
}

TEST_CASE("named streams are reproducible and independent") {
  CHECK(derive_seed(5, "data") == derive_seed(5, "data"));
  CHECK(derive_seed(5, "data") != derive_seed(5, "init"));
  CHECK(derive_seed(5, "data") != derive_seed(6, "data"));
  Rng a = make_rng(9, "batch/x"), b = make_rng(9, "batch/x");
  CHECK(a() == b());
}
