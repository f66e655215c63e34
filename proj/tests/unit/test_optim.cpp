#include <cmath>

#include "doctest.h"
#include "physiofuse/optim.hpp"

using namespace physiofuse;
using TD = Tensor<double>;

TEST_CASE("adam matches a scalar reference over several steps") {
  AdamConfig cfg;
  cfg.l2_decay = 0.01;
  auto w = TD::from({1}, {0.5}, true);
  Adam<double> opt(cfg, {{"w", w}});
  double theta = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    // loss = w², gradient 2w
    opt.zero_grad();
    backward(sum(mul(w, w)));
    opt.step(0.1);
    const double g = 2 * theta + cfg.l2_decay * theta;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + cfg.epsilon);
    CHECK(w.at(0) == doctest::Approx(theta).epsilon(1e-14));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("adam refuses a parameter without gradient and keeps state only for its own parameters") {
  auto a = TD::from({2}, {1.0, 2.0}, true);
  auto b = TD::from({2}, {1.0, 2.0}, true);
  Adam<double> opt({}, {{"a", a}});
  CHECK(opt.state_names() == std::vector<std::string>{"a"});
  CHECK_THROWS_AS(opt.step(0.1), ContractError);
  backward(sum(add(a, b)));
  opt.step(0.1);
  CHECK(b.at(0) == 1.0);
  CHECK(a.at(0) != 1.0);
}

TEST_CASE("clipping bounds the global gradient norm") {
  auto w = TD::from({2}, {0.0, 0.0}, true);
  Adam<double> opt({}, {{"w", w}});
  opt.set_clip_norm(1.0);
  backward(sum(mul(w, TD::from({2}, {300.0, 400.0}))));
  opt.step(0.1);
  // First Adam step moves each coordinate by ≈ lr regardless of scale; the sign must survive.
  CHECK(w.at(0) == doctest::Approx(-0.1));
  CHECK(w.at(1) == doctest::Approx(-0.1));
}

TEST_CASE("warmup then linear decay") {
  const LrSchedule s = WarmupLinearDecay{1e-3, 10, 100};
  CHECK(lr_at(s, 1) == doctest::Approx(1e-4));
  CHECK(lr_at(s, 10) == doctest::Approx(1e-3));
  CHECK(lr_at(s, 55) == doctest::Approx(5e-4));
  CHECK(lr_at(s, 100) == 0.0);
  for (std::size_t e = 11; e < 100; ++e) CHECK(lr_at(s, e) < lr_at(s, e - 1));
}

TEST_CASE("step decay") {
  const LrSchedule s = StepDecay{1e-4, 0.65, 45};
  CHECK(lr_at(s, 1) == doctest::Approx(1e-4));
  CHECK(lr_at(s, 44) == doctest::Approx(1e-4));
  CHECK(lr_at(s, 45) == doctest::Approx(6.5e-5));
  CHECK(lr_at(s, 90) == doctest::Approx(1e-4 * 0.65 * 0.65));
}
