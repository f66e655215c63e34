#include <cmath>

#include "doctest.h"
#include "physiofuse/gradcheck.hpp"

using namespace physiofuse;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return TD::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul matches the triple loop") {
  Rng rng(1);
  auto a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("softmax rows are distributions and shift invariant") {
  auto x = TD::from({2, 3}, {1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0});
  const auto y = softmax_rows(x);
  CHECK(y.at(0, 0) + y.at(0, 1) + y.at(0, 2) == doctest::Approx(1.0));
  CHECK(y.at(1, 0) == doctest::Approx(1.0 / 3.0));
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(y.at(0, 2) == doctest::Approx(std::exp(3.0) / denom));
}

TEST_CASE("layer norm gives zero mean and unit variance") {
  Rng rng(2);
  auto x = random_tensor({3, 8}, rng);
  const auto y = layer_norm_rows(x, TD::full({8}, 1.0), TD::zeros({8}));
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mu += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu) / 8;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("conv1d matches direct cross-correlation") {
  Rng rng(3);
  auto x = random_tensor({2, 10}, rng), w = random_tensor({4, 2, 3}, rng), b = random_tensor({4}, rng);
  for (std::size_t pad : {0u, 1u}) {
    const auto y = conv1d(x, w, b, pad);
    const std::size_t out = 10 + 2 * pad - 3 + 1;
    REQUIRE(y.shape() == Shape{4, out});
    for (std::size_t o = 0; o < 4; ++o) {
      for (std::size_t t = 0; t < out; ++t) {
        double s = b.at(o);
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t k = 0; k < 3; ++k) {
            const long src = static_cast<long>(t + k) - static_cast<long>(pad);
            if (src >= 0 && src < 10) s += w.at((o * 2 + c) * 3 + k) * x.at(c, static_cast<std::size_t>(src));
          }
        }
        CHECK(y.at(o, t) == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("bce with logits is stable for large logits") {
  const auto z = TD::from({4, 1}, {800.0, -800.0, 0.0, 2.0});
  const auto y = TD::from({4, 1}, {1.0, 0.0, 1.0, 0.0});
  const double expected = (0.0 + 0.0 + std::log(2.0) + (2.0 + std::log1p(std::exp(-2.0)))) / 4.0;
  CHECK(bce_with_logits(z, y).item() == doctest::Approx(expected));
  CHECK(std::isfinite(bce_with_logits(TD::from({1, 1}, {-800.0}), TD::from({1, 1}, {1.0})).item()));
}

TEST_CASE("masked mse ignores unmasked rows") {
  const auto pred = TD::from({3, 1}, {1.0, 100.0, 3.0});
  const auto target = TD::from({3, 1}, {0.0, 0.0, 0.0});
  CHECK(mse_masked(pred, target, {true, false, true}).item() == doctest::Approx(5.0));
  CHECK_THROWS(mse_masked(pred, target, {false, false, false}));
}

TEST_CASE("dropout is identity in eval and unbiased in train") {
  Rng rng(4);
  const auto x = TD::full({1, 20000}, 1.0);
  CHECK(sum(dropout(x, 0.5, rng, false)).item() == doctest::Approx(20000.0));
  const double kept = sum(dropout(x, 0.5, rng, true)).item() / 20000.0;
  CHECK(kept == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("log rejects non-positive input") { CHECK_THROWS_AS(log(TD::from({2}, {1.0, 0.0})), DomainError); }

TEST_CASE("finite differences agree with reverse mode for every op") {
  const auto report = run_gradcheck_suite(tiny_model_config(Modality::kEcg), tiny_model_config(Modality::kEeg), 12);
  for (const auto& e : report.entries) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
    CHECK(e.coordinates > 0);
  }
}
