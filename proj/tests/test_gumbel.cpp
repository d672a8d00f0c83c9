#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mcs/ops.hpp"
#include "mcs/rng.hpp"

using namespace mcs;

TEST_CASE("gumbel_softmax output sums to one") {
  RngStream rng(42);
  Tensor logits = Tensor::from({5}, {0.3, -1.0, 2.0, 0.0, 0.7});
  for (int trial = 0; trial < 200; ++trial) {
    Tensor y = gumbel_softmax(logits, 0.9, rng);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) {
      s += y.at(i);
      CHECK(y.at(i) >= 0.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gumbel_softmax rejects non-positive temperature") {
  RngStream rng(1);
  Tensor logits = Tensor::from({2}, {0.0, 0.0});
  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_softmax(logits, -1.0, rng), std::invalid_argument);
}

TEST_CASE("strongly separated logits keep the mass on the first component") {
  // With logits (10, -10) the first component exceeds 0.99 unless the Gumbel
  // difference overcomes a 20-logit gap, which has probability ~1e-8.
  RngStream rng(7);
  Tensor logits = Tensor::from({2}, {10.0, -10.0});
  int hits = 0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    Tensor y = gumbel_softmax(logits, 0.5, rng);
    if (y.at(0) > 0.99) ++hits;
  }
  CHECK(static_cast<double>(hits) / draws >= 0.99);
}

TEST_CASE("argmax frequencies follow the softmax of the logits") {
  // Gumbel-max: the argmax of (logits + g)/tau is categorical(softmax(logits))
  // for any temperature.
  RngStream rng(123);
  const std::vector<double> raw = {0.5, 0.2, -0.3, 0.0};
  Tensor logits = Tensor::from({4}, std::vector<double>(raw));
  Tensor probs = softmax(logits);

  const int draws = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < draws; ++i) {
    Tensor y = gumbel_softmax(logits, 0.1, rng);
    int arg = 0;
    for (int j = 1; j < 4; ++j) {
      if (y.at(j) > y.at(arg)) arg = j;
    }
    ++counts[static_cast<std::size_t>(arg)];
  }
  for (int j = 0; j < 4; ++j) {
    const double freq = static_cast<double>(counts[static_cast<std::size_t>(j)]) / draws;
    CHECK(std::abs(freq - probs.at(j)) <= 0.02);
  }
}

TEST_CASE("two-category reduction matches the explicit gumbel softmax") {
  // gumbel_sigmoid(s, g1 - g2, tau) must equal component 0 of the
  // two-category Gumbel-Softmax over logits (s, 0) with the same draws.
  RngStream rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const double s = (trial - 50) * 0.11;
    const double g1 = rng.gumbel(), g2 = rng.gumbel();
    const double tau = 0.5 + 0.01 * trial;

    Tensor s_t = Tensor::from({1, 1}, {s});
    Tensor d_t = Tensor::from({1, 1}, {g1 - g2});
    const double reduced = gumbel_sigmoid(s_t, d_t, tau).at(0);

    const double z0 = (s + g1) / tau, z1 = (0.0 + g2) / tau;
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double explicit0 = e0 / (e0 + e1);
    CHECK(reduced == doctest::Approx(explicit0).epsilon(1e-12));
  }
}
