#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "mcs/ops.hpp"
#include "mcs/tape.hpp"
#include "mcs/tensor.hpp"
#include "testutil.hpp"

using namespace mcs;

TEST_CASE("matmul identity") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(c.at(i) == a.at(i));
}

TEST_CASE("matmul annihilation") {
  Tensor a = Tensor::from({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from({2, 1}, {0, 5});
  Tensor c = matmul(a, b);
  CHECK(c.at(0) == 0.0);
  CHECK(c.at(1) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("softmax symmetry and stability") {
  Tensor x = Tensor::from({2}, {0.0, 0.0});
  Tensor y = softmax(x);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor big = Tensor::from({2}, {1000.0, 0.0});
  Tensor yb = softmax(big);
  CHECK(std::isfinite(yb.at(0)));
  CHECK(yb.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(yb.at(1) >= 0.0);
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = testutil::random_tensor({4, 6}, rng, 3.0);
    Tensor y = softmax(x);
    for (int r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int c = 0; c < 6; ++c) s += y.at(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("mean_pool identity, arithmetic, permutation") {
  Tensor single = Tensor::from({1, 3}, {4, 5, 6});
  Tensor pooled = mean_pool(single);
  CHECK(pooled.at(0) == 4.0);
  CHECK(pooled.at(2) == 6.0);

  Tensor two = Tensor::from({2, 2}, {1, 1, 3, 3});
  Tensor m = mean_pool(two);
  CHECK(m.at(0) == 2.0);
  CHECK(m.at(1) == 2.0);

  std::mt19937_64 rng(3);
  Tensor x = testutil::random_tensor({6, 5}, rng);
  Tensor shuffled = Tensor::zeros({6, 5});
  const int perm[6] = {4, 2, 0, 5, 1, 3};
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 5; ++c) shuffled.at(r, c) = x.at(perm[r], c);
  }
  Tensor a = mean_pool(x);
  Tensor b = mean_pool(shuffled);
  for (int c = 0; c < 5; ++c) CHECK(a.at(c) == b.at(c));  // bit-identical
}

TEST_CASE("mean_pool rejects empty axis") {
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);
}

TEST_CASE("backward of sum gives ones") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(p);
  backward(loss, tape);
  for (int i = 0; i < 3; ++i) CHECK(p.grad()[i] == 1.0);
}

TEST_CASE("backward of zero-scaled function gives zeros") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  Tape tape;
  Tensor loss = mul_scalar(sum(tanh(p)), 0.0);
  backward(loss, tape);
  for (int i = 0; i < 3; ++i) CHECK(p.grad()[i] == 0.0);
}

TEST_CASE("backward requires scalar loss on the tape") {
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  Tape tape;
  Tensor vec = tanh(p);
  CHECK_THROWS_AS(backward(vec, tape), std::runtime_error);

  Tensor off_tape = Tensor::scalar(1.0);
  CHECK_THROWS_AS(backward(off_tape, tape), std::runtime_error);
}

TEST_CASE("backward is deterministic across identical tapes") {
  std::mt19937_64 rng(11);
  Tensor w = testutil::random_tensor({4, 4}, rng);
  Tensor x = testutil::random_tensor({2, 4}, rng);
  auto run = [&]() {
    w.zero_grad();
    Tape tape;
    w.set_requires_grad(true);
    Tensor loss = mean_all(tanh(matmul(x, w)));
    backward(loss, tape);
    return testutil::grad_of(w);
  };
  auto g1 = run();
  auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("tensors created outside the tape keep zero gradient") {
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  Tensor bystander = Tensor::from({2}, {3.0, 4.0});
  bystander.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(mul_scalar(p, 2.0));
  backward(loss, tape);
  CHECK(bystander.grad()[0] == 0.0);
  CHECK(bystander.grad()[1] == 0.0);
}

TEST_CASE("gradient clipping bounds the global norm") {
  std::mt19937_64 rng(5);
  std::vector<Tensor> params;
  for (int i = 0; i < 3; ++i) {
    Tensor p = testutil::random_tensor({8, 8}, rng);
    p.set_requires_grad(true);
    auto g = p.grad();
    std::normal_distribution<double> dist(0.0, 50.0);
    for (auto& v : g) v = dist(rng);
    params.push_back(p);
  }
  const double before = global_grad_norm(params);
  CHECK(before > 10.0);
  const double reported = clip_grad_norm(params, 10.0);
  CHECK(reported == doctest::Approx(before));
  CHECK(global_grad_norm(params) <= 10.0 + 1e-9);

  // Below the threshold nothing changes.
  const double small_before = global_grad_norm(params);
  clip_grad_norm(params, 1e6);
  CHECK(global_grad_norm(params) == small_before);
}

TEST_CASE("layer_norm normalizes rows") {
  std::mt19937_64 rng(9);
  Tensor x = testutil::random_tensor({3, 8}, rng, 4.0);
  Tensor g = Tensor::full({8}, 1.0);
  Tensor b = Tensor::zeros({8});
  Tensor y = layer_norm(x, g, b);
  for (int r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mean += y.at(r, c);
    mean /= 8;
    for (int c = 0; c < 8; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= 8;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("pad_mask_logits zeroes masked probability exactly") {
  Tensor x = Tensor::from({1, 4}, {0.3, -0.2, 0.9, 2.0});
  Tensor masked = pad_mask_logits(x, 2);
  Tensor p = softmax(masked);
  CHECK(p.at(0, 2) == 0.0);
  CHECK(p.at(0, 3) == 0.0);
  CHECK(p.at(0, 0) + p.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("threshold_gate passes only strict exceedances") {
  Tensor a = Tensor::from({4}, {0.2, 0.5, 0.7, 1.0});
  Tensor g = threshold_gate(a, 0.5);
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(1) == 0.0);  // not strictly above
  CHECK(g.at(2) == 0.7);
  CHECK(g.at(3) == 1.0);
  CHECK_THROWS_AS(threshold_gate(a, 1.5), std::invalid_argument);
}
