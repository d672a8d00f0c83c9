#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "mcs/nn.hpp"
#include "mcs/ops.hpp"
#include "mcs/tape.hpp"
#include "testutil.hpp"

using namespace mcs;

namespace {

// Analytic gradient of `loss_fn` w.r.t. each listed parameter, checked
// against central differences at the current parameter values.
void check_grads(const std::vector<Tensor>& params, const std::function<Tensor()>& loss_fn,
                 double tol) {
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    Tape tape;
    Tensor loss = loss_fn();
    backward(loss, tape);
  }
  auto value_only = [&]() { return loss_fn().item(); };
  for (auto& p : params) {
    auto numeric = testutil::finite_difference(p, value_only);
    auto analytic = testutil::grad_of(p);
    CHECK(testutil::max_rel_error(analytic, numeric) < tol);
  }
}

}  // namespace

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(100);
  for (int point = 0; point < 10; ++point) {
    Tensor a = testutil::random_tensor({3, 3}, rng);
    Tensor b = testutil::random_tensor({3, 3}, rng);
    check_grads({a, b}, [&]() { return sum(matmul(a, b)); }, 1e-4);
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  std::mt19937_64 rng(101);
  for (int point = 0; point < 10; ++point) {
    Tensor x = testutil::random_tensor({5}, rng, 2.0);
    Tensor w = testutil::random_tensor({5}, rng);
    check_grads({x}, [&]() { return sum(mul(softmax(x), w)); }, 1e-4);
  }
}

TEST_CASE("log_softmax gradient matches finite differences") {
  std::mt19937_64 rng(102);
  for (int point = 0; point < 10; ++point) {
    Tensor x = testutil::random_tensor({3, 5}, rng, 2.0);
    Tensor w = testutil::random_tensor({3, 5}, rng);
    check_grads({x}, [&]() { return sum(mul(log_softmax(x), w)); }, 1e-4);
  }
}

TEST_CASE("gru_cell gradient matches finite differences for all parameter blocks") {
  std::mt19937_64 rng(103);
  RngStream init(13);
  for (int point = 0; point < 10; ++point) {
    GruParams p = GruParams::init(4, 6, init);
    Tensor x = testutil::random_tensor({2, 4}, rng);
    Tensor h = testutil::random_tensor({2, 6}, rng, 0.5);
    Tensor w = testutil::random_tensor({2, 6}, rng);
    std::vector<Tensor> params = {p.wxz, p.whz, p.bz, p.wxr, p.whr, p.br, p.wxh, p.whh, p.bh, x, h};
    check_grads(params, [&]() { return sum(mul(gru_cell(x, h, p), w)); }, 1e-4);
  }
}

TEST_CASE("gru_cell basics") {
  RngStream init(1);
  GruParams p = GruParams::init(3, 4, init);
  for (auto* t : {&p.wxz, &p.whz, &p.bz, &p.wxr, &p.whr, &p.br, &p.wxh, &p.whh, &p.bh}) {
    for (auto& v : t->values()) v = 0.0;
  }
  Tensor x = Tensor::zeros({3});
  Tensor h = Tensor::zeros({4});
  Tensor out = gru_cell(x, h, p);
  for (int i = 0; i < 4; ++i) CHECK(out.at(i) == 0.0);

  // Componentwise range bound when the previous hidden state is in (-1,1).
  std::mt19937_64 rng(44);
  RngStream init2(2);
  GruParams q = GruParams::init(3, 4, init2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor xr = testutil::random_tensor({3}, rng, 2.0);
    Tensor hr = Tensor::zeros({4});
    std::uniform_real_distribution<double> u(-0.999, 0.999);
    for (auto& v : hr.values()) v = u(rng);
    Tensor o = gru_cell(xr, hr, q);
    for (int i = 0; i < 4; ++i) {
      CHECK(o.at(i) > -1.0);
      CHECK(o.at(i) < 1.0);
    }
  }

  Tensor bad = Tensor::zeros({5});
  CHECK_THROWS_AS(gru_cell(bad, h, p), std::invalid_argument);
}

TEST_CASE("multi_head_attention gradient matches finite differences") {
  std::mt19937_64 rng(104);
  RngStream init(14);
  for (int point = 0; point < 10; ++point) {
    AttentionParams p = AttentionParams::init(8, 8, 8, 8, init);
    Tensor q = testutil::random_tensor({2, 8}, rng);
    Tensor k = testutil::random_tensor({3, 8}, rng);
    Tensor v = testutil::random_tensor({3, 8}, rng);
    Tensor w = testutil::random_tensor({2, 8}, rng);
    std::vector<Tensor> params = {p.wq, p.wk, p.wv, p.wz, q, k, v};
    check_grads(params, [&]() { return sum(mul(multi_head_attention(q, k, v, 2, p), w)); }, 1e-4);
  }
}

TEST_CASE("multi_head_attention single key gives unit weight") {
  std::mt19937_64 rng(21);
  RngStream init(15);
  AttentionParams p = AttentionParams::init(8, 8, 8, 8, init);
  Tensor q = testutil::random_tensor({2, 8}, rng);
  Tensor k = testutil::random_tensor({1, 8}, rng);
  Tensor v = testutil::random_tensor({1, 8}, rng);
  std::vector<double> weights;
  multi_head_attention(q, k, v, 4, p, &weights);
  for (double w : weights) CHECK(w == 1.0);
}

TEST_CASE("multi_head_attention identical keys average the values") {
  std::mt19937_64 rng(22);
  RngStream init(16);
  AttentionParams p = AttentionParams::init(8, 8, 8, 8, init);
  Tensor q = testutil::random_tensor({1, 8}, rng);
  Tensor row = testutil::random_tensor({1, 8}, rng);
  Tensor k = Tensor::zeros({3, 8});
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 8; ++c) k.at(r, c) = row.at(0, c);
  }
  Tensor v = testutil::random_tensor({3, 8}, rng);
  Tensor out = multi_head_attention(q, k, v, 2, p);

  // Uniform attention means the value rows average before projection.
  Tensor v_mean = Tensor::zeros({1, 8});
  for (int c = 0; c < 8; ++c) {
    v_mean.at(0, c) = (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0;
  }
  Tensor expect = matmul(matmul(v_mean, p.wv), p.wz);
  for (int c = 0; c < 8; ++c) CHECK(out.at(0, c) == doctest::Approx(expect.at(0, c)).epsilon(1e-9));
}

TEST_CASE("multi_head_attention rejects indivisible head count") {
  RngStream init(17);
  AttentionParams p = AttentionParams::init(8, 8, 8, 8, init);
  Tensor q = Tensor::zeros({2, 8});
  CHECK_THROWS_AS(multi_head_attention(q, q, q, 3, p), std::invalid_argument);
}

TEST_CASE("gumbel_softmax gradient matches finite differences with replayed noise") {
  std::mt19937_64 rng(105);
  for (int point = 0; point < 10; ++point) {
    Tensor logits = testutil::random_tensor({4}, rng);
    Tensor w = testutil::random_tensor({4}, rng);
    // Re-seeding per call replays the same Gumbel draws, making the sampled
    // map a deterministic function of the logits.
    auto loss_fn = [&]() {
      RngStream replay(900 + static_cast<std::uint64_t>(point));
      return sum(mul(gumbel_softmax(logits, 0.7, replay), w));
    };
    check_grads({logits}, loss_fn, 1e-4);
  }
}

TEST_CASE("gumbel_sigmoid gradient matches finite differences") {
  std::mt19937_64 rng(110);
  for (int point = 0; point < 10; ++point) {
    Tensor s = testutil::random_tensor({6, 1}, rng);
    Tensor noise = testutil::random_tensor({6, 1}, rng);
    Tensor w = testutil::random_tensor({6, 1}, rng);
    check_grads({s}, [&]() { return sum(mul(gumbel_sigmoid(s, noise, 0.8), w)); }, 1e-4);
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  std::mt19937_64 rng(106);
  for (int point = 0; point < 10; ++point) {
    Tensor x = testutil::random_tensor({3, 6}, rng, 2.0);
    Tensor g = testutil::random_tensor({6}, rng);
    Tensor b = testutil::random_tensor({6}, rng);
    Tensor w = testutil::random_tensor({3, 6}, rng);
    check_grads({x, g, b}, [&]() { return sum(mul(layer_norm(x, g, b), w)); }, 1e-4);
  }
}

TEST_CASE("transformer block gradient matches finite differences") {
  std::mt19937_64 rng(107);
  RngStream init(18);
  for (int point = 0; point < 3; ++point) {
    TransformerBlockParams p = TransformerBlockParams::init(8, 12, init);
    Tensor x = testutil::random_tensor({6, 8}, rng);
    Tensor w = testutil::random_tensor({6, 8}, rng);
    ParamList named;
    p.collect("b", named);
    std::vector<Tensor> params;
    for (auto& np : named) params.push_back(np.tensor);
    params.push_back(x);
    check_grads(params, [&]() { return sum(mul(transformer_block(x, 2, 3, p), w)); }, 1e-4);
  }
}

TEST_CASE("elementwise op gradients match finite differences") {
  std::mt19937_64 rng(108);
  for (int point = 0; point < 10; ++point) {
    Tensor x = testutil::random_tensor({7}, rng);
    Tensor y = testutil::random_tensor({7}, rng);
    Tensor w = testutil::random_tensor({7}, rng);
    check_grads({x, y}, [&]() { return sum(mul(mul(tanh(x), sigmoid(y)), w)); }, 1e-4);
    check_grads({x}, [&]() { return sum(mul(exp(mul_scalar(x, 0.5)), w)); }, 1e-4);
    check_grads({x, y}, [&]() { return sum(mul(minimum(x, y), w)); }, 1e-4);
    check_grads({x}, [&]() { return sum(mul(clamp(x, -0.5, 0.5), w)); }, 1e-4);
  }
}

TEST_CASE("shape op gradients match finite differences") {
  std::mt19937_64 rng(109);
  for (int point = 0; point < 5; ++point) {
    Tensor x = testutil::random_tensor({6, 4}, rng);
    Tensor s = testutil::random_tensor({6}, rng);
    Tensor w = testutil::random_tensor({6, 4}, rng);
    check_grads({x, s}, [&]() { return sum(mul(scale_rows(x, s), w)); }, 1e-4);

    Tensor w2 = testutil::random_tensor({3, 4}, rng);
    check_grads({x}, [&]() { return sum(mul(slice_rows_strided(x, 0, 2, 3), w2)); }, 1e-4);

    Tensor w3 = testutil::random_tensor({4}, rng);
    check_grads({x}, [&]() { return sum(mul(mean_pool(x), w3)); }, 1e-4);

    Tensor w4 = testutil::random_tensor({2, 4}, rng);
    check_grads({x}, [&]() { return sum(mul(segment_mean_rows(x, 3), w4)); }, 1e-4);

    Tensor row = testutil::random_tensor({1, 4}, rng);
    Tensor w5 = testutil::random_tensor({5, 4}, rng);
    check_grads({row}, [&]() { return sum(mul(broadcast_row(row, 5), w5)); }, 1e-4);
  }
}
