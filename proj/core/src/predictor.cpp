#include "mcs/predictor.hpp"

#include <cmath>
#include <stdexcept>

#include "mcs/ops.hpp"

namespace mcs {

DecoderBlockParams DecoderBlockParams::init(int d_model, int d_ffn, RngStream& rng) {
  DecoderBlockParams p;
  auto ln_pair = [&](Tensor& g, Tensor& b) {
    g = zeros_param({d_model});
    for (auto& v : g.values()) v = 1.0;
    b = zeros_param({d_model});
  };
  ln_pair(p.ln1_g, p.ln1_b);
  p.self_attn = AttentionParams::init(d_model, d_model, d_model, d_model, rng);
  ln_pair(p.ln2_g, p.ln2_b);
  p.cross_attn = AttentionParams::init(d_model, d_model, d_model, d_model, rng);
  ln_pair(p.ln3_g, p.ln3_b);
  p.ffn_w1 = glorot(d_model, d_ffn, rng);
  p.ffn_b1 = zeros_param({d_ffn});
  p.ffn_w2 = glorot(d_ffn, d_model, rng);
  p.ffn_b2 = zeros_param({d_model});
  return p;
}

void DecoderBlockParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".ln1_g", ln1_g});
  out.push_back({prefix + ".ln1_b", ln1_b});
  self_attn.collect(prefix + ".self_attn", out);
  out.push_back({prefix + ".ln2_g", ln2_g});
  out.push_back({prefix + ".ln2_b", ln2_b});
  cross_attn.collect(prefix + ".cross_attn", out);
  out.push_back({prefix + ".ln3_g", ln3_g});
  out.push_back({prefix + ".ln3_b", ln3_b});
  out.push_back({prefix + ".ffn_w1", ffn_w1});
  out.push_back({prefix + ".ffn_b1", ffn_b1});
  out.push_back({prefix + ".ffn_w2", ffn_w2});
  out.push_back({prefix + ".ffn_b2", ffn_b2});
}

PredictorParams PredictorParams::init(int d_msg, int d_hidden, int a_max, int n_blocks, int heads,
                                      int d_ffn, RngStream& rng) {
  PredictorParams p;
  p.in_w = glorot(d_msg, d_hidden, rng);
  p.in_b = zeros_param({d_hidden});
  p.null_embed = glorot(1, d_hidden, rng);
  for (int b = 0; b < n_blocks; ++b) p.blocks.push_back(DecoderBlockParams::init(d_hidden, d_ffn, rng));
  p.head_w = glorot(d_hidden, a_max, rng);
  p.head_b = zeros_param({a_max});
  p.heads = heads;
  return p;
}

void PredictorParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".in_w", in_w});
  out.push_back({prefix + ".in_b", in_b});
  out.push_back({prefix + ".null_embed", null_embed});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].collect(prefix + ".block" + std::to_string(b), out);
  }
  out.push_back({prefix + ".head_w", head_w});
  out.push_back({prefix + ".head_b", head_b});
}

Tensor predictor_logits(const Tensor& messages, int agents_per_step, const PredictorParams& p) {
  if (messages.rank() != 2 || messages.dim(1) != p.in_w.dim(0)) {
    throw std::invalid_argument("predictor_logits: message width " + messages.shape_str() +
                                " does not match predictor input");
  }
  if (agents_per_step < 1 || messages.dim(0) % agents_per_step != 0) {
    throw std::invalid_argument("predictor_logits: rows not divisible by agents per step");
  }
  const int rows = messages.dim(0);
  Tensor x = linear(messages, p.in_w, p.in_b);
  Tensor kv = broadcast_row(p.null_embed, rows);
  for (const auto& b : p.blocks) {
    Tensor n1 = layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor sq = matmul(n1, b.self_attn.wq);
    Tensor sk = matmul(n1, b.self_attn.wk);
    Tensor sv = matmul(n1, b.self_attn.wv);
    x = add(x, matmul(attention_segments(sq, sk, sv, p.heads, agents_per_step, agents_per_step),
                      b.self_attn.wz));
    Tensor n2 = layer_norm(x, b.ln2_g, b.ln2_b);
    Tensor cq = matmul(n2, b.cross_attn.wq);
    Tensor ck = matmul(kv, b.cross_attn.wk);
    Tensor cv = matmul(kv, b.cross_attn.wv);
    x = add(x, matmul(attention_segments(cq, ck, cv, p.heads, agents_per_step, agents_per_step),
                      b.cross_attn.wz));
    Tensor n3 = layer_norm(x, b.ln3_g, b.ln3_b);
    x = add(x, linear(relu(linear(n3, b.ffn_w1, b.ffn_b1)), b.ffn_w2, b.ffn_b2));
  }
  return linear(x, p.head_w, p.head_b);
}

Tensor predict_action_dist(const Tensor& messages, const TaskSpec& task,
                           const PredictorParams& p) {
  if (task.action_width > p.action_max()) {
    throw std::invalid_argument("predict_action_dist: task action width " +
                                std::to_string(task.action_width) + " exceeds predictor head " +
                                std::to_string(p.action_max()));
  }
  Tensor logits = predictor_logits(messages, messages.dim(0), p);
  return softmax(pad_mask_logits(logits, task.action_width));
}

Tensor predictor_loss(const std::vector<PredictorBatch>& per_task, const PredictorParams& p) {
  if (per_task.empty()) throw std::runtime_error("predictor_loss: empty batch");
  Tensor total;
  for (const auto& batch : per_task) {
    if (batch.messages.size() == 0 || batch.actions.empty()) {
      throw std::runtime_error("predictor_loss: empty task batch");
    }
    if (static_cast<int>(batch.actions.size()) != batch.messages.dim(0)) {
      throw std::invalid_argument("predictor_loss: action count does not match message rows");
    }
    for (int a : batch.actions) {
      if (a < 0 || a >= batch.action_width) {
        throw std::invalid_argument("predictor_loss: action index outside task width");
      }
    }
    Tensor logits = predictor_logits(batch.messages, batch.agents_per_step, p);
    Tensor ls = log_softmax(pad_mask_logits(logits, batch.action_width));
    Tensor task_mean = mean_all(select(ls, batch.actions));
    total = total.defined() ? add(total, task_mean) : task_mean;
  }
  return mul_scalar(total, -1.0 / static_cast<double>(per_task.size()));
}

MiBound mi_bound_check(const std::vector<std::vector<double>>& joint,
                       const std::vector<std::vector<double>>& q_conditional) {
  const std::size_t na = joint.size();
  if (na == 0) throw std::runtime_error("mi_bound_check: empty joint");
  const std::size_t nm = joint[0].size();
  double mass = 0.0;
  for (const auto& row : joint) {
    if (row.size() != nm) throw std::runtime_error("mi_bound_check: ragged joint");
    for (double v : row) {
      if (v < 0.0) throw std::runtime_error("mi_bound_check: negative joint probability");
      mass += v;
    }
  }
  if (std::abs(mass - 1.0) > 1e-9) {
    throw std::runtime_error("mi_bound_check: joint does not sum to 1");
  }
  if (q_conditional.size() != na) {
    throw std::runtime_error("mi_bound_check: conditional shape mismatch");
  }
  for (std::size_t m = 0; m < nm; ++m) {
    double col = 0.0;
    for (std::size_t a = 0; a < na; ++a) col += q_conditional[a][m];
    if (std::abs(col - 1.0) > 1e-9) {
      throw std::runtime_error("mi_bound_check: conditional columns must sum to 1");
    }
  }

  std::vector<double> pa(na, 0.0), pm(nm, 0.0);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t m = 0; m < nm; ++m) {
      pa[a] += joint[a][m];
      pm[m] += joint[a][m];
    }
  }
  MiBound r;
  double entropy_a = 0.0;
  for (double v : pa) {
    if (v > 0.0) entropy_a -= v * std::log(v);
  }
  double expected_log_q = 0.0;
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t m = 0; m < nm; ++m) {
      const double pj = joint[a][m];
      if (pj <= 0.0) continue;
      r.true_mi += pj * std::log(pj / (pa[a] * pm[m]));
      expected_log_q += pj * std::log(q_conditional[a][m]);  // -inf allowed
    }
  }
  r.bound = expected_log_q + entropy_a;
  if (r.bound > r.true_mi + 1e-9) {
    throw std::logic_error("mi_bound_check: variational bound exceeded the exact value");
  }
  return r;
}

}  // namespace mcs
