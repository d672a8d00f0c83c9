#include "mcs/comm.hpp"

#include <cmath>
#include <stdexcept>

#include "mcs/ops.hpp"

namespace mcs {

MessageEncoderParams MessageEncoderParams::init(int d_feat, int d_hidden, int d_msg, int n_blocks,
                                                int heads, int d_ffn, RngStream& rng) {
  MessageEncoderParams p;
  p.embed_w = glorot(d_feat, d_hidden, rng);
  p.embed_b = zeros_param({d_hidden});
  for (int b = 0; b < n_blocks; ++b) {
    p.blocks.push_back(TransformerBlockParams::init(d_hidden, d_ffn, rng));
  }
  p.out_w = glorot(d_hidden, d_msg, rng);
  p.out_b = zeros_param({d_msg});
  p.heads = heads;
  return p;
}

void MessageEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".embed_w", embed_w});
  out.push_back({prefix + ".embed_b", embed_b});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].collect(prefix + ".block" + std::to_string(b), out);
  }
  out.push_back({prefix + ".out_w", out_w});
  out.push_back({prefix + ".out_b", out_b});
}

CommGateParams CommGateParams::init(int d_msg, int d_hidden, RngStream& rng) {
  CommGateParams p;
  p.v = glorot(d_hidden, 1, rng);
  p.wq = glorot(d_msg, d_hidden, rng);
  p.wk = glorot(d_msg, d_hidden, rng);
  return p;
}

void CommGateParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".v", v});
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
}

AggregatorParams AggregatorParams::init(int d_msg, int d_hidden, RngStream& rng) {
  AggregatorParams p;
  p.gru = GruParams::init(d_msg, d_hidden, rng);
  return p;
}

void AggregatorParams::collect(const std::string& prefix, ParamList& out) const {
  gru.collect(prefix + ".gru", out);
}

PolicyParams PolicyParams::init(int d_feat, int d_hidden, int a_max, int heads, RngStream& rng) {
  PolicyParams p;
  p.attn = AttentionParams::init(d_hidden, d_feat, d_hidden, d_hidden, rng);
  p.act_w = glorot(d_hidden, a_max, rng);
  p.act_b = zeros_param({a_max});
  p.heads = heads;
  return p;
}

void PolicyParams::collect(const std::string& prefix, ParamList& out) const {
  attn.collect(prefix + ".attn", out);
  out.push_back({prefix + ".act_w", act_w});
  out.push_back({prefix + ".act_b", act_b});
}

Tensor encode_messages(const Tensor& obs_stack, int entity_rows, const MessageEncoderParams& p) {
  if (obs_stack.rank() != 2 || obs_stack.dim(1) != p.feature_dim()) {
    throw std::invalid_argument("encode_messages: observation feature width " +
                                obs_stack.shape_str() + " does not match encoder input " +
                                std::to_string(p.feature_dim()));
  }
  if (entity_rows < 1 || obs_stack.dim(0) % entity_rows != 0) {
    throw std::invalid_argument("encode_messages: row count not divisible by entity rows");
  }
  Tensor x = linear(obs_stack, p.embed_w, p.embed_b);
  for (const auto& block : p.blocks) {
    x = transformer_block(x, p.heads, entity_rows, block);
  }
  Tensor pooled = segment_mean_rows(x, entity_rows);
  return linear(pooled, p.out_w, p.out_b);
}

namespace {

// Logits s_ij for every ordered pair, assembled row-major as {N*N, 1} with
// zero logits on the diagonal (overwritten later).
Tensor pair_logits(const Tensor& messages, const CommGateParams& gate) {
  const int n = messages.dim(0);
  Tensor a = matmul(messages, gate.wq);  // sender side
  Tensor b = matmul(messages, gate.wk);  // receiver side
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    Tensor ai = slice_rows(a, i, 1);
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        rows.push_back(Tensor::zeros({1, 1}));
        continue;
      }
      Tensor bj = slice_rows(b, j, 1);
      rows.push_back(matmul(tanh(add(ai, bj)), gate.v));
    }
  }
  return concat_rows(rows);
}

Tensor scores_from_noise(const Tensor& messages, const CommGateParams& gate, double tau,
                         const Tensor& noise_diff) {
  const int n = messages.dim(0);
  Tensor logits = pair_logits(messages, gate);  // {N*N, 1}
  Tensor noise = reshape(noise_diff, {n * n, 1});
  Tensor alpha = gumbel_sigmoid(logits, noise, tau);
  return set_diag_one(reshape(alpha, {n, n}));
}

}  // namespace

Tensor comm_scores(const Tensor& messages, const CommGateParams& gate, double tau, RngStream& rng,
                   Tensor* noise_out) {
  const int n = messages.rows();
  if (n < 2) throw std::invalid_argument("comm_scores: need at least 2 agents");
  Tensor noise = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      noise.at(i, j) = rng.gumbel() - rng.gumbel();
    }
  }
  if (noise_out) *noise_out = noise;
  return scores_from_noise(messages, gate, tau, noise);
}

Tensor comm_scores(const Tensor& messages, const CommGateParams& gate, double tau,
                   const Tensor& noise_diff) {
  const int n = messages.rows();
  if (n < 2) throw std::invalid_argument("comm_scores: need at least 2 agents");
  if (noise_diff.size() != static_cast<std::int64_t>(n) * n) {
    throw std::invalid_argument("comm_scores: noise shape " + noise_diff.shape_str() +
                                " does not match agent count");
  }
  return scores_from_noise(messages, gate, tau, noise_diff);
}

Tensor build_mask(const Tensor& alpha, double alpha_hat) {
  if (alpha.rank() != 2 || alpha.dim(0) != alpha.dim(1)) {
    throw std::invalid_argument("build_mask: expected square score matrix, got " +
                                alpha.shape_str());
  }
  return set_diag_one(threshold_gate(alpha, alpha_hat));
}

Tensor aggregate(const Tensor& gated_messages, const AggregatorParams& agg) {
  if (gated_messages.rank() != 2 || gated_messages.dim(1) != agg.gru.input_dim()) {
    throw std::invalid_argument("aggregate: gated messages " + gated_messages.shape_str() +
                                " do not match GRU input width");
  }
  const int n = gated_messages.dim(0);
  const int dh = agg.gru.hidden_dim();
  Tensor h = Tensor::zeros({1, dh});
  Tensor acc;
  for (int l = 0; l < n; ++l) {
    h = gru_cell(slice_rows(gated_messages, l, 1), h, agg.gru);
    acc = l == 0 ? h : add(acc, h);
  }
  return reshape(mul_scalar(acc, 1.0 / n), {dh});
}

ActResult attend_and_act(const Tensor& obs, const Tensor& m_bar, const PolicyParams& p,
                         int action_width, RngStream* rng, bool greedy) {
  const int dh = p.attn.wq.dim(0);
  if (m_bar.size() != dh) {
    throw std::invalid_argument("attend_and_act: aggregated message width " + m_bar.shape_str() +
                                " does not match policy query width");
  }
  if (dh % p.heads != 0) {
    throw std::invalid_argument("attend_and_act: hidden width not divisible by head count");
  }
  if (action_width < 1 || action_width > p.action_max()) {
    throw std::invalid_argument("attend_and_act: task action width exceeds action head");
  }
  Tensor q = m_bar.rank() == 1 ? reshape(m_bar, {1, dh}) : m_bar;
  ActResult r;
  r.z = multi_head_attention(q, obs, obs, p.heads, p.attn);
  Tensor logits = linear(r.z, p.act_w, p.act_b);
  r.log_probs = log_softmax(pad_mask_logits(logits, action_width));

  if (greedy || rng == nullptr) {
    int best = 0;
    for (int a = 1; a < action_width; ++a) {
      if (r.log_probs.at(0, a) > r.log_probs.at(0, best)) best = a;
    }
    r.action = best;
  } else {
    const double u = rng->uniform();
    double cum = 0.0;
    int chosen = action_width - 1;
    for (int a = 0; a < action_width; ++a) {
      cum += std::exp(r.log_probs.at(0, a));
      if (u <= cum) {
        chosen = a;
        break;
      }
    }
    r.action = chosen;
  }
  r.log_prob = r.log_probs.at(0, r.action);
  return r;
}

CommResult communicate(const std::vector<Tensor>& obs, const CommParams& params, double alpha_hat,
                       double tau, RngStream* rng, GateMode mode, bool include_self) {
  const int n = static_cast<int>(obs.size());
  if (n < 1) throw std::invalid_argument("communicate: need at least one observation");
  const int entity_rows = obs[0].rows();
  for (const auto& o : obs) {
    if (o.rank() != 2 || o.dim(0) != entity_rows || o.dim(1) != params.encoder.feature_dim()) {
      throw std::invalid_argument("communicate: inconsistent observation shape " + o.shape_str());
    }
  }

  CommResult r;
  Tensor obs_stack = concat_rows(obs);
  r.messages = encode_messages(obs_stack, entity_rows, params.encoder);

  if (n == 1) {
    r.noise = Tensor::zeros({1, 1});
    r.scores = Tensor::full({1, 1}, 1.0);
  } else if (rng != nullptr) {
    r.scores = comm_scores(r.messages, params.gate, tau, *rng, &r.noise);
  } else {
    r.noise = Tensor::zeros({n, n});
    r.scores = comm_scores(r.messages, params.gate, tau, r.noise);
  }

  if (mode == GateMode::AllOnes) {
    r.mask = Tensor::full({n, n}, 1.0);
  } else {
    r.mask = build_mask(r.scores, alpha_hat);
  }
  if (!include_self) {
    Tensor off_diag = Tensor::full({n, n}, 1.0);
    for (int i = 0; i < n; ++i) off_diag.at(i, i) = 0.0;
    r.mask = mul(r.mask, off_diag);
  }

  std::vector<Tensor> aggregated;
  aggregated.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    Tensor gated = scale_rows(r.messages, slice_col(r.mask, j));
    aggregated.push_back(reshape(aggregate(gated, params.agg), {1, params.agg.gru.hidden_dim()}));
  }
  r.aggregated = concat_rows(aggregated);
  return r;
}

}  // namespace mcs
