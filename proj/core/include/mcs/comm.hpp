#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcs/nn.hpp"
#include "mcs/rng.hpp"
#include "mcs/tensor.hpp"

namespace mcs {

// Shared message encoder: input embedding, pre-norm Transformer blocks over
// entity rows, mean pooling over entities, projection into message space.
// One parameter set serves every agent and task of a series.
struct MessageEncoderParams {
  Tensor embed_w, embed_b;                     // D_e -> D_h
  std::vector<TransformerBlockParams> blocks;  // self-attention over entities
  Tensor out_w, out_b;                         // D_h -> D_m
  int heads = 4;

  static MessageEncoderParams init(int d_feat, int d_hidden, int d_msg, int n_blocks, int heads,
                                   int d_ffn, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  int feature_dim() const { return embed_w.dim(0); }
  int hidden_dim() const { return embed_w.dim(1); }
  int message_dim() const { return out_w.dim(1); }
};

// Additive-attention communication gate: s_ij = v^T tanh(Wq m_i + Wk m_j).
struct CommGateParams {
  Tensor v;       // {D_h, 1}
  Tensor wq, wk;  // {D_m, D_h}

  static CommGateParams init(int d_msg, int d_hidden, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// GRU over the (zero-padded) sequence of gated incoming messages.
struct AggregatorParams {
  GruParams gru;  // D_m -> D_h

  static AggregatorParams init(int d_msg, int d_hidden, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Policy trunk: aggregated message queries attend over observation entity
// rows; the attended summary feeds a zero-padded action head.
struct PolicyParams {
  AttentionParams attn;  // q {D_h}, k/v {D_e} -> D_h
  Tensor act_w, act_b;   // D_h -> A_max
  int heads = 4;

  static PolicyParams init(int d_feat, int d_hidden, int a_max, int heads, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  int action_max() const { return act_w.dim(1); }
};

struct CommParams {
  MessageEncoderParams encoder;
  CommGateParams gate;
  AggregatorParams agg;
};

// Encodes a stack of observations into messages. obs_stack is {B*E, D_e}
// (B observations of E entity rows each); returns {B, D_m}.
Tensor encode_messages(const Tensor& obs_stack, int entity_rows, const MessageEncoderParams& p);

// Pairwise communication scores alpha[i][j] in [0,1] for i != j (diagonal is
// fixed at 1). Each ordered pair runs a two-category Gumbel-Softmax over
// logits (s_ij, 0) and keeps the "communicate" component. The rng overload
// draws fresh Gumbel noise; the tensor overload replays noise differences
// (diagonal entries ignored), with an all-zero tensor giving the
// deterministic evaluation-mode scores.
Tensor comm_scores(const Tensor& messages, const CommGateParams& gate, double tau, RngStream& rng,
                   Tensor* noise_out = nullptr);
Tensor comm_scores(const Tensor& messages, const CommGateParams& gate, double tau,
                   const Tensor& noise_diff);

// Eq.-style threshold mask: C[i][j] = alpha[i][j] if alpha[i][j] > alpha_hat
// else 0 for i != j; C[i][i] = 1. Gradient flows through retained entries.
Tensor build_mask(const Tensor& alpha, double alpha_hat);

// GRU aggregation over the full length-N gated message sequence in ascending
// sender order from a zero hidden state, then the mean of all hidden states.
Tensor aggregate(const Tensor& gated_messages, const AggregatorParams& agg);

struct ActResult {
  int action = 0;
  double log_prob = 0.0;
  Tensor z;          // attended feature summary {1, D_h}
  Tensor log_probs;  // {1, A_max} masked log-distribution
};

// Attention-conditioned action selection for one agent. Samples from the
// categorical over the task's real action width (greedy = argmax).
ActResult attend_and_act(const Tensor& obs, const Tensor& m_bar, const PolicyParams& p,
                         int action_width, RngStream* rng, bool greedy);

enum class GateMode { Learned, AllOnes };

struct CommResult {
  Tensor messages;    // {N, D_m}
  Tensor scores;      // {N, N}, diagonal 1
  Tensor mask;        // {N, N}
  Tensor aggregated;  // {N, D_h}
  Tensor noise;       // {N, N} Gumbel noise differences (zeros in eval mode)
};

// Full per-step pipeline: encode -> score -> mask -> gate -> aggregate.
// rng == nullptr selects deterministic evaluation mode (no Gumbel noise).
// include_self = false removes the diagonal self-message (ablation support).
CommResult communicate(const std::vector<Tensor>& obs, const CommParams& params, double alpha_hat,
                       double tau, RngStream* rng, GateMode mode = GateMode::Learned,
                       bool include_self = true);

}  // namespace mcs
