#pragma once

#include <string>
#include <vector>

#include "mcs/alicebob.hpp"
#include "mcs/nn.hpp"
#include "mcs/rng.hpp"
#include "mcs/tensor.hpp"

namespace mcs {

// Decoder block: self-attention across the per-step message rows, then
// cross-attention onto the embedded initialized (null) actions, then FFN.
struct DecoderBlockParams {
  Tensor ln1_g, ln1_b;
  AttentionParams self_attn;
  Tensor ln2_g, ln2_b;
  AttentionParams cross_attn;
  Tensor ln3_g, ln3_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static DecoderBlockParams init(int d_model, int d_ffn, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Training-only prediction network correlating messages with sender actions.
// Absent from the action-selection path; evaluation-only checkpoints may omit
// its parameters entirely.
struct PredictorParams {
  Tensor in_w, in_b;       // D_m -> D_h message query projection
  Tensor null_embed;       // {1, D_h} learned null-action embedding
  std::vector<DecoderBlockParams> blocks;
  Tensor head_w, head_b;   // D_h -> A_max (zero-padded action space)
  int heads = 4;

  static PredictorParams init(int d_msg, int d_hidden, int a_max, int n_blocks, int heads,
                              int d_ffn, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  int action_max() const { return head_w.dim(1); }
};

// Raw logits over the padded action space. messages is {B*N, D_m} with N
// message rows per step; each row yields that sender's action logits.
Tensor predictor_logits(const Tensor& messages, int agents_per_step, const PredictorParams& p);

// Per-agent categoricals over A_max for one step's messages {N, D_m}.
// Padded action slots beyond the task's real width carry exactly zero mass.
Tensor predict_action_dist(const Tensor& messages, const TaskSpec& task,
                           const PredictorParams& p);

struct PredictorBatch {
  Tensor messages;           // {B*N, D_m}
  std::vector<int> actions;  // B*N target action indices (< action_width)
  int agents_per_step = 1;
  int action_width = 1;
};

// Negative mean log-likelihood: mean over tasks of the per-task mean over
// samples and agents of -log q(a | messages). Minimizing it maximizes the
// variational mutual-information bound's log-likelihood term.
Tensor predictor_loss(const std::vector<PredictorBatch>& per_task, const PredictorParams& p);

struct MiBound {
  double true_mi = 0.0;
  double bound = 0.0;
};

// Enumeration oracle for the variational lower bound on I(A;M): computes the
// exact mutual information of a small discrete joint p[a][m] and the bound
// E_p[log q(a|m)] + H(A) for a conditional q[a][m] (columns normalized over
// a). Throws if the joint is not a distribution or the bound exceeds the
// exact value beyond 1e-9.
MiBound mi_bound_check(const std::vector<std::vector<double>>& joint,
                       const std::vector<std::vector<double>>& q_conditional);

}  // namespace mcs
