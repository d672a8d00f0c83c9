#pragma once

#include <string>
#include <vector>

#include "mcs/ops.hpp"
#include "mcs/rng.hpp"
#include "mcs/tensor.hpp"

namespace mcs {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

// Glorot-uniform weight matrix {rows, cols}, marked as a trainable leaf.
Tensor glorot(int rows, int cols, RngStream& rng);
Tensor zeros_param(std::vector<int> shape);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b

struct GruParams {
  Tensor wxz, whz, bz;  // update gate
  Tensor wxr, whr, br;  // reset gate
  Tensor wxh, whh, bh;  // candidate
  static GruParams init(int d_in, int d_hidden, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  int input_dim() const { return wxz.dim(0); }
  int hidden_dim() const { return wxz.dim(1); }
};

// One GRU update. x is {B, D_in} or {D_in}; h_prev is {B, D_h} or {D_h};
// the result matches the rank of h_prev.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

struct AttentionParams {
  Tensor wq, wk, wv, wz;  // wq {Dq,Dh}; wk/wv {Dkv,Dh}; wz {Dh,Dout}
  static AttentionParams init(int d_q, int d_kv, int d_model, int d_out, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Multi-head scaled dot-product attention: projects q/k/v, attends per head
// with 1/sqrt(d_head) scaling, concatenates heads and projects by wz.
// q is {Lq, Dq}, k and v are {Lk, Dkv}. out_weights, when non-null, receives
// the per-head attention rows (layout [head][lq][lk]).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            const AttentionParams& p, std::vector<double>* out_weights = nullptr);

struct TransformerBlockParams {
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionParams attn;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  static TransformerBlockParams init(int d_model, int d_ffn, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm block over rows grouped into segments of seg_len:
//   x = x + SelfAttention(LN(x));  x = x + FFN(LN(x))
Tensor transformer_block(const Tensor& x, int heads, int seg_len, const TransformerBlockParams& p);

}  // namespace mcs
