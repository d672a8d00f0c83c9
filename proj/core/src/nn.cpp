#include "mcs/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mcs {

Tensor glorot(int rows, int cols, RngStream& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

GruParams GruParams::init(int d_in, int d_hidden, RngStream& rng) {
  GruParams p;
  p.wxz = glorot(d_in, d_hidden, rng);
  p.whz = glorot(d_hidden, d_hidden, rng);
  p.bz = zeros_param({d_hidden});
  p.wxr = glorot(d_in, d_hidden, rng);
  p.whr = glorot(d_hidden, d_hidden, rng);
  p.br = zeros_param({d_hidden});
  p.wxh = glorot(d_in, d_hidden, rng);
  p.whh = glorot(d_hidden, d_hidden, rng);
  p.bh = zeros_param({d_hidden});
  return p;
}

void GruParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".wxz", wxz});
  out.push_back({prefix + ".whz", whz});
  out.push_back({prefix + ".bz", bz});
  out.push_back({prefix + ".wxr", wxr});
  out.push_back({prefix + ".whr", whr});
  out.push_back({prefix + ".br", br});
  out.push_back({prefix + ".wxh", wxh});
  out.push_back({prefix + ".whh", whh});
  out.push_back({prefix + ".bh", bh});
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  const bool vector_in = h_prev.rank() == 1;
  Tensor xb = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
  Tensor hb = vector_in ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  if (xb.dim(1) != p.input_dim() || hb.dim(1) != p.hidden_dim() || xb.dim(0) != hb.dim(0)) {
    throw std::invalid_argument("gru_cell: dimension mismatch, x " + xb.shape_str() + " h " +
                                hb.shape_str());
  }
  Tensor z = sigmoid(add_rowvec(add(matmul(xb, p.wxz), matmul(hb, p.whz)), p.bz));
  Tensor r = sigmoid(add_rowvec(add(matmul(xb, p.wxr), matmul(hb, p.whr)), p.br));
  Tensor cand = tanh(add_rowvec(add(matmul(xb, p.wxh), matmul(mul(r, hb), p.whh)), p.bh));
  Tensor h = add(mul(one_minus(z), cand), mul(z, hb));
  return vector_in ? reshape(h, {h.dim(1)}) : h;
}

AttentionParams AttentionParams::init(int d_q, int d_kv, int d_model, int d_out, RngStream& rng) {
  AttentionParams p;
  p.wq = glorot(d_q, d_model, rng);
  p.wk = glorot(d_kv, d_model, rng);
  p.wv = glorot(d_kv, d_model, rng);
  p.wz = glorot(d_model, d_out, rng);
  return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wz", wz});
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            const AttentionParams& p, std::vector<double>* out_weights) {
  if (k.shape() != v.shape()) {
    throw std::invalid_argument("multi_head_attention: k/v shape mismatch " + k.shape_str() +
                                " vs " + v.shape_str());
  }
  const int d_model = p.wq.dim(1);
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("multi_head_attention: model width not divisible by head count");
  }
  Tensor qp = matmul(q, p.wq);
  Tensor kp = matmul(k, p.wk);
  Tensor vp = matmul(v, p.wv);
  Tensor attended = attention_segments(qp, kp, vp, heads, q.dim(0), k.dim(0), out_weights);
  return matmul(attended, p.wz);
}

TransformerBlockParams TransformerBlockParams::init(int d_model, int d_ffn, RngStream& rng) {
  TransformerBlockParams p;
  p.ln1_g = zeros_param({d_model});
  for (auto& v : p.ln1_g.values()) v = 1.0;
  p.ln1_b = zeros_param({d_model});
  p.ln2_g = zeros_param({d_model});
  for (auto& v : p.ln2_g.values()) v = 1.0;
  p.ln2_b = zeros_param({d_model});
  p.attn = AttentionParams::init(d_model, d_model, d_model, d_model, rng);
  p.ffn_w1 = glorot(d_model, d_ffn, rng);
  p.ffn_b1 = zeros_param({d_ffn});
  p.ffn_w2 = glorot(d_ffn, d_model, rng);
  p.ffn_b2 = zeros_param({d_model});
  return p;
}

void TransformerBlockParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".ln1_g", ln1_g});
  out.push_back({prefix + ".ln1_b", ln1_b});
  out.push_back({prefix + ".ln2_g", ln2_g});
  out.push_back({prefix + ".ln2_b", ln2_b});
  attn.collect(prefix + ".attn", out);
  out.push_back({prefix + ".ffn_w1", ffn_w1});
  out.push_back({prefix + ".ffn_b1", ffn_b1});
  out.push_back({prefix + ".ffn_w2", ffn_w2});
  out.push_back({prefix + ".ffn_b2", ffn_b2});
}

Tensor transformer_block(const Tensor& x, int heads, int seg_len,
                         const TransformerBlockParams& p) {
  Tensor n1 = layer_norm(x, p.ln1_g, p.ln1_b);
  Tensor qp = matmul(n1, p.attn.wq);
  Tensor kp = matmul(n1, p.attn.wk);
  Tensor vp = matmul(n1, p.attn.wv);
  Tensor att = matmul(attention_segments(qp, kp, vp, heads, seg_len, seg_len), p.attn.wz);
  Tensor h = add(x, att);
  Tensor n2 = layer_norm(h, p.ln2_g, p.ln2_b);
  Tensor f = linear(relu(linear(n2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  return add(h, f);
}

}  // namespace mcs
