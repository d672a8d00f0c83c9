#pragma once

#include <vector>

#include "mcs/rng.hpp"
#include "mcs/tape.hpp"
#include "mcs/tensor.hpp"

namespace mcs {

// Elementwise arithmetic (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor one_minus(const Tensor& a);  // 1 - a

// Matrix product A[MxK] * B[KxN]; inner extents must agree.
Tensor matmul(const Tensor& a, const Tensor& b);
// Adds a length-N row vector to every row of a MxN matrix.
Tensor add_rowvec(const Tensor& a, const Tensor& bias);
// Scales row i of x by s[i]; s has shape {M} or {M,1}.
Tensor scale_rows(const Tensor& x, const Tensor& s);

// Elementwise nonlinearities.
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);

// Reductions and shape plumbing.
Tensor sum(const Tensor& a);       // -> {1}
Tensor mean_all(const Tensor& a);  // -> {1}
Tensor sum_rows(const Tensor& a);  // {M,N} -> {M,1}
// Mean over entity rows of a {E,D} matrix -> {D}. Per-column summation runs
// in sorted value order so row permutations give bit-identical output.
Tensor mean_pool(const Tensor& x);
// Mean over each consecutive block of seg_len rows: {B*L,D} -> {B,D}.
Tensor segment_mean_rows(const Tensor& x, int seg_len);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_rows(const Tensor& x, int first, int count);
Tensor slice_rows_strided(const Tensor& x, int offset, int stride, int count);
// out row b*N+j = xs[j] row b; all inputs {B,D}.
Tensor interleave_rows(const std::vector<Tensor>& xs);
Tensor broadcast_row(const Tensor& row, int count);  // {D} or {1,D} -> {count,D}
// Gathers one element per row: y[i] = x[i, idx[i]] -> {M}.
Tensor select(const Tensor& x, const std::vector<int>& idx);
// Column j of a {M,N} matrix as {M,1}.
Tensor slice_col(const Tensor& x, int col);
// Elementwise clamp to [lo, hi]; gradient passes only where unclipped.
Tensor clamp(const Tensor& x, double lo, double hi);
// Elementwise minimum; the gradient follows the smaller input (ties go to a).
Tensor minimum(const Tensor& a, const Tensor& b);
// Disables logit columns >= valid_cols (set to a large negative constant so
// softmax assigns them exactly zero probability; no gradient flows there).
Tensor pad_mask_logits(const Tensor& x, int valid_cols);

// Row-wise softmax over the last axis (rank-1 tensors count as one row).
// Max-subtraction keeps it stable for arbitrarily large inputs.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// Reparameterized soft sample: softmax((logits + g) / temperature) with g
// i.i.d. standard Gumbel. Differentiable w.r.t. logits; rank-1 input.
Tensor gumbel_softmax(const Tensor& logits, double temperature, RngStream& rng);
// Two-category Gumbel-Softmax over logits (s, 0), reduced to its first
// component: sigma((s + noise_diff) / temperature). noise_diff carries the
// difference of the two Gumbel draws and is treated as a constant.
Tensor gumbel_sigmoid(const Tensor& s, const Tensor& noise_diff, double temperature);

// Passes entries strictly above the threshold, zeroes the rest. Gradient
// flows through retained entries only. threshold must lie in [0,1].
Tensor threshold_gate(const Tensor& alpha, double threshold);
// Copies x with the main diagonal forced to 1 (square input).
Tensor set_diag_one(const Tensor& x);

// Row-wise layer normalization with learnable gain/bias of shape {D}.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Scaled dot-product attention over independent segments. q is {B*Lq, D},
// k and v are {B*Lkv, D}; the column space is split into `heads` slices and
// each segment attends within itself with 1/sqrt(D/heads) scaling. Returns
// {B*Lq, D}. Exposes the attention weights of the last call via out_weights
// when non-null (layout [seg][head][lq][lkv], forward values).
Tensor attention_segments(const Tensor& q, const Tensor& k, const Tensor& v, int heads, int q_seg,
                          int kv_seg, std::vector<double>* out_weights = nullptr);

// Gradient-vector utilities over a parameter list (fixed iteration order).
double global_grad_norm(const std::vector<Tensor>& params);
// Rescales gradients so the global norm is at most max_norm; returns the
// pre-clip norm. Throws if the norm is non-finite.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace mcs
