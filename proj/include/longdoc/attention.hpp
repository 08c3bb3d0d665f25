#pragma once

#include <cstdint>
#include <vector>

#include "longdoc/tensor.hpp"

namespace longdoc {

// Transformer-XL style relative attention parameters. u/v are the global
// content/position biases laid out head-major as length-d vectors so they
// slice exactly like q.
struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [d, d]
  Tensor w_r;                 // [d, d] relative-position projection
  Tensor u, v;                // [d]
  int n_heads = 1;

  int d_model() const { return w_q.dim(0); }
  int d_head() const { return d_model() / n_heads; }
  void validate() const;
};

// Sinusoidal encodings for signed relative distances. Row t encodes distance
// t - (L-1), covering [1-L, mem_len+L-1]; a pure function of (distance, d).
Tensor rel_encoding_table(int mem_len, int seg_len, int d);

// Optional inspection hook for tests and probes.
struct AttnTrace {
  std::vector<Tensor> head_probs;  // per head, [B, L, mem+L]
};

// Multi-head attention of the current segment over [mem ∘ h_cur]. Queries
// come from h_cur only; mem may be empty. With causal=true, position i sees
// extended positions <= mem_len + i. key_len < L hides the segment's trailing
// (padding) positions from every query; -1 means all of them are real.
Tensor attend(const Tensor& h_cur, const Tensor& mem, const AttentionParams& params,
              bool causal, AttnTrace* trace = nullptr, int key_len = -1);

// Plain-loop reference of the same computation, no tensor framework, no
// batching tricks. Ignores gradients; used as the oracle for attend().
std::vector<double> attend_reference(const Tensor& h_cur, const Tensor& mem,
                                     const AttentionParams& params, bool causal);

struct BlockParams {
  AttentionParams attn;
  Tensor ln1_gain, ln1_bias;
  Tensor ff_w1, ff_b1;  // [d, d_ff], [d_ff]
  Tensor ff_w2, ff_b2;  // [d_ff, d]
  Tensor ln2_gain, ln2_bias;
};

// Pregenerated keep-masks so training runs are reproducible; empty = no drop.
struct BlockDropout {
  std::vector<std::uint8_t> attn_keep;
  std::vector<std::uint8_t> ff_keep;
  double rate = 0.0;
};

// attend -> residual -> layer norm -> gelu feed-forward -> residual -> layer
// norm (post-LN order).
Tensor block_forward(const Tensor& h_prev_layer, const Tensor& mem, const BlockParams& params,
                     bool causal, const BlockDropout* dropout = nullptr,
                     AttnTrace* trace = nullptr, int key_len = -1);

}  // namespace longdoc
