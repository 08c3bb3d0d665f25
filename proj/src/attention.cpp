#include "longdoc/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "longdoc/ops.hpp"

namespace longdoc {

void AttentionParams::validate() const {
  const int d = d_model();
  if (n_heads <= 0 || d % n_heads != 0) {
    throw std::invalid_argument("attention: d=" + std::to_string(d) +
                                " not divisible by n_heads=" + std::to_string(n_heads));
  }
  for (const Tensor* t : {&w_q, &w_k, &w_v, &w_o, &w_r}) {
    if (t->ndim() != 2 || t->dim(0) != d || t->dim(1) != d) {
      throw std::invalid_argument("attention: projection shape " + format_shape(t->shape));
    }
    for (double v_ : *t->data) {
      if (!std::isfinite(v_)) throw std::invalid_argument("attention: non-finite parameter");
    }
  }
  if (static_cast<int>(u.numel()) != d || static_cast<int>(v.numel()) != d) {
    throw std::invalid_argument("attention: u/v must have length d");
  }
}

Tensor rel_encoding_table(int mem_len, int seg_len, int d) {
  if (d % 2 != 0) throw std::invalid_argument("rel_encoding_table: d must be even");
  const int n_dist = mem_len + 2 * seg_len - 1;
  Tensor table = Tensor::zeros({n_dist, d});
  for (int t = 0; t < n_dist; ++t) {
    const double dist = static_cast<double>(t - (seg_len - 1));
    for (int p = 0; p < d / 2; ++p) {
      const double freq = std::pow(10000.0, -2.0 * p / static_cast<double>(d));
      (*table.data)[static_cast<std::size_t>(t) * d + 2 * p] = std::sin(dist * freq);
      (*table.data)[static_cast<std::size_t>(t) * d + 2 * p + 1] = std::cos(dist * freq);
    }
  }
  return table;
}

namespace {

// Allowed keys per query row: the causal prefix and, when key_len < L, only
// the segment's first key_len (non-pad) positions.
std::vector<std::uint8_t> attn_mask(int L, int mem_len, bool causal, int key_len) {
  const int S = mem_len + L;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(L) * S, 0);
  for (int i = 0; i < L; ++i) {
    const int hi = causal ? std::min(mem_len + i, mem_len + key_len - 1) : mem_len + key_len - 1;
    for (int j = 0; j <= hi; ++j) mask[static_cast<std::size_t>(i) * S + j] = 1;
    if (i >= key_len) mask[static_cast<std::size_t>(i) * S + mem_len + i] = 1;  // pad row: self
  }
  return mask;
}

}  // namespace

Tensor attend(const Tensor& h_cur, const Tensor& mem, const AttentionParams& params,
              bool causal, AttnTrace* trace, int key_len) {
  params.validate();
  const int d = params.d_model();
  if (h_cur.ndim() != 3 || h_cur.dim(-1) != d) {
    throw std::invalid_argument("attend: h_cur shape " + format_shape(h_cur.shape) +
                                " vs d=" + std::to_string(d));
  }
  const bool has_mem = mem.defined() && mem.numel() > 0;
  if (has_mem && (mem.ndim() != 3 || mem.dim(-1) != d || mem.dim(0) != h_cur.dim(0))) {
    throw std::invalid_argument("attend: mem shape " + format_shape(mem.shape) +
                                " incompatible with h_cur " + format_shape(h_cur.shape));
  }
  const int L = h_cur.dim(1);
  const int mem_len = has_mem ? mem.dim(1) : 0;
  const int S = mem_len + L;
  const int dh = params.d_head();
  if (key_len < 0) key_len = L;
  if (key_len < 1 || key_len > L) {
    throw std::invalid_argument("attend: key_len " + std::to_string(key_len) +
                                " outside [1," + std::to_string(L) + "]");
  }

  const Tensor h_ext = has_mem ? ops::concat_len(mem, h_cur) : h_cur;
  const Tensor q = ops::matmul(h_cur, params.w_q);
  const Tensor k = ops::matmul(h_ext, params.w_k);
  const Tensor v = ops::matmul(h_ext, params.w_v);
  const Tensor r = ops::matmul(rel_encoding_table(mem_len, L, d), params.w_r);

  const bool need_mask = causal || key_len < L;
  const std::vector<std::uint8_t> mask =
      need_mask ? attn_mask(L, mem_len, causal, key_len) : std::vector<std::uint8_t>();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(params.n_heads));
  for (int h = 0; h < params.n_heads; ++h) {
    const int off = h * dh;
    const Tensor qh = ops::slice_lastdim(q, off, dh);
    const Tensor kh = ops::slice_lastdim(k, off, dh);
    const Tensor vh = ops::slice_lastdim(v, off, dh);
    const Tensor rh = ops::slice_lastdim(r, off, dh);
    const Tensor uh = ops::slice_lastdim(params.u, off, dh);
    const Tensor vbh = ops::slice_lastdim(params.v, off, dh);

    const Tensor content =
        ops::matmul(ops::add_rowvec(qh, uh), ops::transpose_last2(kh));        // [B,L,S]
    const Tensor pos_by_dist = ops::matmul(ops::add_rowvec(qh, vbh),
                                           ops::transpose_last2(rh));          // [B,L,n_dist]
    const Tensor position = ops::rel_gather(pos_by_dist, mem_len, S);          // [B,L,S]
    const Tensor scores = ops::scale(ops::add(content, position), inv_sqrt_dh);
    const Tensor probs = need_mask ? ops::masked_softmax_lastdim(scores, mask)
                                   : ops::softmax_lastdim(scores);
    if (trace) trace->head_probs.push_back(probs);
    head_outs.push_back(ops::matmul(probs, vh));  // [B,L,dh]
  }
  return ops::matmul(ops::concat_lastdim(head_outs), params.w_o);
}

std::vector<double> attend_reference(const Tensor& h_cur, const Tensor& mem,
                                     const AttentionParams& params, bool causal) {
  const int d = params.d_model();
  const int dh = params.d_head();
  const int B = h_cur.dim(0);
  const int L = h_cur.dim(1);
  const bool has_mem = mem.defined() && mem.numel() > 0;
  const int mem_len = has_mem ? mem.dim(1) : 0;
  const int S = mem_len + L;
  const Tensor rel = rel_encoding_table(mem_len, L, d);

  auto hext_at = [&](int b, int j, int c) {
    if (j < mem_len) return (*mem.data)[(static_cast<std::size_t>(b) * mem_len + j) * d + c];
    return (*h_cur.data)[(static_cast<std::size_t>(b) * L + (j - mem_len)) * d + c];
  };
  auto w_at = [&](const Tensor& w, int i, int j) {
    return (*w.data)[static_cast<std::size_t>(i) * d + j];
  };

  std::vector<double> merged(static_cast<std::size_t>(B) * L * d, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      for (int h = 0; h < params.n_heads; ++h) {
        const int off = h * dh;
        std::vector<double> qv(dh), scores(S, 0.0);
        for (int c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (int e = 0; e < d; ++e) {
            acc += (*h_cur.data)[(static_cast<std::size_t>(b) * L + i) * d + e] *
                   w_at(params.w_q, e, off + c);
          }
          qv[c] = acc;
        }
        const int limit = causal ? mem_len + i : S - 1;
        for (int j = 0; j <= limit; ++j) {
          double content = 0.0, position = 0.0;
          for (int c = 0; c < dh; ++c) {
            double kv = 0.0, rv = 0.0;
            for (int e = 0; e < d; ++e) {
              kv += hext_at(b, j, e) * w_at(params.w_k, e, off + c);
              const int t = (mem_len + i - j) + (L - 1);
              rv += (*rel.data)[static_cast<std::size_t>(t) * d + e] * w_at(params.w_r, e, off + c);
            }
            content += (qv[c] + (*params.u.data)[off + c]) * kv;
            position += (qv[c] + (*params.v.data)[off + c]) * rv;
          }
          scores[static_cast<std::size_t>(j)] =
              (content + position) / std::sqrt(static_cast<double>(dh));
        }
        double mx = scores[0];
        for (int j = 1; j <= limit; ++j) mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
        double denom = 0.0;
        for (int j = 0; j <= limit; ++j) denom += std::exp(scores[static_cast<std::size_t>(j)] - mx);
        for (int c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (int j = 0; j <= limit; ++j) {
            const double p = std::exp(scores[static_cast<std::size_t>(j)] - mx) / denom;
            double vv = 0.0;
            for (int e = 0; e < d; ++e) vv += hext_at(b, j, e) * w_at(params.w_v, e, off + c);
            acc += p * vv;
          }
          merged[(static_cast<std::size_t>(b) * L + i) * d + off + c] = acc;
        }
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(B) * L * d, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) {
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int e = 0; e < d; ++e) {
          acc += merged[(static_cast<std::size_t>(b) * L + i) * d + e] * w_at(params.w_o, e, c);
        }
        out[(static_cast<std::size_t>(b) * L + i) * d + c] = acc;
      }
    }
  }
  return out;
}

Tensor block_forward(const Tensor& h_prev_layer, const Tensor& mem, const BlockParams& params,
                     bool causal, const BlockDropout* dropout, AttnTrace* trace, int key_len) {
  Tensor a = attend(h_prev_layer, mem, params.attn, causal, trace, key_len);
  if (dropout && !dropout->attn_keep.empty()) {
    a = ops::dropout_mask(a, dropout->attn_keep, dropout->rate);
  }
  const Tensor x1 = ops::layer_norm(ops::add(h_prev_layer, a), params.ln1_gain, params.ln1_bias);
  Tensor f = ops::gelu(ops::add_rowvec(ops::matmul(x1, params.ff_w1), params.ff_b1));
  f = ops::add_rowvec(ops::matmul(f, params.ff_w2), params.ff_b2);
  if (dropout && !dropout->ff_keep.empty()) {
    f = ops::dropout_mask(f, dropout->ff_keep, dropout->rate);
  }
  return ops::layer_norm(ops::add(x1, f), params.ln2_gain, params.ln2_bias);
}

}  // namespace longdoc
