#pragma once

#include <cstdint>
#include <vector>

#include "longdoc/tensor.hpp"

namespace longdoc {
namespace ops {

// Elementwise / scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// Adds a length-d vector to every trailing row of x[..., d].
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// Batched matrix product a[..,M,K] x b[..,K,P] -> [..,M,P]. b may be 2-D and
// is then shared across a's leading batch dims; otherwise leading dims must
// match exactly (no other broadcasting).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// Length-dimension (second-to-last) concatenation: a[..,m,d] + b[..,L,d].
Tensor concat_len(const Tensor& a, const Tensor& b);
Tensor slice_len(const Tensor& x, int start, int len);
Tensor slice_lastdim(const Tensor& x, int offset, int len);
Tensor concat_lastdim(const std::vector<Tensor>& parts);

// Value passes through bit-equal; backward contributes exactly zero upstream.
Tensor stop_gradient(const Tensor& x);

// Same elements, new shape (copy); numel must match.
Tensor reshape(const Tensor& x, const Shape& shape);

Tensor softmax_lastdim(const Tensor& x);
// mask covers the trailing two dims (rows x cols), broadcast over leading
// dims; entries with mask==0 get weight exactly 0 and the row renormalizes
// over the allowed entries only.
Tensor masked_softmax_lastdim(const Tensor& x, const std::vector<std::uint8_t>& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-12);
Tensor gelu(const Tensor& x);

// table[V,d], ids laid out row-major with shape id_shape -> [id_shape..., d].
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids,
                        const Shape& id_shape);

// Mean negative log-likelihood over rows whose target != ignore_index.
// logits[..., V]; targets has one entry per logit row. No target rows -> 0.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     std::int32_t ignore_index);
// Per-row NLL without autograd, for evaluation loops. Ignored rows get NaN.
std::vector<double> nll_rows(const Tensor& logits, const std::vector<std::int32_t>& targets,
                             std::int32_t ignore_index);

// Pregenerated-mask dropout (inverted scaling); mask has one byte per element.
Tensor dropout_mask(const Tensor& x, const std::vector<std::uint8_t>& keep, double rate);

Tensor sum_all(const Tensor& x);

// Relative-position gather for attention scores: qr[.., L, n_dist] holds
// query-position-encoding products indexed by distance; output [.., L, S]
// with out[.., i, j] = qr[.., i, mem_len + i - j + L - 1].
Tensor rel_gather(const Tensor& qr, int mem_len, int context_len);

}  // namespace ops
}  // namespace longdoc
