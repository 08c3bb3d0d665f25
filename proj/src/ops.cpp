#include "longdoc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace longdoc {
namespace ops {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool track(std::initializer_list<const Tensor*> parents) {
  for (const Tensor* p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Call before constructing a backward closure so the captured grad buffer is
// the final one.
void mark_tracked(Tensor& out) {
  out.requires_grad = true;
  out.ensure_grad();
}

// Wires the tape node. `bw` must capture shared buffers only (never the
// output Tensor itself, which would cycle through the node).
void record(Tensor& out, std::initializer_list<const Tensor*> parents,
            std::function<void()> bw) {
  auto n = std::make_shared<Node>();
  for (const Tensor* p : parents) {
    if (p->node) n->parents.push_back(p->node);
  }
  n->backward = std::move(bw);
  out.node = n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                format_shape(a.shape) + " vs " + format_shape(b.shape));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (track({&a, &b})) {
    mark_tracked(out);
    record(out, {&a, &b}, [a, b, og = out.grad, n]() {
      if (a.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*og)[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*b.grad)[i] += (*og)[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (track({&a, &b})) {
    mark_tracked(out);
    record(out, {&a, &b}, [a, b, og = out.grad, n]() {
      if (a.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*og)[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*b.grad)[i] -= (*og)[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (track({&a, &b})) {
    mark_tracked(out);
    record(out, {&a, &b}, [a, b, og = out.grad, n]() {
      if (a.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*og)[i] * (*b.data)[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < n; ++i) (*b.grad)[i] += (*og)[i] * (*a.data)[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  if (track({&a})) {
    mark_tracked(out);
    record(out, {&a}, [a, og = out.grad, c, n]() {
      for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*og)[i] * c;
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.ndim() != 1 || x.ndim() < 1 || x.dim(-1) != v.dim(0)) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + format_shape(x.shape) +
                                " vs " + format_shape(v.shape));
  }
  const std::size_t d = static_cast<std::size_t>(v.dim(0));
  const std::size_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      (*out.data)[r * d + j] = (*x.data)[r * d + j] + (*v.data)[j];
    }
  }
  if (track({&x, &v})) {
    mark_tracked(out);
    record(out, {&x, &v}, [x, v, og = out.grad, rows, d]() {
      if (x.requires_grad) {
        for (std::size_t i = 0; i < rows * d; ++i) (*x.grad)[i] += (*og)[i];
      }
      if (v.requires_grad) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) (*v.grad)[j] += (*og)[r * d + j];
        }
      }
    });
  }
  return out;
}

namespace {

// C[M,P] += A[M,K] * B[K,P], optionally transposing either input view.
void gemm_acc(const double* a, const double* b, double* c, int M, int K, int P,
              bool trans_a, bool trans_b) {
  for (int i = 0; i < M; ++i) {
    for (int k = 0; k < K; ++k) {
      const double av = trans_a ? a[k * M + i] : a[i * K + k];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : b + static_cast<std::size_t>(k) * P;
      double* crow = c + static_cast<std::size_t>(i) * P;
      if (trans_b) {
        for (int j = 0; j < P; ++j) crow[j] += av * b[j * K + k];
      } else {
        for (int j = 0; j < P; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("matmul: need >=2-D operands, got " + format_shape(a.shape) +
                                " x " + format_shape(b.shape));
  }
  const int M = a.dim(-2), K = a.dim(-1);
  const int Kb = b.dim(-2), P = b.dim(-1);
  if (K != Kb) {
    throw std::invalid_argument("matmul: inner dimensions differ " + format_shape(a.shape) +
                                " x " + format_shape(b.shape));
  }
  const bool shared_b = (b.ndim() == 2 && a.ndim() > 2);
  if (!shared_b) {
    if (a.ndim() != b.ndim()) {
      throw std::invalid_argument("matmul: rank mismatch " + format_shape(a.shape) + " x " +
                                  format_shape(b.shape));
    }
    for (int i = 0; i < a.ndim() - 2; ++i) {
      if (a.shape[static_cast<std::size_t>(i)] != b.shape[static_cast<std::size_t>(i)]) {
        throw std::invalid_argument("matmul: batch dims differ " + format_shape(a.shape) +
                                    " x " + format_shape(b.shape));
      }
    }
  }
  Shape out_shape = a.shape;
  out_shape.back() = P;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t batches = a.numel() / (static_cast<std::size_t>(M) * K);
  const std::size_t a_step = static_cast<std::size_t>(M) * K;
  const std::size_t b_step = shared_b ? 0 : static_cast<std::size_t>(K) * P;
  const std::size_t o_step = static_cast<std::size_t>(M) * P;
  for (std::size_t t = 0; t < batches; ++t) {
    gemm_acc(a.data->data() + t * a_step, b.data->data() + t * b_step,
             out.data->data() + t * o_step, M, K, P, false, false);
  }
  if (track({&a, &b})) {
    mark_tracked(out);
    record(out, {&a, &b},
           [a, b, og = out.grad, batches, a_step, b_step, o_step, M, K, P]() {
             for (std::size_t t = 0; t < batches; ++t) {
               const double* go = og->data() + t * o_step;
               if (a.requires_grad) {  // dA = dC * B^T
                 gemm_acc(go, b.data->data() + t * b_step, a.grad->data() + t * a_step,
                          M, P, K, false, true);
               }
               if (b.requires_grad) {  // dB = A^T * dC
                 gemm_acc(a.data->data() + t * a_step, go, b.grad->data() + t * b_step,
                          K, M, P, true, false);
               }
             }
           });
  }
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.ndim() < 2) throw std::invalid_argument("transpose_last2: need >=2-D");
  const int R = x.dim(-2), C = x.dim(-1);
  Shape out_shape = x.shape;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t mat = static_cast<std::size_t>(R) * C;
  const std::size_t batches = x.numel() / mat;
  for (std::size_t t = 0; t < batches; ++t) {
    const double* src = x.data->data() + t * mat;
    double* dst = out.data->data() + t * mat;
    for (int i = 0; i < R; ++i) {
      for (int j = 0; j < C; ++j) dst[static_cast<std::size_t>(j) * R + i] = src[static_cast<std::size_t>(i) * C + j];
    }
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad, batches, mat, R, C]() {
      for (std::size_t t = 0; t < batches; ++t) {
        const double* go = og->data() + t * mat;
        double* gx = x.grad->data() + t * mat;
        for (int i = 0; i < R; ++i) {
          for (int j = 0; j < C; ++j) gx[static_cast<std::size_t>(i) * C + j] += go[static_cast<std::size_t>(j) * R + i];
        }
      }
    });
  }
  return out;
}

Tensor concat_len(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || a.ndim() < 2) {
    throw std::invalid_argument("concat_len: rank mismatch " + format_shape(a.shape) +
                                " vs " + format_shape(b.shape));
  }
  for (int i = 0; i < a.ndim(); ++i) {
    if (i == a.ndim() - 2) continue;
    if (a.shape[static_cast<std::size_t>(i)] != b.shape[static_cast<std::size_t>(i)]) {
      throw std::invalid_argument("concat_len: non-length dims differ " +
                                  format_shape(a.shape) + " vs " + format_shape(b.shape));
    }
  }
  const int ma = a.dim(-2), mb = b.dim(-2), d = a.dim(-1);
  Shape out_shape = a.shape;
  out_shape[out_shape.size() - 2] = ma + mb;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t arow = static_cast<std::size_t>(ma) * d;
  const std::size_t brow = static_cast<std::size_t>(mb) * d;
  const std::size_t orow = arow + brow;
  const std::size_t batches = out.numel() == 0 ? 0 : out.numel() / orow;
  for (std::size_t t = 0; t < batches; ++t) {
    std::copy_n(a.data->data() + t * arow, arow, out.data->data() + t * orow);
    std::copy_n(b.data->data() + t * brow, brow, out.data->data() + t * orow + arow);
  }
  if (track({&a, &b})) {
    mark_tracked(out);
    record(out, {&a, &b}, [a, b, og = out.grad, batches, arow, brow, orow]() {
      for (std::size_t t = 0; t < batches; ++t) {
        if (a.requires_grad) {
          for (std::size_t i = 0; i < arow; ++i) (*a.grad)[t * arow + i] += (*og)[t * orow + i];
        }
        if (b.requires_grad) {
          for (std::size_t i = 0; i < brow; ++i) (*b.grad)[t * brow + i] += (*og)[t * orow + arow + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_len(const Tensor& x, int start, int len) {
  if (x.ndim() < 2) throw std::invalid_argument("slice_len: need >=2-D");
  const int R = x.dim(-2), d = x.dim(-1);
  if (start < 0 || len < 0 || start + len > R) {
    throw std::invalid_argument("slice_len: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside length " +
                                std::to_string(R));
  }
  Shape out_shape = x.shape;
  out_shape[out_shape.size() - 2] = len;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t xmat = static_cast<std::size_t>(R) * d;
  const std::size_t omat = static_cast<std::size_t>(len) * d;
  const std::size_t batches = x.numel() / xmat;
  const std::size_t off = static_cast<std::size_t>(start) * d;
  for (std::size_t t = 0; t < batches; ++t) {
    std::copy_n(x.data->data() + t * xmat + off, omat, out.data->data() + t * omat);
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad, batches, xmat, omat, off]() {
      for (std::size_t t = 0; t < batches; ++t) {
        for (std::size_t i = 0; i < omat; ++i) (*x.grad)[t * xmat + off + i] += (*og)[t * omat + i];
      }
    });
  }
  return out;
}

Tensor slice_lastdim(const Tensor& x, int offset, int len) {
  const int D = x.dim(-1);
  if (offset < 0 || len <= 0 || offset + len > D) {
    throw std::invalid_argument("slice_lastdim: range [" + std::to_string(offset) + "," +
                                std::to_string(offset + len) + ") outside width " +
                                std::to_string(D));
  }
  Shape out_shape = x.shape;
  out_shape.back() = len;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data->data() + r * D + offset, len, out.data->data() + r * len);
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad, rows, D, offset, len]() {
      for (std::size_t r = 0; r < rows; ++r) {
        for (int i = 0; i < len; ++i) {
          (*x.grad)[r * static_cast<std::size_t>(D) + offset + i] += (*og)[r * len + i];
        }
      }
    });
  }
  return out;
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_lastdim: no inputs");
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != parts[0].ndim()) {
      throw std::invalid_argument("concat_lastdim: rank mismatch");
    }
    for (int i = 0; i < p.ndim() - 1; ++i) {
      if (p.shape[static_cast<std::size_t>(i)] != parts[0].shape[static_cast<std::size_t>(i)]) {
        throw std::invalid_argument("concat_lastdim: leading dims differ " +
                                    format_shape(p.shape) + " vs " + format_shape(parts[0].shape));
      }
    }
    total += p.dim(-1);
  }
  Shape out_shape = parts[0].shape;
  out_shape.back() = total;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t rows = out.numel() / static_cast<std::size_t>(total);
  int off = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const int w = p.dim(-1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data->data() + r * w, w, out.data->data() + r * total + off);
    }
    off += w;
    any_grad = any_grad || p.requires_grad;
  }
  if (any_grad) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    out.requires_grad = true;
    out.ensure_grad();
    auto n = std::make_shared<Node>();
    for (const Tensor& p : parts) {
      if (p.node) n->parents.push_back(p.node);
    }
    n->backward = [parts, og = out.grad, rows, total]() {
      int off2 = 0;
      for (const Tensor& p : parts) {
        const int w = p.dim(-1);
        if (p.requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (int i = 0; i < w; ++i) {
              (*p.grad)[r * w + i] += (*og)[r * total + off2 + i];
            }
          }
        }
        off2 += w;
      }
    };
    out.node = n;
  }
  return out;
}

Tensor stop_gradient(const Tensor& x) { return x.detached_copy(); }

Tensor reshape(const Tensor& x, const Shape& shape) {
  Tensor out = Tensor::from_data(shape, *x.data);
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*x.grad)[i] += (*og)[i];
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  return masked_softmax_lastdim(x, std::vector<std::uint8_t>());
}

Tensor masked_softmax_lastdim(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  if (x.ndim() < 1) throw std::invalid_argument("softmax: need >=1-D");
  const std::size_t C = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = x.numel() / C;
  std::size_t mask_rows = 0;
  if (!mask.empty()) {
    if (x.ndim() < 2 || mask.size() % C != 0) {
      throw std::invalid_argument("masked_softmax: mask must cover trailing dims");
    }
    mask_rows = mask.size() / C;
    const std::size_t R = static_cast<std::size_t>(x.dim(-2));
    if (mask_rows != R) {
      throw std::invalid_argument("masked_softmax: mask rows " + std::to_string(mask_rows) +
                                  " != " + std::to_string(R));
    }
  }
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * C;
    double* o = out.data->data() + r * C;
    const std::uint8_t* mrow = mask.empty() ? nullptr : mask.data() + (r % mask_rows) * C;
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < C; ++j) {
      if (mrow && !mrow[j]) continue;
      mx = std::max(mx, in[j]);
    }
    if (mx == -HUGE_VAL) {
      throw std::invalid_argument("masked_softmax: fully masked row");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      if (mrow && !mrow[j]) {
        o[j] = 0.0;
      } else {
        o[j] = std::exp(in[j] - mx);
        denom += o[j];
      }
    }
    for (std::size_t j = 0; j < C; ++j) o[j] /= denom;
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad, od = out.data, rows, C]() {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = od->data() + r * C;
        const double* gy = og->data() + r * C;
        double dot = 0.0;
        for (std::size_t j = 0; j < C; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < C; ++j) {
          (*x.grad)[r * C + j] += y[j] * (gy[j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = static_cast<std::size_t>(x.dim(-1));
  if (gain.numel() != d || bias.numel() != d) {
    throw std::invalid_argument("layer_norm: gain/bias " + format_shape(gain.shape) + "/" +
                                format_shape(bias.shape) + " vs width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape);
  // Keep per-row mean and inverse stddev for the backward pass.
  auto mean = std::make_shared<std::vector<double>>(rows);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean)[r] = mu;
    (*inv_std)[r] = is;
    double* o = out.data->data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = (in[j] - mu) * is * (*gain.data)[j] + (*bias.data)[j];
    }
  }
  if (track({&x, &gain, &bias})) {
    mark_tracked(out);
    record(out, {&x, &gain, &bias}, [x, gain, bias, og = out.grad, mean, inv_std, rows, d]() {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data->data() + r * d;
        const double* gy = og->data() + r * d;
        const double mu = (*mean)[r];
        const double is = (*inv_std)[r];
        if (gain.requires_grad || bias.requires_grad) {
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (in[j] - mu) * is;
            if (gain.requires_grad) (*gain.grad)[j] += gy[j] * xhat;
            if (bias.requires_grad) (*bias.grad)[j] += gy[j];
          }
        }
        if (x.requires_grad) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = gy[j] * (*gain.data)[j];
            const double xhat = (in[j] - mu) * is;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          const double nd = static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = gy[j] * (*gain.data)[j];
            const double xhat = (in[j] - mu) * is;
            (*x.grad)[r * d + j] +=
                is * (dxhat - sum_dxhat / nd - xhat * sum_dxhat_xhat / nd);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    (*out.data)[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = (*x.data)[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*x.grad)[i] += (*og)[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids,
                        const Shape& id_shape) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding_lookup: table must be 2-D");
  std::size_t count = 1;
  for (int s : id_shape) count *= static_cast<std::size_t>(s);
  if (count != ids.size()) {
    throw std::invalid_argument("embedding_lookup: ids size " + std::to_string(ids.size()) +
                                " vs shape " + format_shape(id_shape));
  }
  const int V = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || id >= V) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary [0," + std::to_string(V) + ")");
    }
  }
  Shape out_shape = id_shape;
  out_shape.push_back(d);
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data->data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data->data() + i * d);
  }
  if (track({&table})) {
    mark_tracked(out);
    record(out, {&table}, [table, ids, og = out.grad, d]() {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < d; ++j) {
          (*table.grad)[static_cast<std::size_t>(ids[i]) * d + j] += (*og)[i * d + j];
        }
      }
    });
  }
  return out;
}

namespace {

double row_logsumexp(const double* in, std::size_t V) {
  double mx = in[0];
  for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, in[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < V; ++j) s += std::exp(in[j] - mx);
  return mx + std::log(s);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     std::int32_t ignore_index) {
  const std::size_t V = static_cast<std::size_t>(logits.dim(-1));
  const std::size_t rows = logits.numel() / V;
  if (targets.size() != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside [0," + std::to_string(V) + ")");
    }
    const double* in = logits.data->data() + r * V;
    total += row_logsumexp(in, V) - in[t];
    ++count;
  }
  Tensor out = Tensor::from_data({1}, {count ? total / static_cast<double>(count) : 0.0});
  if (track({&logits}) && count > 0) {
    mark_tracked(out);
    record(out, {&logits}, [logits, targets, ignore_index, og = out.grad, rows, V, count]() {
      const double g = (*og)[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::int32_t t = targets[r];
        if (t == ignore_index) continue;
        const double* in = logits.data->data() + r * V;
        const double lse = row_logsumexp(in, V);
        for (std::size_t j = 0; j < V; ++j) {
          const double p = std::exp(in[j] - lse);
          (*logits.grad)[r * V + j] +=
              g * (p - (j == static_cast<std::size_t>(t) ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

std::vector<double> nll_rows(const Tensor& logits, const std::vector<std::int32_t>& targets,
                             std::int32_t ignore_index) {
  const std::size_t V = static_cast<std::size_t>(logits.dim(-1));
  const std::size_t rows = logits.numel() / V;
  if (targets.size() != rows) {
    throw std::invalid_argument("nll_rows: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  }
  std::vector<double> out(rows, std::nan(""));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw std::out_of_range("nll_rows: target " + std::to_string(t) + " outside [0," +
                              std::to_string(V) + ")");
    }
    const double* in = logits.data->data() + r * V;
    out[r] = row_logsumexp(in, V) - in[t];
  }
  return out;
}

Tensor dropout_mask(const Tensor& x, const std::vector<std::uint8_t>& keep, double rate) {
  if (keep.size() != x.numel()) {
    throw std::invalid_argument("dropout_mask: mask size " + std::to_string(keep.size()) +
                                " vs " + std::to_string(x.numel()) + " elements");
  }
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout_mask: bad rate");
  const double s = 1.0 / (1.0 - rate);
  Tensor out = Tensor::zeros(x.shape);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    (*out.data)[i] = keep[i] ? (*x.data)[i] * s : 0.0;
  }
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, keep, og = out.grad, s, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) (*x.grad)[i] += (*og)[i] * s;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : *x.data) s += v;
  Tensor out = Tensor::from_data({1}, {s});
  if (track({&x})) {
    mark_tracked(out);
    record(out, {&x}, [x, og = out.grad]() {
      const double g = (*og)[0];
      for (double& gv : *x.grad) gv += g;
    });
  }
  return out;
}

Tensor rel_gather(const Tensor& qr, int mem_len, int context_len) {
  if (qr.ndim() < 2) throw std::invalid_argument("rel_gather: need >=2-D");
  const int L = qr.dim(-2);
  const int n_dist = qr.dim(-1);
  if (n_dist != mem_len + 2 * L - 1) {
    throw std::invalid_argument("rel_gather: distance table width " + std::to_string(n_dist) +
                                " != mem+2L-1 = " + std::to_string(mem_len + 2 * L - 1));
  }
  if (context_len != mem_len + L) {
    throw std::invalid_argument("rel_gather: context len " + std::to_string(context_len) +
                                " != mem+L");
  }
  Shape out_shape = qr.shape;
  out_shape.back() = context_len;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t in_mat = static_cast<std::size_t>(L) * n_dist;
  const std::size_t out_mat = static_cast<std::size_t>(L) * context_len;
  const std::size_t batches = qr.numel() / in_mat;
  for (std::size_t t = 0; t < batches; ++t) {
    const double* src = qr.data->data() + t * in_mat;
    double* dst = out.data->data() + t * out_mat;
    for (int i = 0; i < L; ++i) {
      for (int j = 0; j < context_len; ++j) {
        dst[static_cast<std::size_t>(i) * context_len + j] =
            src[static_cast<std::size_t>(i) * n_dist + (mem_len + i - j + L - 1)];
      }
    }
  }
  if (track({&qr})) {
    mark_tracked(out);
    record(out, {&qr},
           [qr, og = out.grad, batches, in_mat, out_mat, L, n_dist, context_len, mem_len]() {
             for (std::size_t t = 0; t < batches; ++t) {
               const double* go = og->data() + t * out_mat;
               double* gq = qr.grad->data() + t * in_mat;
               for (int i = 0; i < L; ++i) {
                 for (int j = 0; j < context_len; ++j) {
                   gq[static_cast<std::size_t>(i) * n_dist + (mem_len + i - j + L - 1)] +=
                       go[static_cast<std::size_t>(i) * context_len + j];
                 }
               }
             }
           });
  }
  return out;
}

}  // namespace ops
}  // namespace longdoc
