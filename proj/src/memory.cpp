#include "longdoc/memory.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

#include "longdoc/errors.hpp"
#include "longdoc/ops.hpp"

namespace longdoc {

Scheme scheme_from_string(const std::string& s) {
  if (s == "none") return Scheme::kNone;
  if (s == "shift_down") return Scheme::kShiftDown;
  if (s == "same_layer") return Scheme::kSameLayer;
  throw ValidationError("unknown scheme '" + s + "' (none|shift_down|same_layer)");
}

std::string scheme_to_string(Scheme s) {
  switch (s) {
    case Scheme::kNone: return "none";
    case Scheme::kShiftDown: return "shift_down";
    case Scheme::kSameLayer: return "same_layer";
  }
  return "?";
}

void SchemeSpec::validate() const {
  if (layers < 1 || seg_len < 1 || segments < 1 || mem_len < 0) {
    throw ValidationError("scheme spec: N,L,T must be positive and m >= 0");
  }
}

MemoryBank::MemoryBank(Scheme scheme, int n_layers, int mem_len)
    : scheme_(scheme), n_layers_(n_layers), mem_len_(mem_len) {
  if (n_layers < 1) throw std::invalid_argument("memory bank: need >=1 layer");
  if (mem_len < 0) throw std::invalid_argument("memory bank: mem_len < 0");
  reset();
}

void MemoryBank::reset() {
  committed_.assign(static_cast<std::size_t>(n_layers_) + 1, Tensor());
  staged_.assign(static_cast<std::size_t>(n_layers_) + 1, Tensor());
  staged_set_.assign(static_cast<std::size_t>(n_layers_) + 1, false);
  retro_cache.clear();
  phase = Phase::kSkim;
}

Tensor MemoryBank::memory_for_layer(int n) const {
  if (n < 1 || n > n_layers_) {
    throw std::invalid_argument("memory_for_layer: layer " + std::to_string(n) +
                                " outside [1," + std::to_string(n_layers_) + "]");
  }
  if (scheme_ == Scheme::kNone || mem_len_ == 0) return Tensor();
  const int source = scheme_ == Scheme::kShiftDown ? n - 1 : n;
  return committed_[static_cast<std::size_t>(source)];
}

Tensor MemoryBank::extend_context(int n, const Tensor& h_prev_layer) const {
  const Tensor mem = memory_for_layer(n);
  if (!mem.defined() || mem.numel() == 0) return h_prev_layer;
  if (mem.dim(-1) != h_prev_layer.dim(-1)) {
    throw std::invalid_argument("extend_context: hidden width mismatch " +
                                format_shape(mem.shape) + " vs " +
                                format_shape(h_prev_layer.shape));
  }
  return ops::concat_len(mem, h_prev_layer);
}

void MemoryBank::update(int n, const Tensor& h_new) {
  if (n < 0 || n > n_layers_) {
    throw std::invalid_argument("memory update: layer " + std::to_string(n) +
                                " outside [0," + std::to_string(n_layers_) + "]");
  }
  if (scheme_ == Scheme::kNone || mem_len_ == 0) return;
  if (staged_set_[static_cast<std::size_t>(n)]) {
    throw std::invalid_argument("memory update: layer " + std::to_string(n) +
                                " already updated for this segment");
  }
  staged_[static_cast<std::size_t>(n)] = ops::stop_gradient(h_new);
  staged_set_[static_cast<std::size_t>(n)] = true;
}

void MemoryBank::commit_segment() {
  for (std::size_t i = 0; i < staged_.size(); ++i) {
    if (!staged_set_[i]) continue;
    Tensor merged = committed_[i].defined() && committed_[i].numel() > 0
                        ? ops::concat_len(committed_[i], staged_[i])
                        : staged_[i];
    const int len = merged.dim(-2);
    if (len > mem_len_) {
      merged = ops::slice_len(merged, len - mem_len_, mem_len_);
    }
    committed_[i] = merged;
    staged_[i] = Tensor();
    staged_set_[i] = false;
  }
}

const Tensor& MemoryBank::buffer(int n) const {
  if (n < 0 || n > n_layers_) throw std::out_of_range("memory buffer index");
  return committed_[static_cast<std::size_t>(n)];
}

void MemoryBank::restore_buffer(int n, const Tensor& t) {
  if (n < 0 || n > n_layers_) throw std::out_of_range("memory buffer index");
  committed_[static_cast<std::size_t>(n)] = t.detached_copy();
}

std::vector<int> retro_index_set(int segments, int layers) {
  if (segments < 1 || layers < 1) {
    throw ValidationError("retro_index_set: T and N must be >= 1");
  }
  std::vector<int> out;
  for (int i = layers; i <= segments; i += layers) out.push_back(i);
  if (out.empty() || out.back() != segments) out.push_back(segments);
  return out;
}

std::int64_t max_dependency(const SchemeSpec& spec) {
  spec.validate();
  const std::int64_t L = spec.seg_len, m = spec.mem_len;
  const std::int64_t N = spec.layers, T = spec.segments;
  if (spec.scheme == Scheme::kNone || m == 0) return L;
  // Each memory hop moves from a segment's query block to the cached window
  // just before that segment; shift-down spends a layer per hop, same-layer a
  // segment per hop. Within-segment attention then reaches back to the start
  // of whichever segment the chain lands in.
  const std::int64_t hops = spec.scheme == Scheme::kShiftDown ? N - 1 : T - 1;
  std::int64_t seg = T;
  for (std::int64_t h = 0; h < hops && seg > 1; ++h) {
    const std::int64_t window_hi = (seg - 1) * L;
    const std::int64_t window_lo = std::max<std::int64_t>(0, window_hi - m);
    if (window_lo >= window_hi) break;
    seg = window_lo / L + 1;
  }
  return T * L - (seg - 1) * L;
}

std::int64_t reachability_oracle(const SchemeSpec& spec) {
  spec.validate();
  const std::int64_t L = spec.seg_len, m = spec.mem_len;
  const std::int64_t N = spec.layers, T = spec.segments;
  if (T * L * N > 100000) {
    throw ValidationError("reachability_oracle: spec exceeds 1e5-node capacity");
  }
  // Node (tau, n, p); n in [0..N], layer 0 = input tokens. Dependencies run
  // consumer -> producer: causal within-segment attention one layer down,
  // plus the scheme's memory window. The embedding-level window (shift-down
  // layer 1) is excluded: the dependency metric counts paths through
  // transformer-layer states.
  const std::int64_t layer_stride = L;
  const std::int64_t seg_stride = (N + 1) * L;
  auto node_id = [&](std::int64_t tau, std::int64_t n, std::int64_t p) {
    return (tau - 1) * seg_stride + n * layer_stride + p;
  };
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(T * seg_stride), 0);
  std::deque<std::int64_t> queue;
  auto push = [&](std::int64_t tau, std::int64_t n, std::int64_t p) {
    const std::int64_t id = node_id(tau, n, p);
    if (!visited[static_cast<std::size_t>(id)]) {
      visited[static_cast<std::size_t>(id)] = 1;
      queue.push_back(id);
    }
  };
  for (std::int64_t p = 0; p < L; ++p) push(T, N, p);

  std::int64_t oldest_token = T * L;  // sentinel past the end
  while (!queue.empty()) {
    const std::int64_t id = queue.front();
    queue.pop_front();
    const std::int64_t tau = id / seg_stride + 1;
    const std::int64_t n = (id % seg_stride) / layer_stride;
    const std::int64_t p = id % layer_stride;
    if (n == 0) {
      oldest_token = std::min(oldest_token, (tau - 1) * L + p);
      continue;
    }
    for (std::int64_t j = 0; j <= p; ++j) push(tau, n - 1, j);
    if (spec.scheme == Scheme::kNone || m == 0) continue;
    if (spec.scheme == Scheme::kShiftDown && n == 1) continue;
    const std::int64_t src_layer = spec.scheme == Scheme::kShiftDown ? n - 1 : n;
    const std::int64_t window_hi = (tau - 1) * L;
    const std::int64_t window_lo = std::max<std::int64_t>(0, window_hi - m);
    for (std::int64_t g = window_lo; g < window_hi; ++g) {
      push(g / L + 1, src_layer, g % L);
    }
  }
  return T * L - oldest_token;
}

std::int64_t attention_calcs(std::int64_t doc_len, std::int64_t mem_len, std::int64_t window) {
  if (window <= 0) throw ValidationError("attention_calcs: window must be positive");
  if (doc_len < 0 || mem_len < 0) throw ValidationError("attention_calcs: negative input");
  const std::int64_t n_segments = (doc_len + window - 1) / window;
  return 2 * n_segments * window * (window + mem_len);
}

std::int64_t local_attention_calcs(std::int64_t doc_len, std::int64_t window) {
  if (window <= 0) throw ValidationError("local_attention_calcs: window must be positive");
  if (doc_len < 0) throw ValidationError("local_attention_calcs: negative input");
  return doc_len * window;
}

}  // namespace longdoc
