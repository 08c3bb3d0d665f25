#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longdoc/tensor.hpp"

namespace longdoc {

// Extended-context scheme: no memory, layer n reads layer n-1's cache from the
// previous segment (shift-down), or layer n reads layer n's own cache
// (same-layer enhanced recurrence).
enum class Scheme { kNone, kShiftDown, kSameLayer };

Scheme scheme_from_string(const std::string& s);
std::string scheme_to_string(Scheme s);

enum class Phase { kSkim, kRetro };

struct SchemeSpec {
  Scheme scheme = Scheme::kNone;
  int layers = 1;    // N
  int seg_len = 1;   // L
  int mem_len = 0;   // m
  int segments = 1;  // T
  void validate() const;
};

// Per-layer cache of gradient-detached hidden states. Buffer index 0 holds the
// token-embedding output (consumed by shift-down layer 1); 1..N hold block
// outputs. Updates are staged during a segment and become visible only after
// commit_segment(), so same-segment reads always see the previous segment.
class MemoryBank {
 public:
  MemoryBank(Scheme scheme, int n_layers, int mem_len);

  void reset();

  Scheme scheme() const { return scheme_; }
  int mem_len() const { return mem_len_; }
  int n_layers() const { return n_layers_; }

  Phase phase = Phase::kSkim;

  // Memory slice consumed by layer n (1-based) under the bank's scheme.
  // Undefined tensor when the scheme or mem_len provides none.
  Tensor memory_for_layer(int n) const;

  // [SG(memory for layer n) ∘ h_prev_layer]; degenerates to h_prev_layer.
  Tensor extend_context(int n, const Tensor& h_prev_layer) const;

  // Stage the freshly computed states for layer n (0 = embedding output).
  // Stores a stop-gradient copy; staging the same layer twice within one
  // segment is an error.
  void update(int n, const Tensor& h_new);

  // Fold staged states into the committed buffers, keeping the newest
  // mem_len tokens per layer (token-granular FIFO).
  void commit_segment();

  // Committed buffer for tests/inspection; may be undefined.
  const Tensor& buffer(int n) const;

  // Overwrite a committed buffer (checkpoint resume).
  void restore_buffer(int n, const Tensor& t);

  // Explicit reduced skim cache (top-layer states at the retro index set);
  // populated by the model only when asked, unused by the default pipeline.
  std::vector<Tensor> retro_cache;

 private:
  Scheme scheme_;
  int n_layers_;
  int mem_len_;
  std::vector<Tensor> committed_;  // size n_layers_+1
  std::vector<Tensor> staged_;
  std::vector<bool> staged_set_;
};

// Segment indices whose top-layer skim states form the reduced cache:
// {N, 2N, ..., floor(T/N)*N} plus T itself when not divisible; sorted.
std::vector<int> retro_index_set(int segments, int layers);

// Longest token span with a computational path into the final segment's
// output, by analytic chain arithmetic over the unrolled dependency graph.
std::int64_t max_dependency(const SchemeSpec& spec);

// The same quantity by explicit backward BFS over (segment, layer, position)
// nodes. Ground truth for max_dependency; capacity-limited.
std::int64_t reachability_oracle(const SchemeSpec& spec);

// Token-to-token attention calculation counts: two-pass segment recurrence
// with memory vs a plain sliding-window baseline.
std::int64_t attention_calcs(std::int64_t doc_len, std::int64_t mem_len, std::int64_t window);
std::int64_t local_attention_calcs(std::int64_t doc_len, std::int64_t window);

}  // namespace longdoc
