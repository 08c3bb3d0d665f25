#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "longdoc/attention.hpp"
#include "longdoc/data.hpp"
#include "longdoc/memory.hpp"
#include "longdoc/tensor.hpp"

namespace longdoc {

enum class TaskMode { kAr, kMlm };

TaskMode task_mode_from_string(const std::string& s);
std::string task_mode_to_string(TaskMode m);

struct ModelConfig {
  int layers = 2;      // N
  int d_model = 32;    // d
  int n_heads = 2;
  int d_ff = 64;
  int vocab_size = 64;
  int seg_len = 16;    // L
  int mem_len = 16;    // m
  Scheme scheme = Scheme::kSameLayer;
  TaskMode mode = TaskMode::kAr;
  int max_chunks = 3;  // M, reorder chunk cap
  double dropout = 0.1;
  bool retrospective = false;       // two-phase document feeding
  bool loss_in_skim = false;        // also attach task losses to the skim pass
  bool collect_retro_cache = false; // keep the explicit reduced skim cache

  bool causal() const { return mode == TaskMode::kAr; }
  std::int64_t reorder_classes() const;
  void validate() const;
};

// All learnable state. Parameter traversal order is fixed and shared by the
// optimizer and the checkpoint format.
struct Model {
  ModelConfig cfg;
  Tensor tok_emb;  // [V, d]
  std::vector<BlockParams> blocks;
  Tensor lm_w, lm_b;                    // [d, V], [V]
  Tensor ro_w1, ro_b1, ro_w2, ro_b2;    // reorder head, 2 layers

  static Model init(const ModelConfig& cfg, Rng& rng);

  std::vector<std::pair<std::string, Tensor*>> named_params();
  void zero_grads();
  std::size_t param_count();
};

struct ModelOutput {
  Tensor logits;          // [1, L, V]
  Tensor reorder_logits;  // [1, K]
  Tensor top_hidden;      // [1, L, d]
};

// Test/probe instrumentation captured during a segment forward.
struct SegmentTrace {
  std::vector<Tensor> layer_inputs;   // h entering each block (after embed for n=1)
  std::vector<Tensor> layer_outputs;  // h leaving each block
  std::vector<Tensor> memory_used;    // memory slice consumed per layer (may be undefined)
};

// One segment through embed -> N x (extend-context block) -> heads; the bank
// advances by one segment. ids must be exactly seg_len wide (pad the tail);
// valid_len counts real tokens. Dropout draws from rng only when train=true.
ModelOutput forward_segment(Model& model, const std::vector<TokenId>& ids, int valid_len,
                            MemoryBank& bank, bool train, Rng* rng,
                            SegmentTrace* trace = nullptr);

struct DocumentRecord {
  std::vector<ModelOutput> skim_outputs;
  std::vector<SegmentTrace> skim_traces;
  std::vector<SegmentTrace> main_traces;
  std::vector<Tensor> retro_cache;  // copy of the bank's reduced skim cache
};

// retrospective=false: one left-to-right pass over a fresh bank.
// retrospective=true: skim pass first (memory only), then the reported pass
// with the same bank carried over uninterrupted.
std::vector<ModelOutput> forward_document(Model& model, const DocumentStream& doc,
                                          bool retrospective, bool train, Rng* rng,
                                          DocumentRecord* record = nullptr);

// Masked-LM cross-entropy over masked positions (targets -1 elsewhere), plus
// the reorder term iff tau == T (1-based). Terms are averaged then summed 1:1.
Tensor mlm_reorder_loss(const ModelOutput& out, const std::vector<TokenId>& mlm_targets,
                        std::int64_t reorder_label, int tau, int segments,
                        std::int64_t n_classes);

// Next-token cross-entropy; targets -1 where undefined.
Tensor ar_loss(const ModelOutput& out, const std::vector<TokenId>& next_targets);

// Versioned binary container: config text, optional vocabulary, named FP64
// parameter arrays. Round-trips bit-exactly.
void save_model(const std::string& path, Model& model, const Vocab* vocab = nullptr);
Model load_model(const std::string& path, Vocab* vocab = nullptr);

// key=value serialization shared by checkpoints and config files.
std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace longdoc
