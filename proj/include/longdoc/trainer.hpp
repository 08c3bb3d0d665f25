#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "longdoc/model.hpp"

namespace longdoc {

struct ScheduleSpec {
  double peak_lr = 1e-4;
  std::int64_t warmup_steps = 4000;
  std::int64_t total_steps = 400000;
};

// Linear 0 -> peak over the warmup, then linear peak -> 0 at total_steps;
// steps past the end return 0.
double lr_at(std::int64_t step, const ScheduleSpec& spec);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;  // decoupled
  double clip_norm = 0.25;     // global-norm clip before the step; <=0 disables
};

// Bias-corrected Adam with decoupled weight decay. Moment buffers follow the
// model's parameter order.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(Model& model);

  // Applies one update from the accumulated grads. Throws on non-finite
  // gradients, naming the parameter.
  void step(Model& model, double lr, const AdamConfig& cfg);

  std::int64_t steps_taken() const { return step_; }

  void save(std::ostream& os) const;
  void load(std::istream& is, Model& model);

 private:
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

// Flat key=value training configuration (model keys plus the ones below).
struct TrainConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  int batch = 4;
  std::int64_t steps = 100;
  ScheduleSpec schedule;
  AdamConfig adam;
  double mask_prob = 0.15;
  bool bert_style_mask = false;
  std::string tokenizer = "word";
  std::int64_t log_every = 10;
  std::int64_t eval_every = 0;  // 0 = no periodic eval

  void validate() const;
};

TrainConfig train_config_from_text(const std::string& text);
std::string train_config_to_text(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);

struct MetricsRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> ppl;
  std::optional<double> reorder_acc;
  std::optional<double> eval_ppl;
};

std::string metrics_to_jsonl(const std::vector<MetricsRow>& rows);

struct TrainResult {
  std::vector<MetricsRow> metrics;
  double final_loss = 0.0;
  std::string checkpoint_path;
};

// Deterministic end-to-end training run. Writes <out_dir>/model.ckpt,
// <out_dir>/train_state.ckpt and <out_dir>/metrics.jsonl when out_dir is
// non-empty. resume_from restarts an interrupted run bit-exactly.
TrainResult train(const TrainConfig& cfg, const std::vector<std::string>& corpus,
                  const std::string& out_dir, const std::string& resume_from = "");

// Full optimizer/RNG/model state for exact resume. lane_memory carries the
// per-lane recurrence buffers (layer 0..N each) so a resumed AR run sees the
// same warm memory as an uninterrupted one.
struct TrainState {
  Model model;
  AdamOptimizer opt;
  Rng rng{0};
  std::int64_t step = 0;
  std::vector<std::vector<Tensor>> lane_memory;
};

void save_train_state(const std::string& path, TrainState& state, const Vocab& vocab);
TrainState load_train_state(const std::string& path, Vocab& vocab);

}  // namespace longdoc
