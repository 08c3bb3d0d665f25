#include "longdoc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "longdoc/binio.hpp"
#include "longdoc/errors.hpp"
#include "longdoc/evalbench.hpp"
#include "longdoc/ops.hpp"

namespace longdoc {

double lr_at(std::int64_t step, const ScheduleSpec& spec) {
  if (spec.peak_lr <= 0.0 || spec.warmup_steps < 0 || spec.total_steps < spec.warmup_steps) {
    throw ValidationError("schedule: need peak>0, 0 <= warmup <= total");
  }
  if (step < 0) throw ValidationError("schedule: negative step");
  if (step > spec.total_steps) return 0.0;
  if (step <= spec.warmup_steps) {
    if (spec.warmup_steps == 0) return spec.peak_lr;
    return spec.peak_lr * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
  }
  return spec.peak_lr * static_cast<double>(spec.total_steps - step) /
         static_cast<double>(spec.total_steps - spec.warmup_steps);
}

AdamOptimizer::AdamOptimizer(Model& model) {
  for (auto& [name, t] : model.named_params()) {
    m_.emplace_back(t->numel(), 0.0);
    v_.emplace_back(t->numel(), 0.0);
  }
}

void AdamOptimizer::step(Model& model, double lr, const AdamConfig& cfg) {
  auto params = model.named_params();
  if (m_.empty()) {
    for (auto& [name, t] : params) {
      m_.emplace_back(t->numel(), 0.0);
      v_.emplace_back(t->numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: moment buffers do not match the model");
  }

  double sq_norm = 0.0;
  for (auto& [name, t] : params) {
    if (!t->grad) continue;
    for (double g : *t->grad) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam: non-finite gradient in parameter '" + name + "'");
      }
      sq_norm += g * g;
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double clip_scale =
      (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].second;
    if (!t.grad) continue;
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t j = 0; j < t.numel(); ++j) {
      const double g = (*t.grad)[j] * clip_scale;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      (*t.data)[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps));
      (*t.data)[j] -= lr * cfg.weight_decay * (*t.data)[j];
    }
  }
}

void AdamOptimizer::save(std::ostream& os) const {
  binio::write_le<std::int64_t>(os, step_);
  binio::write_le<std::uint64_t>(os, m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    binio::write_f64_vector(os, m_[i]);
    binio::write_f64_vector(os, v_[i]);
  }
}

void AdamOptimizer::load(std::istream& is, Model& model) {
  step_ = binio::read_le<std::int64_t>(is);
  const std::uint64_t n = binio::read_le<std::uint64_t>(is);
  auto params = model.named_params();
  if (n != params.size()) throw ValidationError("train state: optimizer size mismatch");
  m_.clear();
  v_.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    m_.push_back(binio::read_f64_vector(is));
    v_.push_back(binio::read_f64_vector(is));
    if (m_.back().size() != params[i].second->numel()) {
      throw ValidationError("train state: moment shape mismatch for " + params[i].first);
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (batch < 1) throw ValidationError("config: batch must be >= 1");
  if (steps < 1) throw ValidationError("config: steps must be >= 1");
  if (mask_prob <= 0.0 || mask_prob >= 1.0) throw ValidationError("config: mask_prob in (0,1)");
  if (tokenizer != "word" && tokenizer != "byte") {
    throw ValidationError("config: tokenizer must be word|byte");
  }
  if (log_every < 1) throw ValidationError("config: log_every must be >= 1");
  if (schedule.peak_lr <= 0) throw ValidationError("config: peak_lr must be > 0");
}

TrainConfig train_config_from_text(const std::string& text) {
  TrainConfig cfg;
  std::ostringstream model_lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "batch") cfg.batch = std::stoi(value);
    else if (key == "steps") cfg.steps = std::stoll(value);
    else if (key == "peak_lr") cfg.schedule.peak_lr = std::stod(value);
    else if (key == "warmup_steps") cfg.schedule.warmup_steps = std::stoll(value);
    else if (key == "total_steps") cfg.schedule.total_steps = std::stoll(value);
    else if (key == "beta1") cfg.adam.beta1 = std::stod(value);
    else if (key == "beta2") cfg.adam.beta2 = std::stod(value);
    else if (key == "adam_eps") cfg.adam.eps = std::stod(value);
    else if (key == "weight_decay") cfg.adam.weight_decay = std::stod(value);
    else if (key == "clip_norm") cfg.adam.clip_norm = std::stod(value);
    else if (key == "mask_prob") cfg.mask_prob = std::stod(value);
    else if (key == "bert_style_mask") cfg.bert_style_mask = std::stoi(value) != 0;
    else if (key == "tokenizer") cfg.tokenizer = value;
    else if (key == "log_every") cfg.log_every = std::stoll(value);
    else if (key == "eval_every") cfg.eval_every = std::stoll(value);
    else model_lines << line << "\n";  // model keys validated together below
  }
  cfg.model = model_config_from_text(model_lines.str());
  return cfg;
}

std::string train_config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << model_config_to_text(cfg.model);
  os << "seed=" << cfg.seed << "\n";
  os << "batch=" << cfg.batch << "\n";
  os << "steps=" << cfg.steps << "\n";
  os << "peak_lr=" << cfg.schedule.peak_lr << "\n";
  os << "warmup_steps=" << cfg.schedule.warmup_steps << "\n";
  os << "total_steps=" << cfg.schedule.total_steps << "\n";
  os << "beta1=" << cfg.adam.beta1 << "\n";
  os << "beta2=" << cfg.adam.beta2 << "\n";
  os << "adam_eps=" << cfg.adam.eps << "\n";
  os << "weight_decay=" << cfg.adam.weight_decay << "\n";
  os << "clip_norm=" << cfg.adam.clip_norm << "\n";
  os << "mask_prob=" << cfg.mask_prob << "\n";
  os << "bert_style_mask=" << (cfg.bert_style_mask ? 1 : 0) << "\n";
  os << "tokenizer=" << cfg.tokenizer << "\n";
  os << "log_every=" << cfg.log_every << "\n";
  os << "eval_every=" << cfg.eval_every << "\n";
  return os.str();
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return train_config_from_text(buf.str());
}

std::string metrics_to_jsonl(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  for (const MetricsRow& r : rows) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["loss"] = r.loss;
    if (r.ppl) j["ppl"] = *r.ppl;
    if (r.reorder_acc) j["reorder_acc"] = *r.reorder_acc;
    if (r.eval_ppl) j["eval_ppl"] = *r.eval_ppl;
    os << j.dump() << "\n";
  }
  return os.str();
}

namespace {

constexpr std::uint32_t kTrainStateMagic = 0x4C445453;  // "LDTS"

void write_bank_tensor(std::ostream& os, const Tensor& t) {
  const bool present = t.defined() && t.numel() > 0;
  binio::write_le<std::uint8_t>(os, present ? 1 : 0);
  if (!present) return;
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) binio::write_le<std::int32_t>(os, d);
  binio::write_f64_vector(os, *t.data);
}

Tensor read_bank_tensor(std::istream& is) {
  if (binio::read_le<std::uint8_t>(is) == 0) return Tensor();
  const std::uint32_t nd = binio::read_le<std::uint32_t>(is);
  Shape shape(nd);
  for (std::uint32_t i = 0; i < nd; ++i) shape[i] = binio::read_le<std::int32_t>(is);
  return Tensor::from_data(shape, binio::read_f64_vector(is));
}

}  // namespace

void save_train_state(const std::string& path, TrainState& state, const Vocab& vocab) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open train state for writing: " + path);
  binio::write_le<std::uint32_t>(os, kTrainStateMagic);
  binio::write_le<std::uint32_t>(os, 1);
  binio::write_le<std::int64_t>(os, state.step);
  binio::write_string(os, state.rng.state());

  // Model section reuses the checkpoint layout inline.
  const std::string tmp = path + ".model.tmp";
  save_model(tmp, state.model, &vocab);
  std::ifstream mf(tmp, std::ios::binary);
  std::ostringstream mbuf;
  mbuf << mf.rdbuf();
  mf.close();
  std::filesystem::remove(tmp);
  binio::write_string(os, mbuf.str());

  state.opt.save(os);

  binio::write_le<std::uint64_t>(os, state.lane_memory.size());
  for (const auto& lane : state.lane_memory) {
    binio::write_le<std::uint64_t>(os, lane.size());
    for (const Tensor& t : lane) write_bank_tensor(os, t);
  }
  if (!os) throw ValidationError("train state write failed: " + path);
}

TrainState load_train_state(const std::string& path, Vocab& vocab) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open train state: " + path);
  if (binio::read_le<std::uint32_t>(is) != kTrainStateMagic) {
    throw ValidationError("train state: bad magic in " + path);
  }
  if (binio::read_le<std::uint32_t>(is) != 1) {
    throw ValidationError("train state: unsupported version");
  }
  TrainState state;
  state.step = binio::read_le<std::int64_t>(is);
  state.rng.set_state(binio::read_string(is));

  const std::string model_bytes = binio::read_string(is);
  const std::string tmp = path + ".model.tmp";
  {
    std::ofstream mf(tmp, std::ios::binary);
    mf.write(model_bytes.data(), static_cast<std::streamsize>(model_bytes.size()));
  }
  state.model = load_model(tmp, &vocab);
  std::filesystem::remove(tmp);

  state.opt.load(is, state.model);

  const std::uint64_t lanes = binio::read_le<std::uint64_t>(is);
  for (std::uint64_t b = 0; b < lanes; ++b) {
    const std::uint64_t n = binio::read_le<std::uint64_t>(is);
    std::vector<Tensor> lane;
    for (std::uint64_t i = 0; i < n; ++i) lane.push_back(read_bank_tensor(is));
    state.lane_memory.push_back(std::move(lane));
  }
  return state;
}

namespace {

struct ArData {
  std::vector<DocumentStream> streams;
};

// Re-derives the batcher position for a given global step; epoch boundaries
// are a pure function of (corpus, batch).
StreamBatcher batcher_at_step(const ArData& data, int batch, std::int64_t step,
                              StreamStep& scratch) {
  StreamBatcher batcher(data.streams, batch);
  for (std::int64_t i = 0; i < step; ++i) {
    if (!batcher.next(scratch)) {
      batcher = StreamBatcher(data.streams, batch);
      batcher.next(scratch);
    }
  }
  return batcher;
}

double argmax_match(const Tensor& logits_row, std::int64_t label) {
  const std::size_t k = logits_row.numel();
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if ((*logits_row.data)[j] > (*logits_row.data)[best]) best = j;
  }
  return best == static_cast<std::size_t>(label) ? 1.0 : 0.0;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const std::vector<std::string>& corpus,
                  const std::string& out_dir, const std::string& resume_from) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (corpus.empty()) throw ValidationError("train: empty corpus");

  const TokenizerMode tok_mode =
      cfg.tokenizer == "word" ? TokenizerMode::kWord : TokenizerMode::kByte;
  const Vocab vocab = build_vocab(corpus, cfg.model.vocab_size, tok_mode);
  cfg.model.vocab_size = vocab.size();

  std::vector<std::vector<TokenId>> doc_ids;
  for (const std::string& doc : corpus) {
    std::vector<TokenId> ids = tokenize(doc, vocab);
    if (!ids.empty()) doc_ids.push_back(std::move(ids));
  }
  if (static_cast<int>(doc_ids.size()) < cfg.batch) {
    throw ValidationError("train: corpus has fewer documents than one batch");
  }

  TrainState state;
  if (!resume_from.empty()) {
    Vocab stored;
    state = load_train_state(resume_from, stored);
    if (stored.hash() != vocab.hash()) {
      throw ValidationError("train: resume vocabulary does not match the corpus");
    }
  } else {
    Rng init_rng(cfg.seed);
    state.model = Model::init(cfg.model, init_rng);
    state.opt = AdamOptimizer(state.model);
    state.rng = Rng(cfg.seed + 1);
    state.step = 0;
  }
  Model& model = state.model;

  const bool ar = cfg.model.mode == TaskMode::kAr;
  ArData ar_data;
  if (ar) {
    for (const auto& ids : doc_ids) {
      ar_data.streams.push_back(segment_document(ids, cfg.model.seg_len, false));
    }
  } else {
    for (const auto& ids : doc_ids) {
      if (static_cast<int>(ids.size()) < cfg.model.max_chunks) {
        throw ValidationError("train: document shorter than max_chunks tokens");
      }
    }
  }

  // Eval split: last tenth of the documents (at least one) when periodic
  // evaluation is enabled.
  std::vector<std::vector<TokenId>> eval_docs;
  if (cfg.eval_every > 0 && ar) {
    const std::size_t n_eval = std::max<std::size_t>(1, doc_ids.size() / 10);
    eval_docs.assign(doc_ids.end() - static_cast<std::ptrdiff_t>(n_eval), doc_ids.end());
  }

  StreamStep scratch;
  StreamBatcher batcher = ar ? batcher_at_step(ar_data, cfg.batch, state.step, scratch)
                             : StreamBatcher({}, 1);

  std::vector<MemoryBank> banks;
  if (ar) {
    for (int b = 0; b < cfg.batch; ++b) {
      banks.emplace_back(cfg.model.scheme, cfg.model.layers, cfg.model.mem_len);
    }
    if (!resume_from.empty()) {
      if (state.lane_memory.size() != static_cast<std::size_t>(cfg.batch)) {
        throw ValidationError("train: resume lane count does not match batch");
      }
      for (int b = 0; b < cfg.batch; ++b) {
        for (int n = 0; n <= cfg.model.layers; ++n) {
          const Tensor& t = state.lane_memory[static_cast<std::size_t>(b)]
                                             [static_cast<std::size_t>(n)];
          if (t.defined() && t.numel() > 0) {
            banks[static_cast<std::size_t>(b)].restore_buffer(n, t);
          }
        }
      }
    }
  }

  std::vector<MetricsRow> metrics;
  double last_loss = 0.0;

  for (std::int64_t step = state.step; step < cfg.steps; ++step) {
    model.zero_grads();
    const double lr = lr_at(step + 1, cfg.schedule);
    double batch_loss = 0.0;
    double reorder_hits = 0.0, reorder_total = 0.0;
    std::vector<Tensor> losses;

    if (ar) {
      StreamStep data;
      if (!batcher.next(data)) {
        batcher = StreamBatcher(ar_data.streams, cfg.batch);
        batcher.next(data);
      }
      for (int b = 0; b < cfg.batch; ++b) {
        const std::size_t bi = static_cast<std::size_t>(b);
        if (!data.active[bi]) continue;
        if (data.reset[bi]) banks[bi].reset();
        ModelOutput out = forward_segment(model, data.inputs[bi], data.valid_len[bi],
                                          banks[bi], true, &state.rng);
        losses.push_back(ar_loss(out, data.targets[bi]));
      }
    } else {
      for (int b = 0; b < cfg.batch; ++b) {
        const std::size_t doc_idx =
            static_cast<std::size_t>((step * cfg.batch + b) % static_cast<std::int64_t>(doc_ids.size()));
        ReorderExample ex = make_reorder_example(doc_ids[doc_idx], cfg.model.max_chunks,
                                                 state.rng);
        DocumentStream stream = segment_document(ex.permuted, cfg.model.seg_len, true);
        std::vector<std::vector<TokenId>> targets;
        for (int tau = 0; tau < stream.T(); ++tau) {
          MaskedSegment masked = corrupt_mlm(stream.segments[static_cast<std::size_t>(tau)],
                                             cfg.mask_prob, state.rng, cfg.model.vocab_size,
                                             cfg.bert_style_mask);
          stream.segments[static_cast<std::size_t>(tau)] = masked.input;
          targets.push_back(masked.targets);
        }
        DocumentRecord record;
        const bool need_skim = cfg.model.retrospective && cfg.model.loss_in_skim;
        std::vector<ModelOutput> outs =
            forward_document(model, stream, cfg.model.retrospective, true, &state.rng,
                             need_skim ? &record : nullptr);
        const std::int64_t K = cfg.model.reorder_classes();
        Tensor doc_loss;
        for (int tau = 0; tau < stream.T(); ++tau) {
          Tensor part = mlm_reorder_loss(outs[static_cast<std::size_t>(tau)],
                                         targets[static_cast<std::size_t>(tau)], ex.label,
                                         tau + 1, stream.T(), K);
          doc_loss = tau == 0 ? part : ops::add(doc_loss, part);
          if (need_skim) {
            Tensor skim_part =
                mlm_reorder_loss(record.skim_outputs[static_cast<std::size_t>(tau)],
                                 targets[static_cast<std::size_t>(tau)], ex.label, tau + 1,
                                 stream.T(), K);
            doc_loss = ops::add(doc_loss, skim_part);
          }
        }
        losses.push_back(ops::scale(doc_loss, 1.0 / stream.T()));
        reorder_hits += argmax_match(outs.back().reorder_logits, ex.label);
        reorder_total += 1.0;
      }
    }

    if (losses.empty()) continue;
    Tensor total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ops::add(total, losses[i]);
    total = ops::scale(total, 1.0 / static_cast<double>(losses.size()));
    batch_loss = total.item();
    total.backward();
    state.opt.step(model, lr, cfg.adam);
    state.step = step + 1;
    last_loss = batch_loss;

    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      MetricsRow row;
      row.step = step + 1;
      row.lr = lr;
      row.loss = batch_loss;
      if (ar) row.ppl = std::exp(batch_loss);
      if (!ar && reorder_total > 0) row.reorder_acc = reorder_hits / reorder_total;
      if (cfg.eval_every > 0 && ar && (step + 1) % cfg.eval_every == 0) {
        row.eval_ppl = eval_ppl(model, eval_docs, cfg.model.seg_len, cfg.model.mem_len);
      }
      metrics.push_back(row);
    }
  }

  TrainResult result;
  result.metrics = metrics;
  result.final_loss = last_loss;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    result.checkpoint_path = out_dir + "/model.ckpt";
    save_model(result.checkpoint_path, model, &vocab);
    if (ar) {
      state.lane_memory.clear();
      for (int b = 0; b < cfg.batch; ++b) {
        std::vector<Tensor> lane;
        for (int n = 0; n <= cfg.model.layers; ++n) {
          lane.push_back(banks[static_cast<std::size_t>(b)].buffer(n));
        }
        state.lane_memory.push_back(std::move(lane));
      }
    }
    save_train_state(out_dir + "/train_state.ckpt", state, vocab);
    std::ofstream mf(out_dir + "/metrics.jsonl",
                     resume_from.empty() ? std::ios::trunc : std::ios::app);
    mf << metrics_to_jsonl(metrics);
  } else if (ar) {
    state.lane_memory.clear();
    for (int b = 0; b < cfg.batch; ++b) {
      std::vector<Tensor> lane;
      for (int n = 0; n <= cfg.model.layers; ++n) {
        lane.push_back(banks[static_cast<std::size_t>(b)].buffer(n));
      }
      state.lane_memory.push_back(std::move(lane));
    }
  }
  return result;
}

}  // namespace longdoc
