#include "longdoc/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "longdoc/binio.hpp"
#include "longdoc/errors.hpp"
#include "longdoc/ops.hpp"

namespace longdoc {

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "ar") return TaskMode::kAr;
  if (s == "mlm") return TaskMode::kMlm;
  throw ValidationError("unknown mode '" + s + "' (ar|mlm)");
}

std::string task_mode_to_string(TaskMode m) {
  return m == TaskMode::kAr ? "ar" : "mlm";
}

std::int64_t ModelConfig::reorder_classes() const { return k_classes(max_chunks); }

void ModelConfig::validate() const {
  if (layers < 1) throw ValidationError("config: layers must be >= 1");
  if (d_model < 2 || d_model % 2 != 0) {
    throw ValidationError("config: d_model must be even and >= 2");
  }
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ValidationError("config: d_model must divide evenly into n_heads");
  }
  if (d_ff < 1) throw ValidationError("config: d_ff must be >= 1");
  if (vocab_size <= kNumReserved) {
    throw ValidationError("config: vocab_size must exceed the reserved ids");
  }
  if (seg_len < 1 || (mode == TaskMode::kMlm && seg_len < 2)) {
    throw ValidationError("config: seg_len too small");
  }
  if (mem_len < 0) throw ValidationError("config: mem_len must be >= 0");
  if (max_chunks < 1) throw ValidationError("config: max_chunks must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("config: dropout must be in [0,1)");
  k_classes(max_chunks);  // range check
}

namespace {

BlockParams init_block(const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.d_model, f = cfg.d_ff;
  const double std = 0.02;
  BlockParams b;
  b.attn.w_q = Tensor::randn({d, d}, rng, std, true);
  b.attn.w_k = Tensor::randn({d, d}, rng, std, true);
  b.attn.w_v = Tensor::randn({d, d}, rng, std, true);
  b.attn.w_o = Tensor::randn({d, d}, rng, std, true);
  b.attn.w_r = Tensor::randn({d, d}, rng, std, true);
  b.attn.u = Tensor::zeros({d}, true);
  b.attn.v = Tensor::zeros({d}, true);
  b.attn.n_heads = cfg.n_heads;
  b.ln1_gain = Tensor::full({d}, 1.0, true);
  b.ln1_bias = Tensor::zeros({d}, true);
  b.ff_w1 = Tensor::randn({d, f}, rng, std, true);
  b.ff_b1 = Tensor::zeros({f}, true);
  b.ff_w2 = Tensor::randn({f, d}, rng, std, true);
  b.ff_b2 = Tensor::zeros({d}, true);
  b.ln2_gain = Tensor::full({d}, 1.0, true);
  b.ln2_bias = Tensor::zeros({d}, true);
  return b;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const int d = cfg.d_model;
  m.tok_emb = Tensor::randn({cfg.vocab_size, d}, rng, 0.02, true);
  for (int n = 0; n < cfg.layers; ++n) m.blocks.push_back(init_block(cfg, rng));
  m.lm_w = Tensor::randn({d, cfg.vocab_size}, rng, 0.02, true);
  m.lm_b = Tensor::zeros({cfg.vocab_size}, true);
  const int k = static_cast<int>(cfg.reorder_classes());
  m.ro_w1 = Tensor::randn({d, d}, rng, 0.02, true);
  m.ro_b1 = Tensor::zeros({d}, true);
  m.ro_w2 = Tensor::randn({d, k}, rng, 0.02, true);
  m.ro_b2 = Tensor::zeros({k}, true);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    const std::string p = "block" + std::to_string(n) + ".";
    BlockParams& b = blocks[n];
    out.emplace_back(p + "attn.w_q", &b.attn.w_q);
    out.emplace_back(p + "attn.w_k", &b.attn.w_k);
    out.emplace_back(p + "attn.w_v", &b.attn.w_v);
    out.emplace_back(p + "attn.w_o", &b.attn.w_o);
    out.emplace_back(p + "attn.w_r", &b.attn.w_r);
    out.emplace_back(p + "attn.u", &b.attn.u);
    out.emplace_back(p + "attn.v", &b.attn.v);
    out.emplace_back(p + "ln1_gain", &b.ln1_gain);
    out.emplace_back(p + "ln1_bias", &b.ln1_bias);
    out.emplace_back(p + "ff_w1", &b.ff_w1);
    out.emplace_back(p + "ff_b1", &b.ff_b1);
    out.emplace_back(p + "ff_w2", &b.ff_w2);
    out.emplace_back(p + "ff_b2", &b.ff_b2);
    out.emplace_back(p + "ln2_gain", &b.ln2_gain);
    out.emplace_back(p + "ln2_bias", &b.ln2_bias);
  }
  out.emplace_back("lm_w", &lm_w);
  out.emplace_back("lm_b", &lm_b);
  out.emplace_back("ro_w1", &ro_w1);
  out.emplace_back("ro_b1", &ro_b1);
  out.emplace_back("ro_w2", &ro_w2);
  out.emplace_back("ro_b2", &ro_b2);
  return out;
}

void Model::zero_grads() {
  for (auto& [name, t] : named_params()) t->zero_grad();
}

std::size_t Model::param_count() {
  std::size_t n = 0;
  for (auto& [name, t] : named_params()) n += t->numel();
  return n;
}

namespace {

std::vector<std::uint8_t> draw_keep(Rng& rng, std::size_t n, double rate) {
  std::vector<std::uint8_t> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = rng.uniform01() >= rate ? 1 : 0;
  return keep;
}

}  // namespace

ModelOutput forward_segment(Model& model, const std::vector<TokenId>& ids, int valid_len,
                            MemoryBank& bank, bool train, Rng* rng, SegmentTrace* trace) {
  const ModelConfig& cfg = model.cfg;
  const int L = cfg.seg_len;
  if (static_cast<int>(ids.size()) != L) {
    throw std::invalid_argument("forward_segment: segment width " +
                                std::to_string(ids.size()) + " != seg_len " + std::to_string(L));
  }
  if (valid_len < 1 || valid_len > L) {
    throw std::invalid_argument("forward_segment: valid_len outside [1,L]");
  }
  if (bank.scheme() != cfg.scheme || bank.n_layers() != cfg.layers) {
    throw std::invalid_argument("forward_segment: bank does not match the config");
  }
  const bool drop = train && cfg.dropout > 0.0;
  if (drop && !rng) throw std::invalid_argument("forward_segment: dropout needs an rng");

  Tensor h = ops::scale(ops::embedding_lookup(model.tok_emb, ids, {1, L}),
                        std::sqrt(static_cast<double>(cfg.d_model)));
  if (drop) h = ops::dropout_mask(h, draw_keep(*rng, h.numel(), cfg.dropout), cfg.dropout);

  if (cfg.scheme == Scheme::kShiftDown) {
    bank.update(0, valid_len == L ? h : ops::slice_len(h, 0, valid_len));
  }
  for (int n = 1; n <= cfg.layers; ++n) {
    const Tensor mem = bank.memory_for_layer(n);
    if (trace) {
      trace->layer_inputs.push_back(h);
      trace->memory_used.push_back(mem);
    }
    BlockDropout bd;
    const BlockDropout* bdp = nullptr;
    if (drop) {
      bd.rate = cfg.dropout;
      bd.attn_keep = draw_keep(*rng, h.numel(), cfg.dropout);
      bd.ff_keep = draw_keep(*rng, h.numel(), cfg.dropout);
      bdp = &bd;
    }
    h = block_forward(h, mem, model.blocks[static_cast<std::size_t>(n - 1)], cfg.causal(),
                      bdp, nullptr, valid_len);
    if (trace) trace->layer_outputs.push_back(h);
    bank.update(n, valid_len == L ? h : ops::slice_len(h, 0, valid_len));
  }
  bank.commit_segment();

  ModelOutput out;
  out.top_hidden = h;
  out.logits = ops::add_rowvec(ops::matmul(h, model.lm_w), model.lm_b);
  const Tensor cls = ops::slice_len(h, 0, 1);  // [1,1,d]
  Tensor ro = ops::gelu(ops::add_rowvec(ops::matmul(cls, model.ro_w1), model.ro_b1));
  ro = ops::add_rowvec(ops::matmul(ro, model.ro_w2), model.ro_b2);
  out.reorder_logits = ops::reshape(ro, {1, ro.dim(-1)});
  return out;
}

std::vector<ModelOutput> forward_document(Model& model, const DocumentStream& doc,
                                          bool retrospective, bool train, Rng* rng,
                                          DocumentRecord* record) {
  if (doc.T() < 1) throw ValidationError("forward_document: empty document");
  const ModelConfig& cfg = model.cfg;
  if (doc.seg_len != cfg.seg_len) {
    throw std::invalid_argument("forward_document: document seg_len " +
                                std::to_string(doc.seg_len) + " != config seg_len " +
                                std::to_string(cfg.seg_len));
  }
  MemoryBank bank(cfg.scheme, cfg.layers, cfg.mem_len);
  const std::vector<int> retro_set =
      cfg.collect_retro_cache ? retro_index_set(doc.T(), cfg.layers) : std::vector<int>();

  if (retrospective) {
    bank.phase = Phase::kSkim;
    for (int tau = 0; tau < doc.T(); ++tau) {
      SegmentTrace trace;
      ModelOutput out = forward_segment(model, doc.segments[static_cast<std::size_t>(tau)],
                                        doc.valid_len[static_cast<std::size_t>(tau)], bank,
                                        train, rng, record ? &trace : nullptr);
      if (cfg.collect_retro_cache &&
          std::find(retro_set.begin(), retro_set.end(), tau + 1) != retro_set.end()) {
        const int valid = doc.valid_len[static_cast<std::size_t>(tau)];
        Tensor top = valid == cfg.seg_len ? out.top_hidden
                                          : ops::slice_len(out.top_hidden, 0, valid);
        bank.retro_cache.push_back(ops::stop_gradient(top));
      }
      if (record) {
        record->skim_outputs.push_back(std::move(out));
        record->skim_traces.push_back(std::move(trace));
      }
    }
    bank.phase = Phase::kRetro;
  }

  std::vector<ModelOutput> outputs;
  for (int tau = 0; tau < doc.T(); ++tau) {
    SegmentTrace trace;
    outputs.push_back(forward_segment(model, doc.segments[static_cast<std::size_t>(tau)],
                                      doc.valid_len[static_cast<std::size_t>(tau)], bank,
                                      train, rng, record ? &trace : nullptr));
    if (record) record->main_traces.push_back(std::move(trace));
  }
  if (record) record->retro_cache = bank.retro_cache;
  return outputs;
}

Tensor mlm_reorder_loss(const ModelOutput& out, const std::vector<TokenId>& mlm_targets,
                        std::int64_t reorder_label, int tau, int segments,
                        std::int64_t n_classes) {
  Tensor loss = ops::cross_entropy(out.logits, mlm_targets, -1);
  if (tau == segments) {
    if (reorder_label < 0 || reorder_label >= n_classes) {
      throw ValidationError("reorder label " + std::to_string(reorder_label) +
                            " outside [0," + std::to_string(n_classes) + ")");
    }
    loss = ops::add(loss, ops::cross_entropy(out.reorder_logits,
                                             {static_cast<TokenId>(reorder_label)}, -1));
  }
  return loss;
}

Tensor ar_loss(const ModelOutput& out, const std::vector<TokenId>& next_targets) {
  return ops::cross_entropy(out.logits, next_targets, -1);
}

namespace {

constexpr std::uint32_t kModelMagic = 0x4C444350;  // "LDCP"

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  binio::write_string(os, name);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) binio::write_le<std::int32_t>(os, d);
  binio::write_f64_vector(os, *t.data);
}

void read_tensor_into(std::istream& is, const std::string& expect_name, Tensor& t) {
  const std::string name = binio::read_string(is);
  if (name != expect_name) {
    throw ValidationError("checkpoint: expected parameter '" + expect_name + "', found '" +
                          name + "'");
  }
  const std::uint32_t nd = binio::read_le<std::uint32_t>(is);
  Shape shape(nd);
  for (std::uint32_t i = 0; i < nd; ++i) shape[i] = binio::read_le<std::int32_t>(is);
  std::vector<double> values = binio::read_f64_vector(is);
  if (shape != t.shape || values.size() != t.numel()) {
    throw ValidationError("checkpoint: parameter '" + name + "' has shape " +
                          format_shape(shape) + ", expected " + format_shape(t.shape));
  }
  *t.data = std::move(values);
}

void write_vocab(std::ostream& os, const Vocab& vocab) {
  binio::write_le<std::uint8_t>(os, vocab.mode == TokenizerMode::kWord ? 0 : 1);
  binio::write_le<std::uint64_t>(os, vocab.id_to_token.size());
  for (const std::string& tok : vocab.id_to_token) binio::write_string(os, tok);
}

Vocab read_vocab(std::istream& is) {
  Vocab v;
  v.mode = binio::read_le<std::uint8_t>(is) == 0 ? TokenizerMode::kWord : TokenizerMode::kByte;
  const std::uint64_t n = binio::read_le<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) v.id_to_token.push_back(binio::read_string(is));
  if (v.mode == TokenizerMode::kWord) {
    for (std::size_t i = kNumReserved; i < v.id_to_token.size(); ++i) {
      v.token_to_id[v.id_to_token[i]] = static_cast<TokenId>(i);
    }
  }
  return v;
}

}  // namespace

std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "layers=" << cfg.layers << "\n";
  os << "d_model=" << cfg.d_model << "\n";
  os << "n_heads=" << cfg.n_heads << "\n";
  os << "d_ff=" << cfg.d_ff << "\n";
  os << "vocab_size=" << cfg.vocab_size << "\n";
  os << "seg_len=" << cfg.seg_len << "\n";
  os << "mem_len=" << cfg.mem_len << "\n";
  os << "scheme=" << scheme_to_string(cfg.scheme) << "\n";
  os << "mode=" << task_mode_to_string(cfg.mode) << "\n";
  os << "max_chunks=" << cfg.max_chunks << "\n";
  std::ostringstream drop;
  drop.precision(17);
  drop << cfg.dropout;
  os << "dropout=" << drop.str() << "\n";
  os << "retrospective=" << (cfg.retrospective ? 1 : 0) << "\n";
  os << "loss_in_skim=" << (cfg.loss_in_skim ? 1 : 0) << "\n";
  os << "collect_retro_cache=" << (cfg.collect_retro_cache ? 1 : 0) << "\n";
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "layers") cfg.layers = std::stoi(value);
    else if (key == "d_model") cfg.d_model = std::stoi(value);
    else if (key == "n_heads") cfg.n_heads = std::stoi(value);
    else if (key == "d_ff") cfg.d_ff = std::stoi(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
    else if (key == "seg_len") cfg.seg_len = std::stoi(value);
    else if (key == "mem_len") cfg.mem_len = std::stoi(value);
    else if (key == "scheme") cfg.scheme = scheme_from_string(value);
    else if (key == "mode") cfg.mode = task_mode_from_string(value);
    else if (key == "max_chunks") cfg.max_chunks = std::stoi(value);
    else if (key == "dropout") cfg.dropout = std::stod(value);
    else if (key == "retrospective") cfg.retrospective = std::stoi(value) != 0;
    else if (key == "loss_in_skim") cfg.loss_in_skim = std::stoi(value) != 0;
    else if (key == "collect_retro_cache") cfg.collect_retro_cache = std::stoi(value) != 0;
    else throw ValidationError("config: unknown key '" + key + "'");
  }
  return cfg;
}

void save_model(const std::string& path, Model& model, const Vocab* vocab) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open checkpoint for writing: " + path);
  binio::write_le<std::uint32_t>(os, kModelMagic);
  binio::write_le<std::uint32_t>(os, 1);
  binio::write_string(os, model_config_to_text(model.cfg));
  binio::write_le<std::uint8_t>(os, vocab ? 1 : 0);
  if (vocab) write_vocab(os, *vocab);
  const auto params = model.named_params();
  binio::write_le<std::uint64_t>(os, params.size());
  for (const auto& [name, t] : params) write_tensor(os, name, *t);
  if (!os) throw ValidationError("checkpoint write failed: " + path);
}

Model load_model(const std::string& path, Vocab* vocab) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint: " + path);
  if (binio::read_le<std::uint32_t>(is) != kModelMagic) {
    throw ValidationError("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = binio::read_le<std::uint32_t>(is);
  if (version != 1) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  }
  const ModelConfig cfg = model_config_from_text(binio::read_string(is));
  const bool has_vocab = binio::read_le<std::uint8_t>(is) != 0;
  Vocab stored;
  if (has_vocab) stored = read_vocab(is);
  if (vocab) {
    if (!has_vocab) throw ValidationError("checkpoint has no vocabulary: " + path);
    *vocab = stored;
  }
  Rng rng(0);
  Model model = Model::init(cfg, rng);
  const std::uint64_t n = binio::read_le<std::uint64_t>(is);
  auto params = model.named_params();
  if (n != params.size()) {
    throw ValidationError("checkpoint: parameter count mismatch in " + path);
  }
  for (auto& [name, t] : params) read_tensor_into(is, name, *t);
  return model;
}

}  // namespace longdoc
