#include "longdoc/evalbench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "longdoc/errors.hpp"
#include "longdoc/ops.hpp"
#include "longdoc/trainer.hpp"

namespace longdoc {

double eval_ppl(Model& model, const std::vector<std::vector<TokenId>>& docs,
                int eval_seg_len, int eval_mem_len) {
  if (model.cfg.mode != TaskMode::kAr) {
    throw ValidationError("eval_ppl: needs an autoregressive checkpoint");
  }
  if (docs.empty()) throw ValidationError("eval_ppl: empty corpus");
  if (eval_seg_len < 1 || eval_mem_len < 0) {
    throw ValidationError("eval_ppl: bad eval lengths");
  }
  for (const auto& ids : docs) {
    for (TokenId id : ids) {
      if (id < 0 || id >= model.cfg.vocab_size) {
        throw ValidationError("eval_ppl: token id " + std::to_string(id) +
                              " outside the checkpoint vocabulary");
      }
    }
  }

  // The evaluation lengths replace the training ones; relative attention and
  // the bank handle any segment width.
  Model eval_model = model;
  eval_model.cfg.seg_len = eval_seg_len;
  eval_model.cfg.mem_len = eval_mem_len;

  double total_nll = 0.0;
  std::int64_t count = 0;
  for (const auto& ids : docs) {
    if (ids.empty()) continue;
    DocumentStream stream = segment_document(ids, eval_seg_len, false);
    MemoryBank bank(eval_model.cfg.scheme, eval_model.cfg.layers, eval_mem_len);
    for (int tau = 0; tau < stream.T(); ++tau) {
      const auto& seg = stream.segments[static_cast<std::size_t>(tau)];
      const int valid = stream.valid_len[static_cast<std::size_t>(tau)];
      std::vector<TokenId> targets(seg.size(), -1);
      for (int i = 0; i + 1 < valid; ++i) targets[static_cast<std::size_t>(i)] = seg[static_cast<std::size_t>(i) + 1];
      if (valid == stream.seg_len && !stream.last(tau)) {
        targets[static_cast<std::size_t>(valid) - 1] =
            stream.segments[static_cast<std::size_t>(tau) + 1][0];
      }
      ModelOutput out = forward_segment(eval_model, seg, valid, bank, false, nullptr);
      const std::vector<double> nll = ops::nll_rows(out.logits, targets, -1);
      for (double v : nll) {
        if (!std::isnan(v)) {
          total_nll += v;
          ++count;
        }
      }
    }
  }
  if (count == 0) throw ValidationError("eval_ppl: no predictable tokens");
  return std::exp(total_nll / static_cast<double>(count));
}

void ProbeSpec::validate() const {
  if (dependency_distance < 0) throw ValidationError("probe: dependency distance must be >= 0");
  if (seg_len < 8) throw ValidationError("probe: seg_len must be >= 8");
  if (key_alphabet < 1 || value_alphabet < 2 || filler_alphabet < 1) {
    throw ValidationError("probe: alphabets too small");
  }
  if (trials < 1 || train_steps < 1 || batch < 1) {
    throw ValidationError("probe: trials/steps/batch must be positive");
  }
}

namespace {

struct ProbeDoc {
  std::vector<std::vector<TokenId>> segments;
  TokenId value = 0;
  int query_pos = 0;  // query slot, same in every segment
};

// Key ids come first after the reserved block, then values, then filler.
// Segment 1 binds [KEY, VALUE] at its tail; every later segment repeats the
// query [KEY, BLANK] at the same slot. The value token itself never reappears,
// so answering a query d segments out requires state carried over d hops:
// same-layer recurrence can relay it at one layer indefinitely, while the
// shift-down relay must climb a layer per segment and runs out at layer N.
ProbeDoc make_probe_doc(const ProbeSpec& spec, Rng& rng) {
  const TokenId key_base = kNumReserved;
  const TokenId value_base = key_base + spec.key_alphabet;
  const TokenId filler_base = value_base + spec.value_alphabet;
  const int L = spec.seg_len;
  const int T = spec.dependency_distance + 1;

  ProbeDoc doc;
  const TokenId key =
      key_base + static_cast<TokenId>(rng.randint(0, spec.key_alphabet - 1));
  doc.value = value_base + static_cast<TokenId>(rng.randint(0, spec.value_alphabet - 1));
  for (int tau = 0; tau < T; ++tau) {
    std::vector<TokenId> seg(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
      seg[static_cast<std::size_t>(i)] =
          filler_base + static_cast<TokenId>(rng.randint(0, spec.filler_alphabet - 1));
    }
    seg[static_cast<std::size_t>(L - 2)] = key;
    seg[static_cast<std::size_t>(L - 1)] = kMaskId;  // blank query slot
    doc.segments.push_back(std::move(seg));
  }
  // The one binding, early in segment 1; segment 1's own tail query doubles
  // as the in-segment curriculum case.
  doc.segments[0][1] = key;
  doc.segments[0][2] = doc.value;
  doc.query_pos = L - 2;
  return doc;
}

ModelConfig probe_model_config(const ProbeSpec& spec, Scheme scheme) {
  ModelConfig cfg;
  cfg.layers = spec.layers;
  cfg.d_model = spec.d_model;
  cfg.n_heads = spec.n_heads;
  cfg.d_ff = spec.d_ff;
  cfg.vocab_size = spec.vocab_size();
  cfg.seg_len = spec.seg_len;
  cfg.mem_len = spec.mem_len < 0 ? spec.seg_len : spec.mem_len;
  cfg.scheme = scheme;
  cfg.mode = TaskMode::kAr;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

std::vector<RecallResult> recall_probe(const std::vector<Scheme>& schemes,
                                       const ProbeSpec& spec,
                                       const std::vector<std::uint64_t>& seeds) {
  spec.validate();
  std::vector<RecallResult> results;
  for (Scheme scheme : schemes) {
    for (std::uint64_t seed : seeds) {
      ModelConfig cfg = probe_model_config(spec, scheme);
      Rng init_rng(seed);
      Model model = Model::init(cfg, init_rng);
      AdamOptimizer opt(model);
      AdamConfig adam;
      adam.weight_decay = 0.0;
      ScheduleSpec schedule{spec.peak_lr, spec.warmup_steps, spec.train_steps};
      Rng rng(seed + 1);

      const int T = spec.dependency_distance + 1;
      for (std::int64_t step = 0; step < spec.train_steps; ++step) {
        model.zero_grads();
        std::vector<Tensor> losses;
        for (int b = 0; b < spec.batch; ++b) {
          ProbeDoc doc = make_probe_doc(spec, rng);
          MemoryBank bank(cfg.scheme, cfg.layers, cfg.mem_len);
          Tensor loss;
          for (int tau = 0; tau < T; ++tau) {
            ModelOutput out = forward_segment(model, doc.segments[static_cast<std::size_t>(tau)],
                                              cfg.seg_len, bank, false, nullptr);
            // Supervise every segment's query slot; the early ones bootstrap
            // the relay the later ones need.
            std::vector<TokenId> targets(static_cast<std::size_t>(cfg.seg_len), -1);
            targets[static_cast<std::size_t>(doc.query_pos)] = doc.value;
            Tensor part = ar_loss(out, targets);
            loss = tau == 0 ? part : ops::add(loss, part);
          }
          losses.push_back(ops::scale(loss, 1.0 / T));
        }
        Tensor total = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) total = ops::add(total, losses[i]);
        total = ops::scale(total, 1.0 / static_cast<double>(losses.size()));
        total.backward();
        opt.step(model, lr_at(step + 1, schedule), adam);
      }

      Rng eval_rng(seed + 99991);
      int hits = 0;
      for (int trial = 0; trial < spec.trials; ++trial) {
        ProbeDoc doc = make_probe_doc(spec, eval_rng);
        MemoryBank bank(cfg.scheme, cfg.layers, cfg.mem_len);
        ModelOutput out;
        for (int tau = 0; tau < T; ++tau) {
          out = forward_segment(model, doc.segments[static_cast<std::size_t>(tau)],
                                cfg.seg_len, bank, false, nullptr);
        }
        const int V = cfg.vocab_size;
        const double* row = out.logits.data->data() +
                            static_cast<std::size_t>(doc.query_pos) * V;
        int best = 0;
        for (int j = 1; j < V; ++j) {
          if (row[j] > row[best]) best = j;
        }
        if (best == doc.value) ++hits;
      }
      results.push_back({scheme, seed, static_cast<double>(hits) / spec.trials});
    }
  }
  return results;
}

double influence_probe(Model& model, const DocumentStream& doc, int source_pos,
                       int target_segment, bool two_phase) {
  if (doc.T() < 1) throw ValidationError("influence_probe: empty document");
  if (target_segment < 1 || target_segment > doc.T()) {
    throw ValidationError("influence_probe: target segment outside [1,T]");
  }
  // Locate the segment and offset holding source_pos.
  int seg = -1, off = -1, seen = 0;
  for (int tau = 0; tau < doc.T() && seg < 0; ++tau) {
    const int start = doc.prepend_cls ? 1 : 0;
    const int real = doc.valid_len[static_cast<std::size_t>(tau)] - start;
    if (source_pos < seen + real) {
      seg = tau;
      off = start + (source_pos - seen);
    }
    seen += real;
  }
  if (seg < 0) throw ValidationError("influence_probe: source position outside the document");

  auto target_hidden = [&](const DocumentStream& d) {
    std::vector<ModelOutput> outs = forward_document(model, d, two_phase, false, nullptr);
    const ModelOutput& out = outs[static_cast<std::size_t>(target_segment - 1)];
    const int valid = d.valid_len[static_cast<std::size_t>(target_segment - 1)];
    return valid == d.seg_len ? out.top_hidden : ops::slice_len(out.top_hidden, 0, valid);
  };

  const Tensor base = target_hidden(doc);
  DocumentStream altered = doc;
  TokenId& slot = altered.segments[static_cast<std::size_t>(seg)][static_cast<std::size_t>(off)];
  const TokenId original = slot;
  TokenId substitute = original;
  do {
    substitute = kNumReserved +
                 (substitute - kNumReserved + 1) % (model.cfg.vocab_size - kNumReserved);
  } while (substitute == original);
  slot = substitute;
  const Tensor moved = target_hidden(altered);

  double sq = 0.0;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    const double d = (*moved.data)[i] - (*base.data)[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

double report_round(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return std::strtod(buf, nullptr);
}

namespace {

std::string format_value(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

}  // namespace

void write_report_csv(const Report& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write report: " + path);
  os << "scheme,layers,seg_len,mem_len,t_or_d,metric,value\n";
  for (const ReportRow& r : report.rows) {
    os << r.scheme << "," << r.layers << "," << r.seg_len << "," << r.mem_len << ","
       << r.t_or_d << "," << r.metric << "," << format_value(r.value) << "\n";
  }
  if (!os) throw ValidationError("report write failed: " + path);
}

void write_report_json(const Report& report, const std::string& path) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ReportRow& r : report.rows) {
    nlohmann::ordered_json j;
    j["scheme"] = r.scheme;
    j["layers"] = r.layers;
    j["seg_len"] = r.seg_len;
    j["mem_len"] = r.mem_len;
    j["t_or_d"] = r.t_or_d;
    j["metric"] = r.metric;
    j["value"] = report_round(r.value);
    rows.push_back(j);
  }
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write report: " + path);
  os << rows.dump(2) << "\n";
  if (!os) throw ValidationError("report write failed: " + path);
}

Report read_report_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open report: " + path);
  nlohmann::json rows;
  is >> rows;
  Report report;
  for (const auto& j : rows) {
    ReportRow r;
    r.scheme = j.at("scheme").get<std::string>();
    r.layers = j.at("layers").get<int>();
    r.seg_len = j.at("seg_len").get<int>();
    r.mem_len = j.at("mem_len").get<int>();
    r.t_or_d = j.at("t_or_d").get<int>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    report.rows.push_back(r);
  }
  return report;
}

}  // namespace longdoc
