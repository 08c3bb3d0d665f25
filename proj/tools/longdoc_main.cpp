// Command line front end: train, eval-ppl, probe-recall, probe-influence,
// context-report, complexity, make-data. Exit codes: 0 success, 2 validation
// error, 1 runtime failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "longdoc/errors.hpp"
#include "longdoc/evalbench.hpp"
#include "longdoc/trainer.hpp"

namespace {

using namespace longdoc;

std::vector<Scheme> parse_schemes(const std::string& csv) {
  std::vector<Scheme> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string item = csv.substr(start, comma - start);
    if (!item.empty()) out.push_back(scheme_from_string(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ValidationError("no schemes given");
  return out;
}

std::string out_path(const std::string& out_dir, const std::string& name) {
  std::filesystem::create_directories(out_dir);
  return out_dir + "/" + name;
}

void emit_report(const Report& report, const std::string& out_dir, const std::string& stem) {
  write_report_csv(report, out_path(out_dir, stem + ".csv"));
  write_report_json(report, out_path(out_dir, stem + ".json"));
  std::printf("wrote %s/%s.csv and .json\n", out_dir.c_str(), stem.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-document recurrence transformer workbench"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_dir = "out";
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();

  // train
  auto* cmd_train = app.add_subcommand("train", "train a model on a text corpus");
  std::string train_config_path, train_corpus, resume_path;
  std::vector<std::string> overrides;
  cmd_train->add_option("--config", train_config_path, "key=value config file");
  cmd_train->add_option("--corpus", train_corpus, "blank-line-delimited text file")->required();
  cmd_train->add_option("--set", overrides, "config override key=value (repeatable)");
  cmd_train->add_option("--resume", resume_path, "train_state.ckpt to resume from");

  // eval-ppl
  auto* cmd_eval = app.add_subcommand("eval-ppl", "perplexity of an AR checkpoint");
  std::string eval_ckpt, eval_corpus;
  int eval_L = 0, eval_m = -1;
  cmd_eval->add_option("--checkpoint", eval_ckpt)->required();
  cmd_eval->add_option("--corpus", eval_corpus)->required();
  cmd_eval->add_option("--eval-seg-len", eval_L, "evaluation segment length (default: training)");
  cmd_eval->add_option("--eval-mem-len", eval_m, "evaluation memory length (default: training)");

  // probe-recall
  auto* cmd_recall = app.add_subcommand("probe-recall", "long-range recall probe per scheme");
  std::string recall_schemes = "none,shift_down,same_layer";
  ProbeSpec probe;
  int recall_seeds = 3;
  cmd_recall->add_option("--schemes", recall_schemes, "comma list")->capture_default_str();
  cmd_recall->add_option("--dependency-d", probe.dependency_distance)->capture_default_str();
  cmd_recall->add_option("--seg-len", probe.seg_len)->capture_default_str();
  cmd_recall->add_option("--steps", probe.train_steps)->capture_default_str();
  cmd_recall->add_option("--batch", probe.batch)->capture_default_str();
  cmd_recall->add_option("--trials", probe.trials)->capture_default_str();
  cmd_recall->add_option("--layers", probe.layers)->capture_default_str();
  cmd_recall->add_option("--d-model", probe.d_model)->capture_default_str();
  cmd_recall->add_option("--mem-len", probe.mem_len, "-1: same as seg-len")->capture_default_str();
  cmd_recall->add_option("--peak-lr", probe.peak_lr)->capture_default_str();
  cmd_recall->add_option("--n-seeds", recall_seeds)->capture_default_str();

  // probe-influence
  auto* cmd_infl = app.add_subcommand("probe-influence", "token-substitution influence probe");
  std::string infl_ckpt, infl_corpus;
  int source_pos = 0, target_segment = 1, doc_index = 0;
  bool two_phase = false;
  cmd_infl->add_option("--checkpoint", infl_ckpt)->required();
  cmd_infl->add_option("--corpus", infl_corpus)->required();
  cmd_infl->add_option("--doc-index", doc_index)->capture_default_str();
  cmd_infl->add_option("--source-pos", source_pos)->required();
  cmd_infl->add_option("--target-segment", target_segment)->required();
  cmd_infl->add_flag("--two-phase", two_phase, "skim then retrospective feeding");

  // context-report
  auto* cmd_ctx = app.add_subcommand("context-report", "effective context length per scheme");
  std::string ctx_schemes = "none,shift_down,same_layer";
  int ctx_N = 3, ctx_L = 128, ctx_m = 128, ctx_T = 10;
  bool ctx_oracle = false;
  cmd_ctx->add_option("--schemes", ctx_schemes)->capture_default_str();
  cmd_ctx->add_option("--layers", ctx_N)->capture_default_str();
  cmd_ctx->add_option("--seg-len", ctx_L)->capture_default_str();
  cmd_ctx->add_option("--mem-len", ctx_m)->capture_default_str();
  cmd_ctx->add_option("--segments", ctx_T)->capture_default_str();
  cmd_ctx->add_flag("--with-oracle", ctx_oracle, "also run the reachability BFS");

  // complexity
  auto* cmd_cx = app.add_subcommand("complexity", "token-to-token attention calculation counts");
  std::int64_t cx_len = 2048, cx_mem = 128, cx_window = 512;
  cmd_cx->add_option("--doc-len", cx_len)->capture_default_str();
  cmd_cx->add_option("--mem-len", cx_mem)->capture_default_str();
  cmd_cx->add_option("--window", cx_window)->capture_default_str();

  // make-data
  auto* cmd_data = app.add_subcommand("make-data", "prepare a masked+reordered shard");
  std::string data_corpus, data_out;
  int data_L = 128, data_M = 3, data_vocab = 8192;
  double data_mask_prob = 0.15;
  std::string data_tokenizer = "word";
  cmd_data->add_option("--corpus", data_corpus)->required();
  cmd_data->add_option("--out", data_out, "shard path (default <out-dir>/data.shard)");
  cmd_data->add_option("--seg-len", data_L)->capture_default_str();
  cmd_data->add_option("--max-chunks", data_M)->capture_default_str();
  cmd_data->add_option("--vocab-size", data_vocab)->capture_default_str();
  cmd_data->add_option("--mask-prob", data_mask_prob)->capture_default_str();
  cmd_data->add_option("--tokenizer", data_tokenizer, "word|byte")->capture_default_str();

  // Global options may appear after the subcommand name.
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd_train->parsed()) {
      TrainConfig cfg;
      if (!train_config_path.empty()) cfg = load_train_config(train_config_path);
      std::string extra;
      for (const std::string& kv : overrides) extra += kv + "\n";
      if (!extra.empty()) {
        cfg = train_config_from_text(train_config_to_text(cfg) + extra);
      }
      if (app.count("--seed")) cfg.seed = seed;
      TrainResult res = train(cfg, load_corpus_file(train_corpus), out_dir, resume_path);
      std::printf("final loss %.6f, checkpoint %s\n", res.final_loss,
                  res.checkpoint_path.c_str());
    } else if (cmd_eval->parsed()) {
      Vocab vocab;
      Model model = load_model(eval_ckpt, &vocab);
      std::vector<std::vector<TokenId>> docs;
      for (const std::string& d : load_corpus_file(eval_corpus)) {
        std::vector<TokenId> ids = tokenize(d, vocab);
        if (!ids.empty()) docs.push_back(std::move(ids));
      }
      const int L = eval_L > 0 ? eval_L : model.cfg.seg_len;
      const int m = eval_m >= 0 ? eval_m : model.cfg.mem_len;
      const double ppl = eval_ppl(model, docs, L, m);
      Report report;
      report.rows.push_back({scheme_to_string(model.cfg.scheme), model.cfg.layers, L, m,
                             static_cast<int>(docs.size()), "ppl", ppl});
      emit_report(report, out_dir, "ppl");
      std::printf("ppl %.6f (eval_seg_len=%d eval_mem_len=%d)\n", ppl, L, m);
    } else if (cmd_recall->parsed()) {
      std::vector<std::uint64_t> seeds;
      for (int s = 0; s < recall_seeds; ++s) seeds.push_back(seed + static_cast<std::uint64_t>(s));
      auto results = recall_probe(parse_schemes(recall_schemes), probe, seeds);
      Report report;
      for (const RecallResult& r : results) {
        report.rows.push_back({scheme_to_string(r.scheme), probe.layers, probe.seg_len,
                               probe.mem_len < 0 ? probe.seg_len : probe.mem_len,
                               probe.dependency_distance, "recall_acc", r.accuracy});
        std::printf("%-11s seed=%llu acc=%.4f\n", scheme_to_string(r.scheme).c_str(),
                    static_cast<unsigned long long>(r.seed), r.accuracy);
      }
      std::printf("chance=%.4f\n", probe.chance());
      emit_report(report, out_dir, "recall");
    } else if (cmd_infl->parsed()) {
      Vocab vocab;
      Model model = load_model(infl_ckpt, &vocab);
      auto docs = load_corpus_file(infl_corpus);
      if (doc_index < 0 || doc_index >= static_cast<int>(docs.size())) {
        throw ValidationError("doc-index outside the corpus");
      }
      DocumentStream stream =
          segment_document(tokenize(docs[static_cast<std::size_t>(doc_index)], vocab),
                           model.cfg.seg_len, model.cfg.mode == TaskMode::kMlm);
      const double value = influence_probe(model, stream, source_pos, target_segment, two_phase);
      Report report;
      report.rows.push_back({scheme_to_string(model.cfg.scheme), model.cfg.layers,
                             model.cfg.seg_len, model.cfg.mem_len, target_segment,
                             "influence_l2", value});
      emit_report(report, out_dir, "influence");
      std::printf("influence %.9g\n", value);
    } else if (cmd_ctx->parsed()) {
      Report report;
      for (Scheme s : parse_schemes(ctx_schemes)) {
        SchemeSpec spec{s, ctx_N, ctx_L, ctx_m, ctx_T};
        report.rows.push_back({scheme_to_string(s), ctx_N, ctx_L, ctx_m, ctx_T,
                               "max_dependency", static_cast<double>(max_dependency(spec))});
        if (ctx_oracle) {
          report.rows.push_back({scheme_to_string(s), ctx_N, ctx_L, ctx_m, ctx_T,
                                 "reachability_oracle",
                                 static_cast<double>(reachability_oracle(spec))});
        }
      }
      for (const ReportRow& r : report.rows) {
        std::printf("%-11s %-20s %.0f\n", r.scheme.c_str(), r.metric.c_str(), r.value);
      }
      emit_report(report, out_dir, "context");
    } else if (cmd_cx->parsed()) {
      const std::int64_t ours = attention_calcs(cx_len, cx_mem, cx_window);
      const std::int64_t local = local_attention_calcs(cx_len, cx_window);
      std::printf("recurrence two-pass: %lld\n", static_cast<long long>(ours));
      std::printf("local-window baseline: %lld\n", static_cast<long long>(local));
      Report report;
      report.rows.push_back({"recurrence", 0, static_cast<int>(cx_window),
                             static_cast<int>(cx_mem), static_cast<int>(cx_len),
                             "attention_calcs", static_cast<double>(ours)});
      report.rows.push_back({"local_window", 0, static_cast<int>(cx_window), 0,
                             static_cast<int>(cx_len), "attention_calcs",
                             static_cast<double>(local)});
      emit_report(report, out_dir, "complexity");
    } else if (cmd_data->parsed()) {
      const auto corpus = load_corpus_file(data_corpus);
      const TokenizerMode mode =
          data_tokenizer == "byte" ? TokenizerMode::kByte : TokenizerMode::kWord;
      if (data_tokenizer != "word" && data_tokenizer != "byte") {
        throw ValidationError("tokenizer must be word|byte");
      }
      Vocab vocab = build_vocab(corpus, data_vocab, mode);
      Rng rng(seed);
      Shard shard;
      shard.vocab_hash = vocab.hash();
      shard.seg_len = static_cast<std::uint32_t>(data_L);
      shard.max_chunks = static_cast<std::uint32_t>(data_M);
      std::uint64_t doc_id = 0;
      for (const std::string& text : corpus) {
        std::vector<TokenId> ids = tokenize(text, vocab);
        if (static_cast<int>(ids.size()) < data_M) continue;
        ReorderExample ex = make_reorder_example(ids, data_M, rng);
        DocumentStream stream = segment_document(ex.permuted, data_L, true);
        ShardDocument doc;
        doc.doc_id = doc_id++;
        doc.reorder_label = ex.label;
        for (int tau = 0; tau < stream.T(); ++tau) {
          MaskedSegment masked =
              corrupt_mlm(stream.segments[static_cast<std::size_t>(tau)], data_mask_prob, rng,
                          vocab.size());
          doc.segments.push_back(masked.input);
          doc.mask_bitmaps.push_back(masked.mask);
        }
        shard.documents.push_back(std::move(doc));
      }
      if (shard.documents.empty()) throw ValidationError("make-data: no usable documents");
      const std::string path = data_out.empty() ? out_path(out_dir, "data.shard") : data_out;
      write_shard(path, shard);
      std::printf("wrote %zu documents to %s\n", shard.documents.size(), path.c_str());
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 1;
  }
  return 0;
}
