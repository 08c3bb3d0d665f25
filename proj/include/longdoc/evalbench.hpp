#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longdoc/model.hpp"

namespace longdoc {

// exp(mean NLL over all predicted tokens) with memory carried across eval
// segments per the model's scheme; the bank resets at document boundaries.
// eval_seg_len/eval_mem_len may differ from the training values.
double eval_ppl(Model& model, const std::vector<std::vector<TokenId>>& docs,
                int eval_seg_len, int eval_mem_len);

// Synthetic long-range recall probe. A key/value pair sits in segment 1 and
// the key is repeated dependency_distance segments later; the model must
// produce the value. Solvable only when the scheme's receptive field spans
// the gap.
struct ProbeSpec {
  int dependency_distance = 4;  // segments between the pair and the query
  int seg_len = 16;
  int key_alphabet = 8;
  int value_alphabet = 16;
  int filler_alphabet = 16;
  int trials = 128;          // evaluation documents
  std::int64_t train_steps = 2000;
  int batch = 8;
  int layers = 2;
  int d_model = 32;
  int n_heads = 2;
  int d_ff = 64;
  int mem_len = -1;          // -1: same as seg_len
  double peak_lr = 3e-3;
  std::int64_t warmup_steps = 100;

  int vocab_size() const {
    return kNumReserved + key_alphabet + value_alphabet + filler_alphabet;
  }
  double chance() const { return 1.0 / value_alphabet; }
  void validate() const;
};

struct RecallResult {
  Scheme scheme = Scheme::kNone;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

std::vector<RecallResult> recall_probe(const std::vector<Scheme>& schemes,
                                       const ProbeSpec& spec,
                                       const std::vector<std::uint64_t>& seeds);

// L2 change of target_segment's top-layer hidden state (reported pass) when
// the token at source_pos (global index into the document) is substituted.
double influence_probe(Model& model, const DocumentStream& doc, int source_pos,
                       int target_segment, bool two_phase);

struct ReportRow {
  std::string scheme;
  int layers = 0;
  int seg_len = 0;
  int mem_len = 0;
  int t_or_d = 0;
  std::string metric;
  double value = 0.0;
  bool operator==(const ReportRow&) const = default;
};

struct Report {
  std::vector<ReportRow> rows;
};

// Stable column order; values at 6 significant digits in both formats.
void write_report_csv(const Report& report, const std::string& path);
void write_report_json(const Report& report, const std::string& path);
Report read_report_json(const std::string& path);

// Rounds through the 6-significant-digit wire format.
double report_round(double value);

}  // namespace longdoc
