#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "longdoc/rng.hpp"

namespace longdoc {

using TokenId = std::int32_t;

// Reserved ids shared by every vocabulary.
constexpr TokenId kPadId = 0;
constexpr TokenId kMaskId = 1;
constexpr TokenId kClsId = 2;
constexpr TokenId kUnkId = 3;
constexpr TokenId kNumReserved = 4;

enum class TokenizerMode { kWord, kByte };

struct Vocab {
  TokenizerMode mode = TokenizerMode::kWord;
  std::vector<std::string> id_to_token;       // reserved first
  std::map<std::string, TokenId> token_to_id; // word mode only
  int size() const { return static_cast<int>(id_to_token.size()); }
  std::uint64_t hash() const;
};

// Blank-line-delimited UTF-8 documents.
std::vector<std::string> load_corpus_file(const std::string& path);
std::vector<std::string> split_documents(const std::string& text);

// Word mode: whitespace tokens by frequency (ties lexicographic) capped at
// `size`; byte mode ignores the corpus content beyond non-emptiness.
Vocab build_vocab(const std::vector<std::string>& corpus, int size,
                  TokenizerMode mode = TokenizerMode::kWord);
std::vector<TokenId> tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

struct DocumentStream {
  std::uint64_t doc_id = 0;
  std::vector<std::vector<TokenId>> segments;  // each exactly seg_len wide
  std::vector<int> valid_len;                  // real tokens incl. CLS, <= seg_len
  int seg_len = 0;
  bool prepend_cls = false;
  int T() const { return static_cast<int>(segments.size()); }
  bool first(int tau) const { return tau == 0; }
  bool last(int tau) const { return tau + 1 == T(); }
};

// Non-overlapping slices of payload seg_len (or seg_len-1 after a CLS); the
// last segment is right-padded with PAD.
DocumentStream segment_document(const std::vector<TokenId>& ids, int seg_len,
                                bool prepend_cls);
// Inverse of segment_document for AR streams (drops CLS and PAD).
std::vector<TokenId> reconstruct_document(const DocumentStream& stream);

struct MaskedSegment {
  std::vector<TokenId> input;     // MASK substituted in place
  std::vector<TokenId> targets;   // original id at masked positions, else -1
  std::vector<std::uint8_t> mask; // 1 where corrupted
};

// Each eligible position (not PAD/CLS) is masked independently with
// mask_prob. bert_style additionally uses the 80/10/10 replacement split.
MaskedSegment corrupt_mlm(const std::vector<TokenId>& segment, double mask_prob, Rng& rng,
                          int vocab_size, bool bert_style = false);

// Segment-reordering label space: K = sum_{i=1..M} i!.
std::int64_t k_classes(int max_chunks);
std::int64_t encode_label(int k, const std::vector<int>& perm);
std::pair<int, std::vector<int>> decode_label(std::int64_t label, int max_chunks);

struct ReorderExample {
  std::vector<std::vector<TokenId>> chunks;  // original order C_1..C_k
  std::vector<int> perm;                     // position i of permuted doc holds chunk perm[i]
  std::int64_t label = 0;
  std::vector<TokenId> permuted;             // concat of permuted chunks
};

// k ~ uniform[1..M]; k-1 distinct cut points uniform over the token
// boundaries; permutation uniform over S_k (identity included).
ReorderExample make_reorder_example(const std::vector<TokenId>& ids, int max_chunks, Rng& rng);

struct StreamStep {
  std::vector<std::vector<TokenId>> inputs;   // per lane, seg_len wide
  std::vector<std::vector<TokenId>> targets;  // per lane next-token ids, -1 where absent
  std::vector<int> valid_len;                 // per lane
  std::vector<std::uint8_t> reset;            // lane starts a new document
  std::vector<std::uint8_t> active;           // lane carries real data this step
};

// Round-robin lane scheduler: each lane consumes one document's consecutive
// segments, then starts its next document with reset=true.
class StreamBatcher {
 public:
  StreamBatcher(std::vector<DocumentStream> docs, int batch);
  bool next(StreamStep& step);
  int batch() const { return batch_; }

 private:
  std::vector<DocumentStream> docs_;
  std::vector<std::vector<std::size_t>> lane_docs_;
  std::vector<std::size_t> lane_pos_;   // index into lane_docs_
  std::vector<int> lane_seg_;           // next segment within current doc
  int batch_;
};

// Prepared-shard container: fixed-width little-endian records.
struct ShardDocument {
  std::uint64_t doc_id = 0;
  std::int64_t reorder_label = 0;
  std::vector<std::vector<TokenId>> segments;
  std::vector<std::vector<std::uint8_t>> mask_bitmaps;
};

struct Shard {
  std::uint32_t version = 1;
  std::uint64_t vocab_hash = 0;
  std::uint32_t seg_len = 0;
  std::uint32_t max_chunks = 0;
  std::vector<ShardDocument> documents;
};

void write_shard(const std::string& path, const Shard& shard);
Shard read_shard(const std::string& path);

}  // namespace longdoc
