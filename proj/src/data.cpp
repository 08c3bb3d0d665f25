#include "longdoc/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "longdoc/binio.hpp"
#include "longdoc/errors.hpp"

namespace longdoc {

namespace {

const char* const kReservedNames[kNumReserved] = {"<pad>", "<mask>", "<cls>", "<unk>"};

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  const std::uint32_t mode_tag = mode == TokenizerMode::kWord ? 0 : 1;
  h = fnv1a(h, &mode_tag, sizeof(mode_tag));
  for (const std::string& tok : id_to_token) {
    h = fnv1a(h, tok.data(), tok.size());
    h = fnv1a(h, "\0", 1);
  }
  return h;
}

std::vector<std::string> load_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return split_documents(buf.str());
}

std::vector<std::string> split_documents(const std::string& text) {
  std::vector<std::string> docs;
  std::string current;
  std::istringstream in(text);
  std::string line;
  auto flush = [&]() {
    if (current.find_first_not_of(" \t\r\n") != std::string::npos) {
      docs.push_back(current);
    }
    current.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
    } else {
      if (!current.empty()) current += "\n";
      current += line;
    }
  }
  flush();
  return docs;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int size, TokenizerMode mode) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  Vocab v;
  v.mode = mode;
  for (const char* name : kReservedNames) v.id_to_token.emplace_back(name);
  if (mode == TokenizerMode::kByte) {
    for (int b = 0; b < 256; ++b) {
      v.id_to_token.push_back(std::string(1, static_cast<char>(b)));
    }
    return v;
  }
  if (size <= kNumReserved) throw ValidationError("build_vocab: size must exceed reserved ids");
  std::map<std::string, std::int64_t> counts;
  for (const std::string& doc : corpus) {
    std::istringstream in(doc);
    std::string word;
    while (in >> word) ++counts[word];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, count] : ranked) {
    if (v.size() >= size) break;
    v.token_to_id[word] = v.size();
    v.id_to_token.push_back(word);
  }
  return v;
}

std::vector<TokenId> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  if (vocab.mode == TokenizerMode::kByte) {
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(kNumReserved + static_cast<TokenId>(c));
    return ids;
  }
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    auto it = vocab.token_to_id.find(word);
    ids.push_back(it == vocab.token_to_id.end() ? kUnkId : it->second);
  }
  return ids;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || id >= vocab.size()) {
      throw std::out_of_range("detokenize: id " + std::to_string(id) + " outside vocabulary");
    }
    if (vocab.mode == TokenizerMode::kByte) {
      if (id >= kNumReserved) out += vocab.id_to_token[static_cast<std::size_t>(id)];
    } else {
      if (i) out += " ";
      out += vocab.id_to_token[static_cast<std::size_t>(id)];
    }
  }
  return out;
}

DocumentStream segment_document(const std::vector<TokenId>& ids, int seg_len, bool prepend_cls) {
  if (ids.empty()) throw ValidationError("segment_document: empty document");
  if (seg_len < 1 || (prepend_cls && seg_len < 2)) {
    throw ValidationError("segment_document: seg_len too small");
  }
  DocumentStream stream;
  stream.seg_len = seg_len;
  stream.prepend_cls = prepend_cls;
  const int payload = prepend_cls ? seg_len - 1 : seg_len;
  for (std::size_t off = 0; off < ids.size(); off += static_cast<std::size_t>(payload)) {
    const std::size_t take = std::min<std::size_t>(payload, ids.size() - off);
    std::vector<TokenId> seg;
    seg.reserve(static_cast<std::size_t>(seg_len));
    if (prepend_cls) seg.push_back(kClsId);
    seg.insert(seg.end(), ids.begin() + static_cast<std::ptrdiff_t>(off),
               ids.begin() + static_cast<std::ptrdiff_t>(off + take));
    stream.valid_len.push_back(static_cast<int>(seg.size()));
    seg.resize(static_cast<std::size_t>(seg_len), kPadId);
    stream.segments.push_back(std::move(seg));
  }
  return stream;
}

std::vector<TokenId> reconstruct_document(const DocumentStream& stream) {
  std::vector<TokenId> out;
  for (int tau = 0; tau < stream.T(); ++tau) {
    const auto& seg = stream.segments[static_cast<std::size_t>(tau)];
    const int start = stream.prepend_cls ? 1 : 0;
    for (int i = start; i < stream.valid_len[static_cast<std::size_t>(tau)]; ++i) {
      out.push_back(seg[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

MaskedSegment corrupt_mlm(const std::vector<TokenId>& segment, double mask_prob, Rng& rng,
                          int vocab_size, bool bert_style) {
  if (mask_prob <= 0.0 || mask_prob >= 1.0) {
    throw ValidationError("corrupt_mlm: mask_prob must be in (0,1)");
  }
  MaskedSegment out;
  out.input = segment;
  out.targets.assign(segment.size(), -1);
  out.mask.assign(segment.size(), 0);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    const TokenId id = segment[i];
    if (id == kPadId || id == kClsId) continue;
    if (!rng.bernoulli(mask_prob)) continue;
    out.mask[i] = 1;
    out.targets[i] = id;
    if (!bert_style) {
      out.input[i] = kMaskId;
      continue;
    }
    const double roll = rng.uniform01();
    if (roll < 0.8) {
      out.input[i] = kMaskId;
    } else if (roll < 0.9) {
      out.input[i] = static_cast<TokenId>(
          rng.randint(kNumReserved, static_cast<std::int64_t>(vocab_size) - 1));
    }  // else keep the original token
  }
  return out;
}

std::int64_t k_classes(int max_chunks) {
  if (max_chunks < 1 || max_chunks > 12) {
    throw ValidationError("k_classes: max_chunks must be in [1,12]");
  }
  std::int64_t total = 0, fact = 1;
  for (int i = 1; i <= max_chunks; ++i) {
    fact *= i;
    total += fact;
  }
  return total;
}

namespace {

std::int64_t factorial(int n) {
  std::int64_t f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

std::int64_t lehmer_rank(const std::vector<int>& perm) {
  const int k = static_cast<int>(perm.size());
  std::vector<int> items(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) items[static_cast<std::size_t>(i)] = i;
  std::int64_t rank = 0;
  for (int i = 0; i < k; ++i) {
    auto it = std::find(items.begin(), items.end(), perm[static_cast<std::size_t>(i)]);
    if (it == items.end()) throw std::invalid_argument("lehmer_rank: not a permutation");
    rank += static_cast<std::int64_t>(it - items.begin()) * factorial(k - 1 - i);
    items.erase(it);
  }
  return rank;
}

std::vector<int> lehmer_unrank(std::int64_t rank, int k) {
  std::vector<int> items(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) items[static_cast<std::size_t>(i)] = i;
  std::vector<int> perm;
  for (int i = 0; i < k; ++i) {
    const std::int64_t f = factorial(k - 1 - i);
    const std::int64_t idx = rank / f;
    rank %= f;
    perm.push_back(items[static_cast<std::size_t>(idx)]);
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(idx));
  }
  return perm;
}

}  // namespace

std::int64_t encode_label(int k, const std::vector<int>& perm) {
  if (k < 1 || static_cast<int>(perm.size()) != k) {
    throw ValidationError("encode_label: permutation size != k");
  }
  std::int64_t base = 0;
  for (int i = 1; i < k; ++i) base += factorial(i);
  return base + lehmer_rank(perm);
}

std::pair<int, std::vector<int>> decode_label(std::int64_t label, int max_chunks) {
  if (label < 0 || label >= k_classes(max_chunks)) {
    throw ValidationError("decode_label: label " + std::to_string(label) +
                          " outside [0," + std::to_string(k_classes(max_chunks)) + ")");
  }
  std::int64_t base = 0;
  for (int k = 1; k <= max_chunks; ++k) {
    const std::int64_t block = factorial(k);
    if (label < base + block) return {k, lehmer_unrank(label - base, k)};
    base += block;
  }
  throw std::logic_error("decode_label: unreachable");
}

ReorderExample make_reorder_example(const std::vector<TokenId>& ids, int max_chunks, Rng& rng) {
  if (static_cast<int>(ids.size()) < max_chunks) {
    throw ValidationError("make_reorder_example: document shorter than max_chunks tokens");
  }
  ReorderExample ex;
  const int k = static_cast<int>(rng.randint(1, max_chunks));
  // k-1 distinct internal cut points, uniform without replacement.
  std::vector<int> candidates(ids.size() - 1);
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) candidates[i] = static_cast<int>(i) + 1;
  std::vector<int> cuts;
  for (int c = 0; c < k - 1; ++c) {
    const std::size_t pick =
        static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(candidates.size()) - 1));
    cuts.push_back(candidates[pick]);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(static_cast<int>(ids.size()));
  int start = 0;
  for (int cut : cuts) {
    ex.chunks.emplace_back(ids.begin() + start, ids.begin() + cut);
    start = cut;
  }
  ex.perm.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) ex.perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(ex.perm);
  ex.label = encode_label(k, ex.perm);
  for (int chunk_idx : ex.perm) {
    const auto& chunk = ex.chunks[static_cast<std::size_t>(chunk_idx)];
    ex.permuted.insert(ex.permuted.end(), chunk.begin(), chunk.end());
  }
  return ex;
}

StreamBatcher::StreamBatcher(std::vector<DocumentStream> docs, int batch)
    : docs_(std::move(docs)), batch_(batch) {
  if (batch_ < 1) throw ValidationError("batch_streams: batch must be >= 1");
  lane_docs_.resize(static_cast<std::size_t>(batch_));
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    lane_docs_[i % static_cast<std::size_t>(batch_)].push_back(i);
  }
  lane_pos_.assign(static_cast<std::size_t>(batch_), 0);
  lane_seg_.assign(static_cast<std::size_t>(batch_), 0);
}

bool StreamBatcher::next(StreamStep& step) {
  bool any = false;
  for (int b = 0; b < batch_; ++b) {
    const auto& lane = lane_docs_[static_cast<std::size_t>(b)];
    if (lane_pos_[static_cast<std::size_t>(b)] < lane.size()) {
      any = true;
      break;
    }
  }
  if (!any) return false;

  const int seg_len = docs_.empty() ? 0 : docs_[0].seg_len;
  step.inputs.assign(static_cast<std::size_t>(batch_), std::vector<TokenId>());
  step.targets.assign(static_cast<std::size_t>(batch_), std::vector<TokenId>());
  step.valid_len.assign(static_cast<std::size_t>(batch_), 0);
  step.reset.assign(static_cast<std::size_t>(batch_), 0);
  step.active.assign(static_cast<std::size_t>(batch_), 0);

  for (int b = 0; b < batch_; ++b) {
    const std::size_t bi = static_cast<std::size_t>(b);
    const auto& lane = lane_docs_[bi];
    if (lane_pos_[bi] >= lane.size()) {
      step.inputs[bi].assign(static_cast<std::size_t>(seg_len), kPadId);
      step.targets[bi].assign(static_cast<std::size_t>(seg_len), -1);
      continue;
    }
    const DocumentStream& doc = docs_[lane[lane_pos_[bi]]];
    const int tau = lane_seg_[bi];
    step.active[bi] = 1;
    step.reset[bi] = tau == 0 ? 1 : 0;
    step.inputs[bi] = doc.segments[static_cast<std::size_t>(tau)];
    step.valid_len[bi] = doc.valid_len[static_cast<std::size_t>(tau)];
    // Next-token targets; the document's final position has none.
    std::vector<TokenId> tgt(doc.segments[static_cast<std::size_t>(tau)].size(), -1);
    const int valid = doc.valid_len[static_cast<std::size_t>(tau)];
    for (int i = 0; i + 1 < valid; ++i) {
      tgt[static_cast<std::size_t>(i)] = doc.segments[static_cast<std::size_t>(tau)]
                                                     [static_cast<std::size_t>(i) + 1];
    }
    if (valid == doc.seg_len && !doc.last(tau)) {
      tgt[static_cast<std::size_t>(valid) - 1] =
          doc.segments[static_cast<std::size_t>(tau) + 1][0];
    }
    step.targets[bi] = std::move(tgt);
    if (doc.last(tau)) {
      ++lane_pos_[bi];
      lane_seg_[bi] = 0;
    } else {
      ++lane_seg_[bi];
    }
  }
  return true;
}

namespace {

using binio::read_le;
using binio::write_le;

constexpr std::uint32_t kShardMagic = 0x4C445348;  // "LDSH"

}  // namespace

void write_shard(const std::string& path, const Shard& shard) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open shard for writing: " + path);
  write_le<std::uint32_t>(out, kShardMagic);
  write_le<std::uint32_t>(out, shard.version);
  write_le<std::uint64_t>(out, shard.vocab_hash);
  write_le<std::uint32_t>(out, shard.seg_len);
  write_le<std::uint32_t>(out, shard.max_chunks);
  write_le<std::uint64_t>(out, shard.documents.size());
  for (const ShardDocument& doc : shard.documents) {
    write_le<std::uint64_t>(out, doc.doc_id);
    write_le<std::int64_t>(out, doc.reorder_label);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(doc.segments.size()));
    for (std::size_t s = 0; s < doc.segments.size(); ++s) {
      const auto& seg = doc.segments[s];
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seg.size()));
      for (TokenId id : seg) write_le<std::int32_t>(out, id);
      const auto& bitmap = doc.mask_bitmaps[s];
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(bitmap.size()));
      out.write(reinterpret_cast<const char*>(bitmap.data()),
                static_cast<std::streamsize>(bitmap.size()));
    }
  }
  if (!out) throw ValidationError("shard write failed: " + path);
}

Shard read_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open shard: " + path);
  if (read_le<std::uint32_t>(in) != kShardMagic) {
    throw ValidationError("shard: bad magic in " + path);
  }
  Shard shard;
  shard.version = read_le<std::uint32_t>(in);
  if (shard.version != 1) {
    throw ValidationError("shard: unsupported version " + std::to_string(shard.version));
  }
  shard.vocab_hash = read_le<std::uint64_t>(in);
  shard.seg_len = read_le<std::uint32_t>(in);
  shard.max_chunks = read_le<std::uint32_t>(in);
  const std::uint64_t n_docs = read_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_docs; ++i) {
    ShardDocument doc;
    doc.doc_id = read_le<std::uint64_t>(in);
    doc.reorder_label = read_le<std::int64_t>(in);
    const std::uint32_t n_segs = read_le<std::uint32_t>(in);
    for (std::uint32_t s = 0; s < n_segs; ++s) {
      const std::uint32_t len = read_le<std::uint32_t>(in);
      std::vector<TokenId> seg(len);
      for (std::uint32_t j = 0; j < len; ++j) seg[j] = read_le<std::int32_t>(in);
      const std::uint32_t blen = read_le<std::uint32_t>(in);
      std::vector<std::uint8_t> bitmap(blen);
      in.read(reinterpret_cast<char*>(bitmap.data()), blen);
      if (!in) throw ValidationError("shard: truncated bitmap");
      doc.segments.push_back(std::move(seg));
      doc.mask_bitmaps.push_back(std::move(bitmap));
    }
    shard.documents.push_back(std::move(doc));
  }
  return shard;
}

}  // namespace longdoc
