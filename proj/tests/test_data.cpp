#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "doctest.h"
#include "longdoc/data.hpp"
#include "longdoc/errors.hpp"

using namespace longdoc;

TEST_SUITE("data") {

TEST_CASE("word vocab: repeated word maps to one id") {
  Vocab v = build_vocab({"a a b"}, 16);
  std::vector<TokenId> ids = tokenize("a a b", v);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == ids[1]);
  CHECK(ids[0] != ids[2]);
  CHECK(ids[0] >= kNumReserved);
  CHECK(ids[2] >= kNumReserved);
}

TEST_CASE("word vocab caps size and maps the rest to unk") {
  Vocab v = build_vocab({"a a a b b c"}, kNumReserved + 2);
  CHECK(v.size() == kNumReserved + 2);
  std::vector<TokenId> ids = tokenize("a b c", v);
  CHECK(ids[2] == kUnkId);
}

TEST_CASE("byte mode round-trips exactly") {
  Vocab v = build_vocab({"seed"}, 0, TokenizerMode::kByte);
  const std::string text = "Hello, bytes \xF0\x9F\x8C\x8D and\ttabs";
  CHECK(detokenize(tokenize(text, v), v) == text);
}

TEST_CASE("vocab built twice from the same corpus is identical") {
  const std::vector<std::string> corpus = {"the quick brown fox", "the lazy dog", "fox fox"};
  Vocab a = build_vocab(corpus, 12);
  Vocab b = build_vocab(corpus, 12);
  CHECK(a.id_to_token == b.id_to_token);
  CHECK(a.hash() == b.hash());
}

TEST_CASE("empty corpus is an error") {
  CHECK_THROWS_AS(build_vocab({}, 16), ValidationError);
}

TEST_CASE("blank-line document splitting") {
  const std::string text = "doc one line a\ndoc one line b\n\n\ndoc two\n\n  \ndoc three\n";
  auto docs = split_documents(text);
  REQUIRE(docs.size() == 3);
  CHECK(docs[0] == "doc one line a\ndoc one line b");
  CHECK(docs[1] == "doc two");
  CHECK(docs[2] == "doc three");
}

TEST_CASE("segment_document arithmetic") {
  std::vector<TokenId> ids(10);
  for (int i = 0; i < 10; ++i) ids[static_cast<std::size_t>(i)] = kNumReserved + i;

  SUBCASE("10 tokens, L=4, no CLS: T=3 with 2 real + 2 pad at the end") {
    DocumentStream s = segment_document(ids, 4, false);
    REQUIRE(s.T() == 3);
    CHECK(s.valid_len == std::vector<int>{4, 4, 2});
    CHECK(s.segments[2] == std::vector<TokenId>{kNumReserved + 8, kNumReserved + 9,
                                                kPadId, kPadId});
  }
  SUBCASE("exact fit: one segment, first and last") {
    DocumentStream s = segment_document({1, 2, 3, 4}, 4, false);
    CHECK(s.T() == 1);
    CHECK(s.first(0));
    CHECK(s.last(0));
  }
  SUBCASE("CLS occupies the first slot") {
    DocumentStream s = segment_document(ids, 4, true);
    REQUIRE(s.T() == 4);  // payload 3 per segment
    for (int tau = 0; tau < s.T(); ++tau) CHECK(s.segments[static_cast<std::size_t>(tau)][0] == kClsId);
  }
  SUBCASE("empty document errors") {
    CHECK_THROWS_AS(segment_document({}, 4, false), ValidationError);
  }
}

TEST_CASE("segmentation reconstruction identity on random documents") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int len = static_cast<int>(rng.randint(1, 200));
    std::vector<TokenId> ids(static_cast<std::size_t>(len));
    for (auto& id : ids) id = static_cast<TokenId>(rng.randint(kNumReserved, 90));
    const int L = static_cast<int>(rng.randint(2, 17));
    const bool cls = rng.bernoulli(0.5);
    DocumentStream s = segment_document(ids, L, cls);
    CHECK(reconstruct_document(s) == ids);
  }
}

TEST_CASE("corrupt_mlm") {
  Rng rng(202);
  std::vector<TokenId> seg = {kClsId, 10, 11, 12, 13, 14, 15, 16, 17, kPadId, kPadId};

  SUBCASE("PAD and CLS never masked; bitmap matches MASK positions") {
    for (int trial = 0; trial < 10000; ++trial) {
      MaskedSegment m = corrupt_mlm(seg, 0.3, rng, 64);
      CHECK(m.input[0] == kClsId);
      CHECK(m.input[9] == kPadId);
      CHECK(m.input[10] == kPadId);
      for (std::size_t i = 0; i < seg.size(); ++i) {
        CHECK((m.input[i] == kMaskId) == (m.mask[i] == 1));
        if (m.mask[i]) CHECK(m.targets[i] == seg[i]);
        else CHECK(m.targets[i] == -1);
      }
    }
  }
  SUBCASE("empirical mask rate within 3 sigma of p*n") {
    const double p = 0.15;
    const int eligible = 8, draws = 10000;
    std::int64_t masked = 0;
    for (int trial = 0; trial < draws; ++trial) {
      MaskedSegment m = corrupt_mlm(seg, p, rng, 64);
      for (std::uint8_t bit : m.mask) masked += bit;
    }
    const double n = static_cast<double>(eligible) * draws;
    const double sigma = std::sqrt(n * p * (1 - p));
    CHECK(std::fabs(static_cast<double>(masked) - n * p) < 3 * sigma);
  }
  SUBCASE("zero masked positions is allowed") {
    Rng local(7);
    std::vector<TokenId> tiny = {kClsId, 10};
    bool saw_empty = false;
    for (int trial = 0; trial < 200 && !saw_empty; ++trial) {
      MaskedSegment m = corrupt_mlm(tiny, 0.05, local, 64);
      saw_empty = std::none_of(m.mask.begin(), m.mask.end(), [](std::uint8_t b) { return b; });
    }
    CHECK(saw_empty);
  }
}

TEST_CASE("k_classes formula") {
  CHECK(k_classes(1) == 1);
  CHECK(k_classes(3) == 9);    // 1! + 2! + 3!
  CHECK(k_classes(5) == 153);
  CHECK_THROWS_AS(k_classes(0), ValidationError);
}

TEST_CASE("label encoding forced low values") {
  CHECK(encode_label(1, {0}) == 0);
  CHECK(encode_label(2, {0, 1}) == 1);
  CHECK(encode_label(2, {1, 0}) == 2);
}

TEST_CASE("encode/decode bijective for M <= 5") {
  for (int M = 1; M <= 5; ++M) {
    const std::int64_t K = k_classes(M);
    std::set<std::int64_t> seen;
    for (int k = 1; k <= M; ++k) {
      std::vector<int> perm(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
      do {
        const std::int64_t id = encode_label(k, perm);
        CHECK(id >= 0);
        CHECK(id < K);
        CHECK(seen.insert(id).second);
        auto [dk, dperm] = decode_label(id, M);
        CHECK(dk == k);
        CHECK(dperm == perm);
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
    CHECK(static_cast<std::int64_t>(seen.size()) == K);
  }
  CHECK_THROWS_AS(decode_label(9, 3), ValidationError);
}

TEST_CASE("reorder example: k=1 is the identity with label 0") {
  Rng rng(303);
  std::vector<TokenId> ids = {10, 11, 12, 13, 14, 15};
  ReorderExample ex = make_reorder_example(ids, 1, rng);
  CHECK(ex.label == 0);
  CHECK(ex.permuted == ids);
}

TEST_CASE("reorder example: inverse permutation reconstructs the document") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const int len = static_cast<int>(rng.randint(3, 40));
    std::vector<TokenId> ids(static_cast<std::size_t>(len));
    for (auto& id : ids) id = static_cast<TokenId>(rng.randint(kNumReserved, 200));
    ReorderExample ex = make_reorder_example(ids, 3, rng);

    // The stored original chunks concatenate to the document.
    std::vector<TokenId> direct;
    for (const auto& c : ex.chunks) direct.insert(direct.end(), c.begin(), c.end());
    CHECK(direct == ids);

    // Recover the original from the permuted stream using the decoded label.
    auto [k, perm] = decode_label(ex.label, 3);
    REQUIRE(k == static_cast<int>(ex.chunks.size()));
    REQUIRE(perm == ex.perm);
    std::vector<std::vector<TokenId>> permuted_chunks;
    std::size_t off = 0;
    for (int i = 0; i < k; ++i) {
      const std::size_t w = ex.chunks[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].size();
      permuted_chunks.emplace_back(ex.permuted.begin() + static_cast<std::ptrdiff_t>(off),
                                   ex.permuted.begin() + static_cast<std::ptrdiff_t>(off + w));
      off += w;
    }
    std::vector<std::vector<TokenId>> restored(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      restored[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = permuted_chunks[static_cast<std::size_t>(i)];
    }
    std::vector<TokenId> rebuilt;
    for (const auto& c : restored) rebuilt.insert(rebuilt.end(), c.begin(), c.end());
    CHECK(rebuilt == ids);
  }
}

TEST_CASE("reorder label histogram passes chi-square at alpha 0.01") {
  Rng rng(505);
  std::vector<TokenId> ids(60);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(kNumReserved + i);
  const int draws = 100000;
  std::map<std::int64_t, int> hist;
  for (int i = 0; i < draws; ++i) ++hist[make_reorder_example(ids, 3, rng).label];

  // Induced distribution: k uniform over {1,2,3}, permutation uniform given k.
  std::vector<double> expect = {1.0 / 3, 1.0 / 6, 1.0 / 6,
                                1.0 / 18, 1.0 / 18, 1.0 / 18,
                                1.0 / 18, 1.0 / 18, 1.0 / 18};
  double chi2 = 0.0;
  for (int label = 0; label < 9; ++label) {
    const double e = expect[static_cast<std::size_t>(label)] * draws;
    const double o = hist.count(label) ? hist[label] : 0;
    chi2 += (o - e) * (o - e) / e;
  }
  // 8 degrees of freedom, alpha = 0.01.
  CHECK(chi2 < 20.090);
}

TEST_CASE("reorder example rejects documents shorter than M") {
  Rng rng(606);
  CHECK_THROWS_AS(make_reorder_example({10, 11}, 3, rng), ValidationError);
}

TEST_CASE("stream batching") {
  auto doc = [](std::uint64_t id, int tokens, int L) {
    std::vector<TokenId> ids(static_cast<std::size_t>(tokens));
    for (int i = 0; i < tokens; ++i) {
      ids[static_cast<std::size_t>(i)] = static_cast<TokenId>(kNumReserved + id * 100 + i);
    }
    DocumentStream s = segment_document(ids, L, false);
    s.doc_id = id;
    return s;
  };

  SUBCASE("single doc of T=3 on one lane") {
    StreamBatcher batcher({doc(0, 12, 4)}, 1);
    StreamStep step;
    std::vector<std::uint8_t> resets;
    while (batcher.next(step)) resets.push_back(step.reset[0]);
    CHECK(resets == std::vector<std::uint8_t>{1, 0, 0});
  }
  SUBCASE("two docs of lengths 2,3 segments on one lane") {
    StreamBatcher batcher({doc(0, 8, 4), doc(1, 12, 4)}, 1);
    StreamStep step;
    std::vector<std::uint8_t> resets;
    while (batcher.next(step)) resets.push_back(step.reset[0]);
    CHECK(resets == std::vector<std::uint8_t>{1, 0, 1, 0, 0});
  }
  SUBCASE("no lane mixes documents without a reset, random schedules") {
    Rng rng(707);
    for (int trial = 0; trial < 50; ++trial) {
      const int n_docs = static_cast<int>(rng.randint(1, 9));
      const int B = static_cast<int>(rng.randint(1, 4));
      std::vector<DocumentStream> docs;
      for (int i = 0; i < n_docs; ++i) {
        docs.push_back(doc(static_cast<std::uint64_t>(i),
                           static_cast<int>(rng.randint(1, 30)), 4));
      }
      StreamBatcher batcher(docs, B);
      StreamStep step;
      std::vector<std::vector<std::pair<int, int>>> trace(static_cast<std::size_t>(B));
      while (batcher.next(step)) {
        for (int b = 0; b < B; ++b) {
          if (!step.active[static_cast<std::size_t>(b)]) continue;
          // Identify the document by its first token's hundreds digit.
          const int first = step.inputs[static_cast<std::size_t>(b)][0] - kNumReserved;
          trace[static_cast<std::size_t>(b)].push_back(
              {first / 100, step.reset[static_cast<std::size_t>(b)]});
        }
      }
      for (const auto& lane : trace) {
        for (std::size_t i = 1; i < lane.size(); ++i) {
          if (lane[i].first != lane[i - 1].first) {
            CHECK(lane[i].second == 1);
          }
        }
      }
    }
  }
}

TEST_CASE("shard round-trip") {
  Shard shard;
  shard.vocab_hash = 0xDEADBEEFCAFEF00DULL;
  shard.seg_len = 8;
  shard.max_chunks = 3;
  ShardDocument doc;
  doc.doc_id = 42;
  doc.reorder_label = 5;
  doc.segments = {{kClsId, 10, 11, 12, 13, 14, 15, kPadId}, {kClsId, 16, 17, kPadId, kPadId, kPadId, kPadId, kPadId}};
  doc.mask_bitmaps = {{0, 1, 0, 0, 1, 0, 0, 0}, {0, 0, 1, 0, 0, 0, 0, 0}};
  shard.documents.push_back(doc);

  const std::string path = "test_shard.bin";
  write_shard(path, shard);
  Shard back = read_shard(path);
  std::remove(path.c_str());
  CHECK(back.vocab_hash == shard.vocab_hash);
  CHECK(back.seg_len == shard.seg_len);
  CHECK(back.max_chunks == shard.max_chunks);
  REQUIRE(back.documents.size() == 1);
  CHECK(back.documents[0].doc_id == 42);
  CHECK(back.documents[0].reorder_label == 5);
  CHECK(back.documents[0].segments == doc.segments);
  CHECK(back.documents[0].mask_bitmaps == doc.mask_bitmaps);
}

TEST_CASE("dataset generation is deterministic under a fixed seed") {
  auto build = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenId> ids(40);
    for (auto& id : ids) id = static_cast<TokenId>(rng.randint(kNumReserved, 100));
    ReorderExample ex = make_reorder_example(ids, 3, rng);
    MaskedSegment m = corrupt_mlm(ex.permuted, 0.15, rng, 128);
    return std::make_tuple(ex.label, ex.permuted, m.input, m.targets);
  };
  CHECK(build(11) == build(11));
}

}  // TEST_SUITE
