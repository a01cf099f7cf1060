#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lexenrich/datastore.hpp"
#include "lexenrich/error.hpp"
#include "lexenrich/trec.hpp"
#include "test_support.hpp"

namespace lexenrich {
namespace {

using testing::read_file;
using testing::TempDir;
using testing::write_file;

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(Bundle, RoundTripsSmallTensor) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("w", {2, 2}, {1.0F, 0.0F, 0.0F, 1.0F});
  b.metadata["note"] = "x";
  write_bundle(b, dir / "b");
  const auto r = read_bundle(dir / "b");
  ASSERT_EQ(r.tensors.size(), 1U);
  EXPECT_EQ(r.at("w").shape, (std::vector<std::int64_t>{2, 2}));
  EXPECT_EQ(r.at("w").data, (std::vector<float>{1.0F, 0.0F, 0.0F, 1.0F}));
  EXPECT_EQ(r.metadata["note"], "x");
}

TEST(Bundle, AcceptsSuffixedPaths) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("v", {3}, {1.0F, 2.0F, 3.0F});
  write_bundle(b, dir / "b.manifest");
  EXPECT_EQ(read_bundle(dir / "b.bin").at("v").data, b.at("v").data);
  EXPECT_EQ(read_bundle(dir / "b").at("v").data, b.at("v").data);
}

TEST(Bundle, PayloadIsLittleEndianFloat32) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("x", {1}, {1.0F});
  write_bundle(b, dir / "b");
  EXPECT_EQ(read_file(dir / "b.bin"), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Bundle, RandomBundlesRoundTripByteForByte) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 9);
  std::uniform_int_distribution<std::uint32_t> bits;
  TempDir dir("bundle");
  for (int trial = 0; trial < 30; ++trial) {
    TensorBundle b;
    const int count = 1 + trial % 4;
    for (int t = 0; t < count; ++t) {
      std::vector<std::int64_t> shape;
      std::int64_t n = 1;
      for (int r = 0; r < 1 + t % 3; ++r) {
        shape.push_back(dim(rng));
        n *= shape.back();
      }
      std::vector<float> data(static_cast<std::size_t>(n));
      for (auto& x : data) {
        do {
          x = std::bit_cast<float>(bits(rng));
        } while (!std::isfinite(x));
      }
      b.add("t" + std::to_string(t), shape, data);
    }
    write_bundle(b, dir / "r");
    const auto manifest = read_file(dir / "r.manifest");
    const auto payload = read_file(dir / "r.bin");
    const auto back = read_bundle(dir / "r");
    for (const auto& [name, tensor] : b.tensors) {
      EXPECT_EQ(back.at(name).shape, tensor.shape);
      EXPECT_EQ(std::memcmp(back.at(name).data.data(), tensor.data.data(), tensor.data.size() * 4), 0);
    }
    write_bundle(back, dir / "r");
    EXPECT_EQ(read_file(dir / "r.manifest"), manifest);
    EXPECT_EQ(read_file(dir / "r.bin"), payload);
  }
}

TEST(Bundle, ShapeAndDataLengthMustAgree) {
  TensorBundle b;
  b.tensors.push_back({"bad", Tensor{{3}, {1.0F, 2.0F}}});
  EXPECT_THROW(b.validate(), ValidationError);
  EXPECT_NE(error_of([&] { b.validate(); }).find("bad"), std::string::npos);
}

TEST(Bundle, PayloadSizeFollowsDeclaredShape) {
  Tensor t{{30522, 768}, {}};
  EXPECT_EQ(t.declared_elements() * 4, 30522LL * 768 * 4);
}

TEST(Bundle, RejectsDuplicateNamesAndEmptyShapes) {
  TensorBundle dup;
  dup.tensors.push_back({"a", Tensor{{1}, {1.0F}}});
  dup.tensors.push_back({"a", Tensor{{1}, {1.0F}}});
  EXPECT_THROW(dup.validate(), ValidationError);
  TensorBundle empty_shape;
  empty_shape.tensors.push_back({"a", Tensor{{}, {}}});
  EXPECT_THROW(empty_shape.validate(), ValidationError);
  TensorBundle zero_dim;
  zero_dim.tensors.push_back({"a", Tensor{{0}, {}}});
  EXPECT_THROW(zero_dim.validate(), ValidationError);
}

TEST(Bundle, TruncatedPayloadIsRejected) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("w", {4}, {1.0F, 2.0F, 3.0F, 4.0F});
  write_bundle(b, dir / "b");
  const auto payload = read_file(dir / "b.bin");
  write_file(dir / "b.bin", payload.substr(0, 10));
  EXPECT_THROW(read_bundle(dir / "b"), ValidationError);
}

TEST(Bundle, ManifestNamingAbsentTensorNamesIt) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("w", {2}, {1.0F, 2.0F});
  write_bundle(b, dir / "b");
  auto manifest = nlohmann::json::parse(read_file(dir / "b.manifest"));
  manifest["tensors"].push_back({{"name", "ghost"}, {"dtype", "float32"}, {"shape", {2}}, {"offset", 8}, {"bytes", 8}});
  write_file(dir / "b.manifest", manifest.dump());
  const auto msg = error_of([&] { read_bundle(dir / "b"); });
  EXPECT_NE(msg.find("ghost"), std::string::npos) << msg;
}

TEST(Bundle, WrongByteOrderIsRejected) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("w", {1}, {1.0F});
  write_bundle(b, dir / "b");
  auto manifest = nlohmann::json::parse(read_file(dir / "b.manifest"));
  manifest["byte_order"] = "big";
  write_file(dir / "b.manifest", manifest.dump());
  EXPECT_THROW(read_bundle(dir / "b"), ValidationError);
}

TEST(Bundle, FiniteOnlyFlagRejectsNaN) {
  TempDir dir("bundle");
  TensorBundle b;
  b.add("w", {2}, {1.0F, std::numeric_limits<float>::quiet_NaN()});
  write_bundle(b, dir / "b");
  EXPECT_NO_THROW(read_bundle(dir / "b"));
  EXPECT_THROW(read_bundle(dir / "b", {.require_finite = true}), ValidationError);
}

TEST(Bundle, MissingFilesAreIoErrors) {
  TempDir dir("bundle");
  EXPECT_THROW(read_bundle(dir / "nothing"), IoError);
  TensorBundle b;
  b.add("w", {1}, {1.0F});
  write_bundle(b, dir / "b");
  std::filesystem::remove(dir / "b.bin");
  EXPECT_THROW(read_bundle(dir / "b"), IoError);
}

TEST(Corpus, LoadsRecordsInFileOrder) {
  TempDir dir("corpus");
  write_file(dir / "c.jsonl",
             "{\"id\": \"p1\", \"title\": \"T\", \"text\": \"one\"}\n{\"id\": \"p2\", \"title\": \"\", \"text\": \"two\"}\n");
  const auto c = load_corpus(dir / "c.jsonl");
  ASSERT_EQ(c.size(), 2U);
  EXPECT_EQ(c[0].id, "p1");
  EXPECT_EQ(c[1].id, "p2");
  EXPECT_EQ(passage_text(c[0]), "T one");
  EXPECT_EQ(passage_text(c[1]), "two");
}

TEST(Corpus, DuplicateIdCitesBothLines) {
  TempDir dir("corpus");
  write_file(dir / "c.jsonl",
             "{\"id\": \"p1\", \"text\": \"a\"}\n{\"id\": \"p2\", \"text\": \"b\"}\n{\"id\": \"p1\", \"text\": \"c\"}\n");
  const auto msg = error_of([&] { load_corpus(dir / "c.jsonl"); });
  EXPECT_NE(msg.find("lines 1 and 3"), std::string::npos) << msg;
}

TEST(Corpus, MalformedLineReportsLineNumber) {
  TempDir dir("corpus");
  write_file(dir / "c.jsonl", "{\"id\": \"p1\", \"text\": \"a\"}\n{not json\n");
  const auto msg = error_of([&] { load_corpus(dir / "c.jsonl"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Corpus, EmptyFileGivesNoRecords) {
  TempDir dir("corpus");
  write_file(dir / "c.jsonl", "");
  EXPECT_TRUE(load_corpus(dir / "c.jsonl").empty());
  EXPECT_TRUE(load_queries(dir / "c.jsonl").empty());
}

TEST(Queries, RoundTripWithAnswersAndGold) {
  TempDir dir("queries");
  std::vector<QueryRecord> qs = {{"q1", "where is it", {"here", "there"}, {"p1"}}, {"q2", "x", {}, {}}};
  write_queries(qs, dir / "q.jsonl");
  const auto back = load_queries(dir / "q.jsonl");
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back[0].answers, qs[0].answers);
  EXPECT_EQ(back[0].gold_pids, qs[0].gold_pids);
  EXPECT_TRUE(back[1].answers.empty());
}

TEST(Embeddings, RoundTripBitExact) {
  TempDir dir("emb");
  auto store = testing::random_store(3, 4, 5, Similarity::cosine);
  write_embeddings(store, dir / "e");
  const auto back = load_embeddings(dir / "e");
  EXPECT_EQ(back.ids, store.ids);
  EXPECT_EQ(back.dim(), 4);
  EXPECT_EQ(back.similarity, Similarity::cosine);
  EXPECT_EQ(back.vectors, store.vectors);
}

TEST(Embeddings, IdRowMismatchIsRejected) {
  TempDir dir("emb");
  write_embeddings(testing::random_store(3, 4, 5, Similarity::dot), dir / "e");
  write_file(dir / "e.ids", "p0\np1\n");
  EXPECT_THROW(load_embeddings(dir / "e"), ValidationError);
}

TEST(Embeddings, NonFiniteRowIsNamed) {
  auto store = testing::random_store(3, 4, 5, Similarity::dot);
  store.vectors(1, 2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_EQ(error_of([&] { store.validate(); }), "non-finite row 1");
}

TEST(Embeddings, SimilarityTagIsStrict) {
  EXPECT_EQ(parse_similarity("dot"), Similarity::dot);
  EXPECT_EQ(parse_similarity("cosine"), Similarity::cosine);
  EXPECT_THROW(parse_similarity("l2"), ValidationError);
}

TEST(Run, RoundTripsThroughTrecFormat) {
  TempDir dir("run");
  RunList run;
  run.set("q2", {{"b", 3.25}, {"a", 1.0 / 3.0}, {"c", 1.0 / 3.0}});
  run.set("q1", {{"z", -0.1}});
  write_run(run, dir / "r.trec", "test");
  const auto back = read_run(dir / "r.trec");
  EXPECT_TRUE(back == run);
  EXPECT_EQ(back.query_ids(), (std::vector<std::string>{"q2", "q1"}));
  EXPECT_EQ(back.rank_of("q2", "c"), 3U);
  EXPECT_EQ(back.rank_of("q2", "zz"), 0U);
}

TEST(Run, RejectsUnsortedOrDuplicateLists) {
  RunList run;
  EXPECT_THROW(run.set("q", {{"a", 1.0}, {"b", 2.0}}), ValidationError);
  EXPECT_THROW(run.set("q", {{"b", 1.0}, {"a", 1.0}}), ValidationError);
  EXPECT_THROW(run.set("q", {{"a", 2.0}, {"a", 1.0}}), ValidationError);
}

TEST(Qrels, RoundTrip) {
  TempDir dir("qrels");
  Judgments j;
  j.relevance["q1"]["p1"] = 2;
  j.relevance["q1"]["p2"] = 0;
  j.relevance["q2"]["p3"] = 1;
  write_qrels(j, dir / "q.txt");
  const auto back = read_qrels(dir / "q.txt");
  EXPECT_EQ(back.relevance, j.relevance);
  EXPECT_TRUE(back.has_graded());
}

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    const double x = n(rng);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
}

}  // namespace
}  // namespace lexenrich
