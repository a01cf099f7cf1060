#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lexenrich/datastore.hpp"
#include "lexenrich/lexical.hpp"
#include "lexenrich/trec.hpp"

namespace lexenrich {

/// Exact inner-product / cosine search over a passage store.
///
/// Cosine similarity normalizes both sides at query time; the store keeps its
/// raw vectors. Scores accumulate in double, sequentially per (query, passage),
/// so results do not depend on the number of worker threads.
class DenseIndex {
 public:
  explicit DenseIndex(const EmbeddingStore& passages);

  Similarity similarity() const { return passages_->similarity; }
  const EmbeddingStore& passages() const { return *passages_; }

  double score(const Eigen::Ref<const Eigen::VectorXf>& query, std::size_t passage) const;
  /// As above with the query norm precomputed (only used under cosine).
  double score(const Eigen::Ref<const Eigen::VectorXf>& query, double query_norm,
               std::size_t passage) const;

 private:
  const EmbeddingStore* passages_;
  std::vector<double> norms_;
};

/// Similarity score between two raw vectors; shared by the index and tests.
double similarity_score(Similarity similarity, const Eigen::Ref<const Eigen::VectorXf>& a,
                        const Eigen::Ref<const Eigen::VectorXf>& b);

RunList dense_search(const DenseIndex& index, const EmbeddingStore& queries, std::size_t k,
                     int threads = 1);

enum class Bm25Tokenization { word, wordpiece };

std::string_view to_string(Bm25Tokenization mode);
Bm25Tokenization parse_bm25_tokenization(std::string_view mode);

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

/// Okapi BM25 over an inverted index with Robertson IDF
/// ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
  };

  /// `vocab` is required for wordpiece mode and ignored for word mode.
  static Bm25Index build(const std::vector<CorpusRecord>& corpus, Bm25Tokenization mode,
                         Bm25Params params = {}, const Vocabulary* vocab = nullptr);

  /// Terms of `text` under this index's tokenization, with punctuation dropped.
  std::vector<std::string> analyze(std::string_view text) const;

  /// Scores every document containing at least one query term; top k by score
  /// descending, ties by ascending passage id.
  std::vector<ScoredDoc> search(std::string_view query, std::size_t k) const;

  /// Score of a single document (0 when it shares no term with the query).
  double score(std::string_view query, std::size_t doc) const;

  std::size_t documents() const { return doc_ids_.size(); }
  double average_length() const { return avg_len_; }
  const Bm25Params& params() const { return params_; }
  Bm25Tokenization mode() const { return mode_; }
  const std::vector<Posting>* postings(std::string_view term) const;
  double idf(std::string_view term) const;

  void save(const std::filesystem::path& path) const;
  static Bm25Index load(const std::filesystem::path& path, const Vocabulary* vocab = nullptr);

 private:
  double term_weight(double idf, std::uint32_t tf, std::uint32_t doc) const;

  Bm25Tokenization mode_ = Bm25Tokenization::word;
  Bm25Params params_;
  const Vocabulary* vocab_ = nullptr;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_len_;
  double avg_len_ = 0.0;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::size_t> term_ids_;
  std::vector<std::vector<Posting>> postings_;
};

RunList bm25_search(const Bm25Index& index, const std::vector<QueryRecord>& queries, std::size_t k,
                    int threads = 1);

/// True iff some non-empty answer occurs in the passage as a case-insensitive,
/// whitespace-normalized substring starting and ending on word boundaries.
bool answer_hit(std::string_view passage, const std::vector<std::string>& answers);

enum class HitMode { gold_ids, answers };

std::string_view to_string(HitMode mode);

/// Gold ids when the judgments carry graded relevance, answer matching otherwise.
HitMode default_hit_mode(const Judgments& judgments);

/// Passage texts by id, needed for answer matching.
using PassageTexts = std::unordered_map<std::string, std::string>;

struct CutoffValue {
  std::size_t k = 0;
  double value = 0.0;
};

struct AccuracyReport {
  HitMode mode = HitMode::gold_ids;
  std::size_t queries = 0;
  std::vector<CutoffValue> values;
};

/// Fraction of run queries with at least one hit within the top k, per k.
/// Throws ValidationError listing unjudged query ids.
AccuracyReport topk_accuracy(const RunList& run, const Judgments& judgments,
                             const std::vector<std::size_t>& k_grid, HitMode mode,
                             const PassageTexts* texts = nullptr);

/// 1-based rank of the first hit within the run list for `qid`, or 0.
std::size_t first_hit_rank(const RunList& run, const std::string& qid, const Judgments& judgments,
                           HitMode mode, const PassageTexts* texts = nullptr, std::size_t depth = 0);

struct NdcgReport {
  double value = 0.0;
  std::size_t queries = 0;
  std::size_t excluded = 0;  ///< run queries without any relevant judgment
};

/// nDCG@10 with linear gain and 1/log2(rank + 1) discount, averaged over run
/// queries that have at least one relevant (grade > 0) judgment.
NdcgReport ndcg_at_10(const RunList& run, const Judgments& judgments);
NdcgReport ndcg_at(const RunList& run, const Judgments& judgments, std::size_t cutoff);

struct MrrReport {
  double value = 0.0;
  std::size_t queries = 0;
};

/// Mean reciprocal rank of the first hit within `cutoff`.
MrrReport mrr_at(const RunList& run, const Judgments& judgments, std::size_t cutoff, HitMode mode,
                 const PassageTexts* texts = nullptr);

}  // namespace lexenrich
