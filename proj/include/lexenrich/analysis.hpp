#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexenrich/lexical.hpp"
#include "lexenrich/mlm_head.hpp"
#include "lexenrich/retrieval.hpp"
#include "lexenrich/trec.hpp"

namespace lexenrich {

/// Rank information retained from a full VocabProjection: the ordered top
/// `depth` tokens plus exact ranks for a tracked token subset. Keeps pair
/// contexts small when the vocabulary is large.
class RankedProjection {
 public:
  RankedProjection() = default;
  RankedProjection(const VocabProjection& proj, std::span<const TokenId> tracked, std::size_t depth);

  /// 1-based rank of a tracked token. Throws ValidationError for untracked tokens.
  std::size_t rank(TokenId token) const;

  /// The first k tokens in rank order; k must not exceed depth().
  std::span<const TokenId> top(std::size_t k) const;

  std::size_t depth() const { return order_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }

 private:
  std::size_t vocab_size_ = 0;
  std::vector<TokenId> order_;
  std::unordered_map<TokenId, std::size_t> ranks_;
};

/// A query, its gold passage, their content token sets and vocabulary
/// projections (Q for the query, P for the passage).
struct PairContext {
  std::string query_id;
  std::string passage_id;
  TokenSet query_tokens;
  TokenSet passage_tokens;
  RankedProjection query_proj;
  RankedProjection passage_proj;

  TokenSet shared() const { return intersect(query_tokens, passage_tokens); }
};

/// Builds a pair context that tracks ranks for every token of both sets and
/// keeps the top `depth` tokens of each projection (0 = whole vocabulary).
PairContext make_pair_context(std::string query_id, std::string passage_id, TokenSet query_tokens,
                              TokenSet passage_tokens, const VocabProjection& q,
                              const VocabProjection& p, std::size_t depth = 0);

enum class ProjectionSide { query, passage };

struct CategoryFractions {
  double in_both = 0.0;
  double query_only = 0.0;
  double passage_only = 0.0;
  double neither = 0.0;
  std::size_t tokens = 0;  ///< pooled count of top-k content tokens
};

struct CategoryReport {
  std::size_t k = 0;
  CategoryFractions query;    ///< categories of Q's top-k tokens
  CategoryFractions passage;  ///< categories of P's top-k tokens
};

/// Pools every pair's top-k tokens (non-content tokens dropped) and reports
/// which fraction occurs in both texts, only the query, only the passage, or neither.
CategoryReport category_breakdown(std::span<const PairContext> pairs, const ContentFilter& filter,
                                  std::size_t k);

struct CoverageReport {
  std::vector<std::size_t> k_grid;
  std::vector<double> coverage_query;
  std::vector<double> coverage_passage;
  std::size_t shared_tokens = 0;
  std::size_t pairs = 0;
  bool empty = false;  ///< no pair has a shared token; coverage values are 0
};

/// Share of query/passage shared tokens ranked within the top k of Q and of P.
/// Pooled over all shared tokens by default; `per_pair_mean` averages per-pair
/// coverage over pairs with at least one shared token instead.
CoverageReport shared_token_coverage(std::span<const PairContext> pairs,
                                     const std::vector<std::size_t>& k_grid,
                                     bool per_pair_mean = false);

enum class TokenSelector { passage, query, shared, query_only };

std::string_view to_string(TokenSelector selector);
std::string_view to_string(ProjectionSide side);

struct MrrResult {
  double value = 0.0;
  std::size_t pairs = 0;  ///< pairs with a non-empty selected set
  bool empty = true;
};

/// Mean over pairs of (1/|T|) Σ_{t∈T} 1/rank(t), skipping pairs whose selected set is empty.
MrrResult token_level_mrr(std::span<const PairContext> pairs, TokenSelector selector,
                          ProjectionSide target);

struct ExpansionStats {
  std::size_t k = 0;
  double queries_with_expansion = 0.0;  ///< fraction of pairs with >= 1 expansion token in Q's top-k
  double expansion_token_fraction = 0.0;  ///< expansion tokens / top-k content tokens of Q
  std::size_t top_tokens = 0;
};

/// An expansion token ranks in Q's top-k, is a content token, occurs in the
/// gold passage and not in the query.
std::vector<ExpansionStats> query_expansion_stats(std::span<const PairContext> pairs,
                                                  const ContentFilter& filter,
                                                  const std::vector<std::size_t>& k_grid);

/// Dense-rank buckets: 1-5, 6-20, 21-100, >100 or absent.
inline constexpr std::array<std::size_t, 3> kAmnesiaBucketUpper = {5, 20, 100};
inline constexpr std::size_t kAmnesiaBuckets = 4;
std::size_t amnesia_bucket(std::size_t dense_rank);
std::string_view amnesia_bucket_label(std::size_t bucket);

struct AmnesiaRecord {
  std::string query_id;
  std::string passage_id;
  std::size_t bm25_rank = 0;
  std::size_t dense_rank = 0;  ///< 0 when absent from the dense run
  std::size_t bucket = 0;
  std::size_t shared_tokens = 0;
  double max_rank_passage = 0.0;
  double max_rank_query = 0.0;
  double median_rank_passage = 0.0;
  double median_rank_query = 0.0;
};

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

struct AmnesiaBucketSummary {
  std::size_t pairs = 0;
  Quartiles max_rank_passage;
  Quartiles max_rank_query;
};

struct AmnesiaProfile {
  std::vector<AmnesiaRecord> records;
  std::array<AmnesiaBucketSummary, kAmnesiaBuckets> buckets{};
  std::size_t qualifying_queries = 0;
  std::size_t skipped_no_shared = 0;
  bool empty = true;
};

using PairBuilder = std::function<PairContext(const std::string& query_id, const std::string& passage_id)>;

/// Restricts to queries whose BM25 top-5 holds a relevant passage (the best
/// BM25-ranked one is used), looks up that passage's rank in the dense run and
/// records max/median shared-token ranks in P and Q.
AmnesiaProfile amnesia_profile(const RunList& dense_run, const RunList& bm25_run,
                               const Judgments& judgments, HitMode mode,
                               const PairBuilder& build_pair, const PassageTexts* texts = nullptr);

/// Median of a multiset; the mean of the two central values for even sizes.
double median(std::vector<double> values);

/// Linear-interpolation quartiles (the median matches `median`).
Quartiles quartiles(std::vector<double> values);

void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path);
void write_category_csv(const std::vector<CategoryReport>& reports, const std::filesystem::path& path);
void write_expansion_csv(const std::vector<ExpansionStats>& stats, const std::filesystem::path& path);

struct MrrRow {
  TokenSelector selector;
  ProjectionSide target;
  MrrResult result;
};
void write_mrr_csv(const std::vector<MrrRow>& rows, const std::filesystem::path& path);

/// Per-bucket summary; per-pair records go to `pairs_path` when non-empty.
void write_amnesia_csv(const AmnesiaProfile& profile, const std::filesystem::path& path,
                       const std::filesystem::path& pairs_path = {});

}  // namespace lexenrich
