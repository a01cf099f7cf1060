#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lexenrich/datastore.hpp"

namespace lexenrich {

struct ScoredDoc {
  std::string pid;
  double score = 0.0;
};

/// Ordering used for every ranked list: score descending, then passage id ascending.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.pid < b.pid;
}

/// Ranked retrieval output per query, in insertion order of the queries.
class RunList {
 public:
  /// Replaces any existing list for `qid`. Throws ValidationError if the list
  /// is not in rank order or repeats a passage id.
  void set(const std::string& qid, std::vector<ScoredDoc> docs);

  const std::vector<ScoredDoc>* find(std::string_view qid) const;
  const std::vector<std::string>& query_ids() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// 1-based rank of `pid` for `qid`, or 0 when absent.
  std::size_t rank_of(std::string_view qid, std::string_view pid) const;

  friend bool operator==(const RunList& a, const RunList& b);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::vector<ScoredDoc>> lists_;
};

/// Relevance information per query: graded passage judgments and/or answer strings.
struct Judgments {
  std::map<std::string, std::map<std::string, int>> relevance;
  std::map<std::string, std::vector<std::string>> answers;

  bool has_graded() const;
  bool judged(std::string_view qid) const;

  /// gold_pids become relevance 1; non-empty answer lists are kept.
  static Judgments from_queries(const std::vector<QueryRecord>& queries);
};

/// TREC run lines: `qid Q0 pid rank score tag`.
void write_run(const RunList& run, const std::filesystem::path& path, std::string_view tag);
RunList read_run(const std::filesystem::path& path);

/// TREC qrels lines: `qid 0 pid rel`.
void write_qrels(const Judgments& judgments, const std::filesystem::path& path);
Judgments read_qrels(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace lexenrich
