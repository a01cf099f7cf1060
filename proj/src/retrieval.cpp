#include "lexenrich/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "lexenrich/error.hpp"
#include "lexenrich/parallel.hpp"

namespace lexenrich {

namespace {

double dot(const Eigen::Ref<const Eigen::VectorXf>& a, const Eigen::Ref<const Eigen::VectorXf>& b) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return sum;
}

double norm(const Eigen::Ref<const Eigen::VectorXf>& a) { return std::sqrt(dot(a, a)); }

double cosine_from(double dot_ab, double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return dot_ab / (norm_a * norm_b);
}

// Keeps the k best documents under ranks_before. The heap top is the worst kept.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void push(const std::string& pid, double score) {
    if (heap_.size() < k_) {
      heap_.push_back({pid, score});
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (ranks_before(ScoredDoc{pid, score}, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = {pid, score};
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  std::vector<ScoredDoc> take() {
    std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<ScoredDoc> heap_;
};

bool is_hit(const std::string& qid, const std::string& pid, const Judgments& judgments, HitMode mode,
            const PassageTexts* texts) {
  if (mode == HitMode::gold_ids) {
    auto it = judgments.relevance.find(qid);
    if (it == judgments.relevance.end()) return false;
    auto rel = it->second.find(pid);
    return rel != it->second.end() && rel->second > 0;
  }
  auto ans = judgments.answers.find(qid);
  if (ans == judgments.answers.end()) return false;
  if (!texts) throw ValidationError("answer matching requires passage texts");
  auto text = texts->find(pid);
  if (text == texts->end()) return false;
  return answer_hit(text->second, ans->second);
}

void require_judged(const RunList& run, const Judgments& judgments, HitMode mode) {
  std::vector<std::string> missing;
  for (const auto& qid : run.query_ids()) {
    const bool judged = mode == HitMode::gold_ids ? judgments.relevance.count(qid) > 0
                                                  : judgments.answers.count(qid) > 0;
    if (!judged) missing.push_back(qid);
  }
  if (!missing.empty()) {
    std::string msg = "unjudged queries:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw ValidationError(msg);
  }
}

// Lowercases ASCII and collapses whitespace runs to one space, trimming ends.
std::string normalize_for_match(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(u));
  }
  return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

double similarity_score(Similarity similarity, const Eigen::Ref<const Eigen::VectorXf>& a,
                        const Eigen::Ref<const Eigen::VectorXf>& b) {
  const double d = dot(a, b);
  return similarity == Similarity::dot ? d : cosine_from(d, norm(a), norm(b));
}

DenseIndex::DenseIndex(const EmbeddingStore& passages) : passages_(&passages) {
  if (passages.size() == 0) throw ValidationError("dense index over an empty passage store");
  if (passages.similarity == Similarity::cosine) {
    norms_.resize(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) {
      norms_[i] = norm(passages.vectors.row(static_cast<Eigen::Index>(i)).transpose());
    }
  }
}

double DenseIndex::score(const Eigen::Ref<const Eigen::VectorXf>& query, std::size_t passage) const {
  return score(query, passages_->similarity == Similarity::cosine ? norm(query) : 0.0, passage);
}

double DenseIndex::score(const Eigen::Ref<const Eigen::VectorXf>& query, double query_norm,
                         std::size_t passage) const {
  const auto row = passages_->vectors.row(static_cast<Eigen::Index>(passage)).transpose();
  const double d = dot(query, row);
  if (passages_->similarity == Similarity::dot) return d;
  return cosine_from(d, query_norm, norms_[passage]);
}

RunList dense_search(const DenseIndex& index, const EmbeddingStore& queries, std::size_t k,
                     int threads) {
  if (k == 0) throw ValidationError("search depth k must be at least 1");
  const auto& passages = index.passages();
  if (queries.size() > 0 && queries.dim() != passages.dim()) {
    throw ValidationError("query dimension " + std::to_string(queries.dim()) +
                          " does not match passage dimension " + std::to_string(passages.dim()));
  }
  std::vector<std::vector<ScoredDoc>> lists(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    const Eigen::VectorXf query = queries.vectors.row(static_cast<Eigen::Index>(q)).transpose();
    const double query_norm = index.similarity() == Similarity::cosine ? norm(query) : 0.0;
    TopK top(std::min(k, passages.size()));
    for (std::size_t p = 0; p < passages.size(); ++p) {
      top.push(passages.ids[p], index.score(query, query_norm, p));
    }
    lists[q] = top.take();
  });
  RunList run;
  for (std::size_t q = 0; q < queries.size(); ++q) run.set(queries.ids[q], std::move(lists[q]));
  return run;
}

RunList bm25_search(const Bm25Index& index, const std::vector<QueryRecord>& queries, std::size_t k,
                    int threads) {
  std::vector<std::vector<ScoredDoc>> lists(queries.size());
  parallel_for(queries.size(), threads,
               [&](std::size_t q) { lists[q] = index.search(queries[q].text, k); });
  RunList run;
  for (std::size_t q = 0; q < queries.size(); ++q) run.set(queries[q].id, std::move(lists[q]));
  return run;
}

bool answer_hit(std::string_view passage, const std::vector<std::string>& answers) {
  const std::string text = normalize_for_match(passage);
  for (const auto& raw : answers) {
    const std::string answer = normalize_for_match(raw);
    if (answer.empty()) continue;
    std::size_t pos = text.find(answer);
    while (pos != std::string::npos) {
      const std::size_t end = pos + answer.size();
      const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(text[pos - 1])) ||
                           !is_word_char(static_cast<unsigned char>(answer.front()));
      const bool right_ok = end == text.size() ||
                            !is_word_char(static_cast<unsigned char>(text[end])) ||
                            !is_word_char(static_cast<unsigned char>(answer.back()));
      if (left_ok && right_ok) return true;
      pos = text.find(answer, pos + 1);
    }
  }
  return false;
}

std::string_view to_string(HitMode mode) { return mode == HitMode::gold_ids ? "gold_ids" : "answers"; }

HitMode default_hit_mode(const Judgments& judgments) {
  return judgments.has_graded() ? HitMode::gold_ids : HitMode::answers;
}

std::size_t first_hit_rank(const RunList& run, const std::string& qid, const Judgments& judgments,
                           HitMode mode, const PassageTexts* texts, std::size_t depth) {
  const auto* docs = run.find(qid);
  if (!docs) return 0;
  const std::size_t limit = depth == 0 ? docs->size() : std::min(depth, docs->size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (is_hit(qid, (*docs)[i].pid, judgments, mode, texts)) return i + 1;
  }
  return 0;
}

AccuracyReport topk_accuracy(const RunList& run, const Judgments& judgments,
                             const std::vector<std::size_t>& k_grid, HitMode mode,
                             const PassageTexts* texts) {
  require_judged(run, judgments, mode);
  AccuracyReport report;
  report.mode = mode;
  report.queries = run.size();
  std::size_t depth = 0;
  for (auto k : k_grid) {
    if (k == 0) throw ValidationError("accuracy cutoff must be at least 1");
    depth = std::max(depth, k);
  }
  std::vector<std::size_t> first(run.size());
  for (std::size_t q = 0; q < run.size(); ++q) {
    first[q] = first_hit_rank(run, run.query_ids()[q], judgments, mode, texts, depth);
  }
  for (auto k : k_grid) {
    std::size_t hits = 0;
    for (auto r : first) hits += (r != 0 && r <= k) ? 1 : 0;
    report.values.push_back({k, run.size() ? static_cast<double>(hits) / static_cast<double>(run.size()) : 0.0});
  }
  return report;
}

NdcgReport ndcg_at(const RunList& run, const Judgments& judgments, std::size_t cutoff) {
  NdcgReport report;
  double total = 0.0;
  for (const auto& qid : run.query_ids()) {
    auto rit = judgments.relevance.find(qid);
    std::vector<int> gains;
    if (rit != judgments.relevance.end()) {
      for (const auto& [pid, grade] : rit->second) {
        if (grade > 0) gains.push_back(grade);
      }
    }
    if (gains.empty()) {
      ++report.excluded;
      continue;
    }
    std::sort(gains.begin(), gains.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < gains.size() && i < cutoff; ++i) {
      ideal += gains[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    double dcg = 0.0;
    const auto& docs = *run.find(qid);
    for (std::size_t i = 0; i < docs.size() && i < cutoff; ++i) {
      auto g = rit->second.find(docs[i].pid);
      if (g != rit->second.end() && g->second > 0) {
        dcg += g->second / std::log2(static_cast<double>(i) + 2.0);
      }
    }
    total += dcg / ideal;
    ++report.queries;
  }
  if (report.queries) report.value = total / static_cast<double>(report.queries);
  return report;
}

NdcgReport ndcg_at_10(const RunList& run, const Judgments& judgments) { return ndcg_at(run, judgments, 10); }

MrrReport mrr_at(const RunList& run, const Judgments& judgments, std::size_t cutoff, HitMode mode,
                 const PassageTexts* texts) {
  require_judged(run, judgments, mode);
  MrrReport report;
  report.queries = run.size();
  double total = 0.0;
  for (const auto& qid : run.query_ids()) {
    const auto r = first_hit_rank(run, qid, judgments, mode, texts, cutoff);
    if (r) total += 1.0 / static_cast<double>(r);
  }
  if (report.queries) report.value = total / static_cast<double>(report.queries);
  return report;
}

}  // namespace lexenrich
