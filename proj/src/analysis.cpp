#include "lexenrich/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lexenrich/error.hpp"

namespace lexenrich {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

const RankedProjection& side_of(const PairContext& pair, ProjectionSide side) {
  return side == ProjectionSide::query ? pair.query_proj : pair.passage_proj;
}

// Sums in ascending order so the result does not depend on input order.
double order_free_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return std::accumulate(values.begin(), values.end(), 0.0);
}

void require_pairs(std::span<const PairContext> pairs) {
  if (pairs.empty()) throw ValidationError("analysis needs at least one query/passage pair");
}

}  // namespace

RankedProjection::RankedProjection(const VocabProjection& proj, std::span<const TokenId> tracked,
                                   std::size_t depth)
    : vocab_size_(static_cast<std::size_t>(proj.size())) {
  const auto ranks = rank_all(proj);
  const std::size_t keep = depth == 0 ? vocab_size_ : std::min(depth, vocab_size_);
  order_.assign(keep, 0);
  for (std::size_t id = 0; id < ranks.size(); ++id) {
    if (ranks[id] <= keep) order_[ranks[id] - 1] = static_cast<TokenId>(id);
  }
  for (TokenId t : tracked) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) {
      throw ValidationError("tracked token " + std::to_string(t) + " out of range");
    }
    ranks_.emplace(t, ranks[static_cast<std::size_t>(t)]);
  }
}

std::size_t RankedProjection::rank(TokenId token) const {
  auto it = ranks_.find(token);
  if (it == ranks_.end()) throw ValidationError("token " + std::to_string(token) + " is not tracked");
  return it->second;
}

std::span<const TokenId> RankedProjection::top(std::size_t k) const {
  if (k > order_.size()) {
    throw ValidationError("top-" + std::to_string(k) + " requested but only " +
                          std::to_string(order_.size()) + " ranks retained");
  }
  return {order_.data(), k};
}

PairContext make_pair_context(std::string query_id, std::string passage_id, TokenSet query_tokens,
                              TokenSet passage_tokens, const VocabProjection& q,
                              const VocabProjection& p, std::size_t depth) {
  query_tokens.origin = TokenOrigin::query;
  passage_tokens.origin = TokenOrigin::passage;
  std::vector<TokenId> tracked;
  std::set_union(query_tokens.ids.begin(), query_tokens.ids.end(), passage_tokens.ids.begin(),
                 passage_tokens.ids.end(), std::back_inserter(tracked));
  PairContext ctx;
  ctx.query_id = std::move(query_id);
  ctx.passage_id = std::move(passage_id);
  ctx.query_proj = RankedProjection(q, tracked, depth);
  ctx.passage_proj = RankedProjection(p, tracked, depth);
  ctx.query_tokens = std::move(query_tokens);
  ctx.passage_tokens = std::move(passage_tokens);
  return ctx;
}

CategoryReport category_breakdown(std::span<const PairContext> pairs, const ContentFilter& filter,
                                  std::size_t k) {
  require_pairs(pairs);
  if (k == 0) throw ValidationError("k must be at least 1");
  CategoryReport report;
  report.k = k;
  for (auto side : {ProjectionSide::query, ProjectionSide::passage}) {
    std::array<std::size_t, 4> counts{};
    for (const auto& pair : pairs) {
      for (TokenId t : side_of(pair, side).top(k)) {
        if (!filter.is_content(t)) continue;
        const bool in_q = pair.query_tokens.contains(t);
        const bool in_p = pair.passage_tokens.contains(t);
        ++counts[in_q && in_p ? 0 : in_q ? 1 : in_p ? 2 : 3];
      }
    }
    const std::size_t total = counts[0] + counts[1] + counts[2] + counts[3];
    CategoryFractions f;
    f.tokens = total;
    if (total > 0) {
      const double n = static_cast<double>(total);
      f.in_both = static_cast<double>(counts[0]) / n;
      f.query_only = static_cast<double>(counts[1]) / n;
      f.passage_only = static_cast<double>(counts[2]) / n;
      f.neither = static_cast<double>(counts[3]) / n;
    }
    (side == ProjectionSide::query ? report.query : report.passage) = f;
  }
  return report;
}

CoverageReport shared_token_coverage(std::span<const PairContext> pairs,
                                     const std::vector<std::size_t>& k_grid, bool per_pair_mean) {
  require_pairs(pairs);
  if (!std::is_sorted(k_grid.begin(), k_grid.end())) throw ValidationError("k grid must be ascending");
  CoverageReport report;
  report.k_grid = k_grid;
  report.pairs = pairs.size();
  report.coverage_query.assign(k_grid.size(), 0.0);
  report.coverage_passage.assign(k_grid.size(), 0.0);

  // hits[side][k index] per pair.
  std::vector<std::vector<double>> per_pair_q(k_grid.size()), per_pair_p(k_grid.size());
  std::vector<std::size_t> pooled_q(k_grid.size(), 0), pooled_p(k_grid.size(), 0);
  std::size_t pairs_with_shared = 0;
  for (const auto& pair : pairs) {
    const auto shared = pair.shared();
    if (shared.empty()) continue;
    ++pairs_with_shared;
    report.shared_tokens += shared.size();
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
      std::size_t in_q = 0, in_p = 0;
      for (TokenId t : shared.ids) {
        in_q += pair.query_proj.rank(t) <= k_grid[i] ? 1 : 0;
        in_p += pair.passage_proj.rank(t) <= k_grid[i] ? 1 : 0;
      }
      pooled_q[i] += in_q;
      pooled_p[i] += in_p;
      const double n = static_cast<double>(shared.size());
      per_pair_q[i].push_back(static_cast<double>(in_q) / n);
      per_pair_p[i].push_back(static_cast<double>(in_p) / n);
    }
  }
  if (report.shared_tokens == 0) {
    report.empty = true;
    return report;
  }
  for (std::size_t i = 0; i < k_grid.size(); ++i) {
    if (per_pair_mean) {
      const double n = static_cast<double>(pairs_with_shared);
      report.coverage_query[i] = order_free_sum(per_pair_q[i]) / n;
      report.coverage_passage[i] = order_free_sum(per_pair_p[i]) / n;
    } else {
      const double n = static_cast<double>(report.shared_tokens);
      report.coverage_query[i] = static_cast<double>(pooled_q[i]) / n;
      report.coverage_passage[i] = static_cast<double>(pooled_p[i]) / n;
    }
  }
  return report;
}

std::string_view to_string(TokenSelector selector) {
  switch (selector) {
    case TokenSelector::passage: return "passage";
    case TokenSelector::query: return "query";
    case TokenSelector::shared: return "shared";
    case TokenSelector::query_only: return "query_only";
  }
  return "";
}

std::string_view to_string(ProjectionSide side) { return side == ProjectionSide::query ? "Q" : "P"; }

MrrResult token_level_mrr(std::span<const PairContext> pairs, TokenSelector selector,
                          ProjectionSide target) {
  std::vector<double> per_pair;
  for (const auto& pair : pairs) {
    TokenSet selected;
    switch (selector) {
      case TokenSelector::passage: selected = pair.passage_tokens; break;
      case TokenSelector::query: selected = pair.query_tokens; break;
      case TokenSelector::shared: selected = pair.shared(); break;
      case TokenSelector::query_only: selected = difference(pair.query_tokens, pair.passage_tokens); break;
    }
    if (selected.empty()) continue;
    std::vector<double> reciprocal;
    reciprocal.reserve(selected.size());
    for (TokenId t : selected.ids) {
      reciprocal.push_back(1.0 / static_cast<double>(side_of(pair, target).rank(t)));
    }
    per_pair.push_back(order_free_sum(std::move(reciprocal)) / static_cast<double>(selected.size()));
  }
  MrrResult result;
  result.pairs = per_pair.size();
  result.empty = per_pair.empty();
  if (!result.empty) result.value = order_free_sum(std::move(per_pair)) / static_cast<double>(result.pairs);
  return result;
}

std::vector<ExpansionStats> query_expansion_stats(std::span<const PairContext> pairs,
                                                  const ContentFilter& filter,
                                                  const std::vector<std::size_t>& k_grid) {
  require_pairs(pairs);
  std::vector<ExpansionStats> out;
  for (auto k : k_grid) {
    if (k == 0) throw ValidationError("k must be at least 1");
    std::size_t with_expansion = 0, expansions = 0, top_tokens = 0;
    for (const auto& pair : pairs) {
      std::size_t here = 0;
      for (TokenId t : pair.query_proj.top(k)) {
        if (!filter.is_content(t)) continue;
        ++top_tokens;
        if (pair.passage_tokens.contains(t) && !pair.query_tokens.contains(t)) ++here;
      }
      expansions += here;
      with_expansion += here > 0 ? 1 : 0;
    }
    ExpansionStats s;
    s.k = k;
    s.top_tokens = top_tokens;
    s.queries_with_expansion = static_cast<double>(with_expansion) / static_cast<double>(pairs.size());
    s.expansion_token_fraction =
        top_tokens ? static_cast<double>(expansions) / static_cast<double>(top_tokens) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::size_t amnesia_bucket(std::size_t dense_rank) {
  if (dense_rank == 0) return kAmnesiaBuckets - 1;
  for (std::size_t b = 0; b < kAmnesiaBucketUpper.size(); ++b) {
    if (dense_rank <= kAmnesiaBucketUpper[b]) return b;
  }
  return kAmnesiaBuckets - 1;
}

std::string_view amnesia_bucket_label(std::size_t bucket) {
  static constexpr std::string_view labels[kAmnesiaBuckets] = {"1-5", "6-20", "21-100", ">100"};
  return labels[bucket];
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Quartiles quartiles(std::vector<double> values) {
  Quartiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  const auto at = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.q1 = at(0.25);
  q.median = median(values);
  q.q3 = at(0.75);
  return q;
}

AmnesiaProfile amnesia_profile(const RunList& dense_run, const RunList& bm25_run,
                               const Judgments& judgments, HitMode mode,
                               const PairBuilder& build_pair, const PassageTexts* texts) {
  AmnesiaProfile profile;
  std::array<std::vector<double>, kAmnesiaBuckets> max_p, max_q;
  for (const auto& qid : bm25_run.query_ids()) {
    const auto bm25_rank = first_hit_rank(bm25_run, qid, judgments, mode, texts, 5);
    if (bm25_rank == 0) continue;
    ++profile.qualifying_queries;
    const std::string& pid = (*bm25_run.find(qid))[bm25_rank - 1].pid;

    const PairContext pair = build_pair(qid, pid);
    const TokenSet shared = pair.shared();
    if (shared.empty()) {
      ++profile.skipped_no_shared;
      continue;
    }
    AmnesiaRecord rec;
    rec.query_id = qid;
    rec.passage_id = pid;
    rec.bm25_rank = bm25_rank;
    rec.dense_rank = dense_run.rank_of(qid, pid);
    rec.bucket = amnesia_bucket(rec.dense_rank);
    rec.shared_tokens = shared.size();
    std::vector<double> ranks_p, ranks_q;
    for (TokenId t : shared.ids) {
      ranks_p.push_back(static_cast<double>(pair.passage_proj.rank(t)));
      ranks_q.push_back(static_cast<double>(pair.query_proj.rank(t)));
    }
    rec.max_rank_passage = *std::max_element(ranks_p.begin(), ranks_p.end());
    rec.max_rank_query = *std::max_element(ranks_q.begin(), ranks_q.end());
    rec.median_rank_passage = median(ranks_p);
    rec.median_rank_query = median(ranks_q);
    max_p[rec.bucket].push_back(rec.max_rank_passage);
    max_q[rec.bucket].push_back(rec.max_rank_query);
    profile.records.push_back(std::move(rec));
  }
  for (std::size_t b = 0; b < kAmnesiaBuckets; ++b) {
    profile.buckets[b].pairs = max_p[b].size();
    profile.buckets[b].max_rank_passage = quartiles(max_p[b]);
    profile.buckets[b].max_rank_query = quartiles(max_q[b]);
  }
  profile.empty = profile.records.empty();
  return profile;
}

void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "k,coverage_q,coverage_p,n_shared_tokens\n";
  for (std::size_t i = 0; i < report.k_grid.size(); ++i) {
    out << report.k_grid[i] << ',' << format_double(report.coverage_query[i]) << ','
        << format_double(report.coverage_passage[i]) << ',' << report.shared_tokens << '\n';
  }
}

void write_category_csv(const std::vector<CategoryReport>& reports, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "k,projection,in_both,q_only,p_only,neither,n_tokens\n";
  for (const auto& r : reports) {
    for (auto side : {ProjectionSide::query, ProjectionSide::passage}) {
      const auto& f = side == ProjectionSide::query ? r.query : r.passage;
      out << r.k << ',' << to_string(side) << ',' << format_double(f.in_both) << ','
          << format_double(f.query_only) << ',' << format_double(f.passage_only) << ','
          << format_double(f.neither) << ',' << f.tokens << '\n';
    }
  }
}

void write_expansion_csv(const std::vector<ExpansionStats>& stats, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "k,queries_with_expansion,expansion_token_fraction,n_top_tokens\n";
  for (const auto& s : stats) {
    out << s.k << ',' << format_double(s.queries_with_expansion) << ','
        << format_double(s.expansion_token_fraction) << ',' << s.top_tokens << '\n';
  }
}

void write_mrr_csv(const std::vector<MrrRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "tokens,projection,mrr,n_pairs\n";
  for (const auto& row : rows) {
    out << to_string(row.selector) << ',' << to_string(row.target) << ','
        << (row.result.empty ? std::string("NA") : format_double(row.result.value)) << ','
        << row.result.pairs << '\n';
  }
}

void write_amnesia_csv(const AmnesiaProfile& profile, const std::filesystem::path& path,
                       const std::filesystem::path& pairs_path) {
  auto out = open_csv(path);
  out << "dense_rank_bucket,n_pairs,max_rank_p_q1,max_rank_p_median,max_rank_p_q3,"
         "max_rank_q_q1,max_rank_q_median,max_rank_q_q3\n";
  for (std::size_t b = 0; b < kAmnesiaBuckets; ++b) {
    const auto& s = profile.buckets[b];
    out << amnesia_bucket_label(b) << ',' << s.pairs << ',' << format_double(s.max_rank_passage.q1)
        << ',' << format_double(s.max_rank_passage.median) << ','
        << format_double(s.max_rank_passage.q3) << ',' << format_double(s.max_rank_query.q1) << ','
        << format_double(s.max_rank_query.median) << ',' << format_double(s.max_rank_query.q3) << '\n';
  }
  if (pairs_path.empty()) return;
  auto detail = open_csv(pairs_path);
  detail << "qid,pid,bm25_rank,dense_rank,dense_rank_bucket,n_shared,max_rank_p,max_rank_q,"
            "median_rank_p,median_rank_q\n";
  for (const auto& r : profile.records) {
    detail << r.query_id << ',' << r.passage_id << ',' << r.bm25_rank << ',' << r.dense_rank << ','
           << amnesia_bucket_label(r.bucket) << ',' << r.shared_tokens << ','
           << format_double(r.max_rank_passage) << ',' << format_double(r.max_rank_query) << ','
           << format_double(r.median_rank_passage) << ',' << format_double(r.median_rank_query) << '\n';
  }
}

}  // namespace lexenrich
