#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lexenrich/error.hpp"
#include "lexenrich/retrieval.hpp"

namespace lexenrich {

namespace {

constexpr std::string_view kIndexFormat = "lexenrich.bm25.v1";

}  // namespace

std::string_view to_string(Bm25Tokenization mode) {
  return mode == Bm25Tokenization::word ? "word" : "wordpiece";
}

Bm25Tokenization parse_bm25_tokenization(std::string_view mode) {
  if (mode == "word") return Bm25Tokenization::word;
  if (mode == "wordpiece") return Bm25Tokenization::wordpiece;
  throw ValidationError("BM25 tokenization must be \"word\" or \"wordpiece\", got \"" +
                        std::string(mode) + "\"");
}

std::vector<std::string> Bm25Index::analyze(std::string_view text) const {
  std::vector<std::string> terms;
  if (mode_ == Bm25Tokenization::word) {
    for (auto& w : split_words(text)) {
      if (!is_punctuation_only(w)) terms.push_back(std::move(w));
    }
  } else {
    for (TokenId id : tokenize(*vocab_, text)) {
      if (vocab_->is_special(id)) continue;
      const auto& tok = vocab_->token(id);
      if (!is_punctuation_only(tok)) terms.push_back(tok);
    }
  }
  return terms;
}

Bm25Index Bm25Index::build(const std::vector<CorpusRecord>& corpus, Bm25Tokenization mode,
                           Bm25Params params, const Vocabulary* vocab) {
  if (mode == Bm25Tokenization::wordpiece && !vocab) {
    throw ValidationError("wordpiece BM25 requires a vocabulary");
  }
  if (!(params.k1 >= 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) {
    throw ValidationError("BM25 parameters require k1 >= 0 and 0 <= b <= 1");
  }
  Bm25Index index;
  index.mode_ = mode;
  index.params_ = params;
  index.vocab_ = vocab;
  index.doc_ids_.reserve(corpus.size());
  index.doc_len_.reserve(corpus.size());

  std::uint64_t total = 0;
  std::unordered_map<std::size_t, std::uint32_t> tf;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto terms = index.analyze(passage_text(corpus[d]));
    tf.clear();
    for (const auto& term : terms) {
      auto [it, inserted] = index.term_ids_.try_emplace(term, index.terms_.size());
      if (inserted) {
        index.terms_.push_back(term);
        index.postings_.emplace_back();
      }
      ++tf[it->second];
    }
    // Postings are appended in document order, so each list stays sorted by doc id.
    std::vector<std::pair<std::size_t, std::uint32_t>> entries(tf.begin(), tf.end());
    std::sort(entries.begin(), entries.end());
    for (const auto& [term, count] : entries) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(d), count});
    }
    index.doc_ids_.push_back(corpus[d].id);
    index.doc_len_.push_back(static_cast<std::uint32_t>(terms.size()));
    total += terms.size();
  }
  if (corpus.empty() || total == 0) {
    throw ValidationError("BM25 index needs at least one non-empty document");
  }
  index.avg_len_ = static_cast<double>(total) / static_cast<double>(corpus.size());
  return index;
}

const std::vector<Bm25Index::Posting>* Bm25Index::postings(std::string_view term) const {
  auto it = term_ids_.find(std::string(term));
  return it == term_ids_.end() ? nullptr : &postings_[it->second];
}

double Bm25Index::idf(std::string_view term) const {
  const auto* list = postings(term);
  const auto df = list ? static_cast<std::int64_t>(list->size()) : 0;
  return IdfTable::formula(static_cast<std::int64_t>(documents()), df);
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t doc) const {
  const double f = static_cast<double>(tf);
  const double norm = 1.0 - params_.b + params_.b * static_cast<double>(doc_len_[doc]) / avg_len_;
  return idf * (f * (params_.k1 + 1.0)) / (f + params_.k1 * norm);
}

std::vector<ScoredDoc> Bm25Index::search(std::string_view query, std::size_t k) const {
  if (k == 0) throw ValidationError("search depth k must be at least 1");
  std::vector<double> scores(documents(), 0.0);
  std::vector<std::uint32_t> touched;
  std::vector<bool> seen(documents(), false);
  for (const auto& term : analyze(query)) {
    const auto* list = postings(term);
    if (!list) continue;
    const double w = IdfTable::formula(static_cast<std::int64_t>(documents()),
                                       static_cast<std::int64_t>(list->size()));
    for (const auto& p : *list) {
      scores[p.doc] += term_weight(w, p.tf, p.doc);
      if (!seen[p.doc]) {
        seen[p.doc] = true;
        touched.push_back(p.doc);
      }
    }
  }
  std::vector<ScoredDoc> hits;
  hits.reserve(touched.size());
  for (auto d : touched) hits.push_back({doc_ids_[d], scores[d]});
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
  hits.resize(keep);
  return hits;
}

double Bm25Index::score(std::string_view query, std::size_t doc) const {
  double total = 0.0;
  for (const auto& term : analyze(query)) {
    const auto* list = postings(term);
    if (!list) continue;
    auto it = std::lower_bound(list->begin(), list->end(), doc,
                               [](const Posting& p, std::size_t d) { return p.doc < d; });
    if (it == list->end() || it->doc != doc) continue;
    const double w = IdfTable::formula(static_cast<std::int64_t>(documents()),
                                       static_cast<std::int64_t>(list->size()));
    total += term_weight(w, it->tf, it->doc);
  }
  return total;
}

void Bm25Index::save(const std::filesystem::path& path) const {
  nlohmann::json postings = nlohmann::json::array();
  for (const auto& list : postings_) {
    std::vector<std::uint32_t> flat;
    flat.reserve(list.size() * 2);
    for (const auto& p : list) {
      flat.push_back(p.doc);
      flat.push_back(p.tf);
    }
    postings.push_back(std::move(flat));
  }
  const nlohmann::json j = {{"format", kIndexFormat},
                            {"tokenization", to_string(mode_)},
                            {"k1", params_.k1},
                            {"b", params_.b},
                            {"doc_ids", doc_ids_},
                            {"doc_len", doc_len_},
                            {"terms", terms_},
                            {"postings", std::move(postings)}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Bm25Index Bm25Index::load(const std::filesystem::path& path, const Vocabulary* vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Bm25Index index;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != kIndexFormat) {
      throw ValidationError(path.string() + ": not a BM25 index");
    }
    index.mode_ = parse_bm25_tokenization(j.at("tokenization").get<std::string>());
    index.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
    index.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
    index.doc_len_ = j.at("doc_len").get<std::vector<std::uint32_t>>();
    index.terms_ = j.at("terms").get<std::vector<std::string>>();
    const auto& postings = j.at("postings");
    if (postings.size() != index.terms_.size() || index.doc_len_.size() != index.doc_ids_.size()) {
      throw ValidationError(path.string() + ": inconsistent BM25 index");
    }
    std::uint64_t total = 0;
    for (auto len : index.doc_len_) total += len;
    if (index.doc_ids_.empty() || total == 0) throw ValidationError(path.string() + ": empty BM25 index");
    index.avg_len_ = static_cast<double>(total) / static_cast<double>(index.doc_ids_.size());
    for (std::size_t t = 0; t < index.terms_.size(); ++t) {
      index.term_ids_.emplace(index.terms_[t], t);
      const auto flat = postings[t].get<std::vector<std::uint32_t>>();
      std::vector<Posting> list;
      for (std::size_t i = 0; i + 1 < flat.size(); i += 2) list.push_back({flat[i], flat[i + 1]});
      index.postings_.push_back(std::move(list));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed BM25 index: " + e.what());
  }
  if (index.mode_ == Bm25Tokenization::wordpiece && !vocab) {
    throw ValidationError("wordpiece BM25 index requires a vocabulary");
  }
  index.vocab_ = vocab;
  return index;
}

}  // namespace lexenrich
