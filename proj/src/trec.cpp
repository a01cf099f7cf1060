#include "lexenrich/trec.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "lexenrich/error.hpp"

namespace lexenrich {

namespace fs = std::filesystem;

void RunList::set(const std::string& qid, std::vector<ScoredDoc> docs) {
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!seen.insert(docs[i].pid).second) {
      throw ValidationError("run for query \"" + qid + "\" repeats passage \"" + docs[i].pid + "\"");
    }
    if (i > 0 && docs[i].score > docs[i - 1].score) {
      throw ValidationError("run for query \"" + qid + "\" is not sorted by score");
    }
    if (i > 0 && docs[i].score == docs[i - 1].score && docs[i].pid < docs[i - 1].pid) {
      throw ValidationError("run for query \"" + qid + "\" breaks a score tie out of passage id order");
    }
  }
  auto [it, inserted] = lists_.insert_or_assign(qid, std::move(docs));
  if (inserted) order_.push_back(qid);
}

const std::vector<ScoredDoc>* RunList::find(std::string_view qid) const {
  auto it = lists_.find(std::string(qid));
  return it == lists_.end() ? nullptr : &it->second;
}

std::size_t RunList::rank_of(std::string_view qid, std::string_view pid) const {
  const auto* docs = find(qid);
  if (!docs) return 0;
  for (std::size_t i = 0; i < docs->size(); ++i) {
    if ((*docs)[i].pid == pid) return i + 1;
  }
  return 0;
}

bool operator==(const RunList& a, const RunList& b) {
  if (a.order_ != b.order_) return false;
  for (const auto& qid : a.order_) {
    const auto& x = a.lists_.at(qid);
    const auto& y = b.lists_.at(qid);
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].pid != y[i].pid || x[i].score != y[i].score) return false;
    }
  }
  return true;
}

bool Judgments::has_graded() const {
  for (const auto& [qid, rels] : relevance) {
    for (const auto& [pid, grade] : rels) {
      if (grade > 0) return true;
    }
  }
  return false;
}

bool Judgments::judged(std::string_view qid) const {
  const std::string key(qid);
  return relevance.count(key) > 0 || answers.count(key) > 0;
}

Judgments Judgments::from_queries(const std::vector<QueryRecord>& queries) {
  Judgments j;
  for (const auto& q : queries) {
    if (!q.gold_pids.empty()) {
      auto& rels = j.relevance[q.id];
      for (const auto& pid : q.gold_pids) rels[pid] = 1;
    }
    if (!q.answers.empty()) j.answers[q.id] = q.answers;
  }
  return j;
}

std::string format_double(double value) {
  char buffer[64];
  auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

void write_run(const RunList& run, const fs::path& path, std::string_view tag) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& qid : run.query_ids()) {
    const auto& docs = *run.find(qid);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      out << qid << " Q0 " << docs[i].pid << ' ' << (i + 1) << ' ' << format_double(docs[i].score)
          << ' ' << tag << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

RunList read_run(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  struct Entry {
    std::size_t rank;
    ScoredDoc doc;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Entry>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string qid, q0, pid, tag;
    std::size_t rank = 0;
    double score = 0.0;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> pid >> rank >> score >> tag)) {
      throw ValidationError(path.string() + ": malformed run line " + std::to_string(line_no));
    }
    auto [it, inserted] = entries.try_emplace(qid);
    if (inserted) order.push_back(qid);
    it->second.push_back({rank, {pid, score}});
  }
  RunList run;
  for (const auto& qid : order) {
    auto& list = entries[qid];
    std::stable_sort(list.begin(), list.end(),
                     [](const Entry& a, const Entry& b) { return a.rank < b.rank; });
    std::vector<ScoredDoc> docs;
    docs.reserve(list.size());
    for (auto& e : list) docs.push_back(std::move(e.doc));
    // external runs may order tied scores arbitrarily
    for (auto lo = docs.begin(); lo != docs.end();) {
      auto hi = std::find_if(lo, docs.end(), [&](const ScoredDoc& d) { return d.score != lo->score; });
      std::sort(lo, hi, [](const ScoredDoc& a, const ScoredDoc& b) { return a.pid < b.pid; });
      lo = hi;
    }
    run.set(qid, std::move(docs));
  }
  return run;
}

void write_qrels(const Judgments& judgments, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [qid, rels] : judgments.relevance) {
    for (const auto& [pid, grade] : rels) out << qid << " 0 " << pid << ' ' << grade << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Judgments read_qrels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Judgments j;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string qid, iter, pid;
    int rel = 0;
    if (!(fields >> qid)) continue;
    if (!(fields >> iter >> pid >> rel)) {
      throw ValidationError(path.string() + ": malformed qrels line " + std::to_string(line_no));
    }
    j.relevance[qid][pid] = rel;
  }
  return j;
}

}  // namespace lexenrich
