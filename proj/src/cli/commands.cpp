#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "lexenrich/analysis.hpp"
#include "lexenrich/cli.hpp"
#include "lexenrich/error.hpp"
#include "lexenrich/parallel.hpp"

namespace lexenrich::cli {

namespace {

using nlohmann::json;
using Inputs = std::vector<std::pair<std::string, fs::path>>;

const fs::path& need(const fs::path& path, std::string_view flag) {
  if (path.empty()) throw ValidationError("missing required setting " + std::string(flag));
  return path;
}

fs::path prepare_out(const RunConfig& c) {
  need(c.out, "--out");
  fs::create_directories(c.out);
  return c.out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_json(const json& j, const fs::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string list_offenders(std::string_view what, const std::vector<std::string>& ids) {
  std::string msg = std::to_string(ids.size()) + " " + std::string(what) + ":";
  for (std::size_t i = 0; i < ids.size() && i < 10; ++i) msg += " \"" + ids[i] + "\"";
  if (ids.size() > 10) msg += " ...";
  return msg;
}

EmbeddingStore load_store(const fs::path& path) {
  EmbeddingStore store = load_embeddings(path);
  store.validate();
  return store;
}

std::vector<QueryRecord> load_nonempty_queries(const fs::path& path) {
  auto queries = load_queries(path);
  if (queries.empty()) throw ValidationError(path.string() + ": no queries");
  return queries;
}

PassageTexts corpus_texts(const std::vector<CorpusRecord>& corpus) {
  PassageTexts texts;
  texts.reserve(corpus.size());
  for (const auto& r : corpus) texts.emplace(r.id, passage_text(r));
  return texts;
}

PassageTexts query_texts(const std::vector<QueryRecord>& queries) {
  PassageTexts texts;
  for (const auto& q : queries) texts.emplace(q.id, q.text);
  return texts;
}

/// qrels when given (answers still come from the query file), otherwise the
/// gold ids and answers inside the query file.
Judgments load_judgments(const RunConfig& c, const std::vector<QueryRecord>* queries) {
  if (c.qrels.empty()) {
    if (!queries) throw ValidationError("judgments need --qrels or --queries");
    return Judgments::from_queries(*queries);
  }
  Judgments j = read_qrels(c.qrels);
  if (queries) {
    for (const auto& q : *queries) {
      if (!q.answers.empty()) j.answers[q.id] = q.answers;
    }
  }
  return j;
}

HitMode resolve_hit_mode(const RunConfig& c, const Judgments& j) {
  if (c.hit_mode == "gold") return HitMode::gold_ids;
  if (c.hit_mode == "answers") return HitMode::answers;
  return default_hit_mode(j);
}

IdfTable corpus_idf(const Vocabulary& vocab, const std::vector<CorpusRecord>& corpus, int threads) {
  std::vector<std::vector<TokenId>> docs(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) { docs[i] = tokenize(vocab, passage_text(corpus[i])); });
  return compute_idf(docs, vocab.size());
}

struct ModelInputs {
  MlmHeadParams head;
  Vocabulary vocab;
  IdfTable idf;
  EnrichmentTable table;
  WhiteningParams whitening;
};

ModelInputs load_model_inputs(const RunConfig& c, const std::vector<CorpusRecord>* corpus) {
  ModelInputs m{load_head(need(c.head, "--head")), Vocabulary::from_file(need(c.vocab, "--vocab")), {}, {}, {}};
  if (!c.switches.use_embedding_matrix_substitute || !c.enrichment.empty()) {
    enrichment_from_bundle(read_bundle(need(c.enrichment, "--enrichment"), {.require_finite = true}),
                           m.table, m.whitening);
  }
  if (c.switches.use_idf) {
    if (!c.idf.empty()) {
      m.idf = IdfTable::from_bundle(read_bundle(c.idf, {.require_finite = true}));
    } else {
      if (!corpus) throw ValidationError("IDF weights need --corpus or --idf");
      m.idf = corpus_idf(m.vocab, *corpus, c.threads);
    }
  }
  return m;
}

EnrichmentModel make_model(const ModelInputs& m, double lambda, EnrichmentSwitches switches) {
  return EnrichmentModel(m.head, m.table, m.whitening, m.idf, m.vocab, lambda, switches);
}

/// Lexical vectors of every row, computed once and reused across lambdas.
Eigen::MatrixXd lexical_rows(const EnrichmentModel& model, const Vocabulary& vocab,
                             const EmbeddingStore& store, const PassageTexts& texts, int threads) {
  std::vector<std::string> missing;
  for (const auto& id : store.ids) {
    if (!texts.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) throw ValidationError(list_offenders("ids without text", missing));
  Eigen::MatrixXd lex(model.dim(), static_cast<Eigen::Index>(store.size()));
  parallel_for(store.size(), threads, [&](std::size_t i) {
    try {
      lex.col(static_cast<Eigen::Index>(i)) = model.lexical_vector(tokenize(vocab, texts.at(store.ids[i])));
    } catch (const ValidationError& e) {
      throw ValidationError("enriching \"" + store.ids[i] + "\": " + e.what());
    }
  });
  return lex;
}

EmbeddingStore mix(const EnrichmentModel& model, const EmbeddingStore& store, const Eigen::MatrixXd& lex,
                   int threads) {
  EmbeddingStore out = store;
  if (model.lambda() == 0.0) return out;
  parallel_for(store.size(), threads, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd e = store.vectors.row(row).transpose().cast<double>();
    out.vectors.row(row) = model.enrich(e, lex.col(row)).transpose().cast<float>();
  });
  return out;
}

RunList restrict_run(const RunList& run, const std::vector<std::string>& ids) {
  RunList out;
  for (const auto& id : ids) {
    if (const auto* docs = run.find(id)) out.set(id, *docs);
  }
  return out;
}

std::size_t max_depth(const RunConfig& c) { return std::max(c.depth, c.k_grid.back()); }

/// Highest grade first, ties by ascending passage id.
std::optional<std::string> gold_passage(const Judgments& j, const std::string& qid) {
  auto it = j.relevance.find(qid);
  if (it == j.relevance.end()) return std::nullopt;
  std::optional<std::string> best;
  int best_grade = 0;
  for (const auto& [pid, grade] : it->second) {
    if (grade > best_grade) {
      best = pid;
      best_grade = grade;
    }
  }
  return best;
}

struct MetricRow {
  std::string metric;
  std::size_t k;
  double value;
  std::size_t queries;
};

std::vector<MetricRow> evaluate(const RunList& run, const Judgments& j, const std::vector<std::size_t>& k_grid,
                                HitMode mode, const PassageTexts* texts) {
  std::vector<MetricRow> rows;
  const auto acc = topk_accuracy(run, j, k_grid, mode, texts);
  for (const auto& v : acc.values) rows.push_back({"accuracy", v.k, v.value, acc.queries});
  const auto mrr = mrr_at(run, j, 10, mode, texts);
  rows.push_back({"mrr", 10, mrr.value, mrr.queries});
  if (j.has_graded()) {
    const auto ndcg = ndcg_at_10(run, j);
    rows.push_back({"ndcg", 10, ndcg.value, ndcg.queries});
  }
  return rows;
}

void check_judged(const RunList& run, const Judgments& j, HitMode mode) {
  std::vector<std::string> missing;
  for (const auto& qid : run.query_ids()) {
    const bool ok = mode == HitMode::gold_ids ? j.relevance.count(qid) > 0 : j.answers.count(qid) > 0;
    if (!ok) missing.push_back(qid);
  }
  if (!missing.empty()) throw ValidationError(list_offenders("queries without judgments", missing));
}

const PassageTexts* texts_for(HitMode mode, const RunConfig& c, PassageTexts& storage) {
  if (mode != HitMode::answers) return nullptr;
  storage = corpus_texts(load_corpus(need(c.corpus, "--corpus (answer matching)")));
  return &storage;
}

class Progress {
 public:
  Progress(std::ostream& err, std::string label, std::size_t total)
      : err_(&err), label_(std::move(label)), total_(total) {}
  void operator()(std::size_t done) {
    const std::size_t tenth = total_ == 0 ? 10 : done * 10 / total_;
    std::lock_guard lock(mu_);
    if (tenth > last_) {
      last_ = tenth;
      *err_ << label_ << ": " << done << "/" << total_ << '\n';
    }
  }

 private:
  std::ostream* err_;
  std::string label_;
  std::size_t total_;
  std::size_t last_ = 0;
  std::mutex mu_;
};

}  // namespace

void cmd_project(const RunConfig& c) {
  const fs::path store_path = c.embeddings.empty() ? c.query_embeddings : c.embeddings;
  need(store_path, "--embeddings");
  const auto head = load_head(need(c.head, "--head"));
  const auto vocab = Vocabulary::from_file(need(c.vocab, "--vocab"));
  if (vocab.size() != static_cast<std::size_t>(head.vocab_size())) {
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " tokens, head has " +
                          std::to_string(head.vocab_size()));
  }
  if (c.top_k > vocab.size()) {
    throw ValidationError("--top-k " + std::to_string(c.top_k) + " exceeds the vocabulary size " +
                          std::to_string(vocab.size()));
  }
  const auto store = load_store(store_path);
  const auto out_dir = prepare_out(c);

  std::vector<std::vector<std::pair<TokenId, double>>> tops(store.size());
  parallel_for(store.size(), c.threads, [&](std::size_t i) {
    const auto proj =
        mlm_forward(head, store.vectors.row(static_cast<Eigen::Index>(i)).transpose().cast<double>(), store.ids[i]);
    tops[i] = top_k(proj, static_cast<Eigen::Index>(c.top_k));
  });
  const fs::path csv = out_dir / "projection.csv";
  {
    auto out = open_out(csv);
    out << "id,rank,token_id,token,prob\n";
    for (std::size_t i = 0; i < store.size(); ++i) {
      for (std::size_t r = 0; r < tops[i].size(); ++r) {
        const auto [tok, p] = tops[i][r];
        out << csv_field(store.ids[i]) << ',' << r + 1 << ',' << tok << ',' << csv_field(vocab.token(tok)) << ','
            << format_double(p) << '\n';
      }
    }
  }
  write_run_manifest(out_dir, "project", c, {{"head", c.head}, {"vocab", c.vocab}, {"embeddings", store_path}}, {csv});
}

void cmd_analyze(const RunConfig& c) {
  const auto head = load_head(need(c.head, "--head"));
  const auto vocab = Vocabulary::from_file(need(c.vocab, "--vocab"));
  if (vocab.size() != static_cast<std::size_t>(head.vocab_size())) {
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " tokens, head has " +
                          std::to_string(head.vocab_size()));
  }
  const StopList stoplist = c.stoplist.empty() ? StopList() : StopList::from_file(c.stoplist);
  const ContentFilter filter(vocab, stoplist);
  const auto queries = load_nonempty_queries(need(c.queries, "--queries"));
  const auto corpus = load_corpus(need(c.corpus, "--corpus"));
  const auto qstore = load_store(need(c.query_embeddings, "--query-embeddings"));
  const auto pstore = load_store(need(c.passage_embeddings, "--passage-embeddings"));
  const Judgments judgments = load_judgments(c, &queries);
  if (c.k_grid.back() > vocab.size()) {
    throw ValidationError("k-grid value " + std::to_string(c.k_grid.back()) + " exceeds the vocabulary size");
  }

  const IdIndex qrows(qstore.ids), prows(pstore.ids);
  const PassageTexts ptexts = corpus_texts(corpus);
  std::vector<std::string> offenders;
  struct PairRef {
    std::size_t query;
    std::string pid;
  };
  std::vector<PairRef> refs;
  std::size_t without_gold = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (!qrows.find(q.id)) offenders.push_back("query " + q.id + " has no embedding");
    const auto pid = gold_passage(judgments, q.id);
    if (!pid) {
      ++without_gold;
      continue;
    }
    if (!prows.find(*pid)) offenders.push_back("passage " + *pid + " has no embedding");
    if (!ptexts.count(*pid)) offenders.push_back("passage " + *pid + " is not in the corpus");
    refs.push_back({i, *pid});
  }
  if (!offenders.empty()) throw ValidationError("inconsistent ids across inputs; " + list_offenders("problems", offenders));
  if (refs.empty()) throw ValidationError("no query has a gold passage id; analysis needs query/passage pairs");

  const std::size_t depth = c.k_grid.back();
  const auto build = [&](const QueryRecord& q, const std::string& pid) {
    const auto qr = static_cast<Eigen::Index>(*qrows.find(q.id));
    const auto pr = static_cast<Eigen::Index>(*prows.find(pid));
    const auto qp = mlm_forward(head, qstore.vectors.row(qr).transpose().cast<double>(), q.id);
    const auto pp = mlm_forward(head, pstore.vectors.row(pr).transpose().cast<double>(), pid);
    return make_pair_context(q.id, pid, content_token_set(filter, q.text, TokenOrigin::query),
                             content_token_set(filter, ptexts.at(pid), TokenOrigin::passage), qp, pp, depth);
  };
  std::vector<PairContext> pairs(refs.size());
  parallel_for(refs.size(), c.threads, [&](std::size_t i) { pairs[i] = build(queries[refs[i].query], refs[i].pid); });

  const auto out_dir = prepare_out(c);
  std::vector<fs::path> outputs;
  json summary;
  summary["queries"] = queries.size();
  summary["pairs"] = pairs.size();
  summary["queries_without_gold"] = without_gold;
  summary["notices"] = json::array();

  const auto coverage = shared_token_coverage(pairs, c.k_grid, c.per_pair_mean);
  outputs.push_back(out_dir / "coverage.csv");
  write_coverage_csv(coverage, outputs.back());
  summary["coverage_pooling"] = c.per_pair_mean ? "per_pair_mean" : "pooled";
  if (coverage.empty) summary["notices"].push_back("no pair shares a content token; coverage is 0");

  std::vector<MrrRow> mrr_rows;
  for (auto sel : {TokenSelector::passage, TokenSelector::query, TokenSelector::shared, TokenSelector::query_only}) {
    for (auto side : {ProjectionSide::passage, ProjectionSide::query}) {
      mrr_rows.push_back({sel, side, token_level_mrr(pairs, sel, side)});
    }
  }
  outputs.push_back(out_dir / "mrr.csv");
  write_mrr_csv(mrr_rows, outputs.back());

  outputs.push_back(out_dir / "expansion.csv");
  write_expansion_csv(query_expansion_stats(pairs, filter, c.k_grid), outputs.back());

  std::vector<CategoryReport> categories;
  for (auto k : c.k_grid) categories.push_back(category_breakdown(pairs, filter, k));
  outputs.push_back(out_dir / "categories.csv");
  write_category_csv(categories, outputs.back());

  if (!c.dense_run.empty() && !c.bm25_run.empty()) {
    const RunList dense = read_run(c.dense_run);
    const RunList bm25 = read_run(c.bm25_run);
    const HitMode mode = resolve_hit_mode(c, judgments);
    check_judged(bm25, judgments, mode);
    std::unordered_map<std::string, std::size_t> qindex;
    for (std::size_t i = 0; i < queries.size(); ++i) qindex.emplace(queries[i].id, i);
    std::vector<std::string> bad;
    for (const auto& qid : bm25.query_ids()) {
      if (!qindex.count(qid)) bad.push_back(qid);
    }
    if (!bad.empty()) throw ValidationError("BM25 run: " + list_offenders("unknown query ids", bad));
    const PairBuilder builder = [&](const std::string& qid, const std::string& pid) {
      if (!prows.find(pid) || !ptexts.count(pid)) {
        throw ValidationError("passage " + pid + " from the BM25 run has no embedding or text");
      }
      return build(queries[qindex.at(qid)], pid);
    };
    const auto profile = amnesia_profile(dense, bm25, judgments, mode, builder, &ptexts);
    outputs.push_back(out_dir / "amnesia.csv");
    outputs.push_back(out_dir / "amnesia_pairs.csv");
    write_amnesia_csv(profile, outputs[outputs.size() - 2], outputs.back());
    summary["amnesia"] = {{"hit_mode", to_string(mode)},
                          {"qualifying_queries", profile.qualifying_queries},
                          {"skipped_no_shared", profile.skipped_no_shared},
                          {"pairs", profile.records.size()}};
  } else {
    const std::string notice = "amnesia.csv skipped: needs both --dense-run and --bm25-run";
    *c.diagnostics << "notice: " << notice << '\n';
    summary["notices"].push_back(notice);
  }
  outputs.push_back(out_dir / "summary.json");
  write_json(summary, outputs.back());
  write_run_manifest(out_dir, "analyze", c,
                     {{"head", c.head},
                      {"vocab", c.vocab},
                      {"stoplist", c.stoplist},
                      {"queries", c.queries},
                      {"corpus", c.corpus},
                      {"qrels", c.qrels},
                      {"query_embeddings", c.query_embeddings},
                      {"passage_embeddings", c.passage_embeddings},
                      {"dense_run", c.dense_run},
                      {"bm25_run", c.bm25_run}},
                     outputs);
}

void cmd_enrich_fit(const RunConfig& c) {
  const auto head = load_head(need(c.head, "--head"));
  std::optional<Vocabulary> vocab;
  if (!c.vocab.empty()) vocab = Vocabulary::from_file(c.vocab);
  const auto out_dir = prepare_out(c);
  OptimizerConfig cfg = c.optimizer;
  cfg.seed = c.seed;
  Progress progress(*c.diagnostics, "enrich-fit tokens", static_cast<std::size_t>(head.vocab_size()));
  const auto table = fit_single_token_enrichments(head, cfg, c.threads, std::ref(progress));
  const auto whitening = fit_whitening(table);

  const fs::path bundle = out_dir / "enrichment";
  write_bundle(enrichment_to_bundle(table, whitening), bundle);
  const fs::path report = out_dir / "unconverged.txt";
  {
    auto out = open_out(report);
    for (TokenId t : table.unconverged()) {
      out << t << '\t' << (vocab ? vocab->token(t) : std::string()) << '\t'
          << format_double(table.losses[static_cast<std::size_t>(t)]) << '\n';
    }
  }
  const auto unconverged = table.unconverged().size();
  if (unconverged > 0) *c.diagnostics << "warning: " << unconverged << " token(s) did not converge; see " << report << '\n';
  if (whitening.clamped_eigenvalues > 0) {
    *c.diagnostics << "warning: whitening clamped " << whitening.clamped_eigenvalues
                   << " near-zero covariance eigenvalue(s) to " << kWhiteningEigenFloor << '\n';
  }
  const fs::path summary = out_dir / "summary.json";
  write_json({{"tokens", table.vocab_size()},
              {"converged", table.vocab_size() - unconverged},
              {"unconverged", unconverged},
              {"clamped_eigenvalues", whitening.clamped_eigenvalues}},
             summary);
  write_run_manifest(out_dir, "enrich-fit", c, {{"head", c.head}, {"vocab", c.vocab}},
                     {manifest_path(bundle), payload_path(bundle), report, summary});
}

void cmd_enrich_apply(const RunConfig& c) {
  const auto corpus = load_corpus(need(c.corpus, "--corpus"));
  const auto queries = load_nonempty_queries(need(c.queries, "--queries"));
  const auto qstore = load_store(need(c.query_embeddings, "--query-embeddings"));
  const auto pstore = load_store(need(c.passage_embeddings, "--passage-embeddings"));
  const ModelInputs inputs = load_model_inputs(c, &corpus);
  const auto model = make_model(inputs, c.lambda, c.switches);
  const auto out_dir = prepare_out(c);

  const auto qout = enrich_store(model, inputs.vocab, qstore, query_texts(queries), c.threads);
  const auto pout = enrich_store(model, inputs.vocab, pstore, corpus_texts(corpus), c.threads);
  std::vector<fs::path> outputs;
  for (const auto& [name, store] : {std::pair{"queries", &qout}, std::pair{"passages", &pout}}) {
    const fs::path base = out_dir / name;
    write_embeddings(*store, base);
    for (const auto& f : input_files(base)) outputs.push_back(f);
  }
  if (c.switches.use_idf && c.idf.empty()) {
    const fs::path base = out_dir / "idf";
    write_bundle(inputs.idf.to_bundle(), base);
    outputs.push_back(manifest_path(base));
    outputs.push_back(payload_path(base));
  }
  write_run_manifest(out_dir, "enrich-apply", c,
                     {{"head", c.head},
                      {"vocab", c.vocab},
                      {"enrichment", c.enrichment},
                      {"idf", c.idf},
                      {"corpus", c.corpus},
                      {"queries", c.queries},
                      {"query_embeddings", c.query_embeddings},
                      {"passage_embeddings", c.passage_embeddings}},
                     outputs);
}

void cmd_index_bm25(const RunConfig& c) {
  const auto corpus = load_corpus(need(c.corpus, "--corpus"));
  std::optional<Vocabulary> vocab;
  if (c.tokenization == Bm25Tokenization::wordpiece) vocab = Vocabulary::from_file(need(c.vocab, "--vocab"));
  const auto index = Bm25Index::build(corpus, c.tokenization, c.bm25, vocab ? &*vocab : nullptr);
  const auto out_dir = prepare_out(c);
  const fs::path path = out_dir / "bm25.json";
  index.save(path);
  write_run_manifest(out_dir, "index-bm25", c, {{"corpus", c.corpus}, {"vocab", c.vocab}}, {path});
}

void cmd_search(const RunConfig& c) {
  RunList run;
  std::string tag;
  Inputs inputs;
  if (c.mode == "bm25") {
    const auto queries = load_nonempty_queries(need(c.queries, "--queries"));
    std::optional<Vocabulary> vocab;
    if (c.tokenization == Bm25Tokenization::wordpiece || !c.vocab.empty()) {
      vocab = Vocabulary::from_file(need(c.vocab, "--vocab"));
    }
    const Vocabulary* vp = vocab ? &*vocab : nullptr;
    const auto index = c.bm25_index.empty()
                           ? Bm25Index::build(load_corpus(need(c.corpus, "--corpus or --bm25-index")),
                                              c.tokenization, c.bm25, vp)
                           : Bm25Index::load(c.bm25_index, vp);
    run = bm25_search(index, queries, c.depth, c.threads);
    tag = "bm25";
    inputs = {{"queries", c.queries}, {"bm25_index", c.bm25_index}, {"corpus", c.corpus}, {"vocab", c.vocab}};
  } else {
    auto qstore = load_store(need(c.query_embeddings, "--query-embeddings"));
    auto pstore = load_store(need(c.passage_embeddings, "--passage-embeddings"));
    if (qstore.dim() != pstore.dim()) throw ValidationError("query and passage embeddings differ in dimension");
    if (qstore.similarity != pstore.similarity) {
      throw ValidationError("query and passage embeddings carry different similarity tags");
    }
    tag = "dense";
    inputs = {{"query_embeddings", c.query_embeddings}, {"passage_embeddings", c.passage_embeddings}};
    if (!c.enrichment.empty() || c.switches.use_embedding_matrix_substitute) {
      const auto corpus = load_corpus(need(c.corpus, "--corpus"));
      const auto queries = load_nonempty_queries(need(c.queries, "--queries"));
      const ModelInputs mi = load_model_inputs(c, &corpus);
      const auto model = make_model(mi, c.lambda, c.switches);
      qstore = enrich_store(model, mi.vocab, qstore, query_texts(queries), c.threads);
      pstore = enrich_store(model, mi.vocab, pstore, corpus_texts(corpus), c.threads);
      tag = "dense+le";
      inputs.insert(inputs.end(), {{"head", c.head},
                                   {"vocab", c.vocab},
                                   {"enrichment", c.enrichment},
                                   {"idf", c.idf},
                                   {"corpus", c.corpus},
                                   {"queries", c.queries}});
    }
    run = dense_search(DenseIndex(pstore), qstore, c.depth, c.threads);
  }
  const auto out_dir = prepare_out(c);
  const fs::path path = out_dir / "run.trec";
  write_run(run, path, tag);
  write_run_manifest(out_dir, "search", c, inputs, {path});
}

void cmd_eval(const RunConfig& c) {
  const RunList run = read_run(need(c.run, "--run"));
  std::optional<std::vector<QueryRecord>> queries;
  if (!c.queries.empty()) queries = load_queries(c.queries);
  const Judgments judgments = load_judgments(c, queries ? &*queries : nullptr);
  const HitMode mode = resolve_hit_mode(c, judgments);
  PassageTexts storage;
  const PassageTexts* texts = texts_for(mode, c, storage);
  const auto rows = evaluate(run, judgments, c.k_grid, mode, texts);

  const auto out_dir = prepare_out(c);
  const fs::path path = out_dir / "metrics.csv";
  {
    auto out = open_out(path);
    out << "metric,k,value,n_queries,hit_mode\n";
    for (const auto& r : rows) {
      out << r.metric << ',' << r.k << ',' << format_double(r.value) << ',' << r.queries << ',' << to_string(mode)
          << '\n';
    }
  }
  write_run_manifest(out_dir, "eval", c, {{"run", c.run}, {"qrels", c.qrels}, {"queries", c.queries}, {"corpus", c.corpus}},
                     {path});
}

SweepResult cmd_sweep(const RunConfig& c) {
  if (c.lambda_grid.empty()) throw ValidationError("--lambda-grid must not be empty");
  const auto corpus = load_corpus(need(c.corpus, "--corpus"));
  const auto queries = load_nonempty_queries(need(c.queries, "--queries"));
  const auto qstore = load_store(need(c.query_embeddings, "--query-embeddings"));
  const auto pstore = load_store(need(c.passage_embeddings, "--passage-embeddings"));
  if (qstore.dim() != pstore.dim()) throw ValidationError("query and passage embeddings differ in dimension");
  const Judgments judgments = load_judgments(c, &queries);
  const HitMode mode = resolve_hit_mode(c, judgments);
  const PassageTexts ptexts = corpus_texts(corpus);
  const PassageTexts qtexts = query_texts(queries);
  const PassageTexts* texts = mode == HitMode::answers ? &ptexts : nullptr;
  const ModelInputs mi = load_model_inputs(c, &corpus);
  const std::size_t depth = max_depth(c);

  // Seeded dev/test split over the query store order.
  std::vector<std::string> order = qstore.ids;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(c.seed));
  const auto n_dev = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(c.dev_fraction * static_cast<double>(order.size()))));
  SweepResult result;
  result.dev_queries.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_dev, order.size())));
  result.test_queries.assign(order.begin() + static_cast<std::ptrdiff_t>(result.dev_queries.size()), order.end());
  std::sort(result.dev_queries.begin(), result.dev_queries.end());
  std::sort(result.test_queries.begin(), result.test_queries.end());

  std::vector<std::size_t> grid = c.k_grid;
  if (!std::count(grid.begin(), grid.end(), c.select_k)) {
    grid.push_back(c.select_k);
    std::sort(grid.begin(), grid.end());
  }
  const auto run_at = [&](const EnrichmentModel& model, const Eigen::MatrixXd& qlex, const Eigen::MatrixXd& plex) {
    const auto q = mix(model, qstore, qlex, c.threads);
    const auto p = mix(model, pstore, plex, c.threads);
    return dense_search(DenseIndex(p), q, depth, c.threads);
  };
  const auto accuracy_at = [&](const std::vector<MetricRow>& rows, std::size_t k) {
    for (const auto& r : rows) {
      if (r.metric == "accuracy" && r.k == k) return r.value;
    }
    return 0.0;
  };

  const auto base_model = make_model(mi, 0.0, c.switches);
  const auto qlex = lexical_rows(base_model, mi.vocab, qstore, qtexts, c.threads);
  const auto plex = lexical_rows(base_model, mi.vocab, pstore, ptexts, c.threads);

  struct Row {
    double lambda;
    std::vector<MetricRow> dev, test;
  };
  std::vector<Row> rows;
  bool first = true;
  for (double lambda : c.lambda_grid) {
    const RunList run = run_at(base_model.with_lambda(lambda), qlex, plex);
    Row row{lambda, evaluate(restrict_run(run, result.dev_queries), judgments, grid, mode, texts), {}};
    if (!result.test_queries.empty()) {
      row.test = evaluate(restrict_run(run, result.test_queries), judgments, grid, mode, texts);
    }
    const double dev = accuracy_at(row.dev, c.select_k);
    if (first || dev > result.dev_value) {
      result.selected_lambda = lambda;
      result.dev_value = dev;
      first = false;
    }
    rows.push_back(std::move(row));
  }

  const auto out_dir = prepare_out(c);
  std::vector<fs::path> outputs;
  outputs.push_back(out_dir / "sweep.csv");
  {
    auto out = open_out(outputs.back());
    out << "lambda,n_dev,n_test";
    for (const char* split : {"dev", "test"}) {
      for (const auto& r : rows.front().dev) out << ',' << split << '_' << r.metric << '@' << r.k;
    }
    out << '\n';
    for (const auto& row : rows) {
      out << format_double(row.lambda) << ',' << result.dev_queries.size() << ',' << result.test_queries.size();
      for (const auto& r : row.dev) out << ',' << format_double(r.value);
      for (std::size_t i = 0; i < row.dev.size(); ++i) {
        out << ',' << (row.test.empty() ? std::string("NA") : format_double(row.test[i].value));
      }
      out << '\n';
    }
  }
  outputs.push_back(out_dir / "split.txt");
  {
    auto out = open_out(outputs.back());
    for (const auto& id : result.dev_queries) out << id << "\tdev\n";
    for (const auto& id : result.test_queries) out << id << "\ttest\n";
  }
  if (c.ablation) {
    struct Variant {
      const char* name;
      EnrichmentSwitches switches;
    };
    EnrichmentSwitches full;
    full.unique_tokens = c.switches.unique_tokens;
    std::vector<Variant> variants = {{"full", full}, {"no_idf", full}, {"embedding_matrix", full},
                                     {"no_whitening", full}, {"no_l2", full}};
    variants[1].switches.use_idf = false;
    variants[2].switches.use_embedding_matrix_substitute = true;
    variants[3].switches.use_whitening = false;
    variants[4].switches.use_l2_norm = false;
    RunConfig vc = c;
    vc.switches.use_idf = true;
    vc.switches.use_whitening = true;
    vc.switches.use_embedding_matrix_substitute = false;
    const ModelInputs all = load_model_inputs(vc, &corpus);
    const RunList baseline = run_at(base_model, qlex, plex);
    outputs.push_back(out_dir / "ablation.csv");
    auto out = open_out(outputs.back());
    out << "variant,lambda,k,accuracy,n_queries,hit_mode\n";
    const auto emit = [&](const char* name, double lambda, const RunList& run) {
      const auto acc = topk_accuracy(run, judgments, c.k_grid, mode, texts);
      for (const auto& v : acc.values) {
        out << name << ',' << format_double(lambda) << ',' << v.k << ',' << format_double(v.value) << ','
            << acc.queries << ',' << to_string(mode) << '\n';
      }
    };
    emit("baseline", 0.0, baseline);
    for (const auto& v : variants) {
      const auto model = make_model(all, result.selected_lambda, v.switches);
      const auto vq = lexical_rows(model, all.vocab, qstore, qtexts, c.threads);
      const auto vp = lexical_rows(model, all.vocab, pstore, ptexts, c.threads);
      emit(v.name, result.selected_lambda, run_at(model, vq, vp));
    }
  }
  outputs.push_back(out_dir / "selected.json");
  write_json({{"lambda", result.selected_lambda},
              {"metric", "accuracy@" + std::to_string(c.select_k)},
              {"dev_value", result.dev_value},
              {"hit_mode", to_string(mode)},
              {"n_dev", result.dev_queries.size()},
              {"n_test", result.test_queries.size()}},
             outputs.back());
  write_run_manifest(out_dir, "sweep", c,
                     {{"head", c.head},
                      {"vocab", c.vocab},
                      {"enrichment", c.enrichment},
                      {"idf", c.idf},
                      {"corpus", c.corpus},
                      {"queries", c.queries},
                      {"qrels", c.qrels},
                      {"query_embeddings", c.query_embeddings},
                      {"passage_embeddings", c.passage_embeddings}},
                     outputs);
  return result;
}

void cmd_report(const RunConfig& c) {
  if (c.inputs.empty()) throw ValidationError("report needs at least one --inputs directory");
  struct Line {
    std::string source, metric, k, value, queries, mode;
  };
  std::vector<Line> lines;
  Inputs inputs;
  for (const auto& dir : c.inputs) {
    const fs::path path = dir / "metrics.csv";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    inputs.push_back({"metrics", path});
    std::string line;
    std::getline(in, line);
    if (line.rfind("metric,k,value,n_queries", 0) != 0) throw ValidationError(path.string() + ": not a metrics file");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() < 4) throw ValidationError(path.string() + ": malformed line \"" + line + "\"");
      const std::string source = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
      lines.push_back({source, f[0], f[1], f[2], f[3], f.size() > 4 ? f[4] : ""});
    }
  }
  const auto out_dir = prepare_out(c);
  const fs::path path = out_dir / "report.csv";
  {
    auto out = open_out(path);
    out << "source,metric,k,value,n_queries,hit_mode\n";
    for (const auto& l : lines) {
      out << csv_field(l.source) << ',' << l.metric << ',' << l.k << ',' << l.value << ',' << l.queries << ','
          << l.mode << '\n';
    }
  }
  std::size_t width = 6;
  for (const auto& l : lines) width = std::max(width, l.source.size());
  for (const auto& l : lines) {
    std::string name = l.metric + "@" + l.k;
    *c.console << l.source << std::string(width + 2 - l.source.size(), ' ') << name
               << std::string(name.size() < 14 ? 14 - name.size() : 1, ' ') << l.value << '\n';
  }
  write_run_manifest(out_dir, "report", c, inputs, {path});
}

}  // namespace lexenrich::cli
