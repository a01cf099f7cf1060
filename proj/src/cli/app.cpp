#include <functional>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "lexenrich/cli.hpp"
#include "lexenrich/error.hpp"

namespace lexenrich::cli {

namespace {

struct Binding {
  CLI::Option* option;
  std::function<void(RunConfig&)> apply;
};

using Bindings = std::vector<Binding>;

template <typename T>
void option(CLI::App* app, Bindings& b, const std::string& name, const std::string& help,
            std::function<void(RunConfig&, const T&)> set) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(name, *value, help);
  if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::size_t>>) {
    opt->delimiter(',');
  }
  b.push_back({opt, [value, set](RunConfig& c) { set(c, *value); }});
}

void flag(CLI::App* app, Bindings& b, const std::string& name, const std::string& help,
          std::function<void(RunConfig&)> set) {
  CLI::Option* opt = app->add_flag(name, help);
  b.push_back({opt, std::move(set)});
}

using PathField = fs::path RunConfig::*;

void path_option(CLI::App* app, Bindings& b, const std::string& name, const std::string& help, PathField field) {
  option<std::string>(app, b, name, help, [field](RunConfig& c, const std::string& v) { c.*field = v; });
}

void add_flags(CLI::App* app, Bindings& b, std::string& config_path) {
  app->add_option("--config", config_path, "JSON config file; flags override its values");
  path_option(app, b, "--out", "output directory", &RunConfig::out);
  path_option(app, b, "--head", "MLM head tensor bundle", &RunConfig::head);
  path_option(app, b, "--vocab", "vocabulary file, one token per line", &RunConfig::vocab);
  path_option(app, b, "--stoplist", "stop-word list, one word per line", &RunConfig::stoplist);
  path_option(app, b, "--embeddings", "embedding bundle to project", &RunConfig::embeddings);
  path_option(app, b, "--query-embeddings", "query embedding bundle", &RunConfig::query_embeddings);
  path_option(app, b, "--passage-embeddings", "passage embedding bundle", &RunConfig::passage_embeddings);
  path_option(app, b, "--corpus", "passage corpus (JSONL)", &RunConfig::corpus);
  path_option(app, b, "--queries", "queries (JSONL)", &RunConfig::queries);
  path_option(app, b, "--qrels", "TREC qrels", &RunConfig::qrels);
  path_option(app, b, "--enrichment", "fitted enrichment bundle", &RunConfig::enrichment);
  path_option(app, b, "--idf", "external IDF bundle (default: computed from --corpus)", &RunConfig::idf);
  path_option(app, b, "--bm25-index", "saved BM25 index", &RunConfig::bm25_index);
  path_option(app, b, "--dense-run", "dense TREC run for the amnesia report", &RunConfig::dense_run);
  path_option(app, b, "--bm25-run", "BM25 TREC run for the amnesia report", &RunConfig::bm25_run);
  path_option(app, b, "--run", "TREC run to evaluate", &RunConfig::run);
  option<std::vector<std::string>>(app, b, "--inputs", "output directories whose metrics.csv to merge",
                                   [](RunConfig& c, const std::vector<std::string>& v) {
                                     c.inputs.assign(v.begin(), v.end());
                                   });
  option<std::uint64_t>(app, b, "--seed", "random seed", [](RunConfig& c, const std::uint64_t& v) {
    c.seed = v;
    c.optimizer.seed = v;
  });
  option<int>(app, b, "--threads", "worker threads (outputs do not depend on it)",
              [](RunConfig& c, const int& v) { c.threads = v; });
  option<double>(app, b, "--lr", "Adam learning rate (0.01)",
                 [](RunConfig& c, const double& v) { c.optimizer.learning_rate = v; });
  option<double>(app, b, "--loss-threshold", "cross-entropy stopping threshold (0.1)",
                 [](RunConfig& c, const double& v) { c.optimizer.loss_threshold = v; });
  option<int>(app, b, "--max-steps", "Adam steps per token (2000)",
              [](RunConfig& c, const int& v) { c.optimizer.max_steps = v; });
  option<double>(app, b, "--lambda", "enrichment mixing weight (0)", [](RunConfig& c, const double& v) { c.lambda = v; });
  option<std::vector<double>>(app, b, "--lambda-grid", "comma-separated lambdas for sweep (0,0.5,3,5)",
                              [](RunConfig& c, const std::vector<double>& v) { c.lambda_grid = v; });
  flag(app, b, "--no-idf", "uniform token weights instead of IDF", [](RunConfig& c) { c.switches.use_idf = false; });
  flag(app, b, "--no-whitening", "use unwhitened enrichment rows",
       [](RunConfig& c) { c.switches.use_whitening = false; });
  flag(app, b, "--no-l2", "skip lexical vector normalization", [](RunConfig& c) { c.switches.use_l2_norm = false; });
  flag(app, b, "--use-embedding-matrix", "decoder rows instead of fitted enrichments",
       [](RunConfig& c) { c.switches.use_embedding_matrix_substitute = true; });
  flag(app, b, "--unique-tokens", "average over unique tokens instead of occurrences",
       [](RunConfig& c) { c.switches.unique_tokens = true; });
  option<std::size_t>(app, b, "--k", "ranked list depth for search (100)",
                      [](RunConfig& c, const std::size_t& v) { c.depth = v; });
  option<std::size_t>(app, b, "--top-k", "tokens per id in the projection dump (20)",
                      [](RunConfig& c, const std::size_t& v) { c.top_k = v; });
  option<std::vector<std::size_t>>(app, b, "--k-grid", "comma-separated ascending cutoffs (1,5,20,100)",
                                   [](RunConfig& c, const std::vector<std::size_t>& v) { c.k_grid = v; });
  option<std::string>(app, b, "--mode", "search mode: dense or bm25",
                      [](RunConfig& c, const std::string& v) { c.mode = v; });
  option<std::string>(app, b, "--tokenization", "BM25 terms: word or wordpiece",
                      [](RunConfig& c, const std::string& v) { c.tokenization = parse_bm25_tokenization(v); });
  option<double>(app, b, "--k1", "BM25 k1 (0.9)", [](RunConfig& c, const double& v) { c.bm25.k1 = v; });
  option<double>(app, b, "--b", "BM25 b (0.4)", [](RunConfig& c, const double& v) { c.bm25.b = v; });
  option<std::string>(app, b, "--hit-mode", "auto, gold or answers",
                      [](RunConfig& c, const std::string& v) { c.hit_mode = v; });
  flag(app, b, "--per-pair-mean", "average coverage per pair instead of pooling",
       [](RunConfig& c) { c.per_pair_mean = true; });
  option<double>(app, b, "--dev-fraction", "share of queries in the sweep dev split (0.5)",
                 [](RunConfig& c, const double& v) { c.dev_fraction = v; });
  option<std::size_t>(app, b, "--select-k", "cutoff whose dev accuracy selects lambda (5)",
                      [](RunConfig& c, const std::size_t& v) { c.select_k = v; });
  flag(app, b, "--ablation", "also write the ablation grid", [](RunConfig& c) { c.ablation = true; });
}

void check_inputs_exist(const RunConfig& c) {
  const fs::path RunConfig::*fields[] = {
      &RunConfig::head,       &RunConfig::vocab,  &RunConfig::stoplist,   &RunConfig::embeddings,
      &RunConfig::query_embeddings, &RunConfig::passage_embeddings, &RunConfig::corpus,
      &RunConfig::queries,    &RunConfig::qrels,  &RunConfig::enrichment, &RunConfig::idf,
      &RunConfig::bm25_index, &RunConfig::dense_run, &RunConfig::bm25_run, &RunConfig::run};
  for (auto field : fields) {
    const fs::path& p = c.*field;
    if (p.empty()) continue;
    if (!fs::exists(p) && !fs::exists(manifest_path(p))) throw IoError("input not found: " + p.string());
  }
  for (const auto& p : c.inputs) {
    if (!fs::is_directory(p)) throw IoError("input directory not found: " + p.string());
  }
}

struct Command {
  const char* name;
  const char* help;
  std::function<void(const RunConfig&)> run;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const std::vector<Command> commands = {
      {"project", "top-k vocabulary projection of each embedding", cmd_project},
      {"analyze", "coverage, token MRR, expansion, categories and amnesia reports", cmd_analyze},
      {"enrich-fit", "fit single-token enrichments and their whitening", cmd_enrich_fit},
      {"enrich-apply", "write enriched query and passage embeddings", cmd_enrich_apply},
      {"index-bm25", "build and save a BM25 index", cmd_index_bm25},
      {"search", "dense (optionally enriched) or BM25 retrieval to a TREC run", cmd_search},
      {"eval", "top-k accuracy, MRR@10 and nDCG@10 of a run", cmd_eval},
      {"sweep", "grid-search lambda on a dev split; optional ablation grid",
       [](const RunConfig& c) { cmd_sweep(c); }},
      {"report", "merge metrics.csv files of several output directories", cmd_report},
  };

  CLI::App app("Vocabulary projection analyses and lexical enrichment for dense retrievers", "lexenrich");
  app.require_subcommand(1);
  std::vector<CLI::App*> subs;
  std::vector<Bindings> bindings(commands.size());
  std::vector<std::string> config_paths(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    subs.push_back(app.add_subcommand(commands[i].name, commands[i].help));
    add_flags(subs.back(), bindings[i], config_paths[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const std::string name = commands[i].name;
    try {
      RunConfig config = config_paths[i].empty() ? RunConfig{} : load_config(config_paths[i]);
      for (const auto& b : bindings[i]) {
        if (b.option->count() > 0) b.apply(config);
      }
      config.console = &out;
      config.diagnostics = &err;
      validate_settings(config);
      check_inputs_exist(config);
      commands[i].run(config);
      return 0;
    } catch (const IoError& e) {
      err << "error: " << name << ": " << e.what() << '\n';
      return 2;
    } catch (const fs::filesystem_error& e) {
      err << "error: " << name << ": " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << name << ": " << e.what() << '\n';
      return 1;
    }
  }
  return 1;
}

}  // namespace lexenrich::cli
