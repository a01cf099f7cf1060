#include <algorithm>
#include <fstream>
#include <cmath>

#include "lexenrich/cli.hpp"
#include "lexenrich/error.hpp"

namespace lexenrich::cli {

namespace {

using nlohmann::json;

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key \"" + key + "\" has the wrong type");
  }
}

fs::path* path_field(RunConfig& c, std::string_view key) {
  if (key == "head") return &c.head;
  if (key == "vocab") return &c.vocab;
  if (key == "stoplist") return &c.stoplist;
  if (key == "embeddings") return &c.embeddings;
  if (key == "query_embeddings") return &c.query_embeddings;
  if (key == "passage_embeddings") return &c.passage_embeddings;
  if (key == "corpus") return &c.corpus;
  if (key == "queries") return &c.queries;
  if (key == "qrels") return &c.qrels;
  if (key == "enrichment") return &c.enrichment;
  if (key == "idf") return &c.idf;
  if (key == "bm25_index") return &c.bm25_index;
  if (key == "dense_run") return &c.dense_run;
  if (key == "bm25_run") return &c.bm25_run;
  if (key == "run") return &c.run;
  if (key == "out") return &c.out;
  return nullptr;
}

}  // namespace

json RunConfig::settings() const {
  return {{"seed", seed},
          {"lr", optimizer.learning_rate},
          {"loss_threshold", optimizer.loss_threshold},
          {"max_steps", optimizer.max_steps},
          {"lambda", lambda},
          {"lambda_grid", lambda_grid},
          {"idf", switches.use_idf},
          {"whitening", switches.use_whitening},
          {"l2", switches.use_l2_norm},
          {"use_embedding_matrix", switches.use_embedding_matrix_substitute},
          {"unique_tokens", switches.unique_tokens},
          {"external_idf", !idf.empty()},
          {"k_grid", k_grid},
          {"top_k", top_k},
          {"depth", depth},
          {"mode", mode},
          {"tokenization", to_string(tokenization)},
          {"k1", bm25.k1},
          {"b", bm25.b},
          {"hit_mode", hit_mode},
          {"per_pair_mean", per_pair_mean},
          {"dev_fraction", dev_fraction},
          {"select_k", select_k},
          {"ablation", ablation}};
}

void apply_config(const json& j, const fs::path& base_dir, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (fs::path* p = path_field(c, key)) {
      *p = resolve(base_dir, get<std::string>(value, key));
    } else if (key == "inputs") {
      c.inputs.clear();
      for (const auto& s : get<std::vector<std::string>>(value, key)) c.inputs.push_back(resolve(base_dir, s));
    } else if (key == "seed") {
      c.seed = get<std::uint64_t>(value, key);
      c.optimizer.seed = c.seed;
    } else if (key == "threads") {
      c.threads = get<int>(value, key);
    } else if (key == "lr") {
      c.optimizer.learning_rate = get<double>(value, key);
    } else if (key == "loss_threshold") {
      c.optimizer.loss_threshold = get<double>(value, key);
    } else if (key == "max_steps") {
      c.optimizer.max_steps = get<int>(value, key);
    } else if (key == "lambda") {
      c.lambda = get<double>(value, key);
    } else if (key == "lambda_grid") {
      c.lambda_grid = get<std::vector<double>>(value, key);
    } else if (key == "no_idf") {
      c.switches.use_idf = !get<bool>(value, key);
    } else if (key == "no_whitening") {
      c.switches.use_whitening = !get<bool>(value, key);
    } else if (key == "no_l2") {
      c.switches.use_l2_norm = !get<bool>(value, key);
    } else if (key == "use_embedding_matrix") {
      c.switches.use_embedding_matrix_substitute = get<bool>(value, key);
    } else if (key == "unique_tokens") {
      c.switches.unique_tokens = get<bool>(value, key);
    } else if (key == "k_grid") {
      c.k_grid = get<std::vector<std::size_t>>(value, key);
    } else if (key == "top_k") {
      c.top_k = get<std::size_t>(value, key);
    } else if (key == "k" || key == "depth") {
      c.depth = get<std::size_t>(value, key);
    } else if (key == "mode") {
      c.mode = get<std::string>(value, key);
    } else if (key == "tokenization") {
      c.tokenization = parse_bm25_tokenization(get<std::string>(value, key));
    } else if (key == "k1") {
      c.bm25.k1 = get<double>(value, key);
    } else if (key == "b") {
      c.bm25.b = get<double>(value, key);
    } else if (key == "hit_mode") {
      c.hit_mode = get<std::string>(value, key);
    } else if (key == "per_pair_mean") {
      c.per_pair_mean = get<bool>(value, key);
    } else if (key == "dev_fraction") {
      c.dev_fraction = get<double>(value, key);
    } else if (key == "select_k") {
      c.select_k = get<std::size_t>(value, key);
    } else if (key == "ablation") {
      c.ablation = get<bool>(value, key);
    } else {
      throw ValidationError("unknown config key \"" + key + "\"");
    }
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_config(j, path.parent_path(), c);
  return c;
}

void validate_settings(const RunConfig& c) {
  if (c.threads < 1) throw ValidationError("--threads must be at least 1");
  if (c.k_grid.empty()) throw ValidationError("k-grid must not be empty");
  if (c.k_grid.front() == 0) throw ValidationError("k-grid values must be at least 1");
  if (!std::is_sorted(c.k_grid.begin(), c.k_grid.end()) ||
      std::adjacent_find(c.k_grid.begin(), c.k_grid.end()) != c.k_grid.end()) {
    throw ValidationError("k-grid must be strictly ascending");
  }
  if (c.top_k == 0) throw ValidationError("--top-k must be at least 1");
  if (c.depth == 0) throw ValidationError("--k must be at least 1");
  if (c.mode != "dense" && c.mode != "bm25") {
    throw ValidationError("--mode must be \"dense\" or \"bm25\", got \"" + c.mode + "\"");
  }
  if (c.hit_mode != "auto" && c.hit_mode != "gold" && c.hit_mode != "answers") {
    throw ValidationError("--hit-mode must be auto, gold or answers, got \"" + c.hit_mode + "\"");
  }
  if (!(c.dev_fraction > 0.0 && c.dev_fraction <= 1.0)) {
    throw ValidationError("--dev-fraction must lie in (0, 1]");
  }
  if (c.select_k == 0) throw ValidationError("--select-k must be at least 1");
  if (!std::isfinite(c.lambda)) throw ValidationError("lambda must be finite");
  for (double l : c.lambda_grid) {
    if (!std::isfinite(l)) throw ValidationError("lambda grid values must be finite");
  }
  c.optimizer.validate();
}

}  // namespace lexenrich::cli
