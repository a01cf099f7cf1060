#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexenrich/enrichment.hpp"
#include "lexenrich/retrieval.hpp"

namespace lexenrich::cli {

namespace fs = std::filesystem;

/// Everything a subcommand reads. Loaded from a JSON config file, then
/// overridden by command-line flags.
struct RunConfig {
  // inputs
  fs::path head;
  fs::path vocab;
  fs::path stoplist;
  fs::path embeddings;  ///< store dumped by `project`
  fs::path query_embeddings;
  fs::path passage_embeddings;
  fs::path corpus;
  fs::path queries;
  fs::path qrels;
  fs::path enrichment;
  fs::path idf;  ///< external IDF bundle; computed from the corpus when empty
  fs::path bm25_index;
  fs::path dense_run;
  fs::path bm25_run;
  fs::path run;
  std::vector<fs::path> inputs;  ///< output directories merged by `report`

  fs::path out;
  std::uint64_t seed = 0;
  int threads = 1;

  OptimizerConfig optimizer;
  EnrichmentSwitches switches;
  double lambda = 0.0;
  std::vector<double> lambda_grid = {0.0, 0.5, 3.0, 5.0};

  std::vector<std::size_t> k_grid = {1, 5, 20, 100};
  std::size_t top_k = 20;   ///< rows per id in the projection dump
  std::size_t depth = 100;  ///< ranked list length for `search`
  std::string mode = "dense";
  Bm25Tokenization tokenization = Bm25Tokenization::word;
  Bm25Params bm25;
  std::string hit_mode = "auto";  ///< auto | gold | answers
  bool per_pair_mean = false;
  double dev_fraction = 0.5;
  std::size_t select_k = 5;
  bool ablation = false;

  /// Where tables and diagnostics go; `run` points these at its own streams.
  std::ostream* console = &std::cout;
  std::ostream* diagnostics = &std::cerr;

  /// Settings that determine output bytes (no paths, no thread count).
  nlohmann::json settings() const;
};

/// Reads a JSON object whose keys are the flag names with '-' replaced by
/// '_'. Relative paths resolve against the config file's directory.
RunConfig load_config(const fs::path& path);
void apply_config(const nlohmann::json& j, const fs::path& base_dir, RunConfig& config);

/// Throws ValidationError on inconsistent settings (unsorted k-grid, ...).
void validate_settings(const RunConfig& config);

struct SweepResult {
  double selected_lambda = 0.0;
  double dev_value = 0.0;
  std::vector<std::string> dev_queries;
  std::vector<std::string> test_queries;
};

void cmd_project(const RunConfig& config);
void cmd_analyze(const RunConfig& config);
void cmd_enrich_fit(const RunConfig& config);
void cmd_enrich_apply(const RunConfig& config);
void cmd_index_bm25(const RunConfig& config);
void cmd_search(const RunConfig& config);
void cmd_eval(const RunConfig& config);
SweepResult cmd_sweep(const RunConfig& config);
void cmd_report(const RunConfig& config);

/// Full command line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// provenance

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);
std::string sha256_text(std::string_view text);

/// Files that make up an input: a bundle expands to its manifest, payload and
/// optional ids sidecar.
std::vector<fs::path> input_files(const fs::path& path);

/// Writes `<out>/manifest.json` with the command, settings, their hash, the
/// seed, and basename + checksum of every input and output file.
void write_run_manifest(const fs::path& out_dir, std::string_view command, const RunConfig& config,
                        const std::vector<std::pair<std::string, fs::path>>& inputs,
                        const std::vector<fs::path>& outputs);

}  // namespace lexenrich::cli
