#include "test_support.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace lexenrich::testing {

MlmHeadParams random_head(int dim, int vocab, std::uint64_t seed, HeadScales scales,
                          Activation activation) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(scales.gamma_lo, scales.gamma_hi);
  MlmHeadParams p;
  p.activation = activation;
  p.eps = 1e-12;
  p.transform_weight.resize(dim, dim);
  const double w_scale = scales.transform / std::sqrt(static_cast<double>(dim));
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) p.transform_weight(r, c) = w_scale * normal(rng);
  }
  p.transform_bias.resize(dim);
  p.ln_gamma.resize(dim);
  p.ln_beta.resize(dim);
  for (int i = 0; i < dim; ++i) {
    p.transform_bias[i] = scales.bias * normal(rng);
    p.ln_gamma[i] = uniform(rng);
    p.ln_beta[i] = scales.beta * normal(rng);
  }
  p.decoder_weight.resize(vocab, dim);
  for (int r = 0; r < vocab; ++r) {
    for (int c = 0; c < dim; ++c) p.decoder_weight(r, c) = scales.decoder * normal(rng);
  }
  p.decoder_bias.resize(vocab);
  for (int i = 0; i < vocab; ++i) p.decoder_bias[i] = scales.decoder_bias * normal(rng);
  return p;
}

MlmHeadParams synthetic_enrichment_head() {
  HeadScales scales;
  scales.gamma_lo = 4.0;
  scales.gamma_hi = 6.0;
  return random_head(16, 200, 20240601, scales);
}

EmbeddingStore random_store(int rows, int dim, std::uint64_t seed, Similarity sim,
                            const std::string& prefix) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0F, 1.0F);
  EmbeddingStore s;
  s.similarity = sim;
  s.vectors.resize(rows, dim);
  for (int r = 0; r < rows; ++r) {
    s.ids.push_back(prefix + std::to_string(r));
    for (int c = 0; c < dim; ++c) s.vectors(r, c) = normal(rng);
  }
  return s;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("lexenrich_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Vocabulary fixture_vocab() {
  return Vocabulary({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "great", "lakes", "lake",
                     "re", "##ba", "mc", "##entire", "river", "saint", "lawrence", ",", "!", ".",
                     "?", "a", "of", "is", "which", "michigan", "##s", "s", "'", "what", "largest"});
}

StopList fixture_stoplist() { return StopList({"the", "a", "of", "is", "which", "what", "s"}); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

}  // namespace lexenrich::testing
