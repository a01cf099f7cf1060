#include "lexenrich/enrichment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>

#include "lexenrich/error.hpp"
#include "lexenrich/parallel.hpp"

namespace lexenrich {

namespace {

Eigen::VectorXd round_to_float(const Eigen::VectorXd& v) { return v.cast<float>().cast<double>(); }

std::vector<float> to_floats(const double* data, Eigen::Index n) {
  std::vector<float> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(data[i]);
  return out;
}

struct TokenFit {
  Eigen::VectorXd s;
  double initial_loss = 0.0;
  double loss = 0.0;
  int steps = 0;
  bool converged = false;
};

TokenFit fit_token(HeadWorkspace& ws, const MlmHeadParams& head, const OptimizerConfig& cfg, TokenId t) {
  const Eigen::Index d = head.dim();
  std::mt19937_64 rng(token_seed(cfg.seed, t));
  std::normal_distribution<double> noise(0.0, cfg.init_noise);

  TokenFit fit;
  fit.s = head.decoder_weight.row(t).transpose();
  for (Eigen::Index i = 0; i < d; ++i) fit.s[i] += noise(rng);

  Eigen::VectorXd grad(d), m = Eigen::VectorXd::Zero(d), v = Eigen::VectorXd::Zero(d);
  double beta1_pow = 1.0, beta2_pow = 1.0;
  for (int step = 0;; ++step) {
    double loss = 0.0;
    try {
      loss = ws.loss_and_gradient(fit.s, t, grad);
    } catch (const NumericError&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (step == 0) fit.initial_loss = loss;
    fit.loss = loss;
    fit.steps = step;
    if (!std::isfinite(loss)) return fit;
    if (loss <= cfg.loss_threshold) {
      // Accept only if the float32 value that gets persisted also meets the threshold.
      const Eigen::VectorXd rounded = round_to_float(fit.s);
      const double rounded_loss = ws.loss(rounded, t);
      if (rounded_loss <= cfg.loss_threshold) {
        fit.s = rounded;
        fit.loss = rounded_loss;
        fit.converged = true;
        return fit;
      }
    }
    if (step == cfg.max_steps) break;

    beta1_pow *= cfg.beta1;
    beta2_pow *= cfg.beta2;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double step_size = cfg.learning_rate / (1.0 - beta1_pow);
    const double v_scale = 1.0 / (1.0 - beta2_pow);
    for (Eigen::Index i = 0; i < d; ++i) {
      fit.s[i] -= step_size * m[i] / (std::sqrt(v[i] * v_scale) + cfg.epsilon);
    }
  }
  fit.s = round_to_float(fit.s);
  try {
    fit.loss = ws.loss(fit.s, t);
  } catch (const NumericError&) {
    fit.loss = std::numeric_limits<double>::quiet_NaN();
  }
  fit.converged = std::isfinite(fit.loss) && fit.loss <= cfg.loss_threshold;
  return fit;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be positive");
  if (!(loss_threshold > 0.0) || !std::isfinite(loss_threshold)) throw ValidationError("loss threshold must be positive");
  if (max_steps < 1) throw ValidationError("max steps must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam decay rates must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("Adam epsilon must be positive");
  if (!(init_noise >= 0.0)) throw ValidationError("initialization noise must be non-negative");
}

std::vector<TokenId> EnrichmentTable::unconverged() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < converged.size(); ++i) {
    if (!converged[i]) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

std::uint64_t token_seed(std::uint64_t seed, TokenId token) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(token) + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

EnrichmentTable fit_single_token_enrichments(const MlmHeadParams& head, const OptimizerConfig& cfg,
                                             int threads,
                                             const std::function<void(std::size_t)>& progress) {
  head.validate();
  cfg.validate();
  const auto vocab = static_cast<std::size_t>(head.vocab_size());
  EnrichmentTable table;
  table.s.resize(head.vocab_size(), head.dim());
  table.converged.assign(vocab, 0);
  table.losses.assign(vocab, 0.0);
  table.initial_losses.assign(vocab, 0.0);
  table.steps.assign(vocab, 0);

  const std::size_t workers = static_cast<std::size_t>(std::max(threads, 1));
  const std::size_t chunk = (vocab + workers - 1) / workers;
  std::atomic<std::size_t> done{0};
  parallel_for(workers, static_cast<int>(workers), [&](std::size_t w) {
    HeadWorkspace ws(head);
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(vocab, begin + chunk);
    for (std::size_t t = begin; t < end; ++t) {
      const TokenFit fit = fit_token(ws, head, cfg, static_cast<TokenId>(t));
      table.s.row(static_cast<Eigen::Index>(t)) = fit.s.transpose();
      table.converged[t] = fit.converged ? 1 : 0;
      table.losses[t] = fit.loss;
      table.initial_losses[t] = fit.initial_loss;
      table.steps[t] = fit.steps;
      const std::size_t n = ++done;
      if (progress) progress(n);
    }
  });
  return table;
}

void row_moments(const RowMatrixD& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& covariance) {
  const auto n = rows.rows();
  if (n < 2) throw ValidationError("moments need at least two rows");
  mean = rows.colwise().mean().transpose();
  const RowMatrixD centered = rows.rowwise() - mean.transpose();
  covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
}

WhiteningParams fit_whitening(const RowMatrixD& rows) {
  const auto d = rows.cols();
  if (rows.rows() < d + 1) {
    throw ValidationError("whitening needs at least " + std::to_string(d + 1) + " rows, got " +
                          std::to_string(rows.rows()));
  }
  if (!rows.allFinite()) throw ValidationError("whitening rows must be finite");
  WhiteningParams params;
  Eigen::MatrixXd covariance;
  row_moments(rows, params.mean, covariance);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  Eigen::VectorXd eigenvalues = solver.eigenvalues();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (eigenvalues[i] < kWhiteningEigenFloor) {
      eigenvalues[i] = kWhiteningEigenFloor;
      ++params.clamped_eigenvalues;
    }
  }
  params.transform = solver.eigenvectors() * eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
  return params;
}

WhiteningParams fit_whitening(const EnrichmentTable& table) {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < table.converged.size(); ++i) {
    if (table.converged[i]) keep.push_back(static_cast<Eigen::Index>(i));
  }
  RowMatrixD rows(static_cast<Eigen::Index>(keep.size()), table.s.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = table.s.row(keep[i]);
  return fit_whitening(rows);
}

Eigen::VectorXd WhiteningParams::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mean.size()) throw ValidationError("whitening dimension mismatch");
  return transform.transpose() * (x - mean);
}

RowMatrixD WhiteningParams::apply_rows(const RowMatrixD& rows) const {
  if (rows.cols() != mean.size()) throw ValidationError("whitening dimension mismatch");
  return (rows.rowwise() - mean.transpose()) * transform;
}

Eigen::VectorXd apply_whitening(const WhiteningParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return params.apply(x);
}

EnrichmentModel::EnrichmentModel(const MlmHeadParams& head, const EnrichmentTable& table,
                                 const WhiteningParams& whitening, const IdfTable& idf,
                                 const Vocabulary& vocab, double lambda, EnrichmentSwitches switches)
    : lambda_(lambda), switches_(switches) {
  const auto v = static_cast<std::size_t>(head.vocab_size());
  if (vocab.size() != v) {
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " tokens, head has " +
                          std::to_string(v));
  }
  if (!switches.use_embedding_matrix_substitute && table.vocab_size() != v) {
    throw ValidationError("enrichment table size does not match the head vocabulary");
  }
  if (switches.use_idf && idf.idf.size() != v) {
    throw ValidationError("IDF table size does not match the vocabulary");
  }
  const RowMatrixD& base = switches.use_embedding_matrix_substitute ? head.decoder_weight : table.s;
  if (switches.use_whitening) {
    table_ = switches.use_embedding_matrix_substitute ? fit_whitening(base).apply_rows(base)
                                                       : whitening.apply_rows(base);
  } else {
    table_ = base;
  }
  weights_ = switches.use_idf ? idf.idf : std::vector<double>(v, 1.0);
  excluded_.assign(v, false);
  for (std::size_t i = 0; i < v; ++i) excluded_[i] = vocab.is_special(static_cast<TokenId>(i));
  if (!std::isfinite(lambda_)) throw ValidationError("lambda must be finite");
}

EnrichmentModel::EnrichmentModel(RowMatrixD token_vectors, std::vector<double> weights,
                                 std::vector<bool> excluded, double lambda, EnrichmentSwitches switches)
    : table_(std::move(token_vectors)),
      weights_(std::move(weights)),
      excluded_(std::move(excluded)),
      lambda_(lambda),
      switches_(switches) {
  const auto v = static_cast<std::size_t>(table_.rows());
  if (weights_.size() != v || excluded_.size() != v) {
    throw ValidationError("token weights and exclusion mask must match the table size");
  }
  if (!switches_.use_idf) std::fill(weights_.begin(), weights_.end(), 1.0);
  if (!std::isfinite(lambda_)) throw ValidationError("lambda must be finite");
}

EnrichmentModel EnrichmentModel::with_lambda(double lambda) const {
  EnrichmentModel copy = *this;
  if (!std::isfinite(lambda)) throw ValidationError("lambda must be finite");
  copy.lambda_ = lambda;
  return copy;
}

Eigen::VectorXd EnrichmentModel::lexical_vector(std::span<const TokenId> tokens) const {
  std::vector<TokenId> kept;
  kept.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || t >= table_.rows()) throw ValidationError("token id " + std::to_string(t) + " out of range");
    if (!excluded_[static_cast<std::size_t>(t)]) kept.push_back(t);
  }
  if (switches_.unique_tokens) {
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
  }
  if (kept.empty()) throw ValidationError("empty lexical input");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(table_.cols());
  for (TokenId t : kept) sum += weights_[static_cast<std::size_t>(t)] * table_.row(t).transpose();
  return sum / static_cast<double>(kept.size());
}

Eigen::VectorXd EnrichmentModel::enrich(const Eigen::Ref<const Eigen::VectorXd>& e,
                                        const Eigen::Ref<const Eigen::VectorXd>& lex) const {
  if (e.size() != lex.size()) throw ValidationError("representation and lexical vector dimensions differ");
  if (!e.allFinite() || !lex.allFinite()) throw ValidationError("enrichment inputs must be finite");
  if (lambda_ == 0.0) return e;
  if (!switches_.use_l2_norm) return e + lambda_ * lex;
  const double norm = lex.norm();
  if (norm == 0.0) throw ValidationError("zero-norm lexical vector cannot be normalized");
  return e + lambda_ * (lex / norm);
}

EmbeddingStore enrich_store(const EnrichmentModel& model, const Vocabulary& vocab,
                            const EmbeddingStore& store,
                            const std::unordered_map<std::string, std::string>& texts, int threads) {
  if (store.size() > 0 && store.dim() != model.dim()) {
    throw ValidationError("store dimension " + std::to_string(store.dim()) +
                          " does not match enrichment dimension " + std::to_string(model.dim()));
  }
  std::vector<std::string> missing;
  for (const auto& id : store.ids) {
    if (!texts.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "no text for id";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " \"" + missing[i] + "\"";
    throw ValidationError(msg);
  }
  EmbeddingStore out = store;
  if (model.lambda() == 0.0) return out;
  parallel_for(store.size(), threads, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    try {
      const auto tokens = tokenize(vocab, texts.at(store.ids[i]));
      const Eigen::VectorXd lex = model.lexical_vector(tokens);
      const Eigen::VectorXd e = store.vectors.row(row).transpose().cast<double>();
      out.vectors.row(row) = model.enrich(e, lex).transpose().cast<float>();
    } catch (const ValidationError& err) {
      throw ValidationError("enriching \"" + store.ids[i] + "\": " + err.what());
    }
  });
  return out;
}

TensorBundle enrichment_to_bundle(const EnrichmentTable& table, const WhiteningParams& whitening) {
  const auto v = static_cast<std::int64_t>(table.s.rows());
  const auto d = static_cast<std::int64_t>(table.s.cols());
  TensorBundle b;
  b.add("s_table", {v, d}, to_floats(table.s.data(), table.s.size()));
  b.add("converged", {v}, std::vector<float>(table.converged.begin(), table.converged.end()));
  b.add("losses", {v}, std::vector<float>(table.losses.begin(), table.losses.end()));
  b.add("initial_losses", {v}, std::vector<float>(table.initial_losses.begin(), table.initial_losses.end()));
  b.add("steps", {v}, std::vector<float>(table.steps.begin(), table.steps.end()));
  b.add("whiten.mean", {d}, to_floats(whitening.mean.data(), whitening.mean.size()));
  const RowMatrixD transform = whitening.transform;
  b.add("whiten.transform", {d, d}, to_floats(transform.data(), transform.size()));
  b.metadata["kind"] = "enrichment";
  b.metadata["clamped_eigenvalues"] = whitening.clamped_eigenvalues;
  return b;
}

void enrichment_from_bundle(const TensorBundle& bundle, EnrichmentTable& table, WhiteningParams& whitening) {
  const Tensor& s = bundle.at("s_table");
  if (s.shape.size() != 2) throw ValidationError("tensor \"s_table\" must be rank 2");
  const auto v = s.shape[0];
  const auto d = s.shape[1];
  const auto vector_of = [&](std::string_view name, std::int64_t n) -> const Tensor& {
    const Tensor& t = bundle.at(name);
    if (t.shape != std::vector<std::int64_t>{n}) {
      throw ValidationError("tensor \"" + std::string(name) + "\" has the wrong shape");
    }
    return t;
  };
  table.s = Eigen::Map<const RowMatrixF>(s.data.data(), v, d).cast<double>();
  const auto& conv = vector_of("converged", v).data;
  table.converged.assign(conv.size(), 0);
  for (std::size_t i = 0; i < conv.size(); ++i) table.converged[i] = conv[i] != 0.0F ? 1 : 0;
  const auto& losses = vector_of("losses", v).data;
  table.losses.assign(losses.begin(), losses.end());
  if (bundle.contains("initial_losses")) {
    const auto& init = vector_of("initial_losses", v).data;
    table.initial_losses.assign(init.begin(), init.end());
  } else {
    table.initial_losses.assign(static_cast<std::size_t>(v), 0.0);
  }
  if (bundle.contains("steps")) {
    const auto& steps = vector_of("steps", v).data;
    table.steps.assign(steps.begin(), steps.end());
  } else {
    table.steps.assign(static_cast<std::size_t>(v), 0);
  }
  const Tensor& mean = vector_of("whiten.mean", d);
  whitening.mean = Eigen::Map<const Eigen::VectorXf>(mean.data.data(), d).cast<double>();
  const Tensor& transform = bundle.at("whiten.transform");
  if (transform.shape != std::vector<std::int64_t>{d, d}) {
    throw ValidationError("tensor \"whiten.transform\" has the wrong shape");
  }
  whitening.transform = Eigen::Map<const RowMatrixF>(transform.data.data(), d, d).cast<double>();
  whitening.clamped_eigenvalues = bundle.metadata.value("clamped_eigenvalues", 0);
  if (!table.s.allFinite()) throw ValidationError("enrichment table has non-finite rows");
}

}  // namespace lexenrich
