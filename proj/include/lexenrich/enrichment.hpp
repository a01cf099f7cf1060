#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "lexenrich/datastore.hpp"
#include "lexenrich/lexical.hpp"
#include "lexenrich/mlm_head.hpp"
#include "lexenrich/types.hpp"

namespace lexenrich {

/// Adam settings for fitting single-token enrichments.
struct OptimizerConfig {
  double learning_rate = 0.01;
  double loss_threshold = 0.1;
  int max_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double init_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One fitted vector per vocabulary token.
struct EnrichmentTable {
  RowMatrixD s;                        ///< |V| x d
  std::vector<std::uint8_t> converged;  ///< loss <= threshold
  std::vector<double> losses;           ///< final cross-entropy
  std::vector<double> initial_losses;
  std::vector<int> steps;

  std::size_t vocab_size() const { return converged.size(); }
  std::vector<TokenId> unconverged() const;
};

/// Per-token seed; a token's result does not depend on which worker fits it.
std::uint64_t token_seed(std::uint64_t seed, TokenId token);

/// For each token t, starts from decoder row t plus seeded N(0, init_noise^2)
/// noise and runs Adam on -log MLM-Head(s)[t] until the loss is at or below
/// the threshold or max_steps updates were taken. Tokens whose loss turns
/// non-finite stop early and are reported as unconverged.
///
/// Fitted rows are rounded to float32 precision (the persisted precision) and
/// their final loss is re-evaluated at the rounded point.
EnrichmentTable fit_single_token_enrichments(const MlmHeadParams& head, const OptimizerConfig& cfg,
                                             int threads = 1,
                                             const std::function<void(std::size_t)>& progress = {});

/// Affine map x -> (x - mean) * transform making the fitting rows zero-mean
/// with identity sample covariance (full-rank PCA whitening).
struct WhiteningParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd transform;  ///< d x d, applied on the right of a row vector
  int clamped_eigenvalues = 0;

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  RowMatrixD apply_rows(const RowMatrixD& rows) const;
};

inline constexpr double kWhiteningEigenFloor = 1e-10;

/// Needs at least d + 1 rows. Eigenvalues of the sample covariance below
/// 1e-10 are clamped (counted in clamped_eigenvalues).
WhiteningParams fit_whitening(const RowMatrixD& rows);

/// Fits on the converged rows of `table`.
WhiteningParams fit_whitening(const EnrichmentTable& table);

Eigen::VectorXd apply_whitening(const WhiteningParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Sample mean and (n - 1)-normalized covariance of the rows.
void row_moments(const RowMatrixD& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& covariance);

struct EnrichmentSwitches {
  bool use_idf = true;
  bool use_whitening = true;
  bool use_l2_norm = true;
  bool use_embedding_matrix_substitute = false;
  bool unique_tokens = false;
};

/// Enrichment table (whitened unless disabled), token weights and mixing
/// weight lambda.
class EnrichmentModel {
 public:
  /// `whitening` is ignored when use_whitening is off. With
  /// use_embedding_matrix_substitute the decoder rows replace the fitted rows
  /// and, when whitening is on, get their own whitening fit.
  EnrichmentModel(const MlmHeadParams& head, const EnrichmentTable& table,
                  const WhiteningParams& whitening, const IdfTable& idf, const Vocabulary& vocab,
                  double lambda, EnrichmentSwitches switches = {});

  /// Direct construction from a ready token table (rows already transformed).
  EnrichmentModel(RowMatrixD token_vectors, std::vector<double> weights,
                  std::vector<bool> excluded, double lambda, EnrichmentSwitches switches = {});

  double lambda() const { return lambda_; }
  const EnrichmentSwitches& switches() const { return switches_; }
  Eigen::Index dim() const { return table_.cols(); }
  const RowMatrixD& token_vectors() const { return table_; }
  EnrichmentModel with_lambda(double lambda) const;

  /// (1/n) Σ w(x_i) s(x_i) over token occurrences (or unique tokens), with
  /// special tokens filtered first. Throws ValidationError("empty lexical input").
  Eigen::VectorXd lexical_vector(std::span<const TokenId> tokens) const;

  /// e + lambda * lex / ||lex|| (or e + lambda * lex with use_l2_norm off).
  Eigen::VectorXd enrich(const Eigen::Ref<const Eigen::VectorXd>& e,
                         const Eigen::Ref<const Eigen::VectorXd>& lex) const;

 private:
  RowMatrixD table_;
  std::vector<double> weights_;
  std::vector<bool> excluded_;
  double lambda_ = 0.0;
  EnrichmentSwitches switches_;
};

/// Row-wise tokenize + lexical_vector + enrich. Ids, order and similarity tag
/// are preserved; lambda = 0 returns the input unchanged.
EmbeddingStore enrich_store(const EnrichmentModel& model, const Vocabulary& vocab,
                            const EmbeddingStore& store,
                            const std::unordered_map<std::string, std::string>& texts,
                            int threads = 1);

/// Tensors `s_table`, `converged`, `losses`, `whiten.mean`, `whiten.transform`.
TensorBundle enrichment_to_bundle(const EnrichmentTable& table, const WhiteningParams& whitening);
void enrichment_from_bundle(const TensorBundle& bundle, EnrichmentTable& table,
                            WhiteningParams& whitening);

}  // namespace lexenrich
