#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lexenrich/datastore.hpp"
#include "lexenrich/types.hpp"

namespace lexenrich {

enum class Activation { gelu, identity };

/// Parameters of a masked-language-model output head:
///
///   logits = V · LayerNorm(act(W·h + b)) + b_out,   probs = softmax(logits)
///
/// `transform_weight` uses the [out, in] layout of common framework exports.
/// Row i of `decoder_weight` is the static embedding of vocabulary id i.
struct MlmHeadParams {
  Eigen::MatrixXd transform_weight;
  Eigen::VectorXd transform_bias;
  Eigen::VectorXd ln_gamma;
  Eigen::VectorXd ln_beta;
  double eps = 1e-12;
  Activation activation = Activation::gelu;
  RowMatrixD decoder_weight;
  Eigen::VectorXd decoder_bias;

  Eigen::Index dim() const { return transform_weight.cols(); }
  Eigen::Index vocab_size() const { return decoder_weight.rows(); }

  void validate() const;

  /// Tensors `transform.weight`, `transform.bias`, `layernorm.gamma`,
  /// `layernorm.beta`, `decoder.weight`, optional `decoder.bias`; metadata
  /// `activation` ("gelu" | "identity") and `eps`.
  static MlmHeadParams from_bundle(const TensorBundle& bundle);
  TensorBundle to_bundle() const;
};

MlmHeadParams load_head(const std::filesystem::path& path);

/// Distribution over the vocabulary for one input vector.
struct VocabProjection {
  std::string source_id;
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;

  Eigen::Index size() const { return probs.size(); }
};

VocabProjection mlm_forward(const MlmHeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& h,
                            std::string source_id = {});

/// Gradient of -log probs[target] with respect to h.
Eigen::VectorXd mlm_backward(const MlmHeadParams& params,
                             const Eigen::Ref<const Eigen::VectorXd>& h, TokenId target);

/// Cross-entropy -log probs[target] at h.
double mlm_cross_entropy(const MlmHeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& h,
                         TokenId target);

/// Scratch buffers for repeated loss/gradient evaluation on one thread.
class HeadWorkspace {
 public:
  explicit HeadWorkspace(const MlmHeadParams& params);

  /// Returns -log probs[target] and writes the gradient w.r.t. h into `grad`.
  double loss_and_gradient(const Eigen::Ref<const Eigen::VectorXd>& h, TokenId target,
                           Eigen::Ref<Eigen::VectorXd> grad);

  /// Returns -log probs[target] without computing the gradient.
  double loss(const Eigen::Ref<const Eigen::VectorXd>& h, TokenId target);

  /// The logits from the most recent evaluation.
  const Eigen::VectorXd& logits() const { return logits_; }

 private:
  void forward(const Eigen::Ref<const Eigen::VectorXd>& h);

  const MlmHeadParams& params_;
  Eigen::VectorXd pre_act_, act_, normed_, out_, logits_, probs_;
  double inv_std_ = 0.0;
  double log_norm_ = 0.0;
};

/// One projection per store row, in store order. Rows are evaluated in
/// parallel; each row's result is independent of the worker count.
std::vector<VocabProjection> project_store(const MlmHeadParams& params,
                                           const EmbeddingStore& store, int threads = 1);

/// The k most probable tokens, descending by probability, ties broken by
/// ascending token id.
std::vector<std::pair<TokenId, double>> top_k(const VocabProjection& proj, Eigen::Index k);

/// 1-based rank of `token` under the top_k ordering.
std::size_t rank_of(const VocabProjection& proj, TokenId token);

/// Ranks of every token (index = token id) under the top_k ordering.
std::vector<std::size_t> rank_all(const VocabProjection& proj);

}  // namespace lexenrich
