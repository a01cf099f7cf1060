#include "lexenrich/mlm_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lexenrich/error.hpp"
#include "lexenrich/parallel.hpp"

namespace lexenrich {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Exact (erf) GELU and its derivative.
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Eigen::VectorXd to_vector(const Tensor& t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.data.size()));
  for (std::size_t i = 0; i < t.data.size(); ++i) v[static_cast<Eigen::Index>(i)] = t.data[i];
  return v;
}

const Tensor& expect_shape(const TensorBundle& b, std::string_view name,
                           std::vector<std::int64_t> shape) {
  const Tensor& t = b.at(name);
  if (t.shape != shape) {
    std::string msg = "tensor \"" + std::string(name) + "\" has shape [";
    for (std::size_t i = 0; i < t.shape.size(); ++i) msg += (i ? "," : "") + std::to_string(t.shape[i]);
    msg += "], expected [";
    for (std::size_t i = 0; i < shape.size(); ++i) msg += (i ? "," : "") + std::to_string(shape[i]);
    throw ValidationError(msg + "]");
  }
  return t;
}

std::vector<float> to_floats(const double* data, Eigen::Index n) {
  std::vector<float> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(data[i]);
  return out;
}

bool precedes(const Eigen::VectorXd& probs, Eigen::Index a, Eigen::Index b) {
  if (probs[a] != probs[b]) return probs[a] > probs[b];
  return a < b;
}

}  // namespace

void MlmHeadParams::validate() const {
  const auto d = dim();
  if (d < 1) throw ValidationError("head dimension must be at least 1");
  if (transform_weight.rows() != d) throw ValidationError("transform.weight must be square");
  if (transform_bias.size() != d || ln_gamma.size() != d || ln_beta.size() != d) {
    throw ValidationError("transform/layernorm vectors must have length " + std::to_string(d));
  }
  if (vocab_size() < 2) throw ValidationError("vocabulary must contain at least 2 tokens");
  if (decoder_weight.cols() != d) throw ValidationError("decoder.weight must have " + std::to_string(d) + " columns");
  if (decoder_bias.size() != vocab_size()) throw ValidationError("decoder.bias length must equal vocabulary size");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("layernorm eps must be positive and finite");
  if (!transform_weight.allFinite() || !transform_bias.allFinite() || !ln_gamma.allFinite() ||
      !ln_beta.allFinite() || !decoder_weight.allFinite() || !decoder_bias.allFinite()) {
    throw ValidationError("head parameters must be finite");
  }
}

MlmHeadParams MlmHeadParams::from_bundle(const TensorBundle& bundle) {
  const Tensor& w = bundle.at("transform.weight");
  if (w.shape.size() != 2 || w.shape[0] != w.shape[1]) {
    throw ValidationError("tensor \"transform.weight\" must be a square matrix");
  }
  const std::int64_t d = w.shape[0];
  const Tensor& dec = bundle.at("decoder.weight");
  if (dec.shape.size() != 2 || dec.shape[1] != d) {
    throw ValidationError("tensor \"decoder.weight\" must have shape [vocab, " + std::to_string(d) + "]");
  }
  const std::int64_t vocab = dec.shape[0];

  MlmHeadParams p;
  p.transform_weight = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                           w.data.data(), d, d)
                           .cast<double>();
  p.transform_bias = to_vector(expect_shape(bundle, "transform.bias", {d}));
  p.ln_gamma = to_vector(expect_shape(bundle, "layernorm.gamma", {d}));
  p.ln_beta = to_vector(expect_shape(bundle, "layernorm.beta", {d}));
  p.decoder_weight = Eigen::Map<const RowMatrixF>(dec.data.data(), vocab, d).cast<double>();
  if (bundle.contains("decoder.bias")) {
    p.decoder_bias = to_vector(expect_shape(bundle, "decoder.bias", {vocab}));
  } else {
    p.decoder_bias = Eigen::VectorXd::Zero(vocab);
  }

  const auto& meta = bundle.metadata;
  if (meta.contains("activation")) {
    const auto act = meta["activation"].get<std::string>();
    if (act == "gelu") {
      p.activation = Activation::gelu;
    } else if (act == "identity") {
      p.activation = Activation::identity;
    } else {
      throw ValidationError("unsupported head activation \"" + act + "\"");
    }
  }
  if (meta.contains("eps")) p.eps = meta["eps"].get<double>();
  p.validate();
  return p;
}

TensorBundle MlmHeadParams::to_bundle() const {
  validate();
  const std::int64_t d = dim();
  const std::int64_t vocab = vocab_size();
  TensorBundle b;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = transform_weight;
  b.add("transform.weight", {d, d}, to_floats(w.data(), w.size()));
  b.add("transform.bias", {d}, to_floats(transform_bias.data(), d));
  b.add("layernorm.gamma", {d}, to_floats(ln_gamma.data(), d));
  b.add("layernorm.beta", {d}, to_floats(ln_beta.data(), d));
  b.add("decoder.weight", {vocab, d}, to_floats(decoder_weight.data(), decoder_weight.size()));
  b.add("decoder.bias", {vocab}, to_floats(decoder_bias.data(), vocab));
  b.metadata["activation"] = activation == Activation::gelu ? "gelu" : "identity";
  b.metadata["eps"] = eps;
  b.metadata["kind"] = "mlm_head";
  return b;
}

MlmHeadParams load_head(const std::filesystem::path& path) {
  return MlmHeadParams::from_bundle(read_bundle(path, {.require_finite = true}));
}

HeadWorkspace::HeadWorkspace(const MlmHeadParams& params) : params_(params) {
  const auto d = params.dim();
  pre_act_.resize(d);
  act_.resize(d);
  normed_.resize(d);
  out_.resize(d);
  logits_.resize(params.vocab_size());
  probs_.resize(params.vocab_size());
}

void HeadWorkspace::forward(const Eigen::Ref<const Eigen::VectorXd>& h) {
  if (h.size() != params_.dim()) {
    throw ValidationError("input has dimension " + std::to_string(h.size()) + ", head expects " +
                          std::to_string(params_.dim()));
  }
  pre_act_.noalias() = params_.transform_weight * h;
  pre_act_ += params_.transform_bias;
  if (params_.activation == Activation::gelu) {
    act_ = pre_act_.unaryExpr([](double x) { return gelu(x); });
  } else {
    act_ = pre_act_;
  }
  const double d = static_cast<double>(act_.size());
  const double mean = act_.sum() / d;
  const double var = (act_.array() - mean).square().sum() / d;
  inv_std_ = 1.0 / std::sqrt(var + params_.eps);
  normed_ = (act_.array() - mean) * inv_std_;
  out_ = params_.ln_gamma.cwiseProduct(normed_) + params_.ln_beta;
  logits_.noalias() = params_.decoder_weight * out_;
  logits_ += params_.decoder_bias;
  if (!logits_.allFinite()) throw NumericError("non-finite logits in MLM head forward pass");

  const double max_logit = logits_.maxCoeff();
  probs_ = (logits_.array() - max_logit).exp();
  const double z = probs_.sum();
  probs_ /= z;
  log_norm_ = max_logit + std::log(z);
}

double HeadWorkspace::loss(const Eigen::Ref<const Eigen::VectorXd>& h, TokenId target) {
  if (target < 0 || target >= params_.vocab_size()) {
    throw ValidationError("target token " + std::to_string(target) + " out of range");
  }
  forward(h);
  return log_norm_ - logits_[target];
}

double HeadWorkspace::loss_and_gradient(const Eigen::Ref<const Eigen::VectorXd>& h, TokenId target,
                                        Eigen::Ref<Eigen::VectorXd> grad) {
  const double ce = loss(h, target);

  // d(-log p_t)/d logits = p - onehot(t)
  Eigen::VectorXd grad_logits = probs_;
  grad_logits[target] -= 1.0;
  const Eigen::VectorXd grad_out = params_.decoder_weight.transpose() * grad_logits;

  const Eigen::VectorXd grad_normed = params_.ln_gamma.cwiseProduct(grad_out);
  const double d = static_cast<double>(grad_normed.size());
  const double mean_g = grad_normed.sum() / d;
  const double mean_gx = grad_normed.dot(normed_) / d;
  Eigen::VectorXd grad_act = inv_std_ * (grad_normed.array() - mean_g - normed_.array() * mean_gx).matrix();

  if (params_.activation == Activation::gelu) {
    for (Eigen::Index i = 0; i < grad_act.size(); ++i) grad_act[i] *= gelu_grad(pre_act_[i]);
  }
  grad.noalias() = params_.transform_weight.transpose() * grad_act;
  if (!grad.allFinite()) throw NumericError("non-finite gradient in MLM head backward pass");
  return ce;
}

VocabProjection mlm_forward(const MlmHeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& h,
                            std::string source_id) {
  if (!h.allFinite()) throw ValidationError("MLM head input is not finite");
  HeadWorkspace ws(params);
  ws.loss(h, 0);
  VocabProjection proj;
  proj.source_id = std::move(source_id);
  proj.logits = ws.logits();
  const double max_logit = proj.logits.maxCoeff();
  proj.probs = (proj.logits.array() - max_logit).exp();
  proj.probs /= proj.probs.sum();
  return proj;
}

Eigen::VectorXd mlm_backward(const MlmHeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& h,
                             TokenId target) {
  if (!h.allFinite()) throw ValidationError("MLM head input is not finite");
  HeadWorkspace ws(params);
  Eigen::VectorXd grad(params.dim());
  ws.loss_and_gradient(h, target, grad);
  return grad;
}

double mlm_cross_entropy(const MlmHeadParams& params, const Eigen::Ref<const Eigen::VectorXd>& h,
                         TokenId target) {
  HeadWorkspace ws(params);
  return ws.loss(h, target);
}

std::vector<VocabProjection> project_store(const MlmHeadParams& params, const EmbeddingStore& store,
                                           int threads) {
  if (store.size() > 0 && store.dim() != params.dim()) {
    throw ValidationError("embedding dimension " + std::to_string(store.dim()) +
                          " does not match head dimension " + std::to_string(params.dim()));
  }
  std::vector<VocabProjection> out(store.size());
  parallel_for(store.size(), threads, [&](std::size_t i) {
    const Eigen::VectorXd h = store.vectors.row(static_cast<Eigen::Index>(i)).transpose().cast<double>();
    out[i] = mlm_forward(params, h, store.ids[i]);
  });
  return out;
}

std::vector<std::pair<TokenId, double>> top_k(const VocabProjection& proj, Eigen::Index k) {
  if (k < 1 || k > proj.size()) {
    throw ValidationError("k must be in [1, " + std::to_string(proj.size()) + "], got " + std::to_string(k));
  }
  std::vector<Eigen::Index> ids(static_cast<std::size_t>(proj.size()));
  std::iota(ids.begin(), ids.end(), Eigen::Index{0});
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return precedes(proj.probs, a, b); });
  std::vector<std::pair<TokenId, double>> result;
  result.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto id = ids[static_cast<std::size_t>(i)];
    result.emplace_back(static_cast<TokenId>(id), proj.probs[id]);
  }
  return result;
}

std::size_t rank_of(const VocabProjection& proj, TokenId token) {
  if (token < 0 || token >= proj.size()) {
    throw ValidationError("token id " + std::to_string(token) + " out of range");
  }
  std::size_t ahead = 0;
  for (Eigen::Index j = 0; j < proj.size(); ++j) {
    if (precedes(proj.probs, j, token)) ++ahead;
  }
  return ahead + 1;
}

std::vector<std::size_t> rank_all(const VocabProjection& proj) {
  std::vector<Eigen::Index> ids(static_cast<std::size_t>(proj.size()));
  std::iota(ids.begin(), ids.end(), Eigen::Index{0});
  std::sort(ids.begin(), ids.end(),
            [&](Eigen::Index a, Eigen::Index b) { return precedes(proj.probs, a, b); });
  std::vector<std::size_t> ranks(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) ranks[static_cast<std::size_t>(ids[r])] = r + 1;
  return ranks;
}

}  // namespace lexenrich
