#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lexenrich/enrichment.hpp"
#include "lexenrich/error.hpp"
#include "test_support.hpp"

namespace lexenrich {
namespace {

using testing::random_head;

// Unit-basis table over 4 tokens in 3 dimensions; token 3 is excluded.
EnrichmentModel basis_model(std::vector<double> weights, double lambda, EnrichmentSwitches sw = {}) {
  RowMatrixD t = RowMatrixD::Zero(4, 3);
  t(0, 0) = 1.0;
  t(1, 1) = 1.0;
  t(2, 2) = 1.0;
  t(3, 0) = 7.0;
  return EnrichmentModel(t, std::move(weights), {false, false, false, true}, lambda, sw);
}

TEST(LexicalVector, WeightedMeanOfRows) {
  const auto m = basis_model({2.0, 1.0, 0.5, 1.0}, 1.0);
  const std::vector<TokenId> tokens = {0, 1, 2};
  const Eigen::Vector3d want(2.0 / 3.0, 1.0 / 3.0, 0.5 / 3.0);
  EXPECT_LT((m.lexical_vector(tokens) - want).norm(), 1e-15);
}

TEST(LexicalVector, SingleTokenWithoutIdfIsItsRow) {
  EnrichmentSwitches sw;
  sw.use_idf = false;
  const auto m = basis_model({2.0, 1.0, 0.5, 1.0}, 1.0, sw);
  const std::vector<TokenId> one = {2};
  EXPECT_EQ(m.lexical_vector(one), Eigen::Vector3d(0, 0, 1));
}

TEST(LexicalVector, RepeatedTokenEqualsSingle) {
  const auto m = basis_model({2.0, 1.0, 0.5, 1.0}, 1.0);
  const std::vector<TokenId> twice = {1, 1};
  const std::vector<TokenId> once = {1};
  EXPECT_EQ(m.lexical_vector(twice), m.lexical_vector(once));
}

TEST(LexicalVector, OccurrencesVersusUniqueTokens) {
  const std::vector<TokenId> tokens = {0, 0, 1};
  const auto occ = basis_model({1.0, 1.0, 1.0, 1.0}, 1.0);
  EXPECT_LT((occ.lexical_vector(tokens) - Eigen::Vector3d(2.0 / 3.0, 1.0 / 3.0, 0)).norm(), 1e-15);
  EnrichmentSwitches sw;
  sw.unique_tokens = true;
  const auto uniq = basis_model({1.0, 1.0, 1.0, 1.0}, 1.0, sw);
  EXPECT_LT((uniq.lexical_vector(tokens) - Eigen::Vector3d(0.5, 0.5, 0)).norm(), 1e-15);
}

TEST(LexicalVector, ExcludedTokensAreDroppedBeforeCounting) {
  const auto m = basis_model({1.0, 1.0, 1.0, 1.0}, 1.0);
  const std::vector<TokenId> with = {3, 0, 3};
  EXPECT_EQ(m.lexical_vector(with), Eigen::Vector3d(1, 0, 0));
  const std::vector<TokenId> only = {3};
  try {
    m.lexical_vector(only);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "empty lexical input");
  }
  const std::vector<TokenId> bad = {9};
  EXPECT_THROW(m.lexical_vector(bad), ValidationError);
}

TEST(Enrich, ZeroLambdaIsBitIdentical) {
  const auto m = basis_model({1.0, 1.0, 1.0, 1.0}, 0.0);
  const Eigen::Vector3d e(0.1, -2.5e-7, 3.0);
  const Eigen::VectorXd out = m.enrich(e, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(std::memcmp(out.data(), e.data(), sizeof(double) * 3), 0);
}

TEST(Enrich, NormalizedLexicalVectorHasUnitContribution) {
  const auto m = basis_model({1.0, 1.0, 1.0, 1.0}, 1.0);
  EXPECT_NEAR(m.enrich(Eigen::Vector3d::Zero(), Eigen::Vector3d(3, 4, 12)).norm(), 1.0, 1e-12);
  EXPECT_THROW(m.enrich(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()), ValidationError);
}

TEST(Enrich, WithoutNormalizationAddsRawVector) {
  EnrichmentSwitches sw;
  sw.use_l2_norm = false;
  const auto m = basis_model({1.0, 1.0, 1.0, 1.0}, 2.0, sw);
  EXPECT_EQ(m.enrich(Eigen::Vector3d(1, 1, 1), Eigen::Vector3d(3, 0, 0)), Eigen::Vector3d(7, 1, 1));
  EXPECT_EQ(m.enrich(Eigen::Vector3d(1, 1, 1), Eigen::Vector3d::Zero()), Eigen::Vector3d(1, 1, 1));
}

TEST(Enrich, LinearInLambda) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  const auto base = basis_model({1.0, 1.0, 1.0, 1.0}, 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d e(n(rng), n(rng), n(rng));
    const Eigen::Vector3d lex(n(rng), n(rng), n(rng));
    const double l1 = std::abs(n(rng)), l2 = std::abs(n(rng));
    const Eigen::VectorXd sum = base.with_lambda(l1 + l2).enrich(e, lex);
    const Eigen::VectorXd parts = base.with_lambda(l1).enrich(e, lex) + l2 * lex.normalized();
    EXPECT_LT((sum - parts).norm(), 1e-12);
  }
}

TEST(Enrich, DotProductDistributes) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  const auto m = basis_model({1.0, 1.0, 1.0, 1.0}, 1.7);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d eq(n(rng), n(rng), n(rng)), lq(n(rng), n(rng), n(rng));
    const Eigen::Vector3d ep(n(rng), n(rng), n(rng)), lp(n(rng), n(rng), n(rng));
    const double lhs = m.enrich(eq, lq).dot(m.enrich(ep, lp));
    const Eigen::Vector3d uq = lq.normalized(), up = lp.normalized();
    const double rhs = eq.dot(ep) + 1.7 * eq.dot(up) + 1.7 * uq.dot(ep) + 1.7 * 1.7 * uq.dot(up);
    EXPECT_NEAR(lhs, rhs, 1e-5);
  }
}

TEST(Whitening, DiagonalCovarianceBecomesIdentity) {
  // rows with covariance diag(4, 1)
  RowMatrixD rows(4, 2);
  rows << 1, 1, -1, 1, 1, -1, -1, -1;
  rows.col(0) *= std::sqrt(3.0);
  rows.col(1) *= std::sqrt(3.0) / 2.0;
  rows.rowwise() += Eigen::RowVector2d(5.0, -3.0);
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  row_moments(rows, mean, cov);
  ASSERT_NEAR(cov(0, 0), 4.0, 1e-12);
  ASSERT_NEAR(cov(1, 1), 1.0, 1e-12);
  const auto w = fit_whitening(rows);
  row_moments(w.apply_rows(rows), mean, cov);
  EXPECT_NEAR(cov(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(cov(1, 1), 1.0, 1e-9);
  EXPECT_NEAR(cov(0, 1), 0.0, 1e-9);
  EXPECT_LT(mean.norm(), 1e-12);
}

TEST(Whitening, RandomRowsGetIdentityCovarianceAndZeroMean) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 3 + trial;
    RowMatrixD rows(50 + 10 * trial, d);
    Eigen::MatrixXd mix(d, d);
    for (int i = 0; i < rows.size(); ++i) rows.data()[i] = n(rng);
    for (int i = 0; i < mix.size(); ++i) mix.data()[i] = n(rng);
    rows = (rows * mix).eval();
    rows.rowwise() += Eigen::RowVectorXd::Constant(d, 4.0);
    const auto w = fit_whitening(rows);
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    row_moments(w.apply_rows(rows), mean, cov);
    EXPECT_LT((cov - Eigen::MatrixXd::Identity(d, d)).norm(), 1e-3);
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(w.clamped_eigenvalues, 0);
  }
}

TEST(Whitening, WhiteRowsStayWhite) {
  // an orthonormal design: zero mean, identity covariance
  RowMatrixD rows(4, 2);
  rows << 1, 1, -1, 1, 1, -1, -1, -1;
  rows *= std::sqrt(3.0 / 4.0);
  const auto w = fit_whitening(rows);
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  row_moments(w.apply_rows(rows), mean, cov);
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-6);
}

TEST(Whitening, RankDeficientCovarianceIsClamped) {
  RowMatrixD rows(5, 3);
  for (int i = 0; i < 5; ++i) rows.row(i) << i, 2.0 * i, 1.0 + (i % 2);
  const auto w = fit_whitening(rows);
  EXPECT_GE(w.clamped_eigenvalues, 1);
  EXPECT_TRUE(w.transform.allFinite());
}

TEST(Whitening, NeedsMoreRowsThanDimensions) {
  EXPECT_THROW(fit_whitening(RowMatrixD::Ones(3, 3)), ValidationError);
}

TEST(EnrichStore, ZeroLambdaReturnsInput) {
  const auto vocab = testing::fixture_vocab();
  const auto store = testing::random_store(3, 4, 9, Similarity::dot);
  RowMatrixD table = RowMatrixD::Ones(static_cast<Eigen::Index>(vocab.size()), 4);
  const EnrichmentModel m(table, std::vector<double>(vocab.size(), 1.0), std::vector<bool>(vocab.size(), false), 0.0);
  const std::unordered_map<std::string, std::string> texts = {{"p0", "lake"}, {"p1", "river"}, {"p2", "lakes"}};
  const auto out = enrich_store(m, vocab, store, texts);
  EXPECT_EQ(out.ids, store.ids);
  EXPECT_EQ(out.vectors, store.vectors);
}

TEST(EnrichStore, MatchesRowwiseComposition) {
  const auto vocab = testing::fixture_vocab();
  const auto store = testing::random_store(10, 6, 11, Similarity::cosine);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n;
  RowMatrixD table(static_cast<Eigen::Index>(vocab.size()), 6);
  for (int i = 0; i < table.size(); ++i) table.data()[i] = n(rng);
  std::vector<double> weights(vocab.size());
  std::vector<bool> excluded(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    weights[i] = 0.5 + static_cast<double>(i % 5);
    excluded[i] = vocab.is_special(static_cast<TokenId>(i));
  }
  const EnrichmentModel m(table, weights, excluded, 2.5);
  const std::vector<std::string> phrases = {"the great lakes", "Reba McEntire", "saint lawrence river",
                                            "lake michigan's", "which lake?"};
  std::unordered_map<std::string, std::string> texts;
  for (std::size_t i = 0; i < store.size(); ++i) texts[store.ids[i]] = phrases[i % phrases.size()];
  const auto out = enrich_store(m, vocab, store, texts, 3);
  EXPECT_EQ(out.similarity, Similarity::cosine);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto tokens = tokenize(vocab, texts[store.ids[i]]);
    Eigen::VectorXd lex = Eigen::VectorXd::Zero(6);
    double count = 0;
    for (TokenId t : tokens) {
      if (excluded[static_cast<std::size_t>(t)]) continue;
      lex += weights[static_cast<std::size_t>(t)] * table.row(t).transpose();
      count += 1.0;
    }
    lex /= count;
    const Eigen::VectorXd want = store.vectors.row(r).transpose().cast<double>() + 2.5 * lex / lex.norm();
    EXPECT_LT((out.vectors.row(r).transpose().cast<double>() - want).cwiseAbs().maxCoeff(), 1e-6);
  }
  EXPECT_EQ(enrich_store(m, vocab, store, texts, 1).vectors, out.vectors);
}

TEST(EnrichStore, MissingTextNamesTheId) {
  const auto vocab = testing::fixture_vocab();
  const auto store = testing::random_store(2, 4, 9, Similarity::dot);
  const EnrichmentModel m(RowMatrixD::Ones(static_cast<Eigen::Index>(vocab.size()), 4),
                          std::vector<double>(vocab.size(), 1.0), std::vector<bool>(vocab.size(), false), 1.0);
  try {
    enrich_store(m, vocab, store, {{"p0", "lake"}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("p1"), std::string::npos);
  }
}

testing::HeadScales sharp_scales() {
  testing::HeadScales s;
  s.gamma_lo = 4.0;
  s.gamma_hi = 6.0;
  return s;
}

TEST(Fit, ConvergedRowsPredictTheirToken) {
  const auto head = testing::synthetic_enrichment_head();
  OptimizerConfig cfg;
  cfg.seed = 3;
  const auto table = fit_single_token_enrichments(head, cfg, 2);
  ASSERT_EQ(table.vocab_size(), 200U);
  std::size_t improved = 0;
  for (TokenId t = 0; t < 200; ++t) {
    const auto i = static_cast<std::size_t>(t);
    improved += table.losses[i] <= table.initial_losses[i];
    if (!table.converged[i]) continue;
    EXPECT_LE(table.losses[i], cfg.loss_threshold);
    const auto proj = mlm_forward(head, table.s.row(t).transpose());
    Eigen::Index arg = 0;
    proj.probs.maxCoeff(&arg);
    EXPECT_EQ(arg, t);
    EXPECT_GE(proj.probs[t], std::exp(-0.1) - 1e-12);
    EXPECT_NEAR(-std::log(proj.probs[t]), table.losses[i], 1e-9);
  }
  EXPECT_GE(static_cast<double>(improved), 0.99 * 200);
  EXPECT_TRUE(table.unconverged().empty());
}

TEST(Fit, RowsAreStoredAtFloatPrecision) {
  const auto head = random_head(6, 15, 19, sharp_scales());
  const auto table = fit_single_token_enrichments(head, OptimizerConfig{});
  for (int i = 0; i < table.s.size(); ++i) {
    EXPECT_EQ(table.s.data()[i], static_cast<double>(static_cast<float>(table.s.data()[i])));
  }
}

TEST(Fit, DeterministicAcrossThreadCounts) {
  const auto head = random_head(6, 30, 23, sharp_scales());
  OptimizerConfig cfg;
  cfg.seed = 42;
  const auto a = fit_single_token_enrichments(head, cfg, 1);
  const auto b = fit_single_token_enrichments(head, cfg, 4);
  EXPECT_EQ(a.s, b.s);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.steps, b.steps);
  cfg.seed = 43;
  EXPECT_NE(fit_single_token_enrichments(head, cfg, 1).s, a.s);
}

TEST(Fit, StepBudgetIsRespected) {
  const auto head = random_head(6, 12, 29, sharp_scales());
  OptimizerConfig cfg;
  cfg.max_steps = 3;
  cfg.loss_threshold = 1e-6;
  const auto table = fit_single_token_enrichments(head, cfg);
  for (int s : table.steps) EXPECT_LE(s, 3);
  EXPECT_EQ(table.unconverged().size(), 12U);
}

TEST(Fit, InvalidConfigIsRejected) {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.loss_threshold = -1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Fit, TokenSeedsDiffer) {
  EXPECT_NE(token_seed(1, 0), token_seed(1, 1));
  EXPECT_NE(token_seed(1, 0), token_seed(2, 0));
  EXPECT_EQ(token_seed(5, 9), token_seed(5, 9));
}

TEST(Model, SubstituteUsesDecoderRows) {
  const auto head = random_head(4, 30, 31);
  const auto vocab = testing::fixture_vocab();
  EnrichmentSwitches sw;
  sw.use_embedding_matrix_substitute = true;
  sw.use_whitening = false;
  sw.use_idf = false;
  const EnrichmentModel m(head, EnrichmentTable{}, WhiteningParams{}, IdfTable{}, vocab, 1.0, sw);
  const std::vector<TokenId> one = {7};
  EXPECT_EQ(m.lexical_vector(one), head.decoder_weight.row(7).transpose());
}

TEST(Model, SizeMismatchesAreRejected) {
  const auto head = random_head(4, 30, 31);
  const auto vocab = testing::fixture_vocab();
  EnrichmentTable table;
  table.s = RowMatrixD::Zero(10, 4);
  table.converged.assign(10, 1);
  EXPECT_THROW(EnrichmentModel(head, table, WhiteningParams{}, IdfTable{}, vocab, 1.0), ValidationError);
  EXPECT_THROW(EnrichmentModel(RowMatrixD::Zero(3, 2), {1.0}, {false, false, false}, 1.0), ValidationError);
}

TEST(Bundle, EnrichmentRoundTrip) {
  const auto head = random_head(5, 12, 37, sharp_scales());
  const auto table = fit_single_token_enrichments(head, OptimizerConfig{});
  const auto whitening = fit_whitening(table.s);
  EnrichmentTable t2;
  WhiteningParams w2;
  enrichment_from_bundle(enrichment_to_bundle(table, whitening), t2, w2);
  EXPECT_EQ(t2.s, table.s);
  EXPECT_EQ(t2.converged, table.converged);
  EXPECT_LT((w2.transform - whitening.transform).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((w2.mean - whitening.mean).cwiseAbs().maxCoeff(), 1e-6);
}

}  // namespace
}  // namespace lexenrich
