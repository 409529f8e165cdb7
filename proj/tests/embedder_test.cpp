#include <gtest/gtest.h>

#include <cmath>

#include "sse/embedder.hpp"
#include "sse/encoder.hpp"
#include "sse/error.hpp"
#include "sse/ntxent.hpp"
#include "sse/rng.hpp"
#include "test_support.hpp"

using namespace sse;
using sse::tu::TempDir;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.input_dim = 6;
  cfg.conv_channels = 8;
  cfg.n_heads = 2;
  cfg.ffn_dim = 12;
  cfg.projection_dim = 8;
  return cfg;
}

// Instance-discrimination data: pair i holds two noisy copies of one random
// sequence.
FeatureStore paired_store(Rng& rng, int n_pairs, int dim, std::vector<PositivePair>& pairs) {
  FeatureStore store;
  for (int i = 0; i < n_pairs; ++i) {
    const Eigen::MatrixXd base = random_matrix(rng, 12, dim);
    for (const char* side : {"a", "b"}) {
      FeatureSequence f;
      f.data = (base + 0.1 * random_matrix(rng, 12, dim)).cast<float>();
      store.put("p" + std::to_string(i) + side, f);
    }
    pairs.push_back({{"p" + std::to_string(i) + "a", 0, 12}, {"p" + std::to_string(i) + "b", 0, 12}, Provenance::topline});
  }
  return store;
}

}  // namespace

TEST(Ntxent, SinglePairIsZero) {
  Rng rng(1);
  const auto r = ntxent_loss(random_matrix(rng, 2, 5), 0.15);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_LT(r.grad.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ntxent, OrthogonalPairsOracle) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(4, 4);
  z(0, 0) = z(1, 0) = 1.0;
  z(2, 1) = z(3, 1) = 2.0;
  // Anchor 0 also sees row 1 as positive and rows 2, 3 at cosine 0; exact
  // oracle is -log(e^{1/t} / (e^{1/t} + 2)).
  const double t = 0.15;
  const double expected = -std::log(std::exp(1 / t) / (std::exp(1 / t) + 2.0));
  const auto r = ntxent_loss(z, t);
  EXPECT_NEAR(r.loss, expected, 1e-12);
  EXPECT_NEAR(r.loss, 0.0025420339, 1e-9);
}

TEST(Ntxent, UniformSimilaritiesGiveChanceLevel) {
  // Rows are 2n identical vectors, so every similarity is 1.
  for (int n : {2, 4, 16}) {
    const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(2 * n, 3);
    EXPECT_NEAR(ntxent_loss(z, 0.15).loss, std::log(2.0 * n - 1), 1e-12) << n;
  }
}

TEST(Ntxent, ScaleInvariant) {
  Rng rng(2);
  const auto z = random_matrix(rng, 8, 6);
  EXPECT_NEAR(ntxent_loss(z, 0.15).loss, ntxent_loss(10.0 * z, 0.15).loss, 1e-9);
}

TEST(Ntxent, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const auto z = random_matrix(rng, 8, 5);
  const auto r = ntxent_loss(z, 0.15);
  const double eps = 1e-4;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      auto zp = z, zm = z;
      zp(i, j) += eps;
      zm(i, j) -= eps;
      const double fd = (ntxent_loss(zp, 0.15).loss - ntxent_loss(zm, 0.15).loss) / (2 * eps);
      worst = std::max(worst, std::abs(fd - r.grad(i, j)) / std::max(1e-3, std::abs(fd)));
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(Ntxent, Errors) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Ones(4, 3);
  z.row(2).setZero();
  EXPECT_THROW(ntxent_loss(z, 0.15), NumericalError);
  EXPECT_THROW(ntxent_loss(Eigen::MatrixXd::Ones(3, 3), 0.15), UsageError);
  z.row(2).setConstant(std::nan(""));
  EXPECT_THROW(ntxent_loss(z, 0.15), NumericalError);
}

TEST(Encoder, DeterministicInference) {
  Rng rng(4);
  Encoder<float> enc(small_config());
  enc.initialize(rng);
  Eigen::MatrixXf x(10, 6);
  for (Eigen::Index t = 0; t < 10; ++t) x.row(t) = Eigen::RowVectorXf::LinSpaced(6, 0.f, 1.f);
  const auto a = enc.encode(x), b = enc.encode(x);
  ASSERT_EQ(a.size(), 8);
  EXPECT_TRUE(a.allFinite());
  EXPECT_EQ(a, b);
}

TEST(Encoder, FramePermutationChangesEmbedding) {
  Rng rng(5);
  Encoder<double> enc(small_config());
  enc.initialize(rng);
  const auto x = random_matrix(rng, 9, 6);
  auto y = x;
  y.row(2).swap(y.row(6));
  EXPECT_GT((enc.encode(x) - enc.encode(y)).norm(), 1e-6);
}

TEST(Encoder, MinimumLength) {
  Rng rng(6);
  Encoder<double> enc(small_config());
  enc.initialize(rng);
  EXPECT_EQ(enc.min_frames(), 4);
  EXPECT_TRUE(enc.encode(random_matrix(rng, 4, 6)).allFinite());
  EXPECT_THROW(enc.encode(random_matrix(rng, 3, 6)), DataError);
  EXPECT_THROW(enc.encode(random_matrix(rng, 5, 7)), DataError);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  auto cfg = small_config();
  Encoder<double> enc(cfg);
  enc.initialize(rng);
  // Non-trivial norm gains and biases so every gradient path is exercised.
  for (auto& v : enc.params().values()) v += 0.05 * rng.normal();
  const auto x = random_matrix(rng, 7, cfg.input_dim);
  const Eigen::VectorXd w = random_matrix(rng, cfg.conv_channels, 1);

  Encoder<double>::Cache cache;
  const auto z = enc.encode(x, cache, nullptr);
  auto grad = enc.make_gradient();
  enc.backward(cache, w, grad);

  auto objective = [&](Encoder<double>& e) { return w.dot(e.encode(x)); };
  const double eps = 1e-6;
  auto& p = enc.params().values();
  int checked = 0, bad = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    // Head tensors are not part of the encoder objective.
    if (i >= enc.params().layout().info(Tensor::head_w1).offset) break;
    const double keep = p[i];
    p[i] = keep + eps;
    const double fp = objective(enc);
    p[i] = keep - eps;
    const double fm = objective(enc);
    p[i] = keep;
    const double fd = (fp - fm) / (2 * eps);
    ++checked;
    if (std::abs(fd - grad.values()[i]) > 1e-4 * std::max(1.0, std::abs(fd))) ++bad;
  }
  EXPECT_GT(checked, 500);
  // Max-pool kinks can flip an argmax inside the stencil; allow a handful.
  EXPECT_LE(bad, checked / 200) << bad << " of " << checked;
  EXPECT_EQ(z, enc.encode(x));
}

TEST(Encoder, ProjectionHeadGradient) {
  Rng rng(8);
  Encoder<double> enc(small_config());
  enc.initialize(rng);
  const Eigen::VectorXd z = random_matrix(rng, 8, 1), w = random_matrix(rng, 8, 1);
  Encoder<double>::HeadCache hc;
  const auto out = enc.project(z, &hc);
  ASSERT_EQ(out.size(), 8);
  auto grad = enc.make_gradient();
  const auto dz = enc.project_backward(hc, w, grad);
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp(i) += eps;
    zm(i) -= eps;
    const double fd = (w.dot(enc.project(zp)) - w.dot(enc.project(zm))) / (2 * eps);
    EXPECT_NEAR(dz(i), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Encoder, ProjectionHeadZeroAndIdentity) {
  Rng rng(9);
  auto cfg = small_config();
  Encoder<double> enc(cfg);
  enc.initialize(rng);
  for (auto t : {Tensor::head_w1, Tensor::head_b1, Tensor::head_w2, Tensor::head_b2}) enc.params()[t].setZero();
  const Eigen::VectorXd z = random_matrix(rng, 8, 1);
  EXPECT_EQ(enc.project(z), Eigen::VectorXd::Zero(8));
  enc.params()[Tensor::head_w1].setIdentity();
  enc.params()[Tensor::head_w2].setIdentity();
  const Eigen::VectorXd nonneg = z.cwiseAbs();
  EXPECT_EQ(enc.project(nonneg), nonneg);

  cfg.projection_dim = 5;
  Encoder<double> other(cfg);
  other.initialize(rng);
  EXPECT_EQ(other.project(z).size(), 5);
}

TEST(Train, EmptyPairListFails) {
  FeatureStore store;
  EXPECT_THROW(train({}, store, small_config()), UsageError);
}

TEST(Train, LearnsBelowChanceAndIsDeterministic) {
  Rng rng(10);
  std::vector<PositivePair> pairs;
  const auto store = paired_store(rng, 80, 6, pairs);
  auto cfg = small_config();
  cfg.dropout_p = 0.0;
  cfg.batch_pairs = 8;
  cfg.learning_rate = 3e-3;
  cfg.max_steps = 150;
  cfg.eval_every = 25;
  cfg.seed = 3;
  const auto a = train(pairs, store, cfg);
  ASSERT_TRUE(a.best_dev_loss.has_value());
  EXPECT_EQ(a.dev_pairs, 8u);
  EXPECT_EQ(a.train_pairs, 72u);
  EXPECT_LT(*a.best_dev_loss, std::log(2.0 * cfg.batch_pairs - 1));
  const auto b = train(pairs, store, cfg);
  EXPECT_EQ(a.model.params().values(), b.model.params().values());
  ASSERT_EQ(a.log.size(), b.log.size());
  EXPECT_EQ(a.log.back().loss, b.log.back().loss);
}

TEST(Embed, UnitRowsAndDeterminism) {
  Rng rng(11);
  Encoder<float> enc(small_config());
  enc.initialize(rng);
  FeatureStore store;
  FeatureSequence f;
  f.data = random_matrix(rng, 100, 6).cast<float>();
  f.source = {"u", 0.0, 1.0};
  store.put("u", f);
  const std::vector<SpeechInterval> ivs{{"u", 0.1, 0.5}, {"u", 0.1, 0.5}, {"u", 0.0, 0.02}, {"u", 0.6, 1.0}};
  for (int jobs : {1, 3}) {
    const auto e = embed_intervals(enc, ivs, store, jobs);
    ASSERT_EQ(e.rows(), 4);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(e.row(i).norm(), 1.0, 1e-5);
    EXPECT_EQ(e.row(0), e.row(1));
  }
  EXPECT_THROW(embed_intervals(enc, {{"u", 2.0, 2.5}}, store), DataError);
  EXPECT_THROW(embed_intervals(enc, {{"v", 0.0, 0.5}}, store), DataError);
}

TEST(Maxpool, Examples) {
  FeatureSequence f;
  f.data.resize(2, 2);
  f.data << 1, 0, 0, 1;
  const auto v = maxpool_baseline(f);
  EXPECT_NEAR(v(0), 0.70710678, 1e-6);
  EXPECT_NEAR(v(1), 0.70710678, 1e-6);

  FeatureSequence one;
  one.data.resize(1, 3);
  one.data << 3, 0, 4;
  EXPECT_TRUE(maxpool_baseline(one).isApprox(Eigen::Vector3f(0.6f, 0.f, 0.8f)));

  Rng rng(12);
  FeatureSequence g;
  g.data = random_matrix(rng, 20, 5).cast<float>();
  FeatureSequence h = g;
  h.data.row(3).swap(h.data.row(17));
  h.data.row(0).swap(h.data.row(9));
  EXPECT_EQ(maxpool_baseline(g), maxpool_baseline(h));
}

TEST(Checkpoint, RoundTripAndErrors) {
  TempDir dir;
  Rng rng(13);
  auto cfg = small_config();
  cfg.seed = 99;
  Encoder<float> enc(cfg);
  enc.initialize(rng);
  save_model(enc, dir / "m.ssem");
  const auto back = load_model(dir / "m.ssem");
  EXPECT_EQ(back.config(), cfg);
  EXPECT_EQ(back.params().values(), enc.params().values());
  const Eigen::MatrixXf x = random_matrix(rng, 6, 6).cast<float>();
  EXPECT_EQ(back.encode(x), enc.encode(x));

  const auto bytes = tu::read_bytes(dir / "m.ssem");
  tu::write_text(dir / "t.ssem", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_model(dir / "t.ssem"), DataError);
  tu::write_text(dir / "b.ssem", "XXXX" + bytes.substr(4));
  EXPECT_THROW(load_model(dir / "b.ssem"), DataError);
}
