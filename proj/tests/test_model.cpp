#include <gtest/gtest.h>

#include "nbd/checkpoint.hpp"
#include "support.hpp"

using namespace nbd;
using nbd::testing::random_matrix;
using nbd::testing::tiny_model_config;

namespace {

FeatureMatrix random_features(int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 5.0);
  FeatureMatrix f(c, kFeatureDim);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng);
  return f;
}

MotionState random_motion(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  StateVector v;
  for (int i = 0; i < kStateDim; ++i) v[i] = n(rng);
  return MotionState::unflatten(v);
}

}  // namespace

TEST(ModelGradients, FullNetworkMatchesFiniteDifferences) {
  for (auto mix : {MixMode::Output, MixMode::Parameter}) {
    for (bool neural : {true, false}) {
      for (const auto& e : nbd::testing::model_gradient_check(tiny_model_config(neural, mix), 5)) {
        EXPECT_LE(e.max_rel_error, 1e-4) << e.tensor;
        EXPECT_GE(e.checked, std::min<int>(20, static_cast<int>(Model(tiny_model_config(neural, mix)).params().get(e.tensor).value.size())));
      }
    }
  }
}

TEST(NeuralEncoder, OutputHasEmbeddingDimension) {
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(1);
  const auto ne = m.neural_encode(random_features(cfg.channels, rng));
  EXPECT_EQ(ne.ne.size(), cfg.embed_dim);
  EXPECT_TRUE(ne.ne.allFinite());
}

TEST(NeuralEncoder, WrongChannelCountIsShapeMismatch) {
  Model m(tiny_model_config());
  std::mt19937_64 rng(2);
  try {
    m.neural_encode(random_features(5, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(NeuralEncoder, ChannelOrderMatters) {
  Model m(tiny_model_config());
  std::mt19937_64 rng(3);
  FeatureMatrix f = random_features(3, rng);
  const auto a = m.neural_encode(f);
  f.row(0).swap(f.row(2));
  const auto b = m.neural_encode(f);
  EXPECT_GT((a.ne - b.ne).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NeuralEncoder, ZeroHeadGivesFixedOutput) {
  Model m(tiny_model_config());
  for (const char* name : {"enc.head.fc2.w", "enc.head.fc2.b", "enc.head.fc1.w", "enc.head.fc1.b"}) {
    m.params().get(name).value.setZero();
  }
  FeatureMatrix zero = FeatureMatrix::Zero(3, kFeatureDim);
  const auto a = m.neural_encode(zero);
  const auto b = m.neural_encode(zero);
  EXPECT_EQ(a.ne, b.ne);
  EXPECT_EQ(a.ne, Eigen::VectorXd::Zero(a.ne.size()));
}

TEST(Posterior, ShapesAndClamp) {
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(4);
  const auto ne = m.neural_encode(random_features(3, rng));
  const auto g = m.posterior_encode(random_motion(rng), random_motion(rng), ne);
  EXPECT_EQ(g.mu.size(), 16);
  EXPECT_EQ(g.log_sigma.size(), 16);

  // Push the log-sigma head far outside the clamp range.
  auto& b = m.params().get("post.out.b").value;
  b.rightCols(16).setConstant(50.0);
  EXPECT_TRUE((m.posterior_encode(random_motion(rng), random_motion(rng), ne).log_sigma.array() == 4.0).all());
  b.rightCols(16).setConstant(-50.0);
  EXPECT_TRUE((m.posterior_encode(random_motion(rng), random_motion(rng), ne).log_sigma.array() == -8.0).all());
}

TEST(Posterior, BehavioralVariantHasNoNeuralParameters) {
  Model nb(tiny_model_config(true)), b(tiny_model_config(false));
  EXPECT_FALSE(b.params().contains("enc.in.w"));
  EXPECT_TRUE(nb.params().contains("enc.in.w"));
  EXPECT_LT(b.params().count(), nb.params().count());
  EXPECT_EQ(b.params().get("post.h1.w").value.rows(), 10);
  std::mt19937_64 rng(5);
  EXPECT_NO_THROW(b.posterior_encode(random_motion(rng), random_motion(rng), std::nullopt));
  EXPECT_THROW(nb.posterior_encode(random_motion(rng), random_motion(rng), std::nullopt), Error);
}

TEST(Decoder, GatingIsAConvexWeighting) {
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(6);
  ad::Tape t(false);
  const Eigen::Index batch = 16;
  auto d = m.decode(t, t.constant(random_matrix(batch, 16, rng, 3.0)), t.constant(random_matrix(batch, 6, rng, 3.0)),
                    t.constant(random_matrix(batch, kStateDim, rng, 3.0)));
  const Matrix& w = d.gate.value();
  EXPECT_EQ(w.cols(), 6);
  EXPECT_GE(w.minCoeff(), 0.0);
  for (Eigen::Index r = 0; r < batch; ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
}

TEST(Decoder, OneHotGateSelectsExpert) {
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(7);
  const Matrix z = random_matrix(3, 16, rng), ne = random_matrix(3, 6, rng), prev = random_matrix(3, kStateDim, rng);
  for (int k = 0; k < cfg.experts; ++k) {
    Matrix gate = Matrix::Zero(3, cfg.experts);
    gate.col(k).setOnes();
    ad::Tape t(false);
    auto d = m.decode(t, t.constant(z), t.constant(ne), t.constant(prev), &gate);
    EXPECT_EQ(d.output.value(), d.experts[static_cast<std::size_t>(k)].value());
  }
}

TEST(Decoder, LinearExpertsStayInConvexHull) {
  // Each expert reduced to a constant affine map; the blend must stay within
  // the per-coordinate range of the expert outputs.
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(8);
  for (int k = 0; k < cfg.experts; ++k) {
    const std::string pre = "dec.exp" + std::to_string(k);
    m.params().get(pre + ".l2.w").value.setZero();
    m.params().get(pre + ".l2.b").value = random_matrix(1, kStateDim, rng, 5.0);
  }
  ad::Tape t(false);
  auto d = m.decode(t, t.constant(random_matrix(4, 16, rng)), t.constant(random_matrix(4, 6, rng)),
                    t.constant(random_matrix(4, kStateDim, rng)));
  const Matrix& out = d.output.value();
  for (Eigen::Index r = 0; r < 4; ++r) {
    for (Eigen::Index c = 0; c < kStateDim; ++c) {
      double lo = 1e300, hi = -1e300;
      for (const auto& e : d.experts) {
        lo = std::min(lo, e.value()(r, c));
        hi = std::max(hi, e.value()(r, c));
      }
      EXPECT_GE(out(r, c), lo - 1e-12);
      EXPECT_LE(out(r, c), hi + 1e-12);
    }
  }
}

TEST(Decoder, ParameterBlendingWithOneHotGateMatchesExpert) {
  auto cfg = tiny_model_config(true, MixMode::Parameter);
  Model pm(cfg);
  auto ocfg = cfg;
  ocfg.mix = MixMode::Output;
  Model om(ocfg);
  for (std::size_t i = 0; i < om.params().size(); ++i) om.params().at(i).value = pm.params().at(i).value;
  std::mt19937_64 rng(9);
  const Matrix z = random_matrix(2, 16, rng), ne = random_matrix(2, 6, rng), prev = random_matrix(2, kStateDim, rng);
  Matrix gate = Matrix::Zero(2, cfg.experts);
  gate.col(2).setOnes();
  ad::Tape t(false);
  auto a = pm.decode(t, t.constant(z), t.constant(ne), t.constant(prev), &gate);
  auto b = om.decode(t, t.constant(z), t.constant(ne), t.constant(prev), &gate);
  EXPECT_LT((a.output.value() - b.output.value()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Decoder, Deterministic) {
  Model m(tiny_model_config());
  std::mt19937_64 rng(10);
  const auto ne = m.neural_encode(random_features(3, rng));
  const auto prev = random_motion(rng);
  Eigen::VectorXd z = random_matrix(16, 1, rng);
  EXPECT_EQ(m.decode_state(z, ne, prev).flatten(), m.decode_state(z, ne, prev).flatten());
}

TEST(Reparameterize, Identities) {
  LatentGaussian g{Eigen::VectorXd::LinSpaced(16, -2, 2), Eigen::VectorXd::Constant(16, 0.3)};
  EXPECT_EQ(reparameterize(g, Eigen::VectorXd::Zero(16)), g.mu);
  g.log_sigma.setConstant(-8.0);
  const Eigen::VectorXd noise = Eigen::VectorXd::Constant(16, 2.5);
  EXPECT_LE((reparameterize(g, noise) - g.mu).cwiseAbs().maxCoeff(), std::exp(-8.0) * 2.5 + 1e-15);
  EXPECT_THROW(reparameterize(g, Eigen::VectorXd::Zero(3)), Error);
}

TEST(Reparameterize, MonteCarloMean) {
  LatentGaussian g{Eigen::VectorXd::LinSpaced(16, -1, 1), Eigen::VectorXd::LinSpaced(16, -1, 0.5)};
  std::mt19937_64 rng(11);
  Normal normal;
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(16);
  Eigen::VectorXd noise(16);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 16; ++k) noise[k] = normal(rng);
    sum += reparameterize(g, noise);
  }
  const Eigen::VectorXd mean = sum / n;
  for (int k = 0; k < 16; ++k) EXPECT_LT(std::abs(mean[k] - g.mu[k]), 4.0 * g.sigma()[k] / std::sqrt(n)) << k;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto cfg = tiny_model_config();
  Model m(cfg);
  std::mt19937_64 rng(12);
  m.params().get("enc.in.w").value = random_matrix(30, 8, rng);
  m.quantize_to_float();
  const auto bytes = encode_checkpoint(m, io::Provenance{"test", "abc", 7});
  const auto loaded = decode_checkpoint(bytes);
  ASSERT_TRUE(loaded.provenance);
  EXPECT_EQ(loaded.provenance->seed, 7u);
  EXPECT_EQ(loaded.model.config().to_json(), cfg.to_json());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(loaded.model.params().name(i), m.params().name(i));
    EXPECT_EQ(loaded.model.params().at(i).value, m.params().at(i).value);
  }
  Model copy = loaded.model;
  const auto f = random_features(3, rng);
  const auto prev = random_motion(rng);
  const Eigen::VectorXd z = random_matrix(16, 1, rng);
  const auto ne1 = m.neural_encode(f), ne2 = copy.neural_encode(f);
  EXPECT_EQ(ne1.ne, ne2.ne);
  EXPECT_EQ(m.decode_state(z, ne1, prev).flatten(), copy.decode_state(z, ne2, prev).flatten());
  EXPECT_EQ(encode_checkpoint(copy, io::Provenance{"test", "abc", 7}), bytes);
}

TEST(Checkpoint, RejectsWrongMagicAndVersion) {
  Model m(tiny_model_config(false));
  auto bytes = encode_checkpoint(m);
  auto bad = bytes;
  bad[4] = '2';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
  }
  bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
  try {
    decode_checkpoint(bytes.substr(0, bytes.size() / 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}
