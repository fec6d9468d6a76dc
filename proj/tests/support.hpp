#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include <random>
#include <vector>

#include "nbd/gradcheck.hpp"
#include "nbd/training.hpp"

namespace nbd::testing {

// Small but structurally complete configuration for gradient checks.
inline ModelConfig tiny_model_config(bool neural = true, MixMode mix = MixMode::Output) {
  ModelConfig c;
  c.channels = 3;
  c.use_neural = neural;
  c.embed_dim = 6;
  c.encoder_hidden = 8;
  c.encoder_blocks = 2;
  c.encoder_heads = 2;
  c.encoder_ff = 12;
  c.gating_hidden = 10;
  c.expert_hidden = 12;
  c.posterior_hidden = 10;
  c.mix = mix;
  return c;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Gradient check of one full ELBO evaluation (encoder, posterior and
// decoder) against central differences. Parameters are jittered away from
// their initial values so biases and layer-norm gains are generic.
inline std::vector<ad::GradCheckEntry> model_gradient_check(const ModelConfig& cfg, std::uint64_t seed,
                                                            int per_tensor = 24) {
  Model model(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params().at(i);
    if (!p.trainable) continue;
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] += n(rng);
  }
  const Eigen::Index batch = 2;
  const Matrix prev = random_matrix(batch, cfg.state_dim, rng);
  const Matrix curr = random_matrix(batch, cfg.state_dim, rng);
  const Matrix feats = random_matrix(batch * cfg.channels, cfg.feature_dim, rng);
  const Matrix eps = random_matrix(batch, cfg.latent_dim, rng);
  auto loss = [&](ad::Tape& t) {
    std::optional<Var> ne;
    if (cfg.use_neural) ne = model.encode_neural(t, feats, batch);
    Var pv = t.constant(prev), cv = t.constant(curr);
    auto post = model.encode_posterior(t, pv, cv, ne);
    Var z = ad::add(post.mu, ad::mul(ad::exp(post.log_sigma), t.constant(eps)));
    auto dec = model.decode(t, z, ne, pv);
    return elbo_terms(cv, dec.output, post.mu, post.log_sigma, 0.1).total;
  };
  return ad::gradient_check(model.params(), loss, per_tensor, seed + 1);
}

}  // namespace nbd::testing
