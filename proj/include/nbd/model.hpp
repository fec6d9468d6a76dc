#pragma once

// Neural-Behavioral networks: transformer neural encoder, variational
// behavior encoder (posterior), and mixture-of-experts decoder.

#include <json.hpp>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nbd/autodiff.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/neural.hpp"

namespace nbd {

using ad::Matrix;
using ad::Var;

enum class MixMode { Output, Parameter };

struct ModelConfig {
  int state_dim = kStateDim;
  int channels = 62;
  int feature_dim = kFeatureDim;
  bool use_neural = true;
  int embed_dim = 32;
  int encoder_hidden = 64;
  int encoder_blocks = 2;
  int encoder_heads = 4;
  int encoder_ff = 128;
  int latent_dim = 16;
  int experts = 6;
  int gating_hidden = 64;  // three layers: in -> h -> h -> experts
  int expert_hidden = 128;
  int posterior_hidden = 128;
  MixMode mix = MixMode::Output;
  std::uint64_t init_seed = 1;

  int neural_dim() const { return use_neural ? embed_dim : 0; }

  nlohmann::json to_json() const {
    return {{"state_dim", state_dim},         {"channels", channels},
            {"feature_dim", feature_dim},     {"use_neural", use_neural},
            {"embed_dim", embed_dim},         {"encoder_hidden", encoder_hidden},
            {"encoder_blocks", encoder_blocks}, {"encoder_heads", encoder_heads},
            {"encoder_ff", encoder_ff},       {"latent_dim", latent_dim},
            {"experts", experts},             {"gating_hidden", gating_hidden},
            {"expert_hidden", expert_hidden}, {"posterior_hidden", posterior_hidden},
            {"mix", mix == MixMode::Output ? "output" : "parameter"},
            {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.state_dim = j.value("state_dim", c.state_dim);
    c.channels = j.value("channels", c.channels);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.use_neural = j.value("use_neural", c.use_neural);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.encoder_heads = j.value("encoder_heads", c.encoder_heads);
    c.encoder_ff = j.value("encoder_ff", c.encoder_ff);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.experts = j.value("experts", c.experts);
    c.gating_hidden = j.value("gating_hidden", c.gating_hidden);
    c.expert_hidden = j.value("expert_hidden", c.expert_hidden);
    c.posterior_hidden = j.value("posterior_hidden", c.posterior_hidden);
    c.mix = j.value("mix", std::string("output")) == "parameter" ? MixMode::Parameter : MixMode::Output;
    c.init_seed = j.value("init_seed", c.init_seed);
    c.validate();
    return c;
  }

  void validate() const {
    require(state_dim > 0 && latent_dim > 0 && experts > 0, ErrorCode::InvalidConfig, "model dims must be positive");
    if (use_neural) {
      require(channels > 0 && feature_dim > 0 && embed_dim > 0, ErrorCode::InvalidConfig, "neural dims must be positive");
      require(encoder_heads > 0 && encoder_hidden % encoder_heads == 0, ErrorCode::InvalidConfig,
              "encoder hidden size must be divisible by head count");
    }
  }
};

struct NeuralEmbedding {
  Eigen::VectorXd ne;
};

struct LatentGaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_sigma;

  Eigen::VectorXd sigma() const { return log_sigma.array().exp().matrix(); }
};

inline constexpr double kLogSigmaMin = -8.0;
inline constexpr double kLogSigmaMax = 4.0;
inline constexpr double kFeatureLogEps = 1e-6;

// z = mu + sigma * noise.
inline Eigen::VectorXd reparameterize(const LatentGaussian& g, const Eigen::VectorXd& noise) {
  require(noise.size() == g.mu.size() && g.log_sigma.size() == g.mu.size(), ErrorCode::ShapeMismatch,
          "latent size mismatch");
  return g.mu + (g.sigma().array() * noise.array()).matrix();
}

class Model {
 public:
  Model() = default;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  // Rounds every tensor to float32 so checkpoints reproduce values exactly.
  void quantize_to_float() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& v = params_.at(i).value;
      v = v.cast<float>().cast<double>();
    }
  }

  // ---- normalization (non-trainable tensors) ----

  void set_state_normalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& std) {
    require(mean.size() == cfg_.state_dim && std.size() == cfg_.state_dim, ErrorCode::ShapeMismatch,
            "state normalization size");
    params_.get("norm.state_mean").value = mean.transpose();
    params_.get("norm.state_std").value = std.transpose();
  }

  void set_feature_normalization(const Matrix& mean, const Matrix& std) {
    require(cfg_.use_neural, ErrorCode::InvalidConfig, "model has no neural branch");
    require(mean.rows() == cfg_.channels && mean.cols() == cfg_.feature_dim && std.rows() == mean.rows() &&
                std.cols() == mean.cols(),
            ErrorCode::ShapeMismatch, "feature normalization shape");
    params_.get("norm.feat_mean").value = mean;
    params_.get("norm.feat_std").value = std;
  }

  // Rows of raw 151-vectors -> standardized rows.
  Matrix normalize_states(const Matrix& raw) const {
    require(raw.cols() == cfg_.state_dim, ErrorCode::ShapeMismatch, "state width");
    const auto& m = params_.get("norm.state_mean").value;
    const auto& s = params_.get("norm.state_std").value;
    Matrix out = raw;
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = (raw.row(r) - m).cwiseQuotient(s);
    return out;
  }

  Matrix denormalize_states(const Matrix& norm) const {
    const auto& m = params_.get("norm.state_mean").value;
    const auto& s = params_.get("norm.state_std").value;
    Matrix out = norm;
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = norm.row(r).cwiseProduct(s) + m;
    return out;
  }

  // Stacked raw feature windows ((B*C) x F) -> log-standardized encoder input.
  Matrix normalize_features(const Matrix& raw) const {
    require(cfg_.use_neural, ErrorCode::InvalidConfig, "model has no neural branch");
    require(raw.cols() == cfg_.feature_dim && raw.rows() % cfg_.channels == 0, ErrorCode::ShapeMismatch,
            "feature block shape");
    const auto& m = params_.get("norm.feat_mean").value;
    const auto& s = params_.get("norm.feat_std").value;
    Matrix out(raw.rows(), raw.cols());
    const Eigen::Index c = cfg_.channels;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      const Eigen::Index ch = r % c;
      for (Eigen::Index k = 0; k < raw.cols(); ++k) {
        out(r, k) = (std::log(std::max(raw(r, k), 0.0) + kFeatureLogEps) - m(ch, k)) / s(ch, k);
      }
    }
    return out;
  }

  // ---- differentiable forward passes on a tape ----

  // features: normalized (B*C) x F  ->  B x embed_dim
  Var encode_neural(ad::Tape& t, const Matrix& features, Eigen::Index batch) {
    require(cfg_.use_neural, ErrorCode::InvalidConfig, "model has no neural branch");
    require(features.rows() == batch * cfg_.channels && features.cols() == cfg_.feature_dim,
            ErrorCode::ShapeMismatch, "neural encoder expects C x 30 per sample");
    Var x = t.constant(features);
    Var h = lin(t, x, "enc.in");
    Var tok = ad::assemble_tokens(h, p(t, "enc.pos"), p(t, "enc.global"), batch);
    const Eigen::Index tokens = cfg_.channels + 1;
    for (int b = 0; b < cfg_.encoder_blocks; ++b) {
      const std::string pre = "enc.blk" + std::to_string(b);
      Var a = ad::layer_norm(tok, p(t, pre + ".ln1.g"), p(t, pre + ".ln1.b"));
      Var q = lin(t, a, pre + ".q");
      Var k = lin(t, a, pre + ".k");
      Var v = lin(t, a, pre + ".v");
      Var o = ad::attention(q, k, v, tokens, cfg_.encoder_heads);
      tok = ad::add(tok, lin(t, o, pre + ".o"));
      Var m = ad::layer_norm(tok, p(t, pre + ".ln2.g"), p(t, pre + ".ln2.b"));
      tok = ad::add(tok, lin(t, ad::gelu(lin(t, m, pre + ".ff1")), pre + ".ff2"));
    }
    Var g = ad::take_group_rows(tok, tokens, 0);
    g = ad::layer_norm(g, p(t, "enc.head.ln.g"), p(t, "enc.head.ln.b"));
    return lin(t, ad::gelu(lin(t, g, "enc.head.fc1")), "enc.head.fc2");
  }

  struct PosteriorOut {
    Var mu;
    Var log_sigma;
  };

  // prev, curr: normalized B x state_dim; ne: B x embed_dim or absent.
  PosteriorOut encode_posterior(ad::Tape& t, Var prev, Var curr, std::optional<Var> ne) {
    Var b = ad::concat_cols({prev, curr});
    b = ad::elu(lin(t, b, "post.b1"));
    b = ad::elu(lin(t, b, "post.b2"));
    Var joint = ne ? ad::concat_cols({b, *ne}) : b;
    Var h = ad::elu(lin(t, joint, "post.h1"));
    Var out = lin(t, h, "post.out");
    PosteriorOut r;
    r.mu = ad::slice_cols(out, 0, cfg_.latent_dim);
    r.log_sigma = ad::clamp(ad::slice_cols(out, cfg_.latent_dim, cfg_.latent_dim), kLogSigmaMin, kLogSigmaMax);
    return r;
  }

  struct DecodeOut {
    Var output;                // B x state_dim, normalized space
    Var gate;                  // B x experts
    std::vector<Var> experts;  // per-expert outputs (output mixing only)
  };

  // z: B x latent, ne: B x embed or absent, prev: normalized B x state_dim.
  // `forced_gate` replaces the learned gating weights when given.
  DecodeOut decode(ad::Tape& t, Var z, std::optional<Var> ne, Var prev, const Matrix* forced_gate = nullptr) {
    std::vector<Var> parts{z};
    if (ne) parts.push_back(*ne);
    parts.push_back(prev);
    Var x = ad::concat_cols(parts);

    DecodeOut d;
    if (forced_gate) {
      require(forced_gate->rows() == x.rows() && forced_gate->cols() == cfg_.experts, ErrorCode::ShapeMismatch,
              "forced gate shape");
      d.gate = t.constant(*forced_gate);
    } else {
      Var g = ad::elu(lin(t, x, "dec.gate.l0"));
      g = ad::elu(lin(t, g, "dec.gate.l1"));
      d.gate = ad::softmax_rows(lin(t, g, "dec.gate.l2"));
    }

    if (cfg_.mix == MixMode::Output) {
      for (int k = 0; k < cfg_.experts; ++k) {
        const std::string pre = "dec.exp" + std::to_string(k);
        Var h = ad::elu(lin(t, x, pre + ".l0"));
        h = ad::elu(lin(t, h, pre + ".l1"));
        d.experts.push_back(lin(t, h, pre + ".l2"));
      }
      d.output = ad::mix(d.gate, d.experts);
    } else {
      // Blending expert weights per sample equals blending each layer's
      // affine outputs, since every layer is affine in its weights.
      Var h = x;
      for (int l = 0; l < 3; ++l) {
        std::vector<Var> outs;
        for (int k = 0; k < cfg_.experts; ++k) {
          outs.push_back(lin(t, h, "dec.exp" + std::to_string(k) + ".l" + std::to_string(l)));
        }
        h = ad::mix(d.gate, outs);
        if (l < 2) h = ad::elu(h);
      }
      d.output = h;
    }
    return d;
  }

  // ---- single-sample inference wrappers ----

  NeuralEmbedding neural_encode(const FeatureMatrix& features) {
    require(features.rows() == cfg_.channels, ErrorCode::ShapeMismatch,
            "expected " + std::to_string(cfg_.channels) + " channels, got " + std::to_string(features.rows()));
    ad::Tape t(false);
    Var ne = encode_neural(t, normalize_features(Matrix(features)), 1);
    return {ne.value().row(0).transpose()};
  }

  LatentGaussian posterior_encode(const MotionState& prev, const MotionState& curr,
                                  const std::optional<NeuralEmbedding>& ne) {
    ad::Tape t(false);
    Var pv = t.constant(normalize_states(Matrix(prev.flatten().transpose())));
    Var cv = t.constant(normalize_states(Matrix(curr.flatten().transpose())));
    auto out = encode_posterior(t, pv, cv, embedding_var(t, ne));
    return {out.mu.value().row(0).transpose(), out.log_sigma.value().row(0).transpose()};
  }

  MotionState decode_state(const Eigen::VectorXd& z, const std::optional<NeuralEmbedding>& ne,
                           const MotionState& prev) {
    require(z.size() == cfg_.latent_dim, ErrorCode::ShapeMismatch, "latent size");
    ad::Tape t(false);
    Var zv = t.constant(Matrix(z.transpose()));
    Var pv = t.constant(normalize_states(Matrix(prev.flatten().transpose())));
    auto d = decode(t, zv, embedding_var(t, ne), pv);
    const Matrix raw = denormalize_states(d.output.value());
    return MotionState::unflatten(raw.row(0).transpose());
  }

 private:
  std::optional<Var> embedding_var(ad::Tape& t, const std::optional<NeuralEmbedding>& ne) const {
    if (!cfg_.use_neural) return std::nullopt;
    require(ne.has_value() && ne->ne.size() == cfg_.embed_dim, ErrorCode::ShapeMismatch,
            "neural embedding required by this model");
    return t.constant(Matrix(ne->ne.transpose()));
  }

  Var p(ad::Tape& t, const std::string& name) { return t.param(params_.get(name)); }

  Var lin(ad::Tape& t, Var x, const std::string& name) {
    return ad::linear(x, p(t, name + ".w"), p(t, name + ".b"));
  }

  void add_linear(const std::string& name, int in, int out, std::mt19937_64& rng) {
    auto& w = params_.add(name + ".w", in, out);
    auto& b = params_.add(name + ".b", 1, out);
    ad::init_linear(w, b, rng);
  }

  void add_layer_norm(const std::string& name, int dim) {
    params_.add(name + ".g", 1, dim).value.setOnes();
    params_.add(name + ".b", 1, dim);
  }

  void build() {
    std::mt19937_64 rng(cfg_.init_seed);
    params_.add("norm.state_mean", 1, cfg_.state_dim, false);
    params_.add("norm.state_std", 1, cfg_.state_dim, false).value.setOnes();

    if (cfg_.use_neural) {
      params_.add("norm.feat_mean", cfg_.channels, cfg_.feature_dim, false);
      params_.add("norm.feat_std", cfg_.channels, cfg_.feature_dim, false).value.setOnes();
      const int h = cfg_.encoder_hidden;
      add_linear("enc.in", cfg_.feature_dim, h, rng);
      std::normal_distribution<double> nd(0.0, 0.02);
      auto& pos = params_.add("enc.pos", cfg_.channels, h);
      for (Eigen::Index i = 0; i < pos.value.size(); ++i) pos.value.data()[i] = nd(rng);
      auto& glob = params_.add("enc.global", 1, h);
      for (Eigen::Index i = 0; i < glob.value.size(); ++i) glob.value.data()[i] = nd(rng);
      for (int b = 0; b < cfg_.encoder_blocks; ++b) {
        const std::string pre = "enc.blk" + std::to_string(b);
        add_layer_norm(pre + ".ln1", h);
        add_linear(pre + ".q", h, h, rng);
        add_linear(pre + ".k", h, h, rng);
        add_linear(pre + ".v", h, h, rng);
        add_linear(pre + ".o", h, h, rng);
        add_layer_norm(pre + ".ln2", h);
        add_linear(pre + ".ff1", h, cfg_.encoder_ff, rng);
        add_linear(pre + ".ff2", cfg_.encoder_ff, h, rng);
      }
      add_layer_norm("enc.head.ln", h);
      add_linear("enc.head.fc1", h, h, rng);
      add_linear("enc.head.fc2", h, cfg_.embed_dim, rng);
    }

    const int ph = cfg_.posterior_hidden;
    add_linear("post.b1", 2 * cfg_.state_dim, ph, rng);
    add_linear("post.b2", ph, ph, rng);
    add_linear("post.h1", ph + cfg_.neural_dim(), ph, rng);
    add_linear("post.out", ph, 2 * cfg_.latent_dim, rng);

    const int din = cfg_.latent_dim + cfg_.neural_dim() + cfg_.state_dim;
    add_linear("dec.gate.l0", din, cfg_.gating_hidden, rng);
    add_linear("dec.gate.l1", cfg_.gating_hidden, cfg_.gating_hidden, rng);
    add_linear("dec.gate.l2", cfg_.gating_hidden, cfg_.experts, rng);
    for (int k = 0; k < cfg_.experts; ++k) {
      const std::string pre = "dec.exp" + std::to_string(k);
      add_linear(pre + ".l0", din, cfg_.expert_hidden, rng);
      add_linear(pre + ".l1", cfg_.expert_hidden, cfg_.expert_hidden, rng);
      add_linear(pre + ".l2", cfg_.expert_hidden, cfg_.state_dim, rng);
    }
    quantize_to_float();
  }

  ModelConfig cfg_;
  ad::ParameterSet params_;
};

}  // namespace nbd
