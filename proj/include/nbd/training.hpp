#pragma once

// ELBO training with teacher / ramping / student scheduled sampling.

#include <array>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nbd/model.hpp"
#include "nbd/optim.hpp"
#include "nbd/rng.hpp"

namespace nbd {

enum class Stage { Teacher = 0, Ramping = 1, Student = 2 };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Teacher: return "teacher";
    case Stage::Ramping: return "ramping";
    case Stage::Student: return "student";
  }
  return "?";
}

struct TrainConfig {
  double beta = 0.1;
  std::array<int, 3> stage_epochs{30, 30, 100};
  double learning_rate = 1e-4;
  double grad_clip_norm = 1.0;
  bool per_parameter_clip = false;
  bool per_batch_ramp = false;
  int batch_size = 16;
  int chunk_len = 32;
  std::uint64_t seed = 0;

  int total_epochs() const { return stage_epochs[0] + stage_epochs[1] + stage_epochs[2]; }

  void validate() const {
    for (int e : stage_epochs) require(e >= 0, ErrorCode::InvalidConfig, "stage epochs must be >= 0");
    require(beta >= 0.0, ErrorCode::InvalidConfig, "beta must be >= 0");
    require(grad_clip_norm > 0.0, ErrorCode::InvalidConfig, "gradient clip must be > 0");
    require(learning_rate > 0.0, ErrorCode::InvalidConfig, "learning rate must be > 0");
    require(batch_size >= 1 && chunk_len >= 1, ErrorCode::InvalidConfig, "batch size and chunk length must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"beta", beta},
            {"stage_epochs", stage_epochs},
            {"learning_rate", learning_rate},
            {"grad_clip_norm", grad_clip_norm},
            {"per_parameter_clip", per_parameter_clip},
            {"per_batch_ramp", per_batch_ramp},
            {"batch_size", batch_size},
            {"chunk_len", chunk_len},
            {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.beta = j.value("beta", c.beta);
    c.stage_epochs = j.value("stage_epochs", c.stage_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.per_parameter_clip = j.value("per_parameter_clip", c.per_parameter_clip);
    c.per_batch_ramp = j.value("per_batch_ramp", c.per_batch_ramp);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.chunk_len = j.value("chunk_len", c.chunk_len);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct LossParts {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

inline double kl_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_sigma) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    kl += mu[i] * mu[i] + std::exp(2.0 * log_sigma[i]) - 1.0 - 2.0 * log_sigma[i];
  }
  return 0.5 * kl;
}

// Single-sample loss on flattened states.
inline LossParts elbo_loss(const Eigen::VectorXd& p_true, const Eigen::VectorXd& p_hat, const LatentGaussian& q,
                           double beta) {
  require(p_true.size() == p_hat.size(), ErrorCode::ShapeMismatch, "state sizes differ");
  LossParts l;
  l.recon = (p_hat - p_true).squaredNorm() / static_cast<double>(p_true.size());
  l.kl = kl_standard_normal(q.mu, q.log_sigma);
  l.total = l.recon + beta * l.kl;
  return l;
}

inline LossParts elbo_loss(const MotionState& p_true, const MotionState& p_hat, const LatentGaussian& q,
                           double beta) {
  return elbo_loss(Eigen::VectorXd(p_true.flatten()), Eigen::VectorXd(p_hat.flatten()), q, beta);
}

struct ElboTerms {
  Var total, recon, kl;
};

// Batch loss on the tape: recon is the MSE over all entries, kl the
// per-sample divergence averaged over rows.
inline ElboTerms elbo_terms(Var p_true, Var p_hat, Var mu, Var log_sigma, double beta) {
  ElboTerms e;
  e.recon = ad::mean_all(ad::square(ad::sub(p_hat, p_true)));
  Var var = ad::exp(ad::scale(log_sigma, 2.0));
  Var terms = ad::sub(ad::add(ad::square(mu), ad::add_scalar(var, -1.0)), ad::scale(log_sigma, 2.0));
  e.kl = ad::scale(ad::sum_all(terms), 0.5 / static_cast<double>(mu.rows()));
  e.total = ad::add(e.recon, ad::scale(e.kl, beta));
  return e;
}

// Probability of conditioning on the model's own previous prediction.
inline double scheduled_probability(Stage stage, int epoch_in_stage, const std::array<int, 3>& stage_epochs) {
  switch (stage) {
    case Stage::Teacher: return 0.0;
    case Stage::Student: return 1.0;
    case Stage::Ramping: {
      const int n = stage_epochs[1];
      if (n <= 1) return 1.0;
      return std::clamp(static_cast<double>(epoch_in_stage) / (n - 1), 0.0, 1.0);
    }
  }
  return 0.0;
}

// Per-batch variant of the ramp: linear over every batch of the stage.
inline double scheduled_probability_batch(int epoch_in_stage, int batch, int batches, int ramp_epochs) {
  const long total = static_cast<long>(ramp_epochs) * batches;
  if (total <= 1) return 1.0;
  const long k = static_cast<long>(epoch_in_stage) * batches + batch;
  return std::clamp(static_cast<double>(k) / static_cast<double>(total - 1), 0.0, 1.0);
}

struct TrainSequence {
  Matrix states;    // T x D raw states, row t is P_t
  Matrix features;  // (T*C) x F raw features, row t*C + c; empty without a neural branch
};

struct StepRecord {
  int epoch = 0;
  int batch = 0;
  double probability = 0.0;
  double total = 0.0, recon = 0.0, kl = 0.0;
  double grad_norm_pre = 0.0, grad_norm_post = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  Stage stage = Stage::Teacher;
  double probability = 0.0;
  double total = 0.0, recon = 0.0, kl = 0.0;
  double grad_norm_pre = 0.0;   // mean over batches
  double grad_norm_post = 0.0;  // max over batches
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;

  std::string to_table() const {
    std::ostringstream os;
    os.precision(10);
    os << "epoch\tstage\tprobability\trecon\tkl\tgrad_norm_pre\tgrad_norm_post\ttotal\n";
    for (const auto& e : epochs) {
      os << e.epoch << '\t' << to_string(e.stage) << '\t' << e.probability << '\t' << e.recon << '\t' << e.kl << '\t'
         << e.grad_norm_pre << '\t' << e.grad_norm_post << '\t' << e.total << '\n';
    }
    return os.str();
  }
};

struct NormalizationStats {
  Eigen::VectorXd state_mean, state_std;
  Matrix feat_mean, feat_std;  // C x F
};

inline NormalizationStats compute_normalization(const std::vector<TrainSequence>& data, const ModelConfig& cfg) {
  NormalizationStats s;
  const int d = cfg.state_dim;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  double n = 0.0;
  for (const auto& seq : data) {
    require(seq.states.cols() == d, ErrorCode::ShapeMismatch, "state width differs from the model");
    for (Eigen::Index t = 0; t < seq.states.rows(); ++t) {
      const Eigen::VectorXd x = seq.states.row(t).transpose();
      sum += x;
      sq += x.cwiseProduct(x);
      n += 1.0;
    }
  }
  require(n >= 2.0, ErrorCode::TooShort, "need at least two states for normalization");
  s.state_mean = sum / n;
  s.state_std = (sq / n - s.state_mean.cwiseProduct(s.state_mean)).cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (s.state_std[i] < 1e-6) s.state_std[i] = 1.0;
  }

  if (cfg.use_neural) {
    const int c = cfg.channels, f = cfg.feature_dim;
    Matrix fs = Matrix::Zero(c, f), fq = Matrix::Zero(c, f);
    double m = 0.0;
    for (const auto& seq : data) {
      require(seq.features.rows() == seq.states.rows() * c && seq.features.cols() == f, ErrorCode::ShapeMismatch,
              "feature block does not match the model's channel count");
      for (Eigen::Index t = 0; t < seq.states.rows(); ++t) {
        for (int ch = 0; ch < c; ++ch) {
          for (int k = 0; k < f; ++k) {
            const double v = std::log(std::max(seq.features(t * c + ch, k), 0.0) + kFeatureLogEps);
            fs(ch, k) += v;
            fq(ch, k) += v * v;
          }
        }
        m += 1.0;
      }
    }
    s.feat_mean = fs / m;
    s.feat_std = (fq / m - s.feat_mean.cwiseProduct(s.feat_mean)).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < s.feat_std.size(); ++i) {
      if (s.feat_std.data()[i] < 1e-6) s.feat_std.data()[i] = 1.0;
    }
  }
  return s;
}

inline void apply_normalization(Model& model, const NormalizationStats& s) {
  model.set_state_normalization(s.state_mean, s.state_std);
  if (model.config().use_neural) model.set_feature_normalization(s.feat_mean, s.feat_std);
  model.quantize_to_float();
}

struct TrainResult {
  Model model;
  TrainLog log;
};

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochRecord&)>;

  Trainer(const std::vector<TrainSequence>& data, const ModelConfig& mcfg, const TrainConfig& cfg)
      : cfg_(cfg) {
    cfg_.validate();
    ModelConfig mc = mcfg;
    mc.init_seed = substream(cfg.seed, "init");
    model_ = Model(mc);
    require(!data.empty(), ErrorCode::TooShort, "no training sequences");
    apply_normalization(model_, compute_normalization(data, mc));

    for (const auto& seq : data) {
      Seq s;
      s.states = model_.normalize_states(seq.states);
      if (mc.use_neural) s.features = model_.normalize_features(seq.features);
      require(s.states.rows() >= 2, ErrorCode::TooShort, "sequence needs at least two states");
      seqs_.push_back(std::move(s));
    }
    chunk_ = cfg_.chunk_len;
    for (const auto& s : seqs_) chunk_ = std::min<int>(chunk_, static_cast<int>(s.states.rows()) - 1);
    for (std::size_t i = 0; i < seqs_.size(); ++i) {
      const int transitions = static_cast<int>(seqs_[i].states.rows()) - 1;
      int start = 0;
      for (; start + chunk_ <= transitions; start += chunk_) chunks_.push_back({i, start});
      if (start < transitions) chunks_.push_back({i, transitions - chunk_});
    }
  }

  TrainResult run(const EpochCallback& on_epoch = {}) {
    Adam adam(model_.params(), cfg_.learning_rate);
    auto order_rng = make_rng(cfg_.seed, "train.order");
    auto mask_rng = make_rng(cfg_.seed, "train.schedule");
    auto noise_rng = make_rng(cfg_.seed, "train.noise");
    Normal normal;

    std::vector<std::size_t> order(chunks_.size());
    std::iota(order.begin(), order.end(), 0);
    const int bs = cfg_.batch_size;
    const int batches = static_cast<int>((chunks_.size() + static_cast<std::size_t>(bs) - 1) / static_cast<std::size_t>(bs));

    TrainLog log;
    int epoch = 0;
    for (int st = 0; st < 3; ++st) {
      const auto stage = static_cast<Stage>(st);
      for (int e = 0; e < cfg_.stage_epochs[st]; ++e, ++epoch) {
        shuffle(order, order_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.stage = stage;
        for (int b = 0; b < batches; ++b) {
          double prob = scheduled_probability(stage, e, cfg_.stage_epochs);
          if (stage == Stage::Ramping && cfg_.per_batch_ramp) {
            prob = scheduled_probability_batch(e, b, batches, cfg_.stage_epochs[1]);
          }
          const std::size_t lo = static_cast<std::size_t>(b) * bs;
          const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(bs));
          std::vector<Chunk> batch;
          for (std::size_t k = lo; k < hi; ++k) batch.push_back(chunks_[order[k]]);

          StepRecord sr = step(batch, prob, mask_rng, noise_rng, normal);
          sr.epoch = epoch;
          sr.batch = b;
          require(std::isfinite(sr.total) && std::isfinite(sr.grad_norm_pre), ErrorCode::NonFiniteLoss,
                  "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
          sr.grad_norm_post = clip_gradients(model_.params(), cfg_.grad_clip_norm, cfg_.per_parameter_clip);
          adam.step(model_.params());

          rec.total += sr.total;
          rec.recon += sr.recon;
          rec.kl += sr.kl;
          rec.probability += sr.probability;
          rec.grad_norm_pre += sr.grad_norm_pre;
          rec.grad_norm_post = std::max(rec.grad_norm_post, sr.grad_norm_post);
          log.steps.push_back(sr);
        }
        const double nb = std::max(1, batches);
        rec.total /= nb;
        rec.recon /= nb;
        rec.kl /= nb;
        rec.probability /= nb;
        rec.grad_norm_pre /= nb;
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
      }
    }
    model_.quantize_to_float();
    return {model_, log};
  }

 private:
  struct Seq {
    Matrix states;
    Matrix features;
  };
  struct Chunk {
    std::size_t seq;
    int start;
  };

  static void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  StepRecord step(const std::vector<Chunk>& batch, double prob, std::mt19937_64& mask_rng,
                  std::mt19937_64& noise_rng, Normal& normal) {
    const auto& mc = model_.config();
    const auto nb = static_cast<Eigen::Index>(batch.size());
    const int len = chunk_;
    const int d = mc.state_dim;
    model_.params().zero_grad();
    ad::Tape t(true);

    std::optional<Var> ne_all;
    if (mc.use_neural) {
      const Eigen::Index c = mc.channels;
      Matrix f(len * nb * c, mc.feature_dim);
      for (int j = 1; j <= len; ++j) {
        for (Eigen::Index b = 0; b < nb; ++b) {
          const auto& ch = batch[static_cast<std::size_t>(b)];
          const Eigen::Index row = ((j - 1) * nb + b) * c;
          f.middleRows(row, c) = seqs_[ch.seq].features.middleRows((ch.start + j) * c, c);
        }
      }
      ne_all = model_.encode_neural(t, f, len * nb);
    }

    auto rows = [&](int offset) {
      Matrix m(nb, d);
      for (Eigen::Index b = 0; b < nb; ++b) {
        const auto& ch = batch[static_cast<std::size_t>(b)];
        m.row(b) = seqs_[ch.seq].states.row(ch.start + offset);
      }
      return m;
    };

    std::optional<Var> pred;
    std::optional<Var> recon_sum, kl_sum;
    for (int j = 1; j <= len; ++j) {
      Var cond = t.constant(rows(j - 1));
      if (pred) {
        std::vector<bool> use_pred(static_cast<std::size_t>(nb));
        for (auto&& u : use_pred) u = Normal::uniform(mask_rng) < prob;
        cond = ad::select_rows(use_pred, *pred, cond);
      }
      Var curr = t.constant(rows(j));
      std::optional<Var> ne;
      if (ne_all) ne = ad::slice_rows(*ne_all, (j - 1) * nb, nb);
      auto post = model_.encode_posterior(t, cond, curr, ne);
      Matrix eps(nb, mc.latent_dim);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(noise_rng);
      Var z = ad::add(post.mu, ad::mul(ad::exp(post.log_sigma), t.constant(eps)));
      auto dec = model_.decode(t, z, ne, cond);
      auto terms = elbo_terms(curr, dec.output, post.mu, post.log_sigma, cfg_.beta);
      recon_sum = recon_sum ? ad::add(*recon_sum, terms.recon) : terms.recon;
      kl_sum = kl_sum ? ad::add(*kl_sum, terms.kl) : terms.kl;
      pred = dec.output;
    }
    Var recon = ad::scale(*recon_sum, 1.0 / len);
    Var kl = ad::scale(*kl_sum, 1.0 / len);
    Var total = ad::add(recon, ad::scale(kl, cfg_.beta));

    StepRecord sr;
    sr.probability = prob;
    sr.recon = recon.value()(0, 0);
    sr.kl = kl.value()(0, 0);
    sr.total = total.value()(0, 0);
    if (std::isfinite(sr.total)) {
      t.backward(total);
      sr.grad_norm_pre = gradient_norm(model_.params());
    } else {
      sr.grad_norm_pre = std::numeric_limits<double>::quiet_NaN();
    }
    return sr;
  }

  TrainConfig cfg_;
  Model model_;
  std::vector<Seq> seqs_;
  std::vector<Chunk> chunks_;
  int chunk_ = 0;
};

inline TrainResult train(const std::vector<TrainSequence>& data, const ModelConfig& mcfg, const TrainConfig& cfg,
                         const Trainer::EpochCallback& on_epoch = {}) {
  return Trainer(data, mcfg, cfg).run(on_epoch);
}

}  // namespace nbd
