#pragma once

// Neural-only baseline: an LSTM over a trailing window of feature frames
// predicts per-joint speed; trajectories take their direction from the
// ground truth.

#include <json.hpp>

#include <numeric>
#include <vector>

#include "nbd/autodiff.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/model.hpp"
#include "nbd/optim.hpp"
#include "nbd/rng.hpp"

namespace nbd {

struct LstmConfig {
  int channels = 62;
  int feature_dim = kFeatureDim;
  int window = 5;
  int proj = 64;
  int hidden = 64;
  int outputs = kNumJoints;
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(channels >= 1 && feature_dim >= 1 && window >= 1 && proj >= 1 && hidden >= 1 && outputs >= 1,
            ErrorCode::InvalidConfig, "LSTM dimensions must be positive");
    require(epochs >= 0 && batch_size >= 1 && learning_rate > 0.0, ErrorCode::InvalidConfig,
            "invalid LSTM training settings");
  }

  nlohmann::json to_json() const {
    return {{"channels", channels},   {"feature_dim", feature_dim}, {"window", window},
            {"proj", proj},           {"hidden", hidden},           {"outputs", outputs},
            {"epochs", epochs},       {"batch_size", batch_size},   {"learning_rate", learning_rate},
            {"grad_clip_norm", grad_clip_norm}, {"seed", seed}};
  }

  static LstmConfig from_json(const nlohmann::json& j) {
    LstmConfig c;
    c.channels = j.value("channels", c.channels);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.window = j.value("window", c.window);
    c.proj = j.value("proj", c.proj);
    c.hidden = j.value("hidden", c.hidden);
    c.outputs = j.value("outputs", c.outputs);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// One session for the baseline: a feature window and a per-joint speed
// target for every frame.
struct SpeedSequence {
  Matrix features;  // (T*C) x F, raw power
  Matrix speeds;    // T x outputs, cm per step
};

// Per-joint displacement magnitude between consecutive poses; row 0 is 0.
inline Matrix joint_speeds(const std::vector<JointPositions>& world) {
  Matrix s = Matrix::Zero(static_cast<Eigen::Index>(world.size()), kNumJoints);
  for (std::size_t t = 1; t < world.size(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) s(static_cast<Eigen::Index>(t), j) = (world[t].row(j) - world[t - 1].row(j)).norm();
  }
  return s;
}

// Positions from predicted speeds along ground-truth directions. `truth[0]`
// is the starting pose; row k of `speeds` moves the pose along the
// direction from truth[k] to truth[k+1].
inline std::vector<JointPositions> integrate_speeds(const std::vector<JointPositions>& truth, const Matrix& speeds) {
  require(!truth.empty() && speeds.rows() + 1 == static_cast<Eigen::Index>(truth.size()) &&
              speeds.cols() == kNumJoints,
          ErrorCode::ShapeMismatch, "speeds must have one row per transition and one column per joint");
  std::vector<JointPositions> out;
  out.reserve(truth.size() - 1);
  JointPositions pos = truth[0];
  for (std::size_t t = 1; t < truth.size(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 d = (truth[t].row(j) - truth[t - 1].row(j)).transpose();
      const double n = d.norm();
      if (n > 0.0) pos.row(j) += (speeds(static_cast<Eigen::Index>(t - 1), j) / n) * d.transpose();
    }
    out.push_back(pos);
  }
  return out;
}

class LstmBaseline {
 public:
  LstmBaseline() = default;
  explicit LstmBaseline(const LstmConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const LstmConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  void set_normalization(const Matrix& feat_mean, const Matrix& feat_std, const Matrix& speed_mean,
                         const Matrix& speed_std) {
    params_.get("norm.feat_mean").value = feat_mean;
    params_.get("norm.feat_std").value = feat_std;
    params_.get("norm.speed_mean").value = speed_mean;
    params_.get("norm.speed_std").value = speed_std;
  }

  // raw (T*C) x F power -> T x (C*F) standardized log power.
  Matrix frame_inputs(const Matrix& features) const {
    const int c = cfg_.channels, f = cfg_.feature_dim;
    require(features.cols() == f && features.rows() % c == 0, ErrorCode::ShapeMismatch,
            "feature block does not match the baseline's channel count");
    const Eigen::Index n = features.rows() / c;
    const Matrix& mu = params_.get("norm.feat_mean").value;
    const Matrix& sd = params_.get("norm.feat_std").value;
    Matrix out(n, c * f);
    for (Eigen::Index t = 0; t < n; ++t) {
      for (int ch = 0; ch < c; ++ch) {
        for (int k = 0; k < f; ++k) {
          const double v = std::log(std::max(features(t * c + ch, k), 0.0) + kFeatureLogEps);
          out(t, ch * f + k) = (v - mu(0, ch * f + k)) / sd(0, ch * f + k);
        }
      }
    }
    return out;
  }

  // steps: `window` matrices of B x (C*F), oldest first -> B x outputs
  // (normalized speed).
  Var forward(ad::Tape& t, const std::vector<Matrix>& steps) {
    require(static_cast<int>(steps.size()) == cfg_.window, ErrorCode::ShapeMismatch, "window length");
    const Eigen::Index b = steps.front().rows();
    const int h = cfg_.hidden;
    Var hs = t.constant(Matrix::Zero(b, h));
    Var cs = t.constant(Matrix::Zero(b, h));
    for (const auto& x : steps) {
      Var in = ad::elu(lin(t, t.constant(x), "lstm.in"));
      Var g = ad::add(lin(t, in, "lstm.x"), ad::matmul(hs, p(t, "lstm.h")));
      Var i = ad::sigmoid(ad::slice_cols(g, 0, h));
      Var f = ad::sigmoid(ad::slice_cols(g, h, h));
      Var cand = ad::tanh(ad::slice_cols(g, 2 * h, h));
      Var o = ad::sigmoid(ad::slice_cols(g, 3 * h, h));
      cs = ad::add(ad::mul(f, cs), ad::mul(i, cand));
      hs = ad::mul(o, ad::tanh(cs));
    }
    return lin(t, hs, "lstm.out");
  }

  // Windows ending at each requested frame; frames before the start of the
  // sequence repeat frame 0.
  std::vector<Matrix> gather(const Matrix& inputs, const std::vector<Eigen::Index>& frames) const {
    std::vector<Matrix> steps;
    for (int w = 0; w < cfg_.window; ++w) {
      Matrix m(static_cast<Eigen::Index>(frames.size()), inputs.cols());
      for (std::size_t r = 0; r < frames.size(); ++r) {
        const Eigen::Index k = std::max<Eigen::Index>(0, frames[r] - (cfg_.window - 1) + w);
        m.row(static_cast<Eigen::Index>(r)) = inputs.row(k);
      }
      steps.push_back(std::move(m));
    }
    return steps;
  }

  // Speeds (cm per step) for frames [first, first + count) of a session.
  Matrix predict(const Matrix& features, Eigen::Index first, Eigen::Index count) {
    const Matrix inputs = frame_inputs(features);
    require(first >= 0 && first + count <= inputs.rows(), ErrorCode::StreamExhausted,
            "feature stream ends before the requested frames");
    std::vector<Eigen::Index> frames(static_cast<std::size_t>(count));
    std::iota(frames.begin(), frames.end(), first);
    ad::Tape t(false);
    const Matrix out = forward(t, gather(inputs, frames)).value();
    const Matrix& mu = params_.get("norm.speed_mean").value;
    const Matrix& sd = params_.get("norm.speed_std").value;
    Matrix s(count, cfg_.outputs);
    for (Eigen::Index r = 0; r < count; ++r) {
      for (int j = 0; j < cfg_.outputs; ++j) s(r, j) = std::max(0.0, out(r, j) * sd(0, j) + mu(0, j));
    }
    return s;
  }

  Var lin(ad::Tape& t, Var x, const std::string& name) {
    return ad::linear(x, p(t, name + ".w"), p(t, name + ".b"));
  }

 private:
  Var p(ad::Tape& t, const std::string& name) { return t.param(params_.get(name)); }

  void build() {
    std::mt19937_64 rng(substream(cfg_.seed, "init"));
    const int in = cfg_.channels * cfg_.feature_dim, h = cfg_.hidden;
    params_.add("norm.feat_mean", 1, in, false);
    params_.add("norm.feat_std", 1, in, false).value.setOnes();
    params_.add("norm.speed_mean", 1, cfg_.outputs, false);
    params_.add("norm.speed_std", 1, cfg_.outputs, false).value.setOnes();
    auto add_linear = [&](const std::string& name, int a, int b) {
      ad::init_linear(params_.add(name + ".w", a, b), params_.add(name + ".b", 1, b), rng);
    };
    add_linear("lstm.in", in, cfg_.proj);
    add_linear("lstm.x", cfg_.proj, 4 * h);
    auto& wh = params_.add("lstm.h", h, 4 * h);
    std::uniform_real_distribution<double> u(-std::sqrt(6.0 / (5.0 * h)), std::sqrt(6.0 / (5.0 * h)));
    for (Eigen::Index i = 0; i < wh.value.size(); ++i) wh.value.data()[i] = u(rng);
    params_.get("lstm.x.b").value.middleCols(h, h).setOnes();
    add_linear("lstm.out", h, cfg_.outputs);
  }

  LstmConfig cfg_;
  ad::ParameterSet params_;
};

struct LstmTrainLog {
  std::vector<double> epoch_loss;
};

// Fits the baseline to per-frame joint speeds with MSE in normalized units.
inline LstmBaseline lstm_baseline_train(const std::vector<SpeedSequence>& data, const LstmConfig& cfg,
                                        LstmTrainLog* log = nullptr) {
  LstmBaseline net(cfg);
  require(!data.empty(), ErrorCode::TooShort, "no baseline training data");
  const int c = cfg.channels, f = cfg.feature_dim, in = c * f;

  Matrix fm = Matrix::Zero(1, in), fs = Matrix::Zero(1, in);
  Matrix sm = Matrix::Zero(1, cfg.outputs), ss = Matrix::Zero(1, cfg.outputs);
  double n = 0.0;
  for (const auto& s : data) {
    require(s.speeds.cols() == cfg.outputs && s.features.rows() == s.speeds.rows() * c && s.features.cols() == f,
            ErrorCode::ShapeMismatch, "baseline features and speeds disagree");
    for (Eigen::Index t = 0; t < s.speeds.rows(); ++t) {
      for (int ch = 0; ch < c; ++ch) {
        for (int k = 0; k < f; ++k) {
          const double v = std::log(std::max(s.features(t * c + ch, k), 0.0) + kFeatureLogEps);
          fm(0, ch * f + k) += v;
          fs(0, ch * f + k) += v * v;
        }
      }
      sm += s.speeds.row(t);
      ss += s.speeds.row(t).cwiseProduct(s.speeds.row(t));
      n += 1.0;
    }
  }
  auto finish = [n](Matrix& mean, Matrix& sq) {
    mean /= n;
    sq = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < sq.size(); ++i) {
      if (sq.data()[i] < 1e-6) sq.data()[i] = 1.0;
    }
  };
  finish(fm, fs);
  finish(sm, ss);
  net.set_normalization(fm, fs, sm, ss);

  std::vector<Matrix> inputs, targets;
  std::vector<std::pair<std::size_t, Eigen::Index>> index;
  for (std::size_t i = 0; i < data.size(); ++i) {
    inputs.push_back(net.frame_inputs(data[i].features));
    targets.push_back((data[i].speeds.rowwise() - sm.row(0)).array().rowwise() / ss.row(0).array());
    for (Eigen::Index t = 1; t < data[i].speeds.rows(); ++t) index.emplace_back(i, t);
  }

  Adam adam(net.params(), cfg.learning_rate);
  auto order_rng = make_rng(cfg.seed, "baseline.order");
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = index.size(); i > 1; --i) std::swap(index[i - 1], index[order_rng() % i]);
    double total = 0.0;
    int batches = 0;
    for (std::size_t lo = 0; lo < index.size(); lo += bs) {
      const std::size_t hi = std::min(index.size(), lo + bs);
      const auto rows = static_cast<Eigen::Index>(hi - lo);
      std::vector<Matrix> steps(static_cast<std::size_t>(cfg.window), Matrix(rows, in));
      Matrix y(rows, cfg.outputs);
      for (std::size_t r = lo; r < hi; ++r) {
        const auto [seq, t] = index[r];
        const auto rr = static_cast<Eigen::Index>(r - lo);
        for (int w = 0; w < cfg.window; ++w) {
          steps[static_cast<std::size_t>(w)].row(rr) = inputs[seq].row(std::max<Eigen::Index>(0, t - (cfg.window - 1) + w));
        }
        y.row(rr) = targets[seq].row(t);
      }
      net.params().zero_grad();
      ad::Tape tape(true);
      Var loss = ad::mean_all(ad::square(ad::sub(net.forward(tape, steps), tape.constant(y))));
      require(std::isfinite(loss.value()(0, 0)), ErrorCode::NonFiniteLoss,
              "non-finite baseline loss at epoch " + std::to_string(e));
      tape.backward(loss);
      clip_gradients(net.params(), cfg.grad_clip_norm, false);
      adam.step(net.params());
      total += loss.value()(0, 0);
      ++batches;
    }
    if (log) log->epoch_loss.push_back(total / std::max(1, batches));
  }
  return net;
}

}  // namespace nbd
