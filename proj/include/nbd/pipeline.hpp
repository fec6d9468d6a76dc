#pragma once

// Session preparation (IK, features, temporal split) and the end-to-end
// experiment: train both model variants and the baseline, roll out from
// the evaluation frames, and score.

#include <json.hpp>

#include <chrono>
#include <functional>
#include <optional>
#include <vector>

#include "nbd/evaluation.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/lstm_baseline.hpp"
#include "nbd/neural.hpp"
#include "nbd/rollout.hpp"
#include "nbd/synthgen.hpp"
#include "nbd/training.hpp"

namespace nbd {

// A session at the 10 Hz processing rate. State i is the transition into
// frame i+1 and is paired with the feature window ending at frame i+1.
struct PreparedSession {
  SkeletonModel skeleton;
  std::vector<MotionState> states;
  std::vector<RootFrame> roots;         // per frame
  std::vector<JointPositions> world;    // per frame
  std::vector<FeatureMatrix> features;  // per frame; empty without neural data
  std::size_t train_frames = 0;         // frames [0, train_frames) are training data
  std::vector<std::size_t> eval_frames;

  std::size_t frames() const { return world.size(); }
  int channels() const { return features.empty() ? 0 : static_cast<int>(features.front().rows()); }
};

inline PreparedSession prepare_session(const KeypointSequence& motion30, const NeuralRecording* neural,
                                       std::size_t train_frames30, const std::vector<std::size_t>& eval_frames30,
                                       const std::optional<SkeletonModel>& skeleton = std::nullopt,
                                       const PreprocessConfig& pcfg = {}, const FeatureConfig& fcfg = {}) {
  PreparedSession p;
  const KeypointSequence m10 = downsample_motion(motion30);
  p.skeleton = skeleton ? *skeleton : estimate_skeleton(m10);
  p.states = inverse_kinematics(m10, p.skeleton);
  p.roots = root_frames(m10);
  for (std::size_t t = 0; t < m10.size(); ++t) p.world.push_back(m10.joints(t));
  p.train_frames = (train_frames30 + 2) / 3;
  for (auto f : eval_frames30) {
    require(f % 3 == 0, ErrorCode::InvalidSequence, "evaluation frames must fall on the 10 Hz grid");
    p.eval_frames.push_back(f / 3);
  }
  if (neural) {
    const NeuralRecording pre = preprocess(*neural, pcfg);
    auto windows = extract_features(pre, fcfg, m10.size());
    p.features.reserve(windows.size());
    for (auto& w : windows) p.features.push_back(std::move(w.features));
  }
  return p;
}

// States [first, last) with their paired feature windows.
inline TrainSequence train_sequence(const PreparedSession& p, std::size_t first, std::size_t last,
                                    bool with_features) {
  require(first < last && last <= p.states.size(), ErrorCode::TooShort, "empty state range");
  TrainSequence s;
  const auto n = static_cast<Eigen::Index>(last - first);
  s.states.resize(n, kStateDim);
  for (Eigen::Index i = 0; i < n; ++i) s.states.row(i) = p.states[first + static_cast<std::size_t>(i)].flatten().transpose();
  if (with_features) {
    require(!p.features.empty(), ErrorCode::NotPreprocessed, "session has no neural features");
    const int c = p.channels();
    s.features.resize(n * c, kFeatureDim);
    for (Eigen::Index i = 0; i < n; ++i) s.features.middleRows(i * c, c) = p.features[first + static_cast<std::size_t>(i) + 1];
  }
  return s;
}

inline TrainSequence training_split(const PreparedSession& p, bool with_features) {
  return train_sequence(p, 0, p.train_frames - 1, with_features);
}

inline SpeedSequence speed_sequence(const PreparedSession& p, std::size_t first, std::size_t last) {
  require(first < last && last <= p.frames() && !p.features.empty(), ErrorCode::TooShort, "empty frame range");
  const std::vector<JointPositions> w(p.world.begin() + static_cast<std::ptrdiff_t>(first),
                                      p.world.begin() + static_cast<std::ptrdiff_t>(last));
  SpeedSequence s;
  s.speeds = joint_speeds(w);
  const int c = p.channels();
  s.features.resize(static_cast<Eigen::Index>(last - first) * c, kFeatureDim);
  for (std::size_t k = first; k < last; ++k) {
    s.features.middleRows(static_cast<Eigen::Index>(k - first) * c, c) = p.features[k];
  }
  return s;
}

// Feature windows for a rollout from frame f: window k pairs with step k+1.
inline std::vector<FeatureMatrix> feature_stream(const PreparedSession& p, std::size_t f, int steps) {
  require(f + static_cast<std::size_t>(steps) < p.features.size(), ErrorCode::StreamExhausted,
          "feature stream ends before the rollout horizon");
  return {p.features.begin() + static_cast<std::ptrdiff_t>(f + 1),
          p.features.begin() + static_cast<std::ptrdiff_t>(f + 1 + static_cast<std::size_t>(steps))};
}

inline Trajectory truth_trajectory(const PreparedSession& p, std::size_t f, int steps) {
  require(f + static_cast<std::size_t>(steps) < p.frames(), ErrorCode::TooShort, "session ends before the horizon");
  return {p.world.begin() + static_cast<std::ptrdiff_t>(f + 1),
          p.world.begin() + static_cast<std::ptrdiff_t>(f + 1 + static_cast<std::size_t>(steps))};
}

inline MovementRollouts rollout_movement(Model& model, const PreparedSession& p, std::size_t f,
                                         const RolloutConfig& cfg, const std::vector<FeatureMatrix>* stream = nullptr) {
  require(f >= 1, ErrorCode::TooShort, "evaluation frame needs a preceding state");
  std::vector<FeatureMatrix> own;
  if (cfg.use_neural && !stream) {
    own = feature_stream(p, f, cfg.steps);
    stream = &own;
  }
  static const std::vector<FeatureMatrix> none;
  const auto traces = rollout(model, p.states[f - 1], p.roots[f], p.skeleton, stream ? *stream : none, cfg, f);
  MovementRollouts mv;
  mv.initial_frame = f;
  for (const auto& t : traces) mv.samples.push_back(t.world());
  return mv;
}

inline MovementRollouts baseline_movement(LstmBaseline& net, const PreparedSession& p, std::size_t f, int steps) {
  const int c = p.channels();
  Matrix feats(static_cast<Eigen::Index>(p.features.size()) * c, kFeatureDim);
  for (std::size_t k = 0; k < p.features.size(); ++k) feats.middleRows(static_cast<Eigen::Index>(k) * c, c) = p.features[k];
  const Matrix speeds = net.predict(feats, static_cast<Eigen::Index>(f + 1), steps);
  const Trajectory truth(p.world.begin() + static_cast<std::ptrdiff_t>(f),
                         p.world.begin() + static_cast<std::ptrdiff_t>(f + 1 + static_cast<std::size_t>(steps)));
  MovementRollouts mv;
  mv.initial_frame = f;
  mv.samples.push_back(integrate_speeds(truth, speeds));
  return mv;
}

struct ExperimentConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  LstmConfig lstm;
  RolloutConfig rollout;
  EvalConfig eval;
  bool shuffle_probe = true;

  // Small networks and a short schedule sized for a single CPU core.
  // `seed` drives training and sampling; the dataset has its own seed.
  static ExperimentConfig desk(std::uint64_t seed, std::uint64_t data_seed = 1) {
    ExperimentConfig c;
    c.synth.seed = data_seed;
    c.synth.duration_s = 300.0;
    c.synth.channels = 16;
    c.model.channels = 16;
    c.model.embed_dim = 16;
    c.model.encoder_hidden = 32;
    c.model.encoder_blocks = 1;
    c.model.encoder_heads = 2;
    c.model.encoder_ff = 64;
    c.model.experts = 4;
    c.model.gating_hidden = 32;
    c.model.expert_hidden = 160;
    c.model.posterior_hidden = 160;
    c.train.stage_epochs = {8, 8, 14};
    c.train.learning_rate = 1e-3;
    c.train.batch_size = 16;
    c.train.chunk_len = 16;
    c.set_seed(seed);
    c.lstm.channels = 16;
    c.lstm.epochs = 15;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"synth", synth.to_json()},     {"model", model.to_json()},     {"train", train.to_json()},
            {"lstm", lstm.to_json()},       {"rollout", rollout.to_json()}, {"eval", eval.to_json()},
            {"shuffle_probe", shuffle_probe}};
  }

  // Sections present in `j` override the matching fields of `base`.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base) {
    require(j.is_object(), ErrorCode::ConfigParse, "configuration must be a JSON object");
    nlohmann::json merged = base.to_json();
    merged.merge_patch(j);
    ExperimentConfig c;
    try {
      c.synth = SynthConfig::from_json(merged.at("synth"));
      c.model = ModelConfig::from_json(merged.at("model"));
      c.train = TrainConfig::from_json(merged.at("train"));
      c.lstm = LstmConfig::from_json(merged.at("lstm"));
      c.rollout = RolloutConfig::from_json(merged.at("rollout"));
      c.eval = EvalConfig::from_json(merged.at("eval"));
      c.shuffle_probe = merged.value("shuffle_probe", c.shuffle_probe);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ConfigParse, e.what());
    }
    return c;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) { return from_json(j, ExperimentConfig{}); }

  // Points every seeded stage at `seed`; the dataset seed is left alone.
  void set_seed(std::uint64_t seed) {
    model.init_seed = seed;
    train.seed = seed;
    lstm.seed = seed;
    rollout.seed = seed;
    eval.seed = seed;
  }
};

struct ExperimentResult {
  EvalReport report;
  EvalInputs rollouts;
  double nb_shuffled_ade = 0.0;  // horizontal ADE with a time-shuffled feature stream
  double behavioral_shuffled_ade = 0.0;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

// Time-permuted copy of a session's features (seeded).
inline std::vector<FeatureMatrix> shuffled_features(const std::vector<FeatureMatrix>& f, std::uint64_t seed) {
  std::vector<FeatureMatrix> out = f;
  auto rng = make_rng(seed, "shuffle");
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng() % i]);
  return out;
}

// Trains the three models on one prepared session with the training seeds
// in `cfg` and scores their rollouts from the session's evaluation frames.
inline ExperimentResult run_models(const PreparedSession& p, const ExperimentConfig& cfg,
                                   const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  ModelConfig nb_cfg = cfg.model;
  nb_cfg.use_neural = true;
  nb_cfg.channels = p.channels();
  ModelConfig b_cfg = cfg.model;
  b_cfg.use_neural = false;
  Model nb = train({training_split(p, true)}, nb_cfg, cfg.train).model;
  note("trained neural-behavioral");
  Model beh = train({training_split(p, false)}, b_cfg, cfg.train).model;
  note("trained behavioral");
  LstmConfig lc = cfg.lstm;
  lc.channels = p.channels();
  LstmBaseline lstm = lstm_baseline_train({speed_sequence(p, 0, p.train_frames)}, lc);
  note("trained lstm");

  EvalInputs in;
  ModelRollouts m_nb{std::string(kNeuralBehavioral), {}}, m_b{std::string(kBehavioral), {}}, m_l{std::string(kLstm), {}};
  RolloutConfig rn = cfg.rollout, rb = cfg.rollout;
  rn.use_neural = true;
  rb.use_neural = false;
  for (auto f : p.eval_frames) {
    in.truth.push_back(truth_trajectory(p, f, cfg.rollout.steps));
    m_nb.movements.push_back(rollout_movement(nb, p, f, rn));
    m_b.movements.push_back(rollout_movement(beh, p, f, rb));
    m_l.movements.push_back(baseline_movement(lstm, p, f, cfg.rollout.steps));
  }
  in.models = {m_nb, m_b, m_l};
  ExperimentResult res;
  res.report = evaluate(in, cfg.eval);
  res.rollouts = in;
  note("evaluated");

  if (cfg.shuffle_probe) {
    const auto shuffled = shuffled_features(p.features, cfg.rollout.seed);
    EvalInputs sh;
    sh.truth = in.truth;
    ModelRollouts s_nb{std::string(kNeuralBehavioral), {}}, s_b{std::string(kBehavioral), {}};
    for (auto f : p.eval_frames) {
      const std::vector<FeatureMatrix> stream(shuffled.begin() + static_cast<std::ptrdiff_t>(f + 1),
                                              shuffled.begin() + static_cast<std::ptrdiff_t>(f + 1 + static_cast<std::size_t>(rn.steps)));
      s_nb.movements.push_back(rollout_movement(nb, p, f, rn, &stream));
      s_b.movements.push_back(rollout_movement(beh, p, f, rb, &stream));
    }
    EvalConfig ec = cfg.eval;
    ec.bootstrap = 1;
    sh.models = {s_nb, s_b};
    const auto rep = evaluate(sh, ec);
    res.nb_shuffled_ade = rep.find(kNeuralBehavioral)->horizontal.ade;
    res.behavioral_shuffled_ade = rep.find(kBehavioral)->horizontal.ade;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline PreparedSession prepare_synthetic(const SynthConfig& cfg) {
  const SynthSession s = generate(cfg);
  return prepare_session(s.motion, &s.neural, s.train_frames, s.eval_frames, s.skeleton);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  return run_models(prepare_synthetic(cfg.synth), cfg, progress);
}

}  // namespace nbd
