#pragma once

// Autoregressive generation from an initial state, optionally driven by a
// stream of neural feature windows.

#include <json.hpp>

#include <vector>

#include "nbd/kinematics.hpp"
#include "nbd/model.hpp"
#include "nbd/rng.hpp"

namespace nbd {

struct RolloutConfig {
  int steps = 100;
  int samples = 5;
  bool use_neural = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(steps >= 1, ErrorCode::InvalidConfig, "rollout needs at least one step");
    require(samples >= 1, ErrorCode::InvalidConfig, "rollout needs at least one sample");
  }

  nlohmann::json to_json() const {
    return {{"steps", steps}, {"samples", samples}, {"use_neural", use_neural}, {"seed", seed}};
  }

  static RolloutConfig from_json(const nlohmann::json& j) {
    RolloutConfig c;
    c.steps = j.value("steps", c.steps);
    c.samples = j.value("samples", c.samples);
    c.use_neural = j.value("use_neural", c.use_neural);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct RolloutStep {
  MotionState state;
  JointPositions world;
  Eigen::VectorXd z;
};

struct RolloutTrace {
  std::size_t initial_frame = 0;
  int sample = 0;
  RootFrame initial_root;
  std::vector<RolloutStep> steps;

  std::vector<JointPositions> world() const {
    std::vector<JointPositions> w;
    w.reserve(steps.size());
    for (const auto& s : steps) w.push_back(s.world);
    return w;
  }
};

// `stream[k]` holds the C x 30 feature window paired with predicted step k+1.
// All samples of one initial state advance together as one batch.
inline std::vector<RolloutTrace> rollout(Model& model, const MotionState& init_state, const RootFrame& init_root,
                                         const SkeletonModel& skel, const std::vector<FeatureMatrix>& stream,
                                         const RolloutConfig& cfg, std::size_t initial_frame = 0) {
  cfg.validate();
  const auto& mc = model.config();
  require(mc.state_dim == kStateDim, ErrorCode::ShapeMismatch, "rollout needs the full motion state");
  const bool neural = cfg.use_neural && mc.use_neural;
  require(cfg.use_neural == mc.use_neural, ErrorCode::InvalidConfig,
          "rollout neural flag does not match the model variant");
  if (neural) {
    require(stream.size() >= static_cast<std::size_t>(cfg.steps), ErrorCode::StreamExhausted,
            "feature stream has " + std::to_string(stream.size()) + " windows for " + std::to_string(cfg.steps) +
                " steps");
  }
  const int ns = cfg.samples;

  std::vector<std::mt19937_64> rngs;
  std::vector<Normal> normals(static_cast<std::size_t>(ns));
  for (int s = 0; s < ns; ++s) {
    rngs.push_back(make_rng(cfg.seed, "rollout", (static_cast<std::uint64_t>(initial_frame) << 16) + s));
  }

  std::vector<RolloutTrace> traces(static_cast<std::size_t>(ns));
  std::vector<RootFrame> roots(static_cast<std::size_t>(ns), init_root);
  for (int s = 0; s < ns; ++s) {
    traces[s].initial_frame = initial_frame;
    traces[s].sample = s;
    traces[s].initial_root = init_root;
    traces[s].steps.reserve(static_cast<std::size_t>(cfg.steps));
  }

  Matrix prev = model.normalize_states(Matrix(init_state.flatten().transpose())).replicate(ns, 1);
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape t(false);
    std::optional<Var> ne;
    if (neural) {
      const FeatureMatrix& f = stream[static_cast<std::size_t>(step)];
      require(f.rows() == mc.channels, ErrorCode::ShapeMismatch, "feature window channel count");
      const Matrix e = model.encode_neural(t, model.normalize_features(Matrix(f)), 1).value();
      ne = t.constant(e.replicate(ns, 1));
    }
    Matrix z(ns, mc.latent_dim);
    for (int s = 0; s < ns; ++s) {
      for (int k = 0; k < mc.latent_dim; ++k) z(s, k) = normals[s](rngs[s]);
    }
    const auto dec = model.decode(t, t.constant(z), ne, t.constant(prev));
    const Matrix raw = model.denormalize_states(dec.output.value());
    Matrix next(ns, mc.state_dim);
    for (int s = 0; s < ns; ++s) {
      RolloutStep rs;
      rs.state = MotionState::unflatten(raw.row(s).transpose());
      rs.state.normalize_rotations();
      const FkResult fk = forward_kinematics(roots[s], rs.state, skel);
      roots[s] = fk.root;
      rs.world = fk.world;
      rs.z = z.row(s).transpose();
      next.row(s) = rs.state.flatten().transpose();
      traces[s].steps.push_back(std::move(rs));
    }
    prev = model.normalize_states(next);
  }
  return traces;
}

}  // namespace nbd
