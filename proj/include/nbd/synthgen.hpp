#pragma once

// Seeded synthetic sessions: an oscillator-driven skeleton moving through
// rest / walk / climb / swing modes, and multichannel field potentials
// whose band power tracks contralateral limb speed.

#include <json.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "nbd/dsp.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/neural.hpp"
#include "nbd/rng.hpp"

namespace nbd {

enum class Mode : int { Rest = 0, Walk = 1, Climb = 2, Swing = 3 };
inline constexpr int kNumModes = 4;

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Rest: return "rest";
    case Mode::Walk: return "walk";
    case Mode::Climb: return "climb";
    case Mode::Swing: return "swing";
  }
  return "?";
}

struct SynthConfig {
  std::uint64_t seed = 0;
  double duration_s = 180.0;
  // Row-stochastic, evaluated once per second.
  std::array<std::array<double, kNumModes>, kNumModes> mode_transition{{{0.80, 0.12, 0.05, 0.03},
                                                                        {0.10, 0.80, 0.05, 0.05},
                                                                        {0.10, 0.15, 0.75, 0.00},
                                                                        {0.15, 0.10, 0.00, 0.75}}};
  std::array<double, kNumModes> gait_freq_hz{0.0, 1.6, 1.0, 1.3};
  std::array<double, kNumModes> speed_cm_s{0.0, 40.0, 20.0, 12.0};
  int channels = 62;
  double coupling_gain = 1.0;
  double spontaneous_rate = 0.3;  // bursts per second per hemisphere
  double burst_gain = 2.5;
  double neural_lead_s = 0.1;
  double motion_rate_hz = 30.0;
  double neural_rate_hz = 2000.0;
  int initial_mode = 0;
  bool force_mode = false;  // hold initial_mode for the whole session
  bool neural = true;
  double cage_radius_cm = 150.0;
  double turn_noise = 0.25;  // yaw-rate diffusion, rad/s per sqrt(s)
  double train_fraction = 2.0 / 3.0;
  int eval_movements = 10;
  int eval_steps = 100;  // rollout length the evaluation frames must leave room for

  void validate() const {
    require(duration_s > 0.0, ErrorCode::InvalidConfig, "duration must be positive");
    require(channels >= 2, ErrorCode::InvalidConfig, "need at least one channel per hemisphere");
    require(initial_mode >= 0 && initial_mode < kNumModes, ErrorCode::InvalidConfig, "unknown initial mode");
    for (const auto& row : mode_transition) {
      double s = 0.0;
      for (double p : row) {
        require(p >= 0.0, ErrorCode::InvalidConfig, "transition probabilities must be nonnegative");
        s += p;
      }
      require(std::abs(s - 1.0) < 1e-9, ErrorCode::InvalidConfig, "transition rows must sum to 1");
    }
    require(coupling_gain >= 0.0 && spontaneous_rate >= 0.0 && burst_gain >= 0.0 && turn_noise >= 0.0, ErrorCode::InvalidConfig,
            "gains and rates must be nonnegative");
    require(motion_rate_hz == 30.0, ErrorCode::InvalidConfig, "motion is generated at 30 Hz");
    require(neural_rate_hz >= 800.0, ErrorCode::InvalidConfig, "neural rate must be at least 800 Hz");
    require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidConfig,
            "train fraction must lie in (0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"duration_s", duration_s},
            {"mode_transition", mode_transition},
            {"gait_freq_hz", gait_freq_hz},
            {"speed_cm_s", speed_cm_s},
            {"channels", channels},
            {"coupling_gain", coupling_gain},
            {"spontaneous_rate", spontaneous_rate},
            {"burst_gain", burst_gain},
            {"neural_lead_s", neural_lead_s},
            {"motion_rate_hz", motion_rate_hz},
            {"neural_rate_hz", neural_rate_hz},
            {"initial_mode", initial_mode},
            {"force_mode", force_mode},
            {"neural", neural},
            {"cage_radius_cm", cage_radius_cm},
            {"turn_noise", turn_noise},
            {"train_fraction", train_fraction},
            {"eval_movements", eval_movements},
            {"eval_steps", eval_steps}};
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.seed = j.value("seed", c.seed);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.mode_transition = j.value("mode_transition", c.mode_transition);
    c.gait_freq_hz = j.value("gait_freq_hz", c.gait_freq_hz);
    c.speed_cm_s = j.value("speed_cm_s", c.speed_cm_s);
    c.channels = j.value("channels", c.channels);
    c.coupling_gain = j.value("coupling_gain", c.coupling_gain);
    c.spontaneous_rate = j.value("spontaneous_rate", c.spontaneous_rate);
    c.burst_gain = j.value("burst_gain", c.burst_gain);
    c.neural_lead_s = j.value("neural_lead_s", c.neural_lead_s);
    c.motion_rate_hz = j.value("motion_rate_hz", c.motion_rate_hz);
    c.neural_rate_hz = j.value("neural_rate_hz", c.neural_rate_hz);
    c.initial_mode = j.value("initial_mode", c.initial_mode);
    c.force_mode = j.value("force_mode", c.force_mode);
    c.neural = j.value("neural", c.neural);
    c.cage_radius_cm = j.value("cage_radius_cm", c.cage_radius_cm);
    c.turn_noise = j.value("turn_noise", c.turn_noise);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.eval_movements = j.value("eval_movements", c.eval_movements);
    c.eval_steps = j.value("eval_steps", c.eval_steps);
    c.validate();
    return c;
  }
};

struct SynthTruth {
  std::vector<Mode> mode;             // per 30 Hz frame
  std::vector<double> gait_phase;     // radians, unwrapped
  std::vector<double> activity;       // 0 at rest, 1 in sustained movement
  std::vector<double> limb_speed_left;   // cm/s, mean of wrist and ankle
  std::vector<double> limb_speed_right;
  Eigen::MatrixXd modulation;         // frames x C clean gamma amplitude
};

struct SynthSession {
  KeypointSequence motion;
  NeuralRecording neural;
  SynthTruth truth;
  SkeletonModel skeleton;
  std::vector<std::size_t> eval_frames;  // 30 Hz frame indices, multiples of 3, in the test span
  std::size_t train_frames = 0;          // 30 Hz frames in the training span
};

inline double region_weight(Region r) {
  switch (r) {
    case Region::M1: return 1.0;
    case Region::S1: return 0.8;
    case Region::PMC: return 0.6;
    case Region::SIPL: return 0.4;
  }
  return 0.0;
}

inline std::vector<ChannelInfo> synth_channels(int n) {
  std::vector<ChannelInfo> ch(static_cast<std::size_t>(n));
  const int left = (n + 1) / 2;
  const Region order[] = {Region::M1, Region::S1, Region::PMC, Region::SIPL};
  for (int c = 0; c < n; ++c) {
    const bool is_left = c < left;
    const int k = is_left ? c : c - left;
    ch[c].hemisphere = is_left ? 'L' : 'R';
    ch[c].region = order[k % 4];
    ch[c].name = std::string(1, ch[c].hemisphere) + std::string(to_string(ch[c].region)) + "_" + std::to_string(k);
  }
  return ch;
}

namespace detail {

// Pose of one frame from the root frame and the limb drive.
struct PoseDrive {
  double activity = 0.0;
  double phase = 0.0;
  Mode mode = Mode::Rest;
  double turn = 0.0;  // yaw rate, rad/s
};

inline MotionState pose_state(const PoseDrive& d) {
  MotionState s;
  auto set = [&](int bone, double a, double b) { s.j_rot.row(bone) << std::sin(a), std::cos(a), std::sin(b), std::cos(b); };
  const double act = d.activity;
  const double half_pi = std::numbers::pi / 2.0;
  double fore_amp = 0.5, hind_amp = 0.5, fore_b = 0.95, hind_b = 1.0;
  switch (d.mode) {
    case Mode::Climb:
      fore_amp = 0.6;
      hind_amp = 0.55;
      fore_b = 0.8;
      break;
    case Mode::Swing:
      fore_amp = 1.0;
      hind_amp = 0.2;
      fore_b = 0.6;
      break;
    default: break;
  }
  // Turning lengthens the outer strides.
  const double k = std::clamp(0.3 * d.turn, -0.45, 0.45);
  const double left_scale = 1.0 - k, right_scale = 1.0 + k;

  // Bone order: neck, nose, l_sh, l_elb, l_wr, r_sh, r_elb, r_wr, l_th, l_kn, l_an, r_th, r_kn, r_an.
  set(0, 0.0, 0.0);
  set(1, 0.15 * act * std::sin(0.5 * d.phase), -0.3 + 0.08 * act * std::sin(d.phase));
  set(2, -half_pi, 0.0);
  set(5, half_pi, 0.0);
  set(8, -half_pi, 0.0);
  set(11, half_pi, 0.0);
  struct Limb {
    int upper, lower;
    double offset, amp, b0, side;
  };
  const Limb limbs[] = {{3, 4, 0.0, fore_amp * left_scale, fore_b, 1.0},
                        {6, 7, std::numbers::pi, fore_amp * right_scale, fore_b, -1.0},
                        {9, 10, std::numbers::pi, hind_amp * left_scale, hind_b, 1.0},
                        {12, 13, 0.0, hind_amp * right_scale, hind_b, -1.0}};
  for (const auto& l : limbs) {
    const double ph = d.phase + l.offset;
    const double swing = act * l.amp * std::sin(ph);
    const double lift = act * 0.25 * std::max(0.0, std::cos(ph));
    set(l.upper, l.side * swing, l.b0 - lift);
    set(l.lower, 0.0, 0.2 + act * 0.35 * std::max(0.0, std::sin(ph + half_pi)));
  }
  return s;
}

inline Keypoints place_keypoints(const JointPositions& x, const RootFrame& root) {
  Keypoints k;
  for (int j = 0; j < kNumJoints; ++j) k.row(kJointKeypoint[j]) = x.row(j);
  const Mat3& r = root.rotation;  // x down, z toward the neck
  const Vec3 nose = x.row(kNose).transpose();
  const Vec3 sacrum = x.row(kSacrum).transpose();
  const Vec3 neck = x.row(kNeck).transpose();
  k.row(0) = (nose + r * Vec3(-3.0, 0.0, -2.5)).transpose();
  k.row(2) = (nose + r * Vec3(-3.0, 2.5, -4.0)).transpose();
  k.row(3) = (nose + r * Vec3(-3.0, -2.5, -4.0)).transpose();
  k.row(11) = (0.5 * (sacrum + neck) + r * Vec3(-3.0, 0.0, 0.0)).transpose();
  k.row(19) = (sacrum + r * Vec3(-2.0, 0.0, -20.0)).transpose();
  return k;
}

// Paul Kellet's economy pink filter applied to white noise.
inline std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng, Normal& normal) {
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (auto& v : out) {
    const double w = normal(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = b0 + b1 + b2 + w * 0.1848;
  }
  return out;
}

inline std::vector<double> band_noise(std::size_t n, double lo, double hi, double fs, std::mt19937_64& rng,
                                      Normal& normal) {
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  for (const auto& sos : {dsp::butterworth(4, lo, fs, true), dsp::butterworth(4, hi, fs, false)}) {
    std::vector<std::array<double, 2>> zi(sos.size(), {0.0, 0.0});
    dsp::sosfilt(sos, x, zi);
  }
  const double gain = 1.0 / std::sqrt(2.0 * (hi - lo) / fs);
  for (auto& v : x) v *= gain;
  return x;
}

inline double interp(const std::vector<double>& v, double pos) {
  if (pos <= 0.0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (pos >= last) return v.back();
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - static_cast<double>(i);
  return v[i] + f * (v[i + 1] - v[i]);
}

inline double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

}  // namespace detail

inline SynthSession generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthSession out;
  out.skeleton = SkeletonModel::default_macaque();
  const double dt = 1.0 / cfg.motion_rate_hz;
  const auto frames = static_cast<std::size_t>(std::floor(cfg.duration_s * cfg.motion_rate_hz)) + 1;
  require(frames >= 2, ErrorCode::InvalidConfig, "session too short");

  auto mode_rng = make_rng(cfg.seed, "synth.mode");
  auto walk_rng = make_rng(cfg.seed, "synth.walk");
  Normal normal;

  auto& truth = out.truth;
  out.motion.rate_hz = cfg.motion_rate_hz;
  out.motion.frames.reserve(frames);

  Mode mode = static_cast<Mode>(cfg.initial_mode);
  double activity = mode == Mode::Rest ? 0.0 : 1.0;
  double phase = 0.0, heading = 0.0, turn = 0.0, elevation = 0.0, speed_factor = 1.0;
  int climb_dir = 1;
  Vec3 origin(0.0, 0.0, 0.0);
  std::optional<RootFrame> prev_root;
  const int per_second = static_cast<int>(cfg.motion_rate_hz);

  for (std::size_t f = 0; f < frames; ++f) {
    if (f > 0) {
      if (!cfg.force_mode && f % static_cast<std::size_t>(per_second) == 0) {
        const double u = Normal::uniform(mode_rng);
        double acc = 0.0;
        Mode next = mode;
        for (int m = 0; m < kNumModes; ++m) {
          acc += cfg.mode_transition[static_cast<int>(mode)][m];
          if (u < acc) {
            next = static_cast<Mode>(m);
            break;
          }
        }
        if (next != mode) {
          speed_factor = 0.75 + 0.5 * Normal::uniform(mode_rng);
          if (next == Mode::Climb) climb_dir = origin.z() < 60.0 ? 1 : -1;
          mode = next;
        }
      }
      const int mi = static_cast<int>(mode);
      const double target = mode == Mode::Rest ? 0.0 : 1.0;
      activity += (target - activity) * (1.0 - std::exp(-dt / 0.4));

      // Yaw rate: Ornstein-Uhlenbeck plus a pull back toward the cage centre.
      const double r = std::hypot(origin.x(), origin.y());
      double pull = 0.0;
      if (r > 0.5 * cfg.cage_radius_cm) {
        const double to_centre = std::atan2(-origin.y(), -origin.x());
        pull = 1.5 * detail::wrap_angle(to_centre - heading) * (r / cfg.cage_radius_cm - 0.5);
      }
      turn += (-turn / 1.5 + pull) * dt + cfg.turn_noise * std::sqrt(dt) * normal(walk_rng);
      heading = detail::wrap_angle(heading + turn * activity * dt);

      double elev_target = 0.0;
      if (mode == Mode::Climb) {
        if (climb_dir > 0 && origin.z() >= 100.0) climb_dir = -1;
        if (climb_dir < 0 && origin.z() <= 5.0) climb_dir = 1;
        elev_target = climb_dir > 0 ? 0.7 : -0.6;
      } else if (origin.z() > 0.0) {
        elev_target = -0.5;
      }
      elevation += (elev_target - elevation) * (1.0 - std::exp(-dt / 0.5)) * activity;
      elevation = std::clamp(elevation, -1.0, 1.0);

      const double v = activity * cfg.speed_cm_s[mi] * speed_factor;
      const Vec3 dir(std::cos(elevation) * std::cos(heading), std::cos(elevation) * std::sin(heading),
                     std::sin(elevation));
      origin += v * dt * dir;
      if (origin.z() < 0.0) origin.z() = 0.0;
      phase += 2.0 * std::numbers::pi * cfg.gait_freq_hz[mi] * activity * dt;
    }
    const Vec3 axis(std::cos(elevation) * std::cos(heading), std::cos(elevation) * std::sin(heading),
                    std::sin(elevation));
    const RootFrame root = frame_from_axis(origin, axis, prev_root);
    prev_root = root;
    const MotionState st = detail::pose_state({activity, phase, mode, turn});
    const FkResult fk = forward_kinematics(root, st, out.skeleton);
    out.motion.frames.push_back(detail::place_keypoints(fk.world, root));
    truth.mode.push_back(mode);
    truth.gait_phase.push_back(phase);
    truth.activity.push_back(activity);
  }

  truth.limb_speed_left.assign(frames, 0.0);
  truth.limb_speed_right.assign(frames, 0.0);
  for (std::size_t f = 1; f < frames; ++f) {
    const JointPositions a = out.motion.joints(f - 1), b = out.motion.joints(f);
    auto sp = [&](int j) { return (b.row(j) - a.row(j)).norm() / dt; };
    truth.limb_speed_left[f] = 0.5 * (sp(kLWrist) + sp(kLAnkle));
    truth.limb_speed_right[f] = 0.5 * (sp(kRWrist) + sp(kRAnkle));
  }

  // Root speed and yaw rate feed the directional tuning.
  std::vector<double> fwd(frames, 0.0), yaw(frames, 0.0);
  {
    const auto roots = root_frames(out.motion);
    for (std::size_t f = 1; f < frames; ++f) {
      fwd[f] = (roots[f].origin_cm - roots[f - 1].origin_cm).norm() / dt;
      const Vec3 z0 = roots[f - 1].rotation.col(2), z1 = roots[f].rotation.col(2);
      yaw[f] = std::atan2(z0.x() * z1.y() - z0.y() * z1.x(), z0.x() * z1.x() + z0.y() * z1.y()) / dt;
    }
  }

  const int nc = cfg.channels;
  const auto channels = synth_channels(nc);
  constexpr double kSpeedRef = 40.0;
  std::vector<double> pref(static_cast<std::size_t>(nc));
  {
    auto pref_rng = make_rng(cfg.seed, "synth.tuning");
    for (auto& p : pref) p = 2.0 * std::numbers::pi * Normal::uniform(pref_rng);
  }
  auto gamma_amp = [&](int c, double pos) {
    const bool left = channels[c].hemisphere == 'L';
    const double limb = detail::interp(left ? truth.limb_speed_right : truth.limb_speed_left, pos) / kSpeedRef;
    const double v = detail::interp(fwd, pos) / kSpeedRef;
    const double w = 0.5 * detail::interp(yaw, pos);
    const double tune = std::hypot(v, w) * std::max(0.0, std::cos(std::atan2(w, v) - pref[c]));
    return 1.0 + cfg.coupling_gain * region_weight(channels[c].region) * (2.5 * std::min(limb, 2.5) + tune);
  };
  auto beta_amp = [&](int c, double pos) {
    const bool left = channels[c].hemisphere == 'L';
    const double limb = detail::interp(left ? truth.limb_speed_right : truth.limb_speed_left, pos) / kSpeedRef;
    return 4.0 / (1.0 + 1.5 * cfg.coupling_gain * region_weight(channels[c].region) * std::min(limb, 2.5));
  };

  truth.modulation = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames), nc);
  const double lead_frames = cfg.neural_lead_s * cfg.motion_rate_hz;
  for (std::size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < nc; ++c) truth.modulation(static_cast<Eigen::Index>(f), c) = gamma_amp(c, static_cast<double>(f) + lead_frames);
  }

  out.train_frames = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(frames)));

  // Evaluation frames: 10 Hz-aligned starts in the test span covering rest,
  // sustained movement and mode transitions.
  {
    auto pick_rng = make_rng(cfg.seed, "synth.eval");
    const std::size_t horizon = 3 * static_cast<std::size_t>(cfg.eval_steps + 2);
    std::vector<std::size_t> rest, moving, transition;
    for (std::size_t f = out.train_frames + 30; f + horizon < frames; f += 3) {
      const std::size_t ahead = std::min(frames - 1, f + 45);
      bool changes = false;
      for (std::size_t g = f; g <= ahead; ++g) changes = changes || truth.mode[g] != truth.mode[f];
      if (changes) {
        transition.push_back(f);
      } else if (truth.mode[f] == Mode::Rest && truth.activity[f] < 1e-3) {
        rest.push_back(f);
      } else if (truth.mode[f] != Mode::Rest && truth.activity[f] > 0.9) {
        moving.push_back(f);
      }
    }
    const int want = cfg.eval_movements;
    const int n_rest = want * 3 / 10, n_trans = want * 3 / 10;
    auto take = [&](std::vector<std::size_t>& pool, int n) {
      for (int i = 0; i < n && !pool.empty(); ++i) {
        const std::size_t k = pick_rng() % pool.size();
        out.eval_frames.push_back(pool[k]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
      }
    };
    take(rest, n_rest);
    take(transition, n_trans);
    take(moving, want - static_cast<int>(out.eval_frames.size()));
    std::vector<std::size_t> rest_pool;
    for (auto* pool : {&moving, &transition, &rest}) rest_pool.insert(rest_pool.end(), pool->begin(), pool->end());
    std::sort(rest_pool.begin(), rest_pool.end());
    take(rest_pool, want - static_cast<int>(out.eval_frames.size()));
    std::sort(out.eval_frames.begin(), out.eval_frames.end());
  }

  if (!cfg.neural) return out;

  const double fs = cfg.neural_rate_hz;
  const auto ns = static_cast<std::size_t>(std::floor(static_cast<double>(frames - 1) / cfg.motion_rate_hz * fs)) + 1;
  out.neural.rate_hz = fs;
  out.neural.channels = channels;
  out.neural.samples.resize(nc, static_cast<Eigen::Index>(ns));

  // Movement-unrelated broadband gamma bursts, one process per hemisphere.
  std::array<std::vector<double>, 2> burst;
  for (int h = 0; h < 2; ++h) {
    auto brng = make_rng(cfg.seed, "synth.burst", static_cast<std::uint64_t>(h));
    burst[h].assign(ns, 0.0);
    if (cfg.spontaneous_rate <= 0.0) continue;
    double t = 0.0;
    const double total = static_cast<double>(ns) / fs;
    while (true) {
      t += -std::log(1.0 - Normal::uniform(brng)) / cfg.spontaneous_rate;
      if (t >= total) break;
      const double len = 0.3 + 0.7 * Normal::uniform(brng);
      const double amp = cfg.burst_gain * (0.6 + 0.8 * Normal::uniform(brng));
      const auto s0 = static_cast<std::size_t>(t * fs);
      const auto n = static_cast<std::size_t>(len * fs);
      for (std::size_t i = 0; i < n && s0 + i < ns; ++i) {
        const double w = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
        burst[h][s0 + i] += amp * w * w;
      }
    }
  }

  const double frame_per_sample = cfg.motion_rate_hz / fs;
  for (int c = 0; c < nc; ++c) {
    auto crng = make_rng(cfg.seed, "synth.neural", static_cast<std::uint64_t>(c));
    Normal cn;
    std::vector<double> pink = detail::pink_noise(ns, crng, cn);
    double var = 0.0;
    for (double v : pink) var += v * v;
    const double pink_scale = 20.0 / std::sqrt(var / static_cast<double>(ns));
    const std::vector<double> beta = detail::band_noise(ns, 13.0, 30.0, fs, crng, cn);
    const std::vector<double> gamma = detail::band_noise(ns, 60.0, 120.0, fs, crng, cn);
    const auto& bh = burst[channels[c].hemisphere == 'L' ? 0 : 1];
    const double rw = region_weight(channels[c].region);
    // Envelopes change slowly; evaluate them on a 10 ms grid and interpolate.
    const std::size_t grid = static_cast<std::size_t>(fs / 100.0);
    std::vector<double> g_env, b_env;
    for (std::size_t i = 0; i < ns + grid; i += grid) {
      const double pos = static_cast<double>(i) * frame_per_sample + lead_frames;
      g_env.push_back(gamma_amp(c, pos));
      b_env.push_back(beta_amp(c, pos));
    }
    std::vector<double> x(ns);
    for (std::size_t i = 0; i < ns; ++i) {
      const double gp = static_cast<double>(i) / static_cast<double>(grid);
      // Bursts carry the same gamma-up, beta-down signature as movement.
      const double ga = 2.0 * (detail::interp(g_env, gp) + rw * bh[i]);
      const double ba = detail::interp(b_env, gp) / (1.0 + 0.6 * rw * bh[i]);
      x[i] = pink_scale * pink[i] + ba * beta[i] + ga * gamma[i];
    }
    out.neural.set_channel(c, x);
  }
  return out;
}

// Session-level description of a synthetic dataset, written alongside the
// data files.
inline nlohmann::json synth_manifest(const SynthSession& s, const SynthConfig& cfg) {
  nlohmann::json j;
  j["movement_rate_hz"] = s.motion.rate_hz;
  j["processed_rate_hz"] = 10.0;
  j["neural_rate_hz"] = cfg.neural ? s.neural.rate_hz : 0.0;
  j["frames"] = s.motion.size();
  j["train_frames"] = s.train_frames;
  j["eval_frames"] = s.eval_frames;
  j["bone_length_cm"] = s.skeleton.bone_length_cm;
  std::vector<std::string> modes;
  for (auto f : s.eval_frames) modes.emplace_back(to_string(s.truth.mode[f]));
  j["eval_modes"] = modes;
  for (const auto& c : s.neural.channels) {
    j["channels"].push_back({{"name", c.name}, {"hemisphere", std::string(1, c.hemisphere)}, {"region", to_string(c.region)}});
  }
  j["synth"] = cfg.to_json();
  return j;
}

}  // namespace nbd
