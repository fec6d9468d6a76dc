#pragma once

// File formats: motion tables, NBIN1 recordings, NFEA1 features, NSTA1
// states, JSONL rollout traces and session manifests.

#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nbd/binio.hpp"
#include "nbd/evaluation.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/neural.hpp"
#include "nbd/rollout.hpp"

namespace nbd::io {

inline constexpr std::string_view kNeuralMagic = "NBIN1";
inline constexpr std::string_view kFeatureMagic = "NFEA1";
inline constexpr std::string_view kStateMagic = "NSTA1";

template <typename T>
struct WithProvenance {
  T value;
  std::optional<Provenance> provenance;
};

// ---------------------------------------------------------------- motion

// Header `frame,<kp>_x,<kp>_y,<kp>_z,...`; lines starting with '#' before
// the header are comments (the provenance record lives there).
inline std::string encode_motion_csv(const KeypointSequence& seq, const std::optional<Provenance>& prov = std::nullopt) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  if (prov) out << "# provenance " << prov->to_json().dump() << "\n";
  out << "# rate_hz " << seq.rate_hz << "\n";
  out << "frame";
  for (auto name : kKeypointNames) out << ',' << name << "_x," << name << "_y," << name << "_z";
  out << '\n';
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out << t;
    for (int k = 0; k < kNumKeypoints; ++k) {
      for (int a = 0; a < 3; ++a) out << ',' << seq.frames[t](k, a);
    }
    out << '\n';
  }
  return out.str();
}

inline WithProvenance<KeypointSequence> decode_motion_csv(const std::string& text) {
  WithProvenance<KeypointSequence> res;
  auto& seq = res.value;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header && line[0] == '#') {
      std::istringstream c(line.substr(1));
      std::string key;
      c >> key;
      std::string rest;
      std::getline(c, rest);
      try {
        if (key == "provenance") res.provenance = Provenance::from_json(nlohmann::json::parse(rest));
        if (key == "rate_hz") seq.rate_hz = std::stod(rest);
      } catch (const std::exception& e) {
        fail(ErrorCode::FormatError, "bad comment record on line " + std::to_string(lineno) + ": " + e.what());
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (!header) {
      require(cells.size() == 1 + 3 * kNumKeypoints && cells[0] == "frame", ErrorCode::FormatError,
              "motion header must list frame and 20 keypoints x (x,y,z)");
      for (int k = 0; k < kNumKeypoints; ++k) {
        require(cells[1 + 3 * k] == std::string(kKeypointNames[k]) + "_x", ErrorCode::FormatError,
                "unexpected motion column " + cells[1 + 3 * k]);
      }
      header = true;
      continue;
    }
    require(cells.size() == 1 + 3 * kNumKeypoints, ErrorCode::FormatError,
            "line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields");
    Keypoints kp;
    for (int k = 0; k < kNumKeypoints; ++k) {
      for (int a = 0; a < 3; ++a) {
        const std::string& s = cells[static_cast<std::size_t>(1 + 3 * k + a)];
        double v = 0.0;
        try {
          std::size_t used = 0;
          v = std::stod(s, &used);
          require(used == s.size(), ErrorCode::FormatError, "trailing characters");
        } catch (const std::logic_error&) {
          fail(ErrorCode::FormatError, "non-numeric value '" + s + "' on line " + std::to_string(lineno));
        }
        require(std::isfinite(v), ErrorCode::InvalidSequence, "non-finite coordinate on line " + std::to_string(lineno));
        kp(k, a) = v;
      }
    }
    seq.frames.push_back(kp);
  }
  require(header, ErrorCode::FormatError, "motion table has no header row");
  return res;
}

// ---------------------------------------------------------------- neural

inline std::string encode_neural(const NeuralRecording& rec, const std::optional<Provenance>& prov = std::nullopt) {
  Writer w;
  w.bytes(kNeuralMagic);
  w.put(static_cast<std::uint32_t>(rec.num_channels()));
  w.put(static_cast<std::uint64_t>(rec.num_samples()));
  w.put(rec.rate_hz);
  for (int c = 0; c < rec.num_channels(); ++c) {
    for (Eigen::Index i = 0; i < rec.samples.cols(); ++i) w.put(rec.samples(c, i));
  }
  write_provenance(w, prov);
  return w.take();
}

// Channel metadata is not part of the binary; it comes from the manifest.
// Without it, the first half of the channels is taken as the left
// hemisphere.
inline WithProvenance<NeuralRecording> decode_neural(std::string_view data,
                                                     const std::vector<ChannelInfo>& channels = {}) {
  Reader r(data);
  r.expect_magic(kNeuralMagic);
  const auto nc = r.get<std::uint32_t>();
  const auto ns = r.get<std::uint64_t>();
  WithProvenance<NeuralRecording> res;
  auto& rec = res.value;
  rec.rate_hz = r.get<double>();
  require(rec.rate_hz > 0.0 && std::isfinite(rec.rate_hz), ErrorCode::FormatError, "bad sample rate");
  require(r.remaining() >= static_cast<std::size_t>(nc) * ns * sizeof(float), ErrorCode::FormatError,
          "sample block shorter than its header claims");
  rec.samples.resize(nc, static_cast<Eigen::Index>(ns));
  for (std::uint32_t c = 0; c < nc; ++c) {
    for (std::uint64_t i = 0; i < ns; ++i) rec.samples(c, static_cast<Eigen::Index>(i)) = r.get<float>();
  }
  if (channels.empty()) {
    rec.channels.resize(nc);
    for (std::uint32_t c = 0; c < nc; ++c) {
      rec.channels[c].name = "ch" + std::to_string(c);
      rec.channels[c].hemisphere = c < (nc + 1) / 2 ? 'L' : 'R';
    }
  } else {
    require(channels.size() == nc, ErrorCode::ShapeMismatch, "manifest channel count differs from the recording");
    rec.channels = channels;
  }
  res.provenance = read_provenance(r);
  return res;
}

// ---------------------------------------------------------------- features

inline std::string encode_features(const std::vector<FeatureMatrix>& windows,
                                   const std::optional<Provenance>& prov = std::nullopt) {
  Writer w;
  w.bytes(kFeatureMagic);
  const auto nc = windows.empty() ? 0 : static_cast<std::uint32_t>(windows.front().rows());
  w.put(static_cast<std::uint32_t>(windows.size()));
  w.put(nc);
  w.put(static_cast<std::uint32_t>(kFeatureDim));
  for (const auto& m : windows) {
    require(m.rows() == nc, ErrorCode::ShapeMismatch, "feature windows differ in channel count");
    for (Eigen::Index i = 0; i < m.size(); ++i) w.put(static_cast<float>(m.data()[i]));
  }
  write_provenance(w, prov);
  return w.take();
}

inline WithProvenance<std::vector<FeatureMatrix>> decode_features(std::string_view data) {
  Reader r(data);
  r.expect_magic(kFeatureMagic);
  const auto nw = r.get<std::uint32_t>();
  const auto nc = r.get<std::uint32_t>();
  const auto nf = r.get<std::uint32_t>();
  require(nf == kFeatureDim, ErrorCode::FormatError, "feature width must be 30");
  require(r.remaining() >= static_cast<std::size_t>(nw) * nc * nf * sizeof(float), ErrorCode::FormatError,
          "feature block shorter than its header claims");
  WithProvenance<std::vector<FeatureMatrix>> res;
  res.value.reserve(nw);
  for (std::uint32_t k = 0; k < nw; ++k) {
    FeatureMatrix m(nc, kFeatureDim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.get<float>();
    res.value.push_back(std::move(m));
  }
  res.provenance = read_provenance(r);
  return res;
}

// ---------------------------------------------------------------- states

// Root frame of every 10 Hz frame and the state of every transition.
struct StateFile {
  std::vector<RootFrame> roots;
  std::vector<MotionState> states;
};

inline std::string encode_states(const StateFile& f, const std::optional<Provenance>& prov = std::nullopt) {
  Writer w;
  w.bytes(kStateMagic);
  w.put(static_cast<std::uint32_t>(f.roots.size()));
  w.put(static_cast<std::uint32_t>(f.states.size()));
  w.put(static_cast<std::uint32_t>(kStateDim));
  for (const auto& r : f.roots) {
    for (int i = 0; i < 3; ++i) w.put(r.origin_cm(i));
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 3; ++i) w.put(r.rotation(i, c));
    }
  }
  for (const auto& s : f.states) {
    const StateVector v = s.flatten();
    for (int i = 0; i < kStateDim; ++i) w.put(v(i));
  }
  write_provenance(w, prov);
  return w.take();
}

inline WithProvenance<StateFile> decode_states(std::string_view data) {
  Reader r(data);
  r.expect_magic(kStateMagic);
  const auto nr = r.get<std::uint32_t>();
  const auto ns = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  require(dim == kStateDim, ErrorCode::FormatError, "state width must be " + std::to_string(kStateDim));
  require(r.remaining() >= (static_cast<std::size_t>(nr) * 12 + static_cast<std::size_t>(ns) * dim) * sizeof(double),
          ErrorCode::FormatError, "state block shorter than its header claims");
  WithProvenance<StateFile> res;
  for (std::uint32_t k = 0; k < nr; ++k) {
    RootFrame f;
    for (int i = 0; i < 3; ++i) f.origin_cm(i) = r.get<double>();
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 3; ++i) f.rotation(i, c) = r.get<double>();
    }
    res.value.roots.push_back(f);
  }
  for (std::uint32_t k = 0; k < ns; ++k) {
    StateVector v;
    for (int i = 0; i < kStateDim; ++i) v(i) = r.get<double>();
    res.value.states.push_back(MotionState::unflatten(v));
  }
  res.provenance = read_provenance(r);
  return res;
}

// ---------------------------------------------------------------- metadata

inline nlohmann::json skeleton_to_json(const SkeletonModel& s) {
  nlohmann::json bones = nlohmann::json::array();
  for (int b = 0; b < kNumBones; ++b) {
    bones.push_back({{"parent", s.joints[kBoneParent[b]]}, {"child", s.joints[kBoneChild[b]]},
                     {"length_cm", s.bone_length_cm[b]}});
  }
  return {{"joints", s.joints}, {"bones", bones}};
}

inline SkeletonModel skeleton_from_json(const nlohmann::json& j) {
  std::array<double, kNumBones> len{};
  const auto& bones = j.at("bones");
  require(bones.size() == kNumBones, ErrorCode::InvalidSkeleton, "skeleton must list 14 bones");
  for (int b = 0; b < kNumBones; ++b) {
    const auto& e = bones.at(static_cast<std::size_t>(b));
    require(e.at("child").get<std::string>() == kJointNames[kBoneChild[b]] &&
                e.at("parent").get<std::string>() == kJointNames[kBoneParent[b]],
            ErrorCode::InvalidSkeleton, "bones must follow the fixed tree order");
    len[static_cast<std::size_t>(b)] = e.at("length_cm").get<double>();
  }
  return SkeletonModel::with_lengths(len);
}

inline nlohmann::json channels_to_json(const std::vector<ChannelInfo>& ch) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& c : ch) {
    a.push_back({{"name", c.name}, {"hemisphere", std::string(1, c.hemisphere)}, {"region", to_string(c.region)}});
  }
  return a;
}

inline std::vector<ChannelInfo> channels_from_json(const nlohmann::json& a) {
  std::vector<ChannelInfo> ch;
  for (const auto& e : a) {
    ChannelInfo c;
    c.name = e.at("name").get<std::string>();
    const auto h = e.at("hemisphere").get<std::string>();
    require(h == "L" || h == "R", ErrorCode::FormatError, "hemisphere must be L or R");
    c.hemisphere = h[0];
    c.region = region_from_string(e.at("region").get<std::string>());
    ch.push_back(c);
  }
  return ch;
}

inline nlohmann::json state_layout_json() {
  return {{"dim", StateLayout::dim},
          {"fields",
           {{{"name", "t_root"}, {"offset", StateLayout::t_root}, {"size", 3}},
            {{"name", "r_root"}, {"offset", StateLayout::r_root}, {"size", 2}},
            {{"name", "j_pos"}, {"offset", StateLayout::j_pos}, {"size", 3 * kNumJoints}},
            {{"name", "j_rot"}, {"offset", StateLayout::j_rot}, {"size", 4 * kNumBones}},
            {{"name", "j_vel"}, {"offset", StateLayout::j_vel}, {"size", 3 * kNumJoints}}}}};
}

// One recording session and its derived files. Paths are relative to the
// manifest's directory.
struct SessionManifest {
  std::string session_id = "session";
  std::string motion;    // raw 30 Hz keypoint table
  std::string neural;    // NBIN1
  std::string features;  // NFEA1, one window per 10 Hz frame
  std::string states;    // NSTA1
  double movement_rate_hz = 30.0;
  double processed_rate_hz = 10.0;
  double neural_rate_hz = 2000.0;
  std::vector<ChannelInfo> channels;
  std::optional<SkeletonModel> skeleton;
  double train_s = 0.0;  // [0, train_s) trains, [train_s, train_s + test_s) tests
  double test_s = 0.0;
  std::vector<std::size_t> eval_frames;  // 30 Hz frame indices
  std::optional<Provenance> provenance;

  std::size_t train_frames30() const { return static_cast<std::size_t>(std::llround(train_s * movement_rate_hz)); }

  void validate() const {
    require(train_s > 0.0 && test_s > 0.0, ErrorCode::InvalidConfig, "split needs nonempty train and test spans");
    require(movement_rate_hz == 30.0 && processed_rate_hz == 10.0, ErrorCode::RateMismatch,
            "movement is recorded at 30 Hz and processed at 10 Hz");
    for (auto f : eval_frames) {
      require(static_cast<double>(f) >= train_s * movement_rate_hz, ErrorCode::InvalidConfig,
              "evaluation frames must lie in the test span");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"session_id", session_id},
                        {"paths", {{"motion", motion}, {"neural", neural}, {"features", features}, {"states", states}}},
                        {"movement_rate_hz", movement_rate_hz},
                        {"processed_rate_hz", processed_rate_hz},
                        {"neural_rate_hz", neural_rate_hz},
                        {"channels", channels_to_json(channels)},
                        {"split", {{"train_s", train_s}, {"test_s", test_s}}},
                        {"eval_frames", eval_frames},
                        {"state_layout", state_layout_json()}};
    if (skeleton) j["skeleton"] = skeleton_to_json(*skeleton);
    if (provenance) j["provenance"] = provenance->to_json();
    return j;
  }

  static SessionManifest from_json(const nlohmann::json& j) {
    SessionManifest m;
    try {
      m.session_id = j.value("session_id", m.session_id);
      const auto& p = j.at("paths");
      m.motion = p.value("motion", "");
      m.neural = p.value("neural", "");
      m.features = p.value("features", "");
      m.states = p.value("states", "");
      m.movement_rate_hz = j.value("movement_rate_hz", m.movement_rate_hz);
      m.processed_rate_hz = j.value("processed_rate_hz", m.processed_rate_hz);
      m.neural_rate_hz = j.value("neural_rate_hz", m.neural_rate_hz);
      if (j.contains("channels")) m.channels = channels_from_json(j.at("channels"));
      if (j.contains("skeleton")) m.skeleton = skeleton_from_json(j.at("skeleton"));
      m.train_s = j.at("split").at("train_s").get<double>();
      m.test_s = j.at("split").at("test_s").get<double>();
      m.eval_frames = j.value("eval_frames", std::vector<std::size_t>{});
      if (j.contains("provenance")) m.provenance = Provenance::from_json(j.at("provenance"));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::FormatError, std::string("bad manifest: ") + e.what());
    }
    m.validate();
    return m;
  }
};

inline nlohmann::json parse_json(const std::string& text, ErrorCode code = ErrorCode::ConfigParse) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(code, e.what());
  }
}

// ---------------------------------------------------------------- traces

// First line: {"type":"meta",...}; then one record per step of every
// sample. `state` and `z` are omitted for models that produce positions only.
inline void append_trace_lines(std::string& out, const RolloutTrace& tr) {
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    const auto& st = tr.steps[k];
    const StateVector v = st.state.flatten();
    nlohmann::json rec = {{"movement", tr.initial_frame},
                          {"sample", tr.sample},
                          {"step", k + 1},
                          {"state", std::vector<double>(v.data(), v.data() + v.size())},
                          {"world", std::vector<double>(st.world.data(), st.world.data() + st.world.size())},
                          {"z", std::vector<double>(st.z.data(), st.z.data() + st.z.size())}};
    out += rec.dump();
    out += '\n';
  }
}

inline void append_position_lines(std::string& out, const MovementRollouts& mv) {
  for (std::size_t s = 0; s < mv.samples.size(); ++s) {
    for (std::size_t k = 0; k < mv.samples[s].size(); ++k) {
      const auto& w = mv.samples[s][k];
      nlohmann::json rec = {{"movement", mv.initial_frame},
                            {"sample", s},
                            {"step", k + 1},
                            {"world", std::vector<double>(w.data(), w.data() + w.size())}};
      out += rec.dump();
      out += '\n';
    }
  }
}

inline std::string trace_header(const std::string& model, const nlohmann::json& extra,
                                const std::optional<Provenance>& prov) {
  nlohmann::json meta = {{"type", "meta"}, {"model", model}, {"world_layout", "15 joints x (x,y,z), row-major, cm"}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  if (prov) meta["provenance"] = prov->to_json();
  return meta.dump() + "\n";
}

struct TraceFile {
  nlohmann::json meta;
  ModelRollouts rollouts;  // movements in order of first appearance
};

inline TraceFile decode_traces(const std::string& text) {
  TraceFile tf;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::size_t, std::size_t> movement_index;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const nlohmann::json rec = parse_json(line, ErrorCode::FormatError);
    if (lineno == 1) {
      require(rec.value("type", "") == "meta", ErrorCode::FormatError, "trace file must start with a meta record");
      tf.meta = rec;
      tf.rollouts.name = rec.value("model", "");
      continue;
    }
    try {
      const auto f = rec.at("movement").get<std::size_t>();
      const auto s = rec.at("sample").get<std::size_t>();
      const auto k = rec.at("step").get<std::size_t>();
      const auto w = rec.at("world").get<std::vector<double>>();
      require(w.size() == 3 * kNumJoints, ErrorCode::FormatError, "world record must hold 45 values");
      auto [it, fresh] = movement_index.try_emplace(f, tf.rollouts.movements.size());
      if (fresh) tf.rollouts.movements.push_back({f, {}});
      auto& mv = tf.rollouts.movements[it->second];
      if (mv.samples.size() <= s) mv.samples.resize(s + 1);
      auto& traj = mv.samples[s];
      require(k == traj.size() + 1, ErrorCode::FormatError, "steps out of order on line " + std::to_string(lineno));
      traj.push_back(Eigen::Map<const JointPositions>(w.data()));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::FormatError, "bad trace record on line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(lineno > 0, ErrorCode::FormatError, "empty trace file");
  return tf;
}

}  // namespace nbd::io
