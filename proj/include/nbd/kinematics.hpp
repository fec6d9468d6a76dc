#pragma once

// Whole-body kinematic representation: root frame construction, analytical
// two-DOF inverse kinematics and the matching forward kinematics.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nbd/error.hpp"

namespace nbd {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumJoints = 15;
inline constexpr int kNumBones = 14;
inline constexpr int kNumKeypoints = 20;
inline constexpr int kStateDim = 3 + 2 + 3 * kNumJoints + 4 * kNumBones + 3 * kNumJoints;
static_assert(kStateDim == 151);

// Joint order of the 15-joint kinematic model.
enum Joint : int {
  kNose = 0,
  kNeck,
  kLShoulder,
  kLElbow,
  kLWrist,
  kRShoulder,
  kRElbow,
  kRWrist,
  kSacrum,
  kLThigh,
  kLKnee,
  kLAnkle,
  kRThigh,
  kRKnee,
  kRAnkle,
};

inline constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "nose",       "neck",     "left_shoulder", "left_elbow",  "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist", "sacrum",   "left_thigh",
    "left_knee",  "left_ankle", "right_thigh", "right_knee", "right_ankle"};

// The 20 tracked keypoints, in input-table column order.
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "head",        "nose",        "left_ear",   "right_ear",   "neck",
    "left_shoulder", "left_elbow", "left_wrist", "right_shoulder", "right_elbow",
    "right_wrist", "back",        "sacrum",     "left_thigh",  "left_knee",
    "left_ankle",  "right_thigh", "right_knee", "right_ankle", "tail_tip"};

// Keypoint column for each of the 15 joints.
inline constexpr std::array<int, kNumJoints> kJointKeypoint = {1, 4, 5, 6, 7, 8, 9, 10,
                                                               12, 13, 14, 15, 16, 17, 18};

// Bone b connects kBoneParent[b] -> kBoneChild[b]. Parents always precede
// their children in this order, so a single forward pass chains frames.
inline constexpr std::array<int, kNumBones> kBoneChild = {
    kNeck, kNose, kLShoulder, kLElbow, kLWrist, kRShoulder, kRElbow,
    kRWrist, kLThigh, kLKnee, kLAnkle, kRThigh, kRKnee, kRAnkle};
inline constexpr std::array<int, kNumBones> kBoneParent = {
    kSacrum, kNeck, kNeck, kLShoulder, kLElbow, kNeck, kRShoulder,
    kRElbow, kSacrum, kLThigh, kLKnee, kSacrum, kRThigh, kRKnee};

using JointPositions = Eigen::Matrix<double, kNumJoints, 3, Eigen::RowMajor>;
using Keypoints = Eigen::Matrix<double, kNumKeypoints, 3, Eigen::RowMajor>;
using StateVector = Eigen::Matrix<double, kStateDim, 1>;

struct SkeletonModel {
  std::array<std::string, kNumJoints> joints;
  std::array<int, kNumJoints> parent_of;  // -1 for the root
  std::array<double, kNumBones> bone_length_cm;

  static SkeletonModel with_lengths(const std::array<double, kNumBones>& lengths) {
    SkeletonModel s;
    for (int j = 0; j < kNumJoints; ++j) {
      s.joints[j] = std::string(kJointNames[j]);
      s.parent_of[j] = -1;
    }
    for (int b = 0; b < kNumBones; ++b) s.parent_of[kBoneChild[b]] = kBoneParent[b];
    s.bone_length_cm = lengths;
    s.validate();
    return s;
  }

  // Representative macaque proportions, cm.
  static SkeletonModel default_macaque() {
    return with_lengths({28.0, 9.0, 5.5, 14.0, 13.0, 5.5, 14.0, 13.0, 5.0, 15.0, 14.5, 5.0, 15.0,
                         14.5});
  }

  void validate() const {
    int roots = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      if (parent_of[j] < 0) {
        ++roots;
        require(j == kSacrum, ErrorCode::InvalidSkeleton, "tree must be rooted at sacrum");
      }
    }
    require(roots == 1, ErrorCode::InvalidSkeleton, "exactly one root expected");
    for (int j = 0; j < kNumJoints; ++j) {
      int hops = 0;
      for (int k = j; parent_of[k] >= 0; k = parent_of[k]) {
        require(parent_of[k] < kNumJoints, ErrorCode::InvalidSkeleton, "parent out of range");
        require(++hops <= kNumJoints, ErrorCode::InvalidSkeleton, "cycle in kinematic tree");
      }
    }
    for (int b = 0; b < kNumBones; ++b) {
      require(parent_of[kBoneChild[b]] == kBoneParent[b], ErrorCode::InvalidSkeleton,
              "topology differs from the fixed bone order");
      require(bone_length_cm[b] > 0.0 && std::isfinite(bone_length_cm[b]),
              ErrorCode::InvalidSkeleton, "bone lengths must be positive");
    }
  }
};

struct RootFrame {
  Vec3 origin_cm = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // columns: root x, y, z in world coordinates
};

// Flattened layout: t_root(3) r_root(2) j_pos(45) j_rot(56) j_vel(45).
struct StateLayout {
  static constexpr int t_root = 0;
  static constexpr int r_root = 3;
  static constexpr int j_pos = 5;
  static constexpr int j_rot = 50;
  static constexpr int j_vel = 106;
  static constexpr int dim = kStateDim;
};

struct MotionState {
  Vec3 t_root = Vec3::Zero();
  Eigen::Vector2d r_root = Eigen::Vector2d::Zero();  // (yaw about x, pitch about y), radians
  JointPositions j_pos = JointPositions::Zero();
  Eigen::Matrix<double, kNumBones, 4, Eigen::RowMajor> j_rot;  // sin1 cos1 sin2 cos2
  JointPositions j_vel = JointPositions::Zero();

  MotionState() {
    for (int b = 0; b < kNumBones; ++b) j_rot.row(b) << 0.0, 1.0, 0.0, 1.0;
  }

  StateVector flatten() const {
    StateVector v;
    v.segment<3>(StateLayout::t_root) = t_root;
    v.segment<2>(StateLayout::r_root) = r_root;
    v.segment<45>(StateLayout::j_pos) = Eigen::Map<const Eigen::Matrix<double, 45, 1>>(j_pos.data());
    v.segment<56>(StateLayout::j_rot) = Eigen::Map<const Eigen::Matrix<double, 56, 1>>(j_rot.data());
    v.segment<45>(StateLayout::j_vel) = Eigen::Map<const Eigen::Matrix<double, 45, 1>>(j_vel.data());
    return v;
  }

  template <typename Derived>
  static MotionState unflatten(const Eigen::MatrixBase<Derived>& v) {
    require(v.size() == kStateDim, ErrorCode::ShapeMismatch, "state vector must have 151 entries");
    MotionState s;
    for (int i = 0; i < 3; ++i) s.t_root[i] = v(StateLayout::t_root + i);
    for (int i = 0; i < 2; ++i) s.r_root[i] = v(StateLayout::r_root + i);
    for (int i = 0; i < 45; ++i) s.j_pos.data()[i] = v(StateLayout::j_pos + i);
    for (int i = 0; i < 56; ++i) s.j_rot.data()[i] = v(StateLayout::j_rot + i);
    for (int i = 0; i < 45; ++i) s.j_vel.data()[i] = v(StateLayout::j_vel + i);
    return s;
  }

  // Projects every (sin, cos) pair back onto the unit circle.
  void normalize_rotations() {
    for (int b = 0; b < kNumBones; ++b) {
      for (int k = 0; k < 4; k += 2) {
        const double n = std::hypot(j_rot(b, k), j_rot(b, k + 1));
        require(n > 1e-6, ErrorCode::NonNormalizableRotation,
                "joint rotation pair has near-zero norm at bone " + std::to_string(b));
        j_rot(b, k) /= n;
        j_rot(b, k + 1) /= n;
      }
    }
  }
};

struct KeypointSequence {
  double rate_hz = 30.0;
  std::vector<Keypoints> frames;

  std::size_t size() const { return frames.size(); }

  JointPositions joints(std::size_t t) const {
    JointPositions out;
    for (int j = 0; j < kNumJoints; ++j) out.row(j) = frames[t].row(kJointKeypoint[j]);
    return out;
  }

  void validate() const {
    for (const auto& f : frames) {
      require(f.allFinite(), ErrorCode::InvalidSequence, "non-finite keypoint coordinate");
    }
  }
};

namespace detail {

inline Mat3 rot_x(double s, double c) {
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rot_y(double s, double c) {
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

// Angles (a about x, then b about y, intrinsic) taking e_z onto the unit vector u.
inline std::pair<double, double> two_angle(const Vec3& u) {
  const double b = std::asin(std::clamp(u.x(), -1.0, 1.0));
  const double a = std::atan2(-u.y(), u.z());
  return {a, b};
}

}  // namespace detail

// Root frame from its z direction. The y axis is the counterclockwise
// quarter-turn of z's horizontal projection; near-vertical axes reuse the
// previous frame's y axis (or world x when there is none).
inline RootFrame frame_from_axis(const Vec3& origin, const Vec3& z_dir,
                                 const std::optional<RootFrame>& previous) {
  const double n = z_dir.norm();
  require(n > 1e-6, ErrorCode::DegenerateFrame, "root axis has zero length");
  const Vec3 z = z_dir / n;
  const Eigen::Vector2d proj(z.x(), z.y());
  Vec3 y;
  if (proj.norm() >= 1e-6) {
    y = Vec3(-proj.y(), proj.x(), 0.0).normalized();
  } else {
    const Vec3 seed = previous ? Vec3(previous->rotation.col(1)) : Vec3::UnitX();
    y = seed - seed.dot(z) * z;
    require(y.norm() > 1e-9, ErrorCode::DegenerateFrame, "cannot orthogonalize fallback y axis");
    y.normalize();
  }
  RootFrame f;
  f.origin_cm = origin;
  f.rotation.col(0) = y.cross(z);
  f.rotation.col(1) = y;
  f.rotation.col(2) = z;
  return f;
}

inline RootFrame build_root_frame(const Vec3& sacrum, const Vec3& neck,
                                  const std::optional<RootFrame>& previous = std::nullopt) {
  require((neck - sacrum).norm() > 1e-6, ErrorCode::DegenerateFrame, "sacrum and neck coincide");
  return frame_from_axis(sacrum, neck - sacrum, previous);
}

inline KeypointSequence downsample_motion(const KeypointSequence& seq) {
  require(seq.rate_hz == 30.0, ErrorCode::RateMismatch,
          "expected 30 Hz input, got " + std::to_string(seq.rate_hz));
  KeypointSequence out;
  out.rate_hz = 10.0;
  for (std::size_t t = 0; t < seq.size(); t += 3) out.frames.push_back(seq.frames[t]);
  return out;
}

// Per-bone mean length over the whole sequence.
inline SkeletonModel estimate_skeleton(const KeypointSequence& seq) {
  require(seq.size() >= 1, ErrorCode::InvalidSequence, "empty sequence");
  std::array<double, kNumBones> sum{};
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const JointPositions x = seq.joints(t);
    for (int b = 0; b < kNumBones; ++b) sum[b] += (x.row(kBoneChild[b]) - x.row(kBoneParent[b])).norm();
  }
  for (auto& s : sum) s /= static_cast<double>(seq.size());
  return SkeletonModel::with_lengths(sum);
}

// Root frames of every frame of a sequence, chained so the vertical-axis
// fallback sees its predecessor.
inline std::vector<RootFrame> root_frames(const KeypointSequence& seq) {
  std::vector<RootFrame> frames;
  frames.reserve(seq.size());
  std::optional<RootFrame> prev;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const JointPositions x = seq.joints(t);
    prev = build_root_frame(x.row(kSacrum).transpose(), x.row(kNeck).transpose(), prev);
    frames.push_back(*prev);
  }
  return frames;
}

// Joint rotations of a single pose given its root frame.
inline Eigen::Matrix<double, kNumBones, 4, Eigen::RowMajor> joint_rotations(const JointPositions& x,
                                                                           const RootFrame& root) {
  Eigen::Matrix<double, kNumBones, 4, Eigen::RowMajor> rot;
  std::array<Mat3, kNumJoints> frame;
  frame[kSacrum] = root.rotation;
  for (int b = 0; b < kNumBones; ++b) {
    const int p = kBoneParent[b];
    const int c = kBoneChild[b];
    const Vec3 d = (x.row(c) - x.row(p)).transpose();
    const double len = d.norm();
    require(len >= 1e-6, ErrorCode::ZeroLengthBone, "bone " + std::to_string(b) + " has zero length");
    const Vec3 u = frame[p].transpose() * (d / len);
    const auto [a, bb] = detail::two_angle(u);
    const double sa = std::sin(a), ca = std::cos(a), sb = std::sin(bb), cb = std::cos(bb);
    rot.row(b) << sa, ca, sb, cb;
    frame[c] = frame[p] * detail::rot_x(sa, ca) * detail::rot_y(sb, cb);
  }
  return rot;
}

// Analytical IK. Emits one state per frame t = 1..T-1.
inline std::vector<MotionState> inverse_kinematics(const KeypointSequence& seq,
                                                   const SkeletonModel& skel) {
  skel.validate();
  seq.validate();
  require(seq.size() >= 2, ErrorCode::InvalidSequence, "need at least two frames");
  const std::vector<RootFrame> frames = root_frames(seq);
  std::vector<MotionState> states;
  states.reserve(seq.size() - 1);
  JointPositions prev_x = seq.joints(0);
  for (std::size_t t = 1; t < seq.size(); ++t) {
    const JointPositions x = seq.joints(t);
    const RootFrame& r0 = frames[t - 1];
    const RootFrame& r1 = frames[t];
    MotionState s;
    s.t_root = r0.rotation.transpose() * (r1.origin_cm - r0.origin_cm);
    const Vec3 z_rel = r0.rotation.transpose() * r1.rotation.col(2);
    const auto [yaw, pitch] = detail::two_angle(z_rel);
    s.r_root << yaw, pitch;
    for (int j = 0; j < kNumJoints; ++j) {
      s.j_pos.row(j) = (r1.rotation.transpose() * (x.row(j).transpose() - r1.origin_cm)).transpose();
      s.j_vel.row(j) = (r0.rotation.transpose() * (x.row(j) - prev_x.row(j)).transpose()).transpose();
    }
    s.j_pos.row(kSacrum).setZero();
    s.j_rot = joint_rotations(x, r1);
    states.push_back(s);
    prev_x = x;
  }
  return states;
}

struct FkResult {
  RootFrame root;
  JointPositions world;
};

// Advances the root by one step and chains joint positions from the state's
// rotations. Only t_root, r_root and j_rot are read.
inline FkResult forward_kinematics(const RootFrame& prev_root, const MotionState& state,
                                   const SkeletonModel& skel) {
  FkResult out;
  const Vec3 origin = prev_root.origin_cm + prev_root.rotation * state.t_root;
  const double yaw = state.r_root[0], pitch = state.r_root[1];
  const Vec3 z_rel = detail::rot_x(std::sin(yaw), std::cos(yaw)) *
                     detail::rot_y(std::sin(pitch), std::cos(pitch)) * Vec3::UnitZ();
  out.root = frame_from_axis(origin, prev_root.rotation * z_rel, prev_root);

  std::array<Mat3, kNumJoints> frame;
  frame[kSacrum] = out.root.rotation;
  out.world.row(kSacrum) = origin.transpose();
  for (int b = 0; b < kNumBones; ++b) {
    const int p = kBoneParent[b];
    const int c = kBoneChild[b];
    double sc[4];
    for (int k = 0; k < 4; k += 2) {
      const double n = std::hypot(state.j_rot(b, k), state.j_rot(b, k + 1));
      require(n > 1e-6, ErrorCode::NonNormalizableRotation,
              "joint rotation pair has near-zero norm at bone " + std::to_string(b));
      sc[k] = state.j_rot(b, k) / n;
      sc[k + 1] = state.j_rot(b, k + 1) / n;
    }
    frame[c] = frame[p] * detail::rot_x(sc[0], sc[1]) * detail::rot_y(sc[2], sc[3]);
    const Vec3 dir = frame[c].col(2);
    out.world.row(c) = out.world.row(p) + skel.bone_length_cm[b] * dir.transpose();
  }
  return out;
}

// Decodes a whole state sequence starting from a known root frame.
inline std::vector<JointPositions> decode_sequence(const RootFrame& start,
                                                   const std::vector<MotionState>& states,
                                                   const SkeletonModel& skel) {
  std::vector<JointPositions> out;
  out.reserve(states.size());
  RootFrame root = start;
  for (const auto& s : states) {
    FkResult r = forward_kinematics(root, s, skel);
    root = r.root;
    out.push_back(r.world);
  }
  return out;
}

struct RoundtripReport {
  double mean_error_cm = 0.0;
  double mean_abs_error_cm = 0.0;
  double max_abs_error_cm = 0.0;
  std::size_t count = 0;
  double bin_width_cm = 0.1;
  std::vector<std::size_t> histogram;  // absolute coordinate errors, bin k = [k, k+1) * width
};

// IK -> FK over the whole sequence; errors are signed per-coordinate differences
// of all 15 joints over frames 1..T-1.
inline RoundtripReport roundtrip_report(const KeypointSequence& seq, const SkeletonModel& skel) {
  const std::vector<MotionState> states = inverse_kinematics(seq, skel);
  const RootFrame start = root_frames(KeypointSequence{seq.rate_hz, {seq.frames.front()}}).front();
  const std::vector<JointPositions> decoded = decode_sequence(start, states, skel);

  RoundtripReport rep;
  double sum = 0.0, sum_abs = 0.0;
  for (std::size_t t = 0; t < decoded.size(); ++t) {
    const JointPositions err = decoded[t] - seq.joints(t + 1);
    for (int i = 0; i < err.size(); ++i) {
      const double e = err.data()[i];
      const double a = std::abs(e);
      sum += e;
      sum_abs += a;
      rep.max_abs_error_cm = std::max(rep.max_abs_error_cm, a);
      const auto bin = static_cast<std::size_t>(a / rep.bin_width_cm);
      if (bin >= rep.histogram.size()) rep.histogram.resize(bin + 1, 0);
      ++rep.histogram[bin];
      ++rep.count;
    }
  }
  if (rep.count > 0) {
    rep.mean_error_cm = sum / static_cast<double>(rep.count);
    rep.mean_abs_error_cm = sum_abs / static_cast<double>(rep.count);
  }
  return rep;
}

}  // namespace nbd
