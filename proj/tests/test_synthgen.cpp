#include <gtest/gtest.h>

#include "nbd/stats.hpp"
#include "nbd/synthgen.hpp"

using namespace nbd;

namespace {

SynthConfig small(double seconds, int channels = 4) {
  SynthConfig c;
  c.seed = 11;
  c.duration_s = seconds;
  c.channels = channels;
  return c;
}

// Correlation between left-limb speed and the 80-90 Hz multitaper power of
// the first right-hemisphere (M1) channel, on the 10 Hz feature grid.
double speed_gamma_correlation(const SynthSession& s) {
  const NeuralRecording pre = preprocess(s.neural);
  const std::size_t frames10 = (s.motion.size() - 1) / 3 + 1;
  const auto feats = extract_features(pre, {}, frames10);
  const int right_m1 = (s.neural.num_channels() + 1) / 2;
  std::vector<double> speed, power;
  for (std::size_t k = 5; k < frames10; ++k) {
    speed.push_back(s.truth.limb_speed_left[3 * k]);
    power.push_back(feats[k].features(right_m1, kFeatureBins + 8));
  }
  return stats::pearson(speed, power).r;
}

}  // namespace

TEST(Synth, ChannelLayoutSplitsHemispheres) {
  const auto ch = synth_channels(62);
  int left = 0;
  for (const auto& c : ch) left += c.hemisphere == 'L';
  EXPECT_EQ(left, 31);
  EXPECT_EQ(ch[0].region, Region::M1);
  EXPECT_EQ(ch[31].hemisphere, 'R');
  EXPECT_EQ(ch[31].region, Region::M1);
}

TEST(Synth, ConfigValidation) {
  auto c = small(10);
  c.mode_transition[1][1] = 0.5;
  EXPECT_THROW(c.validate(), Error);
  c = small(10, 1);
  EXPECT_THROW(c.validate(), Error);
  c = small(10);
  EXPECT_EQ(SynthConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Synth, OutputsAreAlignedFromSampleZero) {
  const auto s = generate(small(20));
  EXPECT_EQ(s.motion.size(), 601u);
  EXPECT_EQ(s.neural.num_samples(), 40001u);
  EXPECT_EQ(s.truth.mode.size(), s.motion.size());
  EXPECT_EQ(s.truth.gait_phase.size(), s.motion.size());
  EXPECT_EQ(s.truth.modulation.rows(), static_cast<Eigen::Index>(s.motion.size()));
  EXPECT_EQ(s.truth.modulation.cols(), 4);
  EXPECT_TRUE(s.neural.samples.allFinite());
}

TEST(Synth, DeterministicForIdenticalSeed) {
  const auto a = generate(small(15));
  const auto b = generate(small(15));
  ASSERT_EQ(a.motion.size(), b.motion.size());
  for (std::size_t t = 0; t < a.motion.size(); ++t) ASSERT_EQ(a.motion.frames[t], b.motion.frames[t]);
  EXPECT_EQ(a.neural.samples, b.neural.samples);
  EXPECT_EQ(a.eval_frames, b.eval_frames);
  auto other = small(15);
  other.seed = 12;
  EXPECT_NE(generate(other).neural.samples, a.neural.samples);
}

TEST(Synth, ForcedRestIsStatic) {
  auto c = small(30);
  c.force_mode = true;
  c.initial_mode = 0;
  c.neural = false;
  const auto s = generate(c);
  for (std::size_t t = 1; t < s.motion.size(); ++t) EXPECT_EQ(s.motion.frames[t], s.motion.frames[0]);
  const auto states = inverse_kinematics(downsample_motion(s.motion), s.skeleton);
  for (const auto& st : states) EXPECT_EQ(st.j_vel.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Synth, BoneLengthsAreFixed) {
  auto c = small(60);
  c.neural = false;
  const auto s = generate(c);
  for (std::size_t t = 0; t < s.motion.size(); t += 7) {
    const JointPositions x = s.motion.joints(t);
    for (int b = 0; b < kNumBones; ++b) {
      EXPECT_NEAR((x.row(kBoneChild[b]) - x.row(kBoneParent[b])).norm(), s.skeleton.bone_length_cm[b], 1e-9);
    }
  }
}

TEST(Synth, KinematicRoundTripIsExact) {
  auto c = small(120);
  c.neural = false;
  const auto s = generate(c);
  const auto rep = roundtrip_report(downsample_motion(s.motion), s.skeleton);
  EXPECT_LT(rep.mean_abs_error_cm, 1e-6);
  EXPECT_LT(rep.max_abs_error_cm, 1e-6);
}

TEST(Synth, VisitsEveryModeAndMoves) {
  auto c = small(600);
  c.neural = false;
  const auto s = generate(c);
  std::array<int, kNumModes> count{};
  for (Mode m : s.truth.mode) ++count[static_cast<int>(m)];
  for (int k : count) EXPECT_GT(k, 300);
  double max_r = 0.0, max_z = 0.0;
  for (std::size_t t = 0; t < s.motion.size(); ++t) {
    const auto x = s.motion.joints(t);
    max_r = std::max(max_r, std::hypot(x(kSacrum, 0), x(kSacrum, 1)));
    max_z = std::max(max_z, x(kSacrum, 2));
  }
  EXPECT_GT(max_r, 50.0);
  EXPECT_LT(max_r, 2.0 * c.cage_radius_cm);
  EXPECT_GT(max_z, 20.0);
}

TEST(Synth, EvaluationFramesCoverRestAndMovement) {
  auto c = small(300);
  c.neural = false;
  const auto s = generate(c);
  ASSERT_EQ(s.eval_frames.size(), 10u);
  bool rest = false, moving = false;
  for (auto f : s.eval_frames) {
    EXPECT_EQ(f % 3, 0u);
    EXPECT_GE(f, s.train_frames);
    EXPECT_LT(f + 3 * 100, s.motion.size());
    rest = rest || s.truth.mode[f] == Mode::Rest;
    moving = moving || s.truth.mode[f] != Mode::Rest;
  }
  EXPECT_TRUE(rest);
  EXPECT_TRUE(moving);
}

TEST(Synth, GammaPowerTracksContralateralLimbSpeed) {
  const auto s = generate(small(300));
  EXPECT_GT(speed_gamma_correlation(s), 0.4);
}

TEST(Synth, UncoupledGammaPowerIgnoresMovement) {
  auto c = small(300);
  c.coupling_gain = 0.0;
  EXPECT_LT(std::abs(speed_gamma_correlation(generate(c))), 0.05);
}

TEST(Synth, ModulationIsLateralized) {
  auto c = small(300, 8);
  c.neural = false;
  const auto s = generate(c);
  std::vector<double> left_speed(s.truth.limb_speed_left.begin(), s.truth.limb_speed_left.end());
  auto column = [&](int ch) {
    std::vector<double> v(static_cast<std::size_t>(s.truth.modulation.rows()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.truth.modulation(static_cast<Eigen::Index>(i), ch);
    return v;
  };
  // Channels 0 and 4 are the left and right M1 sites.
  const double contra = stats::pearson(left_speed, column(4)).r;
  const double ipsi = stats::pearson(left_speed, column(0)).r;
  EXPECT_GT(contra, ipsi);
}
