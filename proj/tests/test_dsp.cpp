#include <gtest/gtest.h>

#include <random>

#include "nbd/neural.hpp"

using namespace nbd;

namespace {

double magnitude(const dsp::Sos& sos, double f, double fs) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

NeuralRecording make_recording(int channels, double seconds, double rate) {
  NeuralRecording r;
  r.rate_hz = rate;
  for (int c = 0; c < channels; ++c) r.channels.push_back({"ch" + std::to_string(c), c % 2 ? 'R' : 'L', Region::M1});
  r.samples = SampleMatrix::Zero(channels, static_cast<Eigen::Index>(seconds * rate));
  return r;
}

// Direct-DFT periodogram oracle for a whole window.
double dft_power(const std::vector<double>& x, double f, double fs) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * f * i / fs);
  return std::norm(acc);
}

std::vector<double> sine(std::size_t n, double f, double fs, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * i / fs);
  return x;
}

NeuralRecording single_channel(const std::vector<double>& x, double rate = 400.0) {
  NeuralRecording r;
  r.rate_hz = rate;
  r.channels = {{"a", 'L', Region::M1}};
  r.samples.resize(1, static_cast<Eigen::Index>(x.size()));
  r.set_channel(0, x);
  return r;
}

}  // namespace

TEST(Butterworth, MatchesReferenceLowpassResponse) {
  const auto sos = dsp::butterworth(4, 300, 2000, false);
  const double f[] = {10, 150, 300, 450, 800};
  const double ref[] = {1.0, 9.98787498e-01, 7.07106781e-01, 1.25664174e-01, 7.51220714e-04};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(magnitude(sos, f[i], 2000), ref[i], 1e-8) << f[i];
}

TEST(Butterworth, MatchesReferenceHighpassResponse) {
  const auto sos = dsp::butterworth(2, 1, 2000, true);
  const double f[] = {0.5, 1, 2, 10};
  const double ref[] = {0.24253534, 0.70710678, 0.97014278, 0.99995002};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(magnitude(sos, f[i], 2000), ref[i], 1e-8) << f[i];
}

TEST(Butterworth, AntiAliasFilterResponse) {
  const auto sos = dsp::butterworth(8, 180, 2000, false);
  EXPECT_NEAR(magnitude(sos, 100, 2000), 0.99996956524292, 1e-9);
  EXPECT_NEAR(magnitude(sos, 180, 2000), 0.70710678118655, 1e-9);
  EXPECT_NEAR(magnitude(sos, 250, 2000), 0.05847255335586, 1e-9);
}

TEST(Butterworth, RejectsOddOrderAndBadCutoff) {
  EXPECT_THROW(dsp::butterworth(3, 10, 100, false), Error);
  EXPECT_THROW(dsp::butterworth(2, 60, 100, false), Error);
}

TEST(FiltFilt, ZeroPhaseOnPassbandSine) {
  const auto sos = dsp::butterworth(4, 100, 1000, false);
  const auto x = sine(4000, 10, 1000);
  const auto y = dsp::sosfiltfilt(sos, x);
  for (std::size_t i = 500; i < 3500; ++i) EXPECT_NEAR(y[i], x[i], 1e-3);
}

TEST(Dpss, MatchesReferenceTapers) {
  const auto t = dsp::dpss(200, 2.5, 4);
  const double ref[4][4] = {{0.00052826167132, 0.00067151825535, 0.04937830837914, 0.12402171014503},
                            {0.0036567576488, 0.00438068919291, 0.09812571179477, -0.00231809282171},
                            {0.01648057643049, 0.01864158270381, 0.09580126141527, -0.0815159945684},
                            {0.05279550130868, 0.05660906853512, 0.01967909829934, 0.0024393094455}};
  const int idx[] = {0, 1, 50, 100};
  for (int k = 0; k < 4; ++k) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(t[k][idx[j]], ref[k][j], 1e-9) << k << "," << idx[j];
  }
}

TEST(Dpss, TapersAreOrthonormal) {
  const auto t = dsp::dpss(200, 2.5, 4);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int i = 0; i < 200; ++i) dot += t[a][i] * t[b][i];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-10);
    }
  }
}

TEST(Preprocess, RemovesDcOffset) {
  auto r = make_recording(4, 3.0, 2000);
  r.samples.setConstant(250.0f);
  const auto out = preprocess(r);
  EXPECT_LT(out.samples.cwiseAbs().maxCoeff(), 250.0 * 1e-6);
}

TEST(Preprocess, CommonAverageRemovesSharedSignal) {
  auto r = make_recording(6, 3.0, 2000);
  const auto s = sine(r.num_samples(), 50, 2000, 40.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int c = 0; c < 6; ++c) {
    std::vector<double> x(r.num_samples());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = c % 2 == 0 ? s[i] : n(rng);
    r.set_channel(c, x);
  }
  const auto out = preprocess(r);
  for (int c = 0; c < 6; c += 2) EXPECT_LT(out.samples.row(c).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_GT(out.samples.row(1).cwiseAbs().maxCoeff(), 1.0);
}

TEST(Preprocess, OutputLengthAtTargetRate) {
  for (double secs : {1.0, 2.5, 7.3}) {
    auto r = make_recording(2, secs, 2000);
    const auto out = preprocess(r);
    EXPECT_EQ(out.rate_hz, 400.0);
    EXPECT_NEAR(static_cast<double>(out.num_samples()), secs * 400.0, 1.0);
  }
}

TEST(Preprocess, InterpolatesLargeArtifacts) {
  auto r = make_recording(2, 4.0, 2000);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> x(r.num_samples());
    for (auto& v : x) v = n(rng);
    if (c == 0) {
      for (std::size_t i = 3000; i < 3010; ++i) x[i] = 5000.0;
    }
    r.set_channel(c, x);
  }
  PreprocessReport rep;
  const auto out = preprocess(r, {}, &rep);
  EXPECT_GT(rep.flagged_samples[0], 0u);
  EXPECT_TRUE(rep.channel_valid[0]);
  EXPECT_LT(out.samples.cwiseAbs().maxCoeff(), 200.0f);
}

TEST(Preprocess, NonFiniteSamplesAreRepaired) {
  auto r = make_recording(2, 2.0, 2000);
  r.samples(0, 100) = std::numeric_limits<float>::quiet_NaN();
  r.samples(1, 7) = std::numeric_limits<float>::infinity();
  EXPECT_TRUE(preprocess(r).samples.allFinite());
}

TEST(Preprocess, RejectedHemisphereIsAnError) {
  auto r = make_recording(2, 2.0, 2000);
  r.samples.row(0).setConstant(std::numeric_limits<float>::quiet_NaN());
  try {
    preprocess(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllChannelsRejected);
  }
}

TEST(Preprocess, TooShort) {
  auto r = make_recording(2, 0.5, 2000);
  try {
    preprocess(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooShort);
  }
}

TEST(Features, RequirePreprocessedRate) {
  try {
    extract_features(make_recording(1, 2.0, 2000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPreprocessed);
  }
}

TEST(Features, OneWindowPerMovementFrame) {
  const auto w = extract_features(make_recording(3, 10.0, 400));
  EXPECT_EQ(w.size(), (4000u - 1) / 40 + 1);
  EXPECT_EQ(w.front().features.rows(), 3);
  EXPECT_EQ(w.front().features.cols(), 30);
  EXPECT_EQ(extract_features(make_recording(3, 10.0, 400), {}, 100).size(), 100u);
}

TEST(Features, ZeroSignalGivesZeroFeatures) {
  for (const auto& w : extract_features(make_recording(2, 3.0, 400))) {
    EXPECT_EQ(w.features.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Features, FortyHertzConcentratesInItsBin) {
  const auto x = sine(8000, 40, 400);
  const auto w = extract_features(single_channel(x));
  const auto bins = FeatureBins::make(1, 150);
  int target = 0;
  while (!(40.0 >= bins.lin_edges[target] && 40.0 < bins.lin_edges[target + 1])) ++target;

  // Direct DFT places essentially all of the window's power at 40 Hz.
  std::vector<double> seg(x.begin() + 800, x.begin() + 1000);
  EXPECT_GT(dft_power(seg, 40, 400), 100.0 * dft_power(seg, 100, 400));

  for (std::size_t k = 5; k < w.size(); k += 17) {
    const auto psd = w[k].features.row(0).segment(kFeatureBins, kFeatureBins);
    double near = 0.0;
    for (int b = std::max(0, target - 1); b <= std::min(kFeatureBins - 1, target + 1); ++b) near += psd(b);
    EXPECT_GE(near / psd.sum(), 0.8);
    Eigen::Index arg;
    psd.maxCoeff(&arg);
    EXPECT_EQ(arg, target);
  }
}

TEST(Features, MorletPeaksNearSineFrequency) {
  const auto bins = FeatureBins::make(1, 150);
  const int b = 10;
  const auto x = sine(4000, bins.log_centers[b], 400);
  const auto w = extract_features(single_channel(x));
  const auto m = w[50].features.row(0).head(kFeatureBins);
  Eigen::Index arg;
  m.maxCoeff(&arg);
  EXPECT_EQ(arg, b);
}

TEST(Features, WhiteNoiseIsFlat) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(60 * 400);
  for (auto& v : x) v = n(rng);
  const auto w = extract_features(single_channel(x));
  Eigen::Matrix<double, 1, kFeatureBins> avg = Eigen::Matrix<double, 1, kFeatureBins>::Zero();
  for (const auto& win : w) avg += win.features.row(0).segment<kFeatureBins>(kFeatureBins);
  avg /= static_cast<double>(w.size());
  const double mean = avg.mean();
  for (int b = 0; b < kFeatureBins; ++b) EXPECT_NEAR(avg(b) / mean, 1.0, 0.25) << b;
  // One-sided density of unit white noise at 400 Hz is 2/400.
  EXPECT_NEAR(mean, 2.0 / 400.0, 0.25 * 2.0 / 400.0);
}

TEST(Features, CausalWindowIgnoresFutureSamples) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(4000);
  for (auto& v : x) v = n(rng);
  auto y = x;
  const std::size_t frame = 30;  // ends at sample 1200
  for (std::size_t i = frame * 40 + 1; i < y.size(); ++i) y[i] += 100.0 * n(rng);
  const auto a = extract_features(single_channel(x));
  const auto b = extract_features(single_channel(y));
  for (std::size_t k = 0; k <= frame; ++k) EXPECT_TRUE((a[k].features.array() == b[k].features.array()).all()) << k;
  EXPECT_FALSE((a[frame + 1].features.array() == b[frame + 1].features.array()).all());
}

TEST(Features, EarlyFramesBackfillFromFirstCompleteWindow) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(2000);
  for (auto& v : x) v = n(rng);
  const auto w = extract_features(single_channel(x));
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(w[k].t_index, k);
    EXPECT_TRUE((w[k].features.array() == w[5].features.array()).all());
  }
  EXPECT_FALSE((w[6].features.array() == w[5].features.array()).all());
}

TEST(Features, ScaleCovariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(3000);
  for (auto& v : x) v = n(rng);
  auto y = x;
  const double a = 3.5;
  for (auto& v : y) v *= a;
  const auto fx = extract_features(single_channel(x));
  const auto fy = extract_features(single_channel(y));
  for (std::size_t k = 0; k < fx.size(); k += 9) {
    for (int b = 0; b < kFeatureDim; ++b) {
      const double expect = fx[k].features(0, b) * (b < kFeatureBins ? a : a * a);
      EXPECT_NEAR(fy[k].features(0, b), expect, 1e-6 * std::abs(expect) + 1e-12);
    }
  }
}

TEST(Features, NonNegativeAndFinite) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 20.0);
  std::vector<double> x(2400);
  for (auto& v : x) v = n(rng);
  for (const auto& w : extract_features(single_channel(x))) {
    EXPECT_TRUE(w.features.allFinite());
    EXPECT_GE(w.features.minCoeff(), 0.0);
  }
}
