#pragma once

// Neural recording preprocessing and per-window spectral features.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "nbd/dsp.hpp"
#include "nbd/error.hpp"

namespace nbd {

enum class Region { M1, S1, PMC, SIPL };

inline std::string_view to_string(Region r) {
  switch (r) {
    case Region::M1: return "M1";
    case Region::S1: return "S1";
    case Region::PMC: return "PMC";
    case Region::SIPL: return "SIPL";
  }
  return "?";
}

inline Region region_from_string(std::string_view s) {
  if (s == "M1") return Region::M1;
  if (s == "S1") return Region::S1;
  if (s == "PMC") return Region::PMC;
  if (s == "SIPL") return Region::SIPL;
  fail(ErrorCode::FormatError, "unknown region '" + std::string(s) + "'");
}

struct ChannelInfo {
  std::string name;
  char hemisphere = 'L';  // 'L' or 'R'
  Region region = Region::M1;
};

using SampleMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NeuralRecording {
  double rate_hz = 2000.0;
  std::vector<ChannelInfo> channels;
  SampleMatrix samples;  // channels x samples, microvolts

  int num_channels() const { return static_cast<int>(samples.rows()); }
  std::size_t num_samples() const { return static_cast<std::size_t>(samples.cols()); }

  std::vector<double> channel(int c) const {
    std::vector<double> out(num_samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = samples(c, static_cast<Eigen::Index>(i));
    return out;
  }

  void set_channel(int c, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) samples(c, static_cast<Eigen::Index>(i)) = static_cast<float>(v[i]);
  }
};

inline constexpr int kFeatureBins = 15;
inline constexpr int kFeatureDim = 2 * kFeatureBins;

struct PreprocessConfig {
  double band_low_hz = 1.0;
  double band_high_hz = 300.0;
  double mad_k = 8.0;
  double max_reject_fraction = 0.25;  // channels with more flagged samples are dropped
  double target_rate_hz = 400.0;
};

struct PreprocessReport {
  std::vector<bool> channel_valid;
  std::vector<std::size_t> flagged_samples;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

// Replaces flagged samples by linear interpolation between the nearest
// unflagged neighbours; flagged runs at the edges hold the nearest value.
inline void interpolate_flagged(std::vector<double>& x, const std::vector<char>& flag) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  while (i < n) {
    if (!flag[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && flag[j]) ++j;
    const bool has_left = i > 0, has_right = j < n;
    for (std::size_t k = i; k < j; ++k) {
      if (has_left && has_right) {
        const double a = static_cast<double>(k - (i - 1)) / static_cast<double>(j - (i - 1));
        x[k] = (1.0 - a) * x[i - 1] + a * x[j];
      } else if (has_left) {
        x[k] = x[i - 1];
      } else if (has_right) {
        x[k] = x[j];
      } else {
        x[k] = 0.0;
      }
    }
    i = j;
  }
}

// Anti-aliased linear-interpolation resampler. Integer decimation factors
// reduce to picking every k-th filtered sample.
inline std::vector<double> resample(const std::vector<double>& x, double from_hz, double to_hz) {
  if (from_hz == to_hz) return x;
  std::vector<double> y = x;
  if (to_hz < from_hz) {
    y = dsp::sosfiltfilt(dsp::butterworth(8, 0.45 * to_hz, from_hz, false), x);
  }
  if (y.empty()) return y;
  const auto n_out = static_cast<std::size_t>(std::floor((static_cast<double>(y.size()) - 1.0) * to_hz / from_hz)) + 1;
  std::vector<double> out(n_out);
  const double ratio = from_hz / to_hz;
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * ratio;
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i0);
    if (frac == 0.0 || i0 + 1 >= y.size()) {
      out[k] = y[std::min(i0, y.size() - 1)];
    } else {
      out[k] = (1.0 - frac) * y[i0] + frac * y[i0 + 1];
    }
  }
  return out;
}

}  // namespace detail

// Band-pass, MAD-threshold artifact interpolation, per-hemisphere common
// average reference, then resampling to the target rate.
inline NeuralRecording preprocess(const NeuralRecording& rec, const PreprocessConfig& cfg = {},
                                  PreprocessReport* report = nullptr) {
  require(rec.rate_hz >= 800.0, ErrorCode::InvalidConfig, "input rate must be at least 800 Hz");
  require(rec.num_channels() >= 1, ErrorCode::TooShort, "recording has no channels");
  require(static_cast<double>(rec.num_samples()) >= rec.rate_hz, ErrorCode::TooShort,
          "recording shorter than one second");
  require(static_cast<int>(rec.channels.size()) == rec.num_channels(), ErrorCode::ShapeMismatch,
          "channel metadata does not match sample rows");

  const int nc = rec.num_channels();
  const dsp::Sos hp = dsp::butterworth(2, cfg.band_low_hz, rec.rate_hz, true);
  const dsp::Sos lp = dsp::butterworth(4, std::min(cfg.band_high_hz, 0.45 * rec.rate_hz), rec.rate_hz, false);

  std::vector<std::vector<double>> data(nc);
  std::vector<bool> valid(nc, true);
  std::vector<std::size_t> flagged_count(nc, 0);
  for (int c = 0; c < nc; ++c) {
    std::vector<double> x = rec.channel(c);
    std::vector<char> flag(x.size(), 0);
    std::size_t nonfinite = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) {
        flag[i] = 1;
        ++nonfinite;
      }
    }
    if (nonfinite == x.size()) {
      valid[c] = false;
      data[c].assign(x.size(), 0.0);
      flagged_count[c] = nonfinite;
      continue;
    }
    if (nonfinite > 0) detail::interpolate_flagged(x, flag);

    x = dsp::sosfiltfilt(lp, dsp::sosfiltfilt(hp, x));

    const double med = detail::median(x);
    std::vector<double> dev(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dev[i] = std::abs(x[i] - med);
    const double mad = detail::median(dev);
    std::size_t flagged = nonfinite;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (dev[i] > cfg.mad_k * mad && !flag[i]) {
        flag[i] = 1;
        ++flagged;
      }
    }
    flagged_count[c] = flagged;
    if (static_cast<double>(flagged) > cfg.max_reject_fraction * static_cast<double>(x.size())) {
      valid[c] = false;
      data[c].assign(x.size(), 0.0);
      continue;
    }
    detail::interpolate_flagged(x, flag);
    data[c] = std::move(x);
  }

  for (char hemi : {'L', 'R'}) {
    std::vector<int> members;
    int n_valid = 0;
    for (int c = 0; c < nc; ++c) {
      if (rec.channels[c].hemisphere == hemi) {
        members.push_back(c);
        if (valid[c]) ++n_valid;
      }
    }
    if (members.empty()) continue;
    require(n_valid > 0, ErrorCode::AllChannelsRejected,
            std::string("no valid channels left in hemisphere ") + hemi);
    std::vector<double> avg(rec.num_samples(), 0.0);
    for (int c : members) {
      if (!valid[c]) continue;
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += data[c][i];
    }
    for (double& v : avg) v /= n_valid;
    for (int c : members) {
      if (!valid[c]) continue;
      for (std::size_t i = 0; i < avg.size(); ++i) data[c][i] -= avg[i];
    }
  }

  NeuralRecording out;
  out.rate_hz = cfg.target_rate_hz;
  out.channels = rec.channels;
  for (int c = 0; c < nc; ++c) {
    std::vector<double> y = detail::resample(data[c], rec.rate_hz, cfg.target_rate_hz);
    if (c == 0) out.samples.resize(nc, static_cast<Eigen::Index>(y.size()));
    out.set_channel(c, y);
  }
  if (report) {
    report->channel_valid = valid;
    report->flagged_samples = flagged_count;
  }
  return out;
}

struct FeatureConfig {
  double rate_hz = 400.0;
  double motion_rate_hz = 10.0;
  double window_ms = 500.0;
  double f_min_hz = 1.0;
  double f_max_hz = 150.0;
  double time_bandwidth = 2.5;
  int tapers = 4;
  double morlet_cycles = 7.0;
  std::size_t nfft = 512;
};

// Bin edges and centres shared by extractor and manifest.
struct FeatureBins {
  std::array<double, kFeatureBins + 1> log_edges{};
  std::array<double, kFeatureBins + 1> lin_edges{};
  std::array<double, kFeatureBins> log_centers{};
  std::array<double, kFeatureBins> lin_centers{};

  static FeatureBins make(double f_min, double f_max) {
    FeatureBins b;
    for (int i = 0; i <= kFeatureBins; ++i) {
      const double a = static_cast<double>(i) / kFeatureBins;
      b.log_edges[i] = f_min * std::pow(f_max / f_min, a);
      b.lin_edges[i] = f_min + (f_max - f_min) * a;
    }
    for (int i = 0; i < kFeatureBins; ++i) {
      b.log_centers[i] = std::sqrt(b.log_edges[i] * b.log_edges[i + 1]);
      b.lin_centers[i] = 0.5 * (b.lin_edges[i] + b.lin_edges[i + 1]);
    }
    return b;
  }
};

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>;

struct NeuralFeatureWindow {
  std::size_t t_index = 0;
  FeatureMatrix features;  // C x 30: [Morlet log bins | multitaper linear bins]
};

// Computes the 30 spectral features of one channel segment.
class SpectralFeatures {
 public:
  explicit SpectralFeatures(const FeatureConfig& cfg, std::size_t window_len)
      : cfg_(cfg), n_(window_len), bins_(FeatureBins::make(cfg.f_min_hz, cfg.f_max_hz)) {
    require(cfg.nfft >= window_len, ErrorCode::InvalidConfig, "nfft shorter than window");
    tapers_ = dsp::dpss(static_cast<int>(n_), cfg.time_bandwidth, cfg.tapers);
    const std::size_t nf = cfg.nfft;
    const double df = cfg.rate_hz / static_cast<double>(nf);
    for (int b = 0; b < kFeatureBins; ++b) {
      const double lo = bins_.lin_edges[b], hi = bins_.lin_edges[b + 1];
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k <= nf / 2; ++k) {
        const double f = static_cast<double>(k) * df;
        if (f >= lo && (f < hi || (b == kFeatureBins - 1 && f <= hi))) idx.push_back(k);
      }
      require(!idx.empty(), ErrorCode::InvalidConfig, "linear bin has no FFT frequencies");
      lin_index_.push_back(std::move(idx));
    }
    // Analytic Morlet responses: Gaussian around each centre, positive
    // frequencies only, peak 2 so a unit sinusoid at the centre has unit
    // magnitude.
    for (int b = 0; b < kFeatureBins; ++b) {
      const double fc = bins_.log_centers[b];
      const double sf = fc / cfg.morlet_cycles;
      std::vector<double> w(nf, 0.0);
      for (std::size_t k = 1; k < nf / 2; ++k) {
        const double f = static_cast<double>(k) * df;
        const double g = std::exp(-0.5 * (f - fc) * (f - fc) / (sf * sf));
        w[k] = g < 1e-12 ? 0.0 : 2.0 * g;
      }
      morlet_.push_back(std::move(w));
    }
  }

  const FeatureBins& bins() const { return bins_; }

  // `seg` has exactly window_len samples; writes 30 features into `out`.
  template <typename Out>
  void compute(const double* seg, Out&& out) {
    const std::size_t nf = cfg_.nfft;
    double mean = 0.0;
    for (std::size_t i = 0; i < n_; ++i) mean += seg[i];
    mean /= static_cast<double>(n_);

    // Morlet magnitudes, time-averaged over the window.
    buf_.assign(nf, 0.0);
    for (std::size_t i = 0; i < n_; ++i) buf_[i] = seg[i] - mean;
    fft_.fwd(spec_, buf_);
    for (int b = 0; b < kFeatureBins; ++b) {
      tmp_.assign(nf, {0.0, 0.0});
      const auto& w = morlet_[b];
      for (std::size_t k = 0; k < nf; ++k) {
        if (w[k] != 0.0) tmp_[k] = spec_[k] * w[k];
      }
      fft_.inv(coef_, tmp_);
      double acc = 0.0;
      for (std::size_t i = 0; i < n_; ++i) acc += std::abs(coef_[i]);
      out(b) = acc / static_cast<double>(n_);
    }

    // Multitaper one-sided PSD averaged over tapers, then over linear bins.
    psd_.assign(nf / 2 + 1, 0.0);
    for (const auto& taper : tapers_) {
      buf_.assign(nf, 0.0);
      for (std::size_t i = 0; i < n_; ++i) buf_[i] = (seg[i] - mean) * taper[i];
      fft_.fwd(spec_, buf_);
      for (std::size_t k = 0; k <= nf / 2; ++k) {
        const double scale = (k == 0 || k == nf / 2) ? 1.0 : 2.0;
        psd_[k] += scale * std::norm(spec_[k]) / cfg_.rate_hz;
      }
    }
    for (double& p : psd_) p /= static_cast<double>(tapers_.size());
    for (int b = 0; b < kFeatureBins; ++b) {
      double acc = 0.0;
      for (std::size_t k : lin_index_[b]) acc += psd_[k];
      out(kFeatureBins + b) = acc / static_cast<double>(lin_index_[b].size());
    }
  }

 private:
  FeatureConfig cfg_;
  std::size_t n_;
  FeatureBins bins_;
  std::vector<std::vector<double>> tapers_;
  std::vector<std::vector<std::size_t>> lin_index_;
  std::vector<std::vector<double>> morlet_;
  Eigen::FFT<double> fft_;
  std::vector<double> buf_, psd_;
  std::vector<std::complex<double>> spec_, tmp_, coef_;
};

// One C x 30 window per movement frame. The window for frame k covers the
// samples (k*step - len, k*step]; frames without a full history reuse the
// earliest complete window.
inline std::vector<NeuralFeatureWindow> extract_features(const NeuralRecording& rec,
                                                         const FeatureConfig& cfg = {},
                                                         std::size_t n_frames = 0) {
  require(std::abs(rec.rate_hz - cfg.rate_hz) < 1e-9, ErrorCode::NotPreprocessed,
          "features expect a " + std::to_string(cfg.rate_hz) + " Hz recording");
  const double step_d = cfg.rate_hz / cfg.motion_rate_hz;
  const double len_d = cfg.window_ms * 1e-3 * cfg.rate_hz;
  require(step_d == std::floor(step_d) && len_d == std::floor(len_d), ErrorCode::InvalidConfig,
          "window and step must be whole numbers of samples");
  const auto step = static_cast<std::size_t>(step_d);
  const auto len = static_cast<std::size_t>(len_d);
  const std::size_t ns = rec.num_samples();
  require(ns >= len, ErrorCode::TooShort, "recording shorter than one feature window");
  if (n_frames == 0) n_frames = (ns - 1) / step + 1;
  require((n_frames - 1) * step < ns, ErrorCode::TooShort, "recording ends before the last movement frame");

  const std::size_t first_valid = (len - 1 + step - 1) / step;
  require(first_valid < n_frames, ErrorCode::TooShort, "no movement frame has a full feature window");
  const int nc = rec.num_channels();
  SpectralFeatures sf(cfg, len);

  std::vector<NeuralFeatureWindow> out(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) {
    out[k].t_index = k;
    out[k].features.resize(nc, kFeatureDim);
  }
  std::vector<double> chan;
  for (int c = 0; c < nc; ++c) {
    chan = rec.channel(c);
    for (std::size_t k = first_valid; k < n_frames; ++k) {
      const std::size_t end = k * step;
      sf.compute(chan.data() + (end + 1 - len), out[k].features.row(c));
    }
  }
  for (std::size_t k = 0; k < first_valid; ++k) out[k].features = out[first_valid].features;
  return out;
}

}  // namespace nbd
