#pragma once

// Signal-processing primitives: Butterworth second-order sections with
// zero-phase application, DPSS tapers, and FFT helpers.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "nbd/error.hpp"

namespace nbd::dsp {

// Transposed direct form II biquad, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

using Sos = std::vector<Biquad>;

namespace detail {

inline Biquad rbj(bool highpass, double fc, double fs, double q) {
  const double w0 = 2.0 * std::numbers::pi * fc / fs;
  const double cw = std::cos(w0), sw = std::sin(w0);
  const double alpha = sw / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s;
  if (highpass) {
    s.b0 = (1.0 + cw) / 2.0 / a0;
    s.b1 = -(1.0 + cw) / a0;
    s.b2 = s.b0;
  } else {
    s.b0 = (1.0 - cw) / 2.0 / a0;
    s.b1 = (1.0 - cw) / a0;
    s.b2 = s.b0;
  }
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

}  // namespace detail

// Even-order digital Butterworth as a cascade of bilinear-transformed sections.
inline Sos butterworth(int order, double fc, double fs, bool highpass) {
  require(order >= 2 && order % 2 == 0, ErrorCode::InvalidConfig, "butterworth order must be even");
  require(fc > 0 && fc < fs / 2, ErrorCode::InvalidConfig, "cutoff must lie inside (0, fs/2)");
  Sos sos;
  for (int k = 0; k < order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::sin((2.0 * k + 1.0) * std::numbers::pi / (2.0 * order)));
    sos.push_back(detail::rbj(highpass, fc, fs, q));
  }
  return sos;
}

// In-place causal filtering with explicit per-section state.
inline void sosfilt(const Sos& sos, std::vector<double>& x, std::vector<std::array<double, 2>>& zi) {
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const Biquad& s = sos[k];
    double z1 = zi[k][0], z2 = zi[k][1];
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    zi[k] = {z1, z2};
  }
}

// Steady-state section states for a unit step input.
inline std::vector<std::array<double, 2>> sosfilt_zi(const Sos& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double gain = 1.0;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const Biquad& s = sos[k];
    const double y = s.dc_gain() * gain;
    zi[k] = {y - s.b0 * gain, s.b2 * gain - s.a2 * y};
    gain = y;
  }
  return zi;
}

// Forward-backward filtering with odd extension at both ends and
// steady-state initial conditions. A constant input maps to the constant
// times the squared DC gain.
inline std::vector<double> sosfiltfilt(const Sos& sos, const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  std::size_t pad = 3 * (2 * sos.size() + 1);
  pad = std::min(pad, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi_unit = sosfilt_zi(sos);
  auto scaled = [&](double v) {
    auto z = zi_unit;
    for (auto& s : z) s = {s[0] * v, s[1] * v};
    return z;
  };
  auto z = scaled(ext.front());
  sosfilt(sos, ext, z);
  std::reverse(ext.begin(), ext.end());
  z = scaled(ext.front());
  sosfilt(sos, ext, z);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

// Discrete prolate spheroidal sequences, unit energy, the k-th taper being
// the eigenvector with the k-th largest concentration.
inline std::vector<std::vector<double>> dpss(int n, double nw, int k) {
  require(n >= 2 && k >= 1 && k <= n, ErrorCode::InvalidConfig, "invalid DPSS request");
  const double w = nw / n;
  Eigen::VectorXd diag(n), sub(n - 1);
  for (int i = 0; i < n; ++i) {
    const double c = (n - 1 - 2.0 * i) / 2.0;
    diag[i] = c * c * std::cos(2.0 * std::numbers::pi * w);
  }
  for (int i = 1; i < n; ++i) sub[i - 1] = i * (n - i) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  std::vector<std::vector<double>> tapers;
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = es.eigenvectors().col(n - 1 - j);
    v.normalize();
    // Sign convention: symmetric tapers have positive sum, antisymmetric
    // ones start with a positive lobe.
    if (j % 2 == 0) {
      if (v.sum() < 0) v = -v;
    } else {
      double s = 0;
      for (int i = 0; i < n / 2; ++i) s += (n - 1 - 2.0 * i) * v[i];
      if (s < 0) v = -v;
    }
    tapers.emplace_back(v.data(), v.data() + n);
  }
  return tapers;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace nbd::dsp
