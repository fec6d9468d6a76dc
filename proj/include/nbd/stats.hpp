#pragma once

// Paired signed-rank test, FDR correction, correlation and bootstrap
// intervals.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "nbd/error.hpp"
#include "nbd/rng.hpp"

namespace nbd::stats {

struct WilcoxonResult {
  double statistic = 0.0;  // W+, the positive-difference rank sum
  double p_value = 1.0;    // two-sided
  int n_used = 0;          // pairs with nonzero difference
  bool exact = true;
};

// Midranks (1-based) of |d|, ties sharing their average rank.
inline std::vector<double> midranks(const std::vector<double>& a) {
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
  std::vector<double> r(a.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && a[idx[j + 1]] == a[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Two-sided Wilcoxon signed-rank test on paired differences. Zero
// differences are dropped. Exact null distribution (by enumeration over
// doubled midranks, so ties are handled) up to `exact_max` pairs, normal
// approximation with tie and continuity correction above.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, int exact_max = 50) {
  require(diffs.size() >= 5, ErrorCode::InsufficientPairs,
          "signed-rank test needs at least 5 pairs, got " + std::to_string(diffs.size()));
  std::vector<double> nz;
  for (double d : diffs) {
    if (d != 0.0) nz.push_back(d);
  }
  WilcoxonResult res;
  res.n_used = static_cast<int>(nz.size());
  if (nz.empty()) return res;
  std::vector<double> mag(nz.size());
  for (std::size_t i = 0; i < nz.size(); ++i) mag[i] = std::abs(nz[i]);
  const std::vector<double> ranks = midranks(mag);
  for (std::size_t i = 0; i < nz.size(); ++i) {
    if (nz[i] > 0.0) res.statistic += ranks[i];
  }
  const auto n = static_cast<double>(nz.size());

  if (res.n_used <= exact_max) {
    // Doubled midranks are integers; count sign assignments per doubled sum.
    std::vector<int> r2(nz.size());
    int total = 0;
    for (std::size_t i = 0; i < nz.size(); ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int r : r2) {
      for (int s = reach; s >= 0; --s) {
        if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
      }
      reach += r;
    }
    const double all = std::ldexp(1.0, res.n_used);
    const auto w2 = static_cast<int>(std::lround(2.0 * res.statistic));
    double lo = 0.0, hi = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= w2) lo += count[static_cast<std::size_t>(s)];
      if (s >= w2) hi += count[static_cast<std::size_t>(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(lo, hi) / all);
    return res;
  }

  res.exact = false;
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    var -= (t * t * t - t) / 48.0;
    i = j;
  }
  if (var <= 0.0) return res;
  const double dev = std::abs(res.statistic - mean);
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * normal_sf(z));
  return res;
}

// Benjamini-Hochberg adjusted p-values (step-up, monotone, capped at 1),
// returned in input order.
inline std::vector<double> bh_adjust(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double v = p[idx[k]] * static_cast<double>(m) / static_cast<double>(k + 1);
    running = std::min(running, v);
    adj[idx[k]] = std::min(1.0, std::max(running, p[idx[k]]));
  }
  return adj;
}

inline std::vector<bool> bh_reject(const std::vector<double>& p, double alpha = 0.05) {
  const std::vector<double> adj = bh_adjust(p);
  std::vector<bool> r(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i) r[i] = adj[i] <= alpha;
  return r;
}

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;
};

inline PearsonResult pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "correlated series differ in length");
  PearsonResult res;
  if (a.size() < 2) {
    res.degenerate = true;
    return res;
  }
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double scale_a = std::max(1.0, ma * ma) * n, scale_b = std::max(1.0, mb * mb) * n;
  if (saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b) {
    res.degenerate = true;
    return res;
  }
  res.r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  return res;
}

inline double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Linear-interpolated quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  require(!s.empty(), ErrorCode::ShapeMismatch, "quantile of empty data");
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(s.size() - 1, lo + 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap interval for the mean.
inline Interval bootstrap_mean_ci(const std::vector<double>& v, int resamples, std::mt19937_64& rng,
                                  double level = 0.95) {
  require(!v.empty(), ErrorCode::ShapeMismatch, "bootstrap of empty data");
  std::vector<double> means(static_cast<std::size_t>(resamples));
  const std::uint64_t n = v.size();
  for (auto& m : means) {
    double s = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) s += v[static_cast<std::size_t>(rng() % n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double a = 0.5 * (1.0 - level);
  return {quantile_sorted(means, a), quantile_sorted(means, 1.0 - a)};
}

}  // namespace nbd::stats
