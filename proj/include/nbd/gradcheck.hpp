#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nbd/autodiff.hpp"

namespace nbd::ad {

struct GradCheckEntry {
  std::string tensor;
  int checked = 0;
  double max_rel_error = 0.0;
};

// Relative error with a floor on the denominator so entries whose true
// gradient is ~0 are judged on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss(tape)` must build a scalar on the given tape from the parameters of
// `ps`. Checks up to `per_tensor` randomly chosen entries of every
// trainable tensor.
template <typename LossFn>
std::vector<GradCheckEntry> gradient_check(ParameterSet& ps, LossFn&& loss, int per_tensor, std::uint64_t seed,
                                           double eps = 1e-5) {
  ps.zero_grad();
  {
    Tape t(true);
    Var l = loss(t);
    t.backward(l);
  }
  std::mt19937_64 rng(seed);
  std::vector<GradCheckEntry> out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = ps.at(i);
    if (!p.trainable) continue;
    const auto n = static_cast<int>(p.value.size());
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::min(n, per_tensor)));

    GradCheckEntry e;
    e.tensor = ps.name(i);
    for (int k : idx) {
      double& v = p.value.data()[k];
      const double orig = v;
      v = orig + eps;
      double fp, fm;
      {
        Tape t(false);
        fp = loss(t).value()(0, 0);
      }
      v = orig - eps;
      {
        Tape t(false);
        fm = loss(t).value()(0, 0);
      }
      v = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(p.grad.data()[k], numeric));
      ++e.checked;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace nbd::ad
