#pragma once

#include <cmath>
#include <vector>

#include "nbd/autodiff.hpp"

namespace nbd {

inline double gradient_norm(const ad::ParameterSet& ps) {
  double s = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.at(i).trainable) s += ps.at(i).grad.squaredNorm();
  }
  return std::sqrt(s);
}

// Global-norm clipping, or per-tensor clipping when `per_tensor` is set.
// Returns the norm after clipping.
inline double clip_gradients(ad::ParameterSet& ps, double max_norm, bool per_tensor = false) {
  if (per_tensor) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps.at(i);
      if (!p.trainable) continue;
      const double n = p.grad.norm();
      if (n > max_norm) p.grad *= max_norm / n;
    }
  } else {
    const double n = gradient_norm(ps);
    if (n > max_norm) {
      const double s = max_norm / n;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps.at(i).trainable) ps.at(i).grad *= s;
      }
    }
  }
  return gradient_norm(ps);
}

class Adam {
 public:
  explicit Adam(const ad::ParameterSet& ps, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_.push_back(ad::Matrix::Zero(ps.at(i).value.rows(), ps.at(i).value.cols()));
      v_.push_back(m_.back());
    }
  }

  void step(ad::ParameterSet& ps) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps.at(i);
      if (!p.trainable) continue;
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

}  // namespace nbd
