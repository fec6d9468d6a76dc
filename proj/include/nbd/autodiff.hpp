#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to Vars; backward() walks the tape
// in reverse and accumulates adjoints. Parameters live outside the tape in a
// ParameterSet so one set can be shared by many tapes.

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nbd/error.hpp"

namespace nbd::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

// Named tensors in insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;
  ParameterSet(const ParameterSet& o) {
    for (const auto& [name, p] : o.entries_) {
      index_[name] = entries_.size();
      entries_.emplace_back(name, std::make_unique<Parameter>(*p));
    }
  }
  ParameterSet& operator=(const ParameterSet& o) {
    if (this != &o) *this = ParameterSet(o);
    return *this;
  }

  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool trainable = true) {
    require(index_.find(name) == index_.end(), ErrorCode::InvalidConfig, "duplicate parameter " + name);
    auto p = std::make_unique<Parameter>();
    p->value = Matrix::Zero(rows, cols);
    p->grad = Matrix::Zero(rows, cols);
    p->trainable = trainable;
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(p));
    return *entries_.back().second;
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorCode::FormatError, "missing parameter " + name);
    return *entries_[it->second].second;
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorCode::FormatError, "missing parameter " + name);
    return *entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Parameter& at(std::size_t i) { return *entries_[i].second; }
  const Parameter& at(std::size_t i) const { return *entries_[i].second; }

  void zero_grad() {
    for (auto& e : entries_) e.second->grad.setZero();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.second->value.size());
    return n;
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [name, p] : entries_) {
      Parameter& q = out.add(name, p->value.rows(), p->value.cols(), p->trainable);
      q.value = p->value;
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Parameter>>> entries_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix m) { return push(std::move(m), false); }

  Var param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.external = &p.value;
    n.needs_grad = grad_enabled_ && p.trainable;
    n.sink = n.needs_grad ? &p.grad : nullptr;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_[&p] = id;
    return Var{this, id};
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Adjoint buffer of a node, allocated on first use.
  Matrix& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.sink) return *n.sink;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(value(id).rows(), value(id).cols());
    return n.grad;
  }

  // Records a node. `back` runs during backward() with this node's adjoint.
  Var push(Matrix value, bool needs_grad, std::function<void(const Matrix&)> back = {}) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_ && needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // Sets the backward rule of an already recorded node; lets the rule read
  // the node's own value.
  void attach(const Var& out, std::function<void(const Matrix&)> back) {
    Node& n = nodes_[static_cast<std::size_t>(out.id)];
    if (n.needs_grad) n.back = std::move(back);
  }

  // Reverse sweep from a scalar root. Parameter adjoints accumulate into
  // Parameter::grad.
  void backward(Var root) {
    require(root.tape == this, ErrorCode::ShapeMismatch, "root belongs to another tape");
    require(value(root.id).size() == 1, ErrorCode::ShapeMismatch, "backward needs a scalar root");
    if (!needs_grad(root.id)) return;
    grad(root.id)(0, 0) += 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool needs_grad = false;
    std::function<void(const Matrix&)> back;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  require(a.tape == b.tape && a.tape != nullptr, ErrorCode::ShapeMismatch, "vars from different tapes");
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          std::string(op) + ": shape mismatch");
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  require(a.cols() == b.rows(), ErrorCode::ShapeMismatch, "matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Matrix y;
  y.noalias() = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib), [&t, ia, ib](const Matrix& g) {
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

// x W + b with b broadcast over rows.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  require(x.cols() == w.rows() && b.rows() == 1 && b.cols() == w.cols(), ErrorCode::ShapeMismatch,
          "linear: incompatible shapes");
  Tape& t = *x.tape;
  Matrix y;
  y.noalias() = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  const int ix = x.id, iw = w.id, ib = b.id;
  const bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib);
  return t.push(std::move(y), ng, [&t, ix, iw, ib](const Matrix& g) {
    if (t.needs_grad(ix)) t.grad(ix).noalias() += g * t.value(iw).transpose();
    if (t.needs_grad(iw)) t.grad(iw).noalias() += t.value(ix).transpose() * g;
    if (t.needs_grad(ib)) t.grad(ib).row(0) += g.colwise().sum();
  });
}

// Elementwise sum; b may also be a single row broadcast over a's rows.
inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  if (b.rows() == 1 && a.rows() != 1) {
    require(a.cols() == b.cols(), ErrorCode::ShapeMismatch, "add: broadcast column mismatch");
    Matrix y = a.value();
    y.rowwise() += b.value().row(0);
    return t.push(std::move(y), ng, [&t, ia, ib](const Matrix& g) {
      if (t.needs_grad(ia)) t.grad(ia) += g;
      if (t.needs_grad(ib)) t.grad(ib).row(0) += g.colwise().sum();
    });
  }
  detail::same_shape(a, b, "add");
  return t.push(a.value() + b.value(), ng, [&t, ia, ib](const Matrix& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "sub");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.push(a.value() - b.value(), t.needs_grad(ia) || t.needs_grad(ib), [&t, ia, ib](const Matrix& g) {
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= g;
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "mul");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.push(a.value().cwiseProduct(b.value()), t.needs_grad(ia) || t.needs_grad(ib),
                [&t, ia, ib](const Matrix& g) {
                  if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
                  if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
                });
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value() * s, t.needs_grad(ia), [&t, ia, s](const Matrix& g) { t.grad(ia) += g * s; });
}

inline Var add_scalar(const Var& a, double s) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push((a.value().array() + s).matrix(), t.needs_grad(ia),
                [&t, ia](const Matrix& g) { t.grad(ia) += g; });
}

namespace detail {

// Generic elementwise op: derivative d(x, y) evaluated per element.
template <typename Fwd, typename Deriv>
Var elementwise(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Var out = t.push(a.value().unaryExpr(fwd), t.needs_grad(ia));
  const int io = out.id;
  t.attach(out, [&t, ia, io, deriv](const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix& gx = t.grad(ia);
    const Eigen::Index n = x.size();
    const double* xs = x.data();
    const double* ys = t.value(io).data();
    const double* gs = g.data();
    double* out = gx.data();
    for (Eigen::Index i = 0; i < n; ++i) out[i] += gs[i] * deriv(xs[i], ys[i]);
  });
  return out;
}

}  // namespace detail

inline Var elu(const Var& a) {
  return detail::elementwise(
      a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

inline Var tanh(const Var& a) {
  return detail::elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(const Var& a) {
  return detail::elementwise(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// tanh-approximated GELU.
inline Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return detail::elementwise(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = k * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

// Values outside [lo, hi] are clamped and receive no gradient.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::elementwise(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

inline Var softmax_rows(const Var& a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Var out = t.push(std::move(y), t.needs_grad(ia));
  const int io = out.id;
  t.attach(out, [&t, ia, io](const Matrix& g) {
    const Matrix& s = t.value(io);
    Matrix& gx = t.grad(ia);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double dot = g.row(r).dot(s.row(r));
      gx.row(r).array() += s.row(r).array() * (g.row(r).array() - dot);
    }
  });
  return out;
}

// Row-wise layer normalization with affine gamma/beta (1 x cols each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 && beta.cols() == x.cols(),
          ErrorCode::ShapeMismatch, "layer_norm: parameter shape");
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), m = xv.cols();
  auto xhat = std::make_shared<Matrix>(n, m);
  auto inv = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv)[r] = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mu) * (*inv)[r];
  }
  Matrix y = xhat->array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  const bool ng = t.needs_grad(ix) || t.needs_grad(ig) || t.needs_grad(ib);
  return t.push(std::move(y), ng, [&t, ix, ig, ib, xhat, inv, m](const Matrix& g) {
    if (t.needs_grad(ig)) t.grad(ig).row(0) += (g.array() * xhat->array()).colwise().sum().matrix();
    if (t.needs_grad(ib)) t.grad(ib).row(0) += g.colwise().sum();
    if (t.needs_grad(ix)) {
      const auto& gam = t.value(ig);
      Matrix& gx = t.grad(ix);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Eigen::ArrayXd gh = (g.row(r).array() * gam.row(0).array()).transpose();
        const Eigen::ArrayXd xh = xhat->row(r).transpose().array();
        const double mg = gh.mean();
        const double mgx = (gh * xh).mean();
        gx.row(r).array() += ((gh - mg - xh * mgx) * (*inv)[r]).transpose();
      }
    }
    (void)m;
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
  Tape& t = *parts.front().tape;
  const Eigen::Index n = parts.front().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    require(p.tape == &t && p.rows() == n, ErrorCode::ShapeMismatch, "concat: row mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix y(n, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.cols();
  }
  return t.push(std::move(y), ng, [&t, spans](const Matrix& g) {
    for (const auto& [id, o] : spans) {
      if (t.needs_grad(id)) t.grad(id) += g.middleCols(o, t.value(id).cols());
    }
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorCode::ShapeMismatch, "slice out of range");
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value().middleCols(start, count), t.needs_grad(ia), [&t, ia, start, count](const Matrix& g) {
    t.grad(ia).middleCols(start, count) += g;
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorCode::ShapeMismatch, "slice out of range");
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(a.value().middleRows(start, count), t.needs_grad(ia), [&t, ia, start, count](const Matrix& g) {
    t.grad(ia).middleRows(start, count) += g;
  });
}

// Row-wise choice: row r comes from a when take_a[r], else from b.
inline Var select_rows(const std::vector<bool>& take_a, const Var& a, const Var& b) {
  detail::same_tape(a, b);
  detail::same_shape(a, b, "select_rows");
  require(static_cast<Eigen::Index>(take_a.size()) == a.rows(), ErrorCode::ShapeMismatch, "select_rows: mask size");
  Tape& t = *a.tape;
  Matrix y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) y.row(r) = take_a[static_cast<std::size_t>(r)] ? a.value().row(r) : b.value().row(r);
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib), [&t, ia, ib, take_a](const Matrix& g) {
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const int id = take_a[static_cast<std::size_t>(r)] ? ia : ib;
      if (t.needs_grad(id)) t.grad(id).row(r) += g.row(r);
    }
  });
}

// Weighted sum of K same-shaped outputs with per-row weights (rows x K).
inline Var mix(const Var& weights, const std::vector<Var>& outs) {
  require(static_cast<Eigen::Index>(outs.size()) == weights.cols(), ErrorCode::ShapeMismatch, "mix: expert count");
  Tape& t = *weights.tape;
  const Eigen::Index n = weights.rows();
  Matrix y = Matrix::Zero(n, outs.front().cols());
  bool ng = t.needs_grad(weights.id);
  std::vector<int> ids;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    require(outs[k].rows() == n && outs[k].cols() == y.cols(), ErrorCode::ShapeMismatch, "mix: output shape");
    y += weights.value().col(static_cast<Eigen::Index>(k)).asDiagonal() * outs[k].value();
    ids.push_back(outs[k].id);
    ng = ng || t.needs_grad(outs[k].id);
  }
  const int iw = weights.id;
  return t.push(std::move(y), ng, [&t, iw, ids](const Matrix& g) {
    const Matrix& w = t.value(iw);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (t.needs_grad(iw)) t.grad(iw).col(kk) += g.cwiseProduct(t.value(ids[k])).rowwise().sum();
      if (t.needs_grad(ids[k])) t.grad(ids[k]).noalias() += w.col(kk).asDiagonal() * g;
    }
  });
}

inline Var sum_all(const Var& a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.push(std::move(y), t.needs_grad(ia), [&t, ia](const Matrix& g) { t.grad(ia).array() += g(0, 0); });
}

inline Var mean_all(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

// Token sequence for a batch: for each of `batch` groups, a global token row
// followed by one projected row per channel plus its positional embedding.
// proj: (batch*C) x H, pos: C x H, global: 1 x H -> (batch*(C+1)) x H.
inline Var assemble_tokens(const Var& proj, const Var& pos, const Var& global, Eigen::Index batch) {
  detail::same_tape(proj, pos);
  detail::same_tape(proj, global);
  const Eigen::Index c = pos.rows(), h = pos.cols();
  require(proj.rows() == batch * c && proj.cols() == h && global.rows() == 1 && global.cols() == h,
          ErrorCode::ShapeMismatch, "assemble_tokens: shape");
  Tape& t = *proj.tape;
  Matrix y(batch * (c + 1), h);
  for (Eigen::Index b = 0; b < batch; ++b) {
    y.row(b * (c + 1)) = global.value().row(0);
    y.middleRows(b * (c + 1) + 1, c) = proj.value().middleRows(b * c, c) + pos.value();
  }
  const int ip = proj.id, ipos = pos.id, ig = global.id;
  const bool ng = t.needs_grad(ip) || t.needs_grad(ipos) || t.needs_grad(ig);
  return t.push(std::move(y), ng, [&t, ip, ipos, ig, batch, c](const Matrix& g) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (t.needs_grad(ig)) t.grad(ig).row(0) += g.row(b * (c + 1));
      const auto blk = g.middleRows(b * (c + 1) + 1, c);
      if (t.needs_grad(ip)) t.grad(ip).middleRows(b * c, c) += blk;
      if (t.needs_grad(ipos)) t.grad(ipos) += blk;
    }
  });
}

// Row `offset` of each consecutive group of `group` rows.
inline Var take_group_rows(const Var& a, Eigen::Index group, Eigen::Index offset = 0) {
  require(group > 0 && a.rows() % group == 0 && offset < group, ErrorCode::ShapeMismatch, "take_group_rows");
  Tape& t = *a.tape;
  const Eigen::Index n = a.rows() / group;
  Matrix y(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) y.row(i) = a.value().row(i * group + offset);
  const int ia = a.id;
  return t.push(std::move(y), t.needs_grad(ia), [&t, ia, group, offset, n](const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (Eigen::Index i = 0; i < n; ++i) ga.row(i * group + offset) += g.row(i);
  });
}

// Multi-head scaled dot-product self-attention over independent groups of
// `tokens` rows. q, k, v: (groups*tokens) x H, H divisible by heads.
inline Var attention(const Var& q, const Var& k, const Var& v, Eigen::Index tokens, int heads) {
  detail::same_tape(q, k);
  detail::same_tape(q, v);
  detail::same_shape(q, k, "attention");
  detail::same_shape(q, v, "attention");
  const Eigen::Index h = q.cols();
  require(heads > 0 && h % heads == 0 && tokens > 0 && q.rows() % tokens == 0, ErrorCode::ShapeMismatch,
          "attention: incompatible head or token count");
  Tape& t = *q.tape;
  const Eigen::Index d = h / heads, groups = q.rows() / tokens;
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(groups * heads));
  Matrix y(q.rows(), h);
  const Matrix &qv = q.value(), &kv = k.value(), &vv = v.value();
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    for (int hd = 0; hd < heads; ++hd) {
      const auto qb = qv.block(gi * tokens, hd * d, tokens, d);
      const auto kb = kv.block(gi * tokens, hd * d, tokens, d);
      const auto vb = vv.block(gi * tokens, hd * d, tokens, d);
      Matrix s;
      s.noalias() = qb * kb.transpose();
      s *= sc;
      for (Eigen::Index r = 0; r < tokens; ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      y.block(gi * tokens, hd * d, tokens, d).noalias() = s * vb;
      probs->push_back(std::move(s));
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  const bool ng = t.needs_grad(iq) || t.needs_grad(ik) || t.needs_grad(iv);
  return t.push(std::move(y), ng, [&t, iq, ik, iv, probs, tokens, heads, d, groups, sc](const Matrix& g) {
    const Matrix &qv = t.value(iq), &kv = t.value(ik), &vv = t.value(iv);
    Matrix& gq = t.grad(iq);
    Matrix& gk = t.grad(ik);
    Matrix& gv = t.grad(iv);
    Matrix dp, ds;
    for (Eigen::Index gi = 0; gi < groups; ++gi) {
      for (int hd = 0; hd < heads; ++hd) {
        const Matrix& p = (*probs)[static_cast<std::size_t>(gi * heads + hd)];
        const auto gb = g.block(gi * tokens, hd * d, tokens, d);
        const auto qb = qv.block(gi * tokens, hd * d, tokens, d);
        const auto kb = kv.block(gi * tokens, hd * d, tokens, d);
        const auto vb = vv.block(gi * tokens, hd * d, tokens, d);
        gv.block(gi * tokens, hd * d, tokens, d).noalias() += p.transpose() * gb;
        dp.noalias() = gb * vb.transpose();
        ds = p.array() * (dp.colwise() - (dp.cwiseProduct(p)).rowwise().sum()).array();
        ds *= sc;
        gq.block(gi * tokens, hd * d, tokens, d).noalias() += ds * kb;
        gk.block(gi * tokens, hd * d, tokens, d).noalias() += ds.transpose() * qb;
      }
    }
  });
}

// Glorot-uniform weights, zero bias.
inline void init_linear(Parameter& w, Parameter& b, std::mt19937_64& rng, double gain = 1.0) {
  const double lim = gain * std::sqrt(6.0 / static_cast<double>(w.value.rows() + w.value.cols()));
  std::uniform_real_distribution<double> u(-lim, lim);
  for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = u(rng);
  b.value.setZero();
}

}  // namespace nbd::ad
