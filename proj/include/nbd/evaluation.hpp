#pragma once

// Displacement errors, trajectory correlation, per-step curves and paired
// model comparisons.

#include <json.hpp>

#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nbd/autodiff.hpp"
#include "nbd/kinematics.hpp"
#include "nbd/rng.hpp"
#include "nbd/stats.hpp"

namespace nbd {

using ad::Matrix;

enum class AxisGroup { Horizontal, Vertical };

inline std::string_view to_string(AxisGroup g) { return g == AxisGroup::Horizontal ? "horizontal" : "vertical"; }

using Trajectory = std::vector<JointPositions>;

inline constexpr std::string_view kNeuralBehavioral = "neural_behavioral";
inline constexpr std::string_view kBehavioral = "behavioral";
inline constexpr std::string_view kLstm = "lstm";

inline double displacement(const JointPositions& a, const JointPositions& b, int joint, AxisGroup g, bool squared) {
  const Vec3 d = (a.row(joint) - b.row(joint)).transpose();
  const double sq = g == AxisGroup::Horizontal ? d.x() * d.x() + d.y() * d.y() : d.z() * d.z();
  return squared ? sq : std::sqrt(sq);
}

// T x 15 per-step, per-joint errors over the first `steps` frames.
inline Matrix step_errors(const Trajectory& pred, const Trajectory& truth, AxisGroup g, bool squared = false,
                          std::size_t steps = 0) {
  if (steps == 0) steps = truth.size();
  require(pred.size() >= steps && truth.size() >= steps && steps >= 1, ErrorCode::ShapeMismatch,
          "trajectories shorter than the evaluation horizon");
  Matrix e(static_cast<Eigen::Index>(steps), kNumJoints);
  for (std::size_t t = 0; t < steps; ++t) {
    for (int j = 0; j < kNumJoints; ++j) e(static_cast<Eigen::Index>(t), j) = displacement(pred[t], truth[t], j, g, squared);
  }
  return e;
}

struct AdeFde {
  double ade = 0.0;
  double fde = 0.0;
};

inline AdeFde ade_fde(const Trajectory& pred, const Trajectory& truth, AxisGroup g, bool squared = false) {
  require(pred.size() == truth.size() && !truth.empty(), ErrorCode::ShapeMismatch,
          "prediction and truth must have the same nonzero length");
  const Matrix e = step_errors(pred, truth, g, squared);
  return {e.mean(), e.row(e.rows() - 1).mean()};
}

// Pearson correlation of one joint's trajectory within an axis group: each
// axis is centred on its own mean and the axes are concatenated.
inline stats::PearsonResult joint_pearson(const Trajectory& pred, const Trajectory& truth, int joint, AxisGroup g,
                                          std::size_t steps = 0) {
  if (steps == 0) steps = truth.size();
  require(pred.size() >= steps && truth.size() >= steps, ErrorCode::ShapeMismatch,
          "trajectories shorter than the correlation window");
  std::vector<int> axes = g == AxisGroup::Horizontal ? std::vector<int>{0, 1} : std::vector<int>{2};
  std::vector<double> a, b;
  for (int ax : axes) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      ma += pred[t](joint, ax);
      mb += truth[t](joint, ax);
    }
    ma /= static_cast<double>(steps);
    mb /= static_cast<double>(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      a.push_back(pred[t](joint, ax) - ma);
      b.push_back(truth[t](joint, ax) - mb);
    }
  }
  return stats::pearson(a, b);
}

struct MovementRollouts {
  std::size_t initial_frame = 0;
  std::vector<Trajectory> samples;
};

struct ModelRollouts {
  std::string name;
  std::vector<MovementRollouts> movements;
};

struct EvalInputs {
  std::vector<Trajectory> truth;  // one per movement, aligned with every model's movements
  std::vector<ModelRollouts> models;
};

struct EvalConfig {
  int horizon = 30;
  int curve_steps = 100;
  int bootstrap = 1000;
  double alpha = 0.05;
  bool squared = false;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"horizon", horizon}, {"curve_steps", curve_steps}, {"bootstrap", bootstrap},
            {"alpha", alpha},     {"squared", squared},         {"seed", seed}};
  }

  void validate() const {
    require(horizon >= 1 && curve_steps >= 1 && bootstrap >= 1, ErrorCode::InvalidConfig,
            "horizon, curve length and bootstrap count must be positive");
    require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  }

  static EvalConfig from_json(const nlohmann::json& j) {
    EvalConfig c;
    c.horizon = j.value("horizon", c.horizon);
    c.curve_steps = j.value("curve_steps", c.curve_steps);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.alpha = j.value("alpha", c.alpha);
    c.squared = j.value("squared", c.squared);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct GroupSummary {
  double ade = 0.0;
  double fde = 0.0;
  double r = 0.0;
  int r_conditions = 0;  // joint x movement pairs with a defined correlation
};

struct ModelSummary {
  std::string name;
  GroupSummary horizontal;
  GroupSummary vertical;

  const GroupSummary& group(AxisGroup g) const { return g == AxisGroup::Horizontal ? horizontal : vertical; }
};

struct StepCurve {
  std::string model;
  AxisGroup group = AxisGroup::Horizontal;
  std::vector<double> mean, lo, hi;
};

struct StepComparison {
  std::string a, b;
  AxisGroup group = AxisGroup::Horizontal;
  std::vector<double> p_raw, p_adjusted;
  std::vector<bool> significant;
};

struct EvalReport {
  EvalConfig config;
  int movements = 0;
  std::vector<ModelSummary> models;
  std::vector<StepCurve> curves;
  std::vector<StepComparison> comparisons;
  std::vector<std::string> warnings;

  const ModelSummary* find(std::string_view name) const {
    for (const auto& m : models) {
      if (m.name == name) return &m;
    }
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config.to_json();
    j["movements"] = movements;
    for (const auto& m : models) {
      nlohmann::json mj{{"name", m.name}};
      for (AxisGroup g : {AxisGroup::Horizontal, AxisGroup::Vertical}) {
        const auto& s = m.group(g);
        mj[std::string(to_string(g))] = {{"ade", s.ade}, {"fde", s.fde}, {"r", s.r}, {"r_conditions", s.r_conditions}};
      }
      j["models"].push_back(mj);
    }
    for (const auto& c : curves) {
      j["curves"].push_back({{"model", c.model}, {"group", to_string(c.group)}, {"mean", c.mean}, {"lo", c.lo}, {"hi", c.hi}});
    }
    for (const auto& c : comparisons) {
      j["comparisons"].push_back({{"a", c.a},
                                  {"b", c.b},
                                  {"group", to_string(c.group)},
                                  {"p_raw", c.p_raw},
                                  {"p_adjusted", c.p_adjusted},
                                  {"significant", c.significant}});
    }
    j["warnings"] = warnings;
    return j;
  }

  // Aggregate table: one row per model, ADE/FDE/r for both axis groups.
  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "model\th_ade\th_fde\th_r\tv_ade\tv_fde\tv_r\n";
    for (const auto& m : models) {
      os << m.name << '\t' << m.horizontal.ade << '\t' << m.horizontal.fde << '\t' << m.horizontal.r << '\t'
         << m.vertical.ade << '\t' << m.vertical.fde << '\t' << m.vertical.r << '\n';
    }
    return os.str();
  }

  // Flat per-step table for plotting.
  std::string curves_table() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "model\tgroup\tstep\tmean\tlo\thi\n";
    for (const auto& c : curves) {
      for (std::size_t t = 0; t < c.mean.size(); ++t) {
        os << c.model << '\t' << to_string(c.group) << '\t' << t + 1 << '\t' << c.mean[t] << '\t' << c.lo[t] << '\t'
           << c.hi[t] << '\n';
      }
    }
    return os.str();
  }
};

namespace detail {

// Per-condition (movement x joint) errors for each step, averaged over
// samples: result[t][condition].
inline std::vector<std::vector<double>> condition_errors(const ModelRollouts& m, const std::vector<Trajectory>& truth,
                                                         AxisGroup g, bool squared, std::size_t steps) {
  std::vector<std::vector<double>> out(steps, std::vector<double>(truth.size() * kNumJoints, 0.0));
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto& mv = m.movements[k];
    for (const auto& s : mv.samples) {
      const Matrix e = step_errors(s, truth[k], g, squared, steps);
      for (std::size_t t = 0; t < steps; ++t) {
        for (int j = 0; j < kNumJoints; ++j) {
          out[t][k * kNumJoints + static_cast<std::size_t>(j)] +=
              e(static_cast<Eigen::Index>(t), j) / static_cast<double>(mv.samples.size());
        }
      }
    }
  }
  return out;
}

// Mean correlation over (movement, joint) conditions whose truth moves,
// each condition averaged over samples. Returns {mean r, conditions}.
inline std::pair<double, int> mean_pearson(const ModelRollouts& m, const std::vector<Trajectory>& truth, AxisGroup g,
                                           std::size_t steps, const std::vector<int>& joints) {
  double rsum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    for (int j : joints) {
      // Truth without motion carries no trajectory to correlate with.
      if (joint_pearson(truth[k], truth[k], j, g, steps).degenerate) continue;
      double r = 0.0;
      for (const auto& smp : m.movements[k].samples) r += joint_pearson(smp, truth[k], j, g, steps).r;
      rsum += r / static_cast<double>(m.movements[k].samples.size());
      ++n;
    }
  }
  return {n > 0 ? rsum / n : 0.0, n};
}

inline std::vector<int> all_joints() {
  std::vector<int> j(kNumJoints);
  std::iota(j.begin(), j.end(), 0);
  return j;
}

inline GroupSummary summarize(const ModelRollouts& m, const std::vector<Trajectory>& truth, AxisGroup g,
                              const EvalConfig& cfg) {
  GroupSummary s;
  const auto h = static_cast<std::size_t>(cfg.horizon);
  const auto err = condition_errors(m, truth, g, cfg.squared, h);
  for (std::size_t t = 0; t < h; ++t) s.ade += stats::mean(err[t]);
  s.ade /= static_cast<double>(h);
  s.fde = stats::mean(err[h - 1]);
  std::tie(s.r, s.r_conditions) = mean_pearson(m, truth, g, h, all_joints());
  return s;
}

}  // namespace detail

// Aggregates, per-step curves with bootstrap intervals, and per-step
// paired comparisons with FDR correction. Requires the neural-behavioral
// and behavioral models; the LSTM baseline is optional.
inline EvalReport evaluate(const EvalInputs& in, const EvalConfig& cfg) {
  require(cfg.horizon >= 1 && cfg.curve_steps >= cfg.horizon, ErrorCode::InvalidConfig,
          "curve length must cover the horizon");
  EvalReport rep;
  rep.config = cfg;
  rep.movements = static_cast<int>(in.truth.size());
  auto find = [&](std::string_view name) -> const ModelRollouts* {
    for (const auto& m : in.models) {
      if (m.name == name) return &m;
    }
    return nullptr;
  };
  for (auto name : {kNeuralBehavioral, kBehavioral}) {
    require(find(name) != nullptr, ErrorCode::MissingModel, "missing results for " + std::string(name));
  }
  if (!find(kLstm)) rep.warnings.push_back("lstm results missing; reporting two models");
  require(!in.truth.empty(), ErrorCode::InsufficientPairs, "no movements to evaluate");
  const auto steps = static_cast<std::size_t>(cfg.curve_steps);
  for (const auto& t : in.truth) {
    require(t.size() >= steps, ErrorCode::ShapeMismatch, "ground truth shorter than the curve length");
  }
  for (const auto& m : in.models) {
    require(m.movements.size() == in.truth.size(), ErrorCode::ShapeMismatch,
            m.name + " was not evaluated on every movement");
    for (const auto& mv : m.movements) {
      require(!mv.samples.empty(), ErrorCode::ShapeMismatch, m.name + " has a movement without samples");
    }
  }

  std::vector<const ModelRollouts*> order;
  for (auto name : {kNeuralBehavioral, kBehavioral, kLstm}) {
    if (const auto* m = find(name)) order.push_back(m);
  }
  for (const auto& m : in.models) {
    if (std::find(order.begin(), order.end(), &m) == order.end()) order.push_back(&m);
  }

  std::map<std::pair<std::string, int>, std::vector<std::vector<double>>> errors;
  std::uint64_t curve_index = 0;
  for (const auto* m : order) {
    ModelSummary ms;
    ms.name = m->name;
    ms.horizontal = detail::summarize(*m, in.truth, AxisGroup::Horizontal, cfg);
    ms.vertical = detail::summarize(*m, in.truth, AxisGroup::Vertical, cfg);
    rep.models.push_back(ms);
    for (AxisGroup g : {AxisGroup::Horizontal, AxisGroup::Vertical}) {
      auto err = detail::condition_errors(*m, in.truth, g, cfg.squared, steps);
      StepCurve c;
      c.model = m->name;
      c.group = g;
      auto rng = make_rng(cfg.seed, "bootstrap", curve_index++);
      for (const auto& e : err) {
        c.mean.push_back(stats::mean(e));
        const auto ci = stats::bootstrap_mean_ci(e, cfg.bootstrap, rng);
        c.lo.push_back(ci.lo);
        c.hi.push_back(ci.hi);
      }
      rep.curves.push_back(std::move(c));
      errors[{m->name, static_cast<int>(g)}] = std::move(err);
    }
  }

  const std::vector<std::pair<std::string_view, std::string_view>> pairs = {
      {kNeuralBehavioral, kBehavioral}, {kNeuralBehavioral, kLstm}, {kBehavioral, kLstm}};
  for (const auto& [a, b] : pairs) {
    if (!find(a) || !find(b)) continue;
    for (AxisGroup g : {AxisGroup::Horizontal, AxisGroup::Vertical}) {
      const auto& ea = errors.at({std::string(a), static_cast<int>(g)});
      const auto& eb = errors.at({std::string(b), static_cast<int>(g)});
      StepComparison sc;
      sc.a = a;
      sc.b = b;
      sc.group = g;
      for (std::size_t t = 0; t < steps; ++t) {
        std::vector<double> d(ea[t].size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = ea[t][i] - eb[t][i];
        sc.p_raw.push_back(stats::wilcoxon_signed_rank(d).p_value);
      }
      sc.p_adjusted = stats::bh_adjust(sc.p_raw);
      for (double p : sc.p_adjusted) sc.significant.push_back(p < cfg.alpha);
      rep.comparisons.push_back(std::move(sc));
    }
  }
  return rep;
}

}  // namespace nbd
