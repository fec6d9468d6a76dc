// Acceptance runner: one PASS/FAIL line per criterion with the measured
// values. Arguments select criteria by number; none runs all nine.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "nbd/pipeline.hpp"
#include "support.hpp"

using namespace nbd;
using nbd::testing::random_matrix;
using nbd::testing::tiny_model_config;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (ok ? "" : "!") << what << "; ";
  }
};

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// 1. IK -> FK on ten minutes of synthetic motion, clean and with per-frame
// bone-length jitter of up to 1%.
void kinematics(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig c;
  c.seed = 11;
  c.duration_s = 600.0;
  c.neural = false;
  const auto s = generate(c);
  const auto m10 = downsample_motion(s.motion);
  const auto clean = roundtrip_report(m10, s.skeleton);

  KeypointSequence jittered = m10;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> jit(-0.01, 0.01);
  for (auto& f : jittered.frames) {
    const Keypoints orig = f;
    // Parents precede children, so each child follows its moved parent.
    for (int b = 0; b < kNumBones; ++b) {
      const int cj = kJointKeypoint[kBoneChild[b]], pj = kJointKeypoint[kBoneParent[b]];
      f.row(cj) = f.row(pj) + (orig.row(cj) - orig.row(pj)) * (1.0 + jit(rng));
    }
  }
  const auto noisy = roundtrip_report(jittered, s.skeleton);
  const double secs = since(t0);
  o.check(clean.mean_abs_error_cm < 1e-6, "clean mean abs " + fmt(clean.mean_abs_error_cm) + " cm < 1e-6");
  o.check(std::isfinite(noisy.mean_abs_error_cm) && noisy.mean_abs_error_cm < 2.0,
          "jittered mean abs " + fmt(noisy.mean_abs_error_cm) + " cm < 2");
  o.check(secs < 30.0, "runtime " + fmt(secs, 3) + " s < 30");
}

// 2. Analytic gradients of every network against central differences.
void gradients(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int tensors = 0;
  bool coverage = true;
  auto absorb = [&](const std::vector<ad::GradCheckEntry>& entries, const ad::ParameterSet& ps) {
    for (const auto& e : entries) {
      worst = std::max(worst, e.max_rel_error);
      ++tensors;
      const auto size = static_cast<int>(ps.get(e.tensor).value.size());
      coverage = coverage && e.checked >= std::min(20, size);
    }
  };
  for (auto mix : {MixMode::Output, MixMode::Parameter}) {
    for (bool neural : {true, false}) {
      const auto cfg = tiny_model_config(neural, mix);
      absorb(nbd::testing::model_gradient_check(cfg, 5), Model(cfg).params());
    }
  }
  LstmConfig lc;
  lc.channels = 2;
  lc.window = 3;
  lc.proj = 5;
  lc.hidden = 4;
  lc.outputs = 3;
  LstmBaseline net(lc);
  std::mt19937_64 rng(8);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    auto& p = net.params().at(i);
    if (p.trainable) p.value += random_matrix(p.value.rows(), p.value.cols(), rng, 0.2);
  }
  std::vector<Matrix> steps;
  for (int w = 0; w < lc.window; ++w) steps.push_back(random_matrix(2, 2 * kFeatureDim, rng));
  const Matrix target = random_matrix(2, lc.outputs, rng);
  auto loss = [&](ad::Tape& t) { return ad::mean_all(ad::square(ad::sub(net.forward(t, steps), t.constant(target)))); };
  absorb(ad::gradient_check(net.params(), loss, 20, 3), net.params());
  const double secs = since(t0);
  o.check(worst <= 1e-4, "max rel error " + fmt(worst) + " <= 1e-4 over " + std::to_string(tensors) + " tensors");
  o.check(coverage, "min(20, size) entries per tensor");
  o.check(secs < 120.0, "runtime " + fmt(secs, 3) + " s < 120");
}

// 3. Closed-form KL against a Monte-Carlo estimate of E_q[log q - log p].
void kl_divergence(Outcome& o) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 0.7);
  std::normal_distribution<double> unit(0.0, 1.0);
  const int dims = 16, draws = 1000000;
  double worst_z = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd mu(dims), ls(dims);
    for (int i = 0; i < dims; ++i) {
      mu[i] = n(rng);
      ls[i] = 0.5 * n(rng);
    }
    double sum = 0.0, sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double v = 0.0;
      for (int i = 0; i < dims; ++i) {
        const double e = unit(rng);
        const double z = mu[i] + std::exp(ls[i]) * e;
        v += -ls[i] - 0.5 * e * e + 0.5 * z * z;
      }
      sum += v;
      sq += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sq / draws - mean * mean) / draws);
    worst_z = std::max(worst_z, std::abs(kl_standard_normal(mu, ls) - mean) / se);
  }
  o.check(worst_z <= 3.0, "worst |closed - mc| / se " + fmt(worst_z, 3) + " <= 3 on 20 Gaussians");
  const double zero = kl_standard_normal(Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Zero(dims));
  o.check(zero == 0.0, "kl(0, I) = " + fmt(zero));
}

NeuralRecording single_channel(const std::vector<double>& x) {
  NeuralRecording r;
  r.rate_hz = 400.0;
  r.channels = {{"a", 'L', Region::M1}};
  r.samples.resize(1, static_cast<Eigen::Index>(x.size()));
  r.set_channel(0, x);
  return r;
}

// 4. Spectral concentration, flatness and causality of the feature extractor.
void dsp_checks(Outcome& o) {
  std::vector<double> x(8000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * std::numbers::pi * 40.0 * i / 400.0);
  const auto bins = FeatureBins::make(1, 150);
  int target = 0;
  while (!(40.0 >= bins.lin_edges[target] && 40.0 < bins.lin_edges[target + 1])) ++target;
  double worst = 1.0;
  for (const auto& w : extract_features(single_channel(x))) {
    const auto psd = w.features.row(0).segment(kFeatureBins, kFeatureBins);
    double near = 0.0;
    for (int b = std::max(0, target - 1); b <= std::min(kFeatureBins - 1, target + 1); ++b) near += psd(b);
    worst = std::min(worst, near / psd.sum());
  }
  o.check(worst >= 0.8, "40 Hz mass in bin +-1 " + fmt(worst) + " >= 0.8");

  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> noise(60 * 400);
  for (auto& v : noise) v = n(rng);
  const auto wn = extract_features(single_channel(noise));
  Eigen::Matrix<double, 1, kFeatureBins> avg = Eigen::Matrix<double, 1, kFeatureBins>::Zero();
  for (const auto& w : wn) avg += w.features.row(0).segment<kFeatureBins>(kFeatureBins);
  avg /= static_cast<double>(wn.size());
  const double dev = (avg.array() / avg.mean() - 1.0).abs().maxCoeff();
  o.check(dev <= 0.25, "white-noise max bin deviation " + fmt(dev) + " <= 0.25");

  std::vector<double> a(4000);
  for (auto& v : a) v = n(rng);
  auto b = a;
  const std::size_t frame = 30;
  for (std::size_t i = frame * 40 + 1; i < b.size(); ++i) b[i] += 100.0 * n(rng);
  const auto fa = extract_features(single_channel(a));
  const auto fb = extract_features(single_channel(b));
  bool causal = true;
  for (std::size_t k = 0; k <= frame; ++k) causal = causal && (fa[k].features.array() == fb[k].features.array()).all();
  const bool sees = !(fa[frame + 1].features.array() == fb[frame + 1].features.array()).all();
  o.check(causal && sees, "windows up to the perturbation are bit-identical");
}

// 5. Scheduled-sampling stages, gradient clipping and reproducibility.
void training_protocol(Outcome& o) {
  auto cfg = tiny_model_config(false);
  cfg.expert_hidden = 6;
  cfg.posterior_hidden = 6;
  cfg.gating_hidden = 6;
  std::mt19937_64 rng(6);
  TrainSequence seq;
  seq.states = random_matrix(12, cfg.state_dim, rng);
  TrainConfig tc;
  tc.chunk_len = 4;
  tc.batch_size = 4;
  tc.grad_clip_norm = 0.05;
  const auto res = train({seq}, cfg, tc);
  const auto& ep = res.log.epochs;
  bool teacher = true, student = true, linear = true;
  std::vector<double> ramp;
  for (const auto& e : ep) {
    if (e.stage == Stage::Teacher) teacher = teacher && e.probability == 0.0;
    if (e.stage == Stage::Student) student = student && e.probability == 1.0;
    if (e.stage == Stage::Ramping) ramp.push_back(e.probability);
  }
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    const double expect = ramp.size() > 1 ? static_cast<double>(i) / static_cast<double>(ramp.size() - 1) : 1.0;
    linear = linear && std::abs(ramp[i] - expect) < 1e-12;
  }
  o.check(ep.size() == 160 && ramp.size() == 30, "30/30/100 epochs logged");
  o.check(teacher && linear && student, "probability 0 / linear ramp / 1");
  double max_post = 0.0;
  for (const auto& s : res.log.steps) max_post = std::max(max_post, s.grad_norm_post);
  o.check(max_post <= tc.grad_clip_norm + 1e-12, "max post-clip norm " + fmt(max_post) + " <= " + fmt(tc.grad_clip_norm));

  TrainConfig quick = tc;
  quick.stage_epochs = {1, 1, 1};
  quick.seed = 3;
  const auto a = train({seq}, cfg, quick);
  const auto b = train({seq}, cfg, quick);
  bool same = true;
  for (std::size_t i = 0; i < a.model.params().size(); ++i) {
    same = same && a.model.params().at(i).value == b.model.params().at(i).value;
  }
  o.check(same, "same-seed retraining bit-identical");
}

// 6 and 7. Five training seeds on one synthetic session.
struct SeedRow {
  double nb = 0.0, b = 0.0, lstm = 0.0, r = 0.0, nb_shuffled = 0.0, b_shuffled = 0.0;
};

const std::vector<SeedRow>& seed_runs(double& seconds) {
  static double secs = 0.0;
  static const std::vector<SeedRow> rows = [] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = prepare_synthetic(ExperimentConfig::desk(1).synth);
    std::vector<SeedRow> out;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto res = run_models(p, ExperimentConfig::desk(seed));
      const auto& nb = *res.report.find(kNeuralBehavioral);
      SeedRow r{nb.horizontal.ade,
                res.report.find(kBehavioral)->horizontal.ade,
                res.report.find(kLstm)->horizontal.ade,
                nb.horizontal.r,
                res.nb_shuffled_ade,
                res.behavioral_shuffled_ade};
      std::printf("    seed %llu: nb %.3f  b %.3f  lstm %.3f  nb_r %.3f  nb_shuffled %.3f  (%.0f s)\n",
                  static_cast<unsigned long long>(seed), r.nb, r.b, r.lstm, r.r, r.nb_shuffled, res.seconds);
      std::fflush(stdout);
      out.push_back(r);
    }
    secs = since(t0);
    return out;
  }();
  seconds = secs;
  return rows;
}

void ordering(Outcome& o) {
  double secs = 0.0;
  const auto& rows = seed_runs(secs);
  int nb_b = 0, b_l = 0, full = 0;
  std::vector<double> nb, b, l, r;
  for (const auto& x : rows) {
    nb_b += x.nb < x.b;
    b_l += x.b < x.lstm;
    full += x.nb < x.b && x.b < x.lstm;
    nb.push_back(x.nb);
    b.push_back(x.b);
    l.push_back(x.lstm);
    r.push_back(x.r);
  }
  o.detail << "mean h-ADE nb " << fmt(stats::mean(nb)) << " b " << fmt(stats::mean(b)) << " lstm "
           << fmt(stats::mean(l)) << " cm; ";
  o.detail << "nb<b in " << nb_b << "/5, b<lstm in " << b_l << "/5; ";
  o.check(full >= 4, "strict nb<b<lstm in " + std::to_string(full) + "/5 >= 4");
  o.check(stats::mean(r) >= 0.6, "nb horizontal r " + fmt(stats::mean(r), 3) + " >= 0.6");
  o.check(secs <= 900.0, "runtime " + fmt(secs, 4) + " s <= 900");
}

void neural_dependence(Outcome& o) {
  double secs = 0.0;
  const auto& rows = seed_runs(secs);
  std::vector<double> nb, gap;
  bool invariant = true;
  for (const auto& x : rows) {
    nb.push_back(x.nb);
    gap.push_back(x.nb_shuffled - x.nb);
    invariant = invariant && x.b_shuffled == x.b;
  }
  const double sd = stats::stddev(nb);
  o.check(stats::mean(gap) > 3.0 * sd,
          "shuffle degradation " + fmt(stats::mean(gap)) + " cm > 3 x seed sd " + fmt(sd));

  // Behavioral rollouts under two different streams.
  const auto p = prepare_synthetic([] {
    SynthConfig c;
    c.seed = 3;
    c.duration_s = 60.0;
    c.channels = 3;
    c.eval_movements = 2;
    c.eval_steps = 20;
    return c;
  }());
  Model beh(tiny_model_config(false));
  RolloutConfig rc;
  rc.steps = 20;
  rc.samples = 3;
  rc.use_neural = false;
  const auto f = p.eval_frames.front();
  const auto shuffled = shuffled_features(p.features, 7);
  const std::vector<FeatureMatrix> other(shuffled.begin() + static_cast<std::ptrdiff_t>(f + 1),
                                         shuffled.begin() + static_cast<std::ptrdiff_t>(f + 21));
  const auto u = rollout_movement(beh, p, f, rc);
  const auto v = rollout_movement(beh, p, f, rc, &other);
  invariant = invariant && u.samples == v.samples;
  o.check(invariant, "behavioral ADE identical under the shuffled stream");
}

// Exact two-sided signed-rank p by enumerating every sign pattern.
double enumerate_wilcoxon(const std::vector<double>& d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  for (int i = 0; i < n; ++i) rank[order[i]] = i + 1;
  double w = 0.0, total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) w += rank[i];
  }
  const double centre = total / 2.0;
  int extreme = 0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) s += rank[i];
    }
    extreme += std::abs(s - centre) >= std::abs(w - centre) - 1e-12;
  }
  return static_cast<double>(extreme) / static_cast<double>(1 << n);
}

void statistics(Outcome& o) {
  std::vector<double> d;
  for (int i = 1; i <= 10; ++i) d.push_back(0.37 * i + 0.01 * i * i);
  const double p = stats::wilcoxon_signed_rank(d).p_value;
  const double oracle = enumerate_wilcoxon(d);
  o.check(p == oracle, "wilcoxon p " + fmt(p, 8) + " == enumeration " + fmt(oracle, 8));
  const auto rej = stats::bh_reject({0.01, 0.02, 0.04}, 0.05);
  o.check(rej[0] && rej[1] && rej[2], "BH rejects (0.01, 0.02, 0.04)");

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  bool monotone = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> ps(1 + rng() % 30);
    for (auto& x : ps) x = u(rng);
    const auto adj = stats::bh_adjust(ps);
    std::vector<std::size_t> idx(ps.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return ps[a] < ps[b]; });
    for (std::size_t k = 1; k < idx.size(); ++k) monotone = monotone && adj[idx[k]] >= adj[idx[k - 1]];
    for (std::size_t k = 0; k < ps.size(); ++k) monotone = monotone && adj[k] >= ps[k] && adj[k] <= 1.0;
  }
  o.check(monotone, "adjusted p monotone in raw p over 200 random families");
}

void metrics(Outcome& o) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 10.0);
  Trajectory truth(30);
  for (auto& f : truth) {
    for (int i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  }
  const auto same = ade_fde(truth, truth, AxisGroup::Horizontal);
  o.check(same.ade == 0.0 && same.fde == 0.0, "identical trajectories give ADE = FDE = 0");
  Trajectory shifted = truth;
  for (auto& f : shifted) f.col(0).array() += 1.0;
  const auto off = ade_fde(shifted, truth, AxisGroup::Horizontal);
  o.check(std::abs(off.ade - 1.0) < 1e-12 && std::abs(off.fde - 1.0) < 1e-12,
          "(1,0,0) cm offset gives ADE " + fmt(off.ade, 15) + " FDE " + fmt(off.fde, 15));
  std::vector<double> a(50), neg(50);
  for (auto& x : a) x = n(rng);
  const double m = stats::mean(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] -= m;
    neg[i] = -a[i];
  }
  const double r1 = stats::pearson(a, a).r, r2 = stats::pearson(a, neg).r;
  o.check(std::abs(r1 - 1.0) < 1e-12 && std::abs(r2 + 1.0) < 1e-12, "pearson " + fmt(r1, 15) + " / " + fmt(r2, 15));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, void (*)(Outcome&)>> criteria{
      {"kinematics round trip", kinematics},   {"gradient suite", gradients},
      {"kl closed form", kl_divergence},       {"dsp concentration", dsp_checks},
      {"training protocol", training_protocol}, {"end-to-end ordering", ordering},
      {"neural dependence", neural_dependence}, {"statistics oracles", statistics},
      {"metric identities", metrics}};
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), since(t0),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
