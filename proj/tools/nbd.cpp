// Command-line front end: synth | ik | features | train | rollout | baseline | eval | experiment.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "nbd/checkpoint.hpp"
#include "nbd/io.hpp"
#include "nbd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nbd;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string preset = "paper";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::vector<std::string> traces;
  int steps = 0;
  int samples = 0;
  bool no_neural = false;
  double beta = -1.0;
  std::string stage_epochs;
  int seeds = 5;
};

void warn(const std::string& what) { std::cerr << json{{"warning", what}}.dump() << "\n"; }

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig base;
  if (o.preset == "desk") {
    base = ExperimentConfig::desk(o.seed);
  } else if (o.preset != "paper") {
    fail(ErrorCode::InvalidConfig, "unknown preset '" + o.preset + "'");
  }
  ExperimentConfig cfg = base;
  if (!o.config.empty()) cfg = ExperimentConfig::from_json(io::parse_json(io::read_file(o.config)), base);
  if (o.seed_set) cfg.set_seed(o.seed);
  if (o.steps > 0) cfg.rollout.steps = o.steps;
  if (o.samples > 0) cfg.rollout.samples = o.samples;
  if (o.beta >= 0.0) cfg.train.beta = o.beta;
  if (!o.stage_epochs.empty()) {
    std::array<int, 3> e{};
    char c1 = 0, c2 = 0;
    std::istringstream ss(o.stage_epochs);
    if (!(ss >> e[0] >> c1 >> e[1] >> c2 >> e[2]) || c1 != ',' || c2 != ',' || !ss.eof()) {
      fail(ErrorCode::ConfigParse, "--stage-epochs expects a,b,c");
    }
    cfg.train.stage_epochs = e;
  }
  if (o.no_neural) cfg.rollout.use_neural = false;
  cfg.train.validate();
  cfg.rollout.validate();
  return cfg;
}

io::Provenance provenance(const std::string& tool, const json& stage_cfg, std::uint64_t seed) {
  return {tool, io::config_hash(stage_cfg), seed};
}

fs::path sibling(const fs::path& manifest, const std::string& rel) { return manifest.parent_path() / rel; }

io::SessionManifest read_manifest(const std::string& path) {
  require(!path.empty(), ErrorCode::MissingFile, "--manifest is required");
  return io::SessionManifest::from_json(io::parse_json(io::read_file(path), ErrorCode::FormatError));
}

void write_manifest(const std::string& path, const io::SessionManifest& m) { io::write_file(path, m.to_json().dump(2) + "\n"); }

std::string out_or(const Options& o, const fs::path& fallback) { return o.out.empty() ? fallback.string() : o.out; }

KeypointSequence load_motion10(const Options& o, const io::SessionManifest& m) {
  require(!m.motion.empty(), ErrorCode::MissingFile, "manifest has no motion table");
  auto seq = io::decode_motion_csv(io::read_file(sibling(o.manifest, m.motion))).value;
  require(seq.rate_hz == m.movement_rate_hz, ErrorCode::RateMismatch, "motion table rate differs from the manifest");
  return downsample_motion(seq);
}

// Session at 10 Hz from the manifest's derived files.
PreparedSession load_session(const Options& o, const io::SessionManifest& m, bool features) {
  PreparedSession p;
  const auto m10 = load_motion10(o, m);
  for (std::size_t t = 0; t < m10.size(); ++t) p.world.push_back(m10.joints(t));
  require(!m.states.empty() && m.skeleton, ErrorCode::MissingFile, "run ik first: manifest has no states");
  const auto st = io::decode_states(io::read_file(sibling(o.manifest, m.states))).value;
  require(st.roots.size() == p.world.size() && st.states.size() + 1 == p.world.size(), ErrorCode::ShapeMismatch,
          "state file does not match the motion table");
  p.roots = st.roots;
  p.states = st.states;
  p.skeleton = *m.skeleton;
  p.train_frames = (m.train_frames30() + 2) / 3;
  for (auto f : m.eval_frames) {
    require(f % 3 == 0, ErrorCode::InvalidSequence, "evaluation frames must fall on the 10 Hz grid");
    p.eval_frames.push_back(f / 3);
  }
  if (features) {
    require(!m.features.empty(), ErrorCode::MissingFile, "run features first: manifest has no feature file");
    p.features = io::decode_features(io::read_file(sibling(o.manifest, m.features))).value;
    require(p.features.size() == p.world.size(), ErrorCode::ShapeMismatch, "feature file does not match the motion table");
  }
  return p;
}

int cmd_synth(const Options& o) {
  const auto cfg = load_config(o);
  SynthConfig sc = cfg.synth;
  if (o.seed_set) sc.seed = o.seed;
  const auto s = generate(sc);
  const fs::path dir = out_or(o, "session");
  const auto prov = provenance("synth", sc.to_json(), sc.seed);
  io::write_file(dir / "motion.csv", io::encode_motion_csv(s.motion, prov));
  if (sc.neural) io::write_file(dir / "neural.nbin", io::encode_neural(s.neural, prov));
  std::ostringstream truth;
  truth.precision(17);
  truth << "frame,mode,gait_phase,activity,limb_speed_left,limb_speed_right\n";
  for (std::size_t t = 0; t < s.motion.size(); ++t) {
    truth << t << ',' << to_string(s.truth.mode[t]) << ',' << s.truth.gait_phase[t] << ',' << s.truth.activity[t] << ','
          << s.truth.limb_speed_left[t] << ',' << s.truth.limb_speed_right[t] << '\n';
  }
  io::write_file(dir / "truth.csv", truth.str());

  io::SessionManifest m;
  m.session_id = "synth-" + std::to_string(sc.seed);
  m.motion = "motion.csv";
  if (sc.neural) m.neural = "neural.nbin";
  m.neural_rate_hz = sc.neural_rate_hz;
  m.channels = s.neural.channels;
  m.train_s = static_cast<double>(s.train_frames) / sc.motion_rate_hz;
  m.test_s = static_cast<double>(s.motion.size()) / sc.motion_rate_hz - m.train_s;
  m.eval_frames = s.eval_frames;
  m.provenance = prov;
  json mj = m.to_json();
  mj["synth"] = synth_manifest(s, sc);
  io::write_file(dir / "manifest.json", mj.dump(2) + "\n");
  std::cout << (dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_ik(const Options& o) {
  auto m = read_manifest(o.manifest);
  const auto m10 = load_motion10(o, m);
  if (!m.skeleton) m.skeleton = estimate_skeleton(m10);
  io::StateFile f{root_frames(m10), inverse_kinematics(m10, *m.skeleton)};
  const auto rep = roundtrip_report(m10, *m.skeleton);
  const auto prov = provenance("ik", io::skeleton_to_json(*m.skeleton), 0);
  const std::string out = out_or(o, sibling(o.manifest, "states.nsta"));
  io::write_file(out, io::encode_states(f, prov));
  m.states = fs::relative(fs::absolute(out), fs::absolute(o.manifest).parent_path()).string();
  write_manifest(o.manifest, m);
  std::cout << json{{"states", f.states.size()},
                    {"roundtrip_mean_abs_cm", rep.mean_abs_error_cm},
                    {"roundtrip_max_abs_cm", rep.max_abs_error_cm}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_features(const Options& o) {
  auto m = read_manifest(o.manifest);
  require(!m.neural.empty(), ErrorCode::MissingFile, "manifest has no neural recording");
  const auto rec = io::decode_neural(io::read_file(sibling(o.manifest, m.neural)), m.channels).value;
  const auto m10 = load_motion10(o, m);
  PreprocessReport rep;
  const NeuralRecording pre = preprocess(rec, {}, &rep);
  std::vector<FeatureMatrix> feats;
  for (auto& w : extract_features(pre, {}, m10.size())) feats.push_back(std::move(w.features));
  const std::string out = out_or(o, sibling(o.manifest, "features.nfea"));
  io::write_file(out, io::encode_features(feats, provenance("features", json{{"preprocess", "default"}}, 0)));
  m.features = fs::relative(fs::absolute(out), fs::absolute(o.manifest).parent_path()).string();
  write_manifest(o.manifest, m);
  int dropped = 0;
  for (bool v : rep.channel_valid) dropped += !v;
  std::cout << json{{"windows", feats.size()}, {"channels", pre.num_channels()}, {"dropped_channels", dropped}}.dump() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o);
  const auto m = read_manifest(o.manifest);
  const bool neural = !o.no_neural;
  const auto p = load_session(o, m, neural);
  ModelConfig mc = cfg.model;
  mc.use_neural = neural;
  if (neural) mc.channels = p.channels();
  const json stage = {{"model", mc.to_json()}, {"train", cfg.train.to_json()}};
  const auto res = train({training_split(p, neural)}, mc, cfg.train);
  const std::string out = out_or(o, sibling(o.manifest, neural ? "neural_behavioral.nbmc" : "behavioral.nbmc"));
  save_checkpoint(out, res.model, provenance("train", stage, cfg.train.seed));
  io::write_file(out + ".log.tsv", res.log.to_table());
  const auto& last = res.log.epochs.back();
  std::cout << json{{"checkpoint", out}, {"epochs", res.log.epochs.size()}, {"final_recon", last.recon}, {"final_kl", last.kl}}.dump()
            << "\n";
  return 0;
}

int cmd_rollout(const Options& o) {
  const auto cfg = load_config(o);
  const auto m = read_manifest(o.manifest);
  require(!o.checkpoint.empty(), ErrorCode::MissingFile, "--checkpoint is required");
  auto ck = load_checkpoint(o.checkpoint);
  RolloutConfig rc = cfg.rollout;
  rc.use_neural = ck.model.config().use_neural;
  if (o.no_neural) require(!rc.use_neural, ErrorCode::InvalidConfig, "--no-neural given for a neural checkpoint");
  const auto p = load_session(o, m, rc.use_neural);
  const std::string name(rc.use_neural ? kNeuralBehavioral : kBehavioral);
  const auto prov = provenance("rollout", json{{"rollout", rc.to_json()}, {"checkpoint", ck.provenance ? ck.provenance->to_json() : json()}}, rc.seed);
  std::string text = io::trace_header(name, {{"rollout", rc.to_json()}}, prov);
  for (auto f : p.eval_frames) {
    std::vector<FeatureMatrix> stream;
    if (rc.use_neural) stream = feature_stream(p, f, rc.steps);
    for (const auto& t : rollout(ck.model, p.states[f - 1], p.roots[f], p.skeleton, stream, rc, f)) io::append_trace_lines(text, t);
  }
  const std::string out = out_or(o, sibling(o.manifest, name + ".jsonl"));
  io::write_file(out, text);
  std::cout << json{{"traces", out}, {"movements", p.eval_frames.size()}, {"samples", rc.samples}}.dump() << "\n";
  return 0;
}

int cmd_baseline(const Options& o) {
  const auto cfg = load_config(o);
  const auto m = read_manifest(o.manifest);
  const auto p = load_session(o, m, true);
  LstmConfig lc = cfg.lstm;
  lc.channels = p.channels();
  LstmTrainLog log;
  auto net = lstm_baseline_train({speed_sequence(p, 0, p.train_frames)}, lc, &log);
  const int steps = cfg.rollout.steps;
  const auto prov = provenance("baseline", json{{"lstm", lc.to_json()}, {"steps", steps}}, lc.seed);
  std::string text = io::trace_header(std::string(kLstm), {{"lstm", lc.to_json()}, {"steps", steps}}, prov);
  for (auto f : p.eval_frames) io::append_position_lines(text, baseline_movement(net, p, f, steps));
  const std::string out = out_or(o, sibling(o.manifest, std::string(kLstm) + ".jsonl"));
  io::write_file(out, text);
  std::cout << json{{"traces", out}, {"final_loss", log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()}}.dump() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = load_config(o);
  const auto m = read_manifest(o.manifest);
  require(!o.traces.empty(), ErrorCode::MissingFile, "--traces is required");
  const auto p = load_session(o, m, false);
  EvalInputs in;
  std::size_t steps = 0;
  for (const auto& path : o.traces) {
    auto tf = io::decode_traces(io::read_file(path));
    for (const auto& mv : tf.rollouts.movements) {
      for (const auto& s : mv.samples) steps = std::max(steps, s.size());
    }
    in.models.push_back(std::move(tf.rollouts));
  }
  const auto& ref = in.models.front().movements;
  for (const auto& model : in.models) {
    require(model.movements.size() == ref.size(), ErrorCode::ShapeMismatch, model.name + " covers different movements");
    for (std::size_t k = 0; k < ref.size(); ++k) {
      require(model.movements[k].initial_frame == ref[k].initial_frame, ErrorCode::ShapeMismatch,
              model.name + " movements are in a different order");
    }
  }
  for (const auto& mv : ref) in.truth.push_back(truth_trajectory(p, mv.initial_frame, static_cast<int>(steps)));
  EvalConfig ec = cfg.eval;
  ec.curve_steps = std::min<int>(ec.curve_steps, static_cast<int>(steps));
  const auto rep = evaluate(in, ec);
  for (const auto& w : rep.warnings) warn(w);
  json j = rep.to_json();
  j["provenance"] = provenance("eval", ec.to_json(), ec.seed).to_json();
  const std::string out = out_or(o, sibling(o.manifest, "report.json"));
  io::write_file(out, j.dump(2) + "\n");
  std::cout << rep.table();
  return 0;
}

int cmd_experiment(const Options& o) {
  Options oo = o;
  if (o.config.empty() && o.preset == "paper") oo.preset = "desk";
  const auto base = load_config(oo);
  const auto p = prepare_synthetic(base.synth);
  json runs = json::array();
  for (int s = 1; s <= o.seeds; ++s) {
    ExperimentConfig c = base;
    c.set_seed(static_cast<std::uint64_t>(s));
    const auto r = run_models(p, c, [&](const std::string& msg) { std::cerr << "seed " << s << ": " << msg << "\n"; });
    json row = {{"seed", s}, {"shuffled_neural_behavioral_ade", r.nb_shuffled_ade}};
    for (const auto& ms : r.report.models) {
      row[ms.name] = {{"horizontal_ade", ms.horizontal.ade}, {"horizontal_r", ms.horizontal.r},
                      {"vertical_ade", ms.vertical.ade}, {"vertical_r", ms.vertical.r}};
    }
    std::cout << row.dump() << std::endl;
    runs.push_back(row);
  }
  if (!o.out.empty()) io::write_file(o.out, json{{"config", base.to_json()}, {"runs", runs}}.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-behavioral movement reconstruction toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON configuration overlay");
    c->add_option("--preset", o.preset, "base configuration: paper or desk")->check(CLI::IsMember({"paper", "desk"}));
    c->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { o.seed = v; o.seed_set = true; }, "run seed");
    c->add_option("--out", o.out, "output path");
  };
  auto with_manifest = [&](CLI::App* c) { c->add_option("--manifest", o.manifest, "session manifest")->required(); };

  auto* synth = app.add_subcommand("synth", "generate a synthetic session");
  common(synth);
  auto* ik = app.add_subcommand("ik", "keypoints to motion states");
  common(ik);
  with_manifest(ik);
  auto* features = app.add_subcommand("features", "preprocess neural data and extract spectral features");
  common(features);
  with_manifest(features);
  auto* trn = app.add_subcommand("train", "train a generative model");
  common(trn);
  with_manifest(trn);
  trn->add_flag("--no-neural", o.no_neural, "train the behavior-only variant");
  trn->add_option("--beta", o.beta, "KL weight");
  trn->add_option("--stage-epochs", o.stage_epochs, "epochs per stage, a,b,c");
  auto* roll = app.add_subcommand("rollout", "autoregressive reconstruction from the evaluation frames");
  common(roll);
  with_manifest(roll);
  roll->add_option("--checkpoint", o.checkpoint, "trained model")->required();
  roll->add_option("--steps", o.steps, "steps per rollout");
  roll->add_option("--samples", o.samples, "latent samples per initial state");
  roll->add_flag("--no-neural", o.no_neural, "assert the checkpoint is behavior-only");
  auto* base = app.add_subcommand("baseline", "train the LSTM speed decoder and integrate its traces");
  common(base);
  with_manifest(base);
  base->add_option("--steps", o.steps, "steps per trace");
  auto* ev = app.add_subcommand("eval", "score traces against the session");
  common(ev);
  with_manifest(ev);
  ev->add_option("--traces", o.traces, "trace files (JSONL)")->required();
  auto* exp = app.add_subcommand("experiment", "synthetic end-to-end comparison over training seeds");
  common(exp);
  exp->add_option("--seeds", o.seeds, "number of training seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*ik) return cmd_ik(o);
    if (*features) return cmd_features(o);
    if (*trn) return cmd_train(o);
    if (*roll) return cmd_rollout(o);
    if (*base) return cmd_baseline(o);
    if (*ev) return cmd_eval(o);
    if (*exp) return cmd_experiment(o);
  } catch (const Error& e) {
    std::cerr << json{{"error", to_string(e.code())}, {"code", static_cast<int>(e.code())}, {"message", e.what()}}.dump()
              << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"code", 1}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
