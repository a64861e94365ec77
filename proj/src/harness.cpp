#include "onlinehoi/harness.hpp"

#include "onlinehoi/archive.hpp"
#include "onlinehoi/errors.hpp"
#include "onlinehoi/hash.hpp"
#include "onlinehoi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>

namespace onlinehoi::harness {

using ag::Mat;
using ag::Var;

namespace {

constexpr std::uint64_t kInitKey = 0x696e6974u;
constexpr std::uint64_t kBatchKey = 0x62617463u;
constexpr std::uint64_t kSampleKey = 0x73616d70u;

/// Reads the keys of one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  template <typename Parse, typename T>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }
  const json* sub(const std::string& key) { return take(key); }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) unknown.push_back(it.key());
    if (unknown.empty()) return;
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + where(k);
    throw ConfigError("unknown config key(s): " + list);
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Fn>
void with_section(Section& parent, const std::string& key, Fn fn) {
  if (const json* v = parent.sub(key)) {
    Section s(*v, key);
    fn(s);
    s.finish();
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string version() { return ONLINEHOI_CONTENT_VERSION; }

json provenance(const RunConfig& cfg, std::uint64_t seed) {
  return {{"config_hash", config_hash(cfg)}, {"version", version()}, {"seed", seed}, {"config", to_json(cfg)}};
}

const std::vector<synth::MotionPair>& eval_split(const GenerationData& d, const RunConfig& cfg) {
  return cfg.eval.split == "val" ? d.val : d.test;
}

const std::vector<percept::PointCloudSequence>& eval_split(const PerceptionData& d, const RunConfig& cfg) {
  return cfg.eval.split == "val" ? d.val : d.test;
}

diffusion::GenCondition condition_of(const synth::MotionPair& m) { return {m.actor, m.object_pose, m.geometry}; }

struct GenModel {
  std::unique_ptr<nn::ParamStore> store = std::make_unique<nn::ParamStore>();
  std::unique_ptr<diffusion::Denoiser> model;
};

GenModel build_generation(const RunConfig& cfg, std::uint64_t seed) {
  GenModel g;
  Rng rng = make_rng(seed, {kInitKey});
  g.model = std::make_unique<diffusion::Denoiser>(*g.store, denoiser_config(cfg), rng);
  return g;
}

struct PerceptModel {
  std::unique_ptr<nn::ParamStore> store = std::make_unique<nn::ParamStore>();
  std::unique_ptr<percept::PerceptionModel> model;
};

PerceptModel build_perception(const RunConfig& cfg, std::uint64_t seed) {
  PerceptModel p;
  Rng rng = make_rng(seed, {kInitKey});
  p.model = std::make_unique<percept::PerceptionModel>(*p.store, perception_config(cfg), rng);
  return p;
}

archive::Archive checkpoint_archive(const RunConfig& cfg, std::uint64_t seed, std::int64_t step,
                                    const nn::ParamStore& store, const nn::Adam& opt, const std::vector<double>& losses) {
  archive::Archive a;
  a.meta = provenance(cfg, seed);
  a.meta["kind"] = "checkpoint";
  a.meta["task"] = to_string(cfg.task);
  a.meta["step"] = step;
  archive::export_params(store, a);
  archive::export_adam(store, opt, a);
  archive::Array log;
  log.shape = {static_cast<std::int64_t>(losses.size())};
  log.data = losses;
  a.put("log/loss", std::move(log));
  if (cfg.task == Task::generation) {
    const auto sched = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.schedule);
    archive::Array ab;
    ab.shape = {static_cast<std::int64_t>(sched.alpha_bars.size())};
    ab.data = sched.alpha_bars;
    a.put("schedule/alpha_bar", std::move(ab));
  }
  return a;
}

archive::Archive load_checkpoint(const RunConfig& cfg, std::uint64_t seed, const fs::path& path) {
  archive::Archive a = archive::load(path);
  const json& m = a.meta;
  if (m.value("kind", "") != "checkpoint") throw ConfigError(path.string() + " is not a checkpoint");
  if (m.value("task", "") != to_string(cfg.task)) {
    throw ConfigError("checkpoint task '" + m.value("task", "") + "' does not match config task '" + to_string(cfg.task) + "'");
  }
  if (m.value("config_hash", "") != config_hash(cfg)) {
    throw ConfigError("checkpoint config hash " + m.value("config_hash", "") + " does not match config hash " + config_hash(cfg));
  }
  if (m.value("seed", std::uint64_t{0}) != seed) {
    throw ConfigError("checkpoint seed " + std::to_string(m.value("seed", std::uint64_t{0})) + " does not match seed " +
                      std::to_string(seed));
  }
  return a;
}

std::string loss_tail(const std::vector<double>& losses) {
  std::string s;
  for (std::size_t i = losses.size() > 5 ? losses.size() - 5 : 0; i < losses.size(); ++i) s += (s.empty() ? "" : ", ") + fmt(losses[i]);
  return s;
}

std::vector<std::size_t> pick_batch(std::uint64_t seed, std::int64_t step, int batch, std::size_t n) {
  Rng rng = make_rng(seed, {kBatchKey, static_cast<std::uint64_t>(step)});
  std::vector<std::size_t> out;
  for (int b = 0; b < batch; ++b) out.push_back(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1)));
  return out;
}

template <typename Body>
TrainResult train_loop(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir, const TrainOptions& opts,
                       nn::ParamStore& store, Body step_fn) {
  nn::Adam opt(store, {.lr = cfg.training.lr});
  std::vector<double> losses;
  std::int64_t start = 0;
  if (!opts.resume.empty()) {
    const archive::Archive a = load_checkpoint(cfg, seed, opts.resume);
    archive::import_params(store, a);
    archive::import_adam(store, opt, a);
    start = a.meta["step"].get<std::int64_t>();
    losses = a.get("log/loss").data;
    if (static_cast<std::int64_t>(losses.size()) != start) throw ConfigError("checkpoint loss log does not match its step");
  }
  fs::create_directories(dir);
  for (std::int64_t step = start; step < cfg.training.steps; ++step) {
    const std::string where = " at step " + std::to_string(step) + "; recent losses: [" + loss_tail(losses) + "]";
    double loss;
    try {
      loss = step_fn(opt, step, losses);
    } catch (const InvalidParameter& e) {
      throw NumericalError(std::string("training diverged (") + e.what() + ")" + where);
    } catch (const InvalidState& e) {
      throw NumericalError(std::string("training diverged (") + e.what() + ")" + where);
    }
    if (!std::isfinite(loss)) throw NumericalError("non-finite " + to_string(cfg.task) + " loss" + where);
    losses.push_back(loss);
    try {
      store.check_finite("after the optimizer update");
    } catch (const InvalidState& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step) + "; recent losses: [" +
                           loss_tail(losses) + "]");
    }
    if (cfg.training.checkpoint_every > 0 && (step + 1) % cfg.training.checkpoint_every == 0) {
      archive::save(dir / ("checkpoint_step" + std::to_string(step + 1) + ".bin"),
                    checkpoint_archive(cfg, seed, step + 1, store, opt, losses));
    }
  }
  TrainResult res;
  res.losses = losses;
  res.checkpoint = dir / "checkpoint.bin";
  res.parameter_count = store.scalar_count();
  archive::save(res.checkpoint, checkpoint_archive(cfg, seed, cfg.training.steps, store, opt, losses));

  std::ostringstream csv;
  csv << "# config_hash " << config_hash(cfg) << " version " << version() << " seed " << seed << "\n";
  csv << "step,loss\n";
  csv.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) csv << i << "," << losses[i] << "\n";
  archive::write_file_atomic(dir / "train_log.csv", csv.str());
  return res;
}

Mat poison_after(const Mat& m, int k) {
  Mat out = m;
  out.bottomRows(m.rows() - k - 1).setConstant(std::numeric_limits<double>::quiet_NaN());
  return out;
}

int prefix_violations(const Mat& clean, const Mat& poisoned, int k) {
  int bad = 0;
  for (int r = 0; r <= k; ++r)
    if (!poisoned.row(r).allFinite() || !(clean.row(r).array() == poisoned.row(r).array()).all()) ++bad;
  return bad;
}

json trajectory_json(const Mat& gt, const Mat& gen) {
  json g = json::array(), p = json::array(), e = json::array();
  const Eigen::Index dims = std::min<Eigen::Index>(2, gt.cols());
  for (Eigen::Index t = 0; t < gt.rows(); ++t) {
    json a = json::array(), b = json::array();
    for (Eigen::Index d = 0; d < dims; ++d) {
      a.push_back(gt(t, d));
      b.push_back(gen(t, d));
    }
    g.push_back(a);
    p.push_back(b);
    e.push_back((gt.row(t) - gen.row(t)).norm());
  }
  return {{"ground_truth", g}, {"generated", p}, {"error", e}};
}

json generation_metrics(const RunConfig& cfg, const GenerationData& data, const std::vector<Mat>& generated, json& report) {
  const auto& split = eval_split(data, cfg);
  std::vector<Mat> gt, train_motion;
  std::vector<int> labels, train_labels;
  for (const auto& m : split) {
    gt.push_back(m.reactor);
    labels.push_back(m.label);
  }
  for (const auto& m : data.train) {
    train_motion.push_back(m.reactor);
    train_labels.push_back(m.label);
  }
  nn::ParamStore store;
  Rng rng = make_rng(cfg.eval.classifier_seed, {kInitKey});
  metrics::MotionClassifier clf(store, {static_cast<int>(gt.front().cols()), 32, 16, cfg.data.n_classes}, rng);
  const auto rep = metrics::feature_extractor_train(clf, store, train_motion, train_labels,
                                                    {.steps = cfg.eval.classifier_steps, .seed = cfg.eval.classifier_seed});
  report["extractor"] = {{"id", clf.id}, {"train_accuracy", rep.train_accuracy}};
  if (!rep.warning.empty()) report["extractor"]["warning"] = rep.warning;

  const auto fg = clf.feature_set(generated), ft = clf.feature_set(gt);
  const int pairs = std::min<int>(cfg.eval.div_pairs, static_cast<int>(gt.size()) / 2);
  const double div_gen = metrics::div(fg, pairs, cfg.eval.classifier_seed);
  const double div_gt = metrics::div(ft, pairs, cfg.eval.classifier_seed);
  double mse = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) mse += (generated[i] - gt[i]).squaredNorm() / static_cast<double>(gt[i].size());
  return {{"FID", metrics::fid(fg, ft)},
          {"RA", metrics::recognition_accuracy(clf, generated, labels)},
          {"DIV", div_gen},
          {"DIV_gt", div_gt},
          {"DIV_gap", std::abs(div_gen - div_gt)},
          {"MSE", mse / static_cast<double>(gt.size())}};
}

json perception_metrics(const std::vector<percept::PointCloudSequence>& clips, const std::vector<std::vector<int>>& pred) {
  std::vector<int> all_pred, all_gt;
  double edit = 0.0, f10 = 0.0, f25 = 0.0, f50 = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& gt = clips[i].labels;
    all_pred.insert(all_pred.end(), pred[i].begin(), pred[i].end());
    all_gt.insert(all_gt.end(), gt.begin(), gt.end());
    edit += metrics::edit_score(pred[i], gt);
    f10 += metrics::f1_at_k(pred[i], gt, 0.10);
    f25 += metrics::f1_at_k(pred[i], gt, 0.25);
    f50 += metrics::f1_at_k(pred[i], gt, 0.50);
  }
  const double n = static_cast<double>(clips.size());
  return {{"Acc", metrics::framewise_acc(all_pred, all_gt)},
          {"Edit", edit / n},
          {"F1@10", f10 / n},
          {"F1@25", f25 / n},
          {"F1@50", f50 / n}};
}

json base_report(const RunConfig& cfg, std::uint64_t seed) {
  json r = provenance(cfg, seed);
  r["kind"] = "report";
  r["task"] = to_string(cfg.task);
  r["name"] = cfg.name;
  r["columns"] = metric_columns(cfg.task);
  return r;
}

void set_path(json& j, const std::string& path, const json& value) {
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad config path '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    if (!cur->is_object()) throw ConfigError("config path '" + path + "' crosses a non-object");
    start = dot + 1;
  }
}

std::string axis_value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

std::string to_string(Task t) { return t == Task::generation ? "generation" : "perception"; }

Task parse_task(const std::string& s) {
  if (s == "generation") return Task::generation;
  if (s == "perception") return Task::perception;
  throw ConfigError("unknown task '" + s + "' (expected generation|perception)");
}

void RunConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
  };
  if (name.empty()) throw ConfigError("name must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  positive(S, "S");
  positive(L_cap, "L_cap");
  positive(training.steps, "training.steps");
  positive(training.batch, "training.batch");
  if (!(training.lr > 0.0) || !std::isfinite(training.lr)) throw ConfigError("training.lr must be positive");
  if (training.checkpoint_every < 0) throw ConfigError("training.checkpoint_every must be >= 0");
  positive(diffusion.steps, "diffusion.steps");
  positive(network.model_dim, "network.model_dim");
  positive(network.depth, "network.depth");
  positive(network.heads, "network.heads");
  positive(data.train, "data.train");
  if (data.val < 0) throw ConfigError("data.val must be >= 0");
  if (eval.split != "test" && eval.split != "val") throw ConfigError("eval.split must be test or val");
  const int eval_n = eval.split == "val" ? data.val : data.test;
  if (eval_n < 2) throw ConfigError("eval split '" + eval.split + "' needs at least 2 items");
  if (eval.classifier_steps < 0) throw ConfigError("eval.classifier_steps must be >= 0");
  positive(eval.div_pairs, "eval.div_pairs");
  if (task == Task::generation) {
    denoiser_config(*this).validate();
    gen_spec(*this).validate();
  } else {
    perception_config(*this).validate();
    pcd_spec(*this).validate();
  }
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  Section top(j, "");
  top.read("name", c.name);
  top.read_enum("task", c.task, parse_task);
  std::string mode;
  top.read("mode", mode);
  if (mode == "offline") c.online = false;
  else if (!mode.empty() && mode != "online") throw ConfigError("mode must be online or offline, got '" + mode + "'");
  top.read_enum("memory", c.memory, memory::parse_memory_mode);
  top.read_enum("fusion", c.fusion, memory::parse_fusion);
  top.read_enum("model", c.model, parse_block_kind);
  top.read("S", c.S);
  top.read("L_cap", c.L_cap);
  if (const json* s = top.sub("seeds")) {
    if (!s->is_array()) throw ConfigError("seeds must be a list of non-negative integers");
    c.seeds.clear();
    for (const auto& v : *s) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("seeds must be a list of non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  with_section(top, "training", [&](Section& s) {
    s.read("steps", c.training.steps);
    s.read("batch", c.training.batch);
    s.read("lr", c.training.lr);
    s.read("checkpoint_every", c.training.checkpoint_every);
  });
  with_section(top, "diffusion", [&](Section& s) {
    s.read("steps", c.diffusion.steps);
    s.read_enum("schedule", c.diffusion.schedule, diffusion::parse_schedule_kind);
  });
  with_section(top, "network", [&](Section& s) {
    s.read("model_dim", c.network.model_dim);
    s.read("depth", c.network.depth);
    s.read("state_dim", c.network.state_dim);
    s.read("conv_width", c.network.conv_width);
    s.read("expansion", c.network.expansion);
    s.read("heads", c.network.heads);
  });
  with_section(top, "data", [&](Section& s) {
    s.read("seed", c.data.seed);
    s.read("train", c.data.train);
    s.read("val", c.data.val);
    s.read("test", c.data.test);
    s.read("T_seq", c.data.T_seq);
    s.read("n_classes", c.data.n_classes);
    s.read("noise", c.data.noise);
    s.read("long_range_rate", c.data.long_range_rate);
    s.read("cue_delay", c.data.cue_delay);
    s.read("n_pts", c.data.n_pts);
    s.read("min_segment", c.data.min_segment);
    s.read("max_segment", c.data.max_segment);
    s.read("twin_from", c.data.twin_from);
    s.read("pose_dim", c.data.pose_dim);
    s.read("object_pose_dim", c.data.object_pose_dim);
    s.read("geometry_points", c.data.geometry_points);
  });
  with_section(top, "eval", [&](Section& s) {
    s.read("split", c.eval.split);
    s.read("classifier_steps", c.eval.classifier_steps);
    s.read("classifier_seed", c.eval.classifier_seed);
    s.read("div_pairs", c.eval.div_pairs);
    s.read("guard", c.eval.guard);
  });
  with_section(top, "paths", [&](Section& s) {
    s.read("data", c.paths.data);
    s.read("out", c.paths.out);
  });
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json seeds = json::array();
  for (auto s : c.seeds) seeds.push_back(s);
  return {
      {"name", c.name},
      {"task", to_string(c.task)},
      {"mode", c.online ? "online" : "offline"},
      {"memory", memory::to_string(c.memory)},
      {"fusion", memory::to_string(c.fusion)},
      {"model", to_string(c.model)},
      {"S", c.S},
      {"L_cap", c.L_cap},
      {"seeds", seeds},
      {"training",
       {{"steps", c.training.steps},
        {"batch", c.training.batch},
        {"lr", c.training.lr},
        {"checkpoint_every", c.training.checkpoint_every}}},
      {"diffusion", {{"steps", c.diffusion.steps}, {"schedule", diffusion::to_string(c.diffusion.schedule)}}},
      {"network",
       {{"model_dim", c.network.model_dim},
        {"depth", c.network.depth},
        {"state_dim", c.network.state_dim},
        {"conv_width", c.network.conv_width},
        {"expansion", c.network.expansion},
        {"heads", c.network.heads}}},
      {"data",
       {{"seed", c.data.seed},
        {"train", c.data.train},
        {"val", c.data.val},
        {"test", c.data.test},
        {"T_seq", c.data.T_seq},
        {"n_classes", c.data.n_classes},
        {"noise", c.data.noise},
        {"long_range_rate", c.data.long_range_rate},
        {"cue_delay", c.data.cue_delay},
        {"n_pts", c.data.n_pts},
        {"min_segment", c.data.min_segment},
        {"max_segment", c.data.max_segment},
        {"twin_from", c.data.twin_from},
        {"pose_dim", c.data.pose_dim},
        {"object_pose_dim", c.data.object_pose_dim},
        {"geometry_points", c.data.geometry_points}}},
      {"eval",
       {{"split", c.eval.split},
        {"classifier_steps", c.eval.classifier_steps},
        {"classifier_seed", c.eval.classifier_seed},
        {"div_pairs", c.eval.div_pairs},
        {"guard", c.eval.guard}}},
      {"paths", {{"data", c.paths.data}, {"out", c.paths.out}}},
  };
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("paths");
  return Fnv1a().str(j.dump()).hex();
}

json apply_override(json j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  set_path(j, assignment.substr(0, eq), value);
  return j;
}

diffusion::DenoiserConfig denoiser_config(const RunConfig& cfg) {
  diffusion::DenoiserConfig d;
  const auto spec = gen_spec(cfg);
  d.pose_dim = spec.D_pose;
  d.object_pose_dim = spec.object_pose_dim;
  d.geometry_points = spec.geometry_points;
  d.model_dim = cfg.network.model_dim;
  d.depth = cfg.network.depth;
  d.state_dim = cfg.network.state_dim;
  d.conv_width = cfg.network.conv_width;
  d.expansion = cfg.network.expansion;
  d.cond_heads = cfg.network.heads;
  d.backbone = cfg.model;
  d.online = cfg.online;
  d.memory.mode = cfg.memory;
  d.memory.fusion = cfg.fusion;
  d.memory.short_capacity = cfg.S;
  d.memory.long_capacity = cfg.L_cap;
  return d;
}

percept::PerceptionConfig perception_config(const RunConfig& cfg) {
  percept::PerceptionConfig p;
  p.model_dim = cfg.network.model_dim;
  p.blocks = cfg.network.depth;
  p.state_dim = cfg.network.state_dim;
  p.conv_width = cfg.network.conv_width;
  p.expansion = cfg.network.expansion;
  p.heads = cfg.network.heads;
  p.temporal = cfg.model;
  p.set_online(cfg.online);
  p.memory.mode = cfg.memory;
  p.memory.fusion = cfg.fusion;
  p.memory.short_capacity = cfg.S;
  p.memory.long_capacity = cfg.L_cap;
  p.num_classes = cfg.data.n_classes;
  return p;
}

synth::SynthGenSpec gen_spec(const RunConfig& cfg) {
  synth::SynthGenSpec s;
  s.seed = cfg.data.seed;
  s.T_seq = cfg.data.T_seq;
  s.n_action_classes = cfg.data.n_classes;
  s.noise = cfg.data.noise;
  s.long_range_rate = cfg.data.long_range_rate;
  s.cue_delay = cfg.data.cue_delay;
  s.D_pose = cfg.data.pose_dim;
  s.object_pose_dim = cfg.data.object_pose_dim;
  s.geometry_points = cfg.data.geometry_points;
  return s;
}

synth::SynthPcdSpec pcd_spec(const RunConfig& cfg) {
  synth::SynthPcdSpec s;
  s.seed = cfg.data.seed;
  s.T_seq = cfg.data.T_seq;
  s.n_pts = cfg.data.n_pts;
  s.n_classes = cfg.data.n_classes;
  s.min_segment = cfg.data.min_segment;
  s.max_segment = cfg.data.max_segment;
  s.twin_from = cfg.data.twin_from;
  return s;
}

fs::path output_root(const std::string& override_root) {
  if (!override_root.empty()) return override_root;
  if (const char* env = std::getenv("ONLINEHOI_OUT"); env && *env) return env;
  return "runs";
}

fs::path run_dir(const fs::path& root, const RunConfig& cfg, std::uint64_t seed) {
  return root / (cfg.paths.out.empty() ? cfg.name : cfg.paths.out) / config_hash(cfg) / ("seed" + std::to_string(seed));
}

GenerationData generation_data(const RunConfig& cfg) {
  GenerationData d;
  if (!cfg.paths.data.empty()) {
    auto read = [&](const char* split) {
      std::ifstream is(fs::path(cfg.paths.data) / (std::string(split) + ".motion"));
      if (!is) throw ConfigError("missing " + (fs::path(cfg.paths.data) / (std::string(split) + ".motion")).string());
      auto items = synth::read_motion_pairs(is);
      for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& m = items[i];
        if (m.actor.cols() != cfg.data.pose_dim || m.reactor.cols() != cfg.data.pose_dim ||
            m.object_pose.cols() != cfg.data.object_pose_dim || m.geometry.rows() < 1) {
          throw ConfigError(std::string(split) + ".motion item " + std::to_string(i) + ": pose width " +
                            std::to_string(m.actor.cols()) + ", object pose width " + std::to_string(m.object_pose.cols()) +
                            " do not match data.pose_dim " + std::to_string(cfg.data.pose_dim) + " / data.object_pose_dim " +
                            std::to_string(cfg.data.object_pose_dim));
        }
      }
      return items;
    };
    d.train = read("train");
    d.val = read("val");
    d.test = read("test");
  } else {
    const auto spec = gen_spec(cfg);
    const auto sp = synth::make_splits(cfg.data.train, cfg.data.val, cfg.data.test);
    d.train = synth::gen_motion_pairs(spec, sp.train.count, sp.train.first);
    d.val = synth::gen_motion_pairs(spec, sp.val.count, sp.val.first);
    d.test = synth::gen_motion_pairs(spec, sp.test.count, sp.test.first);
  }
  if (d.train.empty() || eval_split(d, cfg).size() < 2) throw ConfigError("generation data has too few items");
  for (const auto* split : {&d.train, &d.val, &d.test})
    for (const auto& m : *split)
      if (!m.actor.allFinite() || !m.reactor.allFinite() || !m.object_pose.allFinite() || !m.geometry.allFinite())
        throw ConfigError("generation data contains non-finite values");
  return d;
}

PerceptionData perception_data(const RunConfig& cfg) {
  PerceptionData d;
  if (!cfg.paths.data.empty()) {
    auto read = [&](const char* split) {
      std::vector<percept::PointCloudSequence> out;
      for (int i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04d.clip", i);
        const fs::path p = fs::path(cfg.paths.data) / split / name;
        if (!fs::exists(p)) break;
        std::ifstream is(p);
        out.push_back(percept::read_clip(is));
      }
      return out;
    };
    d.train = read("train");
    d.val = read("val");
    d.test = read("test");
  } else {
    const auto spec = pcd_spec(cfg);
    const auto sp = synth::make_splits(cfg.data.train, cfg.data.val, cfg.data.test);
    d.train = synth::gen_pcd_actions(spec, sp.train.count, sp.train.first);
    d.val = synth::gen_pcd_actions(spec, sp.val.count, sp.val.first);
    d.test = synth::gen_pcd_actions(spec, sp.test.count, sp.test.first);
  }
  if (d.train.empty() || eval_split(d, cfg).size() < 2) throw ConfigError("perception data has too few clips");
  for (const auto* split : {&d.train, &d.val, &d.test})
    for (const auto& clip : *split)
      for (const auto& f : clip.frames)
        if (!f.points.allFinite() || !f.normals.allFinite()) throw ConfigError("perception data contains non-finite values");
  return d;
}

void datagen(const RunConfig& cfg, const fs::path& dir) {
  json manifest = provenance(cfg, cfg.data.seed);
  manifest["kind"] = "dataset";
  manifest["task"] = to_string(cfg.task);
  if (cfg.task == Task::generation) {
    RunConfig gen_cfg = cfg;
    gen_cfg.paths.data.clear();
    const auto d = generation_data(gen_cfg);
    for (const auto& [split, items] : {std::pair{"train", &d.train}, {"val", &d.val}, {"test", &d.test}}) {
      std::ostringstream os;
      synth::write_motion_pairs(os, *items);
      archive::write_file_atomic(dir / (std::string(split) + ".motion"), os.str());
      manifest["counts"][split] = items->size();
    }
  } else {
    RunConfig pcd_cfg = cfg;
    pcd_cfg.paths.data.clear();
    const auto d = perception_data(pcd_cfg);
    for (const auto& [split, clips] : {std::pair{"train", &d.train}, {"val", &d.val}, {"test", &d.test}}) {
      for (std::size_t i = 0; i < clips->size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04zu.clip", i);
        std::ostringstream os;
        percept::write_clip(os, (*clips)[i]);
        archive::write_file_atomic(dir / split / name, os.str());
      }
      manifest["counts"][split] = clips->size();
    }
  }
  archive::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainResult train(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.task == Task::generation) {
    const auto data = generation_data(cfg);
    std::vector<diffusion::TrainExample> examples;
    for (const auto& m : data.train) examples.push_back({m.reactor, condition_of(m)});
    GenModel g = build_generation(cfg, seed);
    const auto sched = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.schedule);
    return train_loop(cfg, seed, dir, opts, *g.store, [&](nn::Adam& opt, std::int64_t step, const std::vector<double>& losses) {
      std::vector<const diffusion::TrainExample*> batch;
      for (auto i : pick_batch(seed, step, cfg.training.batch, examples.size())) batch.push_back(&examples[i]);
      diffusion::TrainLog log;
      log.losses = losses;
      return diffusion::train_step(*g.model, opt, batch, sched, seed, step, log);
    });
  }
  const auto data = perception_data(cfg);
  PerceptModel p = build_perception(cfg, seed);
  return train_loop(cfg, seed, dir, opts, *p.store, [&](nn::Adam& opt, std::int64_t step, const std::vector<double>&) {
    std::vector<Var> parts;
    for (auto i : pick_batch(seed, step, cfg.training.batch, data.train.size())) parts.push_back(p.model->loss(data.train[i]));
    Var loss = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) loss = ag::add(loss, parts[i]);
    loss = ag::scale(loss, 1.0 / static_cast<double>(parts.size()));
    const double value = loss.item();
    if (std::isfinite(value)) {
      ag::backward(loss);
      opt.step();
    }
    return value;
  });
}

json evaluate(const RunConfig& cfg, std::uint64_t seed, const fs::path& checkpoint) {
  cfg.validate();
  const archive::Archive ck = load_checkpoint(cfg, seed, checkpoint);
  json report = base_report(cfg, seed);
  report["checkpoint"] = checkpoint.filename().string();
  report["losses"] = ck.get("log/loss").data;
  json guard = {{"checked", false}, {"violations", 0}};

  if (cfg.task == Task::generation) {
    const auto data = generation_data(cfg);
    GenModel g = build_generation(cfg, seed);
    archive::import_params(*g.store, ck);
    report["parameter_count"] = g.store->scalar_count();
    const auto sched = diffusion::make_schedule(cfg.diffusion.steps, cfg.diffusion.schedule);
    const auto& split = eval_split(data, cfg);
    std::vector<Mat> generated;
    for (std::size_t i = 0; i < split.size(); ++i) {
      generated.push_back(
          diffusion::sample_online(*g.model, condition_of(split[i]), sched, derive_seed(seed, {kSampleKey, i})));
    }
    if (cfg.online && cfg.eval.guard) {
      const int k = static_cast<int>(split.front().actor.rows()) / 2;
      diffusion::GenCondition poisoned = condition_of(split.front());
      poisoned.actor = poison_after(poisoned.actor, k);
      poisoned.object_pose = poison_after(poisoned.object_pose, k);
      const Mat out = diffusion::sample_online(*g.model, poisoned, sched, derive_seed(seed, {kSampleKey, 0}), {.check_inputs = false});
      guard = {{"checked", true}, {"violations", prefix_violations(generated.front(), out, k)}, {"frame", k}};
    }
    report["metrics"] = generation_metrics(cfg, data, generated, report);
    report["trajectory"] = trajectory_json(split.front().reactor, generated.front());
  } else {
    const auto data = perception_data(cfg);
    PerceptModel p = build_perception(cfg, seed);
    archive::import_params(*p.store, ck);
    report["parameter_count"] = p.store->scalar_count();
    const auto& clips = eval_split(data, cfg);
    std::vector<std::vector<int>> pred;
    for (const auto& clip : clips) pred.push_back(p.model->predict(clip).labels);
    if (cfg.online && cfg.eval.guard) {
      const auto& clip = clips.front();
      const int k = clip.length() / 2;
      percept::PointCloudSequence poisoned = clip;
      for (int t = k + 1; t < poisoned.length(); ++t) {
        poisoned.frames[t].points.setConstant(std::numeric_limits<double>::quiet_NaN());
        poisoned.frames[t].normals.setConstant(std::numeric_limits<double>::quiet_NaN());
      }
      const Mat clean = p.model->logits(clip).value();
      const Mat out = p.model->logits(poisoned, false).value();
      guard = {{"checked", true}, {"violations", prefix_violations(clean, out, k)}, {"frame", k}};
    }
    report["metrics"] = perception_metrics(clips, pred);
  }
  report["guard"] = guard;
  if (guard["violations"].get<int>() > 0) {
    throw InvalidState("causality guard: " + std::to_string(guard["violations"].get<int>()) +
                       " past frame(s) changed when future frames were poisoned");
  }
  return report;
}

json evaluate_ground_truth(const RunConfig& cfg) {
  cfg.validate();
  json report = base_report(cfg, cfg.data.seed);
  report["reference"] = "ground_truth";
  if (cfg.task == Task::generation) {
    const auto data = generation_data(cfg);
    std::vector<Mat> gt;
    for (const auto& m : eval_split(data, cfg)) gt.push_back(m.reactor);
    report["metrics"] = generation_metrics(cfg, data, gt, report);
  } else {
    const auto data = perception_data(cfg);
    const auto& clips = eval_split(data, cfg);
    std::vector<std::vector<int>> pred;
    for (const auto& c : clips) pred.push_back(c.labels);
    report["metrics"] = perception_metrics(clips, pred);
  }
  return report;
}

std::vector<std::string> metric_columns(Task task) {
  if (task == Task::generation) return {"FID", "RA", "DIV", "DIV_gt", "DIV_gap", "MSE"};
  return {"Acc", "Edit", "F1@10", "F1@25", "F1@50"};
}

void write_report(const json& report, const fs::path& dir) {
  archive::write_file_atomic(dir / "report.json", report.dump(2) + "\n");
  std::ostringstream csv;
  csv << "name,task,seed,config_hash,version";
  for (const auto& c : report["columns"]) csv << "," << c.get<std::string>();
  csv << "\n"
      << report.value("name", "") << "," << report.value("task", "") << "," << report["seed"].dump() << ","
      << report.value("config_hash", "") << "," << report.value("version", "");
  for (const auto& c : report["columns"]) csv << "," << fmt(report["metrics"][c.get<std::string>()].get<double>());
  csv << "\n";
  archive::write_file_atomic(dir / "report.csv", csv.str());
}

Grid parse_grid(const json& j) {
  if (!j.is_object() || !j.contains("grid")) throw ConfigError("grid config needs a \"grid\" entry");
  Grid g;
  g.base = j;
  g.base.erase("grid");
  parse_config(g.base);
  auto family_from = [](const json& axes, std::string name) {
    if (!axes.is_object() || axes.empty()) throw ConfigError("grid axes must be a non-empty object");
    GridFamily f;
    for (auto it = axes.begin(); it != axes.end(); ++it) {
      if (!it.value().is_array() || it.value().empty()) throw ConfigError("grid axis '" + it.key() + "' must be a non-empty list");
      f.axes.emplace_back(it.key(), std::vector<json>(it.value().begin(), it.value().end()));
    }
    if (name.empty())
      for (const auto& [axis, values] : f.axes) name += (name.empty() ? "" : "_x_") + axis;
    f.name = name;
    return f;
  };
  const json& grid = j["grid"];
  if (grid.is_array()) {
    for (const auto& fam : grid) {
      if (!fam.is_object() || !fam.contains("axes")) throw ConfigError("grid families need an \"axes\" object");
      for (auto it = fam.begin(); it != fam.end(); ++it)
        if (it.key() != "axes" && it.key() != "name") throw ConfigError("unknown grid family key '" + it.key() + "'");
      g.families.push_back(family_from(fam["axes"], fam.value("name", "")));
    }
  } else {
    g.families.push_back(family_from(grid, ""));
  }
  if (g.families.empty()) throw ConfigError("grid lists no families");
  for (const auto& f : g.families) {
    std::set<std::string> seen;
    for (const auto& [axis, values] : f.axes)
      if (!seen.insert(axis).second) throw ConfigError("grid axis '" + axis + "' repeated");
  }
  return g;
}

json ablate(const Grid& grid, const AblateOptions& opts) {
  struct Cell {
    std::size_t family;
    json assignment;
    RunConfig cfg;
  };
  std::vector<Cell> cells;
  for (std::size_t f = 0; f < grid.families.size(); ++f) {
    const auto& axes = grid.families[f].axes;
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      json cfg_json = grid.base, assignment = json::object();
      for (std::size_t a = 0; a < axes.size(); ++a) {
        set_path(cfg_json, axes[a].first, axes[a].second[idx[a]]);
        assignment[axes[a].first] = axes[a].second[idx[a]];
      }
      cells.push_back({f, assignment, parse_config(cfg_json)});
      std::size_t a = axes.size();
      while (a > 0 && ++idx[a - 1] == axes[a - 1].second.size()) idx[--a] = 0;
      if (a == 0) break;
    }
  }

  struct Job {
    std::size_t cell;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < cells[c].cfg.seeds.size(); ++s) jobs.push_back({c, s});
  if (opts.shuffle) {
    Rng rng = make_rng(opts.shuffle_seed, {0x73687566u});
    std::shuffle(jobs.begin(), jobs.end(), rng);
  }

  std::map<std::pair<std::size_t, std::size_t>, json> results;
  for (const Job& job : jobs) {
    const RunConfig& cfg = cells[job.cell].cfg;
    const std::uint64_t seed = cfg.seeds[job.seed_index];
    json r;
    try {
      const fs::path dir = run_dir(opts.root / "ablate", cfg, seed);
      const TrainResult tr = train(cfg, seed, dir, {});
      json report = evaluate(cfg, seed, tr.checkpoint);
      write_report(report, dir);
      r = {{"seed", seed}, {"metrics", report["metrics"]}, {"parameter_count", tr.parameter_count}};
    } catch (const std::exception& e) {
      r = {{"seed", seed}, {"error", e.what()}};
    }
    results[{job.cell, job.seed_index}] = r;
  }

  json families = json::array();
  for (std::size_t f = 0; f < grid.families.size(); ++f) {
    json rows = json::array();
    json axes = json::array();
    for (const auto& [axis, values] : grid.families[f].axes) axes.push_back(axis);
    std::vector<std::string> columns;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].family != f) continue;
      const RunConfig& cfg = cells[c].cfg;
      columns = metric_columns(cfg.task);
      json runs = json::array(), failures = json::array(), summary = json::object();
      std::map<std::string, std::vector<double>> values;
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        const json& r = results.at({c, s});
        if (r.contains("error")) {
          failures.push_back(r);
          continue;
        }
        runs.push_back(r);
        for (const auto& col : columns) values[col].push_back(r["metrics"][col].get<double>());
      }
      for (const auto& col : columns) {
        const auto& v = values[col];
        if (v.empty()) continue;
        double sum = 0.0;
        for (double x : v) sum += x;
        summary[col] = {{"mean", sum / static_cast<double>(v.size())},
                        {"min", *std::min_element(v.begin(), v.end())},
                        {"max", *std::max_element(v.begin(), v.end())},
                        {"values", v}};
      }
      std::string label;
      for (auto it = cells[c].assignment.begin(); it != cells[c].assignment.end(); ++it)
        label += (label.empty() ? "" : ", ") + it.key() + "=" + axis_value_label(it.value());
      rows.push_back({{"cell", cells[c].assignment},
                      {"label", label},
                      {"config_hash", config_hash(cfg)},
                      {"runs", runs},
                      {"failures", failures},
                      {"metrics", summary}});
    }
    families.push_back({{"name", grid.families[f].name}, {"axes", axes}, {"columns", columns}, {"rows", rows}});
  }
  const RunConfig base = parse_config(grid.base);
  json definition = json::array();
  for (const auto& fam : grid.families) {
    json axes = json::array();
    for (const auto& [axis, values] : fam.axes) axes.push_back({axis, values});
    definition.push_back({fam.name, axes});
  }
  json out = {{"kind", "ablation"},
              {"config_hash", Fnv1a().str(grid.base.dump()).str(definition.dump()).hex()},
              {"base_config_hash", config_hash(base)},
              {"version", version()},
              {"seeds", to_json(base)["seeds"]},
              {"families", families}};
  return out;
}

std::string format_table(const json& family) {
  std::ostringstream os;
  os << "# " << family["name"].get<std::string>() << " (mean [min, max] over seeds)\n";
  std::vector<std::string> header{"cell"};
  for (const auto& c : family["columns"]) header.push_back(c.get<std::string>());
  header.push_back("runs");
  std::vector<std::vector<std::string>> table{header};
  for (const auto& row : family["rows"]) {
    std::vector<std::string> line{row["label"].get<std::string>()};
    for (const auto& c : family["columns"]) {
      const std::string col = c.get<std::string>();
      if (!row["metrics"].contains(col)) {
        line.push_back("-");
        continue;
      }
      const auto& m = row["metrics"][col];
      line.push_back(fmt(m["mean"].get<double>()) + " [" + fmt(m["min"].get<double>()) + ", " + fmt(m["max"].get<double>()) + "]");
    }
    line.push_back(std::to_string(row["runs"].size()) + "/" + std::to_string(row["runs"].size() + row["failures"].size()));
    table.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t i = 0; i < table[r].size(); ++i) {
      os << (i ? " | " : "") << table[r][i] << std::string(width[i] - table[r][i].size(), ' ');
    }
    os << "\n";
    if (r == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) os << (i ? "-|-" : "") << std::string(width[i], '-');
      os << "\n";
    }
  }
  for (const auto& row : family["rows"])
    for (const auto& f : row["failures"])
      os << "failed: " << row["label"].get<std::string>() << " seed " << f["seed"].dump() << ": " << f["error"].get<std::string>() << "\n";
  return os.str();
}

}  // namespace onlinehoi::harness
