#pragma once

// Experiment configuration: strict JSON documents merged over documented
// defaults, flat key=value overrides, and range checks that name the
// offending key path.

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelcon/augment.hpp"
#include "skelcon/contrast.hpp"
#include "skelcon/downstream.hpp"
#include "skelcon/encoders.hpp"
#include "skelcon/error.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon {

inline constexpr const char* kConfigFormat = "SKELCON-CONFIG1";

struct DataConfig {
  std::string path;  // canonical skeleton file; empty selects the synthetic generator
  SyntheticSpec synthetic;
  SplitOptions split;
};

struct ModelConfig {
  ContrastMode mode = ContrastMode::intra;
  std::vector<Representation> representations{Representation::SEQ};
  Inter3Variant inter3_variant = Inter3Variant::six_term;
  EncoderScale scale = EncoderScale::desk;
  // Per-representation field overrides on top of the scale preset.
  nlohmann::json encoders = nlohmann::json::object();
};

struct TrainerConfig {
  double tau = 0.07;
  std::size_t queue_size = 16384;
  double momentum = 0.999;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  int epochs = 450;
  std::size_t batch_size = 16;
  int checkpoint_every = 0;
  bool resume = false;
};

struct DownstreamConfig {
  std::string checkpoint;  // pretrain output directory; empty = the run's --out
  int crop_length = 64;
  Projector projector = Projector::none;
  std::string export_split = "test";  // train | test | all
  bool combine = false;               // also probe the concatenated features of two branches
  double min_accuracy = 0.0;          // gate for exit code 4
  int preview_count = 2;
};

struct FinetuneConfig {
  FinetuneSchedule schedule;
  double fraction = 0.1;
  std::vector<FinetuneMode> modes{FinetuneMode::semi_supervised, FinetuneMode::supervised_only};
};

struct SweepConfig {
  std::string task = "probe";  // downstream step run after each cell's pretraining
  nlohmann::json grid = nlohmann::json::object();  // key path -> list of values
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  AugmentationSpec augmentation;
  TrainerConfig trainer;
  ProbeSchedule probe;
  FinetuneConfig finetune;
  DownstreamConfig downstream;
  SweepConfig sweep;
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},         {"samples_per_class", s.samples_per_class},
          {"frames", s.frames},                   {"joints", s.joints},
          {"seed", s.seed},                       {"camera_distance", s.camera_distance},
          {"view_range", s.view_range},           {"shared_motion", s.shared_motion},
          {"speed_range", s.speed_range},         {"style", s.style},
          {"translation", s.translation},         {"body_scale", s.body_scale},
          {"posture", s.posture}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json reps = nlohmann::json::array();
  for (auto r : c.model.representations) reps.push_back(to_string(r));
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : c.finetune.modes) modes.push_back(to_string(m));
  return {
      {"seed", c.seed},
      {"data",
       {{"path", c.data.path},
        {"synthetic", to_json(c.data.synthetic)},
        {"split",
         {{"protocol", to_string(c.data.split.protocol)},
          {"test_fraction", c.data.split.test_fraction},
          {"seed", c.data.split.seed},
          {"train_groups", c.data.split.train_groups}}}}},
      {"model",
       {{"mode", to_string(c.model.mode)},
        {"representations", reps},
        {"inter3_variant", to_string(c.model.inter3_variant)},
        {"scale", to_string(c.model.scale)},
        {"encoders", c.model.encoders}}},
      {"augmentation", to_json(c.augmentation)},
      {"trainer",
       {{"tau", c.trainer.tau},
        {"queue_size", c.trainer.queue_size},
        {"momentum", c.trainer.momentum},
        {"lr", c.trainer.lr},
        {"weight_decay", c.trainer.weight_decay},
        {"sgd_momentum", c.trainer.sgd_momentum},
        {"epochs", c.trainer.epochs},
        {"batch_size", c.trainer.batch_size},
        {"checkpoint_every", c.trainer.checkpoint_every},
        {"resume", c.trainer.resume}}},
      {"probe",
       {{"epochs", c.probe.epochs},
        {"lr", c.probe.lr},
        {"momentum", c.probe.momentum},
        {"weight_decay", c.probe.weight_decay},
        {"milestones", c.probe.milestones},
        {"batch_size", c.probe.batch_size},
        {"standardize", c.probe.standardize}}},
      {"finetune",
       {{"epochs", c.finetune.schedule.epochs},
        {"lr", c.finetune.schedule.lr},
        {"milestones", c.finetune.schedule.milestones},
        {"batch_size", c.finetune.schedule.batch_size},
        {"seeds", c.finetune.schedule.seeds},
        {"fraction", c.finetune.fraction},
        {"modes", modes},
        {"standardize", c.finetune.schedule.standardize}}},
      {"downstream",
       {{"checkpoint", c.downstream.checkpoint},
        {"crop_length", c.downstream.crop_length},
        {"projector", c.downstream.projector == Projector::none ? "none" : "pca2d"},
        {"export_split", c.downstream.export_split},
        {"combine", c.downstream.combine},
        {"min_accuracy", c.downstream.min_accuracy},
        {"preview_count", c.downstream.preview_count}}},
      {"sweep", {{"task", c.sweep.task}, {"grid", c.sweep.grid}}},
  };
}

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline const char* kind_name(const nlohmann::json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool same_kind(const nlohmann::json& want, const nlohmann::json& got) {
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) return got.is_array();
  if (want.is_object()) return got.is_object();
  return true;
}

// Subtrees whose keys are free-form and validated while resolving.
inline bool free_form(const std::string& path) { return path == "model.encoders" || path == "sweep.grid"; }

inline void check_array(const std::string& path, const nlohmann::json& want, const nlohmann::json& got) {
  if (want.empty()) {
    for (std::size_t i = 0; i < got.size(); ++i)
      if (!got[i].is_number_integer())
        throw ConfigError(path + "[" + std::to_string(i) + "]", "expected integer");
    return;
  }
  for (std::size_t i = 0; i < got.size(); ++i)
    if (!same_kind(want[0], got[i]))
      throw ConfigError(path + "[" + std::to_string(i) + "]",
                        std::string("expected ") + kind_name(want[0]) + ", got " + kind_name(got[i]));
}

inline void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : user.items()) {
    const auto here = join_path(path, key);
    if (!base.contains(key)) throw ConfigError(here, "unknown key");
    auto& slot = base[key];
    if (free_form(here)) {
      if (!value.is_object()) throw ConfigError(here, "expected an object");
      slot = value;
    } else if (slot.is_object()) {
      merge_strict(slot, value, here);
    } else {
      if (!same_kind(slot, value))
        throw ConfigError(here, std::string("expected ") + kind_name(slot) + ", got " + kind_name(value));
      if (slot.is_array()) check_array(here, slot, value);
      slot = value;
    }
  }
}

template <class F>
auto parse_enum(const std::string& key, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const ArgumentError& e) {
    throw ConfigError(key, e.what());
  }
}

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

inline ExperimentConfig config_from_resolved(const nlohmann::json& j) {
  ExperimentConfig c;
  auto non_negative_int = [](const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  };
  require(non_negative_int(j.at("seed")), "seed", "must be a non-negative integer");
  require(non_negative_int(j.at("data").at("synthetic").at("seed")), "data.synthetic.seed",
          "must be a non-negative integer");
  require(non_negative_int(j.at("data").at("split").at("seed")), "data.split.seed",
          "must be a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();

  const auto& d = j.at("data");
  c.data.path = d.at("path").get<std::string>();
  const auto& s = d.at("synthetic");
  auto& sp = c.data.synthetic;
  sp.num_classes = s.at("num_classes").get<int>();
  sp.samples_per_class = s.at("samples_per_class").get<int>();
  sp.frames = s.at("frames").get<int>();
  sp.joints = s.at("joints").get<int>();
  sp.seed = s.at("seed").get<std::uint64_t>();
  sp.camera_distance = s.at("camera_distance").get<double>();
  sp.view_range = s.at("view_range").get<double>();
  sp.shared_motion = s.at("shared_motion").get<double>();
  sp.speed_range = s.at("speed_range").get<double>();
  sp.style = s.at("style").get<double>();
  sp.translation = s.at("translation").get<double>();
  sp.body_scale = s.at("body_scale").get<double>();
  sp.posture = s.at("posture").get<double>();
  require(sp.num_classes >= 2, "data.synthetic.num_classes", "must be >= 2");
  require(sp.samples_per_class >= 1, "data.synthetic.samples_per_class", "must be >= 1");
  require(sp.frames >= 2, "data.synthetic.frames", "must be >= 2");
  require(sp.joints >= 2, "data.synthetic.joints", "must be >= 2");
  require(sp.shared_motion >= 0 && sp.shared_motion <= 1, "data.synthetic.shared_motion", "must lie in [0, 1]");
  require(sp.speed_range >= 0 && sp.speed_range < 1, "data.synthetic.speed_range", "must lie in [0, 1)");
  require(sp.body_scale >= 0 && sp.body_scale < 1, "data.synthetic.body_scale", "must lie in [0, 1)");
  require(sp.style >= 0 && sp.style < 1, "data.synthetic.style", "must lie in [0, 1)");
  const auto& sj = d.at("split");
  c.data.split.protocol =
      parse_enum("data.split.protocol", sj.at("protocol").get<std::string>(), parse_split_protocol);
  c.data.split.test_fraction = sj.at("test_fraction").get<double>();
  c.data.split.seed = sj.at("seed").get<std::uint64_t>();
  c.data.split.train_groups = sj.at("train_groups").get<std::vector<int>>();
  require(c.data.split.test_fraction > 0 && c.data.split.test_fraction < 1, "data.split.test_fraction",
          "must lie in (0, 1)");

  const auto& m = j.at("model");
  c.model.mode = parse_enum("model.mode", m.at("mode").get<std::string>(), parse_contrast_mode);
  c.model.representations.clear();
  for (const auto& r : m.at("representations"))
    c.model.representations.push_back(
        parse_enum("model.representations", r.get<std::string>(), parse_representation));
  const std::size_t want = c.model.mode == ContrastMode::intra ? 1 : c.model.mode == ContrastMode::inter ? 2 : 3;
  require(c.model.representations.size() == want, "model.representations",
          "mode " + to_string(c.model.mode) + " needs " + std::to_string(want) + " representation(s), got " +
              std::to_string(c.model.representations.size()));
  c.model.inter3_variant =
      parse_enum("model.inter3_variant", m.at("inter3_variant").get<std::string>(), parse_inter3_variant);
  c.model.scale = parse_enum("model.scale", m.at("scale").get<std::string>(), parse_encoder_scale);
  c.model.encoders = m.at("encoders");
  static const std::vector<std::string> enc_fields{"depth", "hidden", "feature_dim", "projection_dim",
                                                   "stem_channels"};
  for (const auto& [rep, fields] : c.model.encoders.items()) {
    const auto base = "model.encoders." + rep;
    parse_enum(base, rep, parse_representation);
    require(fields.is_object(), base, "expected an object");
    for (const auto& [f, v] : fields.items()) {
      require(std::find(enc_fields.begin(), enc_fields.end(), f) != enc_fields.end(), base + "." + f,
              "unknown key");
      require(v.is_number_integer() && v.get<int>() >= 1, base + "." + f, "expected a positive integer");
    }
  }

  const auto& a = j.at("augmentation");
  c.augmentation.spatial =
      parse_enum("augmentation.spatial", a.at("spatial").get<std::string>(), parse_spatial_mode);
  c.augmentation.temporal = a.at("temporal").get<bool>();
  c.augmentation.l_min = a.at("l_min").get<double>();
  c.augmentation.jitter_joints = a.at("jitter_joints").get<int>();
  c.augmentation.output_length = a.at("output_length").get<int>();
  require(c.augmentation.l_min > 0 && c.augmentation.l_min <= 1, "augmentation.l_min", "must lie in (0, 1]");
  require(c.augmentation.jitter_joints >= 1, "augmentation.jitter_joints", "must be >= 1");
  require(c.augmentation.output_length >= 2, "augmentation.output_length", "must be >= 2");

  const auto& t = j.at("trainer");
  c.trainer.tau = t.at("tau").get<double>();
  c.trainer.queue_size = t.at("queue_size").get<std::size_t>();
  c.trainer.momentum = t.at("momentum").get<double>();
  c.trainer.lr = t.at("lr").get<double>();
  c.trainer.weight_decay = t.at("weight_decay").get<double>();
  c.trainer.sgd_momentum = t.at("sgd_momentum").get<double>();
  c.trainer.epochs = t.at("epochs").get<int>();
  c.trainer.batch_size = t.at("batch_size").get<std::size_t>();
  c.trainer.checkpoint_every = t.at("checkpoint_every").get<int>();
  c.trainer.resume = t.at("resume").get<bool>();
  require(c.trainer.tau > 0 && std::isfinite(c.trainer.tau), "trainer.tau", "must be > 0");
  require(c.trainer.queue_size >= 1, "trainer.queue_size", "must be >= 1");
  require(c.trainer.momentum >= 0 && c.trainer.momentum <= 1, "trainer.momentum", "must lie in [0, 1]");
  require(c.trainer.lr > 0, "trainer.lr", "must be > 0");
  require(c.trainer.weight_decay >= 0, "trainer.weight_decay", "must be >= 0");
  require(c.trainer.sgd_momentum >= 0 && c.trainer.sgd_momentum < 1, "trainer.sgd_momentum",
          "must lie in [0, 1)");
  require(c.trainer.epochs >= 0, "trainer.epochs", "must be >= 0");
  require(c.trainer.batch_size >= 1, "trainer.batch_size", "must be >= 1");
  require(c.trainer.batch_size <= c.trainer.queue_size, "trainer.batch_size", "must not exceed trainer.queue_size");
  require(c.trainer.checkpoint_every >= 0, "trainer.checkpoint_every", "must be >= 0");

  const auto& p = j.at("probe");
  c.probe.epochs = p.at("epochs").get<int>();
  c.probe.lr = p.at("lr").get<double>();
  c.probe.momentum = p.at("momentum").get<double>();
  c.probe.weight_decay = p.at("weight_decay").get<double>();
  c.probe.milestones = p.at("milestones").get<std::vector<int>>();
  c.probe.batch_size = p.at("batch_size").get<std::size_t>();
  c.probe.standardize = p.at("standardize").get<bool>();
  c.probe.seed = c.seed;
  require(c.probe.epochs >= 1, "probe.epochs", "must be >= 1");
  require(c.probe.lr > 0, "probe.lr", "must be > 0");
  require(c.probe.batch_size >= 1, "probe.batch_size", "must be >= 1");

  const auto& f = j.at("finetune");
  c.finetune.schedule.epochs = f.at("epochs").get<int>();
  c.finetune.schedule.lr = f.at("lr").get<double>();
  c.finetune.schedule.milestones = f.at("milestones").get<std::vector<int>>();
  c.finetune.schedule.batch_size = f.at("batch_size").get<std::size_t>();
  c.finetune.schedule.seeds = f.at("seeds").get<std::vector<std::uint64_t>>();
  c.finetune.fraction = f.at("fraction").get<double>();
  c.finetune.schedule.standardize = f.at("standardize").get<bool>();
  c.finetune.modes.clear();
  for (const auto& mm : f.at("modes"))
    c.finetune.modes.push_back(parse_enum("finetune.modes", mm.get<std::string>(), parse_finetune_mode));
  require(c.finetune.schedule.epochs >= 1, "finetune.epochs", "must be >= 1");
  require(c.finetune.schedule.lr > 0, "finetune.lr", "must be > 0");
  require(c.finetune.schedule.batch_size >= 1, "finetune.batch_size", "must be >= 1");
  require(!c.finetune.schedule.seeds.empty(), "finetune.seeds", "must not be empty");
  require(c.finetune.fraction > 0 && c.finetune.fraction <= 1, "finetune.fraction", "must lie in (0, 1]");
  require(!c.finetune.modes.empty(), "finetune.modes", "must not be empty");

  const auto& ds = j.at("downstream");
  c.downstream.checkpoint = ds.at("checkpoint").get<std::string>();
  c.downstream.crop_length = ds.at("crop_length").get<int>();
  c.downstream.projector =
      parse_enum("downstream.projector", ds.at("projector").get<std::string>(), parse_projector);
  c.downstream.export_split = ds.at("export_split").get<std::string>();
  c.downstream.combine = ds.at("combine").get<bool>();
  c.downstream.min_accuracy = ds.at("min_accuracy").get<double>();
  c.downstream.preview_count = ds.at("preview_count").get<int>();
  c.finetune.schedule.crop_length = c.downstream.crop_length;
  require(c.downstream.crop_length >= 2, "downstream.crop_length", "must be >= 2");
  const auto& es = c.downstream.export_split;
  require(es == "train" || es == "test" || es == "all", "downstream.export_split", "must be train, test or all");
  require(c.downstream.min_accuracy >= 0 && c.downstream.min_accuracy <= 1, "downstream.min_accuracy",
          "must lie in [0, 1]");
  require(c.downstream.preview_count >= 1, "downstream.preview_count", "must be >= 1");

  const auto& sw = j.at("sweep");
  c.sweep.task = sw.at("task").get<std::string>();
  require(c.sweep.task == "probe" || c.sweep.task == "retrieve" || c.sweep.task == "finetune" ||
              c.sweep.task == "pretrain",
          "sweep.task", "must be pretrain, probe, retrieve or finetune");
  c.sweep.grid = sw.at("grid");
  for (const auto& [key, values] : c.sweep.grid.items())
    require(values.is_array() && !values.empty(), "sweep.grid." + key, "expected a nonempty array of values");
  return c;
}

}  // namespace detail

/// "a.b.c=value"; the value is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(assignment, "override must look like key.path=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::stringstream ss(key);
  std::string part, walked;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError(key, "empty path component");
    walked = detail::join_path(walked, parts[i]);
    if (!node->is_object()) throw ConfigError(walked, "cannot descend into a non-object");
    if (i + 1 == parts.size()) {
      (*node)[parts[i]] = value;
    } else {
      if (!node->contains(parts[i])) (*node)[parts[i]] = nlohmann::json::object();
      node = &(*node)[parts[i]];
    }
  }
}

inline nlohmann::json default_config_json() { return to_json(ExperimentConfig{}); }

/// Merges `user` over the defaults, rejecting unknown keys and kind mismatches.
inline ExperimentConfig resolve_config(const nlohmann::json& user) {
  auto doc = default_config_json();
  detail::merge_strict(doc, user, "");
  return detail::config_from_resolved(doc);
}

inline nlohmann::json read_config_document(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("<file>", "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  const auto text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", path + ": " + e.what());
  }
}

inline ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  auto doc = read_config_document(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return resolve_config(doc);
}

/// Encoder configs for every participating representation: the scale preset
/// for the dataset's joint count, then the configured field overrides. A SEQ
/// override of `hidden` alone keeps feature_dim = 2 * hidden.
inline std::map<Representation, EncoderConfig> resolve_encoders(const ExperimentConfig& c, int joints) {
  std::map<Representation, EncoderConfig> out;
  for (auto rep : c.model.representations) {
    auto cfg = c.model.scale == EncoderScale::desk ? EncoderConfig::desk(rep, joints) : EncoderConfig::paper(rep, joints);
    const auto key = to_string(rep);
    if (c.model.encoders.contains(key)) {
      const auto& o = c.model.encoders.at(key);
      if (o.contains("depth")) cfg.depth = o.at("depth").get<int>();
      if (o.contains("hidden")) cfg.hidden = o.at("hidden").get<int>();
      if (o.contains("feature_dim")) cfg.feature_dim = o.at("feature_dim").get<int>();
      else if (rep == Representation::SEQ) cfg.feature_dim = 2 * cfg.hidden;
      if (o.contains("projection_dim")) cfg.projection_dim = o.at("projection_dim").get<int>();
      if (o.contains("stem_channels")) cfg.stem_channels = o.at("stem_channels").get<int>();
    }
    try {
      cfg.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError("model.encoders." + key, e.what());
    }
    out[rep] = cfg;
  }
  return out;
}

inline TrainerOptions trainer_options(const ExperimentConfig& c) {
  TrainerOptions o;
  o.mode = c.model.mode;
  o.representations = c.model.representations;
  o.inter3_variant = c.model.inter3_variant;
  o.tau = c.trainer.tau;
  o.queue_size = c.trainer.queue_size;
  o.momentum = c.trainer.momentum;
  o.lr = c.trainer.lr;
  o.weight_decay = c.trainer.weight_decay;
  o.sgd_momentum = c.trainer.sgd_momentum;
  o.augmentation = c.augmentation;
  o.seed = c.seed;
  return o;
}

inline PretrainSchedule pretrain_schedule(const ExperimentConfig& c, std::string output_dir) {
  PretrainSchedule s;
  s.epochs = c.trainer.epochs;
  s.batch_size = c.trainer.batch_size;
  s.checkpoint_every = c.trainer.checkpoint_every;
  s.output_dir = std::move(output_dir);
  s.resume = c.trainer.resume;
  return s;
}

}  // namespace skelcon
