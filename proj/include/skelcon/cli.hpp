#pragma once

// Experiment front-end: subcommand dispatch, run manifests and metrics
// persistence.
//
//   skelcon <pretrain|probe|retrieve|finetune|sweep|augment-preview|export>
//           [--config PATH] [--set key=value ...] --out DIR [--seed N]
//
// Exit codes: 0 success, 2 config error, 3 runtime failure, 4 accuracy below
// downstream.min_accuracy.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skelcon/augment.hpp"
#include "skelcon/checkpoint.hpp"
#include "skelcon/config.hpp"
#include "skelcon/contrast.hpp"
#include "skelcon/downstream.hpp"
#include "skelcon/skeleton.hpp"

namespace skelcon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitThreshold = 4;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"pretrain", "probe",           "retrieve", "finetune",
                                              "sweep",    "augment-preview", "export"};
  return names;
}

/// Everything a subcommand needs: the parsed config, the resolved document it
/// came from, and the artifact directory.
struct RunContext {
  ExperimentConfig config;
  nlohmann::json resolved;
  std::string out_dir;
  std::ostream* log = &std::cout;
};

struct Workspace {
  Dataset ds;
  DataSplit split;
  std::shared_ptr<const GraphTopology> graph;
};

namespace detail {

namespace fs = std::filesystem;

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string content_id(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

inline nlohmann::json summary(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"per_seed", values}};
}

inline std::string protocol_of(const ExperimentConfig& c) {
  std::string p = to_string(c.data.split.protocol);
  return p + "/" + (c.data.path.empty() ? "synthetic" : fs::path(c.data.path).filename().string());
}

inline std::string checkpoint_dir(const RunContext& ctx) {
  const auto root = ctx.config.downstream.checkpoint.empty() ? ctx.out_dir : ctx.config.downstream.checkpoint;
  if (const auto latest = latest_checkpoint(root); !latest.empty()) return latest;
  if (fs::exists(fs::path(root) / "trainer.json")) return root;
  throw PreconditionError("no pretrained checkpoint under '" + root +
                          "'; run `skelcon pretrain --out " + root +
                          "` first or point downstream.checkpoint at a pretrain output directory");
}

inline std::vector<Representation> checkpoint_representations(const std::string& dir) {
  std::vector<Representation> reps;
  const auto manifest = read_trainer_manifest(dir);
  for (const auto& b : manifest.at("branches")) {
    auto r = parse_representation(b.at("representation").get<std::string>());
    if (std::find(reps.begin(), reps.end(), r) == reps.end()) reps.push_back(r);
  }
  return reps;
}

inline nlohmann::json gate_record(const RunContext& ctx, double mean) {
  return {{"min_accuracy", ctx.config.downstream.min_accuracy},
          {"passed", mean >= ctx.config.downstream.min_accuracy}};
}

}  // namespace detail

inline Workspace load_workspace(const ExperimentConfig& c) {
  Workspace w;
  w.ds = c.data.path.empty() ? generate_synthetic(c.data.synthetic) : load_dataset(c.data.path);
  if (w.ds.size() == 0) throw ArgumentError("dataset is empty");
  w.split = make_split(w.ds, c.data.split);
  if (w.split.train.empty() || w.split.test.empty())
    throw ArgumentError("split " + to_string(c.data.split.protocol) + " leaves an empty train or test side");
  w.graph = GraphTopology::build(w.ds.topology);
  return w;
}

/// run_manifest.json plus the resolved config snapshot. The run id hashes the
/// subcommand and resolved config, so identical replays share it.
inline void write_run_manifest(const RunContext& ctx, const std::string& subcommand) {
  namespace fs = std::filesystem;
  fs::create_directories(ctx.out_dir);
  const auto resolved_text = ctx.resolved.dump();
  nlohmann::json manifest = {
      {"run_id", detail::content_id(subcommand + "\n" + resolved_text)},
      {"subcommand", subcommand},
      {"seed", ctx.config.seed},
      {"formats",
       {{"config", kConfigFormat},
        {"checkpoint", kCheckpointFormat},
        {"trainer", kTrainerFormat},
        {"skeleton", kSkeletonFormat}}},
      {"config", ctx.resolved},
  };
  detail::write_json(fs::path(ctx.out_dir) / "run_manifest.json", manifest);
  detail::write_json(fs::path(ctx.out_dir) / "config.resolved.json", ctx.resolved);
}

inline nlohmann::json run_pretrain(const RunContext& ctx) {
  namespace fs = std::filesystem;
  const auto& c = ctx.config;
  auto w = load_workspace(c);
  auto trainer = Trainer<float>::create(trainer_options(c), resolve_encoders(c, w.ds.joints), w.graph);
  const auto schedule = pretrain_schedule(c, ctx.out_dir);
  int last_epoch = -1;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  auto flush = [&] {
    if (epoch_steps > 0)
      *ctx.log << "epoch " << (last_epoch + 1) << "/" << c.trainer.epochs << " mean loss " << std::fixed
               << std::setprecision(4) << epoch_sum / static_cast<double>(epoch_steps) << std::defaultfloat << '\n';
  };
  auto result = pretrain(trainer, w.ds, w.split.train, schedule, [&](const LossReport& r) {
    if (r.epoch != last_epoch) {
      flush();
      last_epoch = r.epoch;
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
    epoch_sum += r.total;
    ++epoch_steps;
  });
  flush();
  if (latest_checkpoint(ctx.out_dir).empty()) {
    // Zero epochs still leave a loadable checkpoint of the initial encoders.
    const auto dir = fs::path(ctx.out_dir) / "checkpoints" / "epoch_0000";
    save_trainer<float>(dir.string(), trainer);
    std::ofstream(fs::path(ctx.out_dir) / "checkpoints" / "LATEST", std::ios::trunc) << "epoch_0000\n";
  }
  nlohmann::json reps = nlohmann::json::array();
  for (auto r : c.model.representations) reps.push_back(to_string(r));
  nlohmann::json rec = {{"task", "pretrain"},
                        {"protocol", detail::protocol_of(c)},
                        {"mode", to_string(c.model.mode)},
                        {"representations", reps},
                        {"seeds", {c.seed}},
                        {"steps", trainer.step},
                        {"epochs", trainer.epoch},
                        {"final_loss", result.log.empty() ? nlohmann::json(nullptr) : nlohmann::json(result.log.back().total)}};
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / "pretrain.json", rec);
  return rec;
}

/// Linear probe (`knn` false) or k=1 retrieval over every encoder in the
/// checkpoint, plus the concatenated pair when downstream.combine is set.
inline nlohmann::json run_frozen_eval(const RunContext& ctx, bool knn) {
  namespace fs = std::filesystem;
  const auto& c = ctx.config;
  const auto dir = detail::checkpoint_dir(ctx);
  auto w = load_workspace(c);
  if (!w.ds.labeled()) throw SchemaError("downstream evaluation needs a labeled dataset");
  const int crop = c.downstream.crop_length;
  const auto reps = detail::checkpoint_representations(dir);
  nlohmann::json results = nlohmann::json::array();
  std::vector<FeatureSet> train_feats, test_feats;
  for (auto rep : reps) {
    const auto enc = load_query_encoder<float>(dir, rep);
    train_feats.push_back(extract_features<float>(enc, w.ds, w.split.train, crop, w.graph));
    test_feats.push_back(extract_features<float>(enc, w.ds, w.split.test, crop, w.graph));
    const auto m = knn ? knn_retrieve(RetrievalIndex(train_feats.back()), test_feats.back(), w.ds.num_classes).metrics
                       : linear_probe(train_feats.back(), test_feats.back(), c.probe, w.ds.num_classes);
    results.push_back({{"representation", to_string(rep)}, {"metrics", to_json(m)}});
    *ctx.log << (knn ? "retrieve " : "probe ") << to_string(rep) << " accuracy " << m.accuracy << '\n';
  }
  if (c.downstream.combine && reps.size() >= 2) {
    const auto tr = concat_features(train_feats[0], train_feats[1]);
    const auto te = concat_features(test_feats[0], test_feats[1]);
    auto m = knn ? knn_retrieve(RetrievalIndex(tr), te, w.ds.num_classes).metrics
                 : linear_probe(tr, te, c.probe, w.ds.num_classes);
    m.protocol = knn ? "combined-knn" : "combined-probe";
    results.push_back({{"representation", to_string(reps[0]) + "+" + to_string(reps[1])}, {"metrics", to_json(m)}});
    *ctx.log << (knn ? "retrieve " : "probe ") << "combined accuracy " << m.accuracy << '\n';
  }
  const double acc = results[0].at("metrics").at("accuracy").get<double>();
  const std::string task = knn ? "retrieve" : "probe";
  nlohmann::json rec = {{"task", task}, {"protocol", detail::protocol_of(c)}, {"seeds", {c.seed}}};
  rec.update(detail::summary({acc}));
  rec["results"] = results;
  rec["gate"] = detail::gate_record(ctx, acc);
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / (task + ".json"), rec);
  return rec;
}

inline nlohmann::json run_finetune(const RunContext& ctx) {
  namespace fs = std::filesystem;
  const auto& c = ctx.config;
  auto w = load_workspace(c);
  if (!w.ds.labeled()) throw SchemaError("finetuning needs a labeled dataset");
  const bool needs_checkpoint = std::any_of(c.finetune.modes.begin(), c.finetune.modes.end(),
                                            [](auto m) { return m != FinetuneMode::supervised_only; });
  std::optional<EncoderState<float>> pretrained;
  EncoderConfig config = resolve_encoders(c, w.ds.joints).begin()->second;
  if (needs_checkpoint) {
    const auto dir = detail::checkpoint_dir(ctx);
    pretrained = load_query_encoder<float>(dir, detail::checkpoint_representations(dir).front());
    config = pretrained->config;
  }
  nlohmann::json reports = nlohmann::json::array();
  std::vector<std::string> warnings;
  for (auto mode : c.finetune.modes) {
    const auto r = finetune<float>(mode == FinetuneMode::supervised_only ? std::nullopt : pretrained, config, w.ds,
                                   w.split.train, w.ds, w.split.test, c.finetune.fraction, mode,
                                   c.finetune.schedule, w.graph);
    std::vector<double> accs;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& m : r.per_seed) {
      accs.push_back(m.accuracy);
      per.push_back(to_json(m));
    }
    nlohmann::json entry = {{"mode", to_string(mode)}, {"fraction", r.fraction}};
    entry.update(detail::summary(accs));
    entry["metrics"] = per;
    entry["warnings"] = r.warnings;
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    reports.push_back(entry);
    *ctx.log << "finetune " << to_string(mode) << " mean " << r.mean << " std " << r.std << '\n';
  }
  for (const auto& msg : warnings) *ctx.log << "warning: " << msg << '\n';
  nlohmann::json rec = {{"task", "finetune"},
                        {"protocol", detail::protocol_of(c)},
                        {"seeds", c.finetune.schedule.seeds},
                        {"fraction", c.finetune.fraction},
                        {"mean", reports[0].at("mean")},
                        {"std", reports[0].at("std")},
                        {"per_seed", reports[0].at("per_seed")},
                        {"reports", reports}};
  rec["gate"] = detail::gate_record(ctx, rec.at("mean").get<double>());
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / "finetune.json", rec);
  return rec;
}

/// Writes the original, query and key views of the first samples as canonical
/// skeleton files, using the same per-sample streams as the first training step.
inline nlohmann::json run_augment_preview(const RunContext& ctx) {
  namespace fs = std::filesystem;
  const auto& c = ctx.config;
  auto w = load_workspace(c);
  const auto dir = fs::path(ctx.out_dir) / "augment_preview";
  fs::create_directories(dir);
  nlohmann::json items = nlohmann::json::array();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(c.downstream.preview_count), w.ds.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = w.ds.samples[i];
    Rng rng(derive_seed({c.seed, 0xA06, 0, i}));
    const auto pair = make_query_key_pair(s.sequence, c.augmentation, rng);
    auto dump = [&](const SkeletonSequence& seq, const std::string& part) {
      Dataset one;
      one.joints = w.ds.joints;
      one.num_classes = w.ds.num_classes;
      one.topology = w.ds.topology;
      LabeledSample copy = s;
      copy.sequence = seq;
      one.samples.push_back(std::move(copy));
      const auto name = "sample" + std::to_string(i) + "_" + part + ".skl";
      save_dataset((dir / name).string(), one);
      return name;
    };
    items.push_back({{"id", s.sequence.sample_id},
                     {"original", dump(s.sequence, "original")},
                     {"query", dump(pair.query.sequence, "query")},
                     {"query_spatial", to_string(pair.query.applied)},
                     {"key", dump(pair.key.sequence, "key")},
                     {"key_spatial", to_string(pair.key.applied)}});
  }
  nlohmann::json rec = {{"task", "augment-preview"},
                        {"augmentation", to_json(c.augmentation)},
                        {"seeds", {c.seed}},
                        {"samples", items}};
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / "augment-preview.json", rec);
  return rec;
}

inline nlohmann::json run_export(const RunContext& ctx) {
  namespace fs = std::filesystem;
  const auto& c = ctx.config;
  const auto dir = detail::checkpoint_dir(ctx);
  auto w = load_workspace(c);
  std::vector<std::size_t> idx;
  if (c.downstream.export_split == "train") idx = w.split.train;
  else if (c.downstream.export_split == "test") idx = w.split.test;
  else idx = all_indices(w.ds);
  nlohmann::json files = nlohmann::json::array();
  for (auto rep : detail::checkpoint_representations(dir)) {
    const auto enc = load_query_encoder<float>(dir, rep);
    const auto f = extract_features<float>(enc, w.ds, idx, c.downstream.crop_length, w.graph);
    const auto name = "embeddings_" + to_string(rep) + ".jsonl";
    fs::create_directories(fs::path(ctx.out_dir) / "embeddings");
    export_embeddings((fs::path(ctx.out_dir) / "embeddings" / name).string(), f, c.downstream.projector);
    files.push_back({{"representation", to_string(rep)}, {"file", "embeddings/" + name}, {"records", f.rows()},
                     {"dim", f.dim}});
    *ctx.log << "exported " << f.rows() << " " << to_string(rep) << " embeddings\n";
  }
  nlohmann::json rec = {{"task", "export"},
                        {"protocol", detail::protocol_of(c)},
                        {"split", c.downstream.export_split},
                        {"projector", c.downstream.projector == Projector::none ? "none" : "pca2d"},
                        {"files", files}};
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / "export.json", rec);
  return rec;
}

/// Pretraining followed by the configured downstream task in one directory.
inline nlohmann::json run_cell(const RunContext& ctx) {
  write_run_manifest(ctx, "sweep-cell");
  auto pre = run_pretrain(ctx);
  const auto& task = ctx.config.sweep.task;
  RunContext down = ctx;
  down.config.downstream.checkpoint = ctx.out_dir;
  if (task == "pretrain") return pre;
  if (task == "probe") return run_frozen_eval(down, false);
  if (task == "retrieve") return run_frozen_eval(down, true);
  return run_finetune(down);
}

struct SweepOutcome {
  std::size_t cells = 0;
  std::size_t failed = 0;
  std::size_t below_threshold = 0;
};

/// Cartesian product of sweep.grid (keys in sorted order). Each cell runs in
/// cells/cell_NNN and appends one record to sweep_metrics.jsonl; a failing
/// cell is recorded and does not stop the others.
inline SweepOutcome run_sweep(const RunContext& ctx, const nlohmann::json& document) {
  namespace fs = std::filesystem;
  const auto& grid = ctx.config.sweep.grid;
  if (grid.empty()) throw ConfigError("sweep.grid", "a sweep needs at least one key with values");
  std::vector<std::pair<std::string, nlohmann::json>> axes;
  for (const auto& [key, values] : grid.items()) axes.emplace_back(key, values);
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.second.size();
  const auto path = fs::path(ctx.out_dir) / "sweep_metrics.jsonl";
  fs::create_directories(ctx.out_dir);
  std::ofstream records(path, std::ios::trunc);
  if (!records) throw IoError("cannot write '" + path.string() + "'");
  SweepOutcome outcome;
  for (std::size_t cell = 0; cell < total; ++cell) {
    nlohmann::json assignments = nlohmann::json::object();
    auto doc = document;
    doc.erase("sweep");
    std::size_t rest = cell;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      const auto& values = it->second;
      assignments[it->first] = values[rest % values.size()];
      rest /= values.size();
    }
    std::ostringstream name;
    name << "cell_" << std::setw(3) << std::setfill('0') << cell;
    nlohmann::json rec = {{"cell", cell}, {"name", name.str()}, {"assignments", assignments}};
    try {
      for (const auto& [key, value] : assignments.items()) apply_override(doc, key + "=" + value.dump());
      RunContext cctx;
      cctx.config = resolve_config(doc);
      cctx.config.sweep.task = ctx.config.sweep.task;
      cctx.resolved = to_json(cctx.config);
      cctx.out_dir = (fs::path(ctx.out_dir) / "cells" / name.str()).string();
      cctx.log = ctx.log;
      *ctx.log << "cell " << name.str() << " " << assignments.dump() << '\n';
      const auto m = run_cell(cctx);
      rec["status"] = "ok";
      rec["metrics"] = m;
      if (m.contains("gate") && !m.at("gate").at("passed").get<bool>()) ++outcome.below_threshold;
    } catch (const std::exception& e) {
      rec["status"] = "failed";
      rec["error"] = e.what();
      ++outcome.failed;
      *ctx.log << "cell " << name.str() << " failed: " << e.what() << '\n';
    }
    records << rec.dump() << '\n';
    records.flush();
    ++outcome.cells;
  }
  nlohmann::json summary_rec = {{"task", "sweep"},
                                {"cells", outcome.cells},
                                {"failed", outcome.failed},
                                {"below_threshold", outcome.below_threshold},
                                {"grid", grid},
                                {"cell_task", ctx.config.sweep.task}};
  detail::write_json(fs::path(ctx.out_dir) / "metrics" / "sweep.json", summary_rec);
  return outcome;
}

/// Executes one subcommand on an already-resolved document. Returns the exit
/// status; errors propagate to `run`.
inline int execute(const std::string& subcommand, const nlohmann::json& document, const std::string& out_dir,
                   std::ostream& log) {
  RunContext ctx;
  ctx.config = resolve_config(document);
  ctx.resolved = to_json(ctx.config);
  ctx.out_dir = out_dir;
  ctx.log = &log;
  write_run_manifest(ctx, subcommand);
  auto gated = [](const nlohmann::json& rec) {
    return rec.contains("gate") && !rec.at("gate").at("passed").get<bool>() ? kExitThreshold : kExitOk;
  };
  if (subcommand == "pretrain") return run_pretrain(ctx), kExitOk;
  if (subcommand == "probe") return gated(run_frozen_eval(ctx, false));
  if (subcommand == "retrieve") return gated(run_frozen_eval(ctx, true));
  if (subcommand == "finetune") return gated(run_finetune(ctx));
  if (subcommand == "augment-preview") return run_augment_preview(ctx), kExitOk;
  if (subcommand == "export") return run_export(ctx), kExitOk;
  if (subcommand == "sweep") {
    const auto o = run_sweep(ctx, document);
    log << "sweep: " << o.cells << " cells, " << o.failed << " failed\n";
    if (o.failed > 0) return kExitRuntime;
    return o.below_threshold > 0 ? kExitThreshold : kExitOk;
  }
  throw ArgumentError("unknown subcommand '" + subcommand + "'");
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Contrastive self-supervised skeleton representation learning"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  for (const auto& name : subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--set", overrides, "key.path=value override, applied after the file")->take_all();
    sub->add_option("--out", out_dir, "artifact directory")->required();
    sub->add_option("--seed", seed, "overrides the top-level seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const auto subcommand = app.get_subcommands().front()->get_name();
  try {
    auto doc = config_path.empty() ? nlohmann::json::object() : read_config_document(config_path);
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    resolve_config(doc);  // surface config errors before any work
    return execute(subcommand, doc, out_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace skelcon::cli
