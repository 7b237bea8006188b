// SPDX-License-Identifier: Apache-2.0
//
// vsd: synthetic-data generation, self-distillation pretraining, linear
// probing, and artifact export behind one binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Every command is deterministic under a fixed seed with --threads 1.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "vsd/config.hpp"
#include "vsd/graph.hpp"
#include "vsd/io.hpp"
#include "vsd/model.hpp"
#include "vsd/parallel.hpp"
#include "vsd/probe.hpp"
#include "vsd/sampling.hpp"
#include "vsd/synthdata.hpp"
#include "vsd/tensor.hpp"
#include "vsd/trainer.hpp"

namespace vsd::cli {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void usage_error(const std::string& msg) { throw std::invalid_argument(msg); }

struct SynthArgs {
  std::string out;
  std::size_t classes = 6;
  std::size_t per_class = 100;
  std::size_t frames = 32;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

struct PretrainArgs {
  std::string config, data, out, resume;
  bool gradcheck = false;
};

struct ProbeArgs {
  std::string ckpt, data, head_out;
  bool multi_view = false;
};

struct EvalArgs {
  std::string ckpt, data, head, report;
  bool multi_view = false;
};

struct AttnArgs {
  std::string ckpt, video, out;
  std::int64_t layer = -1;  // -1 selects the final block
};

struct EmbedArgs {
  std::string ckpt, data, out;
  bool multi_view = false;
};

RunConfig load_or_default_config(const std::string& path) {
  if (path.empty()) {
    RunConfig rc;
    rc.validate();
    return rc;
  }
  return load_run_config(path);
}

struct LoadedRun {
  RunConfig rc;
  DistillState state;
};

LoadedRun load_run(const std::string& ckpt_path) {
  CheckpointData data = load_checkpoint(ckpt_path);
  RunConfig rc = parse_run_config(data.config_json);
  return LoadedRun{std::move(rc), unpack_state(data)};
}

const ModelParams<float>& pick_weights(const LoadedRun& run) {
  return run.rc.probe.use_student ? run.state.student : run.state.teacher;
}

LinearHead load_head(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  const auto w = data.tensors.find("head.weight");
  const auto b = data.tensors.find("head.bias");
  if (w == data.tensors.end() || b == data.tensors.end()) {
    throw std::runtime_error(path + ": not a linear-head container (head.weight/head.bias missing)");
  }
  return LinearHead{w->second, b->second};
}

std::vector<ManifestEntry> split_of(const std::vector<ManifestEntry>& entries,
                                    const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  if (out.empty()) throw std::runtime_error("manifest has no '" + split + "' entries");
  return out;
}

int cmd_synth(const SynthArgs& a) {
  const std::vector<MotionClass> all = default_motion_classes();
  if (a.classes < 2 || a.classes > all.size()) {
    usage_error("synth: --classes must be in [2, " + std::to_string(all.size()) + "]");
  }
  SceneConfig cfg;
  cfg.classes.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(a.classes));
  cfg.per_class = a.per_class;
  cfg.frames = a.frames;
  cfg.canvas_h = cfg.canvas_w = a.size;
  cfg.seed = a.seed;
  cfg.validate();
  const fs::path manifest = generate_dataset(cfg, a.out);
  std::cout << manifest.string() << "\n";
  return 0;
}

int run_gradcheck(const RunConfig& rc) {
  constexpr double kTolerance = 1e-4;
  const GradCheckReport rep = gradcheck_step(rc.model, rc.distill, rc.train.seed);
  for (const auto& [name, err] : rep.per_parameter) {
    std::cout << "  " << name << ": " << err << "\n";
  }
  std::cout << "gradcheck: entries=" << rep.entries_checked << " epsilon=" << rep.epsilon
            << " max_rel_err=" << rep.max_rel_err << " worst=" << rep.worst.param << "["
            << rep.worst.index << "] analytic=" << rep.worst.analytic
            << " numeric=" << rep.worst.numeric << "\n";
  const bool ok = rep.passed(kTolerance);
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << kTolerance << ")\n";
  return ok ? 0 : 1;
}

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig rc = load_or_default_config(a.config);
  if (!a.data.empty()) rc.data.manifest = a.data;
  if (!a.out.empty()) rc.data.out_dir = a.out;

  if (a.gradcheck) return run_gradcheck(rc);

  if (rc.data.manifest.empty()) {
    usage_error("pretrain: --data (or data.manifest in the config) is required");
  }
  if (rc.data.out_dir.empty()) {
    usage_error("pretrain: --out (or data.out_dir in the config) is required");
  }

  const fs::path manifest_path = rc.data.manifest;
  const std::vector<ManifestEntry> train_set = split_of(load_manifest(manifest_path), "train");

  PretrainOptions opts;
  opts.out_dir = rc.data.out_dir;
  opts.config_json = serialize_run_config(rc);
  if (!a.resume.empty()) opts.resume = a.resume;

  const PretrainResult res =
      pretrain(train_set, manifest_path.parent_path(), rc.model, rc.view, rc.distill, rc.train, opts);
  std::cout << "{\"checkpoint\": \"" << res.checkpoint_path.string() << "\", \"steps\": " << res.steps
            << "}\n";
  return 0;
}

int cmd_probe(const ProbeArgs& a) {
  LoadedRun run = load_run(a.ckpt);
  if (a.multi_view) run.rc.probe.multi_view = true;

  const fs::path manifest_path = a.data;
  const fs::path dataset_dir = manifest_path.parent_path();
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  const std::size_t classes = manifest_class_count(entries);

  const FeatureExtractor extractor(pick_weights(run), run.rc.model, run.rc.view);
  const ExtractedFeatures train_features =
      extract_dataset(extractor, split_of(entries, "train"), dataset_dir, ViewMode::single);
  const LinearHead head =
      train_linear_probe(train_features.first_rows(), train_features.labels, classes, run.rc.probe);

  CheckpointData head_data;
  head_data.config_json = serialize_run_config(run.rc);
  head_data.tensors.emplace("head.weight", head.weight);
  head_data.tensors.emplace("head.bias", head.bias);
  save_checkpoint(a.head_out, head_data);

  const ViewMode mode = run.rc.probe.multi_view ? ViewMode::multi : ViewMode::single;
  const ExtractedFeatures test_features =
      extract_dataset(extractor, split_of(entries, "test"), dataset_dir, mode);
  const EvalReport report = evaluate(head, test_features.rows, test_features.labels, classes);
  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  LoadedRun run = load_run(a.ckpt);
  if (a.multi_view) run.rc.probe.multi_view = true;

  const fs::path manifest_path = a.data;
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  const std::size_t classes = manifest_class_count(entries);
  const LinearHead head = load_head(a.head);
  if (head.classes() != classes) {
    throw std::runtime_error("head was trained for " + std::to_string(head.classes()) +
                             " classes; manifest has " + std::to_string(classes));
  }

  const FeatureExtractor extractor(pick_weights(run), run.rc.model, run.rc.view);
  const ViewMode mode = run.rc.probe.multi_view ? ViewMode::multi : ViewMode::single;
  const ExtractedFeatures test_features =
      extract_dataset(extractor, split_of(entries, "test"), manifest_path.parent_path(), mode);
  const EvalReport report = evaluate(head, test_features.rows, test_features.labels, classes);
  const std::string json = report.to_json();
  std::cout << json << "\n";
  if (!a.report.empty()) write_text_file(a.report, json + "\n");
  return 0;
}

int cmd_attn(const AttnArgs& a) {
  const LoadedRun run = load_run(a.ckpt);
  const std::int64_t depth = static_cast<std::int64_t>(run.rc.model.depth);
  const std::int64_t layer = a.layer < 0 ? depth - 1 : a.layer;
  if (layer < 0 || layer >= depth) {
    usage_error("attn: --layer must be in [0, " + std::to_string(depth) + ")");
  }

  const RawVideo video = make_raw_video(read_spvd(a.video), fs::path(a.video).stem().string());
  const Tensor<float> maps = attention_maps(pick_weights(run), run.rc.model, video.frames,
                                            static_cast<std::size_t>(layer));

  // [K, heads, H/P, W/P] -> head-averaged [K, H/P, W/P].
  const std::size_t frames = maps.extent(0);
  const std::size_t heads = maps.extent(1);
  const std::size_t plane = maps.extent(2) * maps.extent(3);
  Tensor<float> out(Shape{frames, maps.extent(2), maps.extent(3)});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t h = 0; h < heads; ++h) {
      const float* src = maps.data() + (f * heads + h) * plane;
      float* dst = out.data() + f * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  for (float& v : out.vec()) v /= static_cast<float>(heads);

  write_spvd(a.out, out);
  std::cout << a.out << "\n";
  return 0;
}

int cmd_embed(const EmbedArgs& a) {
  LoadedRun run = load_run(a.ckpt);
  if (a.multi_view) run.rc.probe.multi_view = true;

  const fs::path manifest_path = a.data;
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  const FeatureExtractor extractor(pick_weights(run), run.rc.model, run.rc.view);
  const ViewMode mode = run.rc.probe.multi_view ? ViewMode::multi : ViewMode::single;
  export_embeddings(extractor, entries, manifest_path.parent_path(), a.out, mode);
  std::cout << a.out << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"self-supervised spatiotemporal distillation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads; 1 keeps every command fully deterministic")
      ->capture_default_str();

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic multi-agent video dataset");
  synth->fallthrough();
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--classes", synth_args.classes, "number of motion classes")
      ->capture_default_str();
  synth->add_option("--per-class", synth_args.per_class, "videos per class")->capture_default_str();
  synth->add_option("--frames", synth_args.frames, "frames per video")->capture_default_str();
  synth->add_option("--size", synth_args.size, "canvas height and width")->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "dataset seed")->capture_default_str();

  PretrainArgs pretrain_args;
  CLI::App* pre = app.add_subcommand("pretrain", "run teacher-student distillation pretraining");
  pre->fallthrough();
  pre->add_option("--config", pretrain_args.config, "run-config JSON; defaults apply when omitted");
  pre->add_option("--data", pretrain_args.data, "dataset manifest path");
  pre->add_option("--out", pretrain_args.out, "output directory for checkpoints and metrics");
  pre->add_option("--resume", pretrain_args.resume, "checkpoint to resume from");
  pre->add_flag("--gradcheck", pretrain_args.gradcheck,
                "run the f64 finite-difference oracle step and exit");

  ProbeArgs probe_args;
  CLI::App* probe = app.add_subcommand("probe", "train a linear probe on frozen features");
  probe->fallthrough();
  probe->add_option("--ckpt", probe_args.ckpt, "pretraining checkpoint")->required();
  probe->add_option("--data", probe_args.data, "dataset manifest path")->required();
  probe->add_option("--head-out", probe_args.head_out, "output path for the trained head")
      ->required();
  probe->add_flag("--multi-view", probe_args.multi_view, "fuse multi-resolution views at test time");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved linear head on the test split");
  eval->fallthrough();
  eval->add_option("--ckpt", eval_args.ckpt, "pretraining checkpoint")->required();
  eval->add_option("--data", eval_args.data, "dataset manifest path")->required();
  eval->add_option("--head", eval_args.head, "trained head container")->required();
  eval->add_option("--report", eval_args.report, "also write the report JSON here");
  eval->add_flag("--multi-view", eval_args.multi_view, "fuse multi-resolution views at test time");

  AttnArgs attn_args;
  CLI::App* attn = app.add_subcommand("attn", "export per-frame class-token attention maps");
  attn->fallthrough();
  attn->add_option("--ckpt", attn_args.ckpt, "pretraining checkpoint")->required();
  attn->add_option("--video", attn_args.video, "video tensor file")->required();
  attn->add_option("--layer", attn_args.layer, "block index; -1 selects the final block")
      ->capture_default_str();
  attn->add_option("--out", attn_args.out, "output tensor path")->required();

  EmbedArgs embed_args;
  CLI::App* embed = app.add_subcommand("embed", "export one embedding per manifest video");
  embed->fallthrough();
  embed->add_option("--ckpt", embed_args.ckpt, "pretraining checkpoint")->required();
  embed->add_option("--data", embed_args.data, "dataset manifest path")->required();
  embed->add_option("--out", embed_args.out, "output embeddings path")->required();
  embed->add_flag("--multi-view", embed_args.multi_view, "mean-pool multi-resolution views");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help and version are successes; bad usage is not
  }

  set_num_threads(threads);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (pre->parsed()) return cmd_pretrain(pretrain_args);
    if (probe->parsed()) return cmd_probe(probe_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (attn->parsed()) return cmd_attn(attn_args);
    if (embed->parsed()) return cmd_embed(embed_args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace vsd::cli

int main(int argc, char** argv) { return vsd::cli::run(argc, argv); }
