// SPDX-License-Identifier: Apache-2.0
#include "vsd/config.hpp"

#include <stdexcept>

#include <json.hpp>

#include "vsd/io.hpp"

namespace vsd {
namespace {

using nlohmann::json;

// Collects every finding so a bad config reports all problems at once.
struct Parser {
  std::vector<std::string> errors;

  template <typename T>
  void field(const json& obj, const std::string& path, const char* key, T& out) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      it->get_to(out);
    } catch (const json::exception&) {
      errors.push_back("bad value for " + path + "." + key + ": " + it->dump());
    }
  }

  void directions_field(const json& obj, const std::string& path, const char* key,
                        std::vector<LossDirection>& out) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_array()) {
      errors.push_back("bad value for " + path + "." + key + ": expected an array of names");
      return;
    }
    std::vector<LossDirection> parsed;
    bool ok = true;
    for (const json& name : *it) {
      if (!name.is_string()) {
        errors.push_back("bad value for " + path + "." + key + ": " + name.dump());
        ok = false;
        continue;
      }
      try {
        parsed.push_back(direction_from_name(name.get<std::string>()));
      } catch (const std::exception& e) {
        errors.push_back(path + "." + key + ": " + e.what());
        ok = false;
      }
    }
    if (ok) out = std::move(parsed);
  }

  // Every key of obj must be consumed by one of the named handlers.
  void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : obj.items()) {
      bool found = false;
      for (const char* k : known)
        if (key == k) {
          found = true;
          break;
        }
      if (!found) errors.push_back("unknown key: " + (path.empty() ? key : path + "." + key));
      (void)value;
    }
  }

  json section(const json& root, const char* name) {
    const auto it = root.find(name);
    if (it == root.end()) return json::object();
    if (!it->is_object()) {
      errors.push_back(std::string("section ") + name + " must be an object");
      return json::object();
    }
    return *it;
  }
};

void parse_view(Parser& p, const json& j, ViewConfig& v) {
  p.check_keys(j, "view",
               {"k_g", "k_l_choices", "n_global", "n_lt", "q", "global_size", "local_size",
                "local_window_fraction", "global_crop_area", "local_crop_area", "crop_aspect",
                "aug", "seed"});
  p.field(j, "view", "k_g", v.k_g);
  p.field(j, "view", "k_l_choices", v.k_l_choices);
  p.field(j, "view", "n_global", v.n_global);
  p.field(j, "view", "n_lt", v.n_lt);
  p.field(j, "view", "q", v.q);
  p.field(j, "view", "global_size", v.global_size);
  p.field(j, "view", "local_size", v.local_size);
  p.field(j, "view", "local_window_fraction", v.local_window_fraction);
  p.field(j, "view", "global_crop_area", v.global_crop_area);
  p.field(j, "view", "local_crop_area", v.local_crop_area);
  p.field(j, "view", "crop_aspect", v.crop_aspect);
  p.field(j, "view", "seed", v.seed);
  if (j.contains("aug") && j.at("aug").is_object()) {
    const json& a = j.at("aug");
    p.check_keys(a, "view.aug",
                 {"color_jitter_p", "grayscale_p", "blur_p", "solarize_p", "brightness", "contrast",
                  "saturation", "hue"});
    p.field(a, "view.aug", "color_jitter_p", v.aug.color_jitter_p);
    p.field(a, "view.aug", "grayscale_p", v.aug.grayscale_p);
    p.field(a, "view.aug", "blur_p", v.aug.blur_p);
    p.field(a, "view.aug", "solarize_p", v.aug.solarize_p);
    p.field(a, "view.aug", "brightness", v.aug.brightness);
    p.field(a, "view.aug", "contrast", v.aug.contrast);
    p.field(a, "view.aug", "saturation", v.aug.saturation);
    p.field(a, "view.aug", "hue", v.aug.hue);
  } else if (j.contains("aug")) {
    p.errors.push_back("bad value for view.aug: expected an object");
  }
}

void parse_model(Parser& p, const json& j, ModelConfig& m) {
  p.check_keys(j, "model",
               {"patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "max_spatial_tokens",
                "max_temporal_tokens", "proj_hidden", "proj_bottleneck", "proj_out"});
  p.field(j, "model", "patch_size", m.patch_size);
  p.field(j, "model", "embed_dim", m.embed_dim);
  p.field(j, "model", "depth", m.depth);
  p.field(j, "model", "heads", m.heads);
  p.field(j, "model", "mlp_ratio", m.mlp_ratio);
  p.field(j, "model", "max_spatial_tokens", m.max_spatial_tokens);
  p.field(j, "model", "max_temporal_tokens", m.max_temporal_tokens);
  p.field(j, "model", "proj_hidden", m.proj_hidden);
  p.field(j, "model", "proj_bottleneck", m.proj_bottleneck);
  p.field(j, "model", "proj_out", m.proj_out);
}

void parse_distill(Parser& p, const json& j, DistillConfig& d) {
  p.check_keys(j, "distill",
               {"tau_student", "tau_teacher", "directions", "centering_enabled", "center_momentum",
                "ema_momentum_start", "ema_momentum_end"});
  p.field(j, "distill", "tau_student", d.tau_student);
  p.field(j, "distill", "tau_teacher", d.tau_teacher);
  p.directions_field(j, "distill", "directions", d.directions);
  p.field(j, "distill", "centering_enabled", d.centering_enabled);
  p.field(j, "distill", "center_momentum", d.center_momentum);
  p.field(j, "distill", "ema_momentum_start", d.ema_momentum_start);
  p.field(j, "distill", "ema_momentum_end", d.ema_momentum_end);
}

void parse_train(Parser& p, const json& j, TrainConfig& t) {
  p.check_keys(j, "train",
               {"epochs", "batch_size", "base_lr", "warmup_epochs", "final_lr_fraction", "wd_start",
                "wd_end", "beta1", "beta2", "eps", "grad_clip_norm", "checkpoint_every", "seed"});
  p.field(j, "train", "epochs", t.epochs);
  p.field(j, "train", "batch_size", t.batch_size);
  p.field(j, "train", "base_lr", t.base_lr);
  p.field(j, "train", "warmup_epochs", t.warmup_epochs);
  p.field(j, "train", "final_lr_fraction", t.final_lr_fraction);
  p.field(j, "train", "wd_start", t.wd_start);
  p.field(j, "train", "wd_end", t.wd_end);
  p.field(j, "train", "beta1", t.beta1);
  p.field(j, "train", "beta2", t.beta2);
  p.field(j, "train", "eps", t.eps);
  p.field(j, "train", "grad_clip_norm", t.grad_clip_norm);
  p.field(j, "train", "checkpoint_every", t.checkpoint_every);
  p.field(j, "train", "seed", t.seed);
}

void parse_probe(Parser& p, const json& j, ProbeConfig& pr) {
  p.check_keys(j, "probe",
               {"epochs", "batch_size", "lr", "momentum", "multi_view", "use_student", "seed"});
  p.field(j, "probe", "epochs", pr.epochs);
  p.field(j, "probe", "batch_size", pr.batch_size);
  p.field(j, "probe", "lr", pr.lr);
  p.field(j, "probe", "momentum", pr.momentum);
  p.field(j, "probe", "multi_view", pr.multi_view);
  p.field(j, "probe", "use_student", pr.use_student);
  p.field(j, "probe", "seed", pr.seed);
}

void parse_data(Parser& p, const json& j, DataConfig& d) {
  p.check_keys(j, "data", {"manifest", "out_dir"});
  p.field(j, "data", "manifest", d.manifest);
  p.field(j, "data", "out_dir", d.out_dir);
}

void collect_validation(const RunConfig& cfg, std::vector<std::string>& errors) {
  const auto probe_section = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(std::string(name) + ": " + e.what());
    }
  };
  probe_section("view", [&] { cfg.view.validate(); });
  probe_section("model", [&] { cfg.model.validate(); });
  probe_section("distill", [&] { cfg.distill.validate(); });
  probe_section("train", [&] { cfg.train.validate(); });
  probe_section("probe", [&] { cfg.probe.validate(); });
}

}  // namespace

void RunConfig::validate() const {
  std::vector<std::string> errors;
  collect_validation(*this, errors);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config root must be a JSON object");

  Parser p;
  p.check_keys(root, "", {"view", "model", "distill", "train", "probe", "data"});
  RunConfig cfg;
  parse_view(p, p.section(root, "view"), cfg.view);
  parse_model(p, p.section(root, "model"), cfg.model);
  parse_distill(p, p.section(root, "distill"), cfg.distill);
  parse_train(p, p.section(root, "train"), cfg.train);
  parse_probe(p, p.section(root, "probe"), cfg.probe);
  parse_data(p, p.section(root, "data"), cfg.data);
  if (p.errors.empty()) collect_validation(cfg, p.errors);
  if (!p.errors.empty()) {
    std::string msg = "invalid config:";
    for (const std::string& e : p.errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return parse_run_config(read_text_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::vector<std::string> dir_names;
  for (LossDirection d : cfg.distill.directions) dir_names.emplace_back(direction_name(d));
  const json doc{
      {"view",
       {{"k_g", cfg.view.k_g},
        {"k_l_choices", cfg.view.k_l_choices},
        {"n_global", cfg.view.n_global},
        {"n_lt", cfg.view.n_lt},
        {"q", cfg.view.q},
        {"global_size", cfg.view.global_size},
        {"local_size", cfg.view.local_size},
        {"local_window_fraction", cfg.view.local_window_fraction},
        {"global_crop_area", cfg.view.global_crop_area},
        {"local_crop_area", cfg.view.local_crop_area},
        {"crop_aspect", cfg.view.crop_aspect},
        {"aug",
         {{"color_jitter_p", cfg.view.aug.color_jitter_p},
          {"grayscale_p", cfg.view.aug.grayscale_p},
          {"blur_p", cfg.view.aug.blur_p},
          {"solarize_p", cfg.view.aug.solarize_p},
          {"brightness", cfg.view.aug.brightness},
          {"contrast", cfg.view.aug.contrast},
          {"saturation", cfg.view.aug.saturation},
          {"hue", cfg.view.aug.hue}}},
        {"seed", cfg.view.seed}}},
      {"model",
       {{"patch_size", cfg.model.patch_size},
        {"embed_dim", cfg.model.embed_dim},
        {"depth", cfg.model.depth},
        {"heads", cfg.model.heads},
        {"mlp_ratio", cfg.model.mlp_ratio},
        {"max_spatial_tokens", cfg.model.max_spatial_tokens},
        {"max_temporal_tokens", cfg.model.max_temporal_tokens},
        {"proj_hidden", cfg.model.proj_hidden},
        {"proj_bottleneck", cfg.model.proj_bottleneck},
        {"proj_out", cfg.model.proj_out}}},
      {"distill",
       {{"tau_student", cfg.distill.tau_student},
        {"tau_teacher", cfg.distill.tau_teacher},
        {"directions", dir_names},
        {"centering_enabled", cfg.distill.centering_enabled},
        {"center_momentum", cfg.distill.center_momentum},
        {"ema_momentum_start", cfg.distill.ema_momentum_start},
        {"ema_momentum_end", cfg.distill.ema_momentum_end}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"warmup_epochs", cfg.train.warmup_epochs},
        {"final_lr_fraction", cfg.train.final_lr_fraction},
        {"wd_start", cfg.train.wd_start},
        {"wd_end", cfg.train.wd_end},
        {"beta1", cfg.train.beta1},
        {"beta2", cfg.train.beta2},
        {"eps", cfg.train.eps},
        {"grad_clip_norm", cfg.train.grad_clip_norm},
        {"checkpoint_every", cfg.train.checkpoint_every},
        {"seed", cfg.train.seed}}},
      {"probe",
       {{"epochs", cfg.probe.epochs},
        {"batch_size", cfg.probe.batch_size},
        {"lr", cfg.probe.lr},
        {"momentum", cfg.probe.momentum},
        {"multi_view", cfg.probe.multi_view},
        {"use_student", cfg.probe.use_student},
        {"seed", cfg.probe.seed}}},
      {"data", {{"manifest", cfg.data.manifest}, {"out_dir", cfg.data.out_dir}}}};
  return doc.dump(2) + "\n";
}

}  // namespace vsd
