// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "vsd/model.hpp"
#include "vsd/objective.hpp"
#include "vsd/probe.hpp"
#include "vsd/sampling.hpp"
#include "vsd/trainer.hpp"

namespace vsd {

struct DataConfig {
  std::string manifest;  // dataset manifest path
  std::string out_dir;   // run outputs: checkpoints, metrics, reports
};

// The one document a run is addressed by. Every field has a default, so an
// empty JSON object is a valid config.
struct RunConfig {
  ViewConfig view;
  ModelConfig model;
  DistillConfig distill;
  TrainConfig train;
  ProbeConfig probe;
  DataConfig data;
  void validate() const;
};

// Strict parse: unknown keys and ill-typed or invalid values are collected
// and thrown together as one std::invalid_argument, one finding per line.
// Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical form: every key serialized, sorted keys, 2-space indent.
// parse -> serialize -> parse is a fixed point.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace vsd
