// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vsd/graph.hpp"
#include "vsd/io.hpp"
#include "vsd/model.hpp"
#include "vsd/objective.hpp"
#include "vsd/sampling.hpp"

namespace vsd {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double base_lr = 5e-4;
  std::size_t warmup_epochs = 5;
  double final_lr_fraction = 0.01;  // cosine decays to this fraction of base_lr
  double wd_start = 0.04;
  double wd_end = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip_norm = 0.0;      // <= 0 disables clipping
  std::size_t checkpoint_every = 10;  // epochs between checkpoint writes; 0 = final only
  std::uint64_t seed = 0;
  void validate() const;
};

// Schedules over global steps; total = epochs * steps_per_epoch. Endpoints
// are exact: lr(0) = 0, lr(end of warmup) = base_lr, lr(last) = fraction *
// base_lr, wd(0) = wd_start, wd(last) = wd_end, m(0) = start, m(last) = end.
double lr_at(std::uint64_t step, const TrainConfig& cfg, std::size_t steps_per_epoch);
double wd_at(std::uint64_t step, const TrainConfig& cfg, std::size_t steps_per_epoch);
double ema_momentum_at(std::uint64_t step, const TrainConfig& cfg, const DistillConfig& distill,
                       std::size_t steps_per_epoch);

// Decoupled weight decay hits weight matrices (rank >= 2) only, never
// gains, biases, or the class token.
bool decayed_param(const std::string& name, const Shape& shape);

struct AdamState {
  std::map<std::string, Tensor<float>> m, v;
};

struct DistillState {
  ModelParams<float> student;
  ModelParams<float> teacher;  // starts as an exact copy; changes only via ema_update
  AdamState opt;
  Tensor<float> center{Shape{1}};  // [n]
  std::uint64_t global_step = 0;
  std::uint64_t epoch = 0;  // completed epochs
};

DistillState init_distill_state(const ModelConfig& mc, std::uint64_t seed);

// Checkpoint packing: student.*, teacher.*, optimizer.{m,v}.*, center.
CheckpointData pack_state(const DistillState& state, std::string config_json);
DistillState unpack_state(const CheckpointData& data);

struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double lr = 0, wd = 0, ema_m = 0;
  double l_gt_lt = 0, l_gt_ls = 0, total = 0;
  double teacher_entropy = 0;
  double wall_ms = 0;
};

// One JSON object, keys in the fixed order
// {step, epoch, lr, wd, ema_m, L_gt_lt, L_gt_ls, total, teacher_entropy, wall_ms}.
std::string metrics_json_line(const MetricsRecord& r);

// One optimization step: teacher forwards targets without gradients, student
// forwards its views, total-loss backward, optimizer + EMA + center updates.
// Throws on a non-finite loss, naming the first non-finite tensor.
MetricsRecord train_step(DistillState& state, const std::vector<ViewBatch>& batch,
                         const ModelConfig& mc, const DistillConfig& dc, const TrainConfig& tc,
                         std::size_t steps_per_epoch);

struct PretrainOptions {
  std::filesystem::path out_dir;
  std::string config_json;            // embedded verbatim in checkpoints
  std::filesystem::path resume;       // empty = fresh start
};

struct PretrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::uint64_t steps = 0;
  double min_teacher_entropy = std::numeric_limits<double>::infinity();
  double last_total = 0;
};

// Seeded-shuffle epochs over the train split; incomplete tail batches are
// dropped so every epoch has identical step count. View streams are re-seeded
// per epoch, so epoch k sees the same views whether or not the run was
// resumed in between.
PretrainResult pretrain(const std::vector<ManifestEntry>& train_set,
                        const std::filesystem::path& dataset_dir, const ModelConfig& mc,
                        const ViewConfig& vc, const DistillConfig& dc, const TrainConfig& tc,
                        const PretrainOptions& opts);

// Gradient oracle: one full two-direction training-step loss on the given
// model in f64 over a micro view set, checked against central differences.
GradCheckReport gradcheck_step(const ModelConfig& mc, const DistillConfig& dc, std::uint64_t seed,
                               double epsilon = 1e-4, std::size_t entries_per_param = 64);

}  // namespace vsd
