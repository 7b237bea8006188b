// SPDX-License-Identifier: Apache-2.0
#include "vsd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vsd {
namespace {

constexpr double kPi = 3.14159265358979323846;

// t in [0,1]. Endpoints return the configured values verbatim so schedule
// boundaries are exact rather than round-trips through the cosine.
double cosine_ramp(double from, double to, double t) {
  if (t <= 0.0) return from;
  if (t >= 1.0) return to;
  return to + (from - to) * (0.5 * (1.0 + std::cos(kPi * t)));
}

std::uint64_t total_steps(const TrainConfig& cfg, std::size_t steps_per_epoch) {
  return static_cast<std::uint64_t>(cfg.epochs) * steps_per_epoch;
}

struct GroupKey {
  std::size_t k = 0, h = 0, w = 0;
  bool operator<(const GroupKey& o) const {
    return std::tie(k, h, w) < std::tie(o.k, o.h, o.w);
  }
};

enum Family : int { kGt = 0, kLt = 1, kLs = 2 };

struct SlotRef {
  std::size_t video = 0;
  int family = kGt;
  std::size_t slot = 0;
};

GroupKey key_of(const Tensor<float>& clip) { return {clip.extent(0), clip.extent(2), clip.extent(3)}; }

// Clips of identical (K,H,W) share one embedded forward; refs map each row of
// the grouped output back to its (video, family, slot).
struct Groups {
  std::map<GroupKey, std::vector<const Tensor<float>*>> clips;
  std::map<GroupKey, std::vector<SlotRef>> refs;

  void add(const Tensor<float>& clip, SlotRef ref) {
    const GroupKey key = key_of(clip);
    clips[key].push_back(&clip);
    refs[key].push_back(ref);
  }
};

Groups collect(const std::vector<ViewBatch>& batch, bool gt, bool lt, bool ls) {
  Groups g;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (gt)
      for (std::size_t j = 0; j < batch[i].globals.size(); ++j)
        g.add(batch[i].globals[j].clip, {i, kGt, j});
    if (lt)
      for (std::size_t j = 0; j < batch[i].locals_t.size(); ++j)
        g.add(batch[i].locals_t[j].clip, {i, kLt, j});
    if (ls)
      for (std::size_t j = 0; j < batch[i].locals_s.size(); ++j)
        g.add(batch[i].locals_s[j].clip, {i, kLs, j});
  }
  return g;
}

// Embeds and forwards one group, returning the projected rows [B, n].
template <typename T>
NodeId forward_group(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& mc,
                     const std::vector<const Tensor<float>*>& clips, const GroupKey& key) {
  const TokenLayout layout = layout_for(mc, key.k, key.h, key.w);
  const NodeId tokens = embed_clips(g, bp, mc, clips, layout);
  const NodeId normed = forward_tokens(g, bp, mc, tokens, layout);
  const NodeId feats = backbone_feature<T>(g, normed);
  return project_head(g, bp, mc, feats);
}

template <typename T>
struct TeacherPassOut {
  std::vector<TeacherTargets<T>> targets;
  Tensor<T> raw_rows;  // all raw projections, [rows, n], for the center update
};

// Teacher forward without gradients: parameters bind as constants and the
// whole graph is dropped on return, so only the sharpened targets survive.
template <typename T>
TeacherPassOut<T> teacher_pass(const ModelParams<T>& teacher, const ModelConfig& mc,
                               const DistillConfig& dc, const std::vector<ViewBatch>& batch,
                               const Tensor<T>* center) {
  TeacherPassOut<T> out;
  out.targets.resize(batch.size());
  std::vector<std::vector<Tensor<T>>> raw_gt(batch.size()), raw_lt(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    raw_gt[i].resize(batch[i].globals.size());
    if (dc.needs_teacher_lt()) raw_lt[i].resize(batch[i].locals_t.size());
  }

  const Groups groups = collect(batch, /*gt=*/true, /*lt=*/dc.needs_teacher_lt(), /*ls=*/false);
  Graph<T> g;
  const BoundParams<T> bp = bind_params(g, teacher, /*trainable=*/false);
  for (const auto& [key, clips] : groups.clips) {
    const NodeId proj = forward_group(g, bp, mc, clips, key);
    const Tensor<T>& rows = g.value(proj);
    const std::size_t n = rows.extent(1);
    const auto& refs = groups.refs.at(key);
    for (std::size_t r = 0; r < refs.size(); ++r) {
      Tensor<T> row({n});
      std::copy(rows.data() + r * n, rows.data() + (r + 1) * n, row.data());
      if (refs[r].family == kGt)
        raw_gt[refs[r].video][refs[r].slot] = std::move(row);
      else
        raw_lt[refs[r].video][refs[r].slot] = std::move(row);
    }
  }

  std::size_t total_rows = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) total_rows += raw_gt[i].size() + raw_lt[i].size();
  const std::size_t n = mc.proj_out;
  out.raw_rows = Tensor<T>({total_rows, n});
  std::size_t cursor = 0;
  auto emit = [&](const Tensor<T>& row) {
    std::copy(row.data(), row.data() + n, out.raw_rows.data() + cursor * n);
    ++cursor;
  };
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.targets[i].gt.reserve(raw_gt[i].size());
    for (const Tensor<T>& row : raw_gt[i]) {
      emit(row);
      out.targets[i].gt.push_back(sharpen(row, dc.tau_teacher, center));
    }
    out.targets[i].lt.reserve(raw_lt[i].size());
    for (const Tensor<T>& row : raw_lt[i]) {
      emit(row);
      out.targets[i].lt.push_back(sharpen(row, dc.tau_teacher, center));
    }
  }
  return out;
}

template <typename T>
std::vector<StudentViews<T>> student_pass(Graph<T>& g, const BoundParams<T>& bp,
                                          const ModelConfig& mc, const DistillConfig& dc,
                                          const std::vector<ViewBatch>& batch) {
  std::vector<StudentViews<T>> students(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (dc.needs_student_gt()) students[i].gt.resize(batch[i].globals.size(), kNoNode);
    students[i].lt.resize(batch[i].locals_t.size(), kNoNode);
    students[i].ls.resize(batch[i].locals_s.size(), kNoNode);
  }
  const Groups groups = collect(batch, /*gt=*/dc.needs_student_gt(), /*lt=*/true, /*ls=*/true);
  for (const auto& [key, clips] : groups.clips) {
    const NodeId proj = forward_group(g, bp, mc, clips, key);
    const auto& refs = groups.refs.at(key);
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const NodeId row = g.slice(proj, 0, r, 1);  // [1, n]
      StudentViews<T>& sv = students[refs[r].video];
      switch (refs[r].family) {
        case kGt: sv.gt[refs[r].slot] = row; break;
        case kLt: sv.lt[refs[r].slot] = row; break;
        default: sv.ls[refs[r].slot] = row; break;
      }
    }
  }
  return students;
}

void apply_adamw(DistillState& state, Graph<float>& g, const BoundParams<float>& bp, double lr,
                 double wd, const TrainConfig& tc) {
  const auto t = static_cast<double>(state.global_step + 1);
  const double bc1 = 1.0 - std::pow(tc.beta1, t);
  const double bc2 = 1.0 - std::pow(tc.beta2, t);

  double scale = 1.0;
  if (tc.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : state.student.tensors) {
      const NodeId id = bp.at(name);
      if (!g.has_grad(id)) continue;
      const Tensor<float>& gr = g.grad(id);
      for (std::size_t i = 0; i < gr.size(); ++i)
        sq += static_cast<double>(gr[i]) * static_cast<double>(gr[i]);
    }
    const double norm = std::sqrt(sq);
    if (norm > tc.grad_clip_norm) scale = tc.grad_clip_norm / norm;
  }

  for (auto& [name, p] : state.student.tensors) {
    const NodeId id = bp.at(name);
    Tensor<float>& m = state.opt.m.at(name);
    Tensor<float>& v = state.opt.v.at(name);
    const bool decay = decayed_param(name, p.shape());
    const bool has = g.has_grad(id);
    const Tensor<float>* gr = has ? &g.grad(id) : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has ? static_cast<double>((*gr)[i]) * scale : 0.0;
      const double mi = tc.beta1 * static_cast<double>(m[i]) + (1.0 - tc.beta1) * gi;
      const double vi = tc.beta2 * static_cast<double>(v[i]) + (1.0 - tc.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      if (lr == 0.0) continue;  // bit-exact null update
      double upd = (mi / bc1) / (std::sqrt(vi / bc2) + tc.eps);
      if (decay) upd += wd * static_cast<double>(p[i]);
      p[i] = static_cast<float>(static_cast<double>(p[i]) - lr * upd);
    }
  }
}

std::string fmt(double v) { return nlohmann::json(v).dump(); }

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (warmup_epochs >= epochs) throw std::invalid_argument("train: warmup_epochs must be < epochs");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: base_lr must be positive");
  if (final_lr_fraction < 0.0 || final_lr_fraction > 1.0)
    throw std::invalid_argument("train: final_lr_fraction must lie in [0,1]");
  if (wd_start > wd_end) throw std::invalid_argument("train: wd_start must be <= wd_end");
  if (wd_start < 0.0) throw std::invalid_argument("train: weight decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("train: betas must lie in [0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
}

double lr_at(std::uint64_t step, const TrainConfig& cfg, std::size_t steps_per_epoch) {
  const std::uint64_t total = total_steps(cfg, steps_per_epoch);
  const std::uint64_t warmup = static_cast<std::uint64_t>(cfg.warmup_epochs) * steps_per_epoch;
  if (warmup > 0 && step < warmup)
    return cfg.base_lr * (static_cast<double>(step) / static_cast<double>(warmup));
  const double floor_lr = cfg.final_lr_fraction * cfg.base_lr;
  const std::uint64_t last = total > 0 ? total - 1 : 0;
  if (step >= last) return floor_lr;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(last - warmup);
  return cosine_ramp(cfg.base_lr, floor_lr, t);
}

double wd_at(std::uint64_t step, const TrainConfig& cfg, std::size_t steps_per_epoch) {
  const std::uint64_t total = total_steps(cfg, steps_per_epoch);
  if (total <= 1) return step == 0 ? cfg.wd_start : cfg.wd_end;
  const double t = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return cosine_ramp(cfg.wd_start, cfg.wd_end, t);
}

double ema_momentum_at(std::uint64_t step, const TrainConfig& cfg, const DistillConfig& distill,
                       std::size_t steps_per_epoch) {
  const std::uint64_t total = total_steps(cfg, steps_per_epoch);
  if (total <= 1) return step == 0 ? distill.ema_momentum_start : distill.ema_momentum_end;
  const double t = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return cosine_ramp(distill.ema_momentum_start, distill.ema_momentum_end, t);
}

bool decayed_param(const std::string& /*name*/, const Shape& shape) { return shape.size() >= 2; }

DistillState init_distill_state(const ModelConfig& mc, std::uint64_t seed) {
  DistillState st;
  st.student = init_params(mc, seed);
  st.teacher = st.student;  // exact copy at step 0
  for (const auto& [name, p] : st.student.tensors) {
    st.opt.m.emplace(name, Tensor<float>(p.shape()));
    st.opt.v.emplace(name, Tensor<float>(p.shape()));
  }
  st.center = Tensor<float>({mc.proj_out});
  return st;
}

CheckpointData pack_state(const DistillState& state, std::string config_json) {
  CheckpointData data;
  data.config_json = std::move(config_json);
  data.global_step = state.global_step;
  data.epoch = state.epoch;
  for (const auto& [k, v] : state.student.tensors) data.tensors.emplace("student." + k, v);
  for (const auto& [k, v] : state.teacher.tensors) data.tensors.emplace("teacher." + k, v);
  for (const auto& [k, v] : state.opt.m) data.tensors.emplace("optimizer.m." + k, v);
  for (const auto& [k, v] : state.opt.v) data.tensors.emplace("optimizer.v." + k, v);
  data.tensors.emplace("center", state.center);
  return data;
}

DistillState unpack_state(const CheckpointData& data) {
  DistillState st;
  st.global_step = data.global_step;
  st.epoch = data.epoch;
  bool center_seen = false;
  for (const auto& [name, t] : data.tensors) {
    if (name == "center") {
      st.center = t;
      center_seen = true;
    } else if (name.rfind("student.", 0) == 0) {
      st.student.tensors.emplace(name.substr(8), t);
    } else if (name.rfind("teacher.", 0) == 0) {
      st.teacher.tensors.emplace(name.substr(8), t);
    } else if (name.rfind("optimizer.m.", 0) == 0) {
      st.opt.m.emplace(name.substr(12), t);
    } else if (name.rfind("optimizer.v.", 0) == 0) {
      st.opt.v.emplace(name.substr(12), t);
    } else {
      throw std::runtime_error("checkpoint: unrecognized tensor '" + name + "'");
    }
  }
  if (!center_seen) throw std::runtime_error("checkpoint: center tensor missing");
  if (!st.student.same_names(st.teacher))
    throw std::runtime_error("checkpoint: student/teacher name sets differ");
  for (const auto& [k, v] : st.student.tensors) {
    if (st.opt.m.find(k) == st.opt.m.end() || st.opt.v.find(k) == st.opt.v.end())
      throw std::runtime_error("checkpoint: optimizer moments missing for '" + k + "'");
    (void)v;
  }
  return st;
}

std::string metrics_json_line(const MetricsRecord& r) {
  std::string line;
  line.reserve(256);
  line += "{\"step\":" + std::to_string(r.step);
  line += ",\"epoch\":" + std::to_string(r.epoch);
  line += ",\"lr\":" + fmt(r.lr);
  line += ",\"wd\":" + fmt(r.wd);
  line += ",\"ema_m\":" + fmt(r.ema_m);
  line += ",\"L_gt_lt\":" + fmt(r.l_gt_lt);
  line += ",\"L_gt_ls\":" + fmt(r.l_gt_ls);
  line += ",\"total\":" + fmt(r.total);
  line += ",\"teacher_entropy\":" + fmt(r.teacher_entropy);
  line += ",\"wall_ms\":" + fmt(r.wall_ms);
  line += "}";
  return line;
}

MetricsRecord train_step(DistillState& state, const std::vector<ViewBatch>& batch,
                         const ModelConfig& mc, const DistillConfig& dc, const TrainConfig& tc,
                         std::size_t steps_per_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (steps_per_epoch == 0) throw std::invalid_argument("train_step: steps_per_epoch must be positive");

  const double lr = lr_at(state.global_step, tc, steps_per_epoch);
  const double wd = wd_at(state.global_step, tc, steps_per_epoch);
  const double m_ema = ema_momentum_at(state.global_step, tc, dc, steps_per_epoch);

  // Targets are computed against the pre-update center and the graph holding
  // the teacher forward dies here, halving peak memory before backward.
  const TeacherPassOut<float> teacher =
      teacher_pass(state.teacher, mc, dc, batch, dc.centering_enabled ? &state.center : nullptr);

  Graph<float> g;
  const BoundParams<float> bp = bind_params(g, state.student, /*trainable=*/true);
  const std::vector<StudentViews<float>> students = student_pass(g, bp, mc, dc, batch);
  const LossGraph<float> lg = build_total_loss(g, teacher.targets, students, dc);

  const double total = static_cast<double>(g.value(lg.total)[0]);
  if (!std::isfinite(total)) {
    const NodeId bad = g.first_nonfinite();
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(state.global_step) + "; first non-finite tensor: '" +
                             (bad == kNoNode ? std::string("total") : g.label(bad)) + "'");
  }
  g.backward(lg.total);

  apply_adamw(state, g, bp, lr, wd, tc);
  ema_update(state.teacher, state.student, m_ema);
  if (dc.centering_enabled) update_center(state.center, teacher.raw_rows, dc.center_momentum);

  const LossTerms terms = read_loss_terms(g, lg, teacher.targets);
  MetricsRecord rec;
  rec.step = state.global_step;
  rec.epoch = state.global_step / steps_per_epoch;
  rec.lr = lr;
  rec.wd = wd;
  rec.ema_m = m_ema;
  rec.l_gt_lt = terms.l_gt_lt;
  rec.l_gt_ls = terms.l_gt_ls;
  rec.total = terms.total;
  rec.teacher_entropy = terms.teacher_entropy;
  state.global_step += 1;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

PretrainResult pretrain(const std::vector<ManifestEntry>& train_set,
                        const std::filesystem::path& dataset_dir, const ModelConfig& mc,
                        const ViewConfig& vc, const DistillConfig& dc, const TrainConfig& tc,
                        const PretrainOptions& opts) {
  mc.validate();
  vc.validate();
  dc.validate();
  tc.validate();
  if (train_set.empty()) throw std::invalid_argument("pretrain: empty train set");
  const std::size_t spe = train_set.size() / tc.batch_size;
  if (spe == 0) throw std::invalid_argument("pretrain: batch_size exceeds the train set");

  std::filesystem::create_directories(opts.out_dir);
  const bool resuming = !opts.resume.empty();
  DistillState state = resuming ? unpack_state(load_checkpoint(opts.resume))
                                : init_distill_state(mc, tc.seed);
  if (state.center.size() != mc.proj_out)
    throw std::runtime_error("pretrain: checkpoint center length does not match model config");

  PretrainResult res;
  res.checkpoint_path = opts.out_dir / "checkpoint.spck";
  res.metrics_path = opts.out_dir / "metrics.jsonl";
  std::ofstream metrics(res.metrics_path,
                        resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error(res.metrics_path.string() + ": cannot open for writing");

  for (std::size_t e = state.epoch; e < tc.epochs; ++e) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, "shuffle", static_cast<std::uint64_t>(e)));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order[i], order[j]);
    }
    ViewConfig vce = vc;
    vce.seed = derive_seed(vc.seed, "epoch", static_cast<std::uint64_t>(e));

    for (std::size_t b = 0; b < spe; ++b) {
      std::vector<RawVideo> videos;
      videos.reserve(tc.batch_size);
      for (std::size_t j = 0; j < tc.batch_size; ++j)
        videos.push_back(load_video(dataset_dir, train_set[order[b * tc.batch_size + j]]));
      std::vector<const RawVideo*> ptrs;
      ptrs.reserve(videos.size());
      for (const RawVideo& v : videos) ptrs.push_back(&v);
      const std::vector<ViewBatch> views = build_view_batch(ptrs, vce);

      const MetricsRecord rec = train_step(state, views, mc, dc, tc, spe);
      metrics << metrics_json_line(rec) << '\n';
      metrics.flush();
      res.min_teacher_entropy = std::min(res.min_teacher_entropy, rec.teacher_entropy);
      res.last_total = rec.total;
    }
    state.epoch = e + 1;
    if (tc.checkpoint_every > 0 && state.epoch % tc.checkpoint_every == 0 && state.epoch < tc.epochs)
      save_checkpoint(res.checkpoint_path, pack_state(state, opts.config_json));
  }
  save_checkpoint(res.checkpoint_path, pack_state(state, opts.config_json));
  res.steps = state.global_step;
  return res;
}

GradCheckReport gradcheck_step(const ModelConfig& mc, const DistillConfig& dc, std::uint64_t seed,
                               double epsilon, std::size_t entries_per_param) {
  mc.validate();
  dc.validate();
  const std::size_t p = mc.patch_size;

  // Micro view set: every view family present, spatial grids of 4 and 1
  // patches, so the oracle runs in seconds while every parameter still sits
  // on a gradient path (temporal projections are random-initialized here).
  ViewConfig vc;
  vc.k_g = 3;
  vc.k_l_choices = {2};
  vc.n_global = 2;
  vc.n_lt = 1;
  vc.q = 2;
  vc.global_size = {2 * p, 2 * p};
  vc.local_size = {p, p};
  vc.seed = derive_seed(seed, "gradcheck-views");

  const std::size_t t_total = 8, src = 2 * p + 4;
  Rng pixel_rng(derive_seed(seed, "gradcheck-video"));
  Tensor<float> frames({t_total, 3, src, src});
  for (std::size_t i = 0; i < frames.size(); ++i)
    frames[i] = static_cast<float>(pixel_rng.uniform());
  const RawVideo video = make_raw_video(std::move(frames), "gradcheck", 0);
  const std::vector<ViewBatch> batch{build_views(video, vc)};

  const ModelParams<float> init =
      init_params(mc, derive_seed(seed, "gradcheck-init"), /*zero_temporal_out=*/false);
  const ModelParams<double> params = init.cast<double>();

  const TeacherPassOut<double> teacher = teacher_pass<double>(params, mc, dc, batch, nullptr);

  Graph<double> g;
  const BoundParams<double> bp = bind_params(g, params, /*trainable=*/true);
  const std::vector<StudentViews<double>> students = student_pass(g, bp, mc, dc, batch);
  const LossGraph<double> lg = build_total_loss(g, teacher.targets, students, dc);
  return finite_difference_check(g, lg.total, epsilon, entries_per_param,
                                 derive_seed(seed, "gradcheck-sample"));
}

}  // namespace vsd
