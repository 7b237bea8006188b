// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vsd/image.hpp"
#include "vsd/rng.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

// A decoded video: [T,3,H,W] float frames in [0,1].
struct RawVideo {
  Tensor<float> frames;
  std::optional<int> label;
  std::string id;
};

// Validates shape, clamps pixels into [0,1].
RawVideo make_raw_video(Tensor<float> frames, std::string id, std::optional<int> label = {});

struct AugProbs {
  double color_jitter_p = 0.8;
  double grayscale_p = 0.2;
  double blur_p = 0.1;      // global views only
  double solarize_p = 0.2;  // global views only
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  void validate() const;
};

struct ViewConfig {
  std::size_t k_g = 6;                         // frames per global view
  std::vector<std::size_t> k_l_choices{2, 3};  // frame counts for local views
  std::size_t n_global = 2;
  std::size_t n_lt = 2;
  std::size_t q = 8;
  std::array<std::size_t, 2> global_size{64, 64};  // (H_g, W_g)
  std::array<std::size_t, 2> local_size{32, 32};   // (H_l, W_l)
  std::array<double, 2> local_window_fraction{0.3, 0.7};
  std::array<double, 2> global_crop_area{0.4, 1.0};
  std::array<double, 2> local_crop_area{0.05, 0.4};
  std::array<double, 2> crop_aspect{0.75, 4.0 / 3.0};
  AugProbs aug;
  std::uint64_t seed = 0;
  void validate() const;
};

enum class ViewKind { global, local_temporal, local_spatial };

struct ViewMeta {
  ViewKind kind{};
  std::size_t view_index = 0;
  std::uint64_t stream_seed = 0;  // per-view base stream id
  std::vector<std::size_t> frame_indices;
  std::size_t window_start = 0;  // [start, start+window_len) in source frames
  std::size_t window_len = 0;
  bool window_expanded = false;  // drawn window was shorter than K_l frames
  CropRect crop;
};

struct View {
  Tensor<float> clip;  // [K, 3, out_h, out_w]
  ViewMeta meta;
};

// All views of one video, in construction order.
struct ViewBatch {
  std::string video_id;
  std::vector<View> globals;   // n_global clips [K_g, 3, H_g, W_g]
  std::vector<View> locals_t;  // n_lt clips [K_i, 3, H_g, W_g]
  std::vector<View> locals_s;  // q clips [K_j, 3, H_l, W_l]
};

// Splits [0, t_total) into k equal segments and draws one index uniformly per
// segment. Output is strictly increasing. Throws when k > t_total or k == 0.
std::vector<std::size_t> segment_sample(std::size_t t_total, std::size_t k, Rng& rng);

// Per-view construction. stream_seed is the content address of the view; the
// same (video, cfg, stream_seed) always yields bit-identical pixels. Substreams
// ("frames", "window", "crop", "augs") are derived internally so the draw
// order of one stage never disturbs another.
View make_global_view(const RawVideo& video, const ViewConfig& cfg, std::uint64_t stream_seed,
                      std::size_t view_index);
View make_local_view(const RawVideo& video, const ViewConfig& cfg, std::uint64_t stream_seed,
                     std::size_t view_index, ViewKind kind);

// One Bernoulli per augmentation per view; a fired augmentation applies the
// same factor to every frame. Blur and solarization only fire for globals.
void augment(Tensor<float>& clip, ViewKind scope, const AugProbs& probs, Rng& rng);

// Builds every view of one video. Stream seeds derive from
// (cfg.seed, video.id, view index) with view indices running globals first,
// then locals_t, then locals_s.
ViewBatch build_views(const RawVideo& video, const ViewConfig& cfg);

std::vector<ViewBatch> build_view_batch(const std::vector<const RawVideo*>& videos,
                                        const ViewConfig& cfg);

}  // namespace vsd
