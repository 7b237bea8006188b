// SPDX-License-Identifier: Apache-2.0
#include "vsd/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace vsd {

namespace {

// Draws a crop rectangle covering an area fraction in `area_range` of the
// source with log-uniform aspect in `aspect_range`. Always consumes exactly
// four draws so forced-degenerate configs stay stream-aligned.
CropRect draw_crop(std::size_t h, std::size_t w, const std::array<double, 2>& area_range,
                   const std::array<double, 2>& aspect_range, Rng& rng) {
  const double area_frac = rng.uniform(area_range[0], area_range[1]);
  const double aspect =
      std::exp(rng.uniform(std::log(aspect_range[0]), std::log(aspect_range[1])));
  const double target = area_frac * static_cast<double>(h) * static_cast<double>(w);
  std::size_t cw = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
  std::size_t ch = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
  cw = std::clamp<std::size_t>(cw, 1, w);
  ch = std::clamp<std::size_t>(ch, 1, h);
  const std::size_t y = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(h - ch)));
  const std::size_t x = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(w - cw)));
  return {y, x, ch, cw};
}

Tensor<float> assemble_clip(const RawVideo& video, const std::vector<std::size_t>& indices,
                            CropRect rect, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = video.frames.extent(1);
  const std::size_t h = video.frames.extent(2);
  const std::size_t w = video.frames.extent(3);
  Tensor<float> clip = Tensor<float>::uninitialized({indices.size(), c, out_h, out_w});
  const std::size_t frame_elems = c * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Tensor<float> frame = Tensor<float>::uninitialized({c, h, w});
    std::copy(video.frames.data() + indices[i] * frame_elems,
              video.frames.data() + (indices[i] + 1) * frame_elems, frame.data());
    Tensor<float> resized = crop_resize(frame, rect, out_h, out_w);
    std::copy(resized.data(), resized.data() + resized.size(),
              clip.data() + i * c * out_h * out_w);
  }
  return clip;
}

}  // namespace

RawVideo make_raw_video(Tensor<float> frames, std::string id, std::optional<int> label) {
  if (frames.rank() != 4 || frames.extent(1) != 3 || frames.extent(0) < 2) {
    throw std::invalid_argument("raw video '" + id + "': expected [T>=2,3,H,W], got " +
                                shape_str(frames.shape()));
  }
  float* p = frames.data();
  for (std::size_t i = 0; i < frames.size(); ++i) p[i] = std::clamp(p[i], 0.0f, 1.0f);
  return RawVideo{std::move(frames), label, std::move(id)};
}

void AugProbs::validate() const {
  for (double p : {color_jitter_p, grayscale_p, blur_p, solarize_p}) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("augmentation probability outside [0,1]");
  }
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
    throw std::invalid_argument("augmentation strength out of range");
  }
}

void ViewConfig::validate() const {
  if (k_g == 0) throw std::invalid_argument("view config: k_g must be >= 1");
  if (k_l_choices.empty()) throw std::invalid_argument("view config: k_l_choices empty");
  for (std::size_t k : k_l_choices) {
    if (k == 0 || k > k_g) {
      throw std::invalid_argument("view config: every k_l must satisfy 1 <= k_l <= k_g");
    }
  }
  if (n_global < 1 || q < 1) throw std::invalid_argument("view config: n_global and q must be >= 1");
  if (local_size[0] > global_size[0] || local_size[1] > global_size[1]) {
    throw std::invalid_argument("view config: local_size must be <= global_size componentwise");
  }
  auto check_range = [](const std::array<double, 2>& r, double lo, double hi, const char* name) {
    if (!(r[0] <= r[1]) || r[0] < lo || r[1] > hi || !(r[0] > 0)) {
      throw std::invalid_argument(std::string("view config: bad range for ") + name);
    }
  };
  check_range(local_window_fraction, 0.0, 1.0, "local_window_fraction");
  check_range(global_crop_area, 0.0, 1.0, "global_crop_area");
  check_range(local_crop_area, 0.0, 1.0, "local_crop_area");
  if (!(crop_aspect[0] > 0) || !(crop_aspect[0] <= crop_aspect[1])) {
    throw std::invalid_argument("view config: bad crop_aspect range");
  }
  aug.validate();
}

std::vector<std::size_t> segment_sample(std::size_t t_total, std::size_t k, Rng& rng) {
  if (k == 0 || k > t_total) {
    throw std::invalid_argument("segment_sample: need 1 <= k <= t_total, got k=" +
                                std::to_string(k) + ", t_total=" + std::to_string(t_total));
  }
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    // Segment i covers [floor(i*T/k), floor((i+1)*T/k)); segments are
    // disjoint and nonempty, so the output is strictly increasing.
    const std::size_t lo = i * t_total / k;
    const std::size_t hi = (i + 1) * t_total / k;
    out[i] = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo),
                                                      static_cast<std::int64_t>(hi) - 1));
  }
  return out;
}

void augment(Tensor<float>& clip, ViewKind scope, const AugProbs& probs, Rng& rng) {
  // Draw order is pinned: jitter gate, four jitter factors (always consumed),
  // grayscale gate, then blur gate + sigma and solarize gate for globals.
  const bool jitter = rng.bernoulli(probs.color_jitter_p);
  const float fb = static_cast<float>(rng.uniform(1.0 - probs.brightness, 1.0 + probs.brightness));
  const float fc = static_cast<float>(rng.uniform(1.0 - probs.contrast, 1.0 + probs.contrast));
  const float fs = static_cast<float>(rng.uniform(1.0 - probs.saturation, 1.0 + probs.saturation));
  const float fh = static_cast<float>(rng.uniform(-probs.hue, probs.hue));
  if (jitter) {
    adjust_brightness(clip, fb);
    adjust_contrast(clip, fc);
    adjust_saturation(clip, fs);
    adjust_hue(clip, fh);
  }
  if (rng.bernoulli(probs.grayscale_p)) to_grayscale(clip);
  if (scope == ViewKind::global) {
    const bool blur = rng.bernoulli(probs.blur_p);
    const float sigma = static_cast<float>(rng.uniform(0.1, 2.0));
    if (blur) gaussian_blur(clip, sigma);
    if (rng.bernoulli(probs.solarize_p)) solarize(clip, 0.5f);
  }
  clamp01(clip);
}

View make_global_view(const RawVideo& video, const ViewConfig& cfg, std::uint64_t stream_seed,
                      std::size_t view_index) {
  const std::size_t t_total = video.frames.extent(0);
  if (t_total < cfg.k_g) {
    throw std::invalid_argument("make_global_view: video '" + video.id + "' has " +
                                std::to_string(t_total) + " frames, need " +
                                std::to_string(cfg.k_g));
  }
  Rng frames_rng(derive_seed(stream_seed, "frames"));
  Rng crop_rng(derive_seed(stream_seed, "crop"));
  Rng augs_rng(derive_seed(stream_seed, "augs"));

  View v;
  v.meta.kind = ViewKind::global;
  v.meta.view_index = view_index;
  v.meta.stream_seed = stream_seed;
  v.meta.window_start = 0;
  v.meta.window_len = t_total;
  v.meta.frame_indices = segment_sample(t_total, cfg.k_g, frames_rng);
  v.meta.crop = draw_crop(video.frames.extent(2), video.frames.extent(3), cfg.global_crop_area,
                          cfg.crop_aspect, crop_rng);
  v.clip = assemble_clip(video, v.meta.frame_indices, v.meta.crop, cfg.global_size[0],
                         cfg.global_size[1]);
  augment(v.clip, ViewKind::global, cfg.aug, augs_rng);
  return v;
}

View make_local_view(const RawVideo& video, const ViewConfig& cfg, std::uint64_t stream_seed,
                     std::size_t view_index, ViewKind kind) {
  if (kind == ViewKind::global) {
    throw std::invalid_argument("make_local_view: kind must be local_temporal or local_spatial");
  }
  const std::size_t t_total = video.frames.extent(0);
  const std::size_t k_max = *std::max_element(cfg.k_l_choices.begin(), cfg.k_l_choices.end());
  if (t_total < k_max) {
    throw std::invalid_argument("make_local_view: video '" + video.id + "' has " +
                                std::to_string(t_total) + " frames, need " +
                                std::to_string(k_max));
  }
  Rng frames_rng(derive_seed(stream_seed, "frames"));
  Rng window_rng(derive_seed(stream_seed, "window"));
  Rng crop_rng(derive_seed(stream_seed, "crop"));
  Rng augs_rng(derive_seed(stream_seed, "augs"));

  View v;
  v.meta.kind = kind;
  v.meta.view_index = view_index;
  v.meta.stream_seed = stream_seed;

  const std::size_t k_l = cfg.k_l_choices[static_cast<std::size_t>(
      window_rng.uniform_int(0, static_cast<std::int64_t>(cfg.k_l_choices.size()) - 1))];
  const double frac =
      window_rng.uniform(cfg.local_window_fraction[0], cfg.local_window_fraction[1]);
  std::size_t window_len =
      static_cast<std::size_t>(std::lround(frac * static_cast<double>(t_total)));
  if (window_len < k_l) {
    // Drawn window cannot hold k_l frames: expand to the minimum, record it.
    window_len = k_l;
    v.meta.window_expanded = true;
  }
  window_len = std::min(window_len, t_total);
  const std::size_t start = static_cast<std::size_t>(
      window_rng.uniform_int(0, static_cast<std::int64_t>(t_total - window_len)));
  v.meta.window_start = start;
  v.meta.window_len = window_len;

  v.meta.frame_indices = segment_sample(window_len, k_l, frames_rng);
  for (std::size_t& idx : v.meta.frame_indices) idx += start;

  const bool spatial = kind == ViewKind::local_spatial;
  const auto& area = spatial ? cfg.local_crop_area : cfg.global_crop_area;
  const std::size_t out_h = spatial ? cfg.local_size[0] : cfg.global_size[0];
  const std::size_t out_w = spatial ? cfg.local_size[1] : cfg.global_size[1];
  v.meta.crop = draw_crop(video.frames.extent(2), video.frames.extent(3), area, cfg.crop_aspect,
                          crop_rng);
  v.clip = assemble_clip(video, v.meta.frame_indices, v.meta.crop, out_h, out_w);
  augment(v.clip, kind, cfg.aug, augs_rng);
  return v;
}

ViewBatch build_views(const RawVideo& video, const ViewConfig& cfg) {
  ViewBatch batch;
  batch.video_id = video.id;
  std::size_t view_index = 0;
  for (std::size_t i = 0; i < cfg.n_global; ++i, ++view_index) {
    batch.globals.push_back(make_global_view(
        video, cfg, derive_seed(cfg.seed, video.id, static_cast<std::uint64_t>(view_index)),
        view_index));
  }
  for (std::size_t i = 0; i < cfg.n_lt; ++i, ++view_index) {
    batch.locals_t.push_back(make_local_view(
        video, cfg, derive_seed(cfg.seed, video.id, static_cast<std::uint64_t>(view_index)),
        view_index, ViewKind::local_temporal));
  }
  for (std::size_t i = 0; i < cfg.q; ++i, ++view_index) {
    batch.locals_s.push_back(make_local_view(
        video, cfg, derive_seed(cfg.seed, video.id, static_cast<std::uint64_t>(view_index)),
        view_index, ViewKind::local_spatial));
  }
  return batch;
}

std::vector<ViewBatch> build_view_batch(const std::vector<const RawVideo*>& videos,
                                        const ViewConfig& cfg) {
  if (videos.empty()) throw std::invalid_argument("build_view_batch: empty video list");
  cfg.validate();
  std::vector<ViewBatch> out;
  out.reserve(videos.size());
  for (const RawVideo* v : videos) out.push_back(build_views(*v, cfg));
  return out;
}

}  // namespace vsd
