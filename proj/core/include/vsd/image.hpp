// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "vsd/tensor.hpp"

namespace vsd {

// Pixel-space crop rectangle, always fully inside the source frame.
struct CropRect {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t h = 0;
  std::size_t w = 0;
};

// Bilinear sampling of a [C,H,W] frame restricted to `rect`, resized to
// (out_h, out_w). Convention: align_corners = false, i.e. source coordinate
// = rect_origin + (dst + 0.5) * rect_extent / out_extent - 0.5, with edge
// clamping. A full-frame rect reproduces a plain resize bit-for-bit.
Tensor<float> crop_resize(const Tensor<float>& chw, CropRect rect, std::size_t out_h,
                          std::size_t out_w);

Tensor<float> bilinear_resize(const Tensor<float>& chw, std::size_t out_h, std::size_t out_w);

// Clip ops below take [T,C,H,W] with C=3 and values in [0,1]; one factor is
// applied identically to every frame. All clamp their output back to [0,1].
void adjust_brightness(Tensor<float>& clip, float factor);
void adjust_contrast(Tensor<float>& clip, float factor);    // per-frame gray mean pivot
void adjust_saturation(Tensor<float>& clip, float factor);  // blend with per-pixel gray
void adjust_hue(Tensor<float>& clip, float delta);          // delta in turns, |delta| <= 0.5
void to_grayscale(Tensor<float>& clip);
void gaussian_blur(Tensor<float>& clip, float sigma);  // separable, replicated borders
void solarize(Tensor<float>& clip, float threshold);
void clamp01(Tensor<float>& clip);

}  // namespace vsd
