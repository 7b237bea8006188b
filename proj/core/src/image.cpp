// SPDX-License-Identifier: Apache-2.0
#include "vsd/image.hpp"

#include <algorithm>
#include <cmath>

namespace vsd {

namespace {

void require_chw(const Tensor<float>& t, const char* who) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(who) + ": expected [C,H,W]");
}

void require_clip(const Tensor<float>& t, const char* who) {
  if (t.rank() != 4 || t.extent(1) != 3) {
    throw std::invalid_argument(std::string(who) + ": expected [T,3,H,W], got " +
                                shape_str(t.shape()));
  }
}

inline float clamp01f(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// Luma weights shared by grayscale, saturation, and contrast.
constexpr float kLumaR = 0.299f;
constexpr float kLumaG = 0.587f;
constexpr float kLumaB = 0.114f;

}  // namespace

Tensor<float> crop_resize(const Tensor<float>& chw, CropRect rect, std::size_t out_h,
                          std::size_t out_w) {
  require_chw(chw, "crop_resize");
  const std::size_t c = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
  if (rect.h == 0 || rect.w == 0 || rect.y + rect.h > h || rect.x + rect.w > w) {
    throw std::invalid_argument("crop_resize: rect outside source frame");
  }
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("crop_resize: empty output");

  Tensor<float> out = Tensor<float>::uninitialized({c, out_h, out_w});
  const float sy = static_cast<float>(rect.h) / static_cast<float>(out_h);
  const float sx = static_cast<float>(rect.w) / static_cast<float>(out_w);
  const float last_y = static_cast<float>(h - 1);
  const float last_x = static_cast<float>(w - 1);

  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const float fy = std::clamp(
        static_cast<float>(rect.y) + (static_cast<float>(oy) + 0.5f) * sy - 0.5f, 0.0f, last_y);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const float wy = fy - static_cast<float>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const float fx = std::clamp(
          static_cast<float>(rect.x) + (static_cast<float>(ox) + 0.5f) * sx - 0.5f, 0.0f, last_x);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const float wx = fx - static_cast<float>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = chw.data() + ch * h * w;
        const float v00 = plane[y0 * w + x0];
        const float v01 = plane[y0 * w + x1];
        const float v10 = plane[y1 * w + x0];
        const float v11 = plane[y1 * w + x1];
        const float top = v00 + (v01 - v00) * wx;
        const float bot = v10 + (v11 - v10) * wx;
        out.data()[(ch * out_h + oy) * out_w + ox] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

Tensor<float> bilinear_resize(const Tensor<float>& chw, std::size_t out_h, std::size_t out_w) {
  require_chw(chw, "bilinear_resize");
  return crop_resize(chw, {0, 0, chw.extent(1), chw.extent(2)}, out_h, out_w);
}

void adjust_brightness(Tensor<float>& clip, float factor) {
  require_clip(clip, "adjust_brightness");
  float* p = clip.data();
  for (std::size_t i = 0; i < clip.size(); ++i) p[i] = clamp01f(p[i] * factor);
}

void adjust_contrast(Tensor<float>& clip, float factor) {
  require_clip(clip, "adjust_contrast");
  const std::size_t t = clip.extent(0), hw = clip.extent(2) * clip.extent(3);
  for (std::size_t f = 0; f < t; ++f) {
    float* r = clip.data() + f * 3 * hw;
    float* g = r + hw;
    float* b = g + hw;
    double mean = 0;
    for (std::size_t i = 0; i < hw; ++i) mean += kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
    const float pivot = static_cast<float>(mean / static_cast<double>(hw));
    for (std::size_t i = 0; i < hw; ++i) {
      r[i] = clamp01f(pivot + (r[i] - pivot) * factor);
      g[i] = clamp01f(pivot + (g[i] - pivot) * factor);
      b[i] = clamp01f(pivot + (b[i] - pivot) * factor);
    }
  }
}

void adjust_saturation(Tensor<float>& clip, float factor) {
  require_clip(clip, "adjust_saturation");
  const std::size_t t = clip.extent(0), hw = clip.extent(2) * clip.extent(3);
  for (std::size_t f = 0; f < t; ++f) {
    float* r = clip.data() + f * 3 * hw;
    float* g = r + hw;
    float* b = g + hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const float gray = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
      r[i] = clamp01f(gray + (r[i] - gray) * factor);
      g[i] = clamp01f(gray + (g[i] - gray) * factor);
      b[i] = clamp01f(gray + (b[i] - gray) * factor);
    }
  }
}

void adjust_hue(Tensor<float>& clip, float delta) {
  require_clip(clip, "adjust_hue");
  if (std::abs(delta) > 0.5f) throw std::invalid_argument("adjust_hue: |delta| must be <= 0.5");
  const std::size_t t = clip.extent(0), hw = clip.extent(2) * clip.extent(3);
  for (std::size_t f = 0; f < t; ++f) {
    float* r = clip.data() + f * 3 * hw;
    float* g = r + hw;
    float* b = g + hw;
    for (std::size_t i = 0; i < hw; ++i) {
      // RGB -> HSV
      const float mx = std::max({r[i], g[i], b[i]});
      const float mn = std::min({r[i], g[i], b[i]});
      const float v = mx;
      const float c = mx - mn;
      float hdeg = 0.0f;
      if (c > 0.0f) {
        if (mx == r[i]) {
          hdeg = std::fmod((g[i] - b[i]) / c, 6.0f);
        } else if (mx == g[i]) {
          hdeg = (b[i] - r[i]) / c + 2.0f;
        } else {
          hdeg = (r[i] - g[i]) / c + 4.0f;
        }
        hdeg *= 60.0f;
        if (hdeg < 0.0f) hdeg += 360.0f;
      }
      const float s = mx > 0.0f ? c / mx : 0.0f;
      // shift hue and convert back
      hdeg = std::fmod(hdeg + delta * 360.0f + 360.0f, 360.0f);
      const float hh = hdeg / 60.0f;
      const float x = c * (1.0f - std::abs(std::fmod(hh, 2.0f) - 1.0f));
      float rr = 0, gg = 0, bb = 0;
      if (hh < 1.0f) {
        rr = c; gg = x;
      } else if (hh < 2.0f) {
        rr = x; gg = c;
      } else if (hh < 3.0f) {
        gg = c; bb = x;
      } else if (hh < 4.0f) {
        gg = x; bb = c;
      } else if (hh < 5.0f) {
        rr = x; bb = c;
      } else {
        rr = c; bb = x;
      }
      const float m = v - c;
      (void)s;
      r[i] = clamp01f(rr + m);
      g[i] = clamp01f(gg + m);
      b[i] = clamp01f(bb + m);
    }
  }
}

void to_grayscale(Tensor<float>& clip) {
  require_clip(clip, "to_grayscale");
  const std::size_t t = clip.extent(0), hw = clip.extent(2) * clip.extent(3);
  for (std::size_t f = 0; f < t; ++f) {
    float* r = clip.data() + f * 3 * hw;
    float* g = r + hw;
    float* b = g + hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const float gray = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
      r[i] = gray;
      g[i] = gray;
      b[i] = gray;
    }
  }
}

void gaussian_blur(Tensor<float>& clip, float sigma) {
  require_clip(clip, "gaussian_blur");
  if (!(sigma > 0.0f)) return;
  const std::size_t t = clip.extent(0), h = clip.extent(2), w = clip.extent(3);
  const std::size_t radius = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.5f * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float sum = 0;
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const float d = static_cast<float>(i) - static_cast<float>(radius);
    kernel[i] = std::exp(-0.5f * d * d / (sigma * sigma));
    sum += kernel[i];
  }
  for (float& k : kernel) k /= sum;

  std::vector<float> tmp(h * w);
  const auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, n - 1));
  };
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      float* plane = clip.data() + (f * 3 + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          float acc = 0;
          for (std::size_t i = 0; i < kernel.size(); ++i) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + i) -
                                               static_cast<std::ptrdiff_t>(radius),
                                           static_cast<std::ptrdiff_t>(w));
            acc += kernel[i] * plane[y * w + sx];
          }
          tmp[y * w + x] = acc;
        }
      }
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          float acc = 0;
          for (std::size_t i = 0; i < kernel.size(); ++i) {
            const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + i) -
                                               static_cast<std::ptrdiff_t>(radius),
                                           static_cast<std::ptrdiff_t>(h));
            acc += kernel[i] * tmp[sy * w + x];
          }
          plane[y * w + x] = clamp01f(acc);
        }
      }
    }
  }
}

void solarize(Tensor<float>& clip, float threshold) {
  require_clip(clip, "solarize");
  float* p = clip.data();
  for (std::size_t i = 0; i < clip.size(); ++i) {
    if (p[i] >= threshold) p[i] = clamp01f(1.0f - p[i]);
  }
}

void clamp01(Tensor<float>& clip) {
  float* p = clip.data();
  for (std::size_t i = 0; i < clip.size(); ++i) p[i] = clamp01f(p[i]);
}

}  // namespace vsd
