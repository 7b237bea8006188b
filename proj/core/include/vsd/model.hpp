// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vsd/graph.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

struct ModelConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 96;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  // Advisory capacity hints; normalized positional encodings impose no hard
  // cap, so larger token counts still forward correctly.
  std::size_t max_spatial_tokens = 196;
  std::size_t max_temporal_tokens = 16;
  std::size_t proj_hidden = 192;
  std::size_t proj_bottleneck = 64;
  std::size_t proj_out = 256;  // n, the loss/feature dimension

  void validate() const;
  static ModelConfig paper_scale();  // ViT-Base shape: m=768, depth 12, P=16
};

// Flat named parameter map. Two instances built from the same config always
// share the exact name set; the EMA update depends on that.
template <typename T>
struct ModelParams {
  std::map<std::string, Tensor<T>> tensors;

  std::vector<std::string> names() const;
  bool same_names(const ModelParams& other) const;
  const Tensor<T>& at(const std::string& name) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [k, v] : tensors) out.tensors.emplace(k, v.template cast<U>());
    return out;
  }
};

// Gaussian init (std 0.02), unit layer-norm gains, zero biases. With
// zero_temporal_out the temporal attention output projections start at zero
// so each block begins as a spatial-only transformer; pass false when every
// parameter must have a nonzero gradient path (e.g. gradient checking).
ModelParams<float> init_params(const ModelConfig& cfg, std::uint64_t seed,
                               bool zero_temporal_out = true);

struct TokenLayout {
  std::size_t frames = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t spatial() const { return grid_h * grid_w; }
  std::size_t seq_len() const { return 1 + frames * spatial(); }
};

TokenLayout layout_for(const ModelConfig& cfg, std::size_t k, std::size_t h, std::size_t w);

// [K*N_s, P*P*C] rows in frame-major, row-major patch order.
template <typename T>
Tensor<T> patch_rows(const Tensor<float>& clip, std::size_t patch_size);

// Fixed sinusoidal table [K*N_s, m] from normalized coordinates: temporal
// position t/(K-1) on the first half of the channels, (row, col) each in
// [0,1] on a quarter apiece. Any (K, H, W) shares one parameter set because
// coordinates, not absolute indices, address the table.
template <typename T>
Tensor<T> positional_table(const TokenLayout& layout, std::size_t embed_dim);

// Parameters bound into a graph; `trainable` picks parameter vs constant
// leaves (the teacher binds constants, so no gradient ever reaches it).
template <typename T>
struct BoundParams {
  std::map<std::string, NodeId> ids;
  NodeId at(const std::string& name) const;
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ModelParams<T>& params, bool trainable);

// Captures the spatial-attention softmax of one block:
// shape [B, K, heads, 1+N_s, 1+N_s], query index 0 is the class token.
struct AttnCapture {
  int layer = -1;
  NodeId spatial_softmax = kNoNode;
};

// Runs depth blocks plus the final norm over [B, seq, m] tokens (class token
// at index 0) and returns the normed token node of the same shape.
template <typename T>
NodeId forward_tokens(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg,
                      NodeId tokens, const TokenLayout& layout, AttnCapture* capture = nullptr);

// Patch-embeds clips of one shared shape into [B, seq, m] (projection, class
// token, positional encodings) ready for forward_tokens.
template <typename T>
NodeId embed_clips(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg,
                   const std::vector<const Tensor<float>*>& clips, const TokenLayout& layout);

// Class token after the final norm: [B, m].
template <typename T>
NodeId backbone_feature(Graph<T>& g, NodeId normed_tokens);

// Projection head over [B, m] features: linear, GELU, linear, L2-normalized
// bottleneck, weight-normalized linear to n. Returns [B, n].
template <typename T>
NodeId project_head(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg, NodeId feats);

// One-clip conveniences building a private graph.
Tensor<float> forward_features(const ModelParams<float>& params, const ModelConfig& cfg,
                               const Tensor<float>& clip);  // projected f, [n]
Tensor<float> backbone_features(const ModelParams<float>& params, const ModelConfig& cfg,
                                const Tensor<float>& clip);  // class token, [m]

// Per-frame, per-head class-token spatial attention at one layer:
// [K, heads, H/P, W/P]. Row mass over patches is <= 1 because the class
// token also attends to itself.
Tensor<float> attention_maps(const ModelParams<float>& params, const ModelConfig& cfg,
                             const Tensor<float>& clip, std::size_t layer);

}  // namespace vsd
