// SPDX-License-Identifier: Apache-2.0
#include "vsd/model.hpp"

#include <cmath>

#include "vsd/rng.hpp"

namespace vsd {

void ModelConfig::validate() const {
  if (embed_dim == 0 || depth == 0 || heads == 0 || patch_size == 0) {
    throw std::invalid_argument("model config: zero-sized field");
  }
  if (embed_dim % heads != 0) {
    throw std::invalid_argument("model config: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (embed_dim % 4 != 0) {
    throw std::invalid_argument("model config: embed_dim must be divisible by 4 "
                                "(positional encoding splits channels per axis)");
  }
  if (mlp_ratio <= 0 || proj_hidden == 0 || proj_bottleneck == 0 || proj_out == 0) {
    throw std::invalid_argument("model config: projection sizes must be positive");
  }
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.embed_dim = 768;
  cfg.depth = 12;
  cfg.heads = 12;
  cfg.proj_hidden = 2048;
  cfg.proj_bottleneck = 256;
  cfg.proj_out = 4096;
  return cfg;
}

template <typename T>
std::vector<std::string> ModelParams<T>::names() const {
  std::vector<std::string> out;
  out.reserve(tensors.size());
  for (const auto& [k, v] : tensors) out.push_back(k);
  return out;
}

template <typename T>
bool ModelParams<T>::same_names(const ModelParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  auto a = tensors.begin();
  auto b = other.tensors.begin();
  for (; a != tensors.end(); ++a, ++b) {
    if (a->first != b->first) return false;
  }
  return true;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("model params: no tensor '" + name + "'");
  return it->second;
}

template struct ModelParams<float>;
template struct ModelParams<double>;

namespace {

Tensor<float> gaussian(Shape shape, Rng& rng, float stddev) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.normal(0.0, stddev));
  }
  return t;
}

void add_norm(ModelParams<float>& p, const std::string& prefix, std::size_t m) {
  p.tensors.emplace(prefix + ".gain", Tensor<float>::ones({m}));
  p.tensors.emplace(prefix + ".bias", Tensor<float>::zeros({m}));
}

void add_attn(ModelParams<float>& p, const std::string& prefix, std::size_t m, Rng& rng,
              bool zero_out_proj) {
  p.tensors.emplace(prefix + ".qkv.weight", gaussian({m, 3 * m}, rng, 0.02f));
  // No key bias: softmax is invariant to a per-row constant shift, so a key
  // bias is exactly redundant and its gradient identically zero.
  p.tensors.emplace(prefix + ".q.bias", Tensor<float>::zeros({m}));
  p.tensors.emplace(prefix + ".v.bias", Tensor<float>::zeros({m}));
  // Draws for the out projection happen even when zeroed so that both init
  // modes consume identical RNG state for all later parameters.
  Tensor<float> out_w = gaussian({m, m}, rng, 0.02f);
  if (zero_out_proj) out_w.fill(0.0f);
  p.tensors.emplace(prefix + ".out.weight", std::move(out_w));
  p.tensors.emplace(prefix + ".out.bias", Tensor<float>::zeros({m}));
}

}  // namespace

ModelParams<float> init_params(const ModelConfig& cfg, std::uint64_t seed,
                               bool zero_temporal_out) {
  cfg.validate();
  Rng rng(derive_seed(seed, "model-init"));
  const std::size_t m = cfg.embed_dim;
  const std::size_t mlp = static_cast<std::size_t>(
      std::lround(cfg.mlp_ratio * static_cast<double>(m)));

  ModelParams<float> p;
  p.tensors.emplace("patch.weight",
                    gaussian({cfg.patch_size * cfg.patch_size * 3, m}, rng, 0.02f));
  p.tensors.emplace("patch.bias", Tensor<float>::zeros({m}));
  p.tensors.emplace("cls.token", gaussian({m}, rng, 0.02f));
  p.tensors.emplace("cls.pos", gaussian({m}, rng, 0.02f));
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string base = "blocks." + std::to_string(b);
    add_norm(p, base + ".t_norm", m);
    add_attn(p, base + ".t_attn", m, rng, zero_temporal_out);
    add_norm(p, base + ".s_norm", m);
    add_attn(p, base + ".s_attn", m, rng, false);
    add_norm(p, base + ".mlp_norm", m);
    p.tensors.emplace(base + ".mlp.fc1.weight", gaussian({m, mlp}, rng, 0.02f));
    p.tensors.emplace(base + ".mlp.fc1.bias", Tensor<float>::zeros({mlp}));
    p.tensors.emplace(base + ".mlp.fc2.weight", gaussian({mlp, m}, rng, 0.02f));
    p.tensors.emplace(base + ".mlp.fc2.bias", Tensor<float>::zeros({m}));
  }
  add_norm(p, "final_norm", m);
  p.tensors.emplace("head.fc1.weight", gaussian({m, cfg.proj_hidden}, rng, 0.02f));
  p.tensors.emplace("head.fc1.bias", Tensor<float>::zeros({cfg.proj_hidden}));
  p.tensors.emplace("head.fc2.weight", gaussian({cfg.proj_hidden, cfg.proj_bottleneck}, rng, 0.02f));
  p.tensors.emplace("head.fc2.bias", Tensor<float>::zeros({cfg.proj_bottleneck}));
  p.tensors.emplace("head.out.weight", gaussian({cfg.proj_out, cfg.proj_bottleneck}, rng, 0.02f));
  return p;
}

TokenLayout layout_for(const ModelConfig& cfg, std::size_t k, std::size_t h, std::size_t w) {
  if (k == 0) throw std::invalid_argument("layout: zero frames");
  if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0) {
    throw std::invalid_argument("layout: patch size " + std::to_string(cfg.patch_size) +
                                " does not divide " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  return TokenLayout{k, h / cfg.patch_size, w / cfg.patch_size};
}

template <typename T>
Tensor<T> patch_rows(const Tensor<float>& clip, std::size_t patch_size) {
  if (clip.rank() != 4) throw std::invalid_argument("patch_rows: expected [K,C,H,W]");
  const std::size_t k = clip.extent(0), c = clip.extent(1), h = clip.extent(2),
                    w = clip.extent(3);
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  Tensor<T> out = Tensor<T>::uninitialized({k * gh * gw, patch_size * patch_size * c});
  T* dst = out.data();
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float* plane = clip.data() + (f * c + ch) * h * w;
          for (std::size_t dy = 0; dy < patch_size; ++dy) {
            const float* row = plane + (py * patch_size + dy) * w + px * patch_size;
            for (std::size_t dx = 0; dx < patch_size; ++dx) {
              *dst++ = static_cast<T>(row[dx]);
            }
          }
        }
      }
    }
  }
  return out;
}

template Tensor<float> patch_rows<float>(const Tensor<float>&, std::size_t);
template Tensor<double> patch_rows<double>(const Tensor<float>&, std::size_t);

template <typename T>
Tensor<T> positional_table(const TokenLayout& layout, std::size_t embed_dim) {
  const std::size_t m = embed_dim;
  const std::size_t half = m / 2;     // temporal channels
  const std::size_t quarter = m / 4;  // per spatial axis
  Tensor<T> table({layout.frames * layout.spatial(), m});

  auto coord = [](std::size_t i, std::size_t n) {
    return n <= 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
  };
  auto write_axis = [](T* row, std::size_t channels, double pos) {
    // Channel pair j carries (sin, cos) at frequency pi*(j+1); normalized
    // coordinates keep every (K, H, W) on the same table.
    for (std::size_t j = 0; j * 2 < channels; ++j) {
      const double angle = M_PI * static_cast<double>(j + 1) * pos;
      row[2 * j] = static_cast<T>(std::sin(angle));
      if (2 * j + 1 < channels) row[2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  };

  for (std::size_t f = 0; f < layout.frames; ++f) {
    const double tpos = coord(f, layout.frames);
    for (std::size_t gy = 0; gy < layout.grid_h; ++gy) {
      const double rpos = coord(gy, layout.grid_h);
      for (std::size_t gx = 0; gx < layout.grid_w; ++gx) {
        const double cpos = coord(gx, layout.grid_w);
        T* row = table.data() + ((f * layout.grid_h + gy) * layout.grid_w + gx) * m;
        write_axis(row, half, tpos);
        write_axis(row + half, quarter, rpos);
        write_axis(row + half + quarter, m - half - quarter, cpos);
      }
    }
  }
  return table;
}

template Tensor<float> positional_table<float>(const TokenLayout&, std::size_t);
template Tensor<double> positional_table<double>(const TokenLayout&, std::size_t);

template <typename T>
NodeId BoundParams<T>::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw std::invalid_argument("bound params: no tensor '" + name + "'");
  return it->second;
}

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ModelParams<T>& params, bool trainable) {
  BoundParams<T> bp;
  for (const auto& [name, tensor] : params.tensors) {
    bp.ids.emplace(name, trainable ? g.parameter(name, tensor) : g.constant(tensor, name));
  }
  return bp;
}

template struct BoundParams<float>;
template struct BoundParams<double>;
template BoundParams<float> bind_params<float>(Graph<float>&, const ModelParams<float>&, bool);
template BoundParams<double> bind_params<double>(Graph<double>&, const ModelParams<double>&, bool);

namespace {

template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId w, NodeId b) {
  return g.add(g.matmul(x, w), b);
}

// Splits [B,S,3m] into q/k/v reshaped to [B,S,heads,dh].
template <typename T>
struct Qkv {
  NodeId q, k, v;
};

// Joint q/k/v projection with biases on q and v only (keys are biasless).
template <typename T>
NodeId qkv_linear(Graph<T>& g, const BoundParams<T>& bp, const std::string& prefix, NodeId x,
                  std::size_t m) {
  NodeId zero_k = g.constant(Tensor<T>::zeros({m}), "k_bias0");
  NodeId bias = g.concat({bp.at(prefix + ".q.bias"), zero_k, bp.at(prefix + ".v.bias")}, 0);
  return g.add(g.matmul(x, bp.at(prefix + ".qkv.weight")), bias);
}

template <typename T>
Qkv<T> split_qkv(Graph<T>& g, NodeId qkv, std::size_t b, std::size_t s, std::size_t heads,
                 std::size_t dh) {
  const std::size_t m = heads * dh;
  auto part = [&](std::size_t i) {
    return g.reshape(g.slice(qkv, 2, i * m, m), {b, s, heads, dh});
  };
  return {part(0), part(1), part(2)};
}

// Scaled dot-product attention over the last two axes of [.., len, dh].
template <typename T>
NodeId attend(Graph<T>& g, NodeId q, NodeId k, NodeId v, std::size_t dh,
              NodeId* softmax_out = nullptr) {
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  NodeId logits = g.scale(g.matmul(q, g.transpose_last2(k)), inv_sqrt);
  NodeId weights = g.softmax_last(logits);
  if (softmax_out) *softmax_out = weights;
  return g.matmul(weights, v);
}

// Temporal sub-layer: each patch location attends across its frames; the
// class token attends over every token. Input/output [B,S,m].
template <typename T>
NodeId temporal_attention(Graph<T>& g, const BoundParams<T>& bp, const std::string& prefix,
                          NodeId x, std::size_t b, const TokenLayout& layout, std::size_t heads) {
  const std::size_t s = layout.seq_len();
  const std::size_t k_frames = layout.frames;
  const std::size_t ns = layout.spatial();
  const std::size_t m = g.value(x).shape().back();
  const std::size_t dh = m / heads;

  NodeId qkv = qkv_linear(g, bp, prefix, x, m);
  Qkv<T> parts = split_qkv(g, qkv, b, s, heads, dh);

  // Patch tokens: regroup to [B, N_s, heads, K, dh] so attention runs over K.
  auto patch_view = [&](NodeId t) {
    NodeId patches = g.slice(g.reshape(t, {b, s, m}), 1, 1, k_frames * ns);
    NodeId grouped = g.reshape(patches, {b, k_frames, ns, heads, dh});
    return g.permute(grouped, {0, 2, 3, 1, 4});
  };
  NodeId qp = patch_view(parts.q);
  NodeId kp = patch_view(parts.k);
  NodeId vp = patch_view(parts.v);
  NodeId patch_out = attend(g, qp, kp, vp, dh);  // [B, N_s, heads, K, dh]
  patch_out = g.reshape(g.permute(patch_out, {0, 3, 1, 2, 4}), {b, k_frames * ns, m});

  // Class token: one query against all S keys.
  auto full_view = [&](NodeId t) { return g.permute(t, {0, 2, 1, 3}); };  // [B,heads,S,dh]
  NodeId qc = g.permute(g.slice(parts.q, 1, 0, 1), {0, 2, 1, 3});        // [B,heads,1,dh]
  NodeId cls_out = attend(g, qc, full_view(parts.k), full_view(parts.v), dh);
  cls_out = g.reshape(g.permute(cls_out, {0, 2, 1, 3}), {b, 1, m});

  NodeId joined = g.concat({cls_out, patch_out}, 1);
  return linear(g, joined, bp.at(prefix + ".out.weight"), bp.at(prefix + ".out.bias"));
}

// Spatial sub-layer: per frame, patches plus a replicated class token attend
// within the frame; the K class outputs are averaged back into one token.
template <typename T>
NodeId spatial_attention(Graph<T>& g, const BoundParams<T>& bp, const std::string& prefix,
                         NodeId x, std::size_t b, const TokenLayout& layout, std::size_t heads,
                         NodeId* softmax_out) {
  const std::size_t s = layout.seq_len();
  const std::size_t k_frames = layout.frames;
  const std::size_t ns = layout.spatial();
  const std::size_t m = g.value(x).shape().back();
  const std::size_t dh = m / heads;

  NodeId qkv = qkv_linear(g, bp, prefix, x, m);
  Qkv<T> parts = split_qkv(g, qkv, b, s, heads, dh);

  // [B, K, heads, 1+N_s, dh]: class token first within each frame group.
  auto frame_view = [&](NodeId t) {
    NodeId flat = g.reshape(t, {b, s, m});
    NodeId cls = g.expand(g.reshape(g.slice(flat, 1, 0, 1), {b, 1, 1, m}), 1, k_frames);
    NodeId patches = g.reshape(g.slice(flat, 1, 1, k_frames * ns), {b, k_frames, ns, m});
    NodeId grouped = g.reshape(g.concat({cls, patches}, 2), {b, k_frames, 1 + ns, heads, dh});
    return g.permute(grouped, {0, 1, 3, 2, 4});
  };
  NodeId out = attend(g, frame_view(parts.q), frame_view(parts.k), frame_view(parts.v), dh,
                      softmax_out);
  out = g.reshape(g.permute(out, {0, 1, 3, 2, 4}), {b, k_frames, 1 + ns, m});

  NodeId cls_per_frame = g.reshape(g.slice(out, 2, 0, 1), {b, k_frames, m});
  NodeId cls_mean = g.reshape(g.reduce_mean(cls_per_frame, 1), {b, 1, m});
  NodeId patches = g.reshape(g.slice(out, 2, 1, ns), {b, k_frames * ns, m});
  NodeId joined = g.concat({cls_mean, patches}, 1);
  return linear(g, joined, bp.at(prefix + ".out.weight"), bp.at(prefix + ".out.bias"));
}

template <typename T>
NodeId norm(Graph<T>& g, const BoundParams<T>& bp, const std::string& prefix, NodeId x) {
  return g.layer_norm(x, bp.at(prefix + ".gain"), bp.at(prefix + ".bias"), static_cast<T>(1e-6));
}

}  // namespace

template <typename T>
NodeId forward_tokens(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg,
                      NodeId tokens, const TokenLayout& layout, AttnCapture* capture) {
  const Shape& ts = g.value(tokens).shape();
  if (ts.size() != 3 || ts[1] != layout.seq_len() || ts[2] != cfg.embed_dim) {
    throw std::invalid_argument("forward_tokens: tokens " + shape_str(ts) +
                                " do not match layout/config");
  }
  const std::size_t b = ts[0];
  NodeId x = tokens;
  for (std::size_t blk = 0; blk < cfg.depth; ++blk) {
    const std::string base = "blocks." + std::to_string(blk);
    x = g.add(x, temporal_attention(g, bp, base + ".t_attn", norm(g, bp, base + ".t_norm", x), b,
                                    layout, cfg.heads));
    NodeId* cap = (capture && capture->layer == static_cast<int>(blk))
                      ? &capture->spatial_softmax
                      : nullptr;
    x = g.add(x, spatial_attention(g, bp, base + ".s_attn", norm(g, bp, base + ".s_norm", x), b,
                                   layout, cfg.heads, cap));
    NodeId h = norm(g, bp, base + ".mlp_norm", x);
    h = g.gelu(linear(g, h, bp.at(base + ".mlp.fc1.weight"), bp.at(base + ".mlp.fc1.bias")));
    h = linear(g, h, bp.at(base + ".mlp.fc2.weight"), bp.at(base + ".mlp.fc2.bias"));
    x = g.add(x, h);
  }
  return norm(g, bp, "final_norm", x);
}

template <typename T>
NodeId embed_clips(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg,
                   const std::vector<const Tensor<float>*>& clips, const TokenLayout& layout) {
  if (clips.empty()) throw std::invalid_argument("embed_clips: no clips");
  const std::size_t b = clips.size();
  const std::size_t rows = layout.frames * layout.spatial();

  Tensor<T> stacked = Tensor<T>::uninitialized({b * rows, cfg.patch_size * cfg.patch_size * 3});
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor<float>& clip = *clips[i];
    if (clip.rank() != 4 || clip.extent(0) != layout.frames ||
        clip.extent(2) != layout.grid_h * cfg.patch_size ||
        clip.extent(3) != layout.grid_w * cfg.patch_size) {
      throw std::invalid_argument("embed_clips: clip " + shape_str(clip.shape()) +
                                  " does not match the batch layout");
    }
    Tensor<T> rows_i = patch_rows<T>(clip, cfg.patch_size);
    std::copy(rows_i.data(), rows_i.data() + rows_i.size(),
              stacked.data() + i * rows_i.size());
  }

  NodeId patches = linear(g, g.constant(std::move(stacked), "patch_rows"), bp.at("patch.weight"),
                          bp.at("patch.bias"));
  patches = g.reshape(patches, {b, rows, cfg.embed_dim});

  Tensor<T> pos = positional_table<T>(layout, cfg.embed_dim);
  NodeId pos_node = g.constant(
      Tensor<T>({std::size_t{1}, rows, cfg.embed_dim}, std::move(pos.vec())), "positional_table");
  patches = g.add(patches, pos_node);

  NodeId cls = g.add(bp.at("cls.token"), bp.at("cls.pos"));              // [m]
  NodeId cls_row = g.expand(g.reshape(cls, {1, 1, cfg.embed_dim}), 0, b);  // [B,1,m]
  return g.concat({cls_row, patches}, 1);
}

template <typename T>
NodeId backbone_feature(Graph<T>& g, NodeId normed_tokens) {
  const Shape& s = g.value(normed_tokens).shape();
  if (s.size() != 3) throw std::invalid_argument("backbone_feature: expected [B,S,m]");
  return g.reshape(g.slice(normed_tokens, 1, 0, 1), {s[0], s[2]});
}

template <typename T>
NodeId project_head(Graph<T>& g, const BoundParams<T>& bp, const ModelConfig& cfg, NodeId feats) {
  NodeId h = g.gelu(linear(g, feats, bp.at("head.fc1.weight"), bp.at("head.fc1.bias")));
  h = linear(g, h, bp.at("head.fc2.weight"), bp.at("head.fc2.bias"));
  h = g.l2_normalize_last(h, static_cast<T>(1e-12));
  // Weight-normalized output layer: rows of head.out.weight are directions.
  NodeId w = g.l2_normalize_last(bp.at("head.out.weight"), static_cast<T>(1e-12));
  return g.matmul(h, g.transpose_last2(w));
  (void)cfg;
}

template NodeId forward_tokens<float>(Graph<float>&, const BoundParams<float>&,
                                      const ModelConfig&, NodeId, const TokenLayout&,
                                      AttnCapture*);
template NodeId forward_tokens<double>(Graph<double>&, const BoundParams<double>&,
                                       const ModelConfig&, NodeId, const TokenLayout&,
                                       AttnCapture*);
template NodeId embed_clips<float>(Graph<float>&, const BoundParams<float>&, const ModelConfig&,
                                   const std::vector<const Tensor<float>*>&, const TokenLayout&);
template NodeId embed_clips<double>(Graph<double>&, const BoundParams<double>&,
                                    const ModelConfig&,
                                    const std::vector<const Tensor<float>*>&,
                                    const TokenLayout&);
template NodeId backbone_feature<float>(Graph<float>&, NodeId);
template NodeId backbone_feature<double>(Graph<double>&, NodeId);
template NodeId project_head<float>(Graph<float>&, const BoundParams<float>&, const ModelConfig&,
                                    NodeId);
template NodeId project_head<double>(Graph<double>&, const BoundParams<double>&,
                                     const ModelConfig&, NodeId);

namespace {

std::pair<Tensor<float>, Tensor<float>> forward_single(const ModelParams<float>& params,
                                                       const ModelConfig& cfg,
                                                       const Tensor<float>& clip) {
  cfg.validate();
  Graph<float> g;
  BoundParams<float> bp = bind_params(g, params, /*trainable=*/false);
  const TokenLayout layout = layout_for(cfg, clip.extent(0), clip.extent(2), clip.extent(3));
  NodeId tokens = forward_tokens(g, bp, cfg, embed_clips(g, bp, cfg, {&clip}, layout), layout);
  NodeId feat = backbone_feature(g, tokens);
  NodeId proj = project_head(g, bp, cfg, feat);
  Tensor<float> backbone({cfg.embed_dim}, g.value(feat).vec());
  Tensor<float> projected({cfg.proj_out}, g.value(proj).vec());
  return {std::move(projected), std::move(backbone)};
}

}  // namespace

Tensor<float> forward_features(const ModelParams<float>& params, const ModelConfig& cfg,
                               const Tensor<float>& clip) {
  return forward_single(params, cfg, clip).first;
}

Tensor<float> backbone_features(const ModelParams<float>& params, const ModelConfig& cfg,
                                const Tensor<float>& clip) {
  return forward_single(params, cfg, clip).second;
}

Tensor<float> attention_maps(const ModelParams<float>& params, const ModelConfig& cfg,
                             const Tensor<float>& clip, std::size_t layer) {
  cfg.validate();
  if (layer >= cfg.depth) {
    throw std::invalid_argument("attention_maps: layer " + std::to_string(layer) +
                                " out of range for depth " + std::to_string(cfg.depth));
  }
  Graph<float> g;
  BoundParams<float> bp = bind_params(g, params, /*trainable=*/false);
  const TokenLayout layout = layout_for(cfg, clip.extent(0), clip.extent(2), clip.extent(3));
  AttnCapture capture;
  capture.layer = static_cast<int>(layer);
  forward_tokens(g, bp, cfg, embed_clips(g, bp, cfg, {&clip}, layout), layout, &capture);
  if (capture.spatial_softmax == kNoNode) {
    throw std::logic_error("attention_maps: capture missed the requested layer");
  }
  // Softmax shape [1, K, heads, 1+N_s, 1+N_s]; class-token query is row 0 and
  // its patch attention is columns 1..N_s.
  const Tensor<float>& sm = g.value(capture.spatial_softmax);
  const std::size_t k = layout.frames, heads = cfg.heads, ns = layout.spatial();
  Tensor<float> maps({k, heads, layout.grid_h, layout.grid_w});
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const float* row = sm.data() + (((f * heads) + hd) * (1 + ns)) * (1 + ns);
      std::copy(row + 1, row + 1 + ns, maps.data() + (f * heads + hd) * ns);
    }
  }
  return maps;
}

}  // namespace vsd
