// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "vsd/graph.hpp"
#include "vsd/model.hpp"
#include "vsd/rng.hpp"
#include "vsd/tensor.hpp"

using namespace vsd;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.embed_dim = 32;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.proj_hidden = 48;
  cfg.proj_bottleneck = 16;
  cfg.proj_out = 24;
  cfg.validate();
  return cfg;
}

Tensor<float> random_clip(std::size_t k, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> clip = Tensor<float>::uninitialized({k, std::size_t{3}, h, w});
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = static_cast<float>(rng.uniform());
  return clip;
}

}  // namespace

TEST_CASE("model config: validation and the reference scale") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  ModelConfig bad = tiny_config();
  bad.embed_dim = 30;  // not divisible by heads=2? it is; but 30 % 4 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.patch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  ModelConfig big = ModelConfig::paper_scale();
  CHECK(big.patch_size == 16);
  CHECK(big.embed_dim == 768);
  CHECK(big.depth == 12);
  CHECK(big.heads == 12);
  CHECK_NOTHROW(big.validate());
}

TEST_CASE("layout: token counts for the reference resolutions") {
  ModelConfig cfg;
  cfg.patch_size = 16;
  TokenLayout big = layout_for(cfg, 8, 224, 224);
  CHECK(big.spatial() == 196);
  CHECK(big.grid_h == 14);
  CHECK(big.grid_w == 14);
  CHECK(big.seq_len() == 1 + 8 * 196);

  TokenLayout small = layout_for(cfg, 8, 96, 96);
  CHECK(small.spatial() == 36);
  CHECK(small.seq_len() == 1 + 8 * 36);

  CHECK_THROWS_AS(layout_for(cfg, 8, 100, 96), std::invalid_argument);
  CHECK_THROWS_AS(layout_for(cfg, 0, 96, 96), std::invalid_argument);
}

TEST_CASE("patch_rows: exact pixel gather for one patch") {
  // 1 frame, 3x2x2 pixels, patch 2: a single row of 12 values, channel-major.
  Tensor<float> clip = Tensor<float>::uninitialized({1, 3, 2, 2});
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = static_cast<float>(i);
  Tensor<double> rows = patch_rows<double>(clip, 2);
  REQUIRE(rows.shape() == Shape{1, 12});
  for (std::size_t i = 0; i < 12; ++i) CHECK(rows[i] == static_cast<double>(i));
}

TEST_CASE("patch_rows: frame-major, row-major patch order") {
  const std::size_t k = 2, h = 4, w = 4, p = 2;
  Tensor<float> clip = random_clip(k, h, w, 3);
  Tensor<float> rows = patch_rows<float>(clip, p);
  REQUIRE(rows.shape() == Shape{k * 4, 3 * p * p});
  // Row for frame f, patch (py, px) holds clip[f, c, py*2+dy, px*2+dx].
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t py = 0; py < 2; ++py) {
      for (std::size_t px = 0; px < 2; ++px) {
        const std::size_t row = (f * 4 + py * 2 + px) * 12;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              const float want = clip[((f * 3 + c) * h + py * 2 + dy) * w + px * 2 + dx];
              CHECK(rows[row + (c * p + dy) * p + dx] == want);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("positional_table: normalized coordinates share one table family") {
  TokenLayout layout;
  layout.frames = 4;
  layout.grid_h = 3;
  layout.grid_w = 3;
  Tensor<double> table = positional_table<double>(layout, 32);
  REQUIRE(table.shape() == Shape{4 * 9, 32});
  // Values are sines/cosines: bounded by 1.
  for (std::size_t i = 0; i < table.size(); ++i) CHECK(std::abs(table[i]) <= 1.0);

  // Same normalized temporal coordinate => same temporal half, regardless of
  // frame count. Frame 1 of 3 and frame 2 of 5 both sit at t = 0.5.
  TokenLayout l3 = layout;
  l3.frames = 3;
  TokenLayout l5 = layout;
  l5.frames = 5;
  Tensor<double> t3 = positional_table<double>(l3, 32);
  Tensor<double> t5 = positional_table<double>(l5, 32);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(t3[(1 * 9 + 0) * 32 + c] == doctest::Approx(t5[(2 * 9 + 0) * 32 + c]).epsilon(1e-12));
  }
  // Same spatial cell => identical spatial half across different frames.
  for (std::size_t c = 16; c < 32; ++c) {
    CHECK(t3[(0 * 9 + 4) * 32 + c] == t3[(2 * 9 + 4) * 32 + c]);
  }
}

TEST_CASE("params: init produces the documented name set and shapes") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 5);
  std::set<std::string> names(params.names().begin(), params.names().end());

  CHECK(names.count("patch.weight") == 1);
  CHECK(names.count("patch.bias") == 1);
  CHECK(names.count("cls.token") == 1);
  CHECK(names.count("cls.pos") == 1);
  CHECK(names.count("final_norm.gain") == 1);
  CHECK(names.count("head.out.weight") == 1);
  CHECK(names.count("head.out.bias") == 0);  // weight-normalized, no bias
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    for (const char* attn : {"t_attn.", "s_attn."}) {
      CHECK(names.count(pre + attn + "qkv.weight") == 1);
      CHECK(names.count(pre + attn + "q.bias") == 1);
      CHECK(names.count(pre + attn + "v.bias") == 1);
      CHECK(names.count(pre + attn + "out.weight") == 1);
      CHECK(names.count(pre + attn + "out.bias") == 1);
      // No key bias anywhere: softmax cancels a constant key offset.
      CHECK(names.count(pre + attn + "k.bias") == 0);
      CHECK(names.count(pre + attn + "qkv.bias") == 0);
    }
    CHECK(names.count(pre + "t_norm.gain") == 1);
    CHECK(names.count(pre + "s_norm.bias") == 1);
    CHECK(names.count(pre + "mlp.fc1.weight") == 1);
    CHECK(names.count(pre + "mlp.fc2.bias") == 1);
  }
  CHECK(params.at("patch.weight").shape() ==
        Shape{cfg.patch_size * cfg.patch_size * 3, cfg.embed_dim});
  CHECK(params.at("head.out.weight").shape() == Shape{cfg.proj_out, cfg.proj_bottleneck});
  CHECK_THROWS_AS(params.at("no.such.tensor"), std::invalid_argument);

  // Same config, same seed: identical bits. Different seed: different bits.
  ModelParams<float> again = init_params(cfg, 5);
  CHECK(params.same_names(again));
  for (const auto& [name, t] : params.tensors) {
    const Tensor<float>& u = again.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == u[i]);
  }
  ModelParams<float> other = init_params(cfg, 6);
  CHECK(params.same_names(other));
  bool any_diff = false;
  for (const auto& [name, t] : params.tensors) {
    const Tensor<float>& u = other.at(name);
    for (std::size_t i = 0; i < t.size() && !any_diff; ++i) any_diff = t[i] != u[i];
  }
  CHECK(any_diff);
}

TEST_CASE("params: temporal out projections start at zero unless disabled") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 5);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const Tensor<float>& w = params.at("blocks." + std::to_string(b) + ".t_attn.out.weight");
    for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(w[i] == 0.0f);
  }
  ModelParams<float> live = init_params(cfg, 5, false);
  const Tensor<float>& w0 = live.at("blocks.0.t_attn.out.weight");
  bool nonzero = false;
  for (std::size_t i = 0; i < w0.size(); ++i) nonzero = nonzero || w0[i] != 0.0f;
  CHECK(nonzero);

  // Both init modes consume identical draws: every other tensor matches bits.
  for (const auto& [name, t] : params.tensors) {
    if (name.find("t_attn.out.weight") != std::string::npos) continue;
    const Tensor<float>& u = live.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == u[i]);
  }
}

TEST_CASE("forward: one parameter set serves every clip geometry") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 11);
  for (std::size_t k : {2, 3, 5}) {
    for (std::size_t side : {8, 16, 24}) {
      Tensor<float> clip = random_clip(k, side, side, derive_seed(1, k, side));
      Tensor<float> f = forward_features(params, cfg, clip);
      REQUIRE(f.shape() == Shape{cfg.proj_out});
      CHECK(f.all_finite());
      Tensor<float> b = backbone_features(params, cfg, clip);
      REQUIRE(b.shape() == Shape{cfg.embed_dim});
      CHECK(b.all_finite());
    }
  }
}

TEST_CASE("forward: batched and single-clip paths agree") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 11);
  Tensor<float> c0 = random_clip(3, 16, 16, 21);
  Tensor<float> c1 = random_clip(3, 16, 16, 22);

  Graph<float> g;
  BoundParams<float> bp = bind_params(g, params, false);
  TokenLayout layout = layout_for(cfg, 3, 16, 16);
  NodeId tokens = embed_clips(g, bp, cfg, {&c0, &c1}, layout);
  NodeId normed = forward_tokens(g, bp, cfg, tokens, layout);
  NodeId feats = backbone_feature(g, normed);
  NodeId proj = project_head(g, bp, cfg, feats);
  const Tensor<float>& batch = g.value(proj);
  REQUIRE(batch.shape() == Shape{2, cfg.proj_out});

  Tensor<float> f0 = forward_features(params, cfg, c0);
  Tensor<float> f1 = forward_features(params, cfg, c1);
  for (std::size_t i = 0; i < cfg.proj_out; ++i) {
    CHECK(batch[i] == doctest::Approx(f0[i]).epsilon(1e-5));
    CHECK(batch[cfg.proj_out + i] == doctest::Approx(f1[i]).epsilon(1e-5));
  }
}

TEST_CASE("forward: projected features are deterministic and input-sensitive") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 11);
  Tensor<float> clip = random_clip(3, 16, 16, 31);
  Tensor<float> a = forward_features(params, cfg, clip);
  Tensor<float> b = forward_features(params, cfg, clip);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);

  Tensor<float> other = clip;
  other[0] += 0.25f;
  Tensor<float> c = forward_features(params, cfg, other);
  bool diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) diff = diff || a[i] != c[i];
  CHECK(diff);
}

TEST_CASE("attention: class-token map shape and row mass") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 11, false);
  Tensor<float> clip = random_clip(3, 16, 16, 41);
  for (std::size_t layer : {std::size_t{0}, cfg.depth - 1}) {
    Tensor<float> maps = attention_maps(params, cfg, clip, layer);
    REQUIRE(maps.shape() == Shape{3, cfg.heads, 2, 2});
    // Patch mass plus the class token's self-weight is exactly one.
    for (std::size_t f = 0; f < 3; ++f) {
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        double mass = 0;
        for (std::size_t i = 0; i < 4; ++i) mass += maps[(f * cfg.heads + h) * 4 + i];
        CHECK(mass > 0.0);
        CHECK(mass < 1.0);
      }
    }
  }
  CHECK_THROWS_AS(attention_maps(params, cfg, clip, cfg.depth), std::invalid_argument);
}

TEST_CASE("backbone: gradients reach every trainable parameter") {
  ModelConfig cfg = tiny_config();
  // Temporal outs start live so their whole branch carries gradient.
  ModelParams<double> params = init_params(cfg, 7, false).cast<double>();
  Tensor<float> clip = random_clip(2, 8, 8, 51);

  Graph<double> g;
  BoundParams<double> bp = bind_params(g, params, true);
  TokenLayout layout = layout_for(cfg, 2, 8, 8);
  NodeId tokens = embed_clips(g, bp, cfg, {&clip}, layout);
  NodeId normed = forward_tokens(g, bp, cfg, tokens, layout);
  NodeId proj = project_head(g, bp, cfg, backbone_feature(g, normed));
  g.backward(g.sum_all(g.mul(proj, proj)));

  for (const auto& [name, id] : bp.ids) {
    CAPTURE(name);
    REQUIRE(g.has_grad(id));
    const Tensor<double>& grad = g.grad(id);
    bool nonzero = false;
    for (std::size_t i = 0; i < grad.size() && !nonzero; ++i) nonzero = grad[i] != 0.0;
    CHECK(nonzero);
  }
}

TEST_CASE("backbone: teacher binding never accumulates gradients") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 7);
  Tensor<float> clip = random_clip(2, 8, 8, 51);

  Graph<float> g;
  BoundParams<float> bp = bind_params(g, params, false);
  TokenLayout layout = layout_for(cfg, 2, 8, 8);
  NodeId tokens = embed_clips(g, bp, cfg, {&clip}, layout);
  NodeId proj = project_head(g, bp, cfg, backbone_feature(g, forward_tokens(g, bp, cfg, tokens, layout)));
  g.backward(g.sum_all(g.mul(proj, proj)));
  for (const auto& [name, id] : bp.ids) {
    CAPTURE(name);
    CHECK_FALSE(g.has_grad(id));
  }
}

TEST_CASE("projection head: bottleneck rows are unit length before the last linear") {
  // The head ends in a weight-normalized linear over an L2-normalized
  // bottleneck, so outputs are bounded by the weight-norm gain structure:
  // check finiteness and scale stability across wildly scaled inputs.
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 13);
  Tensor<float> clip = random_clip(2, 8, 8, 61);
  Tensor<float> base = forward_features(params, cfg, clip);

  Tensor<float> scaled_clip = clip;
  for (std::size_t i = 0; i < scaled_clip.size(); ++i) scaled_clip[i] *= 0.5f;
  Tensor<float> half = forward_features(params, cfg, scaled_clip);
  CHECK(base.all_finite());
  CHECK(half.all_finite());
  // L2 normalization upstream keeps magnitudes comparable.
  double nb = 0, nh = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    nb += base[i] * base[i];
    nh += half[i] * half[i];
  }
  CHECK(std::sqrt(nb) < 100.0);
  CHECK(std::sqrt(nh) < 100.0);
}

TEST_CASE("embed: token sequence is class token plus positioned patches") {
  ModelConfig cfg = tiny_config();
  ModelParams<float> params = init_params(cfg, 17);
  Tensor<float> clip = random_clip(2, 16, 8, 71);
  Graph<float> g;
  BoundParams<float> bp = bind_params(g, params, false);
  TokenLayout layout = layout_for(cfg, 2, 16, 8);
  CHECK(layout.grid_h == 2);
  CHECK(layout.grid_w == 1);
  NodeId tokens = embed_clips(g, bp, cfg, {&clip}, layout);
  CHECK(g.value(tokens).shape() == Shape{1, layout.seq_len(), cfg.embed_dim});

  // Token 0 is cls.token + cls.pos, independent of pixels.
  const Tensor<float>& cls_tok = params.at("cls.token");
  const Tensor<float>& cls_pos = params.at("cls.pos");
  for (std::size_t i = 0; i < cfg.embed_dim; ++i) {
    CHECK(g.value(tokens)[i] == cls_tok[i] + cls_pos[i]);
  }

  CHECK_THROWS_AS(embed_clips(g, bp, cfg, {}, layout), std::invalid_argument);
  Tensor<float> wrong = random_clip(3, 16, 8, 72);
  CHECK_THROWS_AS(embed_clips(g, bp, cfg, {&wrong}, layout), std::invalid_argument);
}
