// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsd/io.hpp"
#include "vsd/model.hpp"
#include "vsd/sampling.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double momentum = 0.9;
  bool multi_view = false;   // inference-time fusion toggle
  bool use_student = false;  // extraction defaults to the EMA teacher weights
  std::uint64_t seed = 0;
  void validate() const;
};

enum class ViewMode { single, multi };

struct LinearHead {
  Tensor<float> weight;  // [classes, dim]
  Tensor<float> bias;    // [classes]
  std::size_t classes() const { return bias.size(); }
  std::size_t dim() const { return weight.rank() == 2 ? weight.extent(1) : 0; }
};

struct EvalReport {
  double mca = 0.0;
  double mpca = 0.0;
  std::size_t classes = 0;
  std::vector<std::size_t> confusion;   // [classes*classes] row-major; row = true label
  std::vector<double> per_class_recall;  // recall 0 for classes absent from the set
  std::string to_json() const;
};

// Deterministic inference views: segment-midpoint frame sampling, centered
// square crop, no augmentation. single = one (K_g, global-size) clip; multi
// additionally yields, per configured K_l, one (K_l, global-size) and one
// (K_l, local-size) clip.
std::vector<Tensor<float>> inference_clips(const RawVideo& video, const ViewConfig& vc,
                                           ViewMode mode);

// Frozen-backbone feature extraction; the feature is the class token after
// the final norm (length embed_dim), one row per inference clip.
class FeatureExtractor {
 public:
  FeatureExtractor(ModelParams<float> params, ModelConfig mc, ViewConfig vc);
  std::size_t dim() const { return mc_.embed_dim; }
  Tensor<float> extract(const RawVideo& video, ViewMode mode) const;  // [V, dim]

 private:
  ModelParams<float> params_;
  ModelConfig mc_;
  ViewConfig vc_;
};

struct ExtractedFeatures {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<Tensor<float>> rows;  // per video, [V, dim]
  std::size_t dim = 0;
  Tensor<float> first_rows() const;  // [N, dim]: row 0 of each video (the global view)
};

// Parallel across videos on shared read-only weights.
ExtractedFeatures extract_dataset(const FeatureExtractor& extractor,
                                  const std::vector<ManifestEntry>& entries,
                                  const std::filesystem::path& dataset_dir, ViewMode mode);

// Multinomial-logistic head on frozen features: SGD with momentum, cosine
// learning-rate decay, softmax cross-entropy. Deterministic per seed.
LinearHead train_linear_probe(const Tensor<float>& features, const std::vector<int>& labels,
                              std::size_t classes, const ProbeConfig& cfg);

Tensor<float> head_logits(const LinearHead& head, const Tensor<float>& features);  // [rows, classes]

// Logits are averaged across each video's view rows before the argmax, so
// multi-view fusion with identical rows reproduces single-view predictions
// exactly.
EvalReport evaluate(const LinearHead& head, const std::vector<Tensor<float>>& video_rows,
                    const std::vector<int>& labels, std::size_t classes);

// One embedding per video (view rows mean-pooled; single mode = the global
// view feature verbatim), written in manifest order.
void export_embeddings(const FeatureExtractor& extractor,
                       const std::vector<ManifestEntry>& entries,
                       const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& out_path, ViewMode mode = ViewMode::single);

}  // namespace vsd
