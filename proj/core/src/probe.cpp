// SPDX-License-Identifier: Apache-2.0
#include "vsd/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "vsd/image.hpp"
#include "vsd/parallel.hpp"
#include "vsd/rng.hpp"

namespace vsd {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<std::size_t> midpoint_indices(std::size_t t_total, std::size_t k) {
  if (k == 0 || k > t_total) throw std::invalid_argument("inference sampling: bad frame count");
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t lo = i * t_total / k;
    const std::size_t hi = (i + 1) * t_total / k;  // exclusive, > lo
    out[i] = (lo + hi - 1) / 2;
  }
  return out;
}

Tensor<float> assemble_clip(const RawVideo& video, const std::vector<std::size_t>& indices,
                            CropRect rect, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = video.frames.extent(2), w = video.frames.extent(3);
  Tensor<float> clip({indices.size(), 3, out_h, out_w});
  Tensor<float> frame({3, h, w});
  const std::size_t frame_elems = 3 * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = video.frames.data() + indices[i] * frame_elems;
    std::copy(src, src + frame_elems, frame.data());
    const Tensor<float> resized = crop_resize(frame, rect, out_h, out_w);
    std::copy(resized.data(), resized.data() + resized.size(),
              clip.data() + i * 3 * out_h * out_w);
  }
  return clip;
}

}  // namespace

void ProbeConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("probe: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("probe: batch_size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("probe: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("probe: momentum must lie in [0,1)");
}

std::vector<Tensor<float>> inference_clips(const RawVideo& video, const ViewConfig& vc,
                                           ViewMode mode) {
  const std::size_t h = video.frames.extent(2), w = video.frames.extent(3);
  const std::size_t t_total = video.frames.extent(0);
  const std::size_t side = std::min(h, w);
  const CropRect center{(h - side) / 2, (w - side) / 2, side, side};

  std::vector<Tensor<float>> clips;
  clips.push_back(assemble_clip(video, midpoint_indices(t_total, vc.k_g), center,
                                vc.global_size[0], vc.global_size[1]));
  if (mode == ViewMode::multi) {
    for (std::size_t k : vc.k_l_choices)
      clips.push_back(assemble_clip(video, midpoint_indices(t_total, k), center,
                                    vc.global_size[0], vc.global_size[1]));
    for (std::size_t k : vc.k_l_choices)
      clips.push_back(assemble_clip(video, midpoint_indices(t_total, k), center,
                                    vc.local_size[0], vc.local_size[1]));
  }
  return clips;
}

FeatureExtractor::FeatureExtractor(ModelParams<float> params, ModelConfig mc, ViewConfig vc)
    : params_(std::move(params)), mc_(mc), vc_(vc) {
  mc_.validate();
  vc_.validate();
}

Tensor<float> FeatureExtractor::extract(const RawVideo& video, ViewMode mode) const {
  const std::vector<Tensor<float>> clips = inference_clips(video, vc_, mode);
  Tensor<float> out({clips.size(), mc_.embed_dim});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Tensor<float> f = backbone_features(params_, mc_, clips[i]);
    std::copy(f.data(), f.data() + f.size(), out.data() + i * mc_.embed_dim);
  }
  return out;
}

Tensor<float> ExtractedFeatures::first_rows() const {
  Tensor<float> out({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].data(), rows[i].data() + dim, out.data() + i * dim);
  return out;
}

ExtractedFeatures extract_dataset(const FeatureExtractor& extractor,
                                  const std::vector<ManifestEntry>& entries,
                                  const std::filesystem::path& dataset_dir, ViewMode mode) {
  ExtractedFeatures out;
  out.dim = extractor.dim();
  out.ids.resize(entries.size());
  out.labels.resize(entries.size());
  out.rows.resize(entries.size());
  parallel_for(entries.size(), 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const RawVideo video = load_video(dataset_dir, entries[i]);
      out.ids[i] = entries[i].id;
      out.labels[i] = entries[i].label;
      out.rows[i] = extractor.extract(video, mode);
    }
  });
  return out;
}

LinearHead train_linear_probe(const Tensor<float>& features, const std::vector<int>& labels,
                              std::size_t classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || features.extent(0) == 0)
    throw std::invalid_argument("probe: features must be a nonempty [N, dim] matrix");
  const std::size_t n = features.extent(0), d = features.extent(1);
  if (labels.size() != n) throw std::invalid_argument("probe: labels length mismatch");
  if (classes < 2) throw std::invalid_argument("probe: need at least 2 classes");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw std::invalid_argument("probe: label outside [0, classes)");

  LinearHead head{Tensor<float>({classes, d}), Tensor<float>({classes})};
  Tensor<float> buf_w({classes, d}), buf_b({classes});  // momentum buffers

  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  std::vector<std::size_t> order(n);
  std::vector<double> z(classes);
  Tensor<float> grad_w({classes, d});
  std::vector<float> grad_b(classes);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "probe-shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order[i], order[j]);
    }
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const double t = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1)
                                       : 0.0;
      const double lr_t = cfg.lr * 0.5 * (1.0 + std::cos(kPi * t));

      grad_w.fill(0.0f);
      std::fill(grad_b.begin(), grad_b.end(), 0.0f);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t s = lo; s < hi; ++s) {
        const float* x = features.data() + order[s] * d;
        for (std::size_t c = 0; c < classes; ++c) {
          double acc = head.bias[c];
          const float* wrow = head.weight.data() + c * d;
          for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(wrow[j]) * x[j];
          z[c] = acc;
        }
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
          z[c] = std::exp(z[c] - zmax);
          denom += z[c];
        }
        const auto y = static_cast<std::size_t>(labels[order[s]]);
        for (std::size_t c = 0; c < classes; ++c) {
          const double delta = (z[c] / denom - (c == y ? 1.0 : 0.0)) * inv;
          float* grow = grad_w.data() + c * d;
          for (std::size_t j = 0; j < d; ++j)
            grow[j] += static_cast<float>(delta * static_cast<double>(x[j]));
          grad_b[c] += static_cast<float>(delta);
        }
      }
      const auto mu = static_cast<float>(cfg.momentum);
      for (std::size_t j = 0; j < buf_w.size(); ++j) {
        buf_w[j] = mu * buf_w[j] + grad_w[j];
        head.weight[j] -= static_cast<float>(lr_t) * buf_w[j];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        buf_b[c] = mu * buf_b[c] + grad_b[c];
        head.bias[c] -= static_cast<float>(lr_t) * buf_b[c];
      }
      ++step;
    }
  }
  return head;
}

Tensor<float> head_logits(const LinearHead& head, const Tensor<float>& features) {
  if (features.rank() != 2 || features.extent(1) != head.dim())
    throw std::invalid_argument("probe: feature dim does not match head");
  const std::size_t rows = features.extent(0), classes = head.classes(), d = head.dim();
  Tensor<float> logits({rows, classes});
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = features.data() + r * d;
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = head.bias[c];
      const float* wrow = head.weight.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(wrow[j]) * x[j];
      logits[r * classes + c] = static_cast<float>(acc);
    }
  }
  return logits;
}

EvalReport evaluate(const LinearHead& head, const std::vector<Tensor<float>>& video_rows,
                    const std::vector<int>& labels, std::size_t classes) {
  if (video_rows.size() != labels.size())
    throw std::invalid_argument("evaluate: rows/labels length mismatch");
  if (video_rows.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (head.classes() != classes) throw std::invalid_argument("evaluate: head class count mismatch");

  EvalReport rep;
  rep.classes = classes;
  rep.confusion.assign(classes * classes, 0);
  for (std::size_t i = 0; i < video_rows.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("evaluate: label outside [0, classes)");
    const Tensor<float> logits = head_logits(head, video_rows[i]);
    const std::size_t v = logits.extent(0);
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < v; ++r) mean += static_cast<double>(logits[r * classes + c]);
      mean /= static_cast<double>(v);
      if (mean > best_val) {
        best_val = mean;
        best = c;
      }
    }
    rep.confusion[static_cast<std::size_t>(label) * classes + best] += 1;
  }

  std::size_t diag = 0, total = 0;
  rep.per_class_recall.assign(classes, 0.0);
  double recall_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < classes; ++j) row += rep.confusion[c * classes + j];
    const std::size_t hit = rep.confusion[c * classes + c];
    diag += hit;
    total += row;
    rep.per_class_recall[c] = row > 0 ? static_cast<double>(hit) / static_cast<double>(row) : 0.0;
    recall_sum += rep.per_class_recall[c];
  }
  rep.mca = static_cast<double>(diag) / static_cast<double>(total);
  rep.mpca = recall_sum / static_cast<double>(classes);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json confusion_rows = nlohmann::json::array();
  for (std::size_t c = 0; c < classes; ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < classes; ++j) row.push_back(confusion[c * classes + j]);
    confusion_rows.push_back(std::move(row));
  }
  const nlohmann::json doc{{"mca", mca},
                           {"mpca", mpca},
                           {"per_class_recall", per_class_recall},
                           {"confusion", confusion_rows}};
  return doc.dump(2);
}

void export_embeddings(const FeatureExtractor& extractor,
                       const std::vector<ManifestEntry>& entries,
                       const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& out_path, ViewMode mode) {
  const ExtractedFeatures ex = extract_dataset(extractor, entries, dataset_dir, mode);
  EmbeddingsFile file;
  file.dim = ex.dim;
  file.ids = ex.ids;
  file.labels = ex.labels;
  file.features = Tensor<float>({entries.size(), ex.dim});
  for (std::size_t i = 0; i < ex.rows.size(); ++i) {
    const std::size_t v = ex.rows[i].extent(0);
    for (std::size_t j = 0; j < ex.dim; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < v; ++r) mean += static_cast<double>(ex.rows[i][r * ex.dim + j]);
      file.features[i * ex.dim + j] = static_cast<float>(mean / static_cast<double>(v));
    }
  }
  write_embeddings(out_path, file);
}

}  // namespace vsd
