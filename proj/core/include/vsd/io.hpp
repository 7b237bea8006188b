// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsd/sampling.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

// Binary containers are explicitly little-endian on every platform. All
// writers are deterministic: the same inputs produce bit-identical files.

inline constexpr std::uint16_t kSpvdVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kEmbeddingsVersion = 1;

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Tensor container: magic "SPVD", version u16, dtype u8 (0 = f32), rank u8,
// extents u32 each, then the row-major payload.
void write_spvd(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_spvd(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest's directory
  int label = 0;
  std::string class_name;
  std::string split;  // "train" | "test"
  std::vector<std::size_t> shape;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path);
RawVideo load_video(const std::filesystem::path& dataset_dir, const ManifestEntry& entry);
std::size_t manifest_class_count(const std::vector<ManifestEntry>& entries);

// Checkpoint container: magic "SPCK", version u16, u16 zero, u64 JSON header
// length, header, then f32 blobs at the recorded offsets. The run
// configuration is carried as an opaque JSON string so the container never
// needs to understand it.
struct CheckpointData {
  std::uint16_t version = kCheckpointVersion;
  std::string config_json;
  std::uint64_t global_step = 0;
  std::uint64_t epoch = 0;
  std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Embedding table: magic "SPEM", version u16, u16 zero, u64 JSON header
// length, header {count, dim, ids, labels}, then count*dim f32 rows.
struct EmbeddingsFile {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<int> labels;
  Tensor<float> features;  // [count, dim]
};

void write_embeddings(const std::filesystem::path& path, const EmbeddingsFile& e);
EmbeddingsFile read_embeddings(const std::filesystem::path& path);

}  // namespace vsd
