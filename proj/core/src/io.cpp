// SPDX-License-Identifier: Apache-2.0
#include "vsd/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace vsd {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32_payload(std::string& out, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  }
}

// Bounds-checked little-endian cursor over a loaded file.
struct Reader {
  const std::filesystem::path& path;
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) fail(path, "truncated file");
  }
  std::uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = buf.substr(pos, n);
    pos += n;
    return out;
  }
  void f32_into(float* dst, std::size_t count) {
    need(count * sizeof(float));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, buf.data() + pos, count * sizeof(float));
      pos += count * sizeof(float);
    } else {
      for (std::size_t i = 0; i < count; ++i) dst[i] = std::bit_cast<float>(u32());
    }
  }
  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(buf.data() + pos, magic, 4) != 0) fail(path, std::string("bad magic, expected ") + magic);
    pos += 4;
  }
};

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(path, "read error");
  return buf;
}

void write_binary(const std::filesystem::path& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(path, "write error");
}

json checkpoint_header(const CheckpointData& data, std::uint64_t& blob_bytes) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : data.tensors) {
    json shape = json::array();
    for (std::size_t e : t.shape()) shape.push_back(e);
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", shape}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  blob_bytes = offset;
  return json{{"config", data.config_json},
              {"epoch", data.epoch},
              {"global_step", data.global_step},
              {"tensors", tensors}};
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) { return read_binary(path); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_binary(path, text);
}

void write_spvd(const std::filesystem::path& path, const Tensor<float>& t) {
  if (t.rank() == 0 || t.rank() > 255) fail(path, "unsupported tensor rank");
  std::string buf;
  buf.reserve(8 + 4 * t.rank() + t.size() * sizeof(float));
  buf.append("SPVD", 4);
  put_u16(buf, kSpvdVersion);
  buf.push_back(0);  // dtype 0 = f32
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xffffffffULL) fail(path, "extent exceeds u32");
    put_u32(buf, static_cast<std::uint32_t>(e));
  }
  put_f32_payload(buf, t.data(), t.size());
  write_binary(path, buf);
}

Tensor<float> read_spvd(const std::filesystem::path& path) {
  const std::string buf = read_binary(path);
  Reader r{path, buf};
  r.expect_magic("SPVD");
  const std::uint16_t version = r.u16();
  if (version != kSpvdVersion)
    fail(path, "unsupported container version " + std::to_string(version) + ", expected " +
                   std::to_string(kSpvdVersion));
  const std::uint8_t dtype = r.u8();
  if (dtype != 0) fail(path, "unsupported dtype code " + std::to_string(dtype));
  const std::uint8_t rank = r.u8();
  if (rank == 0) fail(path, "rank 0 tensor");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = r.u32();
  Tensor<float> t(shape);
  r.f32_into(t.data(), t.size());
  if (r.pos != buf.size()) fail(path, "trailing bytes after payload");
  return t;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path) {
  json doc;
  try {
    doc = json::parse(read_binary(manifest_path));
  } catch (const json::exception& e) {
    fail(manifest_path, std::string("manifest parse error: ") + e.what());
  }
  if (!doc.is_array()) fail(manifest_path, "manifest must be a JSON array");
  std::vector<ManifestEntry> out;
  out.reserve(doc.size());
  for (const json& j : doc) {
    try {
      ManifestEntry e;
      j.at("id").get_to(e.id);
      j.at("file").get_to(e.file);
      j.at("label").get_to(e.label);
      j.at("class_name").get_to(e.class_name);
      j.at("split").get_to(e.split);
      j.at("shape").get_to(e.shape);
      if (e.split != "train" && e.split != "test") fail(manifest_path, "bad split '" + e.split + "'");
      if (e.label < 0) fail(manifest_path, "negative label for id " + e.id);
      out.push_back(std::move(e));
    } catch (const json::exception& e) {
      fail(manifest_path, std::string("manifest entry error: ") + e.what());
    }
  }
  if (out.empty()) fail(manifest_path, "manifest is empty");
  return out;
}

RawVideo load_video(const std::filesystem::path& dataset_dir, const ManifestEntry& entry) {
  const std::filesystem::path path = dataset_dir / entry.file;
  Tensor<float> frames = read_spvd(path);
  if (!entry.shape.empty() && frames.shape() != Shape(entry.shape.begin(), entry.shape.end()))
    fail(path, "tensor shape " + shape_str(frames.shape()) + " does not match manifest");
  return make_raw_video(std::move(frames), entry.id, entry.label);
}

std::size_t manifest_class_count(const std::vector<ManifestEntry>& entries) {
  std::set<int> labels;
  for (const ManifestEntry& e : entries) labels.insert(e.label);
  // Labels must form a dense [0, C) range so confusion matrices can index by
  // label directly.
  const std::size_t c = labels.size();
  if (c < 2 || *labels.begin() != 0 || static_cast<std::size_t>(*labels.rbegin()) != c - 1)
    throw std::runtime_error("manifest labels must form a dense range 0..C-1 with C >= 2");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::uint64_t blob_bytes = 0;
  const std::string header = checkpoint_header(data, blob_bytes).dump();
  std::string buf;
  buf.reserve(16 + header.size() + blob_bytes);
  buf.append("SPCK", 4);
  put_u16(buf, kCheckpointVersion);
  put_u16(buf, 0);
  put_u64(buf, header.size());
  buf += header;
  for (const auto& [name, t] : data.tensors) put_f32_payload(buf, t.data(), t.size());
  write_binary(path, buf);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_binary(path);
  Reader r{path, buf};
  r.expect_magic("SPCK");
  CheckpointData data;
  data.version = r.u16();
  if (data.version != kCheckpointVersion)
    fail(path, "unsupported checkpoint version " + std::to_string(data.version) + ", expected " +
                   std::to_string(kCheckpointVersion));
  r.u16();  // reserved
  const std::uint64_t header_len = r.u64();
  json header;
  try {
    header = json::parse(r.bytes(header_len));
    header.at("config").get_to(data.config_json);
    data.epoch = header.at("epoch").get<std::uint64_t>();
    data.global_step = header.at("global_step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(path, std::string("checkpoint header error: ") + e.what());
  }
  const std::size_t blob_base = r.pos;
  for (const json& tj : header.at("tensors")) {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;
    try {
      tj.at("name").get_to(name);
      tj.at("shape").get_to(shape);
      offset = tj.at("offset").get<std::uint64_t>();
      if (tj.at("dtype").get<std::string>() != "f32") fail(path, "unsupported blob dtype");
    } catch (const json::exception& e) {
      fail(path, std::string("checkpoint tensor entry error: ") + e.what());
    }
    Tensor<float> t(Shape(shape.begin(), shape.end()));
    r.pos = blob_base + offset;
    r.f32_into(t.data(), t.size());
    data.tensors.emplace(std::move(name), std::move(t));
  }
  return data;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingsFile& e) {
  if (e.features.rank() != 2) fail(path, "features must be [count, dim]");
  const std::size_t count = e.features.extent(0);
  if (e.features.extent(1) != e.dim) fail(path, "feature dim mismatch");
  if (e.ids.size() != count || e.labels.size() != count) fail(path, "ids/labels length mismatch");
  const json header{{"count", count}, {"dim", e.dim}, {"ids", e.ids}, {"labels", e.labels}};
  const std::string header_str = header.dump();
  std::string buf;
  buf.reserve(16 + header_str.size() + e.features.size() * sizeof(float));
  buf.append("SPEM", 4);
  put_u16(buf, kEmbeddingsVersion);
  put_u16(buf, 0);
  put_u64(buf, header_str.size());
  buf += header_str;
  put_f32_payload(buf, e.features.data(), e.features.size());
  write_binary(path, buf);
}

EmbeddingsFile read_embeddings(const std::filesystem::path& path) {
  const std::string buf = read_binary(path);
  Reader r{path, buf};
  r.expect_magic("SPEM");
  const std::uint16_t version = r.u16();
  if (version != kEmbeddingsVersion)
    fail(path, "unsupported embeddings version " + std::to_string(version));
  r.u16();
  const std::uint64_t header_len = r.u64();
  EmbeddingsFile e;
  std::size_t count = 0;
  try {
    const json header = json::parse(r.bytes(header_len));
    count = header.at("count").get<std::size_t>();
    e.dim = header.at("dim").get<std::size_t>();
    header.at("ids").get_to(e.ids);
    header.at("labels").get_to(e.labels);
  } catch (const json::exception& ex) {
    fail(path, std::string("embeddings header error: ") + ex.what());
  }
  if (e.ids.size() != count || e.labels.size() != count) fail(path, "ids/labels length mismatch");
  e.features = Tensor<float>({count, e.dim});
  r.f32_into(e.features.data(), e.features.size());
  if (r.pos != buf.size()) fail(path, "trailing bytes after payload");
  return e;
}

}  // namespace vsd
