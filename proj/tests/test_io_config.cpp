// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsd/config.hpp"
#include "vsd/io.hpp"
#include "vsd/rng.hpp"
#include "vsd/tensor.hpp"

using namespace vsd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("vsd_io_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor<float> random_tensor(const Shape& shape, std::uint64_t seed) {
  Tensor<float> t = Tensor<float>::uninitialized(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(-3.0, 3.0));
  return t;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// True when fn throws an E whose message contains `needle`.
template <typename E = std::runtime_error>
bool throws_containing(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const E& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  } catch (...) {
    return false;
  }
  return false;
}

// Byte-level corruption harness: copy the pristine file, mutate, read back.
bool read_corrupted(const fs::path& dir, const std::string& pristine_bytes,
                    const std::function<void(std::string&)>& mutate, const std::string& needle) {
  static int counter = 0;
  const fs::path path = dir / ("corrupt_" + std::to_string(counter++) + ".spvd");
  std::string bytes = pristine_bytes;
  mutate(bytes);
  write_text_file(path, bytes);
  return throws_containing([&] { (void)read_spvd(path); }, needle);
}

}  // namespace

TEST_CASE("spvd: round-trip is bit-exact for several shapes") {
  const fs::path dir = fresh_dir("spvd_rt");
  int idx = 0;
  for (const Shape& shape : {Shape{7}, Shape{3, 4, 5}, Shape{2, 3, 8, 6}}) {
    const Tensor<float> t = random_tensor(shape, 100 + static_cast<std::uint64_t>(idx));
    const fs::path path = dir / ("t" + std::to_string(idx++) + ".spvd");
    write_spvd(path, t);
    const Tensor<float> back = read_spvd(path);
    CHECK(back.shape() == t.shape());
    CHECK(same_bits(back, t));
  }
  fs::remove_all(dir);
}

TEST_CASE("spvd: writer output is deterministic") {
  const fs::path dir = fresh_dir("spvd_det");
  const Tensor<float> t = random_tensor({4, 9}, 5);
  write_spvd(dir / "a.spvd", t);
  write_spvd(dir / "b.spvd", t);
  CHECK(read_text_file(dir / "a.spvd") == read_text_file(dir / "b.spvd"));
  fs::remove_all(dir);
}

TEST_CASE("spvd: writer refuses a rank-0 tensor") {
  const fs::path dir = fresh_dir("spvd_rank0");
  CHECK(throws_containing([&] { write_spvd(dir / "s.spvd", Tensor<float>::scalar(1.0f)); },
                          "unsupported tensor rank"));
  fs::remove_all(dir);
}

TEST_CASE("spvd: reader rejects malformed containers loudly") {
  const fs::path dir = fresh_dir("spvd_bad");
  const fs::path good = dir / "good.spvd";
  write_spvd(good, random_tensor({2, 3}, 11));
  const std::string bytes = read_text_file(good);
  // Layout: magic[4] version:u16 dtype:u8 rank:u8 extents:u32*rank payload.
  REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 2 * 4 + 6 * 4);

  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b[0] = 'X'; }, "bad magic"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b[4] = 9; },
                       "unsupported container version"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b[6] = 1; }, "unsupported dtype code"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b[7] = 0; }, "rank 0 tensor"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b.resize(b.size() / 2); },
                       "truncated file"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b.resize(2); }, "truncated file"));
  CHECK(read_corrupted(dir, bytes, [](std::string& b) { b.push_back('\0'); },
                       "trailing bytes after payload"));
  CHECK(throws_containing([&] { (void)read_spvd(dir / "absent.spvd"); },
                          "cannot open for reading"));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: round-trip preserves config, counters, and tensor bits") {
  const fs::path dir = fresh_dir("ckpt_rt");
  CheckpointData data;
  data.config_json = "{\"note\":\"opaque\"}";
  data.epoch = 3;
  data.global_step = 127;
  data.tensors["b.bias"] = random_tensor({5}, 21);
  data.tensors["a.weight"] = random_tensor({4, 6}, 20);
  data.tensors["z.gain"] = random_tensor({2, 2, 2}, 22);

  const fs::path path = dir / "state.spck";
  save_checkpoint(path, data);
  const CheckpointData back = load_checkpoint(path);
  CHECK(back.version == kCheckpointVersion);
  CHECK(back.config_json == data.config_json);
  CHECK(back.epoch == 3);
  CHECK(back.global_step == 127);
  REQUIRE(back.tensors.size() == 3);
  for (const auto& [name, t] : data.tensors) {
    REQUIRE(back.tensors.count(name) == 1);
    CHECK(same_bits(back.tensors.at(name), t));
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: writer output is byte-identical across calls") {
  const fs::path dir = fresh_dir("ckpt_det");
  CheckpointData data;
  data.config_json = "{}";
  data.tensors["w"] = random_tensor({3, 3}, 8);
  save_checkpoint(dir / "a.spck", data);
  save_checkpoint(dir / "b.spck", data);
  CHECK(read_text_file(dir / "a.spck") == read_text_file(dir / "b.spck"));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: bad magic and future versions are rejected") {
  const fs::path dir = fresh_dir("ckpt_bad");
  CheckpointData data;
  data.tensors["w"] = random_tensor({2}, 3);
  const fs::path good = dir / "good.spck";
  save_checkpoint(good, data);
  std::string bytes = read_text_file(good);

  std::string magicless = bytes;
  magicless[0] = 'Q';
  write_text_file(dir / "magic.spck", magicless);
  CHECK(throws_containing([&] { (void)load_checkpoint(dir / "magic.spck"); }, "bad magic"));

  std::string future = bytes;
  future[4] = 7;  // version u16 little-endian low byte
  write_text_file(dir / "future.spck", future);
  CHECK(throws_containing([&] { (void)load_checkpoint(dir / "future.spck"); },
                          "unsupported checkpoint version"));
  fs::remove_all(dir);
}

TEST_CASE("embeddings: round-trip preserves ids, labels, and feature bits") {
  const fs::path dir = fresh_dir("emb_rt");
  EmbeddingsFile e;
  e.dim = 4;
  e.ids = {"vid_0", "vid_1", "vid_2"};
  e.labels = {0, 2, 1};
  e.features = random_tensor({3, 4}, 30);
  const fs::path path = dir / "emb.spem";
  write_embeddings(path, e);
  const EmbeddingsFile back = read_embeddings(path);
  CHECK(back.dim == 4);
  CHECK(back.ids == e.ids);
  CHECK(back.labels == e.labels);
  CHECK(same_bits(back.features, e.features));
  fs::remove_all(dir);
}

TEST_CASE("embeddings: writer validates its own header invariants") {
  const fs::path dir = fresh_dir("emb_bad");
  EmbeddingsFile e;
  e.dim = 4;
  e.ids = {"a", "b"};
  e.labels = {0, 1};
  e.features = random_tensor({2, 4}, 31);

  EmbeddingsFile rank1 = e;
  rank1.features = random_tensor({8}, 32);
  CHECK(throws_containing([&] { write_embeddings(dir / "r1.spem", rank1); },
                          "features must be [count, dim]"));

  EmbeddingsFile wrong_dim = e;
  wrong_dim.dim = 5;
  CHECK(throws_containing([&] { write_embeddings(dir / "wd.spem", wrong_dim); },
                          "feature dim mismatch"));

  EmbeddingsFile short_ids = e;
  short_ids.ids = {"a"};
  CHECK(throws_containing([&] { write_embeddings(dir / "si.spem", short_ids); },
                          "ids/labels length mismatch"));

  // Reader symmetric checks: trailing garbage is refused.
  const fs::path good = dir / "good.spem";
  write_embeddings(good, e);
  std::string bytes = read_text_file(good);
  bytes.push_back('\0');
  write_text_file(dir / "trail.spem", bytes);
  CHECK(throws_containing([&] { (void)read_embeddings(dir / "trail.spem"); },
                          "trailing bytes after payload"));
  fs::remove_all(dir);
}

TEST_CASE("text files: round-trip including embedded newlines; missing file fails") {
  const fs::path dir = fresh_dir("text");
  const std::string body = "line one\nline two\n\ttab and \xc3\xa9 bytes\n";
  write_text_file(dir / "t.txt", body);
  CHECK(read_text_file(dir / "t.txt") == body);
  CHECK(throws_containing([&] { (void)read_text_file(dir / "missing.txt"); },
                          "cannot open for reading"));
  fs::remove_all(dir);
}

TEST_CASE("manifest: parses entries and enforces field rules") {
  const fs::path dir = fresh_dir("manifest");
  const std::string good = R"([
    {"id":"v0","file":"videos/v0.spvd","label":0,"class_name":"rotate_cw","split":"train","shape":[2,3,6,5]},
    {"id":"v1","file":"videos/v1.spvd","label":1,"class_name":"disperse","split":"test","shape":[2,3,6,5]}
  ])";
  write_text_file(dir / "manifest.json", good);
  const std::vector<ManifestEntry> entries = load_manifest(dir / "manifest.json");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].id == "v0");
  CHECK(entries[0].file == "videos/v0.spvd");
  CHECK(entries[0].label == 0);
  CHECK(entries[0].class_name == "rotate_cw");
  CHECK(entries[0].split == "train");
  CHECK(entries[0].shape == std::vector<std::size_t>{2, 3, 6, 5});
  CHECK(entries[1].split == "test");

  const auto rejects = [&](const char* tag, const std::string& text, const std::string& needle) {
    const fs::path p = dir / (std::string("bad_") + tag + ".json");
    write_text_file(p, text);
    CHECK_MESSAGE(throws_containing([&] { (void)load_manifest(p); }, needle), tag);
  };
  rejects("nonarray", R"({"id":"v0"})", "manifest must be a JSON array");
  rejects("notjson", "[{", "manifest parse error");
  rejects("split",
          R"([{"id":"a","file":"f","label":0,"class_name":"c","split":"val","shape":[2,3,6,5]}])",
          "bad split 'val'");
  rejects("label",
          R"([{"id":"a","file":"f","label":-1,"class_name":"c","split":"train","shape":[2,3,6,5]}])",
          "negative label");
  rejects("empty", "[]", "manifest is empty");
  rejects("missing", R"([{"id":"a","label":0,"class_name":"c","split":"train","shape":[]}])",
          "manifest entry error");
  fs::remove_all(dir);
}

TEST_CASE("manifest: class count requires a dense 0..C-1 label range") {
  const auto with_labels = [](const std::vector<int>& labels) {
    std::vector<ManifestEntry> out;
    for (int l : labels) {
      ManifestEntry e;
      e.id = "v" + std::to_string(out.size());
      e.label = l;
      out.push_back(std::move(e));
    }
    return out;
  };
  CHECK(manifest_class_count(with_labels({0, 1, 2, 1})) == 3);
  CHECK(manifest_class_count(with_labels({1, 0})) == 2);
  CHECK(throws_containing([&] { (void)manifest_class_count(with_labels({0, 2})); }, "dense"));
  CHECK(throws_containing([&] { (void)manifest_class_count(with_labels({1, 2})); }, "dense"));
  CHECK(throws_containing([&] { (void)manifest_class_count(with_labels({0, 0})); }, "dense"));
}

TEST_CASE("load_video: resolves relative paths and cross-checks the manifest shape") {
  const fs::path dir = fresh_dir("loadvid");
  fs::create_directories(dir / "videos");
  const Tensor<float> frames = random_tensor({2, 3, 6, 5}, 77);
  write_spvd(dir / "videos" / "v0.spvd", frames);

  ManifestEntry entry;
  entry.id = "v0";
  entry.file = "videos/v0.spvd";
  entry.label = 4;
  entry.shape = {2, 3, 6, 5};
  const RawVideo video = load_video(dir, entry);
  CHECK(video.id == "v0");
  REQUIRE(video.label.has_value());
  CHECK(*video.label == 4);
  CHECK(video.frames.shape() == frames.shape());

  ManifestEntry wrong = entry;
  wrong.shape = {2, 3, 6, 4};
  CHECK(throws_containing([&] { (void)load_video(dir, wrong); }, "does not match manifest"));

  // An empty shape field skips the cross-check.
  ManifestEntry unchecked = entry;
  unchecked.shape.clear();
  CHECK(load_video(dir, unchecked).frames.shape() == frames.shape());
  fs::remove_all(dir);
}

TEST_CASE("config: an empty JSON object yields pure defaults") {
  const RunConfig parsed = parse_run_config("{}");
  const RunConfig defaults;
  CHECK(serialize_run_config(parsed) == serialize_run_config(defaults));
  CHECK(parsed.distill.tau_student == 0.1);
  CHECK(parsed.distill.tau_teacher == 0.04);
  CHECK(parsed.distill.center_momentum == 0.9);
  CHECK(parsed.train.epochs == 30);
  CHECK(parsed.train.base_lr == 5e-4);
  CHECK(parsed.train.wd_start == 0.04);
  CHECK(parsed.train.wd_end == 0.1);
  parsed.validate();  // defaults must be self-consistent
}

TEST_CASE("config: strict parse collects every finding into one error") {
  const std::string text = R"({
    "bogus": 1,
    "view": {"k_g": 8, "mystery": true},
    "model": {"depth": "twelve"}
  })";
  bool threw = false;
  try {
    (void)parse_run_config(text);
  } catch (const std::invalid_argument& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("unknown key: bogus") != std::string::npos);
    CHECK(msg.find("unknown key: view.mystery") != std::string::npos);
    CHECK(msg.find("bad value for model.depth") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("config: malformed documents are rejected with a clear reason") {
  CHECK(throws_containing<std::invalid_argument>([] { (void)parse_run_config("{nope"); },
                                                 "config is not valid JSON"));
  CHECK(throws_containing<std::invalid_argument>([] { (void)parse_run_config("[]"); },
                                                 "config root must be a JSON object"));
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"view": 3})"); }, "section view must be an object"));
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"view": {"aug": 3}})"); }, "bad value for view.aug"));
}

TEST_CASE("config: semantic validation failures report each offending section") {
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"distill": {"tau_teacher": 0.5}})"); }, "distill"));
  bool threw = false;
  try {
    (void)parse_run_config(R"({"train": {"epochs": 0}, "probe": {"momentum": 1.5}})");
  } catch (const std::invalid_argument& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("train: epochs must be positive") != std::string::npos);
    CHECK(msg.find("probe: momentum must lie in [0,1)") != std::string::npos);
  }
  CHECK(threw);
  // Structural findings take precedence: validation is skipped while the
  // document still has unknown keys, so the report stays actionable.
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"typo": 1, "train": {"epochs": 0}})"); }, "unknown key"));
  CHECK_FALSE(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"typo": 1, "train": {"epochs": 0}})"); },
      "epochs must be positive"));
}

TEST_CASE("config: serialize -> parse -> serialize is a fixed point") {
  const std::string overrides = R"({
    "view": {"k_g": 4, "k_l_choices": [2], "global_size": [32, 32], "local_size": [16, 16],
             "aug": {"hue": 0.05, "blur_p": 0.0}, "seed": 7},
    "model": {"patch_size": 8, "embed_dim": 64, "depth": 3, "heads": 4},
    "distill": {"directions": ["lt_to_gt"], "centering_enabled": false},
    "train": {"epochs": 6, "warmup_epochs": 1, "batch_size": 4, "seed": 13},
    "probe": {"multi_view": true, "use_student": true},
    "data": {"manifest": "data/manifest.json", "out_dir": "runs/a"}
  })";
  const RunConfig cfg = parse_run_config(overrides);
  const std::string s1 = serialize_run_config(cfg);
  const RunConfig again = parse_run_config(s1);
  const std::string s2 = serialize_run_config(again);
  CHECK(s1 == s2);
  // Canonical form: sorted keys, two-space indent, trailing newline.
  CHECK(s1.substr(0, 10) == "{\n  \"data\"");
  CHECK(s1.back() == '\n');
  CHECK(again.view.k_g == 4);
  CHECK(again.model.embed_dim == 64);
  CHECK(again.distill.directions.size() == 1);
  CHECK_FALSE(again.distill.centering_enabled);
  CHECK(again.probe.multi_view);
  CHECK(again.data.out_dir == "runs/a");
}

TEST_CASE("config: loss direction lists parse by name and reject noise") {
  const RunConfig one = parse_run_config(R"({"distill": {"directions": ["ls_to_gt"]}})");
  REQUIRE(one.distill.directions.size() == 1);
  CHECK(direction_name(one.distill.directions[0]) == std::string("ls_to_gt"));
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"distill": {"directions": ["sideways"]}})"); },
      "distill.directions"));
  CHECK(throws_containing<std::invalid_argument>(
      [] { (void)parse_run_config(R"({"distill": {"directions": "ls_to_gt"}})"); },
      "expected an array of names"));
}

TEST_CASE("config: load_run_config prefixes the file path on parse errors") {
  const fs::path dir = fresh_dir("cfg_load");
  write_text_file(dir / "good.json", R"({"train": {"seed": 42}})");
  const RunConfig cfg = load_run_config(dir / "good.json");
  CHECK(cfg.train.seed == 42);

  write_text_file(dir / "bad.json", R"({"wat": 1})");
  bool threw = false;
  try {
    (void)load_run_config(dir / "bad.json");
  } catch (const std::invalid_argument& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.rfind((dir / "bad.json").string(), 0) == 0);
    CHECK(msg.find("unknown key: wat") != std::string::npos);
  }
  CHECK(threw);
  CHECK_THROWS_AS((void)load_run_config(dir / "absent.json"), std::runtime_error);
  fs::remove_all(dir);
}
