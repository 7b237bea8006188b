// SPDX-License-Identifier: Apache-2.0
#include "vsd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "vsd/io.hpp"
#include "vsd/parallel.hpp"

namespace vsd {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kConvergeStop = 3.0;   // px; converging agents halt here, never overshoot
constexpr double kFollowGap = 2.5;      // px; follower chain keeps this separation
constexpr double kEdgePad = 1.5;        // disc radius + AA skirt must stay inside canvas

struct Vec2 {
  double x = 0.0, y = 0.0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

Vec2 clamp_center(Vec2 p, double radius, const SceneConfig& cfg) {
  const double m = radius + kEdgePad;
  p.x = std::clamp(p.x, m, static_cast<double>(cfg.canvas_w - 1) - m);
  p.y = std::clamp(p.y, m, static_cast<double>(cfg.canvas_h - 1) - m);
  return p;
}

Vec2 rotate_about(Vec2 p, Vec2 o, double alpha) {
  const double c = std::cos(alpha), s = std::sin(alpha);
  const Vec2 d = p - o;
  return {o.x + c * d.x - s * d.y, o.y + s * d.x + c * d.y};
}

Vec2 centroid(const std::vector<Vec2>& pts) {
  Vec2 c;
  for (const Vec2& p : pts) c = c + p;
  return (1.0 / static_cast<double>(pts.size())) * c;
}

}  // namespace

std::vector<MotionClass> default_motion_classes() {
  std::vector<MotionClass> out;
  for (MotionKernel k : {MotionKernel::converge, MotionKernel::disperse, MotionKernel::rotate_cw,
                         MotionKernel::rotate_ccw, MotionKernel::follow_leader, MotionKernel::split}) {
    MotionClass c;
    c.kernel = k;
    switch (k) {
      case MotionKernel::converge: c.name = "converge"; break;
      case MotionKernel::disperse: c.name = "disperse"; break;
      case MotionKernel::rotate_cw: c.name = "rotate_cw"; break;
      case MotionKernel::rotate_ccw: c.name = "rotate_ccw"; break;
      case MotionKernel::follow_leader: c.name = "follow_leader"; break;
      case MotionKernel::split: c.name = "split"; break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

void SceneConfig::validate() const {
  if (canvas_h < 16 || canvas_w < 16) throw std::invalid_argument("scene: canvas too small");
  if (frames < 2) throw std::invalid_argument("scene: need at least 2 frames");
  if (agents_min < 1 || agents_max < agents_min)
    throw std::invalid_argument("scene: bad agent count range");
  if (!(agent_radius[0] > 0.0) || agent_radius[1] < agent_radius[0])
    throw std::invalid_argument("scene: bad agent radius range");
  if (jitter_sigma < 0.0) throw std::invalid_argument("scene: jitter sigma must be >= 0");
  if (!(background[0] >= 0.0) || background[1] < background[0] || background[1] > 1.0)
    throw std::invalid_argument("scene: background range must lie in [0,1]");
  if (classes.size() < 2) throw std::invalid_argument("scene: need at least 2 classes");
  if (per_class == 0) throw std::invalid_argument("scene: per_class must be positive");
  const double half = 0.5 * static_cast<double>(std::min(canvas_h, canvas_w) - 1);
  if (half - (agent_radius[1] + 2.0) < 4.0)
    throw std::invalid_argument("scene: canvas too small for agent radius range");
  for (const MotionClass& c : classes) {
    if (c.name.empty()) throw std::invalid_argument("scene: class name empty");
    if (!(c.speed[0] > 0.0) || c.speed[1] < c.speed[0])
      throw std::invalid_argument("scene: bad speed range");
    if (!(c.angular_vel[0] > 0.0) || c.angular_vel[1] < c.angular_vel[0])
      throw std::invalid_argument("scene: bad angular velocity range");
  }
}

AgentTrajectory simulate(const MotionClass& cls, const SceneConfig& cfg, Rng& rng) {
  const std::size_t T = cfg.frames;
  const Vec2 center{0.5 * static_cast<double>(cfg.canvas_w - 1),
                    0.5 * static_cast<double>(cfg.canvas_h - 1)};
  // Init region: a centered disc small enough that a rigid rotation about the
  // canvas center can never push a disc outside, so rotation classes are
  // exactly rigid (no clamping ever engages on their ideal paths).
  const double r_init =
      0.5 * static_cast<double>(std::min(cfg.canvas_h, cfg.canvas_w) - 1) - (cfg.agent_radius[1] + 2.0);

  AgentTrajectory traj;
  // Shared initializer: identical draw order for every class, so frame-0
  // appearance statistics carry no label information.
  traj.agents = rng.uniform_int(static_cast<std::int64_t>(cfg.agents_min),
                                static_cast<std::int64_t>(cfg.agents_max));
  traj.frames = T;
  traj.background = static_cast<float>(rng.uniform(cfg.background[0], cfg.background[1]));
  traj.radius.resize(traj.agents);
  traj.color.resize(traj.agents);
  for (std::size_t i = 0; i < traj.agents; ++i) {
    traj.radius[i] = rng.uniform(cfg.agent_radius[0], cfg.agent_radius[1]);
    for (int c = 0; c < 3; ++c) traj.color[i][c] = static_cast<float>(rng.uniform(0.5, 1.0));
  }
  std::vector<Vec2> ideal(traj.agents);
  for (std::size_t i = 0; i < traj.agents; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double rho = r_init * std::sqrt(rng.uniform());
    ideal[i] = {center.x + rho * std::cos(theta), center.y + rho * std::sin(theta)};
  }

  // Per-video kernel parameters, drawn after the shared init.
  const bool is_rotation = cls.kernel == MotionKernel::rotate_cw || cls.kernel == MotionKernel::rotate_ccw;
  const double speed = is_rotation ? 0.0 : rng.uniform(cls.speed[0], cls.speed[1]);
  const double omega = is_rotation ? rng.uniform(cls.angular_vel[0], cls.angular_vel[1]) : 0.0;
  double leader_heading = 0.0;
  Vec2 split_axis{1.0, 0.0};
  if (cls.kernel == MotionKernel::follow_leader) leader_heading = rng.uniform(0.0, 2.0 * kPi);
  if (cls.kernel == MotionKernel::split) {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    split_axis = {std::cos(a), std::sin(a)};
  }

  traj.pos.resize(T * traj.agents);
  auto record = [&](std::size_t t, bool with_jitter) {
    for (std::size_t i = 0; i < traj.agents; ++i) {
      Vec2 p = ideal[i];
      if (with_jitter && cfg.jitter_sigma > 0.0) {
        p.x += cfg.jitter_sigma * rng.normal();
        p.y += cfg.jitter_sigma * rng.normal();
      }
      p = clamp_center(p, traj.radius[i], cfg);
      traj.pos[t * traj.agents + i] = {p.x, p.y};
    }
  };
  record(0, /*with_jitter=*/false);

  for (std::size_t t = 1; t < T; ++t) {
    switch (cls.kernel) {
      case MotionKernel::converge: {
        const Vec2 c = centroid(ideal);
        for (std::size_t i = 0; i < traj.agents; ++i) {
          const Vec2 d = c - ideal[i];
          const double dist = norm(d);
          if (dist > kConvergeStop) {
            const double step = std::min(speed, dist - kConvergeStop);
            ideal[i] = clamp_center(ideal[i] + (step / dist) * d, traj.radius[i], cfg);
          }
        }
        break;
      }
      case MotionKernel::disperse: {
        const Vec2 c = centroid(ideal);
        for (std::size_t i = 0; i < traj.agents; ++i) {
          Vec2 d = ideal[i] - c;
          const double dist = norm(d);
          if (dist < 1e-9) {
            const double a = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(traj.agents);
            d = {std::cos(a), std::sin(a)};
          } else {
            d = (1.0 / dist) * d;
          }
          ideal[i] = clamp_center(ideal[i] + speed * d, traj.radius[i], cfg);
        }
        break;
      }
      case MotionKernel::rotate_cw:
      case MotionKernel::rotate_ccw: {
        const double alpha = cls.kernel == MotionKernel::rotate_cw ? -omega : omega;
        for (std::size_t i = 0; i < traj.agents; ++i)
          ideal[i] = rotate_about(ideal[i], center, alpha);
        break;
      }
      case MotionKernel::follow_leader: {
        leader_heading += rng.uniform(-0.35, 0.35);
        Vec2 next = ideal[0] + speed * Vec2{std::cos(leader_heading), std::sin(leader_heading)};
        const Vec2 bounded = clamp_center(next, traj.radius[0], cfg);
        if (bounded.x != next.x) leader_heading = kPi - leader_heading;
        if (bounded.y != next.y) leader_heading = -leader_heading;
        // Followers chase the agent ahead of them using last frame's state, so
        // the chain reacts with a one-frame lag.
        std::vector<Vec2> prev = ideal;
        ideal[0] = bounded;
        for (std::size_t i = 1; i < traj.agents; ++i) {
          const Vec2 d = prev[i - 1] - prev[i];
          const double dist = norm(d);
          if (dist > kFollowGap) {
            const double step = std::min(speed, dist - kFollowGap);
            ideal[i] = clamp_center(prev[i] + (step / dist) * d, traj.radius[i], cfg);
          }
        }
        break;
      }
      case MotionKernel::split: {
        const std::size_t first_group = (traj.agents + 1) / 2;
        for (std::size_t i = 0; i < traj.agents; ++i) {
          const double sign = i < first_group ? 1.0 : -1.0;
          ideal[i] = clamp_center(ideal[i] + (sign * speed) * split_axis, traj.radius[i], cfg);
        }
        break;
      }
    }
    record(t, /*with_jitter=*/true);
  }
  return traj;
}

Tensor<float> render(const AgentTrajectory& traj, const SceneConfig& cfg) {
  const std::size_t T = traj.frames, H = cfg.canvas_h, W = cfg.canvas_w;
  Tensor<float> out({T, 3, H, W});
  float* px = out.data();
  std::fill(px, px + out.size(), traj.background);
  for (std::size_t t = 0; t < T; ++t) {
    float* frame = px + t * 3 * H * W;
    for (std::size_t i = 0; i < traj.agents; ++i) {
      const auto& p = traj.at(t, i);
      const double r = traj.radius[i];
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(p[1] - r - 1.0)));
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(p[0] - r - 1.0)));
      const auto y1 = std::min(H - 1, static_cast<std::size_t>(std::max(0.0, std::ceil(p[1] + r + 1.0))));
      const auto x1 = std::min(W - 1, static_cast<std::size_t>(std::max(0.0, std::ceil(p[0] + r + 1.0))));
      for (std::size_t y = y0; y <= y1; ++y) {
        for (std::size_t x = x0; x <= x1; ++x) {
          const double d = std::hypot(static_cast<double>(x) - p[0], static_cast<double>(y) - p[1]);
          const auto cov = static_cast<float>(std::clamp(r + 0.5 - d, 0.0, 1.0));
          if (cov <= 0.0f) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            float& dst = frame[(c * H + y) * W + x];
            dst = cov * traj.color[i][c] + (1.0f - cov) * dst;
          }
        }
      }
    }
  }
  return out;
}

RawVideo generate_video(const MotionClass& cls, const SceneConfig& cfg, Rng& rng, std::string id,
                        int label) {
  const AgentTrajectory traj = simulate(cls, cfg, rng);
  return make_raw_video(render(traj, cfg), std::move(id), label);
}

std::filesystem::path generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::size_t classes = cfg.classes.size();
  const std::size_t total = classes * cfg.per_class;
  const auto test_count = static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(cfg.per_class)));

  struct Entry {
    std::string id, file, class_name, split;
    int label = 0;
  };
  std::vector<Entry> entries(total);
  parallel_for(total, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t g = begin; g < end; ++g) {
      const std::size_t ci = g / cfg.per_class;
      const std::size_t k = g % cfg.per_class;
      const MotionClass& cls = cfg.classes[ci];
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%04zu", k);
      Rng rng(derive_seed(cfg.seed, "video", static_cast<std::uint64_t>(g)));
      const RawVideo video = generate_video(cls, cfg, rng, cls.name + "_" + suffix, static_cast<int>(ci));
      Entry& e = entries[g];
      e.id = video.id;
      e.file = video.id + ".spvd";
      e.class_name = cls.name;
      e.label = static_cast<int>(ci);
      e.split = k < cfg.per_class - test_count ? "train" : "test";
      write_spvd(out_dir / e.file, video.frames);
    }
  });

  nlohmann::json manifest = nlohmann::json::array();
  for (const Entry& e : entries) {
    manifest.push_back({{"id", e.id},
                        {"file", e.file},
                        {"label", e.label},
                        {"class_name", e.class_name},
                        {"split", e.split},
                        {"shape", {cfg.frames, std::size_t{3}, cfg.canvas_h, cfg.canvas_w}}});
  }
  const std::filesystem::path manifest_path = out_dir / "manifest.json";
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

}  // namespace vsd
