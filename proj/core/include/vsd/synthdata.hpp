// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsd/rng.hpp"
#include "vsd/sampling.hpp"
#include "vsd/tensor.hpp"

namespace vsd {

// A class is a motion rule. Every kernel shares one frame-0 initializer
// (agent count, colors, radii, positions, background), so no single frame
// carries label information; only trajectories do.
enum class MotionKernel { converge, disperse, rotate_cw, rotate_ccw, follow_leader, split };

struct MotionClass {
  std::string name;
  MotionKernel kernel{};
  std::array<double, 2> speed{0.6, 1.2};        // px per frame
  std::array<double, 2> angular_vel{0.05, 0.12};  // rad per frame (rotations)
};

std::vector<MotionClass> default_motion_classes();

struct SceneConfig {
  std::size_t canvas_h = 64;
  std::size_t canvas_w = 64;
  std::size_t frames = 32;
  std::size_t agents_min = 4;
  std::size_t agents_max = 8;
  std::array<double, 2> agent_radius{2.5, 4.5};
  double jitter_sigma = 0.4;
  std::array<double, 2> background{0.10, 0.35};
  std::vector<MotionClass> classes = default_motion_classes();
  std::size_t per_class = 100;
  std::uint64_t seed = 0;
  void validate() const;
};

// Pre-render truth, exposed so kernel geometry is testable without pixels.
struct AgentTrajectory {
  std::size_t agents = 0;
  std::size_t frames = 0;
  std::vector<std::array<double, 2>> pos;     // [frames*agents], (x, y)
  std::vector<std::array<float, 3>> color;    // per agent, RGB
  std::vector<double> radius;                 // per agent
  float background = 0.2f;
  const std::array<double, 2>& at(std::size_t frame, std::size_t agent) const {
    return pos[frame * agents + agent];
  }
};

AgentTrajectory simulate(const MotionClass& cls, const SceneConfig& cfg, Rng& rng);

// Anti-aliased disc rendering onto a constant gray background, [T,3,H,W].
Tensor<float> render(const AgentTrajectory& traj, const SceneConfig& cfg);

RawVideo generate_video(const MotionClass& cls, const SceneConfig& cfg, Rng& rng,
                        std::string id, int label);

// Writes per_class videos per class as SPVD containers plus manifest.json
// (stratified 75/25 train/test split, the last quarter of each class is
// test). Returns the manifest path.
std::filesystem::path generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace vsd
