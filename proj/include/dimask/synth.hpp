#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dimask/geometry.hpp"

namespace dimask::synth {

enum class ShapeKind : int { kRectangle = 0, kCircle = 1, kTriangle = 2 };

struct InstanceGT {
  int class_id = 0;
  Box box;                          // tight box of the visible mask
  std::vector<std::uint8_t> mask;   // height x width, 0/1

  bool operator==(const InstanceGT&) const = default;
};

struct Scene {
  std::uint64_t seed = 0;
  std::size_t height = 0, width = 0;
  std::vector<float> image;  // height x width x 3, values in [0,1]
  std::vector<InstanceGT> instances;

  bool operator==(const Scene&) const = default;
};

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 3;       // 1..3; class c draws ShapeKind c
  std::size_t min_instances = 1;
  std::size_t max_instances = 4;
  std::size_t min_size = 12;     // shape extent in pixels
  std::size_t max_size = 28;
  bool allow_overlap = false;
  std::size_t max_retries = 200;  // placement attempts per instance

  void validate() const;  // throws ConfigError

  bool operator==(const SynthConfig&) const = default;
};

// Renders one scene. Pure function of (seed, config). With allow_overlap,
// later shapes occlude earlier ones and masks hold the visible region only.
// Throws std::runtime_error when non-overlapping placement fails.
Scene generate_scene(std::uint64_t seed, const SynthConfig& config);

// Per-scene seed of element `index` in a split with base seed `base`.
inline std::uint64_t scene_seed(std::uint64_t base, std::size_t index) {
  return base * 1'000'000ull + index;
}

std::vector<Scene> make_split(std::uint64_t base_seed, std::size_t n, const SynthConfig& config);

// Pixel-center rasterization of a disc with center/radius in pixel units.
std::vector<std::uint8_t> rasterize_circle(std::size_t h, std::size_t w, double cx, double cy,
                                           double r);

// Dataset container (little-endian):
//   magic "DIMKDATA", version u32, scene count u64, then per scene:
//   seed u64, height u32, width u32, image f32 x (h*w*3),
//   instance count u32, per instance: class u32, box f64 x 4 (cx,cy,w,h),
//   run count u32, runs u32 x count (rle_encode of the mask).
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_split(const std::vector<Scene>& scenes);
std::vector<Scene> decode_split(const std::string& bytes);
void save_split(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_split(const std::string& path);

}  // namespace dimask::synth
