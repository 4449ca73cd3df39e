#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vpseg/image.hpp"
#include "vpseg/metrics.hpp"

namespace vpseg {

// Class layout of generated scenes.
inline constexpr std::uint16_t kClassSky = 0;
inline constexpr std::uint16_t kClassGround = 1;
inline constexpr std::uint16_t kClassRoad = 2;
inline constexpr std::uint16_t kClassObject = 3;
inline constexpr int kSceneClasses = 4;

struct SceneObject {
  std::uint16_t instance_id = 1;
  double angle = 0.0;       // ray direction from the VP, radians
  double distance = 0.0;    // initial distance from the VP along the ray
  double half_width = 8.0;  // initial half extents
  double half_height = 6.0;
  double growth = 0.05;     // per-frame radial growth rate
  std::uint8_t shade = 35;
};

// One-point-perspective corridor: a road wedge and lane markings all converge
// at the ground-truth VP; objects translate and scale radially per frame.
struct SceneSpec {
  int height = 512;
  int width = 1024;
  double vp_x = 512.0;
  double vp_y = 190.0;
  double road_left_slope = -0.32;  // delta-row / delta-col of the road edges
  double road_right_slope = 0.32;
  std::vector<double> lane_slopes = {-0.45, 0.45};
  int lane_width = 8;  // perpendicular thickness in pixels
  std::vector<SceneObject> objects;
  int frame_count = 2;
  double noise = 0.0;           // fraction of pixels hit by impulse noise
  double salt_fraction = 0.98;  // bright share of the impulses
  int texture_amplitude = 4;
  double invalid_radius = 0.0;  // 0 disables the invalid disc
  std::uint64_t seed = 0;

  // Randomized corridor with slopes snapped to the Hough theta grid.
  static SceneSpec randomized(std::uint64_t seed, int height = 512, int width = 1024,
                              double max_noise = 0.2);
};

struct SceneSequence {
  SceneSpec spec;
  std::vector<GrayImage> frames;
  std::vector<LabelMap> labels;
  std::vector<InstanceMap> instances;
  std::vector<InvalidMask> invalid_masks;
  // Object centers per frame (outer: frame, inner: object), for motion checks.
  std::vector<std::vector<std::pair<double, double>>> object_centers;
};

SceneSequence generate_scene_sequence(const SceneSpec& spec);

// Writes frames/labels/instances/masks plus scene.json into dir.
void write_scene(const SceneSequence& scene, const std::string& dir);

}  // namespace vpseg
