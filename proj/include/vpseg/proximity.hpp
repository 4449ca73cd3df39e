#pragma once

#include <string>

#include "vpseg/image.hpp"
#include "vpseg/tensor.hpp"

namespace vpseg {

enum class ProximityVariant { kLinear, kPower, kEuclidean };

ProximityVariant proximity_variant_from_string(const std::string& name);
std::string to_string(ProximityVariant variant);

// Pseudo-depth map peaking at the VP: value = 1 - dD with dD max-normalized
// over the image.
//   linear:    dD ~ max(|dy|/H, |dx|/W)
//   power:     dD^2 ~ max(|dy|/H, |dx|/W)
//   euclidean: dD ~ sqrt((|dy|/H)^2 + (|dx|/H)^2)   (both terms over H,
//              keeping the stated anisotropy of the formula)
struct ProximityMap {
  Tensor values;  // H x W in [0, 1]
  ProximityVariant variant = ProximityVariant::kLinear;
  float vp_x = 0.0f;
  float vp_y = 0.0f;
};

ProximityMap proximity_map(float vp_x, float vp_y, int height, int width,
                           ProximityVariant variant);

struct CropRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

// Crops frame and map with the identical rect; the map is not renormalized.
struct CroppedPair {
  GrayImage frame;
  ProximityMap map;
};
CroppedPair crop_with_map(const GrayImage& frame, const ProximityMap& map, CropRect rect);

struct CroppedTensorPair {
  Tensor frame;
  ProximityMap map;
};
CroppedTensorPair crop_with_map(const Tensor& frame, const ProximityMap& map, CropRect rect);

// 8-bit rendering for inspection (value * 255 rounded).
GrayImage render_proximity(const ProximityMap& map);

}  // namespace vpseg
