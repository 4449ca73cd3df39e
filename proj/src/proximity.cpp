#include "vpseg/proximity.hpp"

#include <cmath>
#include <stdexcept>

namespace vpseg {

ProximityVariant proximity_variant_from_string(const std::string& name) {
  if (name == "linear") return ProximityVariant::kLinear;
  if (name == "power") return ProximityVariant::kPower;
  if (name == "euclidean") return ProximityVariant::kEuclidean;
  throw std::invalid_argument("unknown proximity variant: " + name);
}

std::string to_string(ProximityVariant variant) {
  switch (variant) {
    case ProximityVariant::kLinear: return "linear";
    case ProximityVariant::kPower: return "power";
    case ProximityVariant::kEuclidean: return "euclidean";
  }
  return "linear";
}

namespace {

double raw_distance(double dx, double dy, int height, int width, ProximityVariant variant) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (variant) {
    case ProximityVariant::kLinear:
      return std::max(ay / height, ax / width);
    case ProximityVariant::kPower:
      return std::sqrt(std::max(ay / height, ax / width));
    case ProximityVariant::kEuclidean:
      return std::hypot(ay / height, ax / height);
  }
  return 0.0;
}

}  // namespace

ProximityMap proximity_map(float vp_x, float vp_y, int height, int width,
                           ProximityVariant variant) {
  if (vp_x < 0.0f || vp_x >= static_cast<float>(width) || vp_y < 0.0f ||
      vp_y >= static_cast<float>(height)) {
    throw std::invalid_argument("proximity_map: vp (" + std::to_string(vp_x) + ", " +
                                std::to_string(vp_y) + ") outside " + std::to_string(width) +
                                "x" + std::to_string(height));
  }
  ProximityMap map;
  map.variant = variant;
  map.vp_x = vp_x;
  map.vp_y = vp_y;
  map.values = Tensor({height, width});
  double max_raw = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double d = raw_distance(x - vp_x, y - vp_y, height, width, variant);
      map.values.at(y, x) = static_cast<float>(d);
      max_raw = std::max(max_raw, d);
    }
  }
  // The paper writes the distance up to a proportionality constant; pin it by
  // max-normalization so the map spans [0, 1] at any resolution.
  const double scale = max_raw > 0.0 ? 1.0 / max_raw : 0.0;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double v = 1.0 - static_cast<double>(map.values.data()[i]) * scale;
    map.values.data()[i] = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
  return map;
}

namespace {

void check_rect(CropRect rect, int height, int width) {
  if (rect.width < 1 || rect.height < 1 || rect.x < 0 || rect.y < 0 ||
      rect.x + rect.width > width || rect.y + rect.height > height) {
    throw std::invalid_argument("crop_with_map: rect " + std::to_string(rect.x) + "," +
                                std::to_string(rect.y) + " " + std::to_string(rect.width) + "x" +
                                std::to_string(rect.height) + " outside " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
}

ProximityMap crop_map(const ProximityMap& map, CropRect rect) {
  ProximityMap out;
  out.variant = map.variant;
  out.vp_x = map.vp_x - static_cast<float>(rect.x);
  out.vp_y = map.vp_y - static_cast<float>(rect.y);
  out.values = Tensor({rect.height, rect.width});
  for (int y = 0; y < rect.height; ++y) {
    for (int x = 0; x < rect.width; ++x) {
      out.values.at(y, x) = map.values.at(rect.y + y, rect.x + x);
    }
  }
  return out;
}

}  // namespace

CroppedPair crop_with_map(const GrayImage& frame, const ProximityMap& map, CropRect rect) {
  if (frame.height() != map.values.extent(0) || frame.width() != map.values.extent(1)) {
    throw std::invalid_argument("crop_with_map: frame and map sizes differ");
  }
  check_rect(rect, frame.height(), frame.width());
  CroppedPair out;
  out.frame = GrayImage(rect.height, rect.width);
  for (int y = 0; y < rect.height; ++y) {
    for (int x = 0; x < rect.width; ++x) {
      out.frame.at(y, x) = frame.at(rect.y + y, rect.x + x);
    }
  }
  out.map = crop_map(map, rect);
  return out;
}

CroppedTensorPair crop_with_map(const Tensor& frame, const ProximityMap& map, CropRect rect) {
  const bool rank2 = frame.rank() == 2;
  const int c = rank2 ? 1 : frame.extent(0);
  const int h = rank2 ? frame.extent(0) : frame.extent(1);
  const int w = rank2 ? frame.extent(1) : frame.extent(2);
  if (h != map.values.extent(0) || w != map.values.extent(1)) {
    throw std::invalid_argument("crop_with_map: frame and map sizes differ");
  }
  check_rect(rect, h, w);
  CroppedTensorPair out;
  out.frame = rank2 ? Tensor({rect.height, rect.width}) : Tensor({c, rect.height, rect.width});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < rect.height; ++y) {
      for (int x = 0; x < rect.width; ++x) {
        const float v = rank2 ? frame.at(rect.y + y, rect.x + x)
                              : frame.at(ch, rect.y + y, rect.x + x);
        if (rank2) {
          out.frame.at(y, x) = v;
        } else {
          out.frame.at(ch, y, x) = v;
        }
      }
    }
  }
  out.map = crop_map(map, rect);
  return out;
}

GrayImage render_proximity(const ProximityMap& map) {
  GrayImage img(map.values.extent(0), map.values.extent(1));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::round(map.values.data()[i] * 255.0f);
    img.data()[i] = static_cast<std::uint8_t>(v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v));
  }
  return img;
}

}  // namespace vpseg
