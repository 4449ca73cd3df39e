#include "vpseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vpseg/rng.hpp"

namespace vpseg {

namespace {

constexpr std::uint8_t kSkyShade = 185;
constexpr std::uint8_t kGroundShade = 65;
constexpr std::uint8_t kRoadShade = 120;
constexpr std::uint8_t kLaneShade = 235;

double deg(double d) { return d * M_PI / 180.0; }

}  // namespace

SceneSpec SceneSpec::randomized(std::uint64_t seed, int height, int width, double max_noise) {
  SplitMix64 rng(seed);
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  // VP near the image center, slightly above mid-height: lines through it
  // stay inside the d_max=160 center-distance cap at the reference 512x1024
  // scale, and the long run below the VP keeps Hough vote counts far above
  // the fixed 200 threshold.
  spec.vp_x = width / 2.0 + rng.uniform(-0.055, 0.055) * width;
  spec.vp_y = height * rng.uniform(0.34, 0.39);

  // Slopes snapped to whole degrees so rasterized lines land in single Hough
  // theta bins; gentle angles keep every line long enough that even a
  // worst-case two-bin rho split clears the vote threshold. All slopes stay
  // inside the (0.2, 5) acceptance interval.
  auto snapped_slope = [&rng](int lo_deg, int hi_deg) {
    const int d = lo_deg + static_cast<int>(rng.next_below(
                               static_cast<std::uint64_t>(hi_deg - lo_deg + 1)));
    return std::tan(deg(static_cast<double>(d)));
  };
  spec.road_left_slope = -snapped_slope(15, 19);
  spec.road_right_slope = snapped_slope(15, 19);
  spec.lane_slopes = {-snapped_slope(21, 26), snapped_slope(21, 26)};
  spec.lane_width = std::max(6, height / 64);
  spec.noise = rng.uniform(0.0, max_noise);
  spec.salt_fraction = 0.98;
  spec.texture_amplitude = 4;
  spec.invalid_radius = 0.12 * height;
  spec.frame_count = 2;

  // Objects live between the lane markings (steeply below the VP) so their
  // axis-aligned edges never interrupt the converging lines.
  const int objects = 1 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < objects; ++i) {
    SceneObject obj;
    obj.instance_id = static_cast<std::uint16_t>(i + 1);
    obj.angle = rng.uniform(deg(55.0), deg(125.0));
    obj.distance = rng.uniform(0.30 * height, 0.42 * height);
    obj.half_width = rng.uniform(0.06 * height, 0.10 * height);
    obj.half_height = obj.half_width * rng.uniform(0.6, 0.9);
    obj.growth = rng.uniform(0.03, 0.08);
    obj.shade = static_cast<std::uint8_t>(8 + rng.next_below(14));
    spec.objects.push_back(obj);
  }
  return spec;
}

SceneSequence generate_scene_sequence(const SceneSpec& spec) {
  if (spec.height < 16 || spec.width < 16) {
    throw std::invalid_argument("generate_scene_sequence: scene too small");
  }
  if (spec.frame_count < 1) {
    throw std::invalid_argument("generate_scene_sequence: need >= 1 frame");
  }
  if (spec.vp_x < 0.0 || spec.vp_x >= spec.width || spec.vp_y < 0.0 ||
      spec.vp_y >= spec.height) {
    throw std::invalid_argument("generate_scene_sequence: VP outside the frame");
  }
  if (spec.road_left_slope == 0.0 || spec.road_right_slope == 0.0) {
    throw std::invalid_argument("generate_scene_sequence: road edges cannot be horizontal");
  }

  const int h = spec.height, w = spec.width;
  SceneSequence scene;
  scene.spec = spec;

  // Static texture shared by all frames so inter-frame changes come from
  // object motion only.
  SplitMix64 texture_rng(spec.seed ^ 0x7465787475726531ULL);
  std::vector<int> texture(static_cast<std::size_t>(h) * w, 0);
  if (spec.texture_amplitude > 0) {
    for (auto& t : texture) {
      t = static_cast<int>(texture_rng.next_below(
              static_cast<std::uint64_t>(2 * spec.texture_amplitude + 1))) -
          spec.texture_amplitude;
    }
  }

  for (int f = 0; f < spec.frame_count; ++f) {
    GrayImage frame(h, w);
    LabelMap labels(h, w, kClassSky);
    InstanceMap instances(h, w, 0);
    InvalidMask mask(h, w, 0);

    // Background: sky above the horizon row, ground below, road wedge between
    // its two edges, lane markings converging at the VP.
    for (int y = 0; y < h; ++y) {
      const double dy = y - spec.vp_y;
      double road_lo = 0.0, road_hi = -1.0;
      if (dy >= 0.0) {
        const double xl = spec.vp_x + dy / spec.road_left_slope;
        const double xr = spec.vp_x + dy / spec.road_right_slope;
        road_lo = std::min(xl, xr);
        road_hi = std::max(xl, xr);
      }
      for (int x = 0; x < w; ++x) {
        std::uint8_t shade;
        std::uint16_t label;
        if (dy < 0.0) {
          shade = kSkyShade;
          label = kClassSky;
        } else if (x >= road_lo && x <= road_hi) {
          shade = kRoadShade;
          label = kClassRoad;
        } else {
          shade = kGroundShade;
          label = kClassGround;
        }
        const int v = static_cast<int>(shade) + texture[static_cast<std::size_t>(y) * w + x];
        frame.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        labels.at(y, x) = label;
      }
      if (dy >= 1.0) {
        for (double slope : spec.lane_slopes) {
          if (slope == 0.0) continue;
          // lane_width is perpendicular; widen the per-row horizontal span so
          // slanted markings keep that thickness (and survive the opening).
          const double half_span =
              spec.lane_width * 0.5 * std::sqrt(1.0 + slope * slope) / std::abs(slope);
          const double cx = spec.vp_x + dy / slope;
          const int x0 = static_cast<int>(std::lround(cx - half_span));
          const int x1 = static_cast<int>(std::lround(cx + half_span));
          for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) {
            frame.at(y, x) = kLaneShade;
            labels.at(y, x) = kClassRoad;
          }
        }
      }
    }

    // Objects, radially displaced and scaled by (1+g)^f.
    std::vector<std::pair<double, double>> centers;
    for (const SceneObject& obj : spec.objects) {
      const double scale = std::pow(1.0 + obj.growth, static_cast<double>(f));
      const double dist = obj.distance * scale;
      const double cx = spec.vp_x + dist * std::cos(obj.angle);
      const double cy = spec.vp_y + dist * std::sin(obj.angle);
      centers.push_back({cx, cy});
      const int x0 = static_cast<int>(std::lround(cx - obj.half_width * scale));
      const int x1 = static_cast<int>(std::lround(cx + obj.half_width * scale));
      const int y0 = static_cast<int>(std::lround(cy - obj.half_height * scale));
      const int y1 = static_cast<int>(std::lround(cy + obj.half_height * scale));
      for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y) {
        for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) {
          frame.at(y, x) = obj.shade;
          labels.at(y, x) = kClassObject;
          instances.at(y, x) = obj.instance_id;
        }
      }
    }
    scene.object_centers.push_back(std::move(centers));

    // Invalid disc around the VP.
    if (spec.invalid_radius > 0.0) {
      const double r2 = spec.invalid_radius * spec.invalid_radius;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double dx = x - spec.vp_x, dy = y - spec.vp_y;
          if (dx * dx + dy * dy <= r2) mask.at(y, x) = 1;
        }
      }
    }

    // Impulse noise, frames only; labels stay clean.
    if (spec.noise > 0.0) {
      SplitMix64 noise_rng(spec.seed ^ (0x6e6f697365ULL + static_cast<std::uint64_t>(f)));
      const auto pixels = static_cast<std::uint64_t>(frame.size());
      const auto hits = static_cast<std::uint64_t>(spec.noise * static_cast<double>(pixels));
      for (std::uint64_t i = 0; i < hits; ++i) {
        const std::uint64_t p = noise_rng.next_below(pixels);
        const bool salt = noise_rng.next_double() < spec.salt_fraction;
        frame.data()[p] = salt ? 255 : 0;
      }
    }

    scene.frames.push_back(std::move(frame));
    scene.labels.push_back(std::move(labels));
    scene.instances.push_back(std::move(instances));
    scene.invalid_masks.push_back(std::move(mask));
  }
  return scene;
}

void write_scene(const SceneSequence& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto frame_name = [](const char* stem, int f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d.pgm", stem, f);
    return std::string(buf);
  };
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    const int fi = static_cast<int>(f);
    write_pgm(scene.frames[f], dir + "/" + frame_name("frame", fi));
    write_pgm16(scene.labels[f], dir + "/" + frame_name("labels", fi));
    write_pgm16(scene.instances[f], dir + "/" + frame_name("instances", fi));
    GrayImage mask(scene.invalid_masks[f].height(), scene.invalid_masks[f].width());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask.data()[i] = scene.invalid_masks[f].data()[i] ? 255 : 0;
    }
    write_pgm(mask, dir + "/" + frame_name("invalid", fi));
  }

  nlohmann::ordered_json j;
  j["height"] = scene.spec.height;
  j["width"] = scene.spec.width;
  j["vp"] = {{"x", scene.spec.vp_x}, {"y", scene.spec.vp_y}};
  j["frame_count"] = scene.spec.frame_count;
  j["noise"] = scene.spec.noise;
  j["seed"] = scene.spec.seed;
  j["classes"] = kSceneClasses;
  nlohmann::ordered_json objs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < scene.spec.objects.size(); ++i) {
    const SceneObject& o = scene.spec.objects[i];
    nlohmann::ordered_json jo;
    jo["instance_id"] = o.instance_id;
    jo["growth"] = o.growth;
    nlohmann::ordered_json cs = nlohmann::ordered_json::array();
    for (const auto& frame_centers : scene.object_centers) {
      cs.push_back({{"x", frame_centers[i].first}, {"y", frame_centers[i].second}});
    }
    jo["centers"] = cs;
    objs.push_back(jo);
  }
  j["objects"] = objs;
  std::ofstream os(dir + "/scene.json", std::ios::binary);
  if (!os) throw std::runtime_error("write_scene: cannot open " + dir + "/scene.json");
  os << j.dump(2) << "\n";
}

}  // namespace vpseg
