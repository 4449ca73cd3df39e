#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vpseg/image.hpp"

namespace vpseg {

// Line in rho-theta form: x*cos(theta) + y*sin(theta) = rho, theta in [0, pi).
struct HoughLine {
  float rho = 0.0f;
  float theta = 0.0f;
  int votes = 0;

  // Slope as delta-row over delta-column. theta = 0 is the vertical line.
  double slope() const {
    const double s = std::sin(static_cast<double>(theta));
    if (s == 0.0) return std::numeric_limits<double>::infinity();
    return -std::cos(static_cast<double>(theta)) / s;
  }

  double distance_to(double x, double y) const {
    return std::abs(x * std::cos(static_cast<double>(theta)) +
                    y * std::sin(static_cast<double>(theta)) - static_cast<double>(rho));
  }
};

struct VpEstimate {
  float x = 0.0f;
  float y = 0.0f;
  int votes = 0;
  bool valid = false;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

// Alg. defaults: opening kernel 5, Canny (50, 150, aperture 3), Hough
// (rho 1, theta pi/180, threshold 200), center distance cap 160, slope
// acceptance (-5,-0.2) u (0.2,5), 100-line cap, cell size L = floor(H/4).
struct VpConfig {
  int morph_kernel = 5;
  float canny_low = 50.0f;
  float canny_high = 150.0f;
  int canny_aperture = 3;
  float hough_rho = 1.0f;
  float hough_theta = static_cast<float>(M_PI / 180.0);
  int hough_threshold = 200;
  float d_max = 160.0f;
  float slope_min = 0.2f;
  float slope_max = 5.0f;
  int max_lines = 100;
  std::uint64_t seed = 0;
};

// Erosion then dilation with an all-ones square kernel; replicated border.
GrayImage morphology_open(const GrayImage& img, int kernel_size);

// Sobel gradients, 4-direction non-maximum suppression, hysteresis by flood
// fill. The edge map is restricted to the bottom 2/3 of the image (rows above
// floor(H/3) are zero). Output pixels are 0 or 255.
GrayImage canny_edges(const GrayImage& img, float low, float high, int aperture);

std::vector<HoughLine> hough_lines(const GrayImage& edges, float rho_res, float theta_res,
                                   int threshold);

// Drops lines farther than d_max from center or with slope outside the
// acceptance interval; subsamples to max_lines with the seeded generator.
std::vector<HoughLine> select_lines(const std::vector<HoughLine>& lines, PixelPoint center,
                                    float d_max, float slope_min, float slope_max,
                                    int max_lines, std::uint64_t seed);

// Pairwise intersections of non-parallel pairs, restricted to a 2W x 2H box
// centered on the image. Concurrent lines contribute one point per pair.
std::vector<PixelPoint> intersections(const std::vector<HoughLine>& lines, int height,
                                      int width);

// Voting cell edge length: L = floor(H/4).
inline int vote_cell_size(int height) { return height / 4; }

// Overlapping L x L cells (stride floor(L/2)) with centers from row
// floor(H/3) down; the best cell's center wins, ties to the smaller
// (row, col) center.
VpEstimate cell_vote(const std::vector<PixelPoint>& points, int height, int width);

VpEstimate detect_vp(const GrayImage& img, const VpConfig& config = {});

}  // namespace vpseg
