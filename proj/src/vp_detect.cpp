#include "vpseg/vp_detect.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "vpseg/rng.hpp"

namespace vpseg {

namespace {

int clamp_index(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Separable sliding min/max with replicated border (clamping the window to
// the image is equivalent).
template <typename Op>
GrayImage window_filter(const GrayImage& img, int radius, Op op) {
  const int h = img.height(), w = img.width();
  GrayImage rows(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t acc = img.at(y, clamp_index(x - radius, 0, w - 1));
      for (int dx = -radius + 1; dx <= radius; ++dx) {
        acc = op(acc, img.at(y, clamp_index(x + dx, 0, w - 1)));
      }
      rows.at(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t acc = rows.at(clamp_index(y - radius, 0, h - 1), x);
      for (int dy = -radius + 1; dy <= radius; ++dy) {
        acc = op(acc, rows.at(clamp_index(y + dy, 0, h - 1), x));
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

}  // namespace

GrayImage morphology_open(const GrayImage& img, int kernel_size) {
  if (kernel_size < 3 || kernel_size % 2 == 0) {
    throw std::invalid_argument("morphology_open: kernel must be odd and >= 3, got " +
                                std::to_string(kernel_size));
  }
  const int radius = kernel_size / 2;
  const GrayImage eroded =
      window_filter(img, radius, [](std::uint8_t a, std::uint8_t b) { return std::min(a, b); });
  return window_filter(eroded, radius,
                       [](std::uint8_t a, std::uint8_t b) { return std::max(a, b); });
}

namespace {

// Sobel-style derivative kernels built from binomial smoothing rows:
// smooth_n = binomial(n-1), diff_n = conv([-1,0,1], binomial(n-3+1)).
std::vector<int> binomial_row(int n) {
  std::vector<int> row{1};
  for (int k = 1; k < n; ++k) {
    std::vector<int> next(row.size() + 1, 0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      next[i] += row[i];
      next[i + 1] += row[i];
    }
    row = std::move(next);
  }
  return row;
}

std::vector<int> derivative_row(int n) {
  const std::vector<int> base = binomial_row(n - 2);
  std::vector<int> diff(static_cast<std::size_t>(n), 0);
  // conv([-1, 0, 1], base)
  for (std::size_t i = 0; i < base.size(); ++i) {
    diff[i] -= base[i];
    diff[i + 2] += base[i];
  }
  return diff;
}

// Horizontal then vertical separable pass with replicated border; output f32.
std::vector<float> separable_filter(const GrayImage& img, const std::vector<int>& kx,
                                    const std::vector<int>& ky) {
  const int h = img.height(), w = img.width();
  const int rx = static_cast<int>(kx.size()) / 2;
  const int ry = static_cast<int>(ky.size()) / 2;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w), out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (std::size_t i = 0; i < kx.size(); ++i) {
        const int xx = clamp_index(x + static_cast<int>(i) - rx, 0, w - 1);
        acc += static_cast<float>(kx[i]) * static_cast<float>(img.at(y, xx));
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (std::size_t i = 0; i < ky.size(); ++i) {
        const int yy = clamp_index(y + static_cast<int>(i) - ry, 0, h - 1);
        acc += static_cast<float>(ky[i]) * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

GrayImage canny_edges(const GrayImage& img, float low, float high, int aperture) {
  if (!(low > 0.0f) || !(low < high)) {
    throw std::invalid_argument("canny_edges: need 0 < low < high, got " + std::to_string(low) +
                                ", " + std::to_string(high));
  }
  if (aperture != 3 && aperture != 5 && aperture != 7) {
    throw std::invalid_argument("canny_edges: aperture must be 3, 5 or 7");
  }
  const int h = img.height(), w = img.width();
  const std::vector<int> smooth = binomial_row(aperture);
  const std::vector<int> deriv = derivative_row(aperture);

  const std::vector<float> gx = separable_filter(img, deriv, smooth);
  const std::vector<float> gy = separable_filter(img, smooth, deriv);

  // stage 1: gradient magnitude, zeroed above the sky boundary so the edge
  // map covers the bottom 2/3 only
  const int sky_rows = h / 3;
  std::vector<float> mag(static_cast<std::size_t>(h) * w, 0.0f);
  for (int y = sky_rows; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      mag[i] = std::hypot(gx[i], gy[i]);
    }
  }

  // stage 2: non-maximum suppression over 4 quantized directions; a tie
  // keeps the earlier pixel along the direction (strict > against the
  // previous neighbor, >= against the next) so a clean step yields a
  // one-pixel band
  std::vector<std::uint8_t> state(mag.size(), 0);  // 0 none, 1 weak, 2 strong
  for (int y = sky_rows; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float m = mag[i];
      if (m < low) continue;
      const float ax = gx[i], ay = gy[i];
      // Quantize the gradient direction to horizontal, vertical, or one of
      // the two diagonals (tan 22.5 deg = 0.4142 boundaries).
      int dx1, dy1;
      const float absx = std::abs(ax), absy = std::abs(ay);
      if (absy <= 0.4142135f * absx) {
        dx1 = 1; dy1 = 0;
      } else if (absx <= 0.4142135f * absy) {
        dx1 = 0; dy1 = 1;
      } else if ((ax > 0) == (ay > 0)) {
        dx1 = 1; dy1 = 1;
      } else {
        dx1 = 1; dy1 = -1;
      }
      auto mag_at = [&](int yy, int xx) -> float {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0f;
        return mag[static_cast<std::size_t>(yy) * w + xx];
      };
      const float prev = mag_at(y - dy1, x - dx1);
      const float next = mag_at(y + dy1, x + dx1);
      if (m > prev && m >= next) {
        state[i] = m >= high ? 2 : 1;
      }
    }
  }

  // stage 3: hysteresis, 8-connected flood fill from strong pixels
  GrayImage edges(h, w, 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i] == 2) stack.push_back(i);
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int y = static_cast<int>(i) / w;
    const int x = static_cast<int>(i) % w;
    if (edges.at(y, x)) continue;
    edges.at(y, x) = 255;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (state[j] != 0 && !edges.at(yy, xx)) stack.push_back(j);
      }
    }
  }
  return edges;
}

std::vector<HoughLine> hough_lines(const GrayImage& edges, float rho_res, float theta_res,
                                   int threshold) {
  const int h = edges.height(), w = edges.width();
  const int num_theta = std::max(1, static_cast<int>(std::round(M_PI / theta_res)));
  const double diag = std::hypot(static_cast<double>(h), static_cast<double>(w));
  const int num_rho = 2 * static_cast<int>(std::ceil(diag / rho_res)) + 1;
  const int rho_offset = num_rho / 2;

  std::vector<double> sin_tab(num_theta), cos_tab(num_theta);
  for (int t = 0; t < num_theta; ++t) {
    const double theta = t * static_cast<double>(theta_res);
    sin_tab[t] = std::sin(theta);
    cos_tab[t] = std::cos(theta);
  }

  std::vector<int> accum(static_cast<std::size_t>(num_theta) * num_rho, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!edges.at(y, x)) continue;
      for (int t = 0; t < num_theta; ++t) {
        const double rho = x * cos_tab[t] + y * sin_tab[t];
        const int r = static_cast<int>(std::lround(rho / rho_res)) + rho_offset;
        ++accum[static_cast<std::size_t>(t) * num_rho + r];
      }
    }
  }

  std::vector<HoughLine> lines;
  for (int t = 0; t < num_theta; ++t) {
    for (int r = 0; r < num_rho; ++r) {
      const int votes = accum[static_cast<std::size_t>(t) * num_rho + r];
      if (votes >= threshold) {
        HoughLine line;
        line.rho = static_cast<float>((r - rho_offset) * rho_res);
        line.theta = static_cast<float>(t * theta_res);
        line.votes = votes;
        lines.push_back(line);
      }
    }
  }
  // Votes descending; (theta, rho) order breaks ties deterministically.
  std::stable_sort(lines.begin(), lines.end(), [](const HoughLine& a, const HoughLine& b) {
    return a.votes > b.votes;
  });
  return lines;
}

std::vector<HoughLine> select_lines(const std::vector<HoughLine>& lines, PixelPoint center,
                                    float d_max, float slope_min, float slope_max,
                                    int max_lines, std::uint64_t seed) {
  std::vector<HoughLine> kept;
  for (const HoughLine& line : lines) {
    if (line.distance_to(center.x, center.y) > d_max) continue;
    const double m = std::abs(line.slope());
    if (!(m > slope_min && m < slope_max)) continue;
    kept.push_back(line);
  }
  if (static_cast<int>(kept.size()) <= max_lines) return kept;

  // Partial Fisher-Yates on the index list, then restore input order.
  std::vector<int> idx(kept.size());
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(seed);
  for (int i = 0; i < max_lines; ++i) {
    const int j = i + static_cast<int>(rng.next_below(idx.size() - static_cast<std::size_t>(i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(max_lines));
  std::sort(idx.begin(), idx.end());
  std::vector<HoughLine> sampled;
  sampled.reserve(idx.size());
  for (int i : idx) sampled.push_back(kept[static_cast<std::size_t>(i)]);
  return sampled;
}

std::vector<PixelPoint> intersections(const std::vector<HoughLine>& lines, int height,
                                      int width) {
  std::vector<PixelPoint> points;
  const double x_lo = -0.5 * width, x_hi = 1.5 * width;
  const double y_lo = -0.5 * height, y_hi = 1.5 * height;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    const double ci = std::cos(static_cast<double>(lines[i].theta));
    const double si = std::sin(static_cast<double>(lines[i].theta));
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const double cj = std::cos(static_cast<double>(lines[j].theta));
      const double sj = std::sin(static_cast<double>(lines[j].theta));
      const double det = ci * sj - si * cj;
      if (std::abs(det) < 1e-9) continue;  // parallel pair
      const double x = (lines[i].rho * sj - lines[j].rho * si) / det;
      const double y = (lines[j].rho * ci - lines[i].rho * cj) / det;
      if (x < x_lo || x > x_hi || y < y_lo || y > y_hi) continue;
      points.push_back({x, y});
    }
  }
  return points;
}

VpEstimate cell_vote(const std::vector<PixelPoint>& points, int height, int width) {
  VpEstimate best;
  const int cell = vote_cell_size(height);
  if (cell < 1) return best;
  const int stride = std::max(1, cell / 2);
  const double half = cell / 2.0;
  const int first_row = height / 3;
  for (int cy = first_row; cy < height; cy += stride) {
    for (int cx = 0; cx < width; cx += stride) {
      int hits = 0;
      for (const PixelPoint& p : points) {
        if (std::abs(p.x - cx) <= half && std::abs(p.y - cy) <= half) ++hits;
      }
      if (hits > best.votes) {
        best.votes = hits;
        best.x = static_cast<float>(cx);
        best.y = static_cast<float>(cy);
      }
    }
  }
  best.valid = best.votes > 0;
  return best;
}

VpEstimate detect_vp(const GrayImage& img, const VpConfig& config) {
  if (img.height() < 8 || img.width() < 8) {
    throw std::invalid_argument("detect_vp: image must be at least 8x8");
  }
  const GrayImage opened = morphology_open(img, config.morph_kernel);
  const GrayImage edges =
      canny_edges(opened, config.canny_low, config.canny_high, config.canny_aperture);
  const std::vector<HoughLine> lines =
      hough_lines(edges, config.hough_rho, config.hough_theta, config.hough_threshold);
  const PixelPoint center{img.width() / 2.0, img.height() / 2.0};
  const std::vector<HoughLine> selected =
      select_lines(lines, center, config.d_max, config.slope_min, config.slope_max,
                   config.max_lines, config.seed);
  if (selected.size() < 2) return {};
  const std::vector<PixelPoint> crossings = intersections(selected, img.height(), img.width());
  if (crossings.empty()) return {};
  return cell_vote(crossings, img.height(), img.width());
}

}  // namespace vpseg
