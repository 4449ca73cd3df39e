#include "vpseg/densevp.hpp"

#include <cmath>
#include <stdexcept>

namespace vpseg {

GridCoord vp_patch(PatchVp vp, const PatchGrid& grid) {
  // Separable argmin: round each axis half-down so ties go to the smaller
  // index, matching an exhaustive scan in (y, x) order.
  auto round_half_down = [](float v, int hi) {
    int r = static_cast<int>(std::ceil(static_cast<double>(v) - 0.5));
    return r < 0 ? 0 : (r > hi ? hi : r);
  };
  return {round_half_down(vp.x, grid.gw - 1), round_half_down(vp.y, grid.gh - 1)};
}

VpRegion vp_region(GridCoord vp_patch_index, int a, int b, const PatchGrid& grid) {
  if (a < 0 || b < 0) {
    throw std::invalid_argument("vp_region: half-extents must be >= 0");
  }
  VpRegion region;
  region.vp_patch = vp_patch_index;
  region.a = a;
  region.b = b;
  region.nominal_members = (2 * a + 1) * (2 * b + 1);
  region.x_min = std::max(0, vp_patch_index.x - a);
  region.x_max = std::min(grid.gw - 1, vp_patch_index.x + a);
  region.y_min = std::max(0, vp_patch_index.y - b);
  region.y_max = std::min(grid.gh - 1, vp_patch_index.y + b);
  for (int y = region.y_min; y <= region.y_max; ++y) {
    for (int x = region.x_min; x <= region.x_max; ++x) {
      region.members.push_back({x, y});
    }
  }
  return region;
}

std::vector<GridCoord> dense_window_anchors(const VpRegion& region, int s) {
  if (region.members.empty()) {
    throw std::invalid_argument("dense_window_anchors: empty region");
  }
  const int stride = (s + 1) / 2;  // ceil(s/2)
  const int x0 = region.x_min * s, x1 = (region.x_max + 1) * s;
  const int y0 = region.y_min * s, y1 = (region.y_max + 1) * s;
  std::vector<GridCoord> anchors;
  for (int ay = y0; ay + s <= y1; ay += stride) {
    for (int ax = x0; ax + s <= x1; ax += stride) {
      anchors.push_back({ax, ay});
    }
  }
  return anchors;
}

namespace {

std::vector<int> dense_column_indices(const VpRegion& region, int s, int feat_w) {
  std::vector<int> idx;
  const std::vector<GridCoord> anchors = dense_window_anchors(region, s);
  idx.reserve(anchors.size() * static_cast<std::size_t>(s) * s);
  for (const GridCoord& a : anchors) {
    for (int r = 0; r < s; ++r) {
      for (int c = 0; c < s; ++c) {
        idx.push_back((a.y + r) * feat_w + (a.x + c));
      }
    }
  }
  return idx;
}

}  // namespace

Tensor dense_partition(const Tensor& feature, const VpRegion& region, int s) {
  if (feature.rank() != 3) {
    throw std::invalid_argument("dense_partition: expected c x h x w, got " +
                                feature.shape_string());
  }
  const int c = feature.extent(0), h = feature.extent(1), w = feature.extent(2);
  const std::vector<int> idx = dense_column_indices(region, s, w);
  const Tensor flat = feature.reshaped({c, h * w});
  Tensor out({c, static_cast<int>(idx.size())});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.at(ch, static_cast<int>(j)) = flat.at(ch, idx[j]);
    }
  }
  return out;
}

Var dense_partition(Tape& tape, Var feature, const VpRegion& region, int s) {
  const Tensor& fv = tape.value(feature.id);
  if (fv.rank() != 3) {
    throw std::invalid_argument("dense_partition: expected c x h x w, got " + fv.shape_string());
  }
  const int c = fv.extent(0), h = fv.extent(1), w = fv.extent(2);
  const Var flat = ad::reshape(feature, {c, h * w});
  return ad::gather_cols(flat, dense_column_indices(region, s, w));
}

Var augment_context(Tape& tape, Var dynamic_ctx, Var dense_features,
                    const AttentionProjectionVars& proj) {
  const Tensor& dv = tape.value(dynamic_ctx.id);
  if (dv.rank() != 3) {
    throw std::invalid_argument("augment_context: expected c x h x w context, got " +
                                dv.shape_string());
  }
  const int c = dv.extent(0), h = dv.extent(1), w = dv.extent(2);
  if (tape.value(dense_features.id).extent(0) != c) {
    throw std::invalid_argument("augment_context: channel extents differ");
  }
  const Var queries = ad::matmul(proj.wq, ad::reshape(dynamic_ctx, {c, h * w}));
  const Var keys = ad::matmul(proj.wk, dense_features);
  const Var values = ad::matmul(proj.wv, dense_features);
  const Var out = ad::cross_attention(queries, keys, values, nullptr, false);
  return ad::reshape(out, {c, h, w});
}

Tensor augment_context(const Tensor& dynamic_ctx, const Tensor& dense_features,
                       const AttentionProjections& proj) {
  Tape tape;
  const Var out = augment_context(tape, ad::constant(tape, dynamic_ctx),
                                  ad::constant(tape, dense_features),
                                  as_vars(tape, proj, false));
  return tape.value(out.id);
}

}  // namespace vpseg
