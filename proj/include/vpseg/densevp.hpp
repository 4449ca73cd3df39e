#pragma once

#include <vector>

#include "vpseg/motionvp.hpp"
#include "vpseg/tape.hpp"
#include "vpseg/tensor.hpp"

namespace vpseg {

// Rectangular set of sparse patches around the VP patch, clipped to the grid.
struct VpRegion {
  GridCoord vp_patch;
  int a = 0;
  int b = 0;
  int x_min = 0, x_max = 0;  // inclusive, clipped
  int y_min = 0, y_max = 0;
  int nominal_members = 0;  // (2a+1)(2b+1)
  std::vector<GridCoord> members;  // row-major
};

// Nearest grid index to the patch-level VP under squared Euclidean distance;
// ties prefer the smaller y, then the smaller x.
GridCoord vp_patch(PatchVp vp, const PatchGrid& grid);

VpRegion vp_region(GridCoord vp_patch_index, int a, int b, const PatchGrid& grid);

// Dense window anchors in feature cells: s x s windows stepping ceil(s/2)
// from the region's top-left across its span, row-major.
std::vector<GridCoord> dense_window_anchors(const VpRegion& region, int s);

// Gathered dense features, c x (m * s^2), windows concatenated in anchor
// order, each window flattened row-major.
Tensor dense_partition(const Tensor& feature, const VpRegion& region, int s);
Var dense_partition(Tape& tape, Var feature, const VpRegion& region, int s);

// Dynamic context queried against the dense VP-region features: queries are
// all hw positions of the context, keys/values the m*s^2 dense columns.
Var augment_context(Tape& tape, Var dynamic_ctx, Var dense_features,
                    const AttentionProjectionVars& proj);
Tensor augment_context(const Tensor& dynamic_ctx, const Tensor& dense_features,
                       const AttentionProjections& proj);

}  // namespace vpseg
