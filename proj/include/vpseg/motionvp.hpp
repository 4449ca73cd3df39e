#pragma once

#include <array>
#include <vector>

#include "vpseg/tape.hpp"
#include "vpseg/tensor.hpp"
#include "vpseg/vp_detect.hpp"

namespace vpseg {

// Partition metadata for an h x w feature map cut into s x s patches.
struct PatchGrid {
  int s = 4;
  int gw = 0;  // w / s
  int gh = 0;  // h / s

  static PatchGrid create(int feat_h, int feat_w, int s);
  int patch_count() const { return gw * gh; }
};

struct PatchVp {
  float x = 0.0f;
  float y = 0.0f;
};

// Candidate orientations n*pi/4, n = 0..3, as integer direction vectors.
inline constexpr std::array<std::array<int, 2>, 4> kCandidateDirections = {
    {{+1, 0}, {+1, +1}, {0, +1}, {-1, +1}}};

struct GridCoord {
  int x = 0;
  int y = 0;
};

struct SampleCoords {
  GridCoord forward;
  GridCoord backward;
  GridCoord local;
};

// Column indices (into the c x hw flattened feature map) of one s x s patch,
// row-major within the patch.
std::vector<int> patch_column_indices(const PatchGrid& grid, int feat_w, int px, int py);

// All-patch partition: c x h x w -> c x (s^2 * patches), patches in row-major
// grid order, each patch's s^2 columns contiguous. `tile_patches` inverts it.
Tensor partition_patches(const Tensor& feature, int s);
Tensor tile_patches(const Tensor& patches, int c, int h, int w, int s);
// Single patch extraction (c x s^2).
Tensor patch_features(const Tensor& feature, const PatchGrid& grid, int px, int py);

// Pixel VP -> patch-level VP: (x * w / (W * s), y * h / (H * s)), clamped
// into [0, gw-1] x [0, gh-1]. Invalid estimates are the caller's problem
// (grid_center_vp is the documented fallback).
PatchVp pixel_vp_to_patch(const VpEstimate& vp, int frame_h, int frame_w, int feat_h,
                          int feat_w, int s);
PatchVp grid_center_vp(const PatchGrid& grid);

// Argmin over the candidate set of |atan2(v,u) - atan2(dy,dx)|, evaluated
// literally (no 2*pi wraparound); ties resolve to the first candidate listed.
// A zero motion vector maps to (+1, 0).
std::array<int, 2> assign_direction(float dx, float dy);

// Forward/backward/local grid coordinates for a neighbor m*k frames back:
// offset = m * delta_d * (u, v), clamped componentwise into the grid.
SampleCoords sample_patch_coords(GridCoord patch, std::array<int, 2> direction,
                                 int frame_gap_steps, int delta_d, const PatchGrid& grid);

struct AttentionProjections {
  Tensor wq, wk, wv;  // channel-preserving c x c maps
};

struct AttentionProjectionVars {
  Var wq, wk, wv;
};

AttentionProjections random_projections(int channels, std::uint64_t seed);
AttentionProjectionVars as_vars(Tape& tape, const AttentionProjections& proj,
                                bool requires_grad);

// Frame-level dynamic context: per patch, the current frame's patch features
// query the concatenated forward/backward/local samples from every neighbor
// frame; patch outputs are tiled back to c x h x w. `features` holds all
// frames in timestamp order, current frame last, each k frames apart;
// `patch_vps` aligns with `features`.
Var dynamic_context(Tape& tape, const std::vector<Var>& features,
                    const std::vector<PatchVp>& patch_vps, int s, int delta_d,
                    const AttentionProjectionVars& proj);

// Non-taped evaluation.
Tensor dynamic_context(const std::vector<Tensor>& features,
                       const std::vector<PatchVp>& patch_vps, int s, int delta_d,
                       const AttentionProjections& proj);

// Per-patch assigned directions for one frame's VP, row-major grid order.
std::vector<std::array<int, 2>> direction_grid(const PatchGrid& grid, PatchVp vp);

}  // namespace vpseg
