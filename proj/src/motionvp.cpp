#include "vpseg/motionvp.hpp"

#include <cmath>
#include <stdexcept>

#include "vpseg/rng.hpp"

namespace vpseg {

PatchGrid PatchGrid::create(int feat_h, int feat_w, int s) {
  if (s < 1 || feat_h % s != 0 || feat_w % s != 0) {
    throw std::invalid_argument("PatchGrid: patch size " + std::to_string(s) +
                                " must divide feature dims " + std::to_string(feat_h) + "x" +
                                std::to_string(feat_w));
  }
  PatchGrid grid;
  grid.s = s;
  grid.gh = feat_h / s;
  grid.gw = feat_w / s;
  return grid;
}

std::vector<int> patch_column_indices(const PatchGrid& grid, int feat_w, int px, int py) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(grid.s) * grid.s);
  for (int r = 0; r < grid.s; ++r) {
    for (int c = 0; c < grid.s; ++c) {
      idx.push_back((py * grid.s + r) * feat_w + (px * grid.s + c));
    }
  }
  return idx;
}

namespace {

// Column permutation taking the flat c x hw layout to partition order.
std::vector<int> partition_permutation(const PatchGrid& grid, int w) {
  std::vector<int> perm;
  perm.reserve(static_cast<std::size_t>(grid.patch_count()) * grid.s * grid.s);
  for (int py = 0; py < grid.gh; ++py) {
    for (int px = 0; px < grid.gw; ++px) {
      for (int idx : patch_column_indices(grid, w, px, py)) perm.push_back(idx);
    }
  }
  return perm;
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

}  // namespace

Tensor partition_patches(const Tensor& feature, int s) {
  if (feature.rank() != 3) {
    throw std::invalid_argument("partition_patches: expected c x h x w, got " +
                                feature.shape_string());
  }
  const int c = feature.extent(0), h = feature.extent(1), w = feature.extent(2);
  const PatchGrid grid = PatchGrid::create(h, w, s);
  const std::vector<int> perm = partition_permutation(grid, w);
  const Tensor flat = feature.reshaped({c, h * w});
  Tensor out({c, h * w});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < perm.size(); ++j) {
      out.at(ch, static_cast<int>(j)) = flat.at(ch, perm[j]);
    }
  }
  return out;
}

Tensor tile_patches(const Tensor& patches, int c, int h, int w, int s) {
  if (patches.rank() != 2 || patches.extent(0) != c || patches.extent(1) != h * w) {
    throw std::invalid_argument("tile_patches: expected " + std::to_string(c) + "x" +
                                std::to_string(h * w) + ", got " + patches.shape_string());
  }
  const PatchGrid grid = PatchGrid::create(h, w, s);
  const std::vector<int> perm = partition_permutation(grid, w);
  Tensor flat({c, h * w});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < perm.size(); ++j) {
      flat.at(ch, perm[j]) = patches.at(ch, static_cast<int>(j));
    }
  }
  return flat.reshaped({c, h, w});
}

Tensor patch_features(const Tensor& feature, const PatchGrid& grid, int px, int py) {
  const int c = feature.extent(0), h = feature.extent(1), w = feature.extent(2);
  const Tensor flat = feature.reshaped({c, h * w});
  const std::vector<int> idx = patch_column_indices(grid, w, px, py);
  Tensor out({c, static_cast<int>(idx.size())});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.at(ch, static_cast<int>(j)) = flat.at(ch, idx[j]);
    }
  }
  return out;
}

PatchVp pixel_vp_to_patch(const VpEstimate& vp, int frame_h, int frame_w, int feat_h,
                          int feat_w, int s) {
  if (!vp.valid) {
    throw std::invalid_argument("pixel_vp_to_patch: invalid estimate; substitute grid center");
  }
  const PatchGrid grid = PatchGrid::create(feat_h, feat_w, s);
  auto clampf = [](float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); };
  PatchVp out;
  out.x = clampf(vp.x * static_cast<float>(feat_w) / (static_cast<float>(frame_w) * s), 0.0f,
                 static_cast<float>(grid.gw - 1));
  out.y = clampf(vp.y * static_cast<float>(feat_h) / (static_cast<float>(frame_h) * s), 0.0f,
                 static_cast<float>(grid.gh - 1));
  return out;
}

PatchVp grid_center_vp(const PatchGrid& grid) {
  return {static_cast<float>(grid.gw - 1) / 2.0f, static_cast<float>(grid.gh - 1) / 2.0f};
}

std::array<int, 2> assign_direction(float dx, float dy) {
  if (dx == 0.0f && dy == 0.0f) return kCandidateDirections[0];
  const double motion_angle = std::atan2(static_cast<double>(dy), static_cast<double>(dx));
  std::array<int, 2> best = kCandidateDirections[0];
  double best_dist = 0.0;
  bool first = true;
  for (const auto& cand : kCandidateDirections) {
    const double cand_angle =
        std::atan2(static_cast<double>(cand[1]), static_cast<double>(cand[0]));
    const double dist = std::abs(cand_angle - motion_angle);
    if (first || dist < best_dist) {
      best = cand;
      best_dist = dist;
      first = false;
    }
  }
  return best;
}

SampleCoords sample_patch_coords(GridCoord patch, std::array<int, 2> direction,
                                 int frame_gap_steps, int delta_d, const PatchGrid& grid) {
  if (frame_gap_steps < 1) {
    throw std::invalid_argument("sample_patch_coords: only previous frames are sampled, gap " +
                                std::to_string(frame_gap_steps));
  }
  const int ox = frame_gap_steps * delta_d * direction[0];
  const int oy = frame_gap_steps * delta_d * direction[1];
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  SampleCoords out;
  out.forward = {clampi(patch.x + ox, grid.gw - 1), clampi(patch.y + oy, grid.gh - 1)};
  out.backward = {clampi(patch.x - ox, grid.gw - 1), clampi(patch.y - oy, grid.gh - 1)};
  out.local = {patch.x, patch.y};
  return out;
}

AttentionProjections random_projections(int channels, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(channels));
  auto make = [&]() {
    Tensor w({channels, channels});
    for (std::size_t i = 0; i < w.size(); ++i) {
      w.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    return w;
  };
  AttentionProjections proj;
  proj.wq = make();
  proj.wk = make();
  proj.wv = make();
  return proj;
}

AttentionProjectionVars as_vars(Tape& tape, const AttentionProjections& proj,
                                bool requires_grad) {
  return {ad::leaf(tape, proj.wq, requires_grad), ad::leaf(tape, proj.wk, requires_grad),
          ad::leaf(tape, proj.wv, requires_grad)};
}

std::vector<std::array<int, 2>> direction_grid(const PatchGrid& grid, PatchVp vp) {
  std::vector<std::array<int, 2>> dirs;
  dirs.reserve(static_cast<std::size_t>(grid.patch_count()));
  for (int py = 0; py < grid.gh; ++py) {
    for (int px = 0; px < grid.gw; ++px) {
      dirs.push_back(assign_direction(vp.x - static_cast<float>(px),
                                      vp.y - static_cast<float>(py)));
    }
  }
  return dirs;
}

Var dynamic_context(Tape& tape, const std::vector<Var>& features,
                    const std::vector<PatchVp>& patch_vps, int s, int delta_d,
                    const AttentionProjectionVars& proj) {
  if (features.size() < 2) {
    throw std::invalid_argument("dynamic_context: need the current frame plus >= 1 neighbor");
  }
  if (patch_vps.size() != features.size()) {
    throw std::invalid_argument("dynamic_context: one patch VP per frame required");
  }
  const Tensor& cur = tape.value(features.back().id);
  const int c = cur.extent(0), h = cur.extent(1), w = cur.extent(2);
  for (const Var& f : features) {
    const Tensor& v = tape.value(f.id);
    if (v.rank() != 3 || v.extent(0) != c || v.extent(1) != h || v.extent(2) != w) {
      throw std::invalid_argument("dynamic_context: frame features must all be " +
                                  cur.shape_string() + ", got " + v.shape_string());
    }
  }
  const PatchGrid grid = PatchGrid::create(h, w, s);
  const int frames = static_cast<int>(features.size());
  const int current = frames - 1;

  std::vector<Var> flat;
  flat.reserve(features.size());
  for (const Var& f : features) flat.push_back(ad::reshape(f, {c, h * w}));

  std::vector<Var> patch_outputs;
  patch_outputs.reserve(static_cast<std::size_t>(grid.patch_count()));
  for (int py = 0; py < grid.gh; ++py) {
    for (int px = 0; px < grid.gw; ++px) {
      const Var local = ad::gather_cols(flat.back(), patch_column_indices(grid, w, px, py));
      const Var q = ad::matmul(proj.wq, local);

      // Concatenated forward/backward/local samples from every neighbor,
      // oldest first.
      std::vector<Var> sampled;
      sampled.reserve(static_cast<std::size_t>(frames - 1));
      for (int j = 0; j < current; ++j) {
        const PatchVp vp = patch_vps[static_cast<std::size_t>(j)];
        const std::array<int, 2> dir = assign_direction(vp.x - static_cast<float>(px),
                                                        vp.y - static_cast<float>(py));
        const SampleCoords coords =
            sample_patch_coords({px, py}, dir, current - j, delta_d, grid);
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(3) * grid.s * grid.s);
        for (const GridCoord& p : {coords.forward, coords.backward, coords.local}) {
          for (int i : patch_column_indices(grid, w, p.x, p.y)) idx.push_back(i);
        }
        sampled.push_back(ad::gather_cols(flat[static_cast<std::size_t>(j)], std::move(idx)));
      }
      const Var gathered = sampled.size() == 1 ? sampled[0] : ad::concat_cols(sampled);
      const Var k = ad::matmul(proj.wk, gathered);
      const Var v = ad::matmul(proj.wv, gathered);
      patch_outputs.push_back(ad::cross_attention(q, k, v, nullptr, false));
    }
  }

  const Var stitched = ad::concat_cols(patch_outputs);
  const std::vector<int> inv = inverse_permutation(partition_permutation(grid, w));
  return ad::reshape(ad::gather_cols(stitched, inv), {c, h, w});
}

Tensor dynamic_context(const std::vector<Tensor>& features,
                       const std::vector<PatchVp>& patch_vps, int s, int delta_d,
                       const AttentionProjections& proj) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(features.size());
  for (const Tensor& f : features) vars.push_back(ad::constant(tape, f));
  const Var out =
      dynamic_context(tape, vars, patch_vps, s, delta_d, as_vars(tape, proj, false));
  return tape.value(out.id);
}

}  // namespace vpseg
