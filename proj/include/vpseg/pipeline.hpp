#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vpseg/cma.hpp"
#include "vpseg/densevp.hpp"
#include "vpseg/image.hpp"
#include "vpseg/motionvp.hpp"
#include "vpseg/proximity.hpp"
#include "vpseg/synthetic.hpp"
#include "vpseg/tape.hpp"
#include "vpseg/tensor.hpp"
#include "vpseg/vp_detect.hpp"

namespace vpseg {

struct PipelineConfig {
  double downsample_ratio = 0.5;
  int patch_size = 4;       // s, feature cells per sparse patch
  int frame_interval = 3;   // k
  int sampling_coeff = 1;   // delta_d
  int region_a = 1;
  int region_b = 1;
  int motion_layers = 2;    // N
  double lambda_d = 0.1;
  int num_classes = 4;      // K
  int channels = 16;        // c
  int stub_patch = 8;       // P, backbone stride
  std::string proximity_variant = "linear";
  std::uint64_t seed = 1;     // parameters + backbone
  std::uint64_t vp_seed = 0;  // Hough line subsampling
  bool use_motionvp = true;
  bool use_densevp = true;

  static PipelineConfig from_json_file(const std::string& path);
  static PipelineConfig from_json_text(const std::string& text);
  std::string to_json() const;
};

// Frozen random patch projection standing in for the pretrained encoder:
// each P x P patch of (pixel/255 - 0.5) maps linearly to c channels.
struct StubBackbone {
  int patch_size = 8;
  int channels = 16;
  Tensor weight;  // c x P^2

  static StubBackbone create(int patch_size, int channels, std::uint64_t seed);
};

Tensor stub_features(const GrayImage& frame, const StubBackbone& backbone);

// 1x1 channel projection c -> K plus bias, bilinearly upsampled to H x W.
Var stub_decode(Tape& tape, Var features, Var head_weight, Var head_bias, int out_h,
                int out_w);
Tensor stub_decode(const Tensor& features, const Tensor& head_weight, const Tensor& head_bias,
                   int out_h, int out_w);

// Named parameter set; map order keeps updates and serialization deterministic.
using ParamStore = std::map<std::string, Tensor>;

ParamStore init_params(const PipelineConfig& config);
void save_params(const ParamStore& params, const std::string& dir);
ParamStore load_params(const std::string& dir);

struct PipelineResult {
  std::vector<VpEstimate> vps;     // one per input frame
  VpRegion region;                 // dense VP region of the current frame
  Tensor dynamic_ctx;              // F'_t, c x h x w
  Tensor augmented_ctx;            // F''_t, c x h x w
  Tensor detail_attention;         // O, K x h x w
  Tensor context_pred;             // P_c, K x H x W
  Tensor detail_pred;              // P_d, K x H x W
  Tensor fused_pred;               // P_f, K x H x W
};

std::string region_to_json(const VpRegion& region);

PipelineResult run_pipeline(const std::vector<GrayImage>& frames, const PipelineConfig& config,
                            const ParamStore& params);

struct TrainOptions {
  int steps = 500;
  float learning_rate = 16.0f;
  std::uint64_t seed = 7;
  int train_scenes = 4;
  int scene_height = 256;
  int scene_width = 512;
};

struct TrainResult {
  ParamStore params;
  std::vector<float> loss_curve;           // loss before each update
  std::vector<float> smoothed_loss_curve;  // running minimum
  bool diverged = false;
  double heldout_miou = 0.0;
};

// Plain gradient descent on the combined loss over seeded synthetic scenes;
// the held-out scene is scored with the trained parameters.
TrainResult train_toy(const PipelineConfig& config, const TrainOptions& options);

}  // namespace vpseg
