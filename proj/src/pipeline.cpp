#include "vpseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vpseg/metrics.hpp"
#include "vpseg/rng.hpp"

namespace vpseg {

namespace {

using nlohmann::ordered_json;

template <typename T>
void read_key(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  static const std::vector<std::string> known = {
      "downsample_ratio", "patch_size", "frame_interval", "sampling_coeff",
      "region_a", "region_b", "motion_layers", "lambda_d", "num_classes",
      "channels", "stub_patch", "proximity_variant", "seed", "vp_seed",
      "use_motionvp", "use_densevp"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const std::string& k : known) ok = ok || k == key;
    if (!ok) throw std::invalid_argument("config: unknown key \"" + key + "\"");
  }
  PipelineConfig c;
  read_key(j, "downsample_ratio", c.downsample_ratio);
  read_key(j, "patch_size", c.patch_size);
  read_key(j, "frame_interval", c.frame_interval);
  read_key(j, "sampling_coeff", c.sampling_coeff);
  read_key(j, "region_a", c.region_a);
  read_key(j, "region_b", c.region_b);
  read_key(j, "motion_layers", c.motion_layers);
  read_key(j, "lambda_d", c.lambda_d);
  read_key(j, "num_classes", c.num_classes);
  read_key(j, "channels", c.channels);
  read_key(j, "stub_patch", c.stub_patch);
  read_key(j, "proximity_variant", c.proximity_variant);
  read_key(j, "seed", c.seed);
  read_key(j, "vp_seed", c.vp_seed);
  read_key(j, "use_motionvp", c.use_motionvp);
  read_key(j, "use_densevp", c.use_densevp);
  proximity_variant_from_string(c.proximity_variant);  // validate
  return c;
}

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json_text(buf.str());
}

std::string PipelineConfig::to_json() const {
  ordered_json j;
  j["downsample_ratio"] = downsample_ratio;
  j["patch_size"] = patch_size;
  j["frame_interval"] = frame_interval;
  j["sampling_coeff"] = sampling_coeff;
  j["region_a"] = region_a;
  j["region_b"] = region_b;
  j["motion_layers"] = motion_layers;
  j["lambda_d"] = lambda_d;
  j["num_classes"] = num_classes;
  j["channels"] = channels;
  j["stub_patch"] = stub_patch;
  j["proximity_variant"] = proximity_variant;
  j["seed"] = seed;
  j["vp_seed"] = vp_seed;
  j["use_motionvp"] = use_motionvp;
  j["use_densevp"] = use_densevp;
  return j.dump(2) + "\n";
}

StubBackbone StubBackbone::create(int patch_size, int channels, std::uint64_t seed) {
  if (patch_size < 1 || channels < 1) {
    throw std::invalid_argument("StubBackbone: degenerate dims");
  }
  StubBackbone b;
  b.patch_size = patch_size;
  b.channels = channels;
  b.weight = Tensor({channels, patch_size * patch_size});
  SplitMix64 rng(seed ^ 0x6261636b626f6e65ULL);
  const float bound = 1.0f / static_cast<float>(patch_size);
  for (std::size_t i = 0; i < b.weight.size(); ++i) {
    b.weight.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  return b;
}

Tensor stub_features(const GrayImage& frame, const StubBackbone& backbone) {
  const int p = backbone.patch_size;
  if (frame.height() % p != 0 || frame.width() % p != 0) {
    throw std::invalid_argument("stub_features: frame " + std::to_string(frame.height()) + "x" +
                                std::to_string(frame.width()) + " not divisible by patch " +
                                std::to_string(p));
  }
  const int h = frame.height() / p, w = frame.width() / p;
  const int c = backbone.channels;
  Tensor out({c, h, w});
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int r = 0; r < p; ++r) {
          for (int q = 0; q < p; ++q) {
            const double v = frame.at(py * p + r, px * p + q) / 255.0 - 0.5;
            acc += static_cast<double>(backbone.weight.at(ch, r * p + q)) * v;
          }
        }
        out.at(ch, py, px) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Var stub_decode(Tape& tape, Var features, Var head_weight, Var head_bias, int out_h,
                int out_w) {
  const Tensor& fv = tape.value(features.id);
  if (fv.rank() != 3) {
    throw std::invalid_argument("stub_decode: expected c x h x w, got " + fv.shape_string());
  }
  const int c = fv.extent(0), h = fv.extent(1), w = fv.extent(2);
  const int k = tape.value(head_weight.id).extent(0);
  const Var flat = ad::reshape(features, {c, h * w});
  const Var logits = ad::add_col_broadcast(ad::matmul(head_weight, flat), head_bias);
  return ad::bilinear_resize(ad::reshape(logits, {k, h, w}), out_h, out_w);
}

Tensor stub_decode(const Tensor& features, const Tensor& head_weight, const Tensor& head_bias,
                   int out_h, int out_w) {
  Tape tape;
  const Var out = stub_decode(tape, ad::constant(tape, features),
                              ad::constant(tape, head_weight), ad::constant(tape, head_bias),
                              out_h, out_w);
  return tape.value(out.id);
}

ParamStore init_params(const PipelineConfig& config) {
  const int c = config.channels;
  SplitMix64 rng(config.seed ^ 0x706172616d73ULL);
  const float bound = 1.0f / std::sqrt(static_cast<float>(c));
  auto tensor = [&rng](std::vector<int> shape, float b) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t.data()[i] = static_cast<float>(rng.uniform(-b, b));
    }
    return t;
  };
  ParamStore params;
  for (const char* group : {"motion", "dense", "cma_ctx"}) {
    for (const char* part : {"wq", "wk", "wv"}) {
      params[std::string(group) + "." + part] = tensor({c, c}, bound);
    }
  }
  for (int layer = 0; layer < config.motion_layers; ++layer) {
    for (const char* part : {"wq", "wk", "wv"}) {
      params["cma_layer" + std::to_string(layer) + "." + part] = tensor({c, c}, bound);
    }
  }
  params["queries"] = tensor({c, config.num_classes}, bound);
  params["head.weight"] = tensor({config.num_classes, c}, bound);
  params["head.bias"] = Tensor({config.num_classes});
  return params;
}

void save_params(const ParamStore& params, const std::string& dir) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  for (const auto& [name, tensor] : params) {
    const std::string file = name + ".ctnsr";
    save_ctnsr(tensor, dir + "/" + file);
    manifest[name] = file;
  }
  std::ofstream os(dir + "/manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

ParamStore load_params(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw std::runtime_error("load_params: cannot open manifest in " + dir);
  const ordered_json manifest = ordered_json::parse(is);
  ParamStore params;
  for (const auto& [name, file] : manifest.items()) {
    params[name] = load_ctnsr(dir + "/" + file.get<std::string>());
  }
  return params;
}

namespace {

// Everything the differentiable graph consumes but never differentiates.
struct PipelineInputs {
  std::vector<VpEstimate> vps;
  std::vector<Tensor> context_features;  // per frame, c x h x w
  Tensor detail_features;                // current frame, c x (H/P) x (W/P)
  Tensor proximity_feat;                 // E at h x w
  std::vector<PatchVp> patch_vps;
  int frame_h = 0, frame_w = 0;
  int feat_h = 0, feat_w = 0;
};

int checked_dim(double v, const char* what) {
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 || r < 1.0) {
    throw std::invalid_argument(std::string("run_pipeline: ") + what +
                                " does not yield a whole positive extent");
  }
  return static_cast<int>(r);
}

PipelineInputs compute_inputs(const std::vector<GrayImage>& frames,
                              const PipelineConfig& config, const StubBackbone& backbone) {
  if (frames.size() < 2) {
    throw std::invalid_argument("run_pipeline: need >= 2 frames (neighbors + current)");
  }
  const int frame_h = frames[0].height(), frame_w = frames[0].width();
  for (const GrayImage& f : frames) {
    if (f.height() != frame_h || f.width() != frame_w) {
      throw std::invalid_argument("run_pipeline: frame sizes differ");
    }
  }
  const int ctx_h = checked_dim(frame_h * config.downsample_ratio, "downsampled height");
  const int ctx_w = checked_dim(frame_w * config.downsample_ratio, "downsampled width");
  const int p = config.stub_patch;
  if (ctx_h % p || ctx_w % p || frame_h % p || frame_w % p) {
    throw std::invalid_argument("run_pipeline: frame dims must be divisible by the stub patch");
  }
  const int feat_h = ctx_h / p, feat_w = ctx_w / p;
  const PatchGrid grid = PatchGrid::create(feat_h, feat_w, config.patch_size);

  PipelineInputs in;
  in.frame_h = frame_h;
  in.frame_w = frame_w;
  in.feat_h = feat_h;
  in.feat_w = feat_w;

  VpConfig vp_config;
  vp_config.seed = config.vp_seed;
  for (const GrayImage& frame : frames) {
    in.vps.push_back(detect_vp(frame, vp_config));
    in.context_features.push_back(
        stub_features(resize_gray(frame, ctx_h, ctx_w), backbone));
  }
  in.detail_features = stub_features(frames.back(), backbone);

  for (const VpEstimate& vp : in.vps) {
    in.patch_vps.push_back(vp.valid ? pixel_vp_to_patch(vp, frame_h, frame_w, feat_h, feat_w,
                                                        config.patch_size)
                                    : grid_center_vp(grid));
  }

  // Proximity map of the current frame at full resolution, resized to the
  // context feature grid for use as the attention bias.
  const VpEstimate& current_vp = in.vps.back();
  const float px = current_vp.valid ? current_vp.x : static_cast<float>(frame_w - 1) / 2.0f;
  const float py = current_vp.valid ? current_vp.y : static_cast<float>(frame_h - 1) / 2.0f;
  const ProximityMap prox = proximity_map(
      px, py, frame_h, frame_w, proximity_variant_from_string(config.proximity_variant));
  in.proximity_feat = bilinear_resize(prox.values, feat_h, feat_w);
  return in;
}

struct ParamVars {
  AttentionProjectionVars motion, dense, cma_ctx;
  std::vector<AttentionProjectionVars> cma_layers;
  Var queries, head_weight, head_bias;
};

const Tensor& param(const ParamStore& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) {
    throw std::invalid_argument("missing parameter \"" + name + "\"");
  }
  return it->second;
}

ParamVars make_param_vars(Tape& tape, const ParamStore& params, int motion_layers,
                          bool requires_grad) {
  auto proj = [&](const std::string& group) {
    return AttentionProjectionVars{
        ad::leaf(tape, param(params, group + ".wq"), requires_grad),
        ad::leaf(tape, param(params, group + ".wk"), requires_grad),
        ad::leaf(tape, param(params, group + ".wv"), requires_grad)};
  };
  ParamVars v;
  v.motion = proj("motion");
  v.dense = proj("dense");
  v.cma_ctx = proj("cma_ctx");
  for (int layer = 0; layer < motion_layers; ++layer) {
    v.cma_layers.push_back(proj("cma_layer" + std::to_string(layer)));
  }
  v.queries = ad::leaf(tape, param(params, "queries"), requires_grad);
  v.head_weight = ad::leaf(tape, param(params, "head.weight"), requires_grad);
  v.head_bias = ad::leaf(tape, param(params, "head.bias"), requires_grad);
  return v;
}

VpRegion current_vp_region(const PipelineInputs& in, const PipelineConfig& config) {
  const PatchGrid grid = PatchGrid::create(in.feat_h, in.feat_w, config.patch_size);
  return vp_region(vp_patch(in.patch_vps.back(), grid), config.region_a, config.region_b,
                   grid);
}

struct ForwardVars {
  Var dynamic_ctx, augmented_ctx, detail_attention, context_pred, detail_pred, fused_pred;
};

ForwardVars pipeline_forward(Tape& tape, const PipelineInputs& in, const ParamVars& params,
                             const PipelineConfig& config) {
  std::vector<Var> context;
  context.reserve(in.context_features.size());
  for (const Tensor& f : in.context_features) context.push_back(ad::constant(tape, f));
  const Var local_context = context.back();  // F_tl
  const Var detail = ad::constant(tape, in.detail_features);
  const Var proximity = ad::constant(tape, in.proximity_feat);

  ForwardVars out;
  out.dynamic_ctx = config.use_motionvp
                        ? dynamic_context(tape, context, in.patch_vps, config.patch_size,
                                          config.sampling_coeff, params.motion)
                        : local_context;

  if (config.use_densevp) {
    const VpRegion region = current_vp_region(in, config);
    const Var dense_features =
        dense_partition(tape, local_context, region, config.patch_size);
    out.augmented_ctx = augment_context(tape, out.dynamic_ctx, dense_features, params.dense);
  } else {
    out.augmented_ctx = out.dynamic_ctx;
  }

  const Var contextualized =
      contextualize_queries(tape, params.queries, local_context, proximity, params.cma_ctx);
  const Var merged =
      motion_attention(tape, contextualized, out.augmented_ctx, proximity, params.cma_layers);
  out.detail_attention = detail_attention_map(tape, merged, local_context);

  out.context_pred = stub_decode(tape, local_context, params.head_weight, params.head_bias,
                                 in.frame_h, in.frame_w);
  out.detail_pred = stub_decode(tape, detail, params.head_weight, params.head_bias, in.frame_h,
                                in.frame_w);
  out.fused_pred = fuse_predictions(tape, out.context_pred, out.detail_pred,
                                    out.detail_attention);
  return out;
}

}  // namespace

PipelineResult run_pipeline(const std::vector<GrayImage>& frames, const PipelineConfig& config,
                            const ParamStore& params) {
  const StubBackbone backbone =
      StubBackbone::create(config.stub_patch, config.channels, config.seed);
  const PipelineInputs in = compute_inputs(frames, config, backbone);
  Tape tape;
  const ParamVars vars = make_param_vars(tape, params, config.motion_layers, false);
  const ForwardVars fwd = pipeline_forward(tape, in, vars, config);

  PipelineResult result;
  result.vps = in.vps;
  result.region = current_vp_region(in, config);
  result.dynamic_ctx = tape.value(fwd.dynamic_ctx.id);
  result.augmented_ctx = tape.value(fwd.augmented_ctx.id);
  result.detail_attention = tape.value(fwd.detail_attention.id);
  result.context_pred = tape.value(fwd.context_pred.id);
  result.detail_pred = tape.value(fwd.detail_pred.id);
  result.fused_pred = tape.value(fwd.fused_pred.id);
  return result;
}

std::string region_to_json(const VpRegion& region) {
  ordered_json j;
  j["vp_patch"] = {{"x", region.vp_patch.x}, {"y", region.vp_patch.y}};
  j["a"] = region.a;
  j["b"] = region.b;
  j["nominal_members"] = region.nominal_members;
  j["actual_members"] = region.members.size();
  ordered_json members = ordered_json::array();
  for (const GridCoord& m : region.members) {
    members.push_back({{"x", m.x}, {"y", m.y}});
  }
  j["members"] = members;
  return j.dump(2) + "\n";
}

TrainResult train_toy(const PipelineConfig& config, const TrainOptions& options) {
  if (options.steps < 1) throw std::invalid_argument("train_toy: steps must be >= 1");
  const StubBackbone backbone =
      StubBackbone::create(config.stub_patch, config.channels, config.seed);

  // Seeded scenes: options.train_scenes for fitting plus one held out.
  std::vector<PipelineInputs> inputs;
  std::vector<LabelMap> targets;
  SceneSequence heldout;
  for (int i = 0; i <= options.train_scenes; ++i) {
    SceneSpec spec = SceneSpec::randomized(options.seed * 1000 + static_cast<std::uint64_t>(i),
                                           options.scene_height, options.scene_width,
                                           /*max_noise=*/0.05);
    spec.frame_count = 2;
    SceneSequence scene = generate_scene_sequence(spec);
    if (i == options.train_scenes) {
      heldout = std::move(scene);
    } else {
      inputs.push_back(compute_inputs(scene.frames, config, backbone));
      targets.push_back(scene.labels.back());
    }
  }

  ParamStore params = init_params(config);
  TrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(options.steps));

  for (int step = 0; step < options.steps; ++step) {
    const std::size_t pick = static_cast<std::size_t>(step) % inputs.size();
    Tape tape;
    const ParamVars vars = make_param_vars(tape, params, config.motion_layers, true);
    const ForwardVars fwd = pipeline_forward(tape, inputs[pick], vars, config);
    const Var loss = total_loss(tape, fwd.fused_pred, fwd.detail_pred, targets[pick],
                                static_cast<float>(config.lambda_d));
    const float loss_value = tape.value(loss.id).at(0);
    result.loss_curve.push_back(loss_value);
    if (!std::isfinite(loss_value)) {
      result.diverged = true;
      break;
    }
    tape.backward(loss.id);

    // Plain gradient descent over every named parameter.
    auto update = [&](Var v, const std::string& name) {
      const Tensor& g = tape.grad(v.id);
      if (g.empty()) return;
      Tensor& p = params[name];
      for (std::size_t i = 0; i < p.size(); ++i) {
        p.data()[i] -= options.learning_rate * g.data()[i];
      }
    };
    update(vars.motion.wq, "motion.wq");
    update(vars.motion.wk, "motion.wk");
    update(vars.motion.wv, "motion.wv");
    update(vars.dense.wq, "dense.wq");
    update(vars.dense.wk, "dense.wk");
    update(vars.dense.wv, "dense.wv");
    update(vars.cma_ctx.wq, "cma_ctx.wq");
    update(vars.cma_ctx.wk, "cma_ctx.wk");
    update(vars.cma_ctx.wv, "cma_ctx.wv");
    for (int layer = 0; layer < config.motion_layers; ++layer) {
      const std::string group = "cma_layer" + std::to_string(layer);
      update(vars.cma_layers[static_cast<std::size_t>(layer)].wq, group + ".wq");
      update(vars.cma_layers[static_cast<std::size_t>(layer)].wk, group + ".wk");
      update(vars.cma_layers[static_cast<std::size_t>(layer)].wv, group + ".wv");
    }
    update(vars.queries, "queries");
    update(vars.head_weight, "head.weight");
    update(vars.head_bias, "head.bias");
  }

  result.smoothed_loss_curve.reserve(result.loss_curve.size());
  float best = std::numeric_limits<float>::infinity();
  for (float v : result.loss_curve) {
    best = std::min(best, v);
    result.smoothed_loss_curve.push_back(best);
  }

  // Held-out evaluation with the trained parameters.
  const PipelineResult heldout_result = run_pipeline(heldout.frames, config, params);
  ConfusionMatrix acc(config.num_classes);
  confusion_accumulate(argmax_labels(heldout_result.fused_pred), heldout.labels.back(), acc);
  const PerClassMetric iou = miou(acc);
  result.heldout_miou = iou.mean.value_or(0.0);
  result.params = std::move(params);
  return result;
}

}  // namespace vpseg
