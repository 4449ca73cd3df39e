#include "vpseg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vpseg/metrics.hpp"
#include "vpseg/pipeline.hpp"
#include "vpseg/proximity.hpp"
#include "vpseg/synthetic.hpp"
#include "vpseg/vp_detect.hpp"

namespace vpseg {

namespace {

using nlohmann::ordered_json;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << text;
}

std::string vp_to_json(const VpEstimate& vp) {
  ordered_json j;
  j["x"] = vp.x;
  j["y"] = vp.y;
  j["votes"] = vp.votes;
  j["valid"] = vp.valid;
  return j.dump(2) + "\n";
}

std::pair<float, float> parse_xy(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) {
    throw CLI::ValidationError("--vp", "expected X,Y");
  }
  return {std::stof(text.substr(0, comma)), std::stof(text.substr(comma + 1))};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void add_vp_detect(CLI::App& app) {
  auto* cmd = app.get_subcommand("vp")->add_subcommand("detect", "Estimate the vanishing point");
  auto image = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto json_out = std::make_shared<std::string>();
  cmd->add_option("image", *image, "input PGM frame")->required();
  cmd->add_option("--seed", *seed, "line subsampling seed");
  cmd->add_option("--json", *json_out, "write the estimate to this file");
  cmd->callback([image, seed, json_out]() {
    VpConfig config;
    config.seed = *seed;
    const VpEstimate vp = detect_vp(read_pgm(*image), config);
    const std::string text = vp_to_json(vp);
    if (json_out->empty()) {
      std::cout << text;
    } else {
      write_text(*json_out, text);
    }
  });
}

void add_vp_proximity(CLI::App& app) {
  auto* cmd = app.get_subcommand("vp")->add_subcommand("proximity", "Build a VP proximity map");
  auto image = std::make_shared<std::string>();
  auto vp_text = std::make_shared<std::string>();
  auto variant = std::make_shared<std::string>("linear");
  auto out = std::make_shared<std::string>();
  auto pgm = std::make_shared<std::string>();
  cmd->add_option("image", *image, "input PGM frame (size source)")->required();
  cmd->add_option("--vp", *vp_text, "VP pixel position X,Y")->required();
  cmd->add_option("--variant", *variant, "linear | power | euclidean");
  cmd->add_option("-o,--output", *out, "output CTNSR map")->required();
  cmd->add_option("--pgm", *pgm, "optional 8-bit rendering");
  cmd->callback([image, vp_text, variant, out, pgm]() {
    const GrayImage frame = read_pgm(*image);
    const auto [x, y] = parse_xy(*vp_text);
    const ProximityMap map = proximity_map(x, y, frame.height(), frame.width(),
                                           proximity_variant_from_string(*variant));
    save_ctnsr(map.values, *out);
    if (!pgm->empty()) write_pgm(render_proximity(map), *pgm);
  });
}

void add_motion_directions(CLI::App& app) {
  auto* cmd = app.get_subcommand("motion")
                  ->add_subcommand("directions", "Per-patch assigned directions as CSV");
  auto features = std::make_shared<std::string>();
  auto vp_text = std::make_shared<std::string>();
  auto patch = std::make_shared<int>(4);
  auto out = std::make_shared<std::string>();
  cmd->add_option("--features", *features, "feature tensor (CTNSR, c x h x w)")->required();
  cmd->add_option("--vp", *vp_text, "VP in feature-cell coordinates X,Y")->required();
  cmd->add_option("--patch-size", *patch, "patch size s")->required();
  cmd->add_option("-o,--output", *out, "output CSV")->required();
  cmd->callback([features, vp_text, patch, out]() {
    const Tensor f = load_ctnsr(*features);
    if (f.rank() != 3) throw std::runtime_error("features must be rank-3 (c x h x w)");
    const PatchGrid grid = PatchGrid::create(f.extent(1), f.extent(2), *patch);
    const auto [x, y] = parse_xy(*vp_text);
    auto clampf = [](float v, float hi) { return v < 0.0f ? 0.0f : (v > hi ? hi : v); };
    const PatchVp vp{clampf(x / static_cast<float>(*patch), static_cast<float>(grid.gw - 1)),
                     clampf(y / static_cast<float>(*patch), static_cast<float>(grid.gh - 1))};
    const auto dirs = direction_grid(grid, vp);
    std::ostringstream csv;
    csv << "row,col,u,v\n";
    for (int py = 0; py < grid.gh; ++py) {
      for (int px = 0; px < grid.gw; ++px) {
        const auto& d = dirs[static_cast<std::size_t>(py * grid.gw + px)];
        csv << py << "," << px << "," << d[0] << "," << d[1] << "\n";
      }
    }
    write_text(*out, csv.str());
  });
}

void add_pipeline_run(CLI::App& app) {
  auto* cmd = app.get_subcommand("pipeline")->add_subcommand("run", "Run the full pipeline");
  auto frames_text = std::make_shared<std::string>();
  auto config_path = std::make_shared<std::string>();
  auto params_dir = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  cmd->add_option("--frames", *frames_text, "comma-separated PGM frames, current last")
      ->required();
  cmd->add_option("--config", *config_path, "pipeline config JSON");
  cmd->add_option("--params", *params_dir, "trained parameter directory (optional)");
  cmd->add_option("-o,--output", *out_dir, "output directory")->required();
  cmd->callback([frames_text, config_path, params_dir, out_dir]() {
    // Parameters are tied to the backbone seed they were trained with, so a
    // params directory carries its config; an explicit --config overrides it.
    PipelineConfig config;
    if (!config_path->empty()) {
      config = PipelineConfig::from_json_file(*config_path);
    } else if (!params_dir->empty() &&
               std::filesystem::exists(*params_dir + "/config.json")) {
      config = PipelineConfig::from_json_file(*params_dir + "/config.json");
    }
    std::vector<GrayImage> frames;
    for (const std::string& path : split_list(*frames_text)) frames.push_back(read_pgm(path));
    const ParamStore params =
        params_dir->empty() ? init_params(config) : load_params(*params_dir);
    const PipelineResult result = run_pipeline(frames, config, params);

    std::filesystem::create_directories(*out_dir);
    save_ctnsr(result.context_pred, *out_dir + "/P_c.ctnsr");
    save_ctnsr(result.detail_pred, *out_dir + "/P_d.ctnsr");
    save_ctnsr(result.fused_pred, *out_dir + "/P_f.ctnsr");
    save_ctnsr(result.detail_attention, *out_dir + "/O.ctnsr");
    save_ctnsr(result.dynamic_ctx, *out_dir + "/F_dyn.ctnsr");
    save_ctnsr(result.augmented_ctx, *out_dir + "/F_aug.ctnsr");

    // Per-class renderings of the detail attention map.
    const Tensor& o = result.detail_attention;
    for (int z = 0; z < o.extent(0); ++z) {
      GrayImage render(o.extent(1), o.extent(2));
      for (int yy = 0; yy < o.extent(1); ++yy) {
        for (int xx = 0; xx < o.extent(2); ++xx) {
          render.at(yy, xx) = static_cast<std::uint8_t>(
              std::min(255.0f, std::max(0.0f, o.at(z, yy, xx) * 255.0f)));
        }
      }
      write_pgm(render, *out_dir + "/O_class_" + std::to_string(z) + ".pgm");
    }

    ordered_json vps = ordered_json::array();
    for (const VpEstimate& vp : result.vps) {
      vps.push_back({{"x", vp.x}, {"y", vp.y}, {"votes", vp.votes}, {"valid", vp.valid}});
    }
    write_text(*out_dir + "/vp.json", vps.dump(2) + "\n");
    write_text(*out_dir + "/region.json", region_to_json(result.region));
  });
}

void add_pipeline_train(CLI::App& app) {
  auto* cmd =
      app.get_subcommand("pipeline")->add_subcommand("train", "Toy training on synthetic scenes");
  auto synthetic = std::make_shared<bool>(false);
  auto steps = std::make_shared<int>(500);
  auto seed = std::make_shared<std::uint64_t>(7);
  auto lr = std::make_shared<float>(16.0f);
  auto config_path = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  cmd->add_flag("--synthetic", *synthetic, "train on generated corridor scenes");
  cmd->add_option("--steps", *steps, "gradient steps");
  cmd->add_option("--seed", *seed, "scene + init seed");
  cmd->add_option("--lr", *lr, "learning rate");
  cmd->add_option("--config", *config_path, "pipeline config JSON");
  cmd->add_option("-o,--output", *out_dir, "parameter output directory")->required();
  cmd->callback([synthetic, steps, seed, lr, config_path, out_dir]() {
    if (!*synthetic) {
      throw CLI::ValidationError("--synthetic", "only synthetic training is supported");
    }
    PipelineConfig config = config_path->empty() ? PipelineConfig{}
                                                 : PipelineConfig::from_json_file(*config_path);
    config.seed = *seed;
    TrainOptions options;
    options.steps = *steps;
    options.seed = *seed;
    options.learning_rate = *lr;
    const TrainResult result = train_toy(config, options);
    if (result.diverged) {
      std::cerr << "training diverged: loss became non-finite\n";
    }
    save_params(result.params, *out_dir);
    write_text(*out_dir + "/config.json", config.to_json());
    ordered_json curve;
    curve["loss"] = result.loss_curve;
    curve["smoothed"] = result.smoothed_loss_curve;
    curve["diverged"] = result.diverged;
    curve["heldout_miou"] = result.heldout_miou;
    write_text(*out_dir + "/training.json", curve.dump(2) + "\n");
    std::cout << "final loss " << (result.loss_curve.empty() ? 0.0f : result.loss_curve.back())
              << ", held-out mIoU " << result.heldout_miou << "\n";
  });
}

void add_metrics_eval(CLI::App& app) {
  auto* cmd = app.get_subcommand("metrics")->add_subcommand("eval", "Score a prediction");
  auto pred_path = std::make_shared<std::string>();
  auto gt_path = std::make_shared<std::string>();
  auto mask_path = std::make_shared<std::string>();
  auto inst_path = std::make_shared<std::string>();
  auto json_path = std::make_shared<std::string>();
  auto classes = std::make_shared<int>(0);
  cmd->add_option("--pred", *pred_path, "prediction: CTNSR logits or PGM labels")->required();
  cmd->add_option("--gt", *gt_path, "ground-truth PGM labels")->required();
  cmd->add_option("--invalid-mask", *mask_path, "invalid-region mask PGM");
  cmd->add_option("--instances", *inst_path, "instance id PGM");
  cmd->add_option("--json", *json_path, "report output path")->required();
  cmd->add_option("--classes", *classes, "class count (default: derived from maps)");
  cmd->callback([pred_path, gt_path, mask_path, inst_path, json_path, classes]() {
    LabelMap pred;
    if (pred_path->size() > 6 &&
        pred_path->compare(pred_path->size() - 6, 6, ".ctnsr") == 0) {
      pred = argmax_labels(load_ctnsr(*pred_path));
    } else {
      pred = read_pgm_labels(*pred_path);
    }
    const LabelMap gt = read_pgm_labels(*gt_path);
    int k = *classes;
    if (k <= 0) {
      for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.data()[i] != kIgnoreLabel) k = std::max(k, gt.data()[i] + 1);
      }
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred.data()[i] != kIgnoreLabel) k = std::max(k, pred.data()[i] + 1);
      }
    }
    MetricsReport report;
    report.num_classes = k;
    ConfusionMatrix acc(k);
    confusion_accumulate(pred, gt, acc);
    report.iou = miou(acc);
    report.pixels_evaluated = acc.total();
    if (!inst_path->empty()) {
      const LabelMap inst16 = read_pgm_labels(*inst_path);
      InstanceMap instances(inst16.height(), inst16.width());
      for (std::size_t i = 0; i < inst16.size(); ++i) instances.data()[i] = inst16.data()[i];
      report.iiou = iiou(pred, gt, instances, k);
    }
    if (!mask_path->empty()) {
      const GrayImage mask_img = read_pgm(*mask_path);
      InvalidMask mask(mask_img.height(), mask_img.width());
      for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = mask_img.data()[i] ? 1 : 0;
      report.ia_iou = ia_iou({pred}, {gt}, {mask}, k);
    }
    write_text(*json_path, report.to_json());
  });
}

void add_synth_generate(CLI::App& app) {
  auto* cmd =
      app.get_subcommand("synth")->add_subcommand("generate", "Generate corridor scenes");
  auto scenes = std::make_shared<int>(1);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto out_dir = std::make_shared<std::string>();
  auto height = std::make_shared<int>(512);
  auto width = std::make_shared<int>(1024);
  auto frames = std::make_shared<int>(2);
  cmd->add_option("--scenes", *scenes, "scene count")->required();
  cmd->add_option("--seed", *seed, "base seed")->required();
  cmd->add_option("-o,--output", *out_dir, "output directory")->required();
  cmd->add_option("--height", *height, "frame height");
  cmd->add_option("--width", *width, "frame width");
  cmd->add_option("--frames", *frames, "frames per scene");
  cmd->callback([scenes, seed, out_dir, height, width, frames]() {
    for (int i = 0; i < *scenes; ++i) {
      SceneSpec spec =
          SceneSpec::randomized(*seed + static_cast<std::uint64_t>(i), *height, *width);
      spec.frame_count = *frames;
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%03d", i);
      write_scene(generate_scene_sequence(spec), *out_dir + "/" + name);
    }
  });
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"vanishing-point-guided video semantic segmentation toolkit"};
  app.require_subcommand(1);
  for (const char* group : {"vp", "motion", "pipeline", "metrics", "synth"}) {
    app.add_subcommand(group)->require_subcommand(1);
  }
  add_vp_detect(app);
  add_vp_proximity(app);
  add_motion_directions(app);
  add_pipeline_run(app);
  add_pipeline_train(app);
  add_metrics_eval(app);
  add_synth_generate(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace vpseg
