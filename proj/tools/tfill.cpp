// Command-line front end: training, completion, information-flow probing,
// the ablation ladder, metrics, and mask generation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tfill/checkpoint.hpp"
#include "tfill/config.hpp"
#include "tfill/image.hpp"
#include "tfill/metrics.hpp"
#include "tfill/model.hpp"
#include "tfill/ops.hpp"
#include "tfill/probe.hpp"
#include "tfill/train.hpp"

namespace {

using namespace tfill;

int cmd_train(const std::string& config_path) {
  RunConfig config = load_config_file(config_path);
  apply_env_seed(config);
  validate_config(config);
  TrainResult result = train_run(config);
  std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
  std::printf("metrics:    %s\n", result.metrics_path.c_str());
  std::printf("final validation: l1=%.5f psnr=%.3f ssim=%.5f\n", result.final_val.l1,
              result.final_val.psnr, result.final_val.ssim);
  return 0;
}

int cmd_complete(const std::string& coarse_path, const std::string& refine_path,
                 const std::string& image_path, const std::string& mask_path,
                 const std::string& out_dir) {
  CoarseModel coarse = coarse_from_checkpoint(load_checkpoint(coarse_path));
  RefineModel refine;
  bool has_refine = !refine_path.empty();
  if (has_refine) refine = refine_from_checkpoint(load_checkpoint(refine_path));

  Tensor image = read_png(image_path);
  Tensor mask = read_pgm_mask(mask_path);
  CompletionResult result = complete_image(coarse, has_refine ? &refine : nullptr, image, mask);

  std::filesystem::create_directories(out_dir);
  Tensor coarse_img = reshape(result.coarse, {3, result.coarse.dim(2), result.coarse.dim(3)});
  write_png(out_dir + "/coarse.png", coarse_img);
  std::printf("wrote %s/coarse.png\n", out_dir.c_str());
  if (result.refined) {
    Tensor refined_img = reshape(*result.refined, {3, result.refined->dim(2), result.refined->dim(3)});
    write_png(out_dir + "/refined.png", refined_img);
    std::printf("wrote %s/refined.png\n", out_dir.c_str());
  }
  return 0;
}

int cmd_probe(const std::string& model_path, const std::string& image_path,
              const std::string& mask_path, const std::string& pos, int top_k,
              const std::string& out_dir, const std::string& layer) {
  CoarseModel model = coarse_from_checkpoint(load_checkpoint(model_path));
  Tensor image = read_png(image_path);
  Tensor mask = read_pgm_mask(mask_path);
  int S = model.config.image_size;
  if (image.dim(1) != S || image.dim(2) != S) {
    throw ConfigError("probe: input must match the model resolution " + std::to_string(S));
  }
  auto comma = pos.find(',');
  if (comma == std::string::npos) throw ConfigError("probe: --pos expects R,C");
  int row = std::stoi(pos.substr(0, comma));
  int col = std::stoi(pos.substr(comma + 1));

  MaskedImage masked = make_masked(reshape(image, {1, 3, S, S}), reshape(mask, {1, 1, S, S}));
  ProbeForward fwd;
  if (layer == "tokens") {
    fwd = [&](const Tensor& img) {
      MaskedImage probe_input{img, masked.mask};
      TokenGrid grid = model.embed_forward(probe_input);
      return tokens_to_grid(grid.tokens, grid.grid_h, grid.grid_w);
    };
  } else if (layer == "output") {
    fwd = [&](const Tensor& img) {
      MaskedImage probe_input{img, masked.mask};
      return model.forward(probe_input);
    };
  } else {
    throw ConfigError("probe: --layer must be output or tokens");
  }
  FlowMap map = jacobian_flow(fwd, masked, row, col);
  map.model_id = model_path + " (" + layer + ")";
  write_flow_outputs(out_dir, map, top_k);
  std::printf("rf_support: %lld\n", static_cast<long long>(rf_support(map)));
  std::printf("wrote %s/{heatmap.png,values.txt,report.txt}\n", out_dir.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& ladder, int seeds) {
  RunConfig base = load_config_file(config_path);
  apply_env_seed(base);
  AblationReport report = run_ablation(base, ladder, seeds);
  std::fputs(report.table().c_str(), stdout);
  std::filesystem::create_directories(base.out_dir);
  std::string path = base.out_dir + "/ablation_report.txt";
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f) {
    std::fputs(report.table().c_str(), f);
    std::fclose(f);
    std::printf("report: %s\n", path.c_str());
  }
  return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path) {
  Tensor a = read_png(a_path);
  Tensor b = read_png(b_path);
  std::printf("{\"l1\":%.17g,\"psnr\":%.17g,\"ssim\":%.17g}\n", metric_l1(a, b),
              metric_psnr(a, b), metric_ssim(a, b));
  return 0;
}

int cmd_genmask(const std::string& spec_path, const std::string& out_path) {
  // Mask specs reuse the key=value syntax with their own keys.
  std::ifstream in(spec_path);
  if (!in) throw IoError("cannot open mask spec " + spec_path);
  MaskSpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r\n");
      if (b == std::string::npos) return std::string();
      auto e = s.find_last_not_of(" \t\r\n");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("mask spec line " + std::to_string(line_no) + ": expected key=value");
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    if (key == "kind") {
      if (value == "center") spec.kind = MaskSpec::Kind::Center;
      else if (value == "freeform") spec.kind = MaskSpec::Kind::Freeform;
      else throw ConfigError("mask spec: kind must be center or freeform");
    } else if (key == "height") spec.height = std::stoi(value);
    else if (key == "width") spec.width = std::stoi(value);
    else if (key == "ratio_min") spec.ratio_min = std::stod(value);
    else if (key == "ratio_max") spec.ratio_max = std::stod(value);
    else if (key == "strokes_min") spec.strokes_min = std::stoi(value);
    else if (key == "strokes_max") spec.strokes_max = std::stoi(value);
    else if (key == "width_min") spec.width_min = std::stoi(value);
    else if (key == "width_max") spec.width_max = std::stoi(value);
    else if (key == "length_min") spec.length_min = std::stoi(value);
    else if (key == "length_max") spec.length_max = std::stoi(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else throw ConfigError("mask spec: unknown key '" + key + "'");
  }
  GeneratedMask gen = generate_mask(spec);
  write_pgm_mask(out_path, gen.mask);
  std::printf("wrote %s (masked ratio %.4f)\n", out_path.c_str(), gen.ratio);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TFill-style image completion: two-stage transformer inpainting at desk scale"};
  app.require_subcommand(1);

  std::string config_path, coarse_path, refine_path, image_path, mask_path, out_dir, pos, layer,
      ladder, a_path, b_path, spec_path, out_path, model_path;
  int top_k = 16, seeds = 3;

  auto* train = app.add_subcommand("train", "train one stage from a config file");
  train->add_option("--config", config_path, "key=value run config")->required();

  auto* complete = app.add_subcommand("complete", "complete a masked image");
  complete->add_option("--coarse", coarse_path, "coarse checkpoint")->required();
  complete->add_option("--refine", refine_path, "refine checkpoint (optional)");
  complete->add_option("--image", image_path, "input PNG")->required();
  complete->add_option("--mask", mask_path, "mask PGM (0 = masked)")->required();
  complete->add_option("--out", out_dir, "output directory")->required();

  auto* probe = app.add_subcommand("probe", "Jacobian information-flow map");
  probe->add_option("--model", model_path, "coarse checkpoint")->required();
  probe->add_option("--input", image_path, "input PNG")->required();
  probe->add_option("--mask", mask_path, "mask PGM")->required();
  probe->add_option("--pos", pos, "output position R,C")->required();
  probe->add_option("--top-k", top_k, "entries listed in the report");
  probe->add_option("--out", out_dir, "output directory")->required();
  probe->add_option("--layer", layer, "output | tokens")->default_val("output");

  auto* ablate = app.add_subcommand("ablate", "run the ablation ladder");
  ablate->add_option("--config", config_path, "base run config")->required();
  ablate->add_option("--ladder", ladder, "subset of A,B,C,D,E,F")->required();
  ablate->add_option("--seeds", seeds, "number of consecutive seeds");

  auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM/L1 between two images");
  metrics->add_option("--a", a_path, "first PNG")->required();
  metrics->add_option("--b", b_path, "second PNG")->required();

  auto* genmask = app.add_subcommand("genmask", "generate a mask from a spec file");
  genmask->add_option("--spec", spec_path, "mask spec (key=value)")->required();
  genmask->add_option("--out", out_path, "output PGM path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (complete->parsed()) return cmd_complete(coarse_path, refine_path, image_path, mask_path, out_dir);
    if (probe->parsed()) return cmd_probe(model_path, image_path, mask_path, pos, top_k, out_dir, layer);
    if (ablate->parsed()) return cmd_ablate(config_path, ladder, seeds);
    if (metrics->parsed()) return cmd_metrics(a_path, b_path);
    if (genmask->parsed()) return cmd_genmask(spec_path, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
