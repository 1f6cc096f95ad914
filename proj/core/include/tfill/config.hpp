#pragma once

#include <cstdint>
#include <string>

#include "tfill/masks.hpp"

namespace tfill {

/// Full description of one training run. Serialized as key=value text; the
/// checkpoint carries a complete snapshot so models can be rebuilt from the
/// file alone.
struct RunConfig {
  std::string stage = "coarse";  // coarse | refine

  // Geometry / architecture.
  int image_size = 64;        // coarse input resolution (square)
  int refine_size = 128;      // refine-stage resolution
  int embed_blocks = 4;       // B; tokens have a (2^B)^2 receptive field
  int embed_base_width = 16;
  std::string embed_kind = "restrictive";  // restrictive | conv (large-RF baseline)
  int encoder_layers = 4;
  int encoder_heads = 4;
  int encoder_dim = 128;
  int mlp_ratio = 4;
  bool use_transformer = true;
  bool weighted_attention = true;
  bool renormalize_rows = false;
  bool weight_queries = false;
  bool pconv_canonical = false;
  bool decoder_self_attention = true;
  int decoder_min_width = 16;
  int refine_base_width = 24;
  int disc_base_width = 24;

  // Losses / optimizer.
  double w_pixel = 1.0, w_perceptual = 1.0, w_gan = 1.0;
  bool loss_on_composed = false;
  double lr = 2e-4;
  double beta1 = 0.5, beta2 = 0.999;

  // Schedule.
  int batch_size = 4;
  int steps = 2000;
  int val_interval = 250;
  int ckpt_interval = 1000;
  std::uint64_t seed = 0;

  // Masks.
  std::string mask_kind = "center";  // center | freeform
  double mask_ratio_min = 0.2, mask_ratio_max = 0.3;
  int mask_strokes_min = 1, mask_strokes_max = 4;
  int mask_width_min = 3, mask_width_max = 10;
  int mask_length_min = 4, mask_length_max = 20;

  // Data and outputs.
  std::string data = "synthetic";  // "synthetic" or a directory of PNGs
  int synth_count = 8;
  std::string out_dir = "runs/run";
  std::string coarse_checkpoint;  // required when stage=refine

  MaskSpec mask_spec(int size) const;
  int train_size() const { return stage == "refine" ? refine_size : image_size; }
};

/// Parses key=value lines ('#' comments). Unknown keys and a missing seed
/// are errors.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Complete snapshot; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& config);

/// TFILL_SEED environment variable overrides the config seed.
void apply_env_seed(RunConfig& config);

void validate_config(const RunConfig& config);

}  // namespace tfill
