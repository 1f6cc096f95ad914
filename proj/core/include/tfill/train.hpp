#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tfill/config.hpp"
#include "tfill/model.hpp"

namespace tfill {

struct Dataset {
  std::vector<Tensor> train, val;  // [3,S,S] each
};

/// Synthetic textures or a directory of PNGs, auto-split 90/10 by filename
/// hash. When the split leaves no validation images (tiny datasets), the
/// training set doubles as the validation set.
Dataset load_dataset(const RunConfig& config, int size);

struct ValMetrics {
  double l1 = 0.0, psnr = 0.0, ssim = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  std::uint64_t checkpoint_hash = 0;
  ValMetrics final_val;
  ValMetrics final_train;
  double last_pixel_loss = 0.0;
};

/// One full training run for the configured stage. Alternating
/// generator/discriminator updates, periodic validation (JSONL metrics log),
/// periodic + final checkpoints. Bitwise reproducible for a fixed config and
/// seed.
TrainResult train_run(const RunConfig& config);

struct CompletionResult {
  Tensor coarse;                  // recomposed at full resolution
  std::optional<Tensor> refined;  // composed refine output, when requested
};

/// Fixed-size coarse inference plus optional refinement at the native
/// resolution. image: [3,H,W] in [0,1], mask: [1,H,W] binary; H == W and
/// divisible by the coarse size.
CompletionResult complete_image(const CoarseModel& coarse, const RefineModel* refine,
                                const Tensor& image, const Tensor& mask);

struct AblationEntry {
  char config = 'A';
  std::uint64_t seed = 0;
  ValMetrics metrics;
};

struct AblationReport {
  std::vector<AblationEntry> entries;
  std::vector<std::pair<char, ValMetrics>> medians;  // per config, ladder order
  std::string table() const;
};

/// Trains the requested ladder configs over `seeds` consecutive seeds and
/// reports per-config median validation metrics.
///   A conv embed, no attention    B + decoder self-attention
///   C + restrictive embed         D + transformer encoder
///   E + weighted attention        F + refine stage
AblationReport run_ablation(const RunConfig& base, const std::string& ladder, int seeds);

/// The config delta for one ladder rung (cumulative from A).
RunConfig ladder_config(const RunConfig& base, char which);

}  // namespace tfill
