#pragma once

#include <optional>
#include <string>

#include "tfill/checkpoint.hpp"
#include "tfill/config.hpp"
#include "tfill/decoder.hpp"
#include "tfill/embed.hpp"
#include "tfill/encoder.hpp"
#include "tfill/refine.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

/// Overlapping large-RF token embedding (stacked 3x3 stride-2 convs on
/// image+mask); the conventional baseline the restrictive CNN replaces.
struct ConvEmbedBlockParams {
  Tensor conv_w, conv_b, ln_g, ln_b;
};

struct ConvEmbedParams {
  EmbedConfig config;  // reuses blocks/base_width/out_dim
  std::vector<ConvEmbedBlockParams> blocks;
};

ConvEmbedParams init_conv_embed(const EmbedConfig& config, Rng& rng, ParamStore& store,
                                const std::string& prefix);
TokenGrid conv_embed_forward(const MaskedImage& input, const ConvEmbedParams& params);

/// TFill-Coarse: token embedding, optional transformer encoder, one-shot
/// decoder. Which pieces exist is controlled by the run config (the ablation
/// ladder switches them).
struct CoarseModel {
  RunConfig config;
  ParamStore params;
  EmbedParams embed;           // when embed_kind == restrictive
  ConvEmbedParams conv_embed;  // when embed_kind == conv
  EncoderParams encoder;       // when use_transformer
  DecoderParams decoder;

  TokenGrid embed_forward(const MaskedImage& input) const;
  /// Raw decoder output in (0,1), [B,3,H,W].
  Tensor forward(const MaskedImage& input, EncoderTrace* trace = nullptr) const;
};

CoarseModel build_coarse_model(const RunConfig& config, std::uint64_t init_seed);

struct RefineModel {
  RunConfig config;
  ParamStore params;
  RefineParams refine;

  Tensor forward(const Tensor& merged, const Tensor& mask, AALRecord* record = nullptr) const {
    return refine_forward(merged, mask, refine, record);
  }
};

RefineModel build_refine_model(const RunConfig& config, std::uint64_t init_seed);

/// Parameter import/export between a store and checkpoint tensor tables.
std::vector<std::pair<std::string, Tensor>> export_params(const ParamStore& store,
                                                          const std::string& prefix);
void import_params(ParamStore& store, const Checkpoint& ckpt, const std::string& prefix);

/// Rebuilds a model from the config snapshot stored in a checkpoint and
/// loads its parameters. Stage is verified ("coarse" / "refine").
CoarseModel coarse_from_checkpoint(const Checkpoint& ckpt);
RefineModel refine_from_checkpoint(const Checkpoint& ckpt);

}  // namespace tfill
