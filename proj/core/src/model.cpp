#include "tfill/model.hpp"

#include "tfill/ops.hpp"

namespace tfill {

ConvEmbedParams init_conv_embed(const EmbedConfig& config, Rng& rng, ParamStore& store,
                                const std::string& prefix) {
  ConvEmbedParams p;
  p.config = config;
  int in_ch = 4;  // image + mask channel
  for (int b = 0; b < config.blocks; ++b) {
    int width = config.block_width(b);
    ConvEmbedBlockParams blk;
    std::string base = prefix + "block" + std::to_string(b) + ".";
    blk.conv_w = store.add(base + "conv.w", rng.normal_tensor({width, in_ch, 3, 3}, 0.0, 0.02, true));
    blk.conv_b = store.add(base + "conv.b", Tensor::zeros({width}, true));
    blk.ln_g = store.add(base + "ln.g", Tensor::ones({width}, true));
    blk.ln_b = store.add(base + "ln.b", Tensor::zeros({width}, true));
    p.blocks.push_back(blk);
    in_ch = width;
  }
  return p;
}

TokenGrid conv_embed_forward(const MaskedImage& input, const ConvEmbedParams& params) {
  const auto& cfg = params.config;
  int patch = cfg.patch();
  int H = input.height(), W = input.width();
  if (H % patch != 0 || W % patch != 0) {
    throw ConfigError("conv_embed: spatial size must be divisible by " + std::to_string(patch));
  }
  Tensor x = concat({input.image, input.mask}, 1);
  for (const auto& blk : params.blocks) {
    x = conv2d(x, blk.conv_w, blk.conv_b, 2, 1);
    x = layer_norm(x, blk.ln_g, blk.ln_b, 1);
    x = gelu(x);
  }
  TokenGrid grid;
  grid.grid_h = H / patch;
  grid.grid_w = W / patch;
  grid.tokens = grid_to_tokens(x);
  grid.weights = Tensor::ones({input.batch(), grid.grid_h * grid.grid_w});
  return grid;
}

TokenGrid CoarseModel::embed_forward(const MaskedImage& input) const {
  if (config.embed_kind == "restrictive") return restrictive_embed(input, embed);
  return conv_embed_forward(input, conv_embed);
}

Tensor CoarseModel::forward(const MaskedImage& input, EncoderTrace* trace) const {
  TokenGrid grid = embed_forward(input);
  Tensor tokens = grid.tokens;
  if (config.use_transformer) {
    tokens = encoder_forward(grid, encoder, trace);
  }
  return decode(tokens, grid.grid_h, grid.grid_w, decoder);
}

namespace {

EmbedConfig embed_config_of(const RunConfig& config) {
  EmbedConfig e;
  e.blocks = config.embed_blocks;
  e.base_width = config.embed_base_width;
  e.out_dim = config.encoder_dim;
  e.pconv_canonical = config.pconv_canonical;
  return e;
}

}  // namespace

CoarseModel build_coarse_model(const RunConfig& config, std::uint64_t init_seed) {
  validate_config(config);
  CoarseModel m;
  m.config = config;
  Rng rng(Rng::derive(init_seed, 0x10de1));

  EmbedConfig ec = embed_config_of(config);
  if (config.embed_kind == "restrictive") {
    m.embed = init_embed(ec, rng, m.params, "embed.");
  } else {
    m.conv_embed = init_conv_embed(ec, rng, m.params, "embed.");
  }

  int grid = config.image_size / ec.patch();
  if (config.use_transformer) {
    EncoderConfig enc;
    enc.layers = config.encoder_layers;
    enc.heads = config.encoder_heads;
    enc.dim = config.encoder_dim;
    enc.mlp_hidden = config.encoder_dim * config.mlp_ratio;
    enc.tokens = grid * grid;
    enc.weighted_attention = config.weighted_attention;
    enc.renormalize_rows = config.renormalize_rows;
    enc.weight_queries = config.weight_queries;
    m.encoder = init_encoder(enc, rng, m.params, "encoder.");
  }

  DecoderConfig dec;
  dec.stages = config.embed_blocks;
  dec.in_dim = config.encoder_dim;
  dec.min_width = config.decoder_min_width;
  dec.self_attention = config.decoder_self_attention;
  m.decoder = init_decoder(dec, rng, m.params, "decoder.");
  return m;
}

RefineModel build_refine_model(const RunConfig& config, std::uint64_t init_seed) {
  RefineModel m;
  m.config = config;
  Rng rng(Rng::derive(init_seed, 0x2ef1e));
  RefineConfig rc;
  rc.base_width = config.refine_base_width;
  m.refine = init_refine(rc, rng, m.params, "refine.");
  return m;
}

std::vector<std::pair<std::string, Tensor>> export_params(const ParamStore& store,
                                                          const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(store.size());
  for (const auto& [name, t] : store.items()) {
    out.emplace_back(prefix + name, t.detach_copy());
  }
  return out;
}

void import_params(ParamStore& store, const Checkpoint& ckpt, const std::string& prefix) {
  for (const auto& [name, t] : store.items()) {
    Tensor handle = t;  // shares the node
    const Tensor* src = ckpt.find(prefix + name);
    if (!src) {
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint is missing parameter " + prefix + name);
    }
    if (src->shape() != t.shape()) {
      throw CheckpointError(CheckpointError::Kind::Format,
                            "checkpoint shape mismatch for " + prefix + name + ": " +
                                shape_str(src->shape()) + " vs " + shape_str(t.shape()));
    }
    handle.mutable_data() = src->data();
  }
}

namespace {

RunConfig config_from_snapshot(const Checkpoint& ckpt, const std::string& want_stage) {
  RunConfig config = parse_config_text(ckpt.config_text);
  if (config.stage != want_stage) {
    throw CheckpointError(CheckpointError::Kind::StageMismatch,
                          "checkpoint stage is '" + config.stage + "', expected '" + want_stage +
                              "'");
  }
  return config;
}

}  // namespace

CoarseModel coarse_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig config = config_from_snapshot(ckpt, "coarse");
  CoarseModel m = build_coarse_model(config, config.seed);
  import_params(m.params, ckpt, "g.");
  return m;
}

RefineModel refine_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig config = config_from_snapshot(ckpt, "refine");
  RefineModel m = build_refine_model(config, config.seed);
  import_params(m.params, ckpt, "g.");
  return m;
}

}  // namespace tfill
