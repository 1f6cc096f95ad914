#include "tfill/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tfill {

MaskSpec RunConfig::mask_spec(int size) const {
  MaskSpec spec;
  spec.kind = mask_kind == "center" ? MaskSpec::Kind::Center : MaskSpec::Kind::Freeform;
  spec.height = size;
  spec.width = size;
  spec.ratio_min = mask_ratio_min;
  spec.ratio_max = mask_ratio_max;
  spec.strokes_min = mask_strokes_min;
  spec.strokes_max = mask_strokes_max;
  spec.width_min = mask_width_min;
  spec.width_max = mask_width_max;
  spec.length_min = mask_length_min;
  spec.length_max = mask_length_max;
  spec.seed = seed;
  return spec;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: invalid boolean for " + key + ": " + v);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> kFields = [] {
    std::map<std::string, Field> f;
    auto str = [&](const std::string& key, std::string RunConfig::* member) {
      f[key] = {[member](RunConfig& c, const std::string& v) { c.*member = v; },
                [member](const RunConfig& c) { return c.*member; }};
    };
    auto integer = [&](const std::string& key, int RunConfig::* member) {
      f[key] = {[member, key](RunConfig& c, const std::string& v) {
                  try {
                    std::size_t pos = 0;
                    c.*member = std::stoi(v, &pos);
                    if (pos != v.size()) throw std::invalid_argument(v);
                  } catch (const std::exception&) {
                    throw ConfigError("config: invalid integer for " + key + ": " + v);
                  }
                },
                [member](const RunConfig& c) { return std::to_string(c.*member); }};
    };
    auto real = [&](const std::string& key, double RunConfig::* member) {
      f[key] = {[member, key](RunConfig& c, const std::string& v) {
                  try {
                    std::size_t pos = 0;
                    c.*member = std::stod(v, &pos);
                    if (pos != v.size()) throw std::invalid_argument(v);
                  } catch (const std::exception&) {
                    throw ConfigError("config: invalid number for " + key + ": " + v);
                  }
                },
                [member](const RunConfig& c) { return fmt_double(c.*member); }};
    };
    auto boolean = [&](const std::string& key, bool RunConfig::* member) {
      f[key] = {[member, key](RunConfig& c, const std::string& v) { c.*member = parse_bool(v, key); },
                [member](const RunConfig& c) { return c.*member ? "true" : "false"; }};
    };

    str("stage", &RunConfig::stage);
    integer("image_size", &RunConfig::image_size);
    integer("refine_size", &RunConfig::refine_size);
    integer("embed_blocks", &RunConfig::embed_blocks);
    integer("embed_base_width", &RunConfig::embed_base_width);
    str("embed_kind", &RunConfig::embed_kind);
    integer("encoder_layers", &RunConfig::encoder_layers);
    integer("encoder_heads", &RunConfig::encoder_heads);
    integer("encoder_dim", &RunConfig::encoder_dim);
    integer("mlp_ratio", &RunConfig::mlp_ratio);
    boolean("use_transformer", &RunConfig::use_transformer);
    boolean("weighted_attention", &RunConfig::weighted_attention);
    boolean("renormalize_rows", &RunConfig::renormalize_rows);
    boolean("weight_queries", &RunConfig::weight_queries);
    boolean("pconv_canonical", &RunConfig::pconv_canonical);
    boolean("decoder_self_attention", &RunConfig::decoder_self_attention);
    integer("decoder_min_width", &RunConfig::decoder_min_width);
    integer("refine_base_width", &RunConfig::refine_base_width);
    integer("disc_base_width", &RunConfig::disc_base_width);
    real("w_pixel", &RunConfig::w_pixel);
    real("w_perceptual", &RunConfig::w_perceptual);
    real("w_gan", &RunConfig::w_gan);
    boolean("loss_on_composed", &RunConfig::loss_on_composed);
    real("lr", &RunConfig::lr);
    real("beta1", &RunConfig::beta1);
    real("beta2", &RunConfig::beta2);
    integer("batch_size", &RunConfig::batch_size);
    integer("steps", &RunConfig::steps);
    integer("val_interval", &RunConfig::val_interval);
    integer("ckpt_interval", &RunConfig::ckpt_interval);
    f["seed"] = {[](RunConfig& c, const std::string& v) {
                   try {
                     std::size_t pos = 0;
                     c.seed = std::stoull(v, &pos);
                     if (pos != v.size()) throw std::invalid_argument(v);
                   } catch (const std::exception&) {
                     throw ConfigError("config: invalid seed: " + v);
                   }
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    str("mask_kind", &RunConfig::mask_kind);
    real("mask_ratio_min", &RunConfig::mask_ratio_min);
    real("mask_ratio_max", &RunConfig::mask_ratio_max);
    integer("mask_strokes_min", &RunConfig::mask_strokes_min);
    integer("mask_strokes_max", &RunConfig::mask_strokes_max);
    integer("mask_width_min", &RunConfig::mask_width_min);
    integer("mask_width_max", &RunConfig::mask_width_max);
    integer("mask_length_min", &RunConfig::mask_length_min);
    integer("mask_length_max", &RunConfig::mask_length_max);
    str("data", &RunConfig::data);
    integer("synth_count", &RunConfig::synth_count);
    str("out_dir", &RunConfig::out_dir);
    str("coarse_checkpoint", &RunConfig::coarse_checkpoint);
    return f;
  }();
  return kFields;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  bool saw_seed = false;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                        line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = fields().find(key);
    if (it == fields().end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second.set(config, value);
    if (key == "seed") saw_seed = true;
  }
  if (!saw_seed) throw ConfigError("config: seed is mandatory");
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) {
    out += key;
    out += "=";
    out += field.get(config);
    out += "\n";
  }
  return out;
}

void apply_env_seed(RunConfig& config) {
  if (const char* env = std::getenv("TFILL_SEED")) {
    try {
      config.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("TFILL_SEED is not a valid integer: ") + env);
    }
  }
}

void validate_config(const RunConfig& config) {
  if (config.stage != "coarse" && config.stage != "refine") {
    throw ConfigError("config: stage must be coarse or refine, got " + config.stage);
  }
  if (config.embed_kind != "restrictive" && config.embed_kind != "conv") {
    throw ConfigError("config: embed_kind must be restrictive or conv");
  }
  if (config.mask_kind != "center" && config.mask_kind != "freeform") {
    throw ConfigError("config: mask_kind must be center or freeform");
  }
  int patch = 1 << config.embed_blocks;
  if (config.image_size % patch != 0) {
    throw ConfigError("config: image_size " + std::to_string(config.image_size) +
                      " must be divisible by 2^embed_blocks = " + std::to_string(patch));
  }
  if (config.stage == "refine") {
    if (config.refine_size % config.image_size != 0) {
      throw ConfigError("config: refine_size must be an integer multiple of image_size");
    }
    if (config.coarse_checkpoint.empty()) {
      throw ConfigError("config: stage=refine requires coarse_checkpoint");
    }
  }
  if (config.encoder_dim % config.encoder_heads != 0) {
    throw ConfigError("config: encoder_dim must be divisible by encoder_heads");
  }
  if (config.batch_size < 1 || config.steps < 0) {
    throw ConfigError("config: batch_size must be >= 1 and steps >= 0");
  }
}

}  // namespace tfill
