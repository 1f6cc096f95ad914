#include "tfill/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tfill/image.hpp"
#include "tfill/metrics.hpp"
#include "tfill/objective.hpp"
#include "tfill/ops.hpp"
#include "tfill/optim.hpp"
#include "tfill/rng.hpp"
#include "tfill/synth.hpp"

namespace tfill {

namespace {

constexpr std::uint64_t kSaltData = 0xda7a;
constexpr std::uint64_t kSaltOrder = 0x5f1e;
constexpr std::uint64_t kSaltTrainMask = 0x3a5c;
constexpr std::uint64_t kSaltValMask = 0x7a11;
constexpr std::uint64_t kSaltPerceptual = 0x9e7c;
constexpr std::uint64_t kSaltDisc = 0xd15c;

std::string json_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& idx) {
  int S_h = images[0].dim(1), S_w = images[0].dim(2);
  int B = static_cast<int>(idx.size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(B) * 3 * S_h * S_w);
  for (int i : idx) {
    const auto& v = images[static_cast<std::size_t>(i)].data();
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor::from_data({B, 3, S_h, S_w}, std::move(data));
}

Tensor stack_masks(const std::vector<Tensor>& masks) {
  int H = masks[0].dim(1), W = masks[0].dim(2);
  int B = static_cast<int>(masks.size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(B) * H * W);
  for (const auto& m : masks) {
    data.insert(data.end(), m.data().begin(), m.data().end());
  }
  return Tensor::from_data({B, 1, H, W}, std::move(data));
}

Tensor eval_mask(const RunConfig& config, int size, std::uint64_t salt, int index) {
  MaskSpec spec = config.mask_spec(size);
  if (spec.kind == MaskSpec::Kind::Center) return generate_center_mask(size, size).mask;
  spec.seed = Rng::derive(config.seed, salt + static_cast<std::uint64_t>(index));
  return generate_freeform_mask(spec).mask;
}

MaskedImage batch_single(const Tensor& image, const Tensor& mask) {
  Tensor img4 = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  Tensor mask4 = reshape(mask, {1, 1, mask.dim(1), mask.dim(2)});
  return make_masked(img4, mask4);
}

/// Shared coarse->refine inference used by validation and the CLI.
CompletionResult complete_masked(const CoarseModel& coarse, const RefineModel* refine,
                                 const MaskedImage& full) {
  int S = coarse.config.image_size;
  int H = full.height(), W = full.width();
  if (H != W) throw ConfigError("complete: input must be square, got " + std::to_string(H) + "x" + std::to_string(W));
  if (H % S != 0) {
    throw ConfigError("complete: input size " + std::to_string(H) +
                      " must be a multiple of the coarse resolution " + std::to_string(S));
  }
  MaskedImage lo = full;
  if (H != S) {
    int f = H / S;
    Tensor mask_lo = mask_downsample(full.mask, f, DownsampleRule::Strict);
    Tensor img_lo = resize_area(full.image, f);
    lo = make_masked(img_lo, mask_lo);
  }
  Tensor coarse_raw = coarse.forward(lo);
  CompletionResult out;
  out.coarse = recompose(full, coarse_raw);
  if (refine) {
    int div = refine->refine.config.divisor();
    if (H % div != 0) {
      throw ConfigError("complete: refine stage needs sizes divisible by " + std::to_string(div));
    }
    Tensor refined_raw = refine->forward(out.coarse, full.mask);
    out.refined = compose_output(refined_raw, full);
  }
  return out;
}

ValMetrics evaluate_split(const CoarseModel& coarse, const RefineModel* refine,
                          const RunConfig& config, const std::vector<Tensor>& images,
                          int size) {
  ValMetrics sum;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tensor mask = eval_mask(config, size, kSaltValMask, static_cast<int>(i));
    MaskedImage masked = batch_single(images[i], mask);
    CompletionResult res = complete_masked(coarse, refine, masked);
    Tensor prediction = res.refined ? *res.refined : res.coarse;
    Tensor gt = reshape(images[i], {1, 3, size, size});
    sum.l1 += metric_l1(prediction, gt);
    sum.psnr += metric_psnr(prediction, gt);
    sum.ssim += metric_ssim(prediction, gt);
  }
  auto n = static_cast<double>(images.size());
  return {sum.l1 / n, sum.psnr / n, sum.ssim / n};
}

struct StepLosses {
  double pixel = 0.0, perceptual = 0.0, gan = 0.0, disc = 0.0;
};

}  // namespace

Dataset load_dataset(const RunConfig& config, int size) {
  Dataset ds;
  if (config.data == "synthetic") {
    auto all = synth_textures(config.synth_count, size, Rng::derive(config.seed, kSaltData));
    for (std::size_t i = 0; i < all.size(); ++i) {
      std::string name = "synth" + std::to_string(i);
      bool val = fnv1a64(name.data(), name.size()) % 10 == 0;
      (val ? ds.val : ds.train).push_back(all[i]);
    }
  } else {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(config.data)) {
      if (entry.path().extension() == ".png") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .png files in " + config.data);
    for (const auto& f : files) {
      std::string name = std::filesystem::path(f).filename().string();
      Tensor img = read_png(f);
      if (img.dim(1) != size || img.dim(2) != size) img = resample_image(img, size, size);
      bool val = fnv1a64(name.data(), name.size()) % 10 == 0;
      (val ? ds.val : ds.train).push_back(img);
    }
  }
  if (ds.train.empty()) throw IoError("dataset has no training images");
  if (ds.val.empty()) ds.val = ds.train;  // tiny datasets: validate on the training set
  return ds;
}

TrainResult train_run(const RunConfig& raw_config) {
  RunConfig config = raw_config;
  apply_env_seed(config);
  validate_config(config);
  std::filesystem::create_directories(config.out_dir);

  const bool refine_stage = config.stage == "refine";
  const int size = config.train_size();
  Dataset ds = load_dataset(config, size);

  // Generator side: either the coarse model or the refine model (with the
  // coarse stage frozen underneath).
  CoarseModel coarse;
  RefineModel refine_model;
  if (refine_stage) {
    coarse = coarse_from_checkpoint(load_checkpoint(config.coarse_checkpoint));
    coarse.params.set_requires_grad(false);
    if (size % coarse.config.image_size != 0) {
      throw ConfigError("refine: training size " + std::to_string(size) +
                        " is not a multiple of the coarse resolution " +
                        std::to_string(coarse.config.image_size));
    }
    refine_model = build_refine_model(config, config.seed);
  } else {
    coarse = build_coarse_model(config, config.seed);
  }
  ParamStore& gstore = refine_stage ? refine_model.params : coarse.params;

  Rng disc_rng(Rng::derive(config.seed, kSaltDisc));
  DiscriminatorConfig dc;
  dc.base_width = config.disc_base_width;
  ParamStore dstore;
  DiscriminatorParams disc = init_discriminator(dc, disc_rng, dstore, "");
  PerceptualExtractor perceptual =
      PerceptualExtractor::create(Rng::derive(config.seed, kSaltPerceptual));

  Adam adam_g(&gstore, config.lr, config.beta1, config.beta2);
  Adam adam_d(&dstore, config.lr, config.beta1, config.beta2);
  LossWeights weights{config.w_pixel, config.w_perceptual, config.w_gan};

  Rng order_rng(Rng::derive(config.seed, kSaltOrder));
  Rng mask_rng(Rng::derive(config.seed, kSaltTrainMask));
  std::vector<int> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::size_t cursor = order.size();  // force initial shuffle

  std::string metrics_path = config.out_dir + "/metrics.jsonl";
  std::FILE* log = std::fopen(metrics_path.c_str(), "w");
  if (!log) throw IoError("cannot open " + metrics_path);

  MaskSpec train_spec = config.mask_spec(size);
  StepLosses losses;

  auto save = [&](const std::string& path, int step) {
    Checkpoint ck;
    ck.config_text = config_to_text(config);
    ck.tensors = export_params(gstore, "g.");
    for (auto& t : export_params(dstore, "d.")) ck.tensors.push_back(std::move(t));
    for (auto& t : adam_g.state_tensors("optg.")) ck.tensors.push_back(std::move(t));
    for (auto& t : adam_d.state_tensors("optd.")) ck.tensors.push_back(std::move(t));
    ck.tensors.emplace_back("meta.step", Tensor::from_data({1}, {static_cast<double>(step)}));
    save_checkpoint(path, ck);
  };

  auto validate_now = [&](int step) {
    ValMetrics vm = evaluate_split(coarse, refine_stage ? &refine_model : nullptr, config, ds.val,
                                   size);
    std::fprintf(log,
                 "{\"step\":%d,\"loss_pixel\":%s,\"loss_perceptual\":%s,\"loss_gan\":%s,"
                 "\"loss_d\":%s,\"l1\":%s,\"psnr\":%s,\"ssim\":%s}\n",
                 step, json_double(losses.pixel).c_str(), json_double(losses.perceptual).c_str(),
                 json_double(losses.gan).c_str(), json_double(losses.disc).c_str(),
                 json_double(vm.l1).c_str(), json_double(vm.psnr).c_str(),
                 json_double(vm.ssim).c_str());
    std::fflush(log);
    return vm;
  };

  ValMetrics last_val{};
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<int> batch_idx;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch_idx.push_back(order[cursor++]);
    }
    Tensor gt = stack_images(ds.train, batch_idx);
    std::vector<Tensor> batch_masks;
    for (int b = 0; b < config.batch_size; ++b) {
      if (train_spec.kind == MaskSpec::Kind::Center) {
        batch_masks.push_back(generate_center_mask(size, size).mask);
      } else {
        batch_masks.push_back(generate_freeform_mask(train_spec, mask_rng).mask);
      }
    }
    MaskedImage masked = make_masked(gt, stack_masks(batch_masks));

    // Refine stage: frozen coarse pass at the low resolution, then the
    // recomposed high-resolution image feeds the refinement network.
    Tensor merged;
    if (refine_stage) {
      MaskedImage lo = masked;
      int f = size / coarse.config.image_size;
      if (f != 1) {
        Tensor mask_lo = mask_downsample(masked.mask, f, DownsampleRule::Strict);
        lo = make_masked(resize_area(masked.image, f), mask_lo);
      }
      merged = recompose(masked, coarse.forward(lo));
    }

    // Generator update (discriminator frozen).
    Tensor fake_for_disc;
    {
      dstore.set_requires_grad(false);
      TapeScope scope;
      Tensor gen = refine_stage ? refine_model.forward(merged, masked.mask)
                                 : coarse.forward(masked);
      Tensor target = config.loss_on_composed ? compose_output(gen, masked) : gen;
      Tensor lp = pixel_loss(target, gt);
      Tensor lper = perceptual_loss(target, gt, perceptual);
      Tensor lgan = gan_generator_loss(discriminator_logits(target, disc));
      Tensor loss = total_loss(lp, lper, lgan, weights);
      gstore.zero_grad();
      backward(loss);
      adam_g.step();
      losses.pixel = lp.item();
      losses.perceptual = lper.item();
      losses.gan = lgan.item();
      fake_for_disc = target.detach_copy();
      dstore.set_requires_grad(true);
    }

    // Discriminator update on the detached fake.
    {
      TapeScope scope;
      Tensor d_loss = gan_discriminator_loss(discriminator_logits(gt, disc),
                                             discriminator_logits(fake_for_disc, disc));
      dstore.zero_grad();
      backward(d_loss);
      adam_d.step();
      losses.disc = d_loss.item();
    }

    if (config.val_interval > 0 && step % config.val_interval == 0) {
      last_val = validate_now(step);
    }
    if (config.ckpt_interval > 0 && step % config.ckpt_interval == 0 && step != config.steps) {
      save(config.out_dir + "/ckpt_step" + std::to_string(step) + ".tfck", step);
    }
  }

  last_val = validate_now(config.steps);
  std::fclose(log);

  TrainResult result;
  result.metrics_path = metrics_path;
  result.checkpoint_path = config.out_dir + "/ckpt_final.tfck";
  save(result.checkpoint_path, config.steps);
  result.checkpoint_hash = checkpoint_file_hash(result.checkpoint_path);
  result.final_val = last_val;
  result.final_train = evaluate_split(coarse, refine_stage ? &refine_model : nullptr, config,
                                      ds.train, size);
  result.last_pixel_loss = losses.pixel;
  return result;
}

CompletionResult complete_image(const CoarseModel& coarse, const RefineModel* refine,
                                const Tensor& image, const Tensor& mask) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("complete: image must be [3,H,W]");
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ShapeError("complete: mask must be [1,H,W]");
  return complete_masked(coarse, refine, batch_single(image, mask));
}

RunConfig ladder_config(const RunConfig& base, char which) {
  RunConfig c = base;
  c.embed_kind = "conv";
  c.use_transformer = false;
  c.weighted_attention = false;
  c.decoder_self_attention = false;
  switch (which) {
    case 'F':
    case 'E':
    case 'D':
    case 'C':
    case 'B':
      c.decoder_self_attention = true;
      if (which == 'B') break;
      c.embed_kind = "restrictive";
      if (which == 'C') break;
      c.use_transformer = true;
      if (which == 'D') break;
      c.weighted_attention = true;
      break;
    case 'A':
      break;
    default:
      throw ConfigError(std::string("ablation: invalid ladder entry '") + which + "'");
  }
  return c;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string AblationReport::table() const {
  std::string out = "config  seed        l1        psnr      ssim\n";
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%c       %-10llu  %-8.5f  %-8.4f  %-8.5f\n", e.config,
                  static_cast<unsigned long long>(e.seed), e.metrics.l1, e.metrics.psnr,
                  e.metrics.ssim);
    out += buf;
  }
  out += "\nmedians over seeds\nconfig  l1        psnr      ssim\n";
  for (const auto& [c, m] : medians) {
    std::snprintf(buf, sizeof(buf), "%c       %-8.5f  %-8.4f  %-8.5f\n", c, m.l1, m.psnr, m.ssim);
    out += buf;
  }
  return out;
}

AblationReport run_ablation(const RunConfig& base, const std::string& ladder, int seeds) {
  if (seeds < 1) throw ConfigError("ablation: seeds must be >= 1");
  std::vector<char> configs;
  for (char ch : ladder) {
    if (ch == ',' || ch == ' ') continue;
    if (ch < 'A' || ch > 'F') throw ConfigError(std::string("ablation: invalid ladder entry '") + ch + "'");
    configs.push_back(ch);
  }
  if (configs.empty()) throw ConfigError("ablation: empty ladder");

  AblationReport report;
  for (char which : configs) {
    std::vector<double> l1s, psnrs, ssims;
    for (int s = 0; s < seeds; ++s) {
      RunConfig cfg = ladder_config(base, which);
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      cfg.out_dir = base.out_dir + "/ablate_" + std::string(1, which) + "_seed" +
                    std::to_string(cfg.seed);
      TrainResult coarse_result = train_run(cfg);
      ValMetrics final_metrics = coarse_result.final_val;
      if (which == 'F') {
        RunConfig rf = cfg;
        rf.stage = "refine";
        rf.refine_size = cfg.image_size;  // same-resolution refinement at desk scale
        rf.coarse_checkpoint = coarse_result.checkpoint_path;
        rf.out_dir = cfg.out_dir + "/refine";
        final_metrics = train_run(rf).final_val;
      }
      report.entries.push_back({which, cfg.seed, final_metrics});
      l1s.push_back(final_metrics.l1);
      psnrs.push_back(final_metrics.psnr);
      ssims.push_back(final_metrics.ssim);
    }
    report.medians.emplace_back(which, ValMetrics{median(l1s), median(psnrs), median(ssims)});
  }
  return report;
}

}  // namespace tfill
