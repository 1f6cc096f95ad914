#include <benchmark/benchmark.h>

#include "tfill/masks.hpp"
#include "tfill/model.hpp"
#include "tfill/objective.hpp"
#include "tfill/ops.hpp"
#include "tfill/synth.hpp"

using namespace tfill;

namespace {

RunConfig desk_config() {
  RunConfig c;
  c.image_size = 64;
  c.seed = 0;
  return c;
}

MaskedImage sample_input(int batch, int size) {
  auto imgs = synth_textures(batch, size, 7);
  std::vector<double> data;
  for (const auto& t : imgs) data.insert(data.end(), t.data().begin(), t.data().end());
  Tensor img = Tensor::from_data({batch, 3, size, size}, std::move(data));
  GeneratedMask gm = generate_center_mask(size, size);
  std::vector<double> mdata;
  for (int b = 0; b < batch; ++b) {
    mdata.insert(mdata.end(), gm.mask.data().begin(), gm.mask.data().end());
  }
  return make_masked(img, Tensor::from_data({batch, 1, size, size}, std::move(mdata)));
}

}  // namespace

static void BM_CoarseForward(benchmark::State& state) {
  RunConfig cfg = desk_config();
  CoarseModel model = build_coarse_model(cfg, 0);
  MaskedImage input = sample_input(static_cast<int>(state.range(0)), cfg.image_size);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(input).data().data());
  }
}
BENCHMARK(BM_CoarseForward)->Arg(1)->Arg(4);

static void BM_CoarseForwardBackward(benchmark::State& state) {
  RunConfig cfg = desk_config();
  CoarseModel model = build_coarse_model(cfg, 0);
  MaskedImage input = sample_input(static_cast<int>(state.range(0)), cfg.image_size);
  for (auto _ : state) {
    TapeScope scope;
    Tensor out = model.forward(input);
    model.params.zero_grad();
    backward(mean_all(out));
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_CoarseForwardBackward)->Arg(1)->Arg(4);

static void BM_RestrictiveEmbed(benchmark::State& state) {
  RunConfig cfg = desk_config();
  CoarseModel model = build_coarse_model(cfg, 0);
  MaskedImage input = sample_input(1, cfg.image_size);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.embed_forward(input).tokens.data().data());
  }
}
BENCHMARK(BM_RestrictiveEmbed);

BENCHMARK_MAIN();
