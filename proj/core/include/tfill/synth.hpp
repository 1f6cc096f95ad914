#pragma once

#include <cstdint>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

/// Procedural RGB textures [3,size,size] in (0,1): a few oriented sinusoidal
/// gratings plus a soft radial blob, squashed through a logistic. Globally
/// periodic structure makes the masked-completion task benefit from
/// long-range context. Deterministic in (count, size, seed).
std::vector<Tensor> synth_textures(int count, int size, std::uint64_t seed);

}  // namespace tfill
