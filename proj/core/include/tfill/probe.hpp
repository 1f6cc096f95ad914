#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "tfill/image.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

/// Per-pixel magnitude of the Jacobian of one output position w.r.t. the
/// input image: value(p) = L2 norm over input channels of d(sum_c out[c,pos])
/// / d(input[:,p]).
struct FlowMap {
  std::vector<double> values;  // H*W, row-major, nonnegative
  int height = 0, width = 0;
  int row = 0, col = 0;  // probed output position
  std::string model_id;

  double at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(c)];
  }
};

/// Forward function probed: masked-image tensor [B,C,H,W] in, feature map
/// [B,C',H',W'] out.
using ProbeForward = std::function<Tensor(const Tensor& image)>;

constexpr double kFlowThreshold = 1e-12;

FlowMap jacobian_flow(const ProbeForward& model, const MaskedImage& input, int row, int col);

/// k largest flow values, descending; ties resolved row-major.
std::vector<std::tuple<int, int, double>> top_k_flow(const FlowMap& map, int k);

/// Count of pixels with flow above the threshold: the empirical receptive
/// field. For an L-layer stack of stride-1 kxk convs the analytic bound is
/// (L(k-1)+1)^2.
std::int64_t rf_support(const ProbeForward& model, const MaskedImage& input, int row, int col,
                        double threshold = kFlowThreshold);
std::int64_t rf_support(const FlowMap& map, double threshold = kFlowThreshold);

/// Writes heatmap.png (8-bit grayscale, max-normalized), values.txt (raw
/// doubles) and report.txt (rf_support + top-k listing) under `dir`.
void write_flow_outputs(const std::string& dir, const FlowMap& map, int top_k);

}  // namespace tfill
