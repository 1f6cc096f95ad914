#include "tfill/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tfill/ops.hpp"

namespace tfill {

FlowMap jacobian_flow(const ProbeForward& model, const MaskedImage& input, int row, int col) {
  Tensor image = input.image.detach_copy();
  image.set_requires_grad(true);

  FlowMap map;
  map.height = input.height();
  map.width = input.width();
  map.row = row;
  map.col = col;

  TapeScope scope;
  Tensor out = model(image);
  if (out.rank() != 4) throw ShapeError("jacobian_flow: model output must be [B,C,H,W]");
  if (row < 0 || row >= out.dim(2) || col < 0 || col >= out.dim(3)) {
    throw ShapeError("jacobian_flow: position (" + std::to_string(row) + "," +
                     std::to_string(col) + ") outside output extent " + std::to_string(out.dim(2)) +
                     "x" + std::to_string(out.dim(3)));
  }
  Tensor at_pos = slice(slice(out, 2, row, 1), 3, col, 1);  // [B,C,1,1]
  Tensor score = reduce_sum(at_pos);
  backward(score);

  const auto& g = image.node()->grad;
  std::int64_t plane = static_cast<std::int64_t>(map.height) * map.width;
  int channels = input.image.dim(1);
  map.values.assign(static_cast<std::size_t>(plane), 0.0);
  if (!g.empty()) {
    for (std::int64_t p = 0; p < plane; ++p) {
      double sq = 0.0;
      for (int c = 0; c < channels; ++c) {
        double v = g[static_cast<std::size_t>(c * plane + p)];
        sq += v * v;
      }
      map.values[static_cast<std::size_t>(p)] = std::sqrt(sq);
    }
  }
  return map;
}

std::vector<std::tuple<int, int, double>> top_k_flow(const FlowMap& map, int k) {
  std::int64_t total = static_cast<std::int64_t>(map.values.size());
  if (k < 1 || k > total) {
    throw ValueError("top_k_flow: k = " + std::to_string(k) + " outside [1, " +
                     std::to_string(total) + "]");
  }
  std::vector<std::int64_t> order(map.values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (map.values[static_cast<std::size_t>(a)] != map.values[static_cast<std::size_t>(b)]) {
      return map.values[static_cast<std::size_t>(a)] > map.values[static_cast<std::size_t>(b)];
    }
    return a < b;  // row-major tie-break
  });
  std::vector<std::tuple<int, int, double>> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto idx = order[static_cast<std::size_t>(i)];
    out.emplace_back(static_cast<int>(idx / map.width), static_cast<int>(idx % map.width),
                     map.values[static_cast<std::size_t>(idx)]);
  }
  return out;
}

std::int64_t rf_support(const FlowMap& map, double threshold) {
  std::int64_t count = 0;
  for (double v : map.values) {
    if (v > threshold) ++count;
  }
  return count;
}

std::int64_t rf_support(const ProbeForward& model, const MaskedImage& input, int row, int col,
                        double threshold) {
  return rf_support(jacobian_flow(model, input, row, col), threshold);
}

void write_flow_outputs(const std::string& dir, const FlowMap& map, int top_k) {
  std::filesystem::create_directories(dir);
  double peak = 0.0;
  for (double v : map.values) peak = std::max(peak, v);
  std::vector<double> norm(map.values.size(), 0.0);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = map.values[i] / peak;
  }
  write_png(dir + "/heatmap.png", Tensor::from_data({map.height, map.width}, norm));

  std::FILE* vf = std::fopen((dir + "/values.txt").c_str(), "w");
  if (!vf) throw IoError("cannot write " + dir + "/values.txt");
  std::fprintf(vf, "%d %d\n", map.height, map.width);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      std::fprintf(vf, "%.17g%c", map.at(r, c), c + 1 == map.width ? '\n' : ' ');
    }
  }
  std::fclose(vf);

  std::FILE* rf = std::fopen((dir + "/report.txt").c_str(), "w");
  if (!rf) throw IoError("cannot write " + dir + "/report.txt");
  std::fprintf(rf, "model: %s\n", map.model_id.c_str());
  std::fprintf(rf, "position: %d,%d\n", map.row, map.col);
  std::fprintf(rf, "rf_support: %lld (threshold %g)\n",
               static_cast<long long>(rf_support(map)), kFlowThreshold);
  int k = std::min<std::int64_t>(top_k, static_cast<std::int64_t>(map.values.size()));
  if (k > 0) {
    std::fprintf(rf, "top_%d:\n", k);
    for (const auto& [r, c, v] : top_k_flow(map, k)) {
      std::fprintf(rf, "  %d,%d %.17g\n", r, c, v);
    }
  }
  std::fclose(rf);
}

}  // namespace tfill
