#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfill/params.hpp"

namespace tfill {

/// Adam with bias correction; state persists in checkpoints as tensors.
class Adam {
 public:
  Adam(ParamStore* params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  std::int64_t step_count() const { return step_count_; }

  /// Moment buffers and step counter, keyed for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state_tensors(const std::string& prefix) const;
  void load_state(const std::string& prefix,
                  const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  ParamStore* params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace tfill
