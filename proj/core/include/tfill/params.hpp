#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

/// Ordered collection of named learnable tensors. Names are hierarchical
/// ("embed.block0.proj.w"); iteration follows registration order so that
/// initialization, checkpoints and optimizer sweeps are deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::int64_t total_elements() const;

  void zero_grad();
  void set_requires_grad(bool v);

  /// FNV-1a over names, shapes and raw value bytes; order-sensitive.
  std::uint64_t content_hash() const;

  /// Merges another store under a prefix ("disc." + name).
  void adopt(const std::string& prefix, const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tfill
