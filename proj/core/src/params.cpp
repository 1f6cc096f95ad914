#include "tfill/params.hpp"

#include "tfill/rng.hpp"

namespace tfill {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ValueError("duplicate parameter name: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter: " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter: " + name);
  return items_[it->second].second;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool v) {
  for (auto& [name, t] : items_) t.set_requires_grad(v);
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : items_) {
    h = fnv1a64(name.data(), name.size(), h);
    for (int d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
  }
  return h;
}

void ParamStore::adopt(const std::string& prefix, const ParamStore& other) {
  for (const auto& [name, t] : other.items()) add(prefix + name, t);
}

}  // namespace tfill
