#include "tfill/optim.hpp"

#include <cmath>

namespace tfill {

Adam::Adam(ParamStore* params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_->size());
  v_.resize(params_->size());
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto n = params_->items()[i].second.numel();
    m_[i].assign(static_cast<std::size_t>(n), 0.0);
    v_[i].assign(static_cast<std::size_t>(n), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Tensor t = params_->items()[i].second;
    auto& grad = t.node()->grad;
    if (grad.empty()) continue;  // parameter untouched this step
    auto& data = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      double g = grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state_tensors(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back(prefix + "step",
                   Tensor::from_data({1}, {static_cast<double>(step_count_)}));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const auto& [name, t] = params_->items()[i];
    out.emplace_back(prefix + "m." + name, Tensor::from_data(t.shape(), m_[i]));
    out.emplace_back(prefix + "v." + name, Tensor::from_data(t.shape(), v_[i]));
  }
  return out;
}

void Adam::load_state(const std::string& prefix,
                      const std::vector<std::pair<std::string, Tensor>>& state) {
  auto find = [&](const std::string& key) -> const Tensor* {
    for (const auto& [name, t] : state) {
      if (name == key) return &t;
    }
    return nullptr;
  };
  if (const Tensor* s = find(prefix + "step")) {
    step_count_ = static_cast<std::int64_t>(s->data()[0]);
  }
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const auto& name = params_->items()[i].first;
    if (const Tensor* m = find(prefix + "m." + name)) m_[i] = m->data();
    if (const Tensor* v = find(prefix + "v." + name)) v_[i] = v->data();
  }
}

}  // namespace tfill
