#include "tfill/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tfill {

namespace {

double relative_error(double analytic, double numeric) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps) {
  if (eps <= 0.0) throw ValueError("finite_diff_check: eps must be positive");
  Tensor probe = x.detach_copy();
  probe.set_requires_grad(true);

  std::vector<double> analytic;
  {
    TapeScope scope;
    Tensor y = f(probe);
    if (y.numel() != 1) throw ShapeError("finite_diff_check: f must be scalar-valued");
    backward(y);
    analytic = probe.node()->grad.empty() ? std::vector<double>(probe.data().size(), 0.0)
                                          : probe.node()->grad;
  }
  probe.set_requires_grad(false);

  double max_err = 0.0;
  auto& data = probe.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    double orig = data[i];
    data[i] = orig + eps;
    double fp = f(probe).item();
    data[i] = orig - eps;
    double fm = f(probe).item();
    data[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    max_err = std::max(max_err, relative_error(analytic[i], numeric));
  }
  return max_err;
}

double finite_diff_check_many(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                              double eps) {
  if (eps <= 0.0) throw ValueError("finite_diff_check: eps must be positive");
  std::vector<bool> saved;
  saved.reserve(inputs.size());
  for (auto t : inputs) {
    saved.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    TapeScope scope;
    Tensor y = f();
    if (y.numel() != 1) throw ShapeError("finite_diff_check: f must be scalar-valued");
    backward(y);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const auto& g = inputs[t].node()->grad;
      analytic[t] = g.empty() ? std::vector<double>(inputs[t].data().size(), 0.0) : g;
    }
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor tt = inputs[t];
    tt.set_requires_grad(false);
  }

  double max_err = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor tt = inputs[t];
    auto& data = tt.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double orig = data[i];
      data[i] = orig + eps;
      double fp = f().item();
      data[i] = orig - eps;
      double fm = f().item();
      data[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      max_err = std::max(max_err, relative_error(analytic[t][i], numeric));
    }
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor tt = inputs[t];
    tt.set_requires_grad(saved[t]);
  }
  return max_err;
}

}  // namespace tfill
