#pragma once

#include <functional>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

/// Central-difference check of reverse-mode gradients.
///
/// `f` must return a scalar tensor. Gradients from one backward pass are
/// compared coordinate-by-coordinate against (f(x+eps e_i) - f(x-eps e_i)) /
/// (2 eps). Returns the max relative error, with an absolute floor of 1e-8 in
/// the denominator.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5);

/// Multi-input variant: checks the gradient w.r.t. every tensor in `inputs`
/// (each gets requires_grad temporarily). `f` reads the inputs by reference.
double finite_diff_check_many(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                              double eps = 1e-5);

}  // namespace tfill
