#include "tfill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace tfill {

namespace {

Tensor raw(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor::wrap(std::move(n));
}

bool wants_grad(std::initializer_list<Tensor> inputs) {
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void maybe_record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& out,
                  std::function<void()> bw) {
  TFILL_DEBUG_CHECK_FINITE(out.node(), op);
  Tape* t = Tape::active();
  if (t == nullptr || !out.requires_grad()) return;
  std::vector<NodePtr> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const auto& i : inputs) in_nodes.push_back(i.node());
  t->record(std::move(in_nodes), out.node(), std::move(bw), op);
}

void accumulate(const NodePtr& n, const std::vector<double>& g) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

std::int64_t outer_size(const Shape& s, int axis) {
  std::int64_t n = 1;
  for (int i = 0; i < axis; ++i) n *= s[static_cast<std::size_t>(i)];
  return n;
}

std::int64_t inner_size(const Shape& s, int axis) {
  std::int64_t n = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

int normalize_axis(const Tensor& x, int axis) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis out of range for shape " + shape_str(x.shape()));
  }
  return axis;
}

enum class BinKind { Same, ScalarLeft, ScalarRight };

BinKind bin_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return BinKind::Same;
  if (a.numel() == 1) return BinKind::ScalarLeft;
  if (b.numel() == 1) return BinKind::ScalarRight;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  BinKind k = bin_kind(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  Shape out_shape = (k == BinKind::ScalarLeft) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  switch (k) {
    case BinKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case BinKind::ScalarLeft:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] + bv[i];
      break;
    case BinKind::ScalarRight:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[0];
      break;
  }
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({a, b}));
  auto an = a.node(), bn = b.node(), on = res.node();
  maybe_record("add", {a, b}, res, [an, bn, on, k] {
    const auto& g = on->grad;
    if (an->requires_grad) {
      an->ensure_grad();
      if (k == BinKind::ScalarLeft) {
        double s = 0.0;
        for (double v : g) s += v;
        an->grad[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (k == BinKind::ScalarRight) {
        double s = 0.0;
        for (double v : g) s += v;
        bn->grad[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
      }
    }
  });
  return res;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  BinKind k = bin_kind(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  Shape out_shape = (k == BinKind::ScalarLeft) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  switch (k) {
    case BinKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case BinKind::ScalarLeft:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] - bv[i];
      break;
    case BinKind::ScalarRight:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[0];
      break;
  }
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({a, b}));
  auto an = a.node(), bn = b.node(), on = res.node();
  maybe_record("sub", {a, b}, res, [an, bn, on, k] {
    const auto& g = on->grad;
    if (an->requires_grad) {
      an->ensure_grad();
      if (k == BinKind::ScalarLeft) {
        double s = 0.0;
        for (double v : g) s += v;
        an->grad[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (k == BinKind::ScalarRight) {
        double s = 0.0;
        for (double v : g) s += v;
        bn->grad[0] -= s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
      }
    }
  });
  return res;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  BinKind k = bin_kind(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  Shape out_shape = (k == BinKind::ScalarLeft) ? b.shape() : a.shape();
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  switch (k) {
    case BinKind::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case BinKind::ScalarLeft:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] * bv[i];
      break;
    case BinKind::ScalarRight:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[0];
      break;
  }
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({a, b}));
  auto an = a.node(), bn = b.node(), on = res.node();
  maybe_record("mul", {a, b}, res, [an, bn, on, k] {
    const auto& g = on->grad;
    const auto& av2 = an->data;
    const auto& bv2 = bn->data;
    if (an->requires_grad) {
      an->ensure_grad();
      switch (k) {
        case BinKind::Same:
          for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bv2[i];
          break;
        case BinKind::ScalarLeft: {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bv2[i];
          an->grad[0] += s;
          break;
        }
        case BinKind::ScalarRight:
          for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bv2[0];
          break;
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      switch (k) {
        case BinKind::Same:
          for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * av2[i];
          break;
        case BinKind::ScalarRight: {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av2[i];
          bn->grad[0] += s;
          break;
        }
        case BinKind::ScalarLeft:
          for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * av2[0];
          break;
      }
    }
  });
  return res;
}

Tensor scale(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw ValueError("scale: non-finite factor");
  std::vector<double> out(x.data());
  for (auto& v : out) v *= c;
  Tensor res = raw(x.shape(), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("scale", {x}, res, [xn, on, c] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * c;
  });
  return res;
}

namespace {

template <typename Fwd, typename Dfn>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dfn dfn) {
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor res = raw(x.shape(), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record(name, {x}, res, [xn, on, dfn] {
    xn->ensure_grad();
    const auto& g = on->grad;
    const auto& xv2 = xn->data;
    for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i] * dfn(xv2[i]);
  });
  return res;
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor sqrt_t(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw ValueError("sqrt of negative value");
  }
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double v) { return 0.5 / std::sqrt(v); });
}

Tensor exp_t(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor abs_t(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_op(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return sigmoid_scalar(v); },
      [](double v) {
        double s = sigmoid_scalar(v);
        return s * (1.0 - s);
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      "softplus", x,
      [](double v) {
        if (v > 20.0) return v;
        if (v < -20.0) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](double v) {
        if (v > 20.0) return 1.0;
        if (v < -20.0) return std::exp(v);
        return sigmoid_scalar(v);
      });
}

Tensor reciprocal(const Tensor& x) {
  for (double v : x.data()) {
    if (v == 0.0) throw ValueError("reciprocal of zero");
  }
  return unary_op(
      "reciprocal", x, [](double v) { return 1.0 / v; },
      [](double v) { return -1.0 / (v * v); });
}

Tensor add_bias_last(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || b.dim(0) != x.dim(-1)) {
    throw ShapeError("add_bias_last: bias " + shape_str(b.shape()) + " does not match last dim of " +
                     shape_str(x.shape()));
  }
  std::int64_t n = b.numel();
  std::int64_t rows = x.numel() / n;
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  const auto& bv = b.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xp = &xv[static_cast<std::size_t>(r * n)];
    double* op = &out[static_cast<std::size_t>(r * n)];
    for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] + bv[static_cast<std::size_t>(i)];
  }
  Tensor res = raw(x.shape(), std::move(out), wants_grad({x, b}));
  auto xn = x.node(), bn = b.node(), on = res.node();
  maybe_record("add_bias_last", {x, b}, res, [xn, bn, on, rows, n] {
    const auto& g = on->grad;
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gp = &g[static_cast<std::size_t>(r * n)];
        for (std::int64_t i = 0; i < n; ++i) bn->grad[static_cast<std::size_t>(i)] += gp[i];
      }
    }
  });
  return res;
}

Tensor add_batch_bias(const Tensor& x, const Tensor& p) {
  if (x.rank() < 2) throw ShapeError("add_batch_bias: x must have a leading batch dimension");
  Shape expect(x.shape().begin() + 1, x.shape().end());
  if (p.shape() != expect) {
    throw ShapeError("add_batch_bias: bias " + shape_str(p.shape()) + " does not match " +
                     shape_str(x.shape()) + " minus its batch dimension");
  }
  std::int64_t batch = x.dim(0);
  std::int64_t n = p.numel();
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  const auto& pv = p.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* xp = &xv[static_cast<std::size_t>(b * n)];
    double* op = &out[static_cast<std::size_t>(b * n)];
    for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] + pv[static_cast<std::size_t>(i)];
  }
  Tensor res = raw(x.shape(), std::move(out), wants_grad({x, p}));
  auto xn = x.node(), pn = p.node(), on = res.node();
  maybe_record("add_batch_bias", {x, p}, res, [xn, pn, on, batch, n] {
    const auto& g = on->grad;
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    }
    if (pn->requires_grad) {
      pn->ensure_grad();
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* gp = &g[static_cast<std::size_t>(b * n)];
        for (std::int64_t i = 0; i < n; ++i) pn->grad[static_cast<std::size_t>(i)] += gp[i];
      }
    }
  });
  return res;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  }
  Tensor res = raw(std::move(new_shape), x.data(), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("reshape", {x}, res, [xn, on] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
  });
  return res;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int ax = normalize_axis(parts[0], axis);
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: shapes differ outside axis");
      }
    }
    total += p.shape()[static_cast<std::size_t>(ax)];
  }
  out_shape[static_cast<std::size_t>(ax)] = total;

  std::int64_t outer = outer_size(out_shape, ax);
  std::int64_t inner = inner_size(out_shape, ax);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    std::int64_t len = p.shape()[static_cast<std::size_t>(ax)];
    offsets.push_back(offset);
    const auto& pv = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(&out[static_cast<std::size_t>((o * total + offset) * inner)],
                  &pv[static_cast<std::size_t>(o * len * inner)],
                  static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    offset += len;
  }
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  Tensor res = raw(std::move(out_shape), std::move(out), rg);
  std::vector<NodePtr> in_nodes;
  for (const auto& p : parts) in_nodes.push_back(p.node());
  auto on = res.node();
  TFILL_DEBUG_CHECK_FINITE(on, "concat");
  if (rg && Tape::active()) {
    auto nodes = in_nodes;
    auto offs = offsets;
    std::int64_t tot = total, out_inner = inner, out_outer = outer;
    Tape::active()->record(in_nodes, on, [nodes, offs, on, tot, out_inner, out_outer, ax] {
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const auto& n = nodes[pi];
        if (!n->requires_grad) continue;
        n->ensure_grad();
        std::int64_t len = n->shape[static_cast<std::size_t>(ax)];
        for (std::int64_t o = 0; o < out_outer; ++o) {
          const double* src = &on->grad[static_cast<std::size_t>((o * tot + offs[pi]) * out_inner)];
          double* dst = &n->grad[static_cast<std::size_t>(o * len * out_inner)];
          for (std::int64_t i = 0; i < len * out_inner; ++i) dst[i] += src[i];
        }
      }
    }, "concat");
  }
  return res;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  if (start < 0 || len <= 0 || start + len > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for axis extent " + std::to_string(extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = len;
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  std::vector<double> out(static_cast<std::size_t>(outer * len * inner));
  const auto& xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(&out[static_cast<std::size_t>(o * len * inner)],
                &xv[static_cast<std::size_t>((o * extent + start) * inner)],
                static_cast<std::size_t>(len * inner) * sizeof(double));
  }
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("slice", {x}, res, [xn, on, outer, inner, extent, start, len] {
    xn->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = &on->grad[static_cast<std::size_t>(o * len * inner)];
      double* dst = &xn->grad[static_cast<std::size_t>((o * extent + start) * inner)];
      for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
  return res;
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last: rank must be >= 2");
  Shape out_shape = x.shape();
  int r = x.rank();
  std::swap(out_shape[static_cast<std::size_t>(r - 1)], out_shape[static_cast<std::size_t>(r - 2)]);
  std::int64_t m = x.shape()[static_cast<std::size_t>(r - 2)];
  std::int64_t n = x.shape()[static_cast<std::size_t>(r - 1)];
  std::int64_t batch = x.numel() / (m * n);
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* src = &xv[static_cast<std::size_t>(b * m * n)];
    double* dst = &out[static_cast<std::size_t>(b * m * n)];
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
  }
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("transpose", {x}, res, [xn, on, batch, m, n] {
    xn->ensure_grad();
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* src = &on->grad[static_cast<std::size_t>(b * m * n)];
      double* dst = &xn->grad[static_cast<std::size_t>(b * m * n)];
      for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
      }
    }
  });
  return res;
}

Tensor index_select(const Tensor& x, int axis, const std::vector<int>& indices) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  for (int i : indices) {
    if (i < 0 || i >= extent) throw ShapeError("index_select: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = static_cast<int>(indices.size());
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  std::int64_t len = static_cast<std::int64_t>(indices.size());
  std::vector<double> out(static_cast<std::size_t>(outer * len * inner));
  const auto& xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < len; ++k) {
      std::memcpy(&out[static_cast<std::size_t>((o * len + k) * inner)],
                  &xv[static_cast<std::size_t>((o * extent + indices[static_cast<std::size_t>(k)]) * inner)],
                  static_cast<std::size_t>(inner) * sizeof(double));
    }
  }
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  auto idx = indices;
  maybe_record("index_select", {x}, res, [xn, on, idx, outer, inner, extent] {
    xn->ensure_grad();
    std::int64_t len = static_cast<std::int64_t>(idx.size());
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t k = 0; k < len; ++k) {
        const double* src = &on->grad[static_cast<std::size_t>((o * len + k) * inner)];
        double* dst = &xn->grad[static_cast<std::size_t>((o * extent + idx[static_cast<std::size_t>(k)]) * inner)];
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
  return res;
}

Tensor expand_last(const Tensor& x, int n) {
  if (n < 1) throw ShapeError("expand_last: replication count must be >= 1");
  Shape out_shape = x.shape();
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(x.numel() * n));
  const auto& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    for (int k = 0; k < n; ++k) out[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(k)] = xv[i];
  }
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("expand_last", {x}, res, [xn, on, n] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += on->grad[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(k)];
      xn->grad[i] += s;
    }
  });
  return res;
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor res = raw({1}, {s}, x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("reduce_sum", {x}, res, [xn, on] {
    xn->ensure_grad();
    double g = on->grad[0];
    for (auto& v : xn->grad) v += g;
  });
  return res;
}

Tensor reduce_sum_axis(const Tensor& x, int axis) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  Shape out_shape;
  for (int d = 0; d < x.rank(); ++d) {
    if (d != ax) out_shape.push_back(x.shape()[static_cast<std::size_t>(d)]);
  }
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const auto& xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t c = 0; c < extent; ++c) {
      const double* src = &xv[static_cast<std::size_t>((o * extent + c) * inner)];
      double* dst = &out[static_cast<std::size_t>(o * inner)];
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("reduce_sum_axis", {x}, res, [xn, on, outer, inner, extent] {
    xn->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t c = 0; c < extent; ++c) {
        const double* src = &on->grad[static_cast<std::size_t>(o * inner)];
        double* dst = &xn->grad[static_cast<std::size_t>((o * extent + c) * inner)];
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
  return res;
}

Tensor mean_all(const Tensor& x) {
  return scale(reduce_sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reduce_max(const Tensor& x, int axis, std::vector<std::int64_t>* argmax) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  Shape out_shape;
  for (int d = 0; d < x.rank(); ++d) {
    if (d != ax) out_shape.push_back(x.shape()[static_cast<std::size_t>(d)]);
  }
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(static_cast<std::size_t>(outer * inner));
  std::vector<std::int64_t> arg(out.size());
  const auto& xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      double best = xv[static_cast<std::size_t>(o * extent * inner + i)];
      std::int64_t best_c = 0;
      for (std::int64_t c = 1; c < extent; ++c) {
        double v = xv[static_cast<std::size_t>((o * extent + c) * inner + i)];
        if (v > best) {  // strict: first index wins ties
          best = v;
          best_c = c;
        }
      }
      out[static_cast<std::size_t>(o * inner + i)] = best;
      arg[static_cast<std::size_t>(o * inner + i)] = best_c;
    }
  }
  if (argmax) *argmax = arg;
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("reduce_max", {x}, res, [xn, on, arg, outer, inner, extent] {
    xn->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        std::int64_t c = arg[static_cast<std::size_t>(o * inner + i)];
        xn->grad[static_cast<std::size_t>((o * extent + c) * inner + i)] +=
            on->grad[static_cast<std::size_t>(o * inner + i)];
      }
    }
  });
  return res;
}

namespace {

struct MatmulDims {
  std::int64_t batch = 1;  // number of stacked matrices
  std::int64_t m = 0, k = 0, n = 0;
  bool shared_rhs = false;  // b is a single [K,N] used by every batch
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  MatmulDims d;
  int ar = a.rank(), br = b.rank();
  d.m = a.shape()[static_cast<std::size_t>(ar - 2)];
  d.k = a.shape()[static_cast<std::size_t>(ar - 1)];
  std::int64_t bk = b.shape()[static_cast<std::size_t>(br - 2)];
  d.n = b.shape()[static_cast<std::size_t>(br - 1)];
  if (bk != d.k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  d.batch = 1;
  for (int i = 0; i < ar - 2; ++i) d.batch *= a.shape()[static_cast<std::size_t>(i)];
  if (br == 2) {
    d.shared_rhs = true;
  } else {
    if (ar != br) throw ShapeError("matmul: rank mismatch for batched operands");
    for (int i = 0; i < ar - 2; ++i) {
      if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)]) {
        throw ShapeError("matmul: leading (batch) dimensions disagree");
      }
    }
    d.shared_rhs = false;
  }
  return d;
}

void matmul_kernel(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    std::fill(orow, orow + n, 0.0);
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  MatmulDims d = matmul_dims(a, b);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(static_cast<int>(d.m));
  out_shape.push_back(static_cast<int>(d.n));
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.m * d.n));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::int64_t bb = 0; bb < d.batch; ++bb) {
    const double* ab = &av[static_cast<std::size_t>(bb * d.m * d.k)];
    const double* bbp = d.shared_rhs ? bv.data() : &bv[static_cast<std::size_t>(bb * d.k * d.n)];
    matmul_kernel(ab, bbp, &out[static_cast<std::size_t>(bb * d.m * d.n)], d.m, d.k, d.n);
  }
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({a, b}));
  auto an = a.node(), bn = b.node(), on = res.node();
  maybe_record("matmul", {a, b}, res, [an, bn, on, d] {
    const auto& g = on->grad;
    const auto& av2 = an->data;
    const auto& bv2 = bn->data;
    if (an->requires_grad) {
      an->ensure_grad();
      // da[i,p] += sum_j g[i,j] * b[p,j]
      for (std::int64_t bb = 0; bb < d.batch; ++bb) {
        const double* gb = &g[static_cast<std::size_t>(bb * d.m * d.n)];
        const double* bbp = d.shared_rhs ? bv2.data() : &bv2[static_cast<std::size_t>(bb * d.k * d.n)];
        double* dab = &an->grad[static_cast<std::size_t>(bb * d.m * d.k)];
        for (std::int64_t i = 0; i < d.m; ++i) {
          for (std::int64_t p = 0; p < d.k; ++p) {
            double s = 0.0;
            const double* grow = gb + i * d.n;
            const double* brow = bbp + p * d.n;
            for (std::int64_t j = 0; j < d.n; ++j) s += grow[j] * brow[j];
            dab[i * d.k + p] += s;
          }
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      // db[p,j] += sum_i a[i,p] * g[i,j]
      for (std::int64_t bb = 0; bb < d.batch; ++bb) {
        const double* gb = &g[static_cast<std::size_t>(bb * d.m * d.n)];
        const double* ab = &av2[static_cast<std::size_t>(bb * d.m * d.k)];
        double* dbb = d.shared_rhs ? bn->grad.data() : &bn->grad[static_cast<std::size_t>(bb * d.k * d.n)];
        for (std::int64_t i = 0; i < d.m; ++i) {
          const double* arow = ab + i * d.k;
          const double* grow = gb + i * d.n;
          for (std::int64_t p = 0; p < d.k; ++p) {
            double avp = arow[p];
            if (avp == 0.0) continue;
            double* dbrow = dbb + p * d.n;
            for (std::int64_t j = 0; j < d.n; ++j) dbrow[j] += avp * grow[j];
          }
        }
      }
    }
  });
  return res;
}

Tensor softmax(const Tensor& x, int axis) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      std::int64_t base = o * extent * inner + i;
      double mx = xv[static_cast<std::size_t>(base)];
      for (std::int64_t c = 1; c < extent; ++c) {
        mx = std::max(mx, xv[static_cast<std::size_t>(base + c * inner)]);
      }
      double denom = 0.0;
      for (std::int64_t c = 0; c < extent; ++c) {
        double e = std::exp(xv[static_cast<std::size_t>(base + c * inner)] - mx);
        out[static_cast<std::size_t>(base + c * inner)] = e;
        denom += e;
      }
      for (std::int64_t c = 0; c < extent; ++c) {
        out[static_cast<std::size_t>(base + c * inner)] /= denom;
      }
    }
  }
  Tensor res = raw(x.shape(), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("softmax", {x}, res, [xn, on, outer, inner, extent] {
    xn->ensure_grad();
    const auto& g = on->grad;
    const auto& y = on->data;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        std::int64_t base = o * extent * inner + i;
        double dot = 0.0;
        for (std::int64_t c = 0; c < extent; ++c) {
          auto k = static_cast<std::size_t>(base + c * inner);
          dot += g[k] * y[k];
        }
        for (std::int64_t c = 0; c < extent; ++c) {
          auto k = static_cast<std::size_t>(base + c * inner);
          xn->grad[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
  return res;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis) {
  int ax = normalize_axis(x, axis);
  int extent = x.shape()[static_cast<std::size_t>(ax)];
  if (gain.numel() != extent || bias.numel() != extent) {
    throw ShapeError("layer_norm: gain/bias length " + std::to_string(gain.numel()) + "/" +
                     std::to_string(bias.numel()) + " does not match channel dimension " +
                     std::to_string(extent));
  }
  constexpr double kEps = 1e-5;
  std::int64_t outer = outer_size(x.shape(), ax);
  std::int64_t inner = inner_size(x.shape(), ax);
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      std::int64_t base = o * extent * inner + i;
      double mean = 0.0;
      for (std::int64_t c = 0; c < extent; ++c) mean += xv[static_cast<std::size_t>(base + c * inner)];
      mean /= extent;
      double var = 0.0;
      for (std::int64_t c = 0; c < extent; ++c) {
        double dv = xv[static_cast<std::size_t>(base + c * inner)] - mean;
        var += dv * dv;
      }
      var /= extent;
      double inv = 1.0 / std::sqrt(var + kEps);
      for (std::int64_t c = 0; c < extent; ++c) {
        auto k = static_cast<std::size_t>(base + c * inner);
        double xh = (xv[k] - mean) * inv;
        out[k] = gv[static_cast<std::size_t>(c)] * xh + bv[static_cast<std::size_t>(c)];
      }
    }
  }
  Tensor res = raw(x.shape(), std::move(out), wants_grad({x, gain, bias}));
  auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = res.node();
  maybe_record("layer_norm", {x, gain, bias}, res, [xn, gn, bn, on, outer, inner, extent] {
    const auto& g = on->grad;
    const auto& xv2 = xn->data;
    const auto& gv2 = gn->data;
    constexpr double kEps2 = 1e-5;
    if (xn->requires_grad) xn->ensure_grad();
    if (gn->requires_grad) gn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    std::vector<double> xh(static_cast<std::size_t>(extent));
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        std::int64_t base = o * extent * inner + i;
        double mean = 0.0;
        for (std::int64_t c = 0; c < extent; ++c) mean += xv2[static_cast<std::size_t>(base + c * inner)];
        mean /= extent;
        double var = 0.0;
        for (std::int64_t c = 0; c < extent; ++c) {
          double dv = xv2[static_cast<std::size_t>(base + c * inner)] - mean;
          var += dv * dv;
        }
        var /= extent;
        double inv = 1.0 / std::sqrt(var + kEps2);
        for (std::int64_t c = 0; c < extent; ++c) {
          xh[static_cast<std::size_t>(c)] = (xv2[static_cast<std::size_t>(base + c * inner)] - mean) * inv;
        }
        if (gn->requires_grad || bn->requires_grad) {
          for (std::int64_t c = 0; c < extent; ++c) {
            auto k = static_cast<std::size_t>(base + c * inner);
            if (gn->requires_grad) gn->grad[static_cast<std::size_t>(c)] += g[k] * xh[static_cast<std::size_t>(c)];
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += g[k];
          }
        }
        if (xn->requires_grad) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::int64_t c = 0; c < extent; ++c) {
            auto k = static_cast<std::size_t>(base + c * inner);
            double dxh = g[k] * gv2[static_cast<std::size_t>(c)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[static_cast<std::size_t>(c)];
          }
          mean_dxh /= extent;
          mean_dxh_xh /= extent;
          for (std::int64_t c = 0; c < extent; ++c) {
            auto k = static_cast<std::size_t>(base + c * inner);
            double dxh = g[k] * gv2[static_cast<std::size_t>(c)];
            xn->grad[k] += inv * (dxh - mean_dxh - xh[static_cast<std::size_t>(c)] * mean_dxh_xh);
          }
        }
      }
    }
  });
  return res;
}

namespace {

struct ConvDims {
  std::int64_t B, C, H, W, O, kh, kw, OH, OW;
  int stride, padding;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: x must be [B,C,H,W] and w [O,C,kh,kw], got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  ConvDims d{};
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.O = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.padding = padding;
  if (w.dim(1) != d.C) {
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(d.C) +
                     " but kernel expects " + std::to_string(w.dim(1)));
  }
  if (b.numel() != d.O) throw ShapeError("conv2d: bias length must equal output channels");
  if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  d.OH = (d.H + 2 * padding - d.kh) / stride + 1;
  d.OW = (d.W + 2 * padding - d.kw) / stride + 1;
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  ConvDims d = conv_dims(x, w, b, stride, padding);
  std::vector<double> out(static_cast<std::size_t>(d.B * d.O * d.OH * d.OW));
  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
  for (std::int64_t bb = 0; bb < d.B; ++bb) {
    for (std::int64_t o = 0; o < d.O; ++o) {
      double* outp = &out[static_cast<std::size_t>(((bb * d.O) + o) * d.OH * d.OW)];
      std::fill(outp, outp + d.OH * d.OW, bv[static_cast<std::size_t>(o)]);
      for (std::int64_t c = 0; c < d.C; ++c) {
        const double* xp = &xv[static_cast<std::size_t>(((bb * d.C) + c) * d.H * d.W)];
        const double* wp = &wv[static_cast<std::size_t>(((o * d.C) + c) * d.kh * d.kw)];
        for (std::int64_t i = 0; i < d.kh; ++i) {
          for (std::int64_t j = 0; j < d.kw; ++j) {
            double wval = wp[i * d.kw + j];
            if (wval == 0.0) continue;
            for (std::int64_t oh = 0; oh < d.OH; ++oh) {
              std::int64_t ih = oh * d.stride - d.padding + i;
              if (ih < 0 || ih >= d.H) continue;
              const double* xrow = xp + ih * d.W;
              double* orow = outp + oh * d.OW;
              for (std::int64_t ow = 0; ow < d.OW; ++ow) {
                std::int64_t iw = ow * d.stride - d.padding + j;
                if (iw < 0 || iw >= d.W) continue;
                orow[ow] += wval * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  Shape out_shape{static_cast<int>(d.B), static_cast<int>(d.O), static_cast<int>(d.OH),
                  static_cast<int>(d.OW)};
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({x, w, b}));
  auto xn = x.node(), wn = w.node(), bn = b.node(), on = res.node();
  maybe_record("conv2d", {x, w, b}, res, [xn, wn, bn, on, d] {
    const auto& g = on->grad;
    const auto& xv2 = xn->data;
    const auto& wv2 = wn->data;
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t bb = 0; bb < d.B; ++bb) {
        for (std::int64_t o = 0; o < d.O; ++o) {
          const double* gp = &g[static_cast<std::size_t>(((bb * d.O) + o) * d.OH * d.OW)];
          double s = 0.0;
          for (std::int64_t k = 0; k < d.OH * d.OW; ++k) s += gp[k];
          bn->grad[static_cast<std::size_t>(o)] += s;
        }
      }
    }
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    if (!xn->requires_grad && !wn->requires_grad) return;
    for (std::int64_t bb = 0; bb < d.B; ++bb) {
      for (std::int64_t o = 0; o < d.O; ++o) {
        const double* gp = &g[static_cast<std::size_t>(((bb * d.O) + o) * d.OH * d.OW)];
        for (std::int64_t c = 0; c < d.C; ++c) {
          const double* xp = &xv2[static_cast<std::size_t>(((bb * d.C) + c) * d.H * d.W)];
          const double* wp = &wv2[static_cast<std::size_t>(((o * d.C) + c) * d.kh * d.kw)];
          double* dxp = xn->requires_grad
                            ? &xn->grad[static_cast<std::size_t>(((bb * d.C) + c) * d.H * d.W)]
                            : nullptr;
          double* dwp = wn->requires_grad
                            ? &wn->grad[static_cast<std::size_t>(((o * d.C) + c) * d.kh * d.kw)]
                            : nullptr;
          for (std::int64_t i = 0; i < d.kh; ++i) {
            for (std::int64_t j = 0; j < d.kw; ++j) {
              double wval = wp[i * d.kw + j];
              double dw_acc = 0.0;
              for (std::int64_t oh = 0; oh < d.OH; ++oh) {
                std::int64_t ih = oh * d.stride - d.padding + i;
                if (ih < 0 || ih >= d.H) continue;
                const double* grow = gp + oh * d.OW;
                const double* xrow = xp + ih * d.W;
                double* dxrow = dxp ? dxp + ih * d.W : nullptr;
                for (std::int64_t ow = 0; ow < d.OW; ++ow) {
                  std::int64_t iw = ow * d.stride - d.padding + j;
                  if (iw < 0 || iw >= d.W) continue;
                  double gv = grow[ow];
                  if (dxrow) dxrow[iw] += gv * wval;
                  dw_acc += gv * xrow[iw];
                }
              }
              if (dwp) dwp[i * d.kw + j] += dw_acc;
            }
          }
        }
      }
    }
  });
  return res;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("upsample_nearest: expected [B,C,H,W]");
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::int64_t OH = H * factor, OW = W * factor;
  std::vector<double> out(static_cast<std::size_t>(B * C * OH * OW));
  const auto& xv = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = &xv[static_cast<std::size_t>(bc * H * W)];
    double* dst = &out[static_cast<std::size_t>(bc * OH * OW)];
    for (std::int64_t i = 0; i < OH; ++i) {
      const double* srow = src + (i / factor) * W;
      double* drow = dst + i * OW;
      for (std::int64_t j = 0; j < OW; ++j) drow[j] = srow[j / factor];
    }
  }
  Shape out_shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH),
                  static_cast<int>(OW)};
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("upsample_nearest", {x}, res, [xn, on, B, C, H, W, factor] {
    xn->ensure_grad();
    std::int64_t OH = H * factor, OW = W * factor;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const double* src = &on->grad[static_cast<std::size_t>(bc * OH * OW)];
      double* dst = &xn->grad[static_cast<std::size_t>(bc * H * W)];
      for (std::int64_t i = 0; i < OH; ++i) {
        const double* srow = src + i * OW;
        double* drow = dst + (i / factor) * W;
        for (std::int64_t j = 0; j < OW; ++j) drow[j / factor] += srow[j];
      }
    }
  });
  return res;
}

namespace {

struct LerpTap {
  std::int64_t lo, hi;
  double w_lo, w_hi;
};

std::vector<LerpTap> bilinear_taps(std::int64_t out_n, std::int64_t in_n, int factor) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) {
    double src = (static_cast<double>(i) + 0.5) / factor - 0.5;
    double clamped = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
    std::int64_t lo = static_cast<std::int64_t>(std::floor(clamped));
    std::int64_t hi = std::min(lo + 1, in_n - 1);
    double frac = clamped - static_cast<double>(lo);
    taps[static_cast<std::size_t>(i)] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int factor) {
  if (factor < 1) throw ShapeError("resize_bilinear: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("resize_bilinear: expected [B,C,H,W]");
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::int64_t OH = H * factor, OW = W * factor;
  auto ytaps = bilinear_taps(OH, H, factor);
  auto xtaps = bilinear_taps(OW, W, factor);
  std::vector<double> out(static_cast<std::size_t>(B * C * OH * OW));
  const auto& xv = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = &xv[static_cast<std::size_t>(bc * H * W)];
    double* dst = &out[static_cast<std::size_t>(bc * OH * OW)];
    for (std::int64_t i = 0; i < OH; ++i) {
      const auto& ty = ytaps[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < OW; ++j) {
        const auto& tx = xtaps[static_cast<std::size_t>(j)];
        dst[i * OW + j] = ty.w_lo * (tx.w_lo * src[ty.lo * W + tx.lo] + tx.w_hi * src[ty.lo * W + tx.hi]) +
                          ty.w_hi * (tx.w_lo * src[ty.hi * W + tx.lo] + tx.w_hi * src[ty.hi * W + tx.hi]);
      }
    }
  }
  Shape out_shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH),
                  static_cast<int>(OW)};
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("resize_bilinear", {x}, res, [xn, on, B, C, H, W, ytaps, xtaps] {
    xn->ensure_grad();
    std::int64_t OH = static_cast<std::int64_t>(ytaps.size());
    std::int64_t OW = static_cast<std::int64_t>(xtaps.size());
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const double* src = &on->grad[static_cast<std::size_t>(bc * OH * OW)];
      double* dst = &xn->grad[static_cast<std::size_t>(bc * H * W)];
      for (std::int64_t i = 0; i < OH; ++i) {
        const auto& ty = ytaps[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < OW; ++j) {
          const auto& tx = xtaps[static_cast<std::size_t>(j)];
          double gv = src[i * OW + j];
          dst[ty.lo * W + tx.lo] += gv * ty.w_lo * tx.w_lo;
          dst[ty.lo * W + tx.hi] += gv * ty.w_lo * tx.w_hi;
          dst[ty.hi * W + tx.lo] += gv * ty.w_hi * tx.w_lo;
          dst[ty.hi * W + tx.hi] += gv * ty.w_hi * tx.w_hi;
        }
      }
    }
  });
  return res;
}

Tensor resize_area(const Tensor& x, int factor) {
  if (factor < 1) throw ShapeError("resize_area: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("resize_area: expected [B,C,H,W]");
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("resize_area: spatial size must be divisible by factor " + std::to_string(factor));
  }
  std::int64_t OH = H / factor, OW = W / factor;
  double inv = 1.0 / (static_cast<double>(factor) * factor);
  std::vector<double> out(static_cast<std::size_t>(B * C * OH * OW), 0.0);
  const auto& xv = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = &xv[static_cast<std::size_t>(bc * H * W)];
    double* dst = &out[static_cast<std::size_t>(bc * OH * OW)];
    for (std::int64_t i = 0; i < H; ++i) {
      const double* srow = src + i * W;
      double* drow = dst + (i / factor) * OW;
      for (std::int64_t j = 0; j < W; ++j) drow[j / factor] += srow[j];
    }
    for (std::int64_t k = 0; k < OH * OW; ++k) dst[k] *= inv;
  }
  Shape out_shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH),
                  static_cast<int>(OW)};
  Tensor res = raw(std::move(out_shape), std::move(out), x.requires_grad());
  auto xn = x.node(), on = res.node();
  maybe_record("resize_area", {x}, res, [xn, on, B, C, H, W, factor, inv] {
    xn->ensure_grad();
    std::int64_t OH = H / factor, OW = W / factor;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const double* src = &on->grad[static_cast<std::size_t>(bc * OH * OW)];
      double* dst = &xn->grad[static_cast<std::size_t>(bc * H * W)];
      for (std::int64_t i = 0; i < H; ++i) {
        const double* srow = src + (i / factor) * OW;
        double* drow = dst + i * W;
        for (std::int64_t j = 0; j < W; ++j) drow[j] += srow[j / factor] * inv;
      }
    }
  });
  return res;
}

Tensor pair_softmax(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("pair_softmax: shapes must match, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.push_back(2);
  std::vector<double> out(static_cast<std::size_t>(a.numel() * 2));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    // The smaller weight is computed directly as e/(1+e) with e <= 1; the
    // larger is its exact complement, so the pair always sums to 1.0 and the
    // computation is symmetric under swapping the operands.
    double d = bv[i] - av[i];
    double wa, wb;
    if (d <= 0.0) {
      double e = std::exp(d);
      wb = e / (1.0 + e);
      wa = 1.0 - wb;
    } else {
      double e = std::exp(-d);
      wa = e / (1.0 + e);
      wb = 1.0 - wa;
    }
    out[2 * i] = wa;
    out[2 * i + 1] = wb;
  }
  Tensor res = raw(std::move(out_shape), std::move(out), wants_grad({a, b}));
  auto an = a.node(), bn = b.node(), on = res.node();
  maybe_record("pair_softmax", {a, b}, res, [an, bn, on] {
    const auto& g = on->grad;
    const auto& y = on->data;
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::size_t i = 0; i < y.size() / 2; ++i) {
      double wa = y[2 * i], wb = y[2 * i + 1];
      double common = (g[2 * i] - g[2 * i + 1]) * wa * wb;
      if (an->requires_grad) an->grad[i] += common;
      if (bn->requires_grad) bn->grad[i] -= common;
    }
  });
  return res;
}

Tensor tokens_to_grid(const Tensor& tokens, int grid_h, int grid_w) {
  if (tokens.rank() != 3) throw ShapeError("tokens_to_grid: expected [B,N,C]");
  if (tokens.dim(1) != grid_h * grid_w) {
    throw ShapeError("tokens_to_grid: N=" + std::to_string(tokens.dim(1)) + " does not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  Tensor t = transpose_last(tokens);  // [B,C,N]
  return reshape(t, {tokens.dim(0), tokens.dim(2), grid_h, grid_w});
}

Tensor grid_to_tokens(const Tensor& grid) {
  if (grid.rank() != 4) throw ShapeError("grid_to_tokens: expected [B,C,H,W]");
  Tensor flat = reshape(grid, {grid.dim(0), grid.dim(1), grid.dim(2) * grid.dim(3)});
  return transpose_last(flat);  // [B,N,C]
}

}  // namespace tfill
