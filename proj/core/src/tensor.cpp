#include "tfill/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace tfill {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_finite(const std::vector<double>& data, const char* what) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw ValueError(std::string("non-finite value in ") + what);
    }
  }
}

namespace {
Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor::wrap(std::move(n));
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                   requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw ValueError("non-finite fill value");
  auto n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                   requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(data.size()) != n) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  check_finite(data, "tensor creation");
  return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

std::int64_t flat_index(const Shape& shape, const std::vector<int>& index) {
  if (index.size() != shape.size()) throw ShapeError("index rank mismatch");
  std::int64_t flat = 0;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (index[k] < 0 || index[k] >= shape[k]) throw ShapeError("index out of bounds");
    flat = flat * shape[k] + index[k];
  }
  return flat;
}

double Tensor::at(const std::vector<int>& index) const {
  return node_->data[static_cast<std::size_t>(flat_index(shape(), index))];
}

Tensor Tensor::detach_copy() const {
  return make_leaf(node_->shape, node_->data, false);
}

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

Tape::Tape() : state_(std::make_shared<TapeState>()) { g_tape_stack.push_back(this); }

Tape::~Tape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

void Tape::record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward,
                  const char* op) {
  output->tape = state_;
  state_->entries.push_back(TapeEntry{std::move(inputs), std::move(output), std::move(backward), op});
}

void Tape::run_backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  NodePtr root = loss.node();
  root->ensure_grad();
  root->grad[0] = 1.0;

  std::unordered_set<TensorNode*> needed;
  needed.insert(root.get());
  for (auto it = state_->entries.rbegin(); it != state_->entries.rend(); ++it) {
    if (!needed.count(it->output.get())) continue;
    it->backward();
    for (const auto& in : it->inputs) {
      if (in->requires_grad) needed.insert(in.get());
    }
  }
}

void backward(const Tensor& loss) {
  NodePtr n = loss.node();
  if (!n) throw ValueError("backward() on an empty tensor");
  auto tape_state = n->tape.lock();
  if (!tape_state) {
    if (n->requires_grad && Tape::active() != nullptr) {
      // A bare leaf used directly as the loss: d(loss)/d(loss) = 1.
      Tape::active()->run_backward(loss);
      return;
    }
    throw ValueError("backward() on a detached tensor (not produced on a live tape)");
  }
  Tape* t = Tape::active();
  if (t == nullptr || t->state() != tape_state) {
    throw ValueError("backward() loss belongs to a tape that is not active");
  }
  t->run_backward(loss);
}

}  // namespace tfill
