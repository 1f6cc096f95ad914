#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfill {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TapeState;

/// One dense node in the computation graph. Values are always double
/// precision, row-major.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::weak_ptr<TapeState> tape;  // tape that produced this node, if any

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

/// Value-style handle to a shared tensor node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  // Validates finiteness of every element; NaN/Inf is rejected here
  // unconditionally.
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  const std::vector<double>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  double item() const;
  double at(const std::vector<int>& index) const;

  /// Deep copy of values; result is a leaf with requires_grad = false.
  Tensor detach_copy() const;

  void zero_grad() {
    if (node_) node_->grad.assign(node_->data.size(), 0.0);
  }

  NodePtr node() const { return node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

std::int64_t flat_index(const Shape& shape, const std::vector<int>& index);

struct TapeEntry {
  std::vector<NodePtr> inputs;
  NodePtr output;
  std::function<void()> backward;
  const char* op = "";
};

struct TapeState {
  std::vector<TapeEntry> entries;
};

/// Records operations in execution order (inputs always precede their
/// consumers). One tape per training step / probe; no concurrent mutation.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<NodePtr> inputs, NodePtr output,
              std::function<void()> backward, const char* op);

  std::size_t size() const { return state_->entries.size(); }
  const std::shared_ptr<TapeState>& state() const { return state_; }

  /// Reverse sweep from `loss` (must be scalar and produced on this tape or a
  /// leaf). Seeds d(loss)/d(loss) = 1 and accumulates into every
  /// requires_grad leaf; fan-out adds.
  void run_backward(const Tensor& loss);

 private:
  std::shared_ptr<TapeState> state_;
};

/// RAII scope making a fresh tape active for the current thread.
class TapeScope {
 public:
  TapeScope() : tape_() {}
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
};

/// Backpropagates from a scalar loss through the tape that produced it.
/// Errors: non-scalar loss, detached tensor (no live tape).
void backward(const Tensor& loss);

/// Throws ValueError if any element is non-finite. Creation-time checks call
/// this always; per-op checks only in debug builds.
void check_finite(const std::vector<double>& data, const char* what);

#ifndef NDEBUG
#define TFILL_DEBUG_CHECK_FINITE(node, opname) \
  ::tfill::check_finite((node)->data, opname)
#else
#define TFILL_DEBUG_CHECK_FINITE(node, opname) ((void)0)
#endif

}  // namespace tfill
