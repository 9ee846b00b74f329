#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stainr {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GraphError : std::logic_error {
  using std::logic_error::logic_error;
};

// Finite-input checking on every forward op. Defaults to on in debug builds.
void set_debug_checks(bool enabled);
bool debug_checks();

template <typename T>
struct TensorNode {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

  Shape shape;
  Array data;
  Array grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;

  Array& grad_buffer() {
    if (grad.size() != data.size()) grad = Array::Zero(data.size());
    return grad;
  }
};

/// Dense row-major array with reverse-mode gradient support.
///
/// A Tensor is a cheap handle; copies share storage. Operations never alias:
/// every op allocates a fresh result.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Array = typename TensorNode<T>::Array;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::initializer_list<T> values);
  static Tensor scalar(T value) { return full({}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return node_->data.size(); }

  Array& data() { return node_->data; }
  const Array& data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && numel() > 0; }
  const Array& grad() const { return node_->grad; }
  Array& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  /// Fresh leaf holding a copy of the values; no gradient history.
  Tensor detach() const;
  /// Same values cast to another scalar type, as a leaf with the same requires_grad flag.
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape(), data().template cast<U>(), requires_grad());
    return out;
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of differentiable operations for one execution context.
///
/// Ops append while gradient recording is enabled; backward() replays the
/// record in reverse. Each thread owns its own tape per scalar type.
template <typename T>
class GradTape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  struct Entry {
    NodePtr output;
    std::vector<NodePtr> inputs;
    std::function<void(TensorNode<T>& out)> backward;
  };

  static GradTape& current();

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

bool grad_enabled();

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse-mode accumulation from a scalar loss on the current thread's tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  GradTape<T>::current().backward(loss);
}

namespace detail {

void set_grad_enabled(bool on);

template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

/// Wraps a freshly computed result and records its backward rule when any
/// input participates in gradient flow.
template <typename T, typename BackFn>
Tensor<T> make_result(Shape shape, typename Tensor<T>::Array data,
                      std::initializer_list<Tensor<T>> inputs, BackFn&& back) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node()->requires_grad = true;
  out.node()->leaf = false;
  typename GradTape<T>::Entry entry;
  entry.output = out.node();
  for (const auto& in : inputs)
    if (in.defined()) entry.inputs.push_back(in.node());
  entry.backward = std::forward<BackFn>(back);
  GradTape<T>::current().record(std::move(entry));
  return out;
}

// Gradient buffer of an input, or nullptr when it does not need one.
template <typename T>
typename TensorNode<T>::Array* grad_slot(const std::shared_ptr<TensorNode<T>>& node) {
  if (!node || !node->requires_grad) return nullptr;
  return &node->grad_buffer();
}

}  // namespace detail
}  // namespace stainr
