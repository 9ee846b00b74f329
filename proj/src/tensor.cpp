#include "stainr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace stainr {

namespace {
thread_local bool tl_grad_enabled = true;
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

namespace detail {
void set_grad_enabled(bool on) { tl_grad_enabled = on; }

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.defined()) return;
  if (!t.data().isFinite().all())
    throw NumericError(std::string(op) + ": non-finite input of shape " + shape_str(t.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<TensorNode<T>>()) {
  node_->data = Array::Zero(shape_numel(shape));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Array data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  t.data().setConstant(value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::initializer_list<T> values) {
  Array a(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), a.data());
  return Tensor(std::move(shape), std::move(a));
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int n = ndim();
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  return node_->shape[a];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->leaf) throw GraphError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), data());
}

template <typename T>
GradTape<T>& GradTape<T>::current() {
  thread_local GradTape tape;
  return tape;
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw GraphError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  const auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                               [&](const Entry& e) { return e.output == loss.node(); });
  if (it == entries_.rend())
    throw GraphError("backward(): loss was not produced on the current tape (detached graph)");

  // Stale gradients of intermediates from an earlier replay must not leak in.
  for (auto& e : entries_) e.output->grad.resize(0);
  loss.node()->grad_buffer().setOnes();

  for (auto e = it; e != entries_.rend(); ++e) {
    if (e->output->grad.size() == 0) continue;
    e->backward(*e->output);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void detail::check_finite(const Tensor<float>&, const char*);
template void detail::check_finite(const Tensor<double>&, const char*);

}  // namespace stainr
