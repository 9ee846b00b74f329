#include "stainr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace stainr {

namespace {

template <typename T>
using Array = typename Tensor<T>::Array;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

template <typename T>
void check_inputs(const char* op, std::initializer_list<Tensor<T>> inputs) {
  if (!debug_checks()) return;
  for (const auto& t : inputs) detail::check_finite(t, op);
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

int normalize_axis(int axis, int ndim, const char* op) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim)
    shape_fail(op, "axis " + std::to_string(axis) + " invalid for rank " + std::to_string(ndim));
  return a;
}

// Views a shape as [outer, extent, inner] around `axis`.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit out;
  for (int i = 0; i < axis; ++i) out.outer *= s[i];
  out.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

// Number of times `b` repeats across a's leading dimension (1 when shapes match).
template <typename T>
Index broadcast_reps(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return 1;
  if (a.ndim() == b.ndim() + 1 &&
      std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin()))
    return a.dim(0);
  shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
Array<T> sum_over_reps(const Array<T>& g, Index reps, Index n) {
  if (reps == 1) return g;
  Array<T> out = Array<T>::Zero(n);
  for (Index r = 0; r < reps; ++r) out += g.segment(r * n, n);
  return out;
}

template <typename T, typename Fwd>
Array<T> broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, Index reps, Fwd&& f) {
  const Index n = b.numel();
  Array<T> out(a.numel());
  for (Index r = 0; r < reps; ++r) out.segment(r * n, n) = f(a.data().segment(r * n, n), b.data());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("add", {a, b});
  const Index reps = broadcast_reps(a, b, "add");
  auto out = broadcast_apply(a, b, reps, [](const auto& x, const auto& y) { return x + y; });
  auto an = a.node(), bn = b.node();
  const Index n = b.numel();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b},
                                [an, bn, reps, n](TensorNode<T>& o) {
                                  if (auto* ga = detail::grad_slot(an)) *ga += o.grad;
                                  if (auto* gb = detail::grad_slot(bn))
                                    *gb += sum_over_reps<T>(o.grad, reps, n);
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("sub", {a, b});
  const Index reps = broadcast_reps(a, b, "sub");
  auto out = broadcast_apply(a, b, reps, [](const auto& x, const auto& y) { return x - y; });
  auto an = a.node(), bn = b.node();
  const Index n = b.numel();
  return detail::make_result<T>(a.shape(), std::move(out), {a, b},
                                [an, bn, reps, n](TensorNode<T>& o) {
                                  if (auto* ga = detail::grad_slot(an)) *ga += o.grad;
                                  if (auto* gb = detail::grad_slot(bn))
                                    *gb -= sum_over_reps<T>(o.grad, reps, n);
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("mul", {a, b});
  const Index reps = broadcast_reps(a, b, "mul");
  auto out = broadcast_apply(a, b, reps, [](const auto& x, const auto& y) { return x * y; });
  auto an = a.node(), bn = b.node();
  const Index n = b.numel();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bn, reps, n](TensorNode<T>& o) {
        if (auto* ga = detail::grad_slot(an))
          for (Index r = 0; r < reps; ++r) ga->segment(r * n, n) += o.grad.segment(r * n, n) * bn->data;
        if (auto* gb = detail::grad_slot(bn))
          for (Index r = 0; r < reps; ++r) *gb += o.grad.segment(r * n, n) * an->data.segment(r * n, n);
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("div", {a, b});
  const Index reps = broadcast_reps(a, b, "div");
  auto out = broadcast_apply(a, b, reps, [](const auto& x, const auto& y) { return x / y; });
  auto an = a.node(), bn = b.node();
  const Index n = b.numel();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bn, reps, n](TensorNode<T>& o) {
        if (auto* ga = detail::grad_slot(an))
          for (Index r = 0; r < reps; ++r) ga->segment(r * n, n) += o.grad.segment(r * n, n) / bn->data;
        if (auto* gb = detail::grad_slot(bn))
          for (Index r = 0; r < reps; ++r)
            *gb -= o.grad.segment(r * n, n) * an->data.segment(r * n, n) / bn->data.square();
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  check_inputs<T>("scale", {a});
  auto an = a.node();
  return detail::make_result<T>(a.shape(), a.data() * factor, {a},
                                [an, factor](TensorNode<T>& o) {
                                  if (auto* ga = detail::grad_slot(an)) *ga += o.grad * factor;
                                });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  check_inputs<T>("add_scalar", {a});
  auto an = a.node();
  return detail::make_result<T>(a.shape(), a.data() + value, {a}, [an](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad;
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  check_inputs<T>("sigmoid", {a});
  Array<T> y = (T(1) + (-a.data()).exp()).inverse();
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(y), {a}, [an](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad * o.data * (T(1) - o.data);
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  check_inputs<T>("gelu", {a});
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const T* x = a.ptr();
  auto cdf = std::make_shared<Array<T>>(a.numel());
  for (Index i = 0; i < a.numel(); ++i) (*cdf)[i] = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
  Array<T> y = a.data() * (*cdf);
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(y), {a}, [an, cdf](TensorNode<T>& o) {
    auto* ga = detail::grad_slot(an);
    if (!ga) return;
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    const auto& xs = an->data;
    *ga += o.grad * (*cdf + xs * inv_sqrt_2pi * (T(-0.5) * xs.square()).exp());
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  check_inputs<T>("exp", {a});
  auto an = a.node();
  return detail::make_result<T>(a.shape(), a.data().exp(), {a}, [an](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad * o.data;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  check_inputs<T>("sum", {a});
  Array<T> out(1);
  out[0] = a.data().sum();
  auto an = a.node();
  return detail::make_result<T>({}, std::move(out), {a}, [an](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  check_inputs<T>("mean", {a});
  if (a.numel() == 0) shape_fail("mean", "empty tensor");
  Array<T> out(1);
  out[0] = a.data().mean();
  auto an = a.node();
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_result<T>({}, std::move(out), {a}, [an, inv](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and reshaping

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("matmul", {a, b});
  const bool batched = a.ndim() == 3;
  if (!(a.ndim() == 2 || a.ndim() == 3) || !(b.ndim() == 2 || b.ndim() == 3) ||
      (a.ndim() == 2 && b.ndim() == 3))
    shape_fail("matmul", "unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index batch = batched ? a.dim(0) : 1;
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const bool shared_rhs = b.ndim() == 2;
  if (b.dim(-2) != k || (!shared_rhs && b.dim(0) != batch))
    shape_fail("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  Array<T> out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    ConstMatMap<T> A(a.ptr() + i * m * k, m, k);
    ConstMatMap<T> B(b.ptr() + (shared_rhs ? 0 : i * k * n), k, n);
    MatMap<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {a, b},
      [an, bn, batch, m, k, n, shared_rhs](TensorNode<T>& o) {
        auto* ga = detail::grad_slot(an);
        auto* gb = detail::grad_slot(bn);
        for (Index i = 0; i < batch; ++i) {
          ConstMatMap<T> G(o.grad.data() + i * m * n, m, n);
          if (ga) {
            ConstMatMap<T> B(bn->data.data() + (shared_rhs ? 0 : i * k * n), k, n);
            MatMap<T>(ga->data() + i * m * k, m, k).noalias() += G * B.transpose();
          }
          if (gb) {
            ConstMatMap<T> A(an->data.data() + i * m * k, m, k);
            MatMap<T>(gb->data() + (shared_rhs ? 0 : i * k * n), k, n).noalias() += A.transpose() * G;
          }
        }
      });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.ndim() < 2) shape_fail("transpose_last2", "rank < 2: " + shape_str(a.shape()));
  const Index r = a.dim(-2), c = a.dim(-1);
  const Index batch = a.numel() / std::max<Index>(r * c, 1);
  Array<T> out(a.numel());
  for (Index i = 0; i < batch; ++i)
    MatMap<T>(out.data() + i * r * c, c, r) = ConstMatMap<T>(a.ptr() + i * r * c, r, c).transpose();
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto an = a.node();
  return detail::make_result<T>(std::move(shape), std::move(out), {a},
                                [an, batch, r, c](TensorNode<T>& o) {
                                  auto* ga = detail::grad_slot(an);
                                  if (!ga) return;
                                  for (Index i = 0; i < batch; ++i)
                                    MatMap<T>(ga->data() + i * r * c, r, c) +=
                                        ConstMatMap<T>(o.grad.data() + i * r * c, c, r).transpose();
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_fail("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto an = a.node();
  return detail::make_result<T>(std::move(shape), a.data(), {a}, [an](TensorNode<T>& o) {
    if (auto* ga = detail::grad_slot(an)) *ga += o.grad;
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, Index start, Index count) {
  if (a.ndim() < 2) shape_fail("slice_channels", "rank < 2");
  const Index n = a.dim(0), c = a.dim(1), inner = a.numel() / std::max<Index>(n * c, 1);
  if (start < 0 || count < 0 || start + count > c)
    shape_fail("slice_channels", "range [" + std::to_string(start) + "," +
                                     std::to_string(start + count) + ") outside " + shape_str(a.shape()));
  Array<T> out(n * count * inner);
  for (Index i = 0; i < n; ++i)
    out.segment(i * count * inner, count * inner) = a.data().segment((i * c + start) * inner, count * inner);
  Shape shape = a.shape();
  shape[1] = count;
  auto an = a.node();
  return detail::make_result<T>(std::move(shape), std::move(out), {a},
                                [an, n, c, inner, start, count](TensorNode<T>& o) {
                                  auto* ga = detail::grad_slot(an);
                                  if (!ga) return;
                                  for (Index i = 0; i < n; ++i)
                                    ga->segment((i * c + start) * inner, count * inner) +=
                                        o.grad.segment(i * count * inner, count * inner);
                                });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || a.ndim() != b.ndim() || a.dim(0) != b.dim(0) ||
      !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2))
    shape_fail("concat_channels", "incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const Index inner = a.numel() / std::max<Index>(n * ca, 1);
  Array<T> out(a.numel() + b.numel());
  for (Index i = 0; i < n; ++i) {
    out.segment(i * (ca + cb) * inner, ca * inner) = a.data().segment(i * ca * inner, ca * inner);
    out.segment((i * (ca + cb) + ca) * inner, cb * inner) = b.data().segment(i * cb * inner, cb * inner);
  }
  Shape shape = a.shape();
  shape[1] = ca + cb;
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(std::move(shape), std::move(out), {a, b},
                                [an, bn, n, ca, cb, inner](TensorNode<T>& o) {
                                  auto* ga = detail::grad_slot(an);
                                  auto* gb = detail::grad_slot(bn);
                                  for (Index i = 0; i < n; ++i) {
                                    if (ga)
                                      ga->segment(i * ca * inner, ca * inner) +=
                                          o.grad.segment(i * (ca + cb) * inner, ca * inner);
                                    if (gb)
                                      gb->segment(i * cb * inner, cb * inner) +=
                                          o.grad.segment((i * (ca + cb) + ca) * inner, cb * inner);
                                  }
                                });
}

template <typename T>
Tensor<T> scale_slices(const Tensor<T>& a, const Tensor<T>& factors) {
  check_inputs<T>("scale_slices", {a, factors});
  const Index groups = factors.numel();
  if (a.ndim() < 1 || groups == 0 || a.dim(0) % groups != 0)
    shape_fail("scale_slices", "leading dim of " + shape_str(a.shape()) + " not a multiple of " +
                                   std::to_string(groups));
  const Index slices = a.dim(0), inner = a.numel() / std::max<Index>(slices, 1);
  Array<T> out(a.numel());
  for (Index s = 0; s < slices; ++s)
    out.segment(s * inner, inner) = a.data().segment(s * inner, inner) * factors.data()[s % groups];
  auto an = a.node(), fn = factors.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a, factors},
                                [an, fn, slices, inner, groups](TensorNode<T>& o) {
                                  auto* ga = detail::grad_slot(an);
                                  auto* gf = detail::grad_slot(fn);
                                  for (Index s = 0; s < slices; ++s) {
                                    const auto g = o.grad.segment(s * inner, inner);
                                    if (ga) ga->segment(s * inner, inner) += g * fn->data[s % groups];
                                    if (gf) (*gf)[s % groups] += (g * an->data.segment(s * inner, inner)).sum();
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeom {
  Index batch, cin, h, w, cout, k, stride, pad, oh, ow;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const Index p = g.oh * g.ow;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.k; ++ki)
      for (Index kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * p;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride + ki - g.pad;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride + kj - g.pad;
            row[oy * g.ow + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const Index p = g.oh * g.ow;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.k; ++ki)
      for (Index kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * p;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride + ki - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride + kj - g.pad;
            if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad) {
  check_inputs<T>("conv2d", {x, weight, bias});
  if (x.ndim() != 4 || weight.ndim() != 4)
    shape_fail("conv2d", "expected 4-D input and weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(weight.shape()));
  const Index k = weight.dim(2);
  if (weight.dim(3) != k || (k != 1 && k != 3))
    shape_fail("conv2d", "kernel must be 1x1 or 3x3, got " + shape_str(weight.shape()));
  if (weight.dim(1) != x.dim(1))
    shape_fail("conv2d", "channel mismatch: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
  if (stride < 1 || pad < 0) shape_fail("conv2d", "invalid stride/padding");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), k, stride, pad, 0, 0};
  if (g.h + 2 * pad < k || g.w + 2 * pad < k) shape_fail("conv2d", "input smaller than kernel");
  if ((g.h + 2 * pad - k) % stride != 0 || (g.w + 2 * pad - k) % stride != 0)
    shape_fail("conv2d", "non-integral output size for input " + shape_str(x.shape()) +
                             " stride " + std::to_string(stride) + " pad " + std::to_string(pad));
  g.oh = (g.h + 2 * pad - k) / stride + 1;
  g.ow = (g.w + 2 * pad - k) / stride + 1;
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout))
    shape_fail("conv2d", "bias shape " + shape_str(bias.shape()) + " for " + std::to_string(g.cout) + " outputs");

  const bool direct = k == 1 && stride == 1 && pad == 0;
  const Index p = g.oh * g.ow, kk = g.cin * k * k;
  Array<T> out(g.batch * g.cout * p);
  Array<T> col(direct ? 0 : kk * p);
  ConstMatMap<T> W(weight.ptr(), g.cout, kk);
  for (Index b = 0; b < g.batch; ++b) {
    const T* xb = x.ptr() + b * g.cin * g.h * g.w;
    if (!direct) im2col(xb, g, col.data());
    ConstMatMap<T> X(direct ? xb : col.data(), kk, p);
    MatMap<T> Y(out.data() + b * g.cout * p, g.cout, p);
    Y.noalias() = W * X;
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.ptr(), g.cout);
  }

  auto xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      {g.batch, g.cout, g.oh, g.ow}, std::move(out), {x, weight, bias},
      [xn, wn, bn, g, direct, p, kk](TensorNode<T>& o) {
        auto* gx = detail::grad_slot(xn);
        auto* gw = detail::grad_slot(wn);
        auto* gb = detail::grad_slot(bn);
        Array<T> col(direct ? 0 : kk * p);
        ConstMatMap<T> W(wn->data.data(), g.cout, kk);
        for (Index b = 0; b < g.batch; ++b) {
          ConstMatMap<T> G(o.grad.data() + b * g.cout * p, g.cout, p);
          if (gb) *gb += G.rowwise().sum().array();
          if (gw) {
            const T* xb = xn->data.data() + b * g.cin * g.h * g.w;
            if (!direct) im2col(xb, g, col.data());
            ConstMatMap<T> X(direct ? xb : col.data(), kk, p);
            MatMap<T>(gw->data(), g.cout, kk).noalias() += G * X.transpose();
          }
          if (gx) {
            T* gxb = gx->data() + b * g.cin * g.h * g.w;
            if (direct) {
              MatMap<T>(gxb, kk, p).noalias() += W.transpose() * G;
            } else {
              MatMap<T> C(col.data(), kk, p);
              C.noalias() = W.transpose() * G;
              col2im(col.data(), g, gxb);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_inputs<T>("depthwise_conv2d", {x, weight, bias});
  if (x.ndim() != 4) shape_fail("depthwise_conv2d", "expected 4-D input, got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (weight.shape() != Shape{C, 1, 3, 3})
    shape_fail("depthwise_conv2d", "weight " + shape_str(weight.shape()) + " needs leading dim " +
                                       std::to_string(C) + " and shape [C,1,3,3]");
  if (bias.defined() && bias.shape() != Shape{C})
    shape_fail("depthwise_conv2d", "bias shape " + shape_str(bias.shape()));

  Array<T> out(x.numel());
  const T* xp = x.ptr();
  const T* wp = weight.ptr();
  for (Index bc = 0; bc < B * C; ++bc) {
    const Index c = bc % C;
    const T* in = xp + bc * H * W;
    T* dst = out.data() + bc * H * W;
    std::fill(dst, dst + H * W, bias.defined() ? bias.ptr()[c] : T(0));
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T wv = wp[c * 9 + ky * 3 + kx];
        const Index dy = ky - 1, dx = kx - 1;
        const Index y0 = std::max<Index>(0, -dy), y1 = std::min(H, H - dy);
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min(W, W - dx);
        for (Index y = y0; y < y1; ++y) {
          T* drow = dst + y * W;
          const T* srow = in + (y + dy) * W;
          for (Index xx = x0; xx < x1; ++xx) drow[xx] += wv * srow[xx + dx];
        }
      }
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, weight, bias}, [xn, wn, bn, B, C, H, W](TensorNode<T>& o) {
        auto* gx = detail::grad_slot(xn);
        auto* gw = detail::grad_slot(wn);
        auto* gb = detail::grad_slot(bn);
        for (Index bc = 0; bc < B * C; ++bc) {
          const Index c = bc % C;
          const T* g = o.grad.data() + bc * H * W;
          const T* in = xn->data.data() + bc * H * W;
          if (gb) (*gb)[c] += Eigen::Map<const Array<T>>(g, H * W).sum();
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const Index dy = ky - 1, dx = kx - 1;
              const Index y0 = std::max<Index>(0, -dy), y1 = std::min(H, H - dy);
              const Index x0 = std::max<Index>(0, -dx), x1 = std::min(W, W - dx);
              const T wv = wn->data[c * 9 + ky * 3 + kx];
              T acc = 0;
              const Index n = x1 - x0;
              for (Index y = y0; y < y1; ++y) {
                const T* grow = g + y * W;
                const T* srow = in + (y + dy) * W;
                if (gx) {
                  T* xrow = gx->data() + bc * H * W + (y + dy) * W;
                  for (Index xx = x0; xx < x1; ++xx) xrow[xx + dx] += wv * grow[xx];
                }
                if (gw && n > 0)
                  acc += (Eigen::Map<const Array<T>>(grow + x0, n) * Eigen::Map<const Array<T>>(srow + x0 + dx, n)).sum();
              }
              if (gw) (*gw)[c * 9 + ky * 3 + kx] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalizations

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int axis,
                     T eps) {
  check_inputs<T>("layer_norm", {x, gamma, beta});
  const int ax = normalize_axis(axis, x.ndim(), "layer_norm");
  const AxisSplit s = split_at(x.shape(), ax);
  const Index C = s.extent;
  if (C == 0) shape_fail("layer_norm", "normalized axis has size 0");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    shape_fail("layer_norm", "gamma/beta must have shape [" + std::to_string(C) + "], got " +
                                 shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  if (!(eps > 0)) shape_fail("layer_norm", "eps must be positive");

  const Index inner = s.inner;
  Array<T> xhat(x.numel()), rstd(s.outer * inner), out(x.numel());
  Array<T> mu(inner), var(inner);
  for (Index o = 0; o < s.outer; ++o) {
    const Index base = o * C * inner;
    mu.setZero();
    for (Index c = 0; c < C; ++c) mu += x.data().segment(base + c * inner, inner);
    mu /= static_cast<T>(C);
    var.setZero();
    for (Index c = 0; c < C; ++c) var += (x.data().segment(base + c * inner, inner) - mu).square();
    var /= static_cast<T>(C);
    auto r = rstd.segment(o * inner, inner);
    r = (var + eps).rsqrt();
    for (Index c = 0; c < C; ++c) {
      auto xh = xhat.segment(base + c * inner, inner);
      xh = (x.data().segment(base + c * inner, inner) - mu) * r;
      out.segment(base + c * inner, inner) = xh * gamma.data()[c] + beta.data()[c];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, s, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& o) {
        auto* gx = detail::grad_slot(xn);
        auto* gg = detail::grad_slot(gn);
        auto* gb = detail::grad_slot(bn);
        const Index C = s.extent, inner = s.inner;
        Array<T> m1(inner), m2(inner);
        for (Index ob = 0; ob < s.outer; ++ob) {
          const Index base = ob * C * inner;
          m1.setZero();
          m2.setZero();
          for (Index c = 0; c < C; ++c) {
            const auto g = o.grad.segment(base + c * inner, inner);
            const auto xh = xhat.segment(base + c * inner, inner);
            if (gg) (*gg)[c] += (g * xh).sum();
            if (gb) (*gb)[c] += g.sum();
            const T gam = gn->data[c];
            m1 += g * gam;
            m2 += g * gam * xh;
          }
          if (!gx) continue;
          m1 /= static_cast<T>(C);
          m2 /= static_cast<T>(C);
          const auto r = rstd.segment(ob * inner, inner);
          for (Index c = 0; c < C; ++c) {
            const auto g = o.grad.segment(base + c * inner, inner);
            const auto xh = xhat.segment(base + c * inner, inner);
            gx->segment(base + c * inner, inner) += r * (g * gn->data[c] - m1 - xh * m2);
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  check_inputs<T>("softmax", {x});
  const int ax = normalize_axis(axis, x.ndim(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  Array<T> out(x.numel());
  const T* xp = x.ptr();
  if (s.inner == 1) {
    // Contiguous rows: let Eigen vectorize the exponentials.
    for (Index o = 0; o < s.outer; ++o) {
      const auto row = Eigen::Map<const Array<T>>(xp + o * s.extent, s.extent);
      auto dst = out.segment(o * s.extent, s.extent);
      dst = (row - row.maxCoeff()).exp();
      dst *= T(1) / dst.sum();
    }
  } else
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index c = 0; c < s.extent; ++c) mx = std::max(mx, xp[base + c * s.inner]);
      T total = 0;
      for (Index c = 0; c < s.extent; ++c) {
        const T e = std::exp(xp[base + c * s.inner] - mx);
        out[base + c * s.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (Index c = 0; c < s.extent; ++c) out[base + c * s.inner] *= inv;
    }
  auto xn = x.node();
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [xn, s](TensorNode<T>& o) {
    auto* gx = detail::grad_slot(xn);
    if (!gx) return;
    if (s.inner == 1) {
      for (Index ob = 0; ob < s.outer; ++ob) {
        const auto y = o.data.segment(ob * s.extent, s.extent);
        const auto g = o.grad.segment(ob * s.extent, s.extent);
        gx->segment(ob * s.extent, s.extent) += y * (g - (g * y).sum());
      }
      return;
    }
    for (Index ob = 0; ob < s.outer; ++ob)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = ob * s.extent * s.inner + i;
        T dot = 0;
        for (Index c = 0; c < s.extent; ++c) dot += o.grad[base + c * s.inner] * o.data[base + c * s.inner];
        for (Index c = 0; c < s.extent; ++c) {
          const Index j = base + c * s.inner;
          (*gx)[j] += o.data[j] * (o.grad[j] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis, T eps) {
  check_inputs<T>("l2_normalize", {x});
  const int ax = normalize_axis(axis, x.ndim(), "l2_normalize");
  const AxisSplit s = split_at(x.shape(), ax);
  Array<T> out(x.numel()), denom(s.outer * s.inner);
  const T* xp = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      T sq = 0;
      for (Index c = 0; c < s.extent; ++c) sq += xp[base + c * s.inner] * xp[base + c * s.inner];
      const T d = std::max(std::sqrt(sq), eps);
      denom[o * s.inner + i] = d;
      for (Index c = 0; c < s.extent; ++c) out[base + c * s.inner] = xp[base + c * s.inner] / d;
    }
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x}, [xn, s, eps, denom = std::move(denom)](TensorNode<T>& o) {
        auto* gx = detail::grad_slot(xn);
        if (!gx) return;
        for (Index ob = 0; ob < s.outer; ++ob)
          for (Index i = 0; i < s.inner; ++i) {
            const Index base = ob * s.extent * s.inner + i;
            const T d = denom[ob * s.inner + i];
            // Below eps the denominator is the constant eps.
            const bool clamped = !(d > eps);
            T dot = 0;
            if (!clamped)
              for (Index c = 0; c < s.extent; ++c) dot += o.grad[base + c * s.inner] * o.data[base + c * s.inner];
            for (Index c = 0; c < s.extent; ++c) {
              const Index j = base + c * s.inner;
              (*gx)[j] += (o.grad[j] - o.data[j] * dot) / d;
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Index-permuting ops

namespace {

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape shape, std::vector<Index> index) {
  Array<T> out(static_cast<Index>(index.size()));
  const T* xp = x.ptr();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = index[i] < 0 ? T(0) : xp[index[i]];
  auto xn = x.node();
  return detail::make_result<T>(std::move(shape), std::move(out), {x},
                                [xn, index = std::move(index)](TensorNode<T>& o) {
                                  auto* gx = detail::grad_slot(xn);
                                  if (!gx) return;
                                  for (std::size_t i = 0; i < index.size(); ++i)
                                    if (index[i] >= 0) (*gx)[index[i]] += o.grad[i];
                                });
}

// Source offsets (into [B,C,H,W]) of the pixel-unshuffled tensor.
std::vector<Index> unshuffle_index(Index B, Index C, Index H, Index W, Index r) {
  const Index oh = H / r, ow = W / r;
  std::vector<Index> idx(static_cast<std::size_t>(B * C * H * W));
  std::size_t n = 0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j)
          for (Index y = 0; y < oh; ++y)
            for (Index x = 0; x < ow; ++x) idx[n++] = ((b * C + c) * H + y * r + i) * W + x * r + j;
  return idx;
}

std::vector<Index> window_index(Index B, Index C, Index H, Index W, int window, int span, int heads) {
  const Index hd = C / heads, nwy = H / window, nwx = W / window, pad = (span - window) / 2;
  std::vector<Index> idx(static_cast<std::size_t>(B * nwy * nwx * heads * span * span * hd));
  std::size_t n = 0;
  for (Index b = 0; b < B; ++b)
    for (Index wy = 0; wy < nwy; ++wy)
      for (Index wx = 0; wx < nwx; ++wx)
        for (Index h = 0; h < heads; ++h)
          for (Index sy = 0; sy < span; ++sy)
            for (Index sx = 0; sx < span; ++sx) {
              const Index y = wy * window - pad + sy, x = wx * window - pad + sx;
              const bool inside = y >= 0 && y < H && x >= 0 && x < W;
              for (Index d = 0; d < hd; ++d)
                idx[n++] = inside ? ((b * C + h * hd + d) * H + y) * W + x : -1;
            }
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int factor) {
  if (x.ndim() != 4 || factor < 1) shape_fail("pixel_unshuffle", "expected 4-D input and factor >= 1");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor != 0 || W % factor != 0)
    shape_fail("pixel_unshuffle", "spatial size " + shape_str(x.shape()) + " not divisible by " +
                                      std::to_string(factor));
  return gather(x, {B, C * factor * factor, H / factor, W / factor}, unshuffle_index(B, C, H, W, factor));
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int factor) {
  if (x.ndim() != 4 || factor < 1) shape_fail("pixel_shuffle", "expected 4-D input and factor >= 1");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index rr = Index(factor) * factor;
  if (C % rr != 0)
    shape_fail("pixel_shuffle", "channels of " + shape_str(x.shape()) + " not divisible by " + std::to_string(rr));
  // Invert the unshuffle permutation of the output geometry.
  const auto fwd = unshuffle_index(B, C / rr, H * factor, W * factor, factor);
  std::vector<Index> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<Index>(i);
  return gather(x, {B, C / rr, H * factor, W * factor}, std::move(inv));
}

template <typename T>
Tensor<T> extract_windows(const Tensor<T>& x, int window, int span, int heads) {
  if (x.ndim() != 4) shape_fail("extract_windows", "expected 4-D input, got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (window < 1 || H % window != 0 || W % window != 0)
    shape_fail("extract_windows", "spatial size " + shape_str(x.shape()) + " not divisible by window " +
                                      std::to_string(window));
  if (span < window || (span - window) % 2 != 0)
    shape_fail("extract_windows", "span " + std::to_string(span) + " must be window + an even margin");
  if (heads < 1 || C % heads != 0)
    shape_fail("extract_windows", "channels " + std::to_string(C) + " not divisible by heads " + std::to_string(heads));
  const Index nw = (H / window) * (W / window);
  return gather(x, {B * nw * heads, Index(span) * span, C / heads},
                window_index(B, C, H, W, window, span, heads));
}

template <typename T>
Tensor<T> merge_windows(const Tensor<T>& windows, const Shape& image_shape, int window, int heads) {
  if (image_shape.size() != 4) shape_fail("merge_windows", "image shape must be 4-D");
  const Index B = image_shape[0], C = image_shape[1], H = image_shape[2], W = image_shape[3];
  if (window < 1 || H % window != 0 || W % window != 0 || heads < 1 || C % heads != 0)
    shape_fail("merge_windows", "bad geometry for " + shape_str(image_shape));
  const Shape expected{B * (H / window) * (W / window) * heads, Index(window) * window, C / heads};
  if (windows.shape() != expected)
    shape_fail("merge_windows", "windows " + shape_str(windows.shape()) + " expected " + shape_str(expected));
  const auto fwd = window_index(B, C, H, W, window, window, heads);
  std::vector<Index> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<Index>(i);
  return gather(windows, image_shape, std::move(inv));
}

// ---------------------------------------------------------------------------
// Memory addressing helpers

template <typename T>
Tensor<T> threshold_renormalize(const Tensor<T>& p, T threshold) {
  check_inputs<T>("threshold_renormalize", {p});
  if (p.ndim() < 1) shape_fail("threshold_renormalize", "rank 0 input");
  const Index n = p.dim(-1), rows = p.numel() / std::max<Index>(n, 1);
  Array<T> out = Array<T>::Zero(p.numel());
  Array<T> total(rows);
  std::vector<char> keep(static_cast<std::size_t>(p.numel()), 0);
  for (Index r = 0; r < rows; ++r) {
    const T* row = p.ptr() + r * n;
    T s = 0;
    for (Index j = 0; j < n; ++j)
      if (row[j] >= threshold) {
        keep[r * n + j] = 1;
        s += row[j];
      }
    if (!(s > 0)) {
      const Index best = std::max_element(row, row + n) - row;
      keep[r * n + best] = 1;
      s = row[best];
    }
    total[r] = s;
    for (Index j = 0; j < n; ++j)
      if (keep[r * n + j]) out[r * n + j] = row[j] / s;
  }
  auto pn = p.node();
  return detail::make_result<T>(
      p.shape(), std::move(out), {p},
      [pn, n, rows, keep = std::move(keep), total = std::move(total)](TensorNode<T>& o) {
        auto* gp = detail::grad_slot(pn);
        if (!gp) return;
        for (Index r = 0; r < rows; ++r) {
          T dot = 0;
          for (Index j = 0; j < n; ++j) dot += o.grad[r * n + j] * o.data[r * n + j];
          for (Index j = 0; j < n; ++j)
            if (keep[r * n + j]) (*gp)[r * n + j] += (o.grad[r * n + j] - dot) / total[r];
        }
      });
}

template <typename T>
Tensor<T> protomix(const Tensor<T>& part, const Tensor<T>& ins, const Tensor<T>& sem,
                   const Tensor<T>& w) {
  check_inputs<T>("protomix", {part, ins, sem, w});
  if (part.shape() != ins.shape() || part.shape() != sem.shape())
    shape_fail("protomix", "shape mismatch " + shape_str(part.shape()) + ", " + shape_str(ins.shape()) +
                               ", " + shape_str(sem.shape()));
  if (w.numel() != 1) shape_fail("protomix", "mixing weight must have one element");
  const T s = T(1) / (T(1) + std::exp(-w.data()[0]));
  const T side = (T(1) - s) / T(2);
  Array<T> out = s * sem.data() + side * ins.data() + side * part.data();
  auto pn = part.node(), in = ins.node(), sn = sem.node(), wn = w.node();
  return detail::make_result<T>(part.shape(), std::move(out), {part, ins, sem, w},
                                [pn, in, sn, wn, s, side](TensorNode<T>& o) {
                                  if (auto* g = detail::grad_slot(sn)) *g += s * o.grad;
                                  if (auto* g = detail::grad_slot(in)) *g += side * o.grad;
                                  if (auto* g = detail::grad_slot(pn)) *g += side * o.grad;
                                  if (auto* g = detail::grad_slot(wn)) {
                                    const T dmix = (o.grad * (sn->data - T(0.5) * (in->data + pn->data))).sum();
                                    (*g)[0] += dmix * s * (T(1) - s);
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Filtering

template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, const std::vector<T>& kernel) {
  check_inputs<T>("separable_filter_valid", {x});
  if (x.ndim() != 4) shape_fail("separable_filter_valid", "expected 4-D input");
  const Index K = static_cast<Index>(kernel.size());
  const Index P = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (K < 1 || H < K || W < K)
    shape_fail("separable_filter_valid", "image " + shape_str(x.shape()) + " smaller than window " +
                                             std::to_string(K));
  const Index oh = H - K + 1, ow = W - K + 1;
  Array<T> out(P * oh * ow);
  std::vector<T> tmp(static_cast<std::size_t>(H * ow));
  for (Index pl = 0; pl < P; ++pl) {
    const T* in = x.ptr() + pl * H * W;
    for (Index y = 0; y < H; ++y)
      for (Index ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (Index j = 0; j < K; ++j) acc += kernel[j] * in[y * W + ox + j];
        tmp[y * ow + ox] = acc;
      }
    T* dst = out.data() + pl * oh * ow;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (Index i = 0; i < K; ++i) acc += kernel[i] * tmp[(oy + i) * ow + ox];
        dst[oy * ow + ox] = acc;
      }
  }
  auto xn = x.node();
  return detail::make_result<T>(
      {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
      [xn, kernel, P, H, W, K, oh, ow](TensorNode<T>& o) {
        auto* gx = detail::grad_slot(xn);
        if (!gx) return;
        std::vector<T> dtmp(static_cast<std::size_t>(H * ow));
        for (Index pl = 0; pl < P; ++pl) {
          const T* g = o.grad.data() + pl * oh * ow;
          std::fill(dtmp.begin(), dtmp.end(), T(0));
          for (Index oy = 0; oy < oh; ++oy)
            for (Index i = 0; i < K; ++i)
              for (Index ox = 0; ox < ow; ++ox) dtmp[(oy + i) * ow + ox] += kernel[i] * g[oy * ow + ox];
          T* dx = gx->data() + pl * H * W;
          for (Index y = 0; y < H; ++y)
            for (Index j = 0; j < K; ++j)
              for (Index ox = 0; ox < ow; ++ox) dx[y * W + ox + j] += kernel[j] * dtmp[y * ow + ox];
        }
      });
}

#define STAINR_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> slice_channels(const Tensor<T>&, Index, Index);                             \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale_slices(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, T);   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template Tensor<T> l2_normalize(const Tensor<T>&, int, T);                                     \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                     \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                       \
  template Tensor<T> extract_windows(const Tensor<T>&, int, int, int);                           \
  template Tensor<T> merge_windows(const Tensor<T>&, const Shape&, int, int);                    \
  template Tensor<T> threshold_renormalize(const Tensor<T>&, T);                                 \
  template Tensor<T> protomix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                              const Tensor<T>&);                                                 \
  template Tensor<T> separable_filter_valid(const Tensor<T>&, const std::vector<T>&);

STAINR_INSTANTIATE_OPS(float)
STAINR_INSTANTIATE_OPS(double)

}  // namespace stainr
