#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "marcel/errors.hpp"

namespace marcel {

// Dense row-major tensors with reverse-mode differentiation. A Tensor is a
// cheap handle onto a graph node; ops record their inputs so backward() can
// replay the tape in reverse creation order. float is the training precision,
// double the verification precision for gradient checks.

namespace detail {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline std::int64_t numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::atomic<std::int64_t>& tensor_id_counter() {
  static std::atomic<std::int64_t> counter{0};
  return counter;
}

}  // namespace detail

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // materialized by backward()
  bool requires_grad = false;
  std::int64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // pushes this->grad into parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T = float>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (detail::numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeMismatch("tensor shape " + detail::shape_str(shape) + " needs " +
                          std::to_string(detail::numel(shape)) + " values, got " +
                          std::to_string(data.size()));
    for (int d : shape)
      if (d <= 0) throw InvalidArgument("tensor extents must be positive");
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->id = detail::tensor_id_counter()++;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    const auto n = detail::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
    const auto n = detail::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& data() { return node_->data; }
  bool requires_grad() const { return node_->requires_grad; }

  T item() const {
    if (size() != 1)
      throw InvalidArgument("item() on tensor of shape " + detail::shape_str(shape()));
    return node_->data[0];
  }

  // Gradient of the last backward() pass; zeros when the tensor was not
  // reached (or backward has not run).
  std::vector<T> grad() const {
    if (node_->grad.size() == node_->data.size()) return node_->grad;
    return std::vector<T>(node_->data.size(), T(0));
  }

  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> data,
                  std::vector<std::shared_ptr<TensorNode<T>>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  bool flows = false;
  for (const auto& p : parents)
    if (p->requires_grad) flows = true;
  if (flows) {
    out.node()->requires_grad = true;  // gradient flows through this node
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Trailing-dimension broadcasting: shapes align from the right and each pair
// of extents must match or be 1. Returns the output shape.
inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  std::vector<int> out(r);
  for (int i = 0; i < r; ++i) {
    const int da = i < ra ? a[ra - 1 - i] : 1;
    const int db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

// Flat strides of `shape` viewed as `out_shape`, with 0 on broadcast axes.
inline std::vector<std::int64_t> broadcast_strides(const std::vector<int>& shape,
                                                   const std::vector<int>& out_shape) {
  const int r = static_cast<int>(out_shape.size());
  const int ra = static_cast<int>(shape.size());
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (int i = 0; i < ra; ++i) {
    const int d = shape[ra - 1 - i];
    strides[r - 1 - i] = (d == 1) ? 0 : s;
    s *= d;
  }
  return strides;
}

// walks the flat offsets of two broadcast operands across the output index space
template <typename Fn>
void for_each_broadcast(const std::vector<int>& out_shape, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, Fn&& fn) {
  const std::int64_t total = numel(out_shape);
  const int r = static_cast<int>(out_shape.size());
  std::vector<int> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    fn(flat, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= static_cast<std::int64_t>(out_shape[d]) * sa[d];
      ib -= static_cast<std::int64_t>(out_shape[d]) * sb[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename FwdFn, typename BackA, typename BackB>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, BackA back_a,
                             BackB back_b) {
  const std::vector<int> out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(numel(out_shape));
  const auto& da = a.data();
  const auto& db = b.data();
  for_each_broadcast(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    out[o] = fwd(da[ia], db[ib]);
  });
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(
      out_shape, std::move(out), {an, bn},
      [an, bn, out_shape, sa, sb, back_a, back_b](TensorNode<T>& self) {
        an->ensure_grad();
        bn->ensure_grad();
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                             const T g = self.grad[o];
                             an->grad[ia] += back_a(g, an->data[ia], bn->data[ib]);
                             bn->grad[ib] += back_b(g, an->data[ia], bn->data[ib]);
                           });
      });
}

template <typename T, typename FwdFn, typename BackFn>
Tensor<T> unary_elementwise(const Tensor<T>& a, FwdFn fwd, BackFn back) {
  std::vector<T> out(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = fwd(a.data()[i]);
  auto an = a.node();
  auto shared_out = std::make_shared<std::vector<T>>(out);  // for backward rules using y
  return make_op<T>(a.shape(), std::move(out), {an},
                    [an, shared_out, back](TensorNode<T>& self) {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        an->grad[i] += back(self.grad[i], an->data[i], (*shared_out)[i]);
                    });
}

}  // namespace detail

// --- arithmetic -------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, double c) {
  return add(a, Tensor<T>::scalar(static_cast<T>(c)));
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, double c) {
  return mul(a, Tensor<T>::scalar(static_cast<T>(c)));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_elementwise(
      a, [](T x) { return std::exp(x); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_elementwise(
      a, [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_elementwise(
      a, [](T x) { return std::tanh(x); }, [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_elementwise(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

// ln(0.5 e^x + 0.5) = softplus(x) - ln 2; evaluated in the overflow-safe form.
template <typename T>
Tensor<T> shifted_softplus(const Tensor<T>& a) {
  return detail::unary_elementwise(
      a,
      [](T x) {
        const T sp = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
        return sp - static_cast<T>(M_LN2);
      },
      [](T g, T x, T) {
        return g / (T(1) + std::exp(-x));  // sigmoid(x)
      });
}

// --- matmul -----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeMismatch("matmul needs (m, k) x (k, n), got " + detail::shape_str(a.shape()) +
                        " x " + detail::shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
  const auto& da = a.data();
  const auto& db = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const T av = da[i * k + p];
      if (av == T(0)) continue;
      for (int j = 0; j < n; ++j) out[i * n + j] += av * db[p * n + j];
    }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(
      {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](TensorNode<T>& self) {
        an->ensure_grad();
        bn->ensure_grad();
        // dA = dC . B^T ; dB = A^T . dC
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const T g = self.grad[i * n + j];
            if (g == T(0)) continue;
            for (int p = 0; p < k; ++p) {
              an->grad[i * k + p] += g * bn->data[p * n + j];
              bn->grad[p * n + j] += g * an->data[i * k + p];
            }
          }
      });
}

// --- reductions -------------------------------------------------------------

namespace detail {

inline void check_axis(int axis, int rank) {
  if (axis < 0 || axis >= rank)
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(rank));
}

// decompose flat space as outer x extent x inner around `axis`
struct AxisSplit {
  std::int64_t outer, extent, inner;
};

inline AxisSplit axis_split(const std::vector<int>& shape, int axis) {
  AxisSplit s{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

inline std::vector<int> drop_axis(const std::vector<int>& shape, int axis) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  detail::check_axis(axis, a.rank());
  const auto s = detail::axis_split(a.shape(), axis);
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t e = 0; e < s.extent; ++e)
      for (std::int64_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += a.data()[(o * s.extent + e) * s.inner + i];
  auto an = a.node();
  return detail::make_op<T>(detail::drop_axis(a.shape(), axis), std::move(out), {an},
                            [an, s](TensorNode<T>& self) {
                              an->ensure_grad();
                              for (std::int64_t o = 0; o < s.outer; ++o)
                                for (std::int64_t e = 0; e < s.extent; ++e)
                                  for (std::int64_t i = 0; i < s.inner; ++i)
                                    an->grad[(o * s.extent + e) * s.inner + i] +=
                                        self.grad[o * s.inner + i];
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {  // all elements -> scalar
  T acc(0);
  for (T v : a.data()) acc += v;
  auto an = a.node();
  return detail::make_op<T>({}, {acc}, {an}, [an](TensorNode<T>& self) {
    an->ensure_grad();
    for (auto& g : an->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  detail::check_axis(axis, a.rank());
  return mul(sum(a, axis), 1.0 / a.shape()[axis]);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul(sum(a), 1.0 / static_cast<double>(a.size()));
}

// max along an axis; gradient goes to the first maximal element of each slice
template <typename T>
Tensor<T> max(const Tensor<T>& a, int axis) {
  detail::check_axis(axis, a.rank());
  const auto s = detail::axis_split(a.shape(), axis);
  std::vector<T> out(s.outer * s.inner);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(s.outer * s.inner);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      std::int64_t best = (o * s.extent) * s.inner + i;
      for (std::int64_t e = 1; e < s.extent; ++e) {
        const std::int64_t at = (o * s.extent + e) * s.inner + i;
        if (a.data()[at] > a.data()[best]) best = at;
      }
      out[o * s.inner + i] = a.data()[best];
      (*argmax)[o * s.inner + i] = best;
    }
  auto an = a.node();
  return detail::make_op<T>(detail::drop_axis(a.shape(), axis), std::move(out), {an},
                            [an, argmax](TensorNode<T>& self) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                an->grad[(*argmax)[i]] += self.grad[i];
                            });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  detail::check_axis(axis, a.rank());
  const auto s = detail::axis_split(a.shape(), axis);
  std::vector<T> out(a.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      T hi = a.data()[(o * s.extent) * s.inner + i];
      for (std::int64_t e = 1; e < s.extent; ++e)
        hi = std::max(hi, a.data()[(o * s.extent + e) * s.inner + i]);
      T z(0);
      for (std::int64_t e = 0; e < s.extent; ++e) {
        const std::int64_t at = (o * s.extent + e) * s.inner + i;
        out[at] = std::exp(a.data()[at] - hi);
        z += out[at];
      }
      for (std::int64_t e = 0; e < s.extent; ++e) out[(o * s.extent + e) * s.inner + i] /= z;
    }
  auto an = a.node();
  auto y = std::make_shared<std::vector<T>>(out);
  return detail::make_op<T>(
      a.shape(), std::move(out), {an}, [an, y, s](TensorNode<T>& self) {
        an->ensure_grad();
        // dx = y * (dy - sum(dy * y)) per slice
        for (std::int64_t o = 0; o < s.outer; ++o)
          for (std::int64_t i = 0; i < s.inner; ++i) {
            T dot(0);
            for (std::int64_t e = 0; e < s.extent; ++e) {
              const std::int64_t at = (o * s.extent + e) * s.inner + i;
              dot += self.grad[at] * (*y)[at];
            }
            for (std::int64_t e = 0; e < s.extent; ++e) {
              const std::int64_t at = (o * s.extent + e) * s.inner + i;
              an->grad[at] += (*y)[at] * (self.grad[at] - dot);
            }
          }
      });
}

// --- structure ops ----------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
  if (detail::numel(shape) != a.size())
    throw ShapeMismatch("cannot reshape " + detail::shape_str(a.shape()) + " to " +
                        detail::shape_str(shape));
  auto an = a.node();
  return detail::make_op<T>(std::move(shape), a.data(), {an}, [an](TensorNode<T>& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> broadcast(const Tensor<T>& a, const std::vector<int>& shape) {
  const auto out_shape = detail::broadcast_shape(a.shape(), shape);
  if (out_shape != shape)
    throw ShapeMismatch("cannot broadcast " + detail::shape_str(a.shape()) + " to " +
                        detail::shape_str(shape));
  const auto sa = detail::broadcast_strides(a.shape(), shape);
  const auto sz = detail::broadcast_strides(shape, shape);  // identity walk
  std::vector<T> out(detail::numel(shape));
  detail::for_each_broadcast(shape, sa, sz, [&](std::int64_t o, std::int64_t ia, std::int64_t) {
    out[o] = a.data()[ia];
  });
  auto an = a.node();
  return detail::make_op<T>(shape, std::move(out), {an},
                            [an, shape, sa, sz](TensorNode<T>& self) {
                              an->ensure_grad();
                              detail::for_each_broadcast(
                                  shape, sa, sz,
                                  [&](std::int64_t o, std::int64_t ia, std::int64_t) {
                                    an->grad[ia] += self.grad[o];
                                  });
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw InvalidArgument("concat of zero tensors");
  const int rank = parts[0].rank();
  detail::check_axis(axis, rank);
  std::vector<int> out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank)
      throw ShapeMismatch("concat rank mismatch: " + detail::shape_str(parts[0].shape()) +
                          " vs " + detail::shape_str(parts[p].shape()));
    for (int d = 0; d < rank; ++d)
      if (d != axis && parts[p].shape()[d] != out_shape[d])
        throw ShapeMismatch("concat shape mismatch: " + detail::shape_str(parts[0].shape()) +
                            " vs " + detail::shape_str(parts[p].shape()));
    out_shape[axis] += parts[p].shape()[axis];
  }
  const auto s = detail::axis_split(out_shape, axis);
  std::vector<T> out(detail::numel(out_shape));
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<std::int64_t> offsets;  // extent offset of each part
  std::int64_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offsets.push_back(off);
    const auto ps = detail::axis_split(p.shape(), axis);
    for (std::int64_t o = 0; o < ps.outer; ++o)
      for (std::int64_t e = 0; e < ps.extent; ++e)
        for (std::int64_t i = 0; i < ps.inner; ++i)
          out[(o * s.extent + off + e) * s.inner + i] =
              p.data()[(o * ps.extent + e) * ps.inner + i];
    off += p.shape()[axis];
  }
  return detail::make_op<T>(
      out_shape, std::move(out), nodes, [nodes, offsets, s, axis](TensorNode<T>& self) {
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          nodes[p]->ensure_grad();
          const auto ps = detail::axis_split(nodes[p]->shape, axis);
          for (std::int64_t o = 0; o < ps.outer; ++o)
            for (std::int64_t e = 0; e < ps.extent; ++e)
              for (std::int64_t i = 0; i < ps.inner; ++i)
                nodes[p]->grad[(o * ps.extent + e) * ps.inner + i] +=
                    self.grad[(o * s.extent + offsets[p] + e) * s.inner + i];
        }
      });
}

// picks rows (axis 0); duplicates allowed, as in an embedding lookup
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<int>& rows) {
  if (a.rank() < 1) throw InvalidArgument("index_select needs rank >= 1");
  const std::int64_t row_size = a.size() / a.shape()[0];
  for (int r : rows)
    if (r < 0 || r >= a.shape()[0])
      throw InvalidArgument("row index " + std::to_string(r) + " out of range for " +
                            detail::shape_str(a.shape()));
  std::vector<int> out_shape = a.shape();
  out_shape[0] = static_cast<int>(rows.size());
  std::vector<T> out(rows.size() * row_size);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.data().begin() + rows[i] * row_size, row_size, out.begin() + i * row_size);
  auto an = a.node();
  auto idx = std::make_shared<std::vector<int>>(rows);
  return detail::make_op<T>(out_shape, std::move(out), {an},
                            [an, idx, row_size](TensorNode<T>& self) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < idx->size(); ++i)
                                for (std::int64_t j = 0; j < row_size; ++j)
                                  an->grad[(*idx)[i] * row_size + j] +=
                                      self.grad[i * row_size + j];
                            });
}

// out[rows[i]] += a[i]; the reduction that pools per-node values by graph
template <typename T>
Tensor<T> scatter_add(const Tensor<T>& a, const std::vector<int>& rows, int n_out) {
  if (a.rank() < 1) throw InvalidArgument("scatter_add needs rank >= 1");
  if (static_cast<int>(rows.size()) != a.shape()[0])
    throw ShapeMismatch("scatter_add got " + std::to_string(rows.size()) + " row ids for " +
                        detail::shape_str(a.shape()));
  if (n_out < 1) throw InvalidArgument("scatter_add needs n_out >= 1");
  for (int r : rows)
    if (r < 0 || r >= n_out)
      throw InvalidArgument("destination row " + std::to_string(r) + " out of range [0, " +
                            std::to_string(n_out) + ")");
  const std::int64_t row_size = a.size() / a.shape()[0];
  std::vector<int> out_shape = a.shape();
  out_shape[0] = n_out;
  std::vector<T> out(n_out * row_size, T(0));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::int64_t j = 0; j < row_size; ++j)
      out[rows[i] * row_size + j] += a.data()[i * row_size + j];
  auto an = a.node();
  auto idx = std::make_shared<std::vector<int>>(rows);
  return detail::make_op<T>(out_shape, std::move(out), {an},
                            [an, idx, row_size](TensorNode<T>& self) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < idx->size(); ++i)
                                for (std::int64_t j = 0; j < row_size; ++j)
                                  an->grad[i * row_size + j] +=
                                      self.grad[(*idx)[i] * row_size + j];
                            });
}

// --- backward ---------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw InvalidArgument("backward needs a scalar loss, got shape " +
                          detail::shape_str(loss.shape()));
  // collect the reachable graph
  std::vector<TensorNode<T>*> order;
  std::vector<TensorNode<T>*> stack{loss.node().get()};
  std::unordered_set<TensorNode<T>*> seen;
  while (!stack.empty()) {
    TensorNode<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  // creation order is a topological order: parents precede children
  std::sort(order.begin(), order.end(),
            [](const TensorNode<T>* a, const TensorNode<T>* b) { return a->id > b->id; });
  for (auto* n : order) n->grad.assign(n->data.size(), T(0));
  loss.node()->grad[0] = T(1);
  for (auto* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

// Variant that also clears parameter gradients first, so parameters that the
// loss never touched report zeros rather than a stale previous pass.
template <typename T>
void backward(const Tensor<T>& loss, const std::vector<Tensor<T>>& params) {
  for (const Tensor<T>& p : params) p.node()->grad.assign(p.node()->data.size(), T(0));
  backward(loss);
}

// --- finite differences -----------------------------------------------------

// Central differences; `f` re-evaluates the scalar objective after each nudge
// of x's storage. The standard oracle for checking backward().
template <typename T, typename F>
std::vector<double> finite_difference(F&& f, Tensor<T>& x, double eps = 1e-6) {
  if (!(eps > 0)) throw InvalidArgument("eps must be > 0");
  std::vector<double> grad(x.size());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T orig = x.data()[i];
    x.data()[i] = orig + static_cast<T>(eps);
    const double fp = f();
    x.data()[i] = orig - static_cast<T>(eps);
    const double fm = f();
    x.data()[i] = orig;
    grad[i] = (fp - fm) / (2 * eps);
  }
  return grad;
}

// --- Adam -------------------------------------------------------------------

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // one slot per parameter tensor
};

template <typename T>
AdamState<T> adam_init(const std::vector<Tensor<T>>& params, double lr = 1e-3) {
  AdamState<T> st;
  st.lr = lr;
  for (const Tensor<T>& p : params) {
    st.m.emplace_back(p.size(), 0.0);
    st.v.emplace_back(p.size(), 0.0);
  }
  return st;
}

// One update with bias correction. Moments are kept in double so float
// training does not lose the small-step tail.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads,
               AdamState<T>& st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ShapeMismatch("adam_step: " + std::to_string(params.size()) + " params, " +
                        std::to_string(grads.size()) + " grads, " + std::to_string(st.m.size()) +
                        " moment slots");
  for (std::size_t p = 0; p < params.size(); ++p)
    if (static_cast<std::int64_t>(grads[p].size()) != params[p].size())
      throw ShapeMismatch("adam_step: grad of " + std::to_string(grads[p].size()) +
                          " values for parameter " + detail::shape_str(params[p].shape()));
  for (const auto& g : grads)
    for (T v : g)
      if (!std::isfinite(static_cast<double>(v)))
        throw NonFiniteGradient("non-finite gradient in adam_step");

  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& data = params[p].data();
    for (std::size_t i = 0; i < grads[p].size(); ++i) {
      const double g = static_cast<double>(grads[p][i]);
      st.m[p][i] = st.beta1 * st.m[p][i] + (1.0 - st.beta1) * g;
      st.v[p][i] = st.beta2 * st.v[p][i] + (1.0 - st.beta2) * g * g;
      const double mhat = st.m[p][i] / bc1;
      const double vhat = st.v[p][i] / bc2;
      data[i] = static_cast<T>(static_cast<double>(data[i]) -
                               st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

// convenience: read gradients straight off the parameters' last backward pass
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& st) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const Tensor<T>& p : params) grads.push_back(p.grad());
  adam_step(params, grads, st);
}

}  // namespace marcel
