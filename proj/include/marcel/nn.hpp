#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "marcel/errors.hpp"
#include "marcel/rng.hpp"
#include "marcel/tensor.hpp"

namespace marcel {

enum class Activation { ReLU, Tanh, ShiftedSoftplus };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  switch (act) {
    case Activation::ReLU: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::ShiftedSoftplus: return shifted_softplus(x);
  }
  throw InvalidArgument("unknown activation");
}

namespace detail {

template <typename T>
Tensor<T> uniform_init(std::vector<int> shape, double bound, Rng& rng) {
  std::vector<T> data(numel(shape));
  for (T& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

}  // namespace detail

// Dense layer y = xW + b with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init.
// Accepts [n, in] batches or a single [in] vector.
template <typename T = float>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng) : in_(in), out_(out) {
    if (in < 1 || out < 1) throw InvalidArgument("Linear needs positive dimensions");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = detail::uniform_init<T>({in, out}, bound, rng);
    bias_ = detail::uniform_init<T>({out}, bound, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() == 1) {
      const Tensor<T> y = add(matmul(reshape(x, {1, in_}), weight_), bias_);
      return reshape(y, {out_});
    }
    return add(matmul(x, weight_), bias_);
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  void collect_params(std::vector<Tensor<T>>& out) const {
    out.push_back(weight_);
    out.push_back(bias_);
  }

 private:
  int in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

// Stack of dense layers with an activation between them (none after the last).
template <typename T = float>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& dims, Rng& rng, Activation act = Activation::ReLU) : act_(act) {
    if (dims.size() < 2) throw InvalidArgument("Mlp needs at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.emplace_back(dims[i], dims[i + 1], rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = activate(h, act_);
    }
    return h;
  }

  void collect_params(std::vector<Tensor<T>>& out) const {
    for (const auto& l : layers_) l.collect_params(out);
  }

 private:
  std::vector<Linear<T>> layers_;
  Activation act_ = Activation::ReLU;
};

// Learned lookup table mapping category indices to d-vectors.
template <typename T = float>
class Embedding {
 public:
  Embedding() = default;
  Embedding(int vocab, int dim, Rng& rng) : vocab_(vocab) {
    if (vocab < 1 || dim < 1) throw InvalidArgument("Embedding needs positive dimensions");
    table_ = detail::uniform_init<T>({vocab, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  }

  Tensor<T> operator()(const std::vector<int>& indices) const {
    for (int i : indices)
      if (i < 0 || i >= vocab_)
        throw InvalidArgument("embedding index " + std::to_string(i) + " outside vocabulary of " +
                              std::to_string(vocab_));
    return index_select(table_, indices);
  }

  void collect_params(std::vector<Tensor<T>>& out) const { out.push_back(table_); }

 private:
  int vocab_ = 0;
  Tensor<T> table_;
};

// ---------------------------------------------------------------------------
// Parameter persistence: values are stored as f64 regardless of T, which
// round-trips float parameters exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kParamsMagic[9] = "MRCLNN01";

template <typename V>
void put_raw(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get_raw(std::istream& in) {
  V v;
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw DataError("truncated parameter file");
  return v;
}

}  // namespace detail

template <typename T>
void save_params(const std::vector<Tensor<T>>& params, std::ostream& out) {
  out.write(detail::kParamsMagic, 8);
  detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor<T>& p : params) {
    detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (int d : p.shape()) detail::put_raw<std::int32_t>(out, d);
    for (T v : p.data()) detail::put_raw<double>(out, static_cast<double>(v));
  }
  if (!out) throw IoError("failed to write parameters");
}

// Loads into an existing parameter list; shapes must already match.
template <typename T>
void load_params(std::vector<Tensor<T>>& params, std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kParamsMagic, 8) != 0)
    throw DataError("not a parameter file (bad magic)");
  const auto count = detail::get_raw<std::uint32_t>(in);
  if (count != params.size())
    throw DataError("parameter file has " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(params.size()));
  for (Tensor<T>& p : params) {
    const auto rank = detail::get_raw<std::uint32_t>(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = detail::get_raw<std::int32_t>(in);
    if (shape != p.shape())
      throw DataError("parameter shape " + detail::shape_str(shape) + " does not match model's " +
                      detail::shape_str(p.shape()));
    for (T& v : p.data()) v = static_cast<T>(detail::get_raw<double>(in));
  }
}

}  // namespace marcel
