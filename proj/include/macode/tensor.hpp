#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "macode/error.hpp"
#include "macode/rng.hpp"

namespace macode::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor.
template <class T = float>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0), bool grad = false)
      : shape(std::move(s)), data(shape_numel(shape), fill), requires_grad(grad) {
    check_shape();
  }
  Tensor(Shape s, std::vector<T> values, bool grad = false)
      : shape(std::move(s)), data(std::move(values)), requires_grad(grad) {
    check_shape();
    if (data.size() != shape_numel(shape))
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) + " vs shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Product of all leading dimensions; the tensor viewed as rows() x cols().
  std::size_t rows() const { return shape.empty() ? 1 : numel() / shape.back(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

 private:
  void check_shape() const {
    for (auto d : shape)
      if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_str(shape));
  }
};

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T = float>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape; }
  const std::vector<T>& grad() const { return tape->grad(id); }
};

/// Ordered record of primitive ops. Node ids grow in creation order, so a node's
/// inputs always precede it and reverse id order is a valid backward schedule.
/// A tape is single-threaded; separate tapes are independent.
template <class T = float>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf node. It receives gradients when the tensor has requires_grad set.
  Var<T> input(Tensor<T> t) {
    const bool needs = grad_enabled_ && t.requires_grad;
    nodes_.push_back(Node{std::move(t), {}, needs, {}});
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn, const char* op) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn), op);
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn, const char* op) {
    for (T v : value.data)
      if (!std::isfinite(v)) throw NonFinite(std::string("non-finite output of ") + op);
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw ShapeMismatch(std::string(op) + ": input from another tape");
      needs = needs || nodes_[in.id].needs_grad;
    }
    needs = needs && grad_enabled_;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of node `id`, zero-initialised on first access.
  std::vector<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
    return n.grad;
  }
  const std::vector<T>& grad(std::size_t id) { return grad_buffer(id); }

  /// Accumulates d(loss)/d(node) into every node that needs a gradient.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw ShapeMismatch("backward: loss from another tape");
    if (value(loss.id).numel() != 1) throw ShapeMismatch("backward needs a scalar loss");
    if (!nodes_[loss.id].needs_grad) return;
    grad_buffer(loss.id)[0] += T(1);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.needs_grad || n.grad.empty()) continue;
      for (T g : n.grad)
        if (!std::isfinite(g)) throw NonFinite("non-finite gradient during backward");
      if (n.backward) n.backward(*this, k);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (m x n) += op(A) * op(B) for row-major buffers.
template <class T>
void gemm_acc(const T* A, std::size_t a_rows, std::size_t a_cols, bool trans_a, const T* B, std::size_t b_rows,
              std::size_t b_cols, bool trans_b, T* C) {
  using Index = Eigen::Index;
  Eigen::Map<const RowMat<T>> a(A, static_cast<Index>(a_rows), static_cast<Index>(a_cols));
  Eigen::Map<const RowMat<T>> b(B, static_cast<Index>(b_rows), static_cast<Index>(b_cols));
  const auto m = static_cast<Index>(trans_a ? a_cols : a_rows);
  const auto n = static_cast<Index>(trans_b ? b_rows : b_cols);
  Eigen::Map<RowMat<T>> c(C, m, n);
  if (!trans_a && !trans_b)
    c.noalias() += a * b;
  else if (trans_a && !trans_b)
    c.noalias() += a.transpose() * b;
  else if (!trans_a && trans_b)
    c.noalias() += a * b.transpose();
  else
    c.noalias() += a.transpose() * b.transpose();
}

inline void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeMismatch(std::string(op) + ": " + detail);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

/// [m,k] x [k,n] -> [m,n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0], "matmul",
                  shape_str(A.shape) + " x " + shape_str(B.shape));
  const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor<T> out({m, n});
  detail::gemm_acc(A.data.data(), m, k, false, B.data.data(), k, n, false, out.data.data());
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, m, k, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        if (t.needs_grad(a.id))
          detail::gemm_acc(g.data(), m, n, false, t.value(b.id).data.data(), k, n, true, t.grad_buffer(a.id).data());
        if (t.needs_grad(b.id))
          detail::gemm_acc(t.value(a.id).data.data(), m, k, true, g.data(), m, n, false, t.grad_buffer(b.id).data());
      },
      "matmul");
}

/// Elementwise sum of two same-shaped tensors.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.shape == B.shape, "add", shape_str(A.shape) + " + " + shape_str(B.shape));
  Tensor<T> out(A.shape, A.data);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        for (auto id : {a.id, b.id}) {
          if (!t.needs_grad(id)) continue;
          auto& gi = t.grad_buffer(id);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
      },
      "add");
}

/// Adds a length-n vector to every row of an [..., n] tensor.
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  const auto& A = a.value();
  const auto& Bv = bias.value();
  detail::require(Bv.rank() == 1 && Bv.numel() == A.cols(), "add_bias",
                  shape_str(A.shape) + " + " + shape_str(Bv.shape));
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out(A.shape, A.data);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] += Bv.data[c];
  return a.tape->record(
      std::move(out), {a, bias},
      [a, bias, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        if (t.needs_grad(a.id)) {
          auto& ga = t.grad_buffer(a.id);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(bias.id)) {
          auto& gb = t.grad_buffer(bias.id);
          for (std::size_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += g[r * cols + c];
            gb[c] += static_cast<T>(s);
          }
        }
      },
      "add_bias");
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.value().shape, a.value().data);
  for (auto& v : out.data) v *= s;
  return a.tape->record(
      std::move(out), {a},
      [a, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
      },
      "scale");
}

/// Elementwise product with a constant (non-differentiated) tensor of the same size.
template <class T>
Var<T> mul_constant(Var<T> a, std::vector<T> c) {
  detail::require(c.size() == a.value().numel(), "mul_constant", "length mismatch");
  Tensor<T> out(a.value().shape, a.value().data);
  for (std::size_t i = 0; i < c.size(); ++i) out.data[i] *= c[i];
  return a.tape->record(
      std::move(out), {a},
      [a, c = std::move(c)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c[i] * g[i];
      },
      "mul_constant");
}

/// Sum of all entries -> [1].
template <class T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().data) s += v;
  return a.tape->record(
      Tensor<T>({1}, static_cast<T>(s)), {a},
      [a](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self)[0];
        for (auto& v : t.grad_buffer(a.id)) v += g;
      },
      "sum");
}

/// Inverted dropout; identity when rate == 0.
template <class T>
Var<T> dropout(Var<T> a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw InvalidArgument("dropout rate must be < 1");
  std::vector<T> keep(a.value().numel());
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& k : keep) k = uniform01(rng) < rate ? T(0) : s;
  return mul_constant(a, std::move(keep));
}

/// Softmax over the last dimension, with per-row max subtraction.
template <class T>
Var<T> softmax_rows(Var<T> a) {
  const auto& A = a.value();
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out(A.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = A.data.data() + r * cols;
    T* y = out.data.data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] = static_cast<T>(std::exp(static_cast<double>(x[c] - mx)) / s);
  }
  return a.tape->record(
      std::move(out), {a},
      [a, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            ga[r * cols + c] += static_cast<T>(y[r * cols + c] * (g[r * cols + c] - dot));
        }
      },
      "softmax_rows");
}

/// Row-wise layer normalisation with learnable gain and shift.
template <class T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> shift, double eps = 1e-5) {
  const auto& A = a.value();
  const std::size_t rows = A.rows(), cols = A.cols();
  detail::require(gain.value().numel() == cols && shift.value().numel() == cols, "layer_norm", "parameter width");
  Tensor<T> out(A.shape);
  std::vector<T> xhat(A.numel());
  std::vector<double> rstd(rows);
  const auto& G = gain.value().data;
  const auto& Bs = shift.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = A.data.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (x[c] - mean) * rstd[r];
      xhat[r * cols + c] = static_cast<T>(xh);
      out.data[r * cols + c] = static_cast<T>(xh * G[c] + Bs[c]);
    }
  }
  return a.tape->record(
      std::move(out), {a, gain, shift},
      [a, gain, shift, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& Gv = t.value(gain.id).data;
        if (t.needs_grad(gain.id) || t.needs_grad(shift.id)) {
          std::vector<double> dg(cols, 0.0), db(cols, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              dg[c] += static_cast<double>(g[r * cols + c]) * xhat[r * cols + c];
              db[c] += g[r * cols + c];
            }
          if (t.needs_grad(gain.id)) {
            auto& gg = t.grad_buffer(gain.id);
            for (std::size_t c = 0; c < cols; ++c) gg[c] += static_cast<T>(dg[c]);
          }
          if (t.needs_grad(shift.id)) {
            auto& gb = t.grad_buffer(shift.id);
            for (std::size_t c = 0; c < cols; ++c) gb[c] += static_cast<T>(db[c]);
          }
        }
        if (!t.needs_grad(a.id)) return;
        auto& ga = t.grad_buffer(a.id);
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double gx = static_cast<double>(g[r * cols + c]) * Gv[c];
            mean_g += gx;
            mean_gx += gx * xhat[r * cols + c];
          }
          mean_g *= inv_n;
          mean_gx *= inv_n;
          for (std::size_t c = 0; c < cols; ++c) {
            const double gx = static_cast<double>(g[r * cols + c]) * Gv[c];
            ga[r * cols + c] += static_cast<T>(rstd[r] * (gx - mean_g - xhat[r * cols + c] * mean_gx));
          }
        }
      },
      "layer_norm");
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(Var<T> a) {
  const auto& A = a.value();
  Tensor<T> out(A.shape);
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < A.numel(); ++i) {
    const double x = A.data[i];
    out.data[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  return a.tape->record(
      std::move(out), {a},
      [a](Tape<T>& t, std::size_t self) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        const auto& g = t.grad_buffer(self);
        const auto& x = t.value(a.id).data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double xi = x[i];
          const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
          ga[i] += static_cast<T>(g[i] * (cdf + xi * pdf));
        }
      },
      "gelu");
}

/// Rows of a [V, d] table selected by index -> [n, d].
template <class T>
Var<T> embedding_gather(Var<T> table, std::vector<int> indices) {
  const auto& E = table.value();
  detail::require(E.rank() == 2 && !indices.empty(), "embedding_gather", "needs a 2-D table and indices");
  const std::size_t V = E.shape[0], d = E.shape[1];
  for (int ix : indices)
    if (ix < 0 || static_cast<std::size_t>(ix) >= V)
      throw IndexOutOfRange("embedding index " + std::to_string(ix) + " outside table of " + std::to_string(V));
  Tensor<T> out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(E.data.data() + static_cast<std::size_t>(indices[r]) * d, d, out.data.data() + r * d);
  return table.tape->record(
      std::move(out), {table},
      [table, d, indices = std::move(indices)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& ge = t.grad_buffer(table.id);
        for (std::size_t r = 0; r < indices.size(); ++r) {
          T* dst = ge.data() + static_cast<std::size_t>(indices[r]) * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
        }
      },
      "embedding_gather");
}

/// Stacks 2-D tensors with equal column counts along the row axis.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rank() == 2 && p.value().cols() == cols, "concat_rows", "column count differs");
    rows += p.value().rows();
  }
  Tensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().numel();
  }
  return parts[0].tape->record(
      std::move(out), std::span<const Var<T>>(parts),
      [parts](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        std::size_t o = 0;
        for (const auto& p : parts) {
          const std::size_t n = t.value(p.id).numel();
          if (t.needs_grad(p.id)) {
            auto& gp = t.grad_buffer(p.id);
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[o + i];
          }
          o += n;
        }
      },
      "concat_rows");
}

/// Rows [begin, end) of a 2-D tensor.
template <class T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  detail::require(A.rank() == 2 && begin < end && end <= A.shape[0], "slice_rows",
                  "rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(A.shape));
  const std::size_t cols = A.shape[1];
  Tensor<T> out({end - begin, cols},
                std::vector<T>(A.data.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                               A.data.begin() + static_cast<std::ptrdiff_t>(end * cols)));
  return a.tape->record(
      std::move(out), {a},
      [a, begin, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
      },
      "slice_rows");
}

/// Weighted negative log-likelihood of target classes under row probabilities:
/// -sum_i w_i log P[i, target_i] / normalizer. Rows with zero weight are never read.
template <class T>
Var<T> cross_entropy(Var<T> probs, std::vector<int> targets, std::vector<T> weights, double normalizer = 1.0) {
  const auto& P = probs.value();
  const std::size_t rows = P.rows(), cols = P.cols();
  detail::require(targets.size() == rows && weights.size() == rows, "cross_entropy", "one target and weight per row");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols)
      throw IndexOutOfRange("cross_entropy target " + std::to_string(targets[r]));
    loss -= weights[r] * std::log(static_cast<double>(P.data[r * cols + static_cast<std::size_t>(targets[r])]));
  }
  Tensor<T> out({1}, static_cast<T>(loss / normalizer));
  return probs.tape->record(
      std::move(out), {probs},
      [probs, cols, normalizer, targets = std::move(targets), weights = std::move(weights)](Tape<T>& t,
                                                                                           std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        const auto& p = t.value(probs.id).data;
        auto& gp = t.grad_buffer(probs.id);
        for (std::size_t r = 0; r < targets.size(); ++r) {
          if (weights[r] == T(0)) continue;
          const std::size_t k = r * cols + static_cast<std::size_t>(targets[r]);
          gp[k] += static_cast<T>(-g * weights[r] / (static_cast<double>(p[k]) * normalizer));
        }
      },
      "cross_entropy");
}

/// Token-major [p*B, d] (row j*B + b holds token j of sequence b) to per-head
/// sequences [B*H, p, d/H].
template <class T>
Var<T> to_heads(Var<T> x, std::size_t seq, std::size_t batch, std::size_t heads) {
  const auto& X = x.value();
  detail::require(X.rank() == 2 && X.shape[0] == seq * batch && X.shape[1] % heads == 0, "to_heads",
                  shape_str(X.shape));
  const std::size_t d = X.shape[1], dh = d / heads;
  Tensor<T> out({batch * heads, seq, dh});
  auto index = [=](std::size_t b, std::size_t h, std::size_t j) { return ((b * heads + h) * seq + j) * dh; };
  for (std::size_t j = 0; j < seq; ++j)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(X.data.data() + (j * batch + b) * d + h * dh, dh, out.data.data() + index(b, h, j));
  return x.tape->record(
      std::move(out), {x},
      [x, seq, batch, heads, d, dh, index](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& gx = t.grad_buffer(x.id);
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h) {
              const T* src = g.data() + index(b, h, j);
              T* dst = gx.data() + (j * batch + b) * d + h * dh;
              for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
            }
      },
      "to_heads");
}

/// Inverse of to_heads: [B*H, p, dh] -> [p*B, H*dh].
template <class T>
Var<T> from_heads(Var<T> x, std::size_t seq, std::size_t batch, std::size_t heads) {
  const auto& X = x.value();
  detail::require(X.rank() == 3 && X.shape[0] == batch * heads && X.shape[1] == seq, "from_heads", shape_str(X.shape));
  const std::size_t dh = X.shape[2], d = dh * heads;
  Tensor<T> out({seq * batch, d});
  auto index = [=](std::size_t b, std::size_t h, std::size_t j) { return ((b * heads + h) * seq + j) * dh; };
  for (std::size_t j = 0; j < seq; ++j)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(X.data.data() + index(b, h, j), dh, out.data.data() + (j * batch + b) * d + h * dh);
  return x.tape->record(
      std::move(out), {x},
      [x, seq, batch, heads, d, dh, index](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& gx = t.grad_buffer(x.id);
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h) {
              const T* src = g.data() + (j * batch + b) * d + h * dh;
              T* dst = gx.data() + index(b, h, j);
              for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
            }
      },
      "from_heads");
}

/// Per-group products: [G,m,k] x [G,k,n] -> [G,m,n], or with transpose_b
/// [G,m,k] x [G,n,k]^T -> [G,m,n]. Meant for the short sequences of attention.
template <class T>
Var<T> batched_matmul(Var<T> a, Var<T> b, bool transpose_b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::require(A.rank() == 3 && B.rank() == 3 && A.shape[0] == B.shape[0], "batched_matmul",
                  shape_str(A.shape) + " x " + shape_str(B.shape));
  const std::size_t G = A.shape[0], m = A.shape[1], k = A.shape[2];
  const std::size_t n = transpose_b ? B.shape[1] : B.shape[2];
  detail::require((transpose_b ? B.shape[2] : B.shape[1]) == k, "batched_matmul", "inner dimension");
  // b element (kk, nn) of group g
  auto bidx = [=](std::size_t g, std::size_t kk, std::size_t nn) {
    return transpose_b ? (g * n + nn) * k + kk : (g * k + kk) * n + nn;
  };
  Tensor<T> out({G, m, n});
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t kk = 0; kk < k; ++kk) s += A.data[(g * m + i) * k + kk] * B.data[bidx(g, kk, j)];
        out.data[(g * m + i) * n + j] = s;
      }
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, G, m, k, n, bidx](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& Av = t.value(a.id).data;
        const auto& Bv = t.value(b.id).data;
        const bool need_a = t.needs_grad(a.id), need_b = t.needs_grad(b.id);
        std::vector<T>* ga = need_a ? &t.grad_buffer(a.id) : nullptr;
        std::vector<T>* gb = need_b ? &t.grad_buffer(b.id) : nullptr;
        for (std::size_t gi = 0; gi < G; ++gi)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T go = g[(gi * m + i) * n + j];
              for (std::size_t kk = 0; kk < k; ++kk) {
                if (need_a) (*ga)[(gi * m + i) * k + kk] += go * Bv[bidx(gi, kk, j)];
                if (need_b) (*gb)[bidx(gi, kk, j)] += go * Av[(gi * m + i) * k + kk];
              }
            }
      },
      "batched_matmul");
}

}  // namespace macode::ad
