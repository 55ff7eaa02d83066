#include "ctxbert/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ctxbert::autograd {
namespace {

template <typename T>
using NodeT = detail::Node<T>;

// Grad buffer of parent `i`, or nullptr if that parent does not need one.
template <typename T>
std::vector<T>* parent_grad(NodeT<T>& self, std::size_t i) {
  auto& parent = *self.parents[i];
  return parent.requires_grad ? &parent.ensure_grad() : nullptr;
}

template <typename T>
const std::vector<T>& parent_data(NodeT<T>& self, std::size_t i) {
  return self.parents[i]->data;
}

template <typename T>
void require_same_shape(const Tensor<T>& x, const Tensor<T>& y, const char* op) {
  if (x.shape() != y.shape())
    throw ShapeError(std::string(op) + ": shapes " + to_string(x.shape()) + " and " +
                     to_string(y.shape()) + " differ");
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op) {
  if (x.rank() > 2)
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + to_string(x.shape()));
}

// y += a * x over n contiguous elements.
template <typename T>
inline void axpy(std::size_t n, T a, const T* x, T* y) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

// Four interleaved partial sums: a fixed summation order that the compiler
// can still vectorize.
template <typename T>
inline T dot(std::size_t n, const T* x, const T* y) {
  T s0{0}, s1{0}, s2{0}, s3{0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += x[k] * y[k];
    s1 += x[k + 1] * y[k + 1];
    s2 += x[k + 2] * y[k + 2];
    s3 += x[k + 3] * y[k + 3];
  }
  for (; k < n; ++k) s0 += x[k] * y[k];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
Tensor<T> linear_impl(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  require_matrix(x, "linear");
  if (weight.rank() != 2) throw ShapeError("linear: weight must be rank 2, got " + to_string(weight.shape()));
  const std::size_t n = x.rows(), d_in = x.cols();
  const std::size_t d_out = weight.shape()[0];
  if (weight.shape()[1] != d_in)
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  if (bias && (bias->size() != d_out || bias->rank() != 1))
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " incompatible with weight " +
                     to_string(weight.shape()));

  const auto xs = x.data();
  const auto ws = weight.data();
  std::vector<T> out(n * d_out);
  const T* b = bias ? bias->data().data() : nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = xs.data() + i * d_in;
    T* yi = out.data() + i * d_out;
    for (std::size_t o = 0; o < d_out; ++o) yi[o] = dot(d_in, xi, ws.data() + o * d_in) + (b ? b[o] : T{0});
  }

  Shape shape = x.rank() == 1 ? Shape{d_out} : Shape{n, d_out};
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return Tensor<T>::make_result(
      std::move(shape), std::move(out), std::move(inputs),
      [n, d_in, d_out, has_bias](NodeT<T>& self) {
        const auto& dy = self.grad;
        const auto& xv = parent_data(self, 0);
        const auto& wv = parent_data(self, 1);
        if (auto* dx = parent_grad(self, 0))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < d_out; ++o)
              axpy(d_in, dy[i * d_out + o], wv.data() + o * d_in, dx->data() + i * d_in);
        if (auto* dw = parent_grad(self, 1))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < d_out; ++o)
              axpy(d_in, dy[i * d_out + o], xv.data() + i * d_in, dw->data() + o * d_in);
        if (has_bias)
          if (auto* db = parent_grad(self, 2))
            for (std::size_t i = 0; i < n; ++i) axpy(d_out, T{1}, dy.data() + i * d_out, db->data());
      });
}

template <typename T>
Tensor<T> layer_norm_impl(const Tensor<T>& x, double eps, const Tensor<T>* gain,
                          const Tensor<T>* bias) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain && (gain->size() != d || bias->size() != d))
    throw ShapeError("layer_norm: affine parameters must have width " + std::to_string(d));
  const auto xs = x.data();
  std::vector<T> normalized(n * d);
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xs.data() + i * d;
    T mean = 0;
    for (std::size_t k = 0; k < d; ++k) mean += row[k];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t k = 0; k < d; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= static_cast<T>(d);
    inv_std[i] = T{1} / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t k = 0; k < d; ++k) normalized[i * d + k] = (row[k] - mean) * inv_std[i];
  }
  std::vector<T> out = normalized;
  if (gain) {
    const auto g = gain->data();
    const auto b = bias->data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] = out[i * d + k] * g[k] + b[k];
  }
  std::vector<Tensor<T>> inputs{x};
  if (gain) {
    inputs.push_back(*gain);
    inputs.push_back(*bias);
  }
  const bool affine = gain != nullptr;
  return Tensor<T>::make_result(
      x.shape(), std::move(out), std::move(inputs),
      [n, d, affine, normalized = std::move(normalized), inv_std = std::move(inv_std)](NodeT<T>& self) {
        const auto& dy = self.grad;
        std::vector<T> dxhat(dy.begin(), dy.end());
        if (affine) {
          const auto& g = parent_data(self, 1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) dxhat[i * d + k] *= g[k];
          if (auto* dg = parent_grad(self, 1))
            for (std::size_t i = 0; i < n * d; ++i) (*dg)[i % d] += dy[i] * normalized[i];
          if (auto* db = parent_grad(self, 2))
            for (std::size_t i = 0; i < n * d; ++i) (*db)[i % d] += dy[i];
        }
        if (auto* dx = parent_grad(self, 0)) {
          for (std::size_t i = 0; i < n; ++i) {
            T mean_g = 0, mean_gx = 0;
            for (std::size_t k = 0; k < d; ++k) {
              mean_g += dxhat[i * d + k];
              mean_gx += dxhat[i * d + k] * normalized[i * d + k];
            }
            mean_g /= static_cast<T>(d);
            mean_gx /= static_cast<T>(d);
            for (std::size_t k = 0; k < d; ++k)
              (*dx)[i * d + k] +=
                  inv_std[i] * (dxhat[i * d + k] - mean_g - normalized[i * d + k] * mean_gx);
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight) {
  return linear_impl<T>(x, weight, nullptr);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear_impl<T>(x, weight, &bias);
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "add");
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto ys = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ys[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y}, [](NodeT<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "mul");
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto ys = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= ys[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y}, [](NodeT<T>& self) {
    const auto& xv = parent_data(self, 0);
    const auto& yv = parent_data(self, 1);
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * yv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * xv[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [factor](NodeT<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::max(v, T{0});
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    const auto& xv = parent_data(self, 0);
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xv[i] > T{0}) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result({1}, {total}, {x}, [](NodeT<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T max = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) max = std::max(max, xs[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(xs[base + k * inner] - max);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  std::vector<T> saved = out;
  return Tensor<T>::make_result(
      shape, std::move(out), {x}, [outer, inner, len, y = std::move(saved)](NodeT<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const auto& dy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t k = 0; k < len; ++k) dot += dy[base + k * inner] * y[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              (*g)[i] += y[i] * (dy[i] - dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps) {
  return layer_norm_impl<T>(x, eps, nullptr, nullptr);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps, const Tensor<T>& gain, const Tensor<T>& bias) {
  return layer_norm_impl<T>(x, eps, &gain, &bias);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](NodeT<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& part : parts) {
    require_matrix(part, "concat_rows");
    if (part.cols() != d)
      throw ShapeError("concat_rows: width " + std::to_string(part.cols()) + " != " + std::to_string(d));
    rows += part.rows();
  }
  std::vector<T> out;
  out.reserve(rows * d);
  std::vector<std::size_t> offsets;
  for (const auto& part : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), part.data().begin(), part.data().end());
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::make_result({rows, d}, std::move(out), std::move(inputs),
                                [offsets = std::move(offsets)](NodeT<T>& self) {
                                  for (std::size_t p = 0; p < offsets.size(); ++p)
                                    if (auto* g = parent_grad(self, p))
                                      for (std::size_t i = 0; i < g->size(); ++i)
                                        (*g)[i] += self.grad[offsets[p] + i];
                                });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& left, const Tensor<T>& right) {
  require_matrix(left, "concat_cols");
  require_matrix(right, "concat_cols");
  const std::size_t n = left.rows();
  if (right.rows() != n)
    throw ShapeError("concat_cols: row counts " + to_string(left.shape()) + " and " +
                     to_string(right.shape()) + " differ");
  const std::size_t a = left.cols(), b = right.cols();
  std::vector<T> out(n * (a + b));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(left.data().data() + i * a, a, out.data() + i * (a + b));
    std::copy_n(right.data().data() + i * b, b, out.data() + i * (a + b) + a);
  }
  Shape shape = left.rank() == 1 && right.rank() == 1 ? Shape{a + b} : Shape{n, a + b};
  return Tensor<T>::make_result(std::move(shape), std::move(out), {left, right},
                                [n, a, b](NodeT<T>& self) {
                                  if (auto* g = parent_grad(self, 0))
                                    for (std::size_t i = 0; i < n; ++i)
                                      axpy(a, T{1}, self.grad.data() + i * (a + b), g->data() + i * a);
                                  if (auto* g = parent_grad(self, 1))
                                    for (std::size_t i = 0; i < n; ++i)
                                      axpy(b, T{1}, self.grad.data() + i * (a + b) + a, g->data() + i * b);
                                });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t rows = table.rows(), d = table.cols();
  for (std::size_t id : ids)
    if (id >= rows)
      throw OutOfVocabularyError("id " + std::to_string(id) + " out of range for table with " +
                                 std::to_string(rows) + " rows");
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  return Tensor<T>::make_result({ids.size(), d}, std::move(out), {table},
                                [d, ids = std::vector<std::size_t>(ids.begin(), ids.end())](NodeT<T>& self) {
                                  if (auto* g = parent_grad(self, 0))
                                    for (std::size_t i = 0; i < ids.size(); ++i)
                                      axpy(d, T{1}, self.grad.data() + i * d, g->data() + ids[i] * d);
                                });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(x.shape()));
  const std::size_t d = x.cols();
  std::vector<T> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return Tensor<T>::make_result({end - begin, d}, std::move(out), {x}, [begin, d](NodeT<T>& self) {
    if (auto* g = parent_grad(self, 0))
      axpy(self.grad.size(), T{1}, self.grad.data(), g->data() + begin * d);
  });
}

template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy_with_logits");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n)
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  for (std::size_t t : targets)
    if (t >= v)
      throw OutOfVocabularyError("target " + std::to_string(t) + " out of range for " +
                                 std::to_string(v) + " classes");
  const auto xs = logits.data();
  std::vector<T> probs(n * v);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xs.data() + i * v;
    const T max = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t k = 0; k < v; ++k) z += std::exp(static_cast<double>(row[k] - max));
    const double lse = static_cast<double>(max) + std::log(z);
    total += lse - static_cast<double>(row[targets[i]]);
    for (std::size_t k = 0; k < v; ++k)
      probs[i * v + k] = static_cast<T>(std::exp(static_cast<double>(row[k]) - lse));
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  return Tensor<T>::make_result(
      {1}, {loss}, {logits},
      [n, v, probs = std::move(probs), targets = std::vector<std::size_t>(targets.begin(), targets.end())](
          NodeT<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const T factor = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < v; ++k) (*g)[i * v + k] += factor * probs[i * v + k];
          (*g)[i * v + targets[i]] -= factor;
        }
      });
}

AttentionLayout self_attention_layout(std::span<const std::size_t> begins,
                                      std::span<const std::size_t> lengths) {
  if (begins.size() != lengths.size()) throw ShapeError("self_attention_layout: size mismatch");
  AttentionLayout layout;
  layout.reserve(begins.size());
  for (std::size_t s = 0; s < begins.size(); ++s)
    layout.push_back({begins[s], lengths[s], begins[s], lengths[s], {}});
  return layout;
}

template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& queries, const Tensor<T>& keys,
                                       const Tensor<T>& values, const AttentionLayout& layout,
                                       std::size_t n_heads) {
  require_matrix(queries, "attention");
  require_matrix(keys, "attention");
  require_matrix(values, "attention");
  const std::size_t d = queries.cols();
  if (keys.cols() != d || values.cols() != d || keys.rows() != values.rows())
    throw ShapeError("attention: Q " + to_string(queries.shape()) + ", K " + to_string(keys.shape()) +
                     ", V " + to_string(values.shape()) + " are incompatible");
  if (n_heads == 0 || d % n_heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  const std::size_t dh = d / n_heads;
  const std::size_t n_q = queries.rows(), n_k = keys.rows();

  std::vector<std::uint8_t> covered(n_q, 0);
  std::size_t prob_total = 0;
  for (const auto& seg : layout) {
    if (seg.query_len == 0 || seg.key_len == 0 || seg.query_begin + seg.query_len > n_q ||
        seg.key_begin + seg.key_len > n_k)
      throw ShapeError("attention: segment out of range");
    if (!seg.allowed.empty() && seg.allowed.size() != seg.query_len * seg.key_len)
      throw ShapeError("attention: mask has " + std::to_string(seg.allowed.size()) + " entries, expected " +
                       std::to_string(seg.query_len * seg.key_len));
    for (std::size_t i = 0; i < seg.query_len; ++i) {
      if (covered[seg.query_begin + i]++) throw ShapeError("attention: query row in two segments");
      if (!seg.allowed.empty() &&
          std::none_of(seg.allowed.begin() + i * seg.key_len, seg.allowed.begin() + (i + 1) * seg.key_len,
                       [](std::uint8_t a) { return a != 0; }))
        throw UsageError("attention: query row " + std::to_string(seg.query_begin + i) +
                         " has every key masked");
    }
    prob_total += n_heads * seg.query_len * seg.key_len;
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end())
    throw ShapeError("attention: query rows not covered by the layout");

  const T scale_factor = T{1} / std::sqrt(static_cast<T>(dh));
  const auto q = queries.data();
  const auto k = keys.data();
  const auto v = values.data();
  std::vector<T> out(n_q * d, T{0});
  std::vector<T> probs(prob_total);
  std::size_t offset = 0;
  for (const auto& seg : layout) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col = h * dh;
      for (std::size_t i = 0; i < seg.query_len; ++i) {
        T* p = probs.data() + offset + i * seg.key_len;
        const T* qi = q.data() + (seg.query_begin + i) * d + col;
        T max = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seg.key_len; ++j) {
          if (!seg.allowed.empty() && !seg.allowed[i * seg.key_len + j]) {
            p[j] = -std::numeric_limits<T>::infinity();
            continue;
          }
          const T* kj = k.data() + (seg.key_begin + j) * d + col;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          p[j] = dot * scale_factor;
          max = std::max(max, p[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < seg.key_len; ++j) {
          p[j] = std::exp(p[j] - max);
          total += p[j];
        }
        T* oi = out.data() + (seg.query_begin + i) * d + col;
        for (std::size_t j = 0; j < seg.key_len; ++j) {
          p[j] /= total;
          axpy(dh, p[j], v.data() + (seg.key_begin + j) * d + col, oi);
        }
      }
      offset += seg.query_len * seg.key_len;
    }
  }

  return Tensor<T>::make_result(
      {n_q, d}, std::move(out), {queries, keys, values},
      [layout, n_heads, d, dh, scale_factor, probs = std::move(probs)](NodeT<T>& self) {
        const auto& qv = parent_data(self, 0);
        const auto& kv = parent_data(self, 1);
        const auto& vv = parent_data(self, 2);
        auto* dq = parent_grad(self, 0);
        auto* dk = parent_grad(self, 1);
        auto* dv = parent_grad(self, 2);
        const auto& dout = self.grad;
        std::vector<T> dscore;
        std::size_t offset = 0;
        for (const auto& seg : layout) {
          dscore.resize(seg.key_len);
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t col = h * dh;
            for (std::size_t i = 0; i < seg.query_len; ++i) {
              const T* p = probs.data() + offset + i * seg.key_len;
              const std::size_t qi = (seg.query_begin + i) * d + col;
              const T* go = dout.data() + qi;
              T weighted = 0;
              for (std::size_t j = 0; j < seg.key_len; ++j) {
                const std::size_t kj = (seg.key_begin + j) * d + col;
                T dp = 0;
                for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vv[kj + c];
                dscore[j] = dp;
                weighted += p[j] * dp;
                if (dv) axpy(dh, p[j], go, dv->data() + kj);
              }
              for (std::size_t j = 0; j < seg.key_len; ++j) {
                const T ds = p[j] * (dscore[j] - weighted) * scale_factor;
                if (ds == T{0}) continue;
                const std::size_t kj = (seg.key_begin + j) * d + col;
                if (dq) axpy(dh, ds, kv.data() + kj, dq->data() + qi);
                if (dk) axpy(dh, ds, qv.data() + qi, dk->data() + kj);
              }
            }
            offset += seg.query_len * seg.key_len;
          }
        }
      });
}

#define CTXBERT_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, double);                                       \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, double, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&);                              \
  template Tensor<T> concat_rows<T>(std::span<const Tensor<T>>);                                    \
  template Tensor<T> concat_cols<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> cross_entropy_with_logits<T>(const Tensor<T>&, std::span<const std::size_t>);  \
  template Tensor<T> scaled_dot_product_attention<T>(const Tensor<T>&, const Tensor<T>&,            \
                                                     const Tensor<T>&, const AttentionLayout&,      \
                                                     std::size_t);

CTXBERT_INSTANTIATE_OPS(float)
CTXBERT_INSTANTIATE_OPS(double)

#undef CTXBERT_INSTANTIATE_OPS

}  // namespace ctxbert::autograd
