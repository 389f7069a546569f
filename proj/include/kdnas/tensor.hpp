#pragma once

// Dense double-precision tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap shared handle onto an immutable node. Operations build a
// DAG whose nodes own closures that push gradients into their parents; calling
// backward() on a scalar walks that DAG in reverse topological order. When no
// operand requires a gradient the result records nothing, so inference paths
// allocate no graph.
//
// All operations are single-threaded and reduce in a fixed order, so results are
// bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kdnas/errors.hpp"

namespace kdnas {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor identity(std::size_t n, bool requires_grad = false) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return matrix(n, n, std::move(v), requires_grad);
  }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }

  std::size_t rows() const {
    require_matrix();
    return node_->shape[0];
  }
  std::size_t cols() const {
    require_matrix();
    return node_->shape[1];
  }

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }

  // Gradient accumulated by backward(); zeros when none has been accumulated yet.
  std::vector<double> grad() const {
    if (has_grad()) return node_->grad;
    return std::vector<double>(size(), 0.0);
  }

  // In-place access for optimizers. Only meaningful on leaf parameters.
  std::span<double> mutable_values() { return node_->value; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  void set_requires_grad(bool on) { node_->requires_grad = on; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Copy of the values with no history and no gradient tracking.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  // Deep copy that keeps the gradient-tracking flag but none of the history.
  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  void require_matrix() const {
    if (node_->shape.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(node_->shape));
  }

  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto* n : order) n->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

inline void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& pa = *self.parents[0];
    const auto& pb = *self.parents[1];
    const double* dC = self.grad.data();
    if (pa.requires_grad) {
      double* dA = self.parents[0]->grad.data();
      const double* Bv = pb.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * Bv[p * n + j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      double* dB = self.parents[1]->grad.data();
      const double* Av = pa.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * dC[i * n + j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return detail::make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    double* d = self.parents[0]->grad.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants(self, p)) continue;
      auto& g = self.parents[p]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants(self, p)) continue;
      auto& g = self.parents[p]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[p] * self.grad[i];
    }
  });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

namespace detail {

inline void require_row_vector(const Tensor& a, const Tensor& v, std::string_view op) {
  require_matrix(a, op);
  if (v.size() != a.cols()) {
    throw DimensionError(std::string(op) + ": row operand " + shape_str(v.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
}

}  // namespace detail

// a[i, :] + bias for every row i.
inline Tensor add_row(const Tensor& a, const Tensor& bias) {
  detail::require_row_vector(a, bias, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  return detail::make_result(a.shape(), std::move(out), {a, bias}, [m, n](detail::Node& self) {
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// a[i, :] * gain elementwise for every row i.
inline Tensor mul_row(const Tensor& a, const Tensor& gain) {
  detail::require_row_vector(a, gain, "mul_row");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * gain[j];
  return detail::make_result(a.shape(), std::move(out), {a, gain}, [m, n](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * gv[j];
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * av[i * n + j];
    }
  });
}

namespace detail {

// Elementwise map with derivative expressed through input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, detail::logistic, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { gelu, relu, silu };

inline constexpr Activation kAllActivations[] = {Activation::gelu, Activation::relu, Activation::silu};

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
  }
  return "?";
}

inline Activation activation_from_name(std::string_view name) {
  for (auto a : kAllActivations)
    if (activation_name(a) == name) return a;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

// Exact GELU x*Phi(x); SiLU x*sigmoid(x).
inline Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::gelu:
      return detail::unary(
          x, [](double v) { return v * detail::std_normal_cdf(v); },
          [](double v, double) { return detail::std_normal_cdf(v) + v * detail::std_normal_pdf(v); });
    case Activation::relu:
      return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
    case Activation::silu:
      return detail::unary(
          x, [](double v) { return v * detail::logistic(v); },
          [](double v, double) {
            const double s = detail::logistic(v);
            return s * (1.0 + v * (1.0 - s));
          });
  }
  throw ConfigError("unknown activation kind");
}

inline Tensor activation(std::string_view kind, const Tensor& x) { return activation(activation_from_name(kind), x); }

// ---------------------------------------------------------------------------
// Row-wise normalizations

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* dy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-12;

// (x - mean) / sqrt(var + eps) per row; population variance.
inline Tensor normalize_rows(const Tensor& x, double eps = kLayerNormEps) {
  detail::require_matrix(x, "normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (row[j] - mean) * inv_std[i];
  }
  return detail::make_result(x.shape(), std::move(out), {x},
                             [m, n, inv_std = std::move(inv_std)](detail::Node& self) {
                               auto& g = self.parents[0]->grad;
                               const double dn = static_cast<double>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                 const double* y = self.value.data() + i * n;
                                 const double* dy = self.grad.data() + i * n;
                                 double mean_dy = 0.0, mean_dyy = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                   mean_dy += dy[j];
                                   mean_dyy += dy[j] * y[j];
                                 }
                                 mean_dy /= dn;
                                 mean_dyy /= dn;
                                 for (std::size_t j = 0; j < n; ++j)
                                   g[i * n + j] += inv_std[i] * (dy[j] - mean_dy - y[j] * mean_dyy);
                               }
                             });
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return add_row(mul_row(normalize_rows(x), gain), bias);
}

// ---------------------------------------------------------------------------
// Structural

inline Tensor slice(const Tensor& a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  detail::require_matrix(a, "slice");
  const std::size_t n = a.cols();
  if (r0 + nr > a.rows() || c0 + nc > n) {
    throw DimensionError("slice [" + std::to_string(r0) + "+" + std::to_string(nr) + ", " + std::to_string(c0) + "+" +
                         std::to_string(nc) + "] out of range for " + shape_str(a.shape()));
  }
  std::vector<double> out(nr * nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) out[i * nc + j] = a[(r0 + i) * n + c0 + j];
  return detail::make_result({nr, nc}, std::move(out), {a}, [r0, nr, c0, nc, n](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) g[(r0 + i) * n + c0 + j] += self.grad[i * nc + j];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t nr) { return slice(a, r0, nr, 0, a.cols()); }
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t nc) { return slice(a, 0, a.rows(), c0, nc); }

// Column-wise concatenation of matrices with equal row counts.
inline Tensor hcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("hcat of nothing");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "hcat");
    if (p.rows() != m) throw DimensionError("hcat: row mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(n);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + offsets[k] + j] = parts[k][i * w + j];
  }
  return detail::make_result({m, n}, std::move(out), parts, [m, n, offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!detail::wants(self, k)) continue;
      auto& p = *self.parents[k];
      const std::size_t w = p.shape[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) p.grad[i * w + j] += self.grad[i * n + offsets[k] + j];
    }
  });
}

// Row-wise concatenation of matrices with equal column counts.
inline Tensor vcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("vcat of nothing");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    detail::require_matrix(p, "vcat");
    if (p.cols() != n) throw DimensionError("vcat: column mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    m += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return detail::make_result({m, n}, std::move(out), parts, [](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad)
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[offset + i];
      offset += p.value.size();
    }
  });
}

// Embedding lookup: row ids[i] of table becomes output row i.
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  detail::require_matrix(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw InputError("index " + std::to_string(ids[i]) + " out of range for " + std::to_string(v) + " rows");
    }
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return detail::make_result({ids.size(), d}, std::move(out), {table}, [d, idx = std::move(idx)](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[i]) * d + j] += self.grad[i * d + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses (scalar results have shape {})

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return detail::make_result({}, {total}, {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad;
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Sum of scalars (shape {}) into one scalar.
inline Tensor add_scalars(const std::vector<Tensor>& terms) {
  double total = 0.0;
  for (const auto& t : terms) total += t.item();
  return detail::make_result({}, {total}, terms, [](detail::Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad[0] += self.grad[0];
  });
}

// Mean over all elements of (pred - target)^2.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "mse");
  const std::size_t n = pred.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    total += d * d;
  }
  return detail::make_result({}, {total / static_cast<double>(n)}, {pred, target}, [n](detail::Node& self) {
    const auto& p = self.parents[0]->value;
    const auto& t = self.parents[1]->value;
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (p[i] - t[i]);
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (p[i] - t[i]);
    }
  });
}

inline constexpr double kCrossEntropyFloor = 1e-12;
inline constexpr double kStochasticTolerance = 1e-9;

namespace detail {

inline void require_row_stochastic(const Tensor& t, std::string_view what) {
  const std::size_t m = t.rows(), n = t.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = t[i * n + j];
      if (!(v >= 0.0)) throw ContractViolation(std::string(what) + " has a negative or NaN entry in row " + std::to_string(i));
      total += v;
    }
    if (std::abs(total - 1.0) > kStochasticTolerance) {
      throw ContractViolation(std::string(what) + " row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
}

}  // namespace detail

// Mean over rows of -sum_j target[i,j] * log(pred[i,j] + floor).
inline Tensor row_cross_entropy(const Tensor& target_dist, const Tensor& pred_dist) {
  detail::require_matrix(target_dist, "row_cross_entropy");
  detail::require_same_shape(target_dist, pred_dist, "row_cross_entropy");
  detail::require_row_stochastic(target_dist, "row_cross_entropy target");
  detail::require_row_stochastic(pred_dist, "row_cross_entropy prediction");
  const std::size_t m = target_dist.rows(), n = target_dist.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < m * n; ++i) total -= target_dist[i] * std::log(pred_dist[i] + kCrossEntropyFloor);
  return detail::make_result({}, {total / static_cast<double>(m)}, {target_dist, pred_dist}, [m, n](detail::Node& self) {
    const auto& t = self.parents[0]->value;
    const auto& p = self.parents[1]->value;
    const double c = self.grad[0] / static_cast<double>(m);
    if (detail::wants(self, 0)) {
      auto& g = self.parents[0]->grad;
      for (std::size_t i = 0; i < m * n; ++i) g[i] -= c * std::log(p[i] + kCrossEntropyFloor);
    }
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < m * n; ++i) g[i] -= c * t[i] / (p[i] + kCrossEntropyFloor);
    }
  });
}

}  // namespace kdnas
