#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tcr/prng.hpp"

namespace tcr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Executed matmul FLOPs (2*M*K*N per product) and live tensor scalars.
// Thread-local so concurrent forward passes meter independently.
struct OpMeter {
  long long matmul_flops = 0;
  long long live_values = 0;
  long long peak_values = 0;
};

inline OpMeter& op_meter() {
  thread_local OpMeter m;
  return m;
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  TensorNode(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    auto& m = op_meter();
    m.live_values += static_cast<long long>(values.size());
    m.peak_values = std::max(m.peak_values, m.live_values);
  }
  ~TensorNode() { op_meter().live_values -= static_cast<long long>(values.size()); }

  TensorNode(const TensorNode&) = delete;
  TensorNode& operator=(const TensorNode&) = delete;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

// Dense real tensor participating in reverse-mode autodiff. Value-semantic
// handle to a shared graph node; ops build the graph, backward() walks it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_values(std::move(shape), {}, requires_grad, 0.0);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    return from_values(std::move(shape), {}, requires_grad, v);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad, 0.0);
  }
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape " +
                                  shape_str(shape));
    return from_values(std::move(shape), std::move(values), requires_grad, 0.0);
  }
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = stddev * rng.next_gauss();
    return from(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->values.size(); }
  const std::vector<double>& values() const { return node_->values; }
  double value_at(std::size_t i) const { return node_->values.at(i); }
  double scalar_value() const {
    if (size() != 1) throw std::invalid_argument("scalar_value on tensor of size " + std::to_string(size()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::runtime_error("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Direct mutation is for initialization and finite-difference probing only;
  // it invalidates any graph already built on this tensor.
  std::vector<double>& mutable_values() { return node_->values; }

  std::shared_ptr<TensorNode> node() const { return node_; }

  friend Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward_fn);

 private:
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad, double fill) {
    Tensor t;
    if (values.empty() && shape_numel(shape) != 0) values.assign(shape_numel(shape), fill);
    t.node_ = std::make_shared<TensorNode>(std::move(shape), std::move(values));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<TensorNode> node_;
};

// Builds an op result node. Parents and the backward fn are recorded only
// when some parent requires grad, so constant subgraphs fold away.
inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  Tensor t;
  t.node_ = std::make_shared<TensorNode>(std::move(shape), std::move(values));
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  t.node_->requires_grad = rg;
  if (rg) {
    t.node_->parents.reserve(parents.size());
    for (const Tensor& p : parents) t.node_->parents.push_back(p.node());
    t.node_->backward_fn = std::move(backward_fn);
  }
  return t;
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

inline void check_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_str(a.shape()));
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  // Same shape, or b is rank-1 matching the last extent (bias broadcast).
  const bool broadcast = b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0) && a.shape() != b.shape();
  if (!broadcast) detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t d = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[broadcast ? i % d : i];
  return make_op(a.shape(), std::move(out), {a, b}, [broadcast, d](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[broadcast ? i % d : i] += n.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.values[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * c;
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// a * s where s is a scalar tensor (learnable temperature and the like).
inline Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("mul_scalar_t: scalar operand has size " + std::to_string(s.size()));
  const double sv = s.values()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * sv;
  return make_op(a.shape(), std::move(out), {a, s}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& ps = *n.parents[1];
    const double sval = ps.values[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * sval;
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * pa.values[i];
      ps.grad[0] += acc;
    }
  });
}

inline Tensor exp_t(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * n.values[i];
  });
}

inline Tensor log_t(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.values()[i] <= 0.0) throw std::invalid_argument("log: non-positive input");
    out[i] = std::log(a.values()[i]);
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] / pa.values[i];
  });
}

inline Tensor reciprocal(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.values()[i] == 0.0) throw std::invalid_argument("reciprocal: zero input");
    out[i] = 1.0 / a.values()[i];
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] -= n.grad[i] * n.values[i] * n.values[i];
  });
}

inline Tensor sqrt_t(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.values()[i] < 0.0) throw std::invalid_argument("sqrt: negative input");
    out[i] = std::sqrt(a.values()[i]);
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * 0.5 / n.values[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * n.values[i] * (1.0 - n.values[i]);
  });
}

inline Tensor gelu(const Tensor& a) {
  // Exact erf form; derivative is Phi(x) + x*phi(x).
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = pa.values[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa.grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

// Gradient passes through unclamped positions only.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.values()[i]));
  return make_op(a.shape(), std::move(out), {a}, [lo, hi](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (pa.values[i] > lo && pa.values[i] < hi) pa.grad[i] += n.grad[i];
  });
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  op_meter().matmul_flops += 2LL * static_cast<long long>(m) * static_cast<long long>(k) * static_cast<long long>(n);
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = av + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = arow[p];
      if (aval == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aval * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const double* g = node.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();  // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          const double* brow = pb.values.data() + j;
          double* garow = pa.grad.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += gv * brow[0 + p * n];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();  // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa.values.data() + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aval = arow[p];
          if (aval == 0.0) continue;
          double* gbrow = pb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aval * grow[j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::check_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
  return make_op({c, r}, std::move(out), {a}, [r, c](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += n.grad[j * r + i];
  });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 1, "dot");
  detail::check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
  return make_op({1}, {acc}, {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const double g = n.grad[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < pa.values.size(); ++i) pa.grad[i] += g * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < pb.values.size(); ++i) pb.grad[i] += g * pa.values[i];
    }
  });
}

// ---- structure ----

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_op(std::move(shape), a.values(), {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  detail::check_rank(a, 2, "slice_rows");
  if (r0 > r1 || r1 > a.dim(0)) throw std::invalid_argument("slice_rows: bad range");
  const std::size_t c = a.dim(1);
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                          a.values().begin() + static_cast<std::ptrdiff_t>(r1 * c));
  return make_op({r1 - r0, c}, std::move(out), {a}, [r0, c](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[r0 * c + i] += n.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  detail::check_rank(a, 2, "slice_cols");
  if (c0 > c1 || c1 > a.dim(1)) throw std::invalid_argument("slice_cols: bad range");
  const std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + c0 + j];
  return make_op({r, w}, std::move(out), {a}, [r, c, c0, w](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) pa.grad[i * c + c0 + j] += n.grad[i * w + j];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const std::size_t c = parts[0].dim(1);
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    detail::check_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::size_t> part_sizes;
  for (const Tensor& p : parts) part_sizes.push_back(p.size());
  return make_op({rows, c}, std::move(out), parts, [part_sizes](TensorNode& n) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
      auto& p = *n.parents[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < part_sizes[pi]; ++i) p.grad[i] += n.grad[off + i];
      }
      off += part_sizes[pi];
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t r = parts[0].dim(0);
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    detail::check_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  std::vector<double> out(r * cols);
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  std::size_t coff = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[pi]; ++j) out[i * cols + coff + j] = pv[i * widths[pi] + j];
    coff += widths[pi];
  }
  return make_op({r, cols}, std::move(out), parts, [r, cols, widths](TensorNode& n) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
      auto& p = *n.parents[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[pi]; ++j) p.grad[i * widths[pi] + j] += n.grad[i * cols + off + j];
      }
      off += widths[pi];
    }
  });
}

// Row gather; backward scatter-adds, so this doubles as embedding lookup.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::check_rank(table, 2, "gather_rows");
  const std::size_t rows = table.dim(0), c = table.dim(1);
  for (std::size_t id : ids)
    if (id >= rows) throw std::invalid_argument("gather_rows: id " + std::to_string(id) + " out of range");
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.values().data() + ids[i] * c, c, out.data() + i * c);
  return make_op({ids.size(), c}, std::move(out), {table}, [ids, c](TensorNode& n) {
    auto& pt = *n.parents[0];
    pt.ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) pt.grad[ids[i] * c + j] += n.grad[i * c + j];
  });
}

inline Tensor row_get(const Tensor& a, std::size_t r) {
  Tensor g = gather_rows(a, {r});
  return reshape(g, {a.dim(1)});
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op({1}, {acc}, {a}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < pa.values.size(); ++i) pa.grad[i] += n.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// Mean over rows of an [R x C] tensor, yielding [C].
inline Tensor mean_rows(const Tensor& a) {
  detail::check_rank(a, 2, "mean_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (r == 0) throw std::invalid_argument("mean_rows: zero rows");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.values()[i * c + j];
  for (double& v : out) v /= static_cast<double>(r);
  return make_op({c}, std::move(out), {a}, [r, c](TensorNode& n) {
    auto& pa = *n.parents[0];
    pa.ensure_grad();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += n.grad[j] * inv;
  });
}

inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_scalars: empty");
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) throw std::invalid_argument("stack_scalars: non-scalar element");
    out[i] = xs[i].values()[0];
  }
  return make_op({xs.size()}, std::move(out), xs, [](TensorNode& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (p.requires_grad) {
        p.ensure_grad();
        p.grad[0] += n.grad[i];
      }
    }
  });
}

// ---- softmax / losses / norm ----

// Softmax over the last dimension with a keep-mask (1 = attend). Masked
// positions get probability exactly 0. A fully masked row is an error.
inline Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& mask) {
  if (logits.rank() == 0) throw std::invalid_argument("masked_softmax: rank-0 input");
  if (mask.size() != logits.size())
    throw std::invalid_argument("masked_softmax: mask size " + std::to_string(mask.size()) + " != " +
                                std::to_string(logits.size()));
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.size() / n;
  std::vector<double> out(logits.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.values().data() + r * n;
    const std::uint8_t* m = mask.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (m[j]) mx = std::max(mx, x[j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("masked_softmax: fully masked row " + std::to_string(r));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (m[j]) z += std::exp(x[j] - mx);
    for (std::size_t j = 0; j < n; ++j)
      if (m[j]) out[r * n + j] = std::exp(x[j] - mx) / z;
  }
  return make_op(logits.shape(), std::move(out), {logits}, [mask, n, rows](TensorNode& node) {
    auto& pa = *node.parents[0];
    pa.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = node.values.data() + r * n;
      const double* g = node.grad.data() + r * n;
      double dotpg = 0.0;
      for (std::size_t j = 0; j < n; ++j) dotpg += p[j] * g[j];
      for (std::size_t j = 0; j < n; ++j)
        if (mask[r * n + j]) pa.grad[r * n + j] += p[j] * (g[j] - dotpg);
    }
  });
}

inline Tensor softmax(const Tensor& logits) {
  return masked_softmax(logits, std::vector<std::uint8_t>(logits.size(), 1));
}

// Layer norm over the last dimension: zero mean, unit variance (biased),
// epsilon-stabilized, then gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (d < 2) throw std::invalid_argument("layer_norm: last extent must be >= 2");
  detail::check_rank(gain, 1, "layer_norm");
  detail::check_rank(bias, 1, "layer_norm");
  if (gain.dim(0) != d || bias.dim(0) != d) throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows), means(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xv = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[j] - mu) * (xv[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    means[r] = mu;
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = gain.values()[j] * ((xv[j] - mu) * is) + bias.values()[j];
  }
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [d, rows, means, inv_std](TensorNode& node) {
                   auto& px = *node.parents[0];
                   auto& pg = *node.parents[1];
                   auto& pb = *node.parents[2];
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* xv = px.values.data() + r * d;
                     const double* g = node.grad.data() + r * d;
                     const double mu = means[r], is = inv_std[r];
                     if (pg.requires_grad) {
                       pg.ensure_grad();
                       for (std::size_t j = 0; j < d; ++j) pg.grad[j] += g[j] * (xv[j] - mu) * is;
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       for (std::size_t j = 0; j < d; ++j) pb.grad[j] += g[j];
                     }
                     if (px.requires_grad) {
                       px.ensure_grad();
                       // d xhat_j = gain_j * g_j; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                       double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double xhat = (xv[j] - mu) * is;
                         const double dxhat = pg.values[j] * g[j];
                         mean_dxhat += dxhat;
                         mean_dxhat_xhat += dxhat * xhat;
                       }
                       mean_dxhat /= static_cast<double>(d);
                       mean_dxhat_xhat /= static_cast<double>(d);
                       for (std::size_t j = 0; j < d; ++j) {
                         const double xhat = (xv[j] - mu) * is;
                         const double dxhat = pg.values[j] * g[j];
                         px.grad[r * d + j] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                       }
                     }
                   }
                 });
}

// Mean negative log-likelihood over non-ignored positions.
// logits: [T x V]; targets: ids in [0, V); ignore[t] = 1 skips position t.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                            const std::vector<std::uint8_t>& ignore = {}) {
  detail::check_rank(logits, 2, "cross_entropy");
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  if (targets.size() != t) throw std::invalid_argument("cross_entropy: target count mismatch");
  if (!ignore.empty() && ignore.size() != t) throw std::invalid_argument("cross_entropy: ignore mask size mismatch");
  std::size_t kept = 0;
  for (std::size_t i = 0; i < t; ++i)
    if (ignore.empty() || !ignore[i]) {
      if (targets[i] >= v) throw std::invalid_argument("cross_entropy: target id out of range");
      ++kept;
    }
  if (kept == 0) throw std::invalid_argument("cross_entropy: all positions ignored");
  // log-sum-exp with max subtraction; keep softmax probs for backward
  std::vector<double> probs(t * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* x = logits.values().data() + i * v;
    double mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(x[j] - mx) / z;
    if (ignore.empty() || !ignore[i]) loss += -(x[targets[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(kept);
  return make_op({1}, {loss}, {logits}, [t, v, targets, ignore, kept, probs](TensorNode& node) {
    auto& pl = *node.parents[0];
    pl.ensure_grad();
    const double g = node.grad[0] / static_cast<double>(kept);
    for (std::size_t i = 0; i < t; ++i) {
      if (!ignore.empty() && ignore[i]) continue;
      for (std::size_t j = 0; j < v; ++j)
        pl.grad[i * v + j] += g * (probs[i * v + j] - (j == targets[i] ? 1.0 : 0.0));
    }
  });
}

// ---- backward ----

// Reverse-mode sweep from a scalar loss. Topological order is recovered by
// iterative DFS over recorded parents; gradients accumulate, so zero them
// between steps.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw std::invalid_argument("backward: loss must be a defined scalar");
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      TensorNode* child = node->parents[next_child++].get();
      if (!seen.count(child) && !child->parents.empty()) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace tcr
