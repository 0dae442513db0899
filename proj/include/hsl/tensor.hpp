#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hsl/common.hpp"

namespace hsl {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

enum class Padding { kSame, kValid };

template <typename T>
class TensorT;

namespace detail {

// One recorded value in the graph. Ops append nodes in execution order, so
// parent links always point at earlier nodes; the reverse pass walks the
// trace once, child before parent.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated on first backward touch
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parent) given this node's grad. Null for leaves
  // and for untracked results.
  std::function<void(Node&)> backprop;
};

template <typename T>
std::vector<T>& grad_buf(Node<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
  return n.grad;
}

template <typename T>
void check_finite(const std::vector<T>& v, const char* op, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i]))) {
      throw NumericError(std::string("non-finite ") + what + " in " + op +
                         " at index " + std::to_string(i));
    }
  }
}

}  // namespace detail

template <typename T>
class TensorT {
 public:
  using Node = detail::Node<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), T(0), requires_grad);
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    return make_leaf(std::move(shape), value, requires_grad);
  }

  static TensorT from_values(Shape shape, std::vector<T> values,
                             bool requires_grad = false) {
    const int n = shape_numel(shape);
    if (static_cast<int>(values.size()) != n) {
      throw ShapeError("from_values: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    detail::check_finite(values, "from_values", "value");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  static TensorT scalar(T value) { return from_values({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  int numel() const { return static_cast<int>(node()->values.size()); }
  int dim(int i) const { return node()->shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(node()->shape.size()); }

  const std::vector<T>& values() const { return node()->values; }

  // Mutation is reserved for leaf tensors (parameters owned by the trainer);
  // derived results are immutable.
  std::vector<T>& values_mut() {
    if (!node()->leaf) throw ContractError("values_mut: tensor is not a leaf");
    return node()->values;
  }

  bool requires_grad() const { return node()->requires_grad; }
  bool is_leaf() const { return node()->leaf; }
  const char* op_name() const { return node()->op; }

  bool has_grad() const { return !node()->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node()->grad.empty()) throw ContractError("grad: no gradient recorded");
    return node()->grad;
  }
  void zero_grad() { node()->grad.assign(node()->values.size(), T(0)); }
  void drop_grad() { node()->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ContractError("item: tensor is not scalar");
    return node()->values[0];
  }

  T at2(int y, int x) const {
    if (rank() != 2) throw ContractError("at2: tensor is not rank 2");
    return node()->values[static_cast<std::size_t>(y) * dim(1) + x];
  }

  T at4(int n, int c, int y, int x) const {
    if (rank() != 4) throw ContractError("at4: tensor is not rank 4");
    const auto& s = node()->shape;
    return node()->values[((static_cast<std::size_t>(n) * s[1] + c) * s[2] + y) * s[3] + x];
  }

  std::shared_ptr<Node> raw_node() const { return node_; }

  explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  static TensorT make_leaf(Shape shape, T fill, bool requires_grad) {
    const int n = shape_numel(shape);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values.assign(static_cast<std::size_t>(n), fill);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  const std::shared_ptr<Node>& node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_;
  }

  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

// Builds an op node. When no parent tracks gradients the parents and the
// closure are dropped, so untracked forwards cost nothing at backward time.
template <typename T>
TensorT<T> make_op(const char* op, Shape shape, std::vector<T> values,
                   std::vector<TensorT<T>> parents,
                   std::function<void(Node<T>&)> backprop) {
  if (static_cast<int>(values.size()) != shape_numel(shape)) {
    throw ContractError(std::string("internal: bad op output size in ") + op);
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->leaf = false;
  node->op = op;
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.raw_node());
    node->backprop = std::move(backprop);
  }
  return TensorT<T>(std::move(node));
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              for (int k = 0; k < 2; ++k) {
                                auto& p = *n.parents[k];
                                if (!p.requires_grad) continue;
                                auto& g = detail::grad_buf(p);
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                              }
                            });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::make_op<T>("sub", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              auto& pa = *n.parents[0];
                              if (pa.requires_grad) {
                                auto& g = detail::grad_buf(pa);
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                              }
                              auto& pb = *n.parents[1];
                              if (pb.requires_grad) {
                                auto& g = detail::grad_buf(pb);
                                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
                              }
                            });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              auto& pa = *n.parents[0];
                              auto& pb = *n.parents[1];
                              if (pa.requires_grad) {
                                auto& g = detail::grad_buf(pa);
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += n.grad[i] * pb.values[i];
                              }
                              if (pb.requires_grad) {
                                auto& g = detail::grad_buf(pb);
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += n.grad[i] * pa.values[i];
                              }
                            });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return detail::make_op<T>("div", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              auto& pa = *n.parents[0];
                              auto& pb = *n.parents[1];
                              if (pa.requires_grad) {
                                auto& g = detail::grad_buf(pa);
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += n.grad[i] / pb.values[i];
                              }
                              if (pb.requires_grad) {
                                auto& g = detail::grad_buf(pb);
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] -= n.grad[i] * pa.values[i] /
                                          (pb.values[i] * pb.values[i]);
                              }
                            });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, double s) {
  std::vector<T> out(a.values());
  for (auto& v : out) v += static_cast<T>(s);
  return detail::make_op<T>("add_scalar", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                            });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, double s) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= static_cast<T>(s);
  const T sc = static_cast<T>(s);
  return detail::make_op<T>("mul_scalar", a.shape(), std::move(out), {a},
                            [sc](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += n.grad[i] * sc;
                            });
}

// s - x, used for complements like 1 - loss.
template <typename T>
TensorT<T> sub_from_scalar(double s, const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = static_cast<T>(s) - v;
  return detail::make_op<T>("sub_from_scalar", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
                            });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
  return sub_from_scalar(0.0, a);
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return detail::make_op<T>("relu", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& p = *n.parents[0];
                              auto& g = detail::grad_buf(p);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (p.values[i] > T(0)) g[i] += n.grad[i];
                            });
}

// Branch-stable logistic: never evaluates exp on the overflowing side.
template <typename T>
inline T stable_sigmoid(T z) {
  if (z >= T(0)) {
    return T(1) / (T(1) + std::exp(-z));
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = stable_sigmoid(v);
  return detail::make_op<T>("sigmoid", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const T y = n.values[i];
                                g[i] += n.grad[i] * y * (T(1) - y);
                              }
                            });
}

// log(1 + exp(x)) without overflow; gradient is sigmoid(x).
template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  return detail::make_op<T>("softplus", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& p = *n.parents[0];
                              auto& g = detail::grad_buf(p);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += n.grad[i] * stable_sigmoid(p.values[i]);
                            });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = std::log(v);
  return detail::make_op<T>("log", a.shape(), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& p = *n.parents[0];
                              auto& g = detail::grad_buf(p);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += n.grad[i] / p.values[i];
                            });
}

template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& a, double e) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = static_cast<T>(std::pow(static_cast<double>(v), e));
  return detail::make_op<T>("pow_scalar", a.shape(), std::move(out), {a},
                            [e](detail::Node<T>& n) {
                              if (e == 0.0) return;  // constant 1
                              auto& p = *n.parents[0];
                              auto& g = detail::grad_buf(p);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += n.grad[i] * static_cast<T>(e * std::pow(static_cast<double>(p.values[i]), e - 1.0));
                            });
}

// max(x, lo); gradient passes where x was not clamped (boundary included).
template <typename T>
TensorT<T> clamp_min(const TensorT<T>& a, double lo) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = v < static_cast<T>(lo) ? static_cast<T>(lo) : v;
  const T lt = static_cast<T>(lo);
  return detail::make_op<T>("clamp_min", a.shape(), std::move(out), {a},
                            [lt](detail::Node<T>& n) {
                              auto& p = *n.parents[0];
                              auto& g = detail::grad_buf(p);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (p.values[i] >= lt) g[i] += n.grad[i];
                            });
}

// Inverted dropout: zero each cell with probability p and scale survivors by
// 1/(1-p), so evaluation mode is the exact identity.
template <typename T>
TensorT<T> dropout(const TensorT<T>& a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must satisfy 0 <= p < 1");
  if (!training || p == 0.0) return a;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(a.values().size());
  for (auto& m : mask) m = rng.uniform01() < p ? T(0) : scale;
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_op<T>("dropout", a.shape(), std::move(out), {a},
                            [mask = std::move(mask)](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += n.grad[i] * mask[i];
                            });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return detail::make_op<T>("reduce_sum", Shape{}, {acc}, {a},
                            [](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (auto& gi : g) gi += n.grad[0];
                            });
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_op<T>("reduce_mean", Shape{}, {acc * inv}, {a},
                            [inv](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (auto& gi : g) gi += n.grad[0] * inv;
                            });
}

// Sum of the entries selected by a {0,1} indicator; the gradient is the
// indicator itself.
template <typename T>
TensorT<T> masked_sum(const TensorT<T>& a, const std::vector<std::uint8_t>& mask_bits) {
  if (mask_bits.size() != a.values().size()) {
    throw ShapeError("masked_sum: mask has " + std::to_string(mask_bits.size()) +
                     " bits for tensor " + shape_str(a.shape()));
  }
  T acc = T(0);
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    if (mask_bits[i]) acc += av[i];
  return detail::make_op<T>("masked_sum", Shape{}, {acc}, {a},
                            [mask_bits](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (mask_bits[i]) g[i] += n.grad[0];
                            });
}

// Zeroes the entries where the indicator is 0; gradient passes only through
// the kept entries.
template <typename T>
TensorT<T> masked_values(const TensorT<T>& a, const std::vector<std::uint8_t>& mask_bits) {
  if (mask_bits.size() != a.values().size()) {
    throw ShapeError("masked_values: mask has " + std::to_string(mask_bits.size()) +
                     " bits for tensor " + shape_str(a.shape()));
  }
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask_bits[i]) out[i] = T(0);
  return detail::make_op<T>("masked_values", a.shape(), std::move(out), {a},
                            [mask_bits](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (mask_bits[i]) g[i] += n.grad[i];
                            });
}

// Max over an explicit set of flat indices; subgradient goes to the first
// argmax in the given order.
template <typename T>
TensorT<T> select_max(const TensorT<T>& a, const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("select_max: empty index set");
  const auto& av = a.values();
  int best = -1;
  T best_v = T(0);
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(av.size()))
      throw ContractError("select_max: index out of range");
    if (best < 0 || av[static_cast<std::size_t>(idx)] > best_v) {
      best = idx;
      best_v = av[static_cast<std::size_t>(idx)];
    }
  }
  return detail::make_op<T>("select_max", Shape{}, {best_v}, {a},
                            [best](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              g[static_cast<std::size_t>(best)] += n.grad[0];
                            });
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

template <typename T>
void require_rank4(const TensorT<T>& t, const char* op, const char* what) {
  if (t.rank() != 4)
    throw ShapeError(std::string(op) + ": " + what + " must be rank 4, got " +
                     shape_str(t.shape()));
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  require_rank4(a, "concat_channels", "lhs");
  require_rank4(b, "concat_channels", "rhs");
  const int N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int Cb = b.dim(1);
  if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int plane = H * W;
  std::vector<T> out(static_cast<std::size_t>(N) * (Ca + Cb) * plane);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int n = 0; n < N; ++n) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(n) * Ca * plane, Ca * plane,
                out.begin() + static_cast<std::ptrdiff_t>(n) * (Ca + Cb) * plane);
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(n) * Cb * plane, Cb * plane,
                out.begin() + static_cast<std::ptrdiff_t>(n) * (Ca + Cb) * plane + Ca * plane);
  }
  return detail::make_op<T>(
      "concat_channels", Shape{N, Ca + Cb, H, W}, std::move(out), {a, b},
      [N, Ca, Cb, plane](detail::Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        for (int i = 0; i < N; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * (Ca + Cb) * plane;
          if (pa.requires_grad) {
            auto& g = detail::grad_buf(pa);
            for (int j = 0; j < Ca * plane; ++j)
              g[static_cast<std::size_t>(i) * Ca * plane + j] += n.grad[base + j];
          }
          if (pb.requires_grad) {
            auto& g = detail::grad_buf(pb);
            for (int j = 0; j < Cb * plane; ++j)
              g[static_cast<std::size_t>(i) * Cb * plane + j] += n.grad[base + Ca * plane + j];
          }
        }
      });
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& a, int c0, int c1) {
  require_rank4(a, "slice_channels", "input");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ContractError("slice_channels: bad channel range");
  const int plane = H * W, Cs = c1 - c0;
  std::vector<T> out(static_cast<std::size_t>(N) * Cs * plane);
  const auto& av = a.values();
  for (int n = 0; n < N; ++n)
    std::copy_n(av.begin() + (static_cast<std::ptrdiff_t>(n) * C + c0) * plane, Cs * plane,
                out.begin() + static_cast<std::ptrdiff_t>(n) * Cs * plane);
  return detail::make_op<T>("slice_channels", Shape{N, Cs, H, W}, std::move(out), {a},
                            [N, C, c0, Cs, plane](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (int i = 0; i < N; ++i)
                                for (int j = 0; j < Cs * plane; ++j)
                                  g[(static_cast<std::size_t>(i) * C + c0) * plane + j] +=
                                      n.grad[static_cast<std::size_t>(i) * Cs * plane + j];
                            });
}

// Extracts one [H,W] plane from an [N,C,H,W] batch.
template <typename T>
TensorT<T> plane(const TensorT<T>& a, int n, int c) {
  require_rank4(a, "plane", "input");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (n < 0 || n >= N || c < 0 || c >= C) throw ContractError("plane: index out of range");
  const int sz = H * W;
  const std::size_t base = (static_cast<std::size_t>(n) * C + c) * sz;
  std::vector<T> out(a.values().begin() + static_cast<std::ptrdiff_t>(base),
                     a.values().begin() + static_cast<std::ptrdiff_t>(base + sz));
  return detail::make_op<T>("plane", Shape{H, W}, std::move(out), {a},
                            [base, sz](detail::Node<T>& n2) {
                              auto& g = detail::grad_buf(*n2.parents[0]);
                              for (int i = 0; i < sz; ++i) g[base + i] += n2.grad[static_cast<std::size_t>(i)];
                            });
}

template <typename T>
TensorT<T> avgpool2(const TensorT<T>& a) {
  require_rank4(a, "avgpool2", "input");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("avgpool2: spatial dims must be even, got " + shape_str(a.shape()));
  const int OH = H / 2, OW = W / 2;
  std::vector<T> out(static_cast<std::size_t>(N) * C * OH * OW);
  const auto& av = a.values();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* pl = av.data() + static_cast<std::size_t>(nc) * H * W;
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        const T* r0 = pl + (2 * y) * W + 2 * x;
        out[o++] = (r0[0] + r0[1] + r0[W] + r0[W + 1]) * T(0.25);
      }
  }
  return detail::make_op<T>("avgpool2", Shape{N, C, OH, OW}, std::move(out), {a},
                            [N, C, H, W, OH, OW](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              std::size_t o = 0;
                              for (int nc = 0; nc < N * C; ++nc) {
                                T* pl = g.data() + static_cast<std::size_t>(nc) * H * W;
                                for (int y = 0; y < OH; ++y)
                                  for (int x = 0; x < OW; ++x) {
                                    const T q = n.grad[o++] * T(0.25);
                                    T* r0 = pl + (2 * y) * W + 2 * x;
                                    r0[0] += q;
                                    r0[1] += q;
                                    r0[W] += q;
                                    r0[W + 1] += q;
                                  }
                              }
                            });
}

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& a) {
  require_rank4(a, "upsample_nearest2", "input");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int OH = 2 * H, OW = 2 * W;
  std::vector<T> out(static_cast<std::size_t>(N) * C * OH * OW);
  const auto& av = a.values();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* pl = av.data() + static_cast<std::size_t>(nc) * H * W;
    T* op = out.data() + static_cast<std::size_t>(nc) * OH * OW;
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) op[y * OW + x] = pl[(y / 2) * W + x / 2];
  }
  return detail::make_op<T>("upsample_nearest2", Shape{N, C, OH, OW}, std::move(out), {a},
                            [N, C, H, W, OH, OW](detail::Node<T>& n) {
                              auto& g = detail::grad_buf(*n.parents[0]);
                              for (int nc = 0; nc < N * C; ++nc) {
                                T* pl = g.data() + static_cast<std::size_t>(nc) * H * W;
                                const T* op = n.grad.data() + static_cast<std::size_t>(nc) * OH * OW;
                                for (int y = 0; y < OH; ++y)
                                  for (int x = 0; x < OW; ++x)
                                    pl[(y / 2) * W + x / 2] += op[y * OW + x];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation). dilation > 1 spaces the kernel taps,
// enlarging the receptive field without extra parameters; dilation == 1 is
// ordinary convolution.
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  int N, C, H, W, F, kh, kw, stride, dilation;
  int pad_top, pad_left, OH, OW;
};

inline ConvGeom conv_geometry(const Shape& in, const Shape& k, int stride, int dilation,
                              Padding padding) {
  ConvGeom g{};
  g.N = in[0];
  g.C = in[1];
  g.H = in[2];
  g.W = in[3];
  g.F = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = stride;
  g.dilation = dilation;
  const int eff_h = (g.kh - 1) * dilation + 1;
  const int eff_w = (g.kw - 1) * dilation + 1;
  if (padding == Padding::kValid) {
    if (eff_h > g.H || eff_w > g.W) {
      throw ShapeError("conv2d: dilated kernel extent " + std::to_string(eff_h) + "x" +
                       std::to_string(eff_w) + " exceeds input " + std::to_string(g.H) +
                       "x" + std::to_string(g.W));
    }
    g.pad_top = 0;
    g.pad_left = 0;
    g.OH = (g.H - eff_h) / stride + 1;
    g.OW = (g.W - eff_w) / stride + 1;
  } else {
    g.OH = (g.H + stride - 1) / stride;
    g.OW = (g.W + stride - 1) / stride;
    const int pad_h = std::max((g.OH - 1) * stride + eff_h - g.H, 0);
    const int pad_w = std::max((g.OW - 1) * stride + eff_w - g.W, 0);
    // Symmetric zero padding; the extra pixel goes to the bottom/right.
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int stride, int dilation, Padding padding) {
  require_rank4(input, "conv2d", "input");
  require_rank4(kernel, "conv2d", "kernel");
  if (bias.rank() != 1)
    throw ShapeError("conv2d: bias must be rank 1, got " + shape_str(bias.shape()));
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(1)));
  }
  if (bias.dim(0) != kernel.dim(0)) {
    throw ShapeError("conv2d: bias size " + std::to_string(bias.dim(0)) +
                     " does not match filter count " + std::to_string(kernel.dim(0)));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (dilation < 1) throw ConfigError("conv2d: dilation must be positive");
  detail::check_finite(input.values(), "conv2d", "input");
  detail::check_finite(kernel.values(), "conv2d", "kernel");

  const auto g = detail::conv_geometry(input.shape(), kernel.shape(), stride, dilation, padding);
  std::vector<T> out(static_cast<std::size_t>(g.N) * g.F * g.OH * g.OW);
  const auto& iv = input.values();
  const auto& kv = kernel.values();
  const auto& bv = bias.values();

  auto tap_range = [](int start, int extent, int taps, int dil, int& lo, int& hi) {
    // valid k: 0 <= start + k*dil < extent
    lo = start < 0 ? (-start + dil - 1) / dil : 0;
    hi = std::min(taps, start >= extent ? 0 : (extent - start + dil - 1) / dil);
  };

  std::size_t o = 0;
  for (int n = 0; n < g.N; ++n) {
    const T* in_n = iv.data() + static_cast<std::size_t>(n) * g.C * g.H * g.W;
    for (int f = 0; f < g.F; ++f) {
      const T* kf = kv.data() + static_cast<std::size_t>(f) * g.C * g.kh * g.kw;
      const T b = bv[static_cast<std::size_t>(f)];
      for (int oy = 0; oy < g.OH; ++oy) {
        const int iy0 = oy * g.stride - g.pad_top;
        int ky_lo, ky_hi;
        tap_range(iy0, g.H, g.kh, g.dilation, ky_lo, ky_hi);
        for (int ox = 0; ox < g.OW; ++ox) {
          const int ix0 = ox * g.stride - g.pad_left;
          int kx_lo, kx_hi;
          tap_range(ix0, g.W, g.kw, g.dilation, kx_lo, kx_hi);
          T acc = b;
          for (int c = 0; c < g.C; ++c) {
            const T* ic = in_n + static_cast<std::size_t>(c) * g.H * g.W;
            const T* kc = kf + static_cast<std::size_t>(c) * g.kh * g.kw;
            for (int ky = ky_lo; ky < ky_hi; ++ky) {
              const T* row = ic + (iy0 + ky * g.dilation) * g.W;
              const T* krow = kc + ky * g.kw;
              for (int kx = kx_lo; kx < kx_hi; ++kx)
                acc += row[ix0 + kx * g.dilation] * krow[kx];
            }
          }
          out[o++] = acc;
        }
      }
    }
  }

  return detail::make_op<T>(
      "conv2d", Shape{g.N, g.F, g.OH, g.OW}, std::move(out), {input, kernel, bias},
      [g, tap_range](detail::Node<T>& node) {
        auto& pin = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pb = *node.parents[2];
        const bool need_in = pin.requires_grad;
        const bool need_k = pk.requires_grad;
        std::vector<T>* gin = need_in ? &detail::grad_buf(pin) : nullptr;
        std::vector<T>* gk = need_k ? &detail::grad_buf(pk) : nullptr;
        std::vector<T>* gb = pb.requires_grad ? &detail::grad_buf(pb) : nullptr;

        std::size_t o = 0;
        for (int n = 0; n < g.N; ++n) {
          const std::size_t in_base = static_cast<std::size_t>(n) * g.C * g.H * g.W;
          for (int f = 0; f < g.F; ++f) {
            const std::size_t k_base = static_cast<std::size_t>(f) * g.C * g.kh * g.kw;
            T bacc = T(0);
            for (int oy = 0; oy < g.OH; ++oy) {
              const int iy0 = oy * g.stride - g.pad_top;
              int ky_lo, ky_hi;
              tap_range(iy0, g.H, g.kh, g.dilation, ky_lo, ky_hi);
              for (int ox = 0; ox < g.OW; ++ox) {
                const T go = node.grad[o++];
                bacc += go;
                if (go == T(0) || (!need_in && !need_k)) continue;
                const int ix0 = ox * g.stride - g.pad_left;
                int kx_lo, kx_hi;
                tap_range(ix0, g.W, g.kw, g.dilation, kx_lo, kx_hi);
                for (int c = 0; c < g.C; ++c) {
                  const std::size_t ic = in_base + static_cast<std::size_t>(c) * g.H * g.W;
                  const std::size_t kc = k_base + static_cast<std::size_t>(c) * g.kh * g.kw;
                  for (int ky = ky_lo; ky < ky_hi; ++ky) {
                    const std::size_t irow = ic + static_cast<std::size_t>(iy0 + ky * g.dilation) * g.W;
                    const std::size_t krow = kc + static_cast<std::size_t>(ky) * g.kw;
                    for (int kx = kx_lo; kx < kx_hi; ++kx) {
                      const std::size_t ii = irow + static_cast<std::size_t>(ix0 + kx * g.dilation);
                      if (need_k) (*gk)[krow + kx] += go * pin.values[ii];
                      if (need_in) (*gin)[ii] += go * pk.values[krow + kx];
                    }
                  }
                }
              }
            }
            if (gb) (*gb)[static_cast<std::size_t>(f)] += bacc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Ordered record of the operations reachable from one result. Execution
// already appended parents before children, so a depth-first post-order is
// topological and the reverse sweep visits each recorded operation once.
template <typename T>
class Graph {
 public:
  static Graph trace(const TensorT<T>& root) {
    Graph g;
    g.root_ = root.raw_node();
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order: (node, next-parent-index) frames.
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    if (g.root_ && g.root_->requires_grad) {
      stack.emplace_back(g.root_.get(), 0);
      seen.insert(g.root_.get());
    }
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node<T>* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  std::size_t node_count() const { return order_.size(); }

  std::size_t op_count() const {
    std::size_t n = 0;
    for (auto* node : order_)
      if (!node->leaf) ++n;
    return n;
  }

  // Seeds d(root)/d(root) = 1 and accumulates into every reachable tensor
  // that requires gradients. Leaf accumulators are preserved across calls
  // (repeated backward adds up); interior buffers are reset per sweep.
  void run_backward() {
    if (!root_) throw ContractError("backward: undefined tensor");
    if (root_->values.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(root_->shape));
    if (!root_->requires_grad)
      throw ContractError("backward: loss does not require gradients");
    for (auto* node : order_) {
      if (!node->leaf)
        node->grad.assign(node->values.size(), T(0));
      else if (node->grad.empty())
        node->grad.assign(node->values.size(), T(0));
    }
    root_->grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node<T>* node = *it;
      for (std::size_t i = 0; i < node->grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(node->grad[i]))) {
          throw NumericError(std::string("backward: non-finite gradient at op '") +
                             node->op + "'");
        }
      }
      if (node->backprop) node->backprop(*node);
    }
  }

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<detail::Node<T>*> order_;  // post-order: inputs precede consumers
};

template <typename T>
void backward(const TensorT<T>& loss) {
  Graph<T>::trace(loss).run_backward();
}

}  // namespace hsl
