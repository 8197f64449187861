// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor<T> is a shared handle to a node holding the value buffer, an
// optional gradient buffer and, for op outputs, the parent links plus a
// backward rule. Ops are pure: they never mutate their inputs, and a node
// records parents only when some input requires gradients. Gradients
// accumulate by summation; zeroing is explicit and caller-driven.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "ocseg/common.hpp"

namespace ocseg {

namespace detail {

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_atb_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<int64_t>(p) * m;
    const T* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    node_->shape = std::move(shape);
    node_->value.assign(shape_numel(node_->shape), T(0));
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t(std::move(shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data,
                          bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ContractError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  Shape4 shape4() const {
    if (rank() != 4)
      throw ShapeError("expected a rank-4 feature map, got " + shape_str(shape()));
    return Shape4(dim(0), dim(1), dim(2), dim(3));
  }

  std::span<T> data() { return {node_->value.data(), node_->value.size()}; }
  std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  std::span<const T> grad() const {
    if (!has_grad())
      throw ContractError("gradient buffer not allocated; run backward first");
    return {node_->grad.data(), node_->grad.size()};
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  // Row-major element access, mostly for tests and small utilities.
  T& at(std::initializer_list<int> idx) { return node_->value[flat_index(idx)]; }
  T at(std::initializer_list<int> idx) const { return node_->value[flat_index(idx)]; }

  // Seeds d(this)/d(this)=1 and propagates gradients to every requires_grad
  // ancestor in reverse topological order. Repeated paths sum.
  void backward() const {
    if (numel() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_str(shape()));
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    topo_sort(node_.get(), seen, topo);
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      if (n->backprop && n->requires_grad) n->backprop(*n);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static void validate_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw ContractError("tensor shape may not be empty");
    for (int d : shape)
      if (d < 1) throw ContractError("tensor extents must be >= 1, got " + shape_str(shape));
  }

  size_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ContractError("index rank mismatch");
    size_t flat = 0;
    int i = 0;
    for (int v : idx) {
      flat = flat * static_cast<size_t>(node_->shape[i]) + static_cast<size_t>(v);
      ++i;
    }
    return flat;
  }

  static void topo_sort(Node* n, std::unordered_set<Node*>& seen,
                        std::vector<Node*>& out) {
    // Iterative DFS; graphs can be deep at long training horizons.
    struct Frame {
      Node* node;
      size_t next_parent;
    };
    if (seen.count(n)) return;
    std::vector<Frame> stack{{n, 0}};
    seen.insert(n);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].get();
        if (!seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        out.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op_output(std::vector<int> shape,
                         std::vector<std::shared_ptr<TensorNode<T>>> parents,
                         std::function<void(TensorNode<T>&)> backprop) {
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value.assign(shape_numel(node->shape), T(0));
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor<T>::wrap(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node(), b.node()}, [](detail::TensorNode<T>& n) {
        for (int side = 0; side < 2; ++side) {
          auto& p = n.parents[side];
          if (!p->requires_grad) continue;
          p->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        }
      });
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node(), b.node()}, [](detail::TensorNode<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
      });
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node(), b.node()}, [](detail::TensorNode<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i)
            pb->grad[i] += n.grad[i] * pa->value[i];
        }
      });
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node()}, [factor](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += factor * n.grad[i];
      });
  auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = factor * av[i];
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node()}, [](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
          if (p->value[i] > T(0)) p->grad[i] += n.grad[i];
      });
  auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto out = detail::make_op_output<T>(
      {1}, {a.node()}, [](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T g = n.grad[0];
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
      });
  auto av = a.data();
  T acc = T(0);
  for (size_t i = 0; i < av.size(); ++i) acc += av[i];
  out.data()[0] = acc;
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  auto out = detail::make_op_output<T>(
      std::move(new_shape), {a.node()}, [](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
      });
  auto av = a.data();
  std::copy(av.begin(), av.end(), out.data().begin());
  return out;
}

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3)
    throw ShapeError("transpose_last2: expected rank 2 or 3, got " +
                     shape_str(a.shape()));
  const int batch = a.rank() == 3 ? a.dim(0) : 1;
  const int rows = a.dim(a.rank() - 2);
  const int cols = a.dim(a.rank() - 1);
  std::vector<int> out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);

  auto transpose_into = [batch, rows, cols](const T* src, T* dst, bool adding) {
    for (int b = 0; b < batch; ++b) {
      const T* s = src + static_cast<int64_t>(b) * rows * cols;
      T* d = dst + static_cast<int64_t>(b) * rows * cols;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          if (adding)
            d[static_cast<int64_t>(c) * rows + r] += s[static_cast<int64_t>(r) * cols + c];
          else
            d[static_cast<int64_t>(c) * rows + r] = s[static_cast<int64_t>(r) * cols + c];
        }
    }
  };

  auto out = detail::make_op_output<T>(
      std::move(out_shape), {a.node()},
      [batch, rows, cols](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        // n has shape (.., cols, rows); transpose the gradient back.
        for (int b = 0; b < batch; ++b) {
          const T* g = n.grad.data() + static_cast<int64_t>(b) * rows * cols;
          T* d = p->grad.data() + static_cast<int64_t>(b) * rows * cols;
          for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r)
              d[static_cast<int64_t>(r) * cols + c] += g[static_cast<int64_t>(c) * rows + r];
        }
      });
  transpose_into(a.data().data(), out.data().data(), false);
  return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = detail::make_op_output<T>(
      {m, n}, {a.node(), b.node()}, [m, k, n](detail::TensorNode<T>& node) {
        auto& pa = node.parents[0];
        auto& pb = node.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          detail::gemm_abt_acc(node.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          // dB[k,n] += A[m,k]^T * G[m,n]
          detail::gemm_atb_acc(pa->value.data(), node.grad.data(), pb->grad.data(), k, m, n);
        }
      });
  detail::gemm_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  return out;
}

// Batched matmul over matching leading extents: (B,m,k) x (B,k,n) -> (B,m,n).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw ShapeError("bmm: expected rank-3 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  auto out = detail::make_op_output<T>(
      {bs, m, n}, {a.node(), b.node()}, [bs, m, k, n](detail::TensorNode<T>& node) {
        auto& pa = node.parents[0];
        auto& pb = node.parents[1];
        for (int bi = 0; bi < bs; ++bi) {
          const T* g = node.grad.data() + static_cast<int64_t>(bi) * m * n;
          const T* av = pa->value.data() + static_cast<int64_t>(bi) * m * k;
          const T* bv = pb->value.data() + static_cast<int64_t>(bi) * k * n;
          if (pa->requires_grad) {
            pa->ensure_grad();
            detail::gemm_abt_acc(g, bv, pa->grad.data() + static_cast<int64_t>(bi) * m * k,
                                 m, n, k);
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            detail::gemm_atb_acc(av, g, pb->grad.data() + static_cast<int64_t>(bi) * k * n,
                                 k, m, n);
          }
        }
      });
  for (int bi = 0; bi < bs; ++bi)
    detail::gemm_acc(a.data().data() + static_cast<int64_t>(bi) * m * k,
                     b.data().data() + static_cast<int64_t>(bi) * k * n,
                     out.data().data() + static_cast<int64_t>(bi) * m * n, m, k, n);
  return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Exp-normalizes each row with max-subtraction; rows of the result sum to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2)
    throw ShapeError("softmax_rows: expected rank-2 input, got " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  auto av = a.data();
  for (size_t i = 0; i < av.size(); ++i)
    if (!std::isfinite(static_cast<double>(av[i])))
      throw NumericError("softmax_rows: non-finite input at flat index " +
                         std::to_string(i));
  auto out = detail::make_op_output<T>(
      a.shape(), {a.node()}, [rows, cols](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const T* y = n.value.data() + static_cast<int64_t>(r) * cols;
          const T* g = n.grad.data() + static_cast<int64_t>(r) * cols;
          T* d = p->grad.data() + static_cast<int64_t>(r) * cols;
          T dot = T(0);
          for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (int c = 0; c < cols; ++c) d[c] += y[c] * (g[c] - dot);
        }
      });
  auto ov = out.data();
  for (int r = 0; r < rows; ++r) {
    const T* x = av.data() + static_cast<int64_t>(r) * cols;
    T* y = ov.data() + static_cast<int64_t>(r) * cols;
    T mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    T sum = T(0);
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    const T inv = T(1) / sum;
    for (int c = 0; c < cols; ++c) y[c] *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel / spatial composition (rank-4 feature maps)
// ---------------------------------------------------------------------------

// Stacks feature maps along the channel axis. Backward splits the gradient
// by channel ranges.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& ts) {
  if (ts.empty()) throw ContractError("concat_channels: need at least one tensor");
  const Shape4 s0 = ts[0].shape4();
  int total_ch = 0;
  for (const auto& t : ts) {
    const Shape4 s = t.shape4();
    if (s.batch != s0.batch || s.height != s0.height || s.width != s0.width)
      throw ShapeError("concat_channels: non-channel extents differ, " +
                       shape_str(ts[0].shape()) + " vs " + shape_str(t.shape()));
    total_ch += s.channels;
  }
  std::vector<std::shared_ptr<detail::TensorNode<T>>> parents;
  std::vector<int> chans;
  for (const auto& t : ts) {
    parents.push_back(t.node());
    chans.push_back(t.dim(1));
  }
  const int B = s0.batch, H = s0.height, W = s0.width;
  const int64_t hw = static_cast<int64_t>(H) * W;
  auto out = detail::make_op_output<T>(
      {B, total_ch, H, W}, std::move(parents),
      [chans, B, hw, total_ch](detail::TensorNode<T>& n) {
        int c_off = 0;
        for (size_t pi = 0; pi < n.parents.size(); ++pi) {
          auto& p = n.parents[pi];
          const int pc = chans[pi];
          if (p->requires_grad) {
            p->ensure_grad();
            for (int b = 0; b < B; ++b) {
              const T* g = n.grad.data() + (static_cast<int64_t>(b) * total_ch + c_off) * hw;
              T* d = p->grad.data() + static_cast<int64_t>(b) * pc * hw;
              for (int64_t i = 0; i < pc * hw; ++i) d[i] += g[i];
            }
          }
          c_off += pc;
        }
      });
  int c_off = 0;
  for (const auto& t : ts) {
    const int pc = t.dim(1);
    for (int b = 0; b < B; ++b) {
      const T* src = t.data().data() + static_cast<int64_t>(b) * pc * hw;
      T* dst = out.data().data() + (static_cast<int64_t>(b) * total_ch + c_off) * hw;
      std::copy(src, src + pc * hw, dst);
    }
    c_off += pc;
  }
  return out;
}

// Channel range [c0, c1) of a rank-4 map.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int c0, int c1) {
  const Shape4 s = t.shape4();
  if (c0 < 0 || c1 > s.channels || c0 >= c1)
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " + shape_str(t.shape()));
  const int B = s.batch, C = s.channels, H = s.height, W = s.width;
  const int oc = c1 - c0;
  const int64_t hw = static_cast<int64_t>(H) * W;
  auto out = detail::make_op_output<T>(
      {B, oc, H, W}, {t.node()}, [B, C, c0, oc, hw](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int b = 0; b < B; ++b) {
          const T* g = n.grad.data() + static_cast<int64_t>(b) * oc * hw;
          T* d = p->grad.data() + (static_cast<int64_t>(b) * C + c0) * hw;
          for (int64_t i = 0; i < oc * hw; ++i) d[i] += g[i];
        }
      });
  for (int b = 0; b < B; ++b) {
    const T* src = t.data().data() + (static_cast<int64_t>(b) * C + c0) * hw;
    T* dst = out.data().data() + static_cast<int64_t>(b) * oc * hw;
    std::copy(src, src + oc * hw, dst);
  }
  return out;
}

// Spatial window rows [y0,y1) x cols [x0,x1) of a rank-4 map.
template <typename T>
Tensor<T> slice_spatial(const Tensor<T>& t, int y0, int y1, int x0, int x1) {
  const Shape4 s = t.shape4();
  if (y0 < 0 || y1 > s.height || y0 >= y1 || x0 < 0 || x1 > s.width || x0 >= x1)
    throw ShapeError("slice_spatial: window invalid for " + shape_str(t.shape()));
  const int B = s.batch, C = s.channels, H = s.height, W = s.width;
  const int oh = y1 - y0, ow = x1 - x0;
  auto out = detail::make_op_output<T>(
      {B, C, oh, ow}, {t.node()},
      [B, C, H, W, y0, x0, oh, ow](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < oh; ++y) {
              const T* g = n.grad.data() +
                           ((static_cast<int64_t>(b) * C + c) * oh + y) * ow;
              T* d = p->grad.data() +
                     ((static_cast<int64_t>(b) * C + c) * H + (y0 + y)) * W + x0;
              for (int x = 0; x < ow; ++x) d[x] += g[x];
            }
      });
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < oh; ++y) {
        const T* src = t.data().data() +
                       ((static_cast<int64_t>(b) * C + c) * H + (y0 + y)) * W + x0;
        T* dst = out.data().data() +
                 ((static_cast<int64_t>(b) * C + c) * oh + y) * ow;
        std::copy(src, src + ow, dst);
      }
  return out;
}

struct SpatialBox {
  int y0, y1, x0, x1;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
};

// Inverse of a disjoint set of spatial slices: pastes each part at its box.
// The boxes must tile the H x W grid exactly once.
template <typename T>
Tensor<T> assemble_spatial(const std::vector<Tensor<T>>& parts,
                           const std::vector<SpatialBox>& boxes, int H, int W) {
  if (parts.empty() || parts.size() != boxes.size())
    throw ContractError("assemble_spatial: parts/boxes mismatch");
  const Shape4 s0 = parts[0].shape4();
  const int B = s0.batch, C = s0.channels;
  std::vector<char> covered(static_cast<size_t>(H) * W, 0);
  for (size_t i = 0; i < parts.size(); ++i) {
    const Shape4 s = parts[i].shape4();
    const SpatialBox& bx = boxes[i];
    if (s.batch != B || s.channels != C)
      throw ShapeError("assemble_spatial: part extents differ");
    if (bx.y0 < 0 || bx.y1 > H || bx.x0 < 0 || bx.x1 > W ||
        s.height != bx.height() || s.width != bx.width())
      throw ContractError("assemble_spatial: box does not match part or grid");
    for (int y = bx.y0; y < bx.y1; ++y)
      for (int x = bx.x0; x < bx.x1; ++x) {
        char& cell = covered[static_cast<size_t>(y) * W + x];
        if (cell) throw ContractError("assemble_spatial: boxes overlap");
        cell = 1;
      }
  }
  for (char cell : covered)
    if (!cell)
      throw ContractError("assemble_spatial: boxes do not tile the grid exactly");

  std::vector<std::shared_ptr<detail::TensorNode<T>>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  auto boxes_copy = boxes;
  auto out = detail::make_op_output<T>(
      {B, C, H, W}, std::move(parents),
      [B, C, H, W, boxes_copy](detail::TensorNode<T>& n) {
        for (size_t pi = 0; pi < n.parents.size(); ++pi) {
          auto& p = n.parents[pi];
          if (!p->requires_grad) continue;
          p->ensure_grad();
          const SpatialBox& bx = boxes_copy[pi];
          const int oh = bx.height(), ow = bx.width();
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
              for (int y = 0; y < oh; ++y) {
                const T* g = n.grad.data() +
                             ((static_cast<int64_t>(b) * C + c) * H + (bx.y0 + y)) * W +
                             bx.x0;
                T* d = p->grad.data() +
                       ((static_cast<int64_t>(b) * C + c) * oh + y) * ow;
                for (int x = 0; x < ow; ++x) d[x] += g[x];
              }
        }
      });
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const SpatialBox& bx = boxes[pi];
    const int oh = bx.height(), ow = bx.width();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < oh; ++y) {
          const T* src = parts[pi].data().data() +
                         ((static_cast<int64_t>(b) * C + c) * oh + y) * ow;
          T* dst = out.data().data() +
                   ((static_cast<int64_t>(b) * C + c) * H + (bx.y0 + y)) * W + bx.x0;
          std::copy(src, src + ow, dst);
        }
  }
  return out;
}

// Tiles a (B,C,1,1) map to (B,C,H,W). Backward sums over the tiled extent.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& t, int H, int W) {
  const Shape4 s = t.shape4();
  if (s.height != 1 || s.width != 1)
    throw ShapeError("broadcast_spatial: expected 1x1 spatial input, got " +
                     shape_str(t.shape()));
  const int B = s.batch, C = s.channels;
  const int64_t hw = static_cast<int64_t>(H) * W;
  auto out = detail::make_op_output<T>(
      {B, C, H, W}, {t.node()}, [B, C, hw](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
          const T* g = n.grad.data() + bc * hw;
          T acc = T(0);
          for (int64_t i = 0; i < hw; ++i) acc += g[i];
          p->grad[bc] += acc;
        }
      });
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T v = t.data()[bc];
    T* dst = out.data().data() + bc * hw;
    std::fill(dst, dst + hw, v);
  }
  return out;
}

}  // namespace ocseg
