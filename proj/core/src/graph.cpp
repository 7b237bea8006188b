// SPDX-License-Identifier: Apache-2.0
#include "vsd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vsd/detail/gemm.hpp"
#include "vsd/rng.hpp"

namespace vsd {

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

// True when `small` right-aligned against `big` differs only on axes that
// are 1 in `small` and form a leading prefix of the aligned shape.
bool leading_broadcast_ok(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  bool matching_suffix_started = false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] == big[off + i]) {
      matching_suffix_started = true;
    } else if (small[i] == 1 && !matching_suffix_started) {
      continue;
    } else {
      return false;
    }
  }
  return true;
}

// Ranks break numel ties so [n] vs [1,n] resolves to the rank-2 operand.
bool broadcast_ok(const Shape& sa, const Shape& sb) {
  if (sa == sb) return true;
  const bool a_small = sa.size() != sb.size() ? sa.size() < sb.size() : numel(sa) < numel(sb);
  const Shape& small = a_small ? sa : sb;
  const Shape& big = a_small ? sb : sa;
  return leading_broadcast_ok(small, big);
}

const Shape& broadcast_out_shape(const Shape& sa, const Shape& sb) {
  if (sa.size() != sb.size()) return sa.size() > sb.size() ? sa : sb;
  return numel(sa) >= numel(sb) ? sa : sb;
}

// out[i] = f(a[i mod na], b[i mod nb]). Leading-only broadcasting means the
// smaller operand tiles contiguously, so the wrap never needs a modulo.
template <typename T, typename F>
void broadcast_binary(const Tensor<T>& ta, const Tensor<T>& tb, Tensor<T>& out, F f) {
  const std::size_t n = out.size(), na = ta.size(), nb = tb.size();
  const T* pa = ta.data();
  const T* pb = tb.data();
  T* o = out.data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  } else if (na == n) {
    for (std::size_t r = 0; r < n / nb; ++r) {
      for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = f(pa[r * nb + j], pb[j]);
    }
  } else {
    for (std::size_t r = 0; r < n / na; ++r) {
      for (std::size_t j = 0; j < na; ++j) o[r * na + j] = f(pa[j], pb[r * na + j]);
    }
  }
}

// Sums grad over the leading axes that were broadcast, yielding `target`.
template <typename T>
Tensor<T> reduce_leading(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  const std::size_t nt = out.size();
  const std::size_t reps = g.size() / nt;
  const T* src = g.data();
  T* dst = out.data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < nt; ++j) dst[j] += src[r * nt + j];
  }
  return out;
}

std::size_t prod(const Shape& s, std::size_t lo, std::size_t hi) {
  std::size_t p = 1;
  for (std::size_t i = lo; i < hi; ++i) p *= s[i];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Node bookkeeping

template <typename T>
void Graph<T>::check_id(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail("graph", "invalid node id " + std::to_string(id));
  }
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(NodeId id) {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
NodeId Graph<T>::make_node(std::string label, std::vector<NodeId> parents,
                           std::function<Tensor<T>(Graph&, NodeId)> compute,
                           std::function<void(Graph&, NodeId)> backward) {
  for (NodeId p : parents) check_id(p);
  const NodeId self = static_cast<NodeId>(nodes_.size());
  Node n;
  n.name = std::move(label);
  n.parents = std::move(parents);
  for (NodeId p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  nodes_[self].value = compute(*this, self);
  nodes_[self].forward = [compute](Graph& g, NodeId id) {
    g.nodes_[id].value = compute(g, id);
  };
  return self;
}

template <typename T>
void Graph<T>::accum_grad(NodeId id, const Tensor<T>& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    fail("backward(" + n.name + ")", "gradient shape " + shape_str(g.shape()) +
                                         " does not match value shape " +
                                         shape_str(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    T* dst = n.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += src[i];
  }
}

template <typename T>
void Graph<T>::accum_grad(NodeId id, Tensor<T>&& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (!n.has_grad && g.shape() == n.value.shape()) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  accum_grad(id, static_cast<const Tensor<T>&>(g));
}

template <typename T>
NodeId Graph<T>::parameter(std::string name, Tensor<T> value) {
  const NodeId self = static_cast<NodeId>(nodes_.size());
  Node n;
  n.name = std::move(name);
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return self;
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value, std::string name) {
  const NodeId self = static_cast<NodeId>(nodes_.size());
  Node n;
  n.name = std::move(name);
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return self;
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  return node(id).value;
}

template <typename T>
Tensor<T>& Graph<T>::leaf_value(NodeId id) {
  Node& n = node(id);
  if (!n.leaf) fail("leaf_value", "node '" + n.name + "' is not a leaf");
  return n.value;
}

template <typename T>
bool Graph<T>::has_grad(NodeId id) const {
  return node(id).has_grad;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.has_grad) fail("grad", "node '" + n.name + "' has no gradient");
  return n.grad;
}

template <typename T>
bool Graph<T>::requires_grad(NodeId id) const {
  return node(id).requires_grad;
}

template <typename T>
bool Graph<T>::is_leaf(NodeId id) const {
  return node(id).leaf;
}

template <typename T>
const std::string& Graph<T>::label(NodeId id) const {
  return node(id).name;
}

template <typename T>
std::vector<NodeId> Graph<T>::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf && nodes_[i].requires_grad) out.push_back(static_cast<NodeId>(i));
  }
  return out;
}

template <typename T>
NodeId Graph<T>::first_nonfinite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) return static_cast<NodeId>(i);
  }
  return kNoNode;
}

template <typename T>
void Graph<T>::recompute() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].forward) nodes_[i].forward(*this, static_cast<NodeId>(i));
  }
}

template <typename T>
void Graph<T>::zero_grads() {
  for (Node& n : nodes_) {
    n.grad = Tensor<T>();
    n.has_grad = false;
  }
}

template <typename T>
void Graph<T>::backward(NodeId root) {
  Node& r = node(root);
  if (r.value.size() != 1) {
    fail("backward", "root '" + r.name + "' has shape " + shape_str(r.value.shape()) +
                         "; a scalar (single element) is required");
  }
  zero_grads();
  if (!r.requires_grad) return;
  r.grad = Tensor<T>::ones(r.value.shape());
  r.has_grad = true;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || n.leaf || !n.requires_grad) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  const Shape& sa = node(a).value.shape();
  const Shape& sb = node(b).value.shape();
  if (!broadcast_ok(sa, sb)) {
    fail("add", "shapes " + shape_str(sa) + " and " + shape_str(sb) + " do not broadcast");
  }
  return make_node(
      "add", {a, b},
      [a, b](Graph& g, NodeId) {
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        Tensor<T> out = Tensor<T>::uninitialized(broadcast_out_shape(ta.shape(), tb.shape()));
        broadcast_binary(ta, tb, out, [](T x, T y) { return x + y; });
        return out;
      },
      [a, b](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& sa = g.node(a).value.shape();
        const Shape& sb = g.node(b).value.shape();
        if (go.shape() == sa) g.accum_grad(a, go);
        else g.accum_grad(a, reduce_leading(go, sa));
        if (go.shape() == sb) g.accum_grad(b, go);
        else g.accum_grad(b, reduce_leading(go, sb));
      });
}

template <typename T>
NodeId Graph<T>::sub(NodeId a, NodeId b) {
  const Shape& sa = node(a).value.shape();
  const Shape& sb = node(b).value.shape();
  if (!broadcast_ok(sa, sb)) {
    fail("sub", "shapes " + shape_str(sa) + " and " + shape_str(sb) + " do not broadcast");
  }
  return make_node(
      "sub", {a, b},
      [a, b](Graph& g, NodeId) {
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        Tensor<T> out = Tensor<T>::uninitialized(broadcast_out_shape(ta.shape(), tb.shape()));
        broadcast_binary(ta, tb, out, [](T x, T y) { return x - y; });
        return out;
      },
      [a, b](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& sa = g.node(a).value.shape();
        const Shape& sb = g.node(b).value.shape();
        if (go.shape() == sa) g.accum_grad(a, go);
        else g.accum_grad(a, reduce_leading(go, sa));
        Tensor<T> gb;
        if (go.shape() == sb) {
          gb = Tensor<T>::uninitialized(sb);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -go[i];
        } else {
          gb = reduce_leading(go, sb);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -gb[i];
        }
        g.accum_grad(b, std::move(gb));
      });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  const Shape& sa = node(a).value.shape();
  const Shape& sb = node(b).value.shape();
  if (!broadcast_ok(sa, sb)) {
    fail("mul", "shapes " + shape_str(sa) + " and " + shape_str(sb) + " do not broadcast");
  }
  return make_node(
      "mul", {a, b},
      [a, b](Graph& g, NodeId) {
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        Tensor<T> out = Tensor<T>::uninitialized(broadcast_out_shape(ta.shape(), tb.shape()));
        broadcast_binary(ta, tb, out, [](T x, T y) { return x * y; });
        return out;
      },
      [a, b](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        Tensor<T> ga = Tensor<T>::uninitialized(go.shape());
        Tensor<T> gb = Tensor<T>::uninitialized(go.shape());
        broadcast_binary(go, tb, ga, [](T x, T y) { return x * y; });
        broadcast_binary(go, ta, gb, [](T x, T y) { return x * y; });
        if (ga.shape() == ta.shape()) g.accum_grad(a, std::move(ga));
        else g.accum_grad(a, reduce_leading(ga, ta.shape()));
        if (gb.shape() == tb.shape()) g.accum_grad(b, std::move(gb));
        else g.accum_grad(b, reduce_leading(gb, tb.shape()));
      });
}

template <typename T>
NodeId Graph<T>::scale(NodeId a, T c) {
  return make_node(
      "scale", {a},
      [a, c](Graph& g, NodeId) {
        const Tensor<T>& x = g.node(a).value;
        Tensor<T> out = Tensor<T>::uninitialized(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
        return out;
      },
      [a, c](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        Tensor<T> ga = Tensor<T>::uninitialized(go.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * c;
        g.accum_grad(a, std::move(ga));
      });
}

// ---------------------------------------------------------------------------
// Matrix multiply

namespace {

template <typename T>
void matmul_shapes(const std::string& op, const Shape& sa, const Shape& sb, Shape& out,
                   std::size_t& batch, std::size_t& m, std::size_t& k, std::size_t& n,
                   bool& a_shared, bool& b_shared) {
  if (sa.size() < 2 || sb.size() < 2) {
    fail(op, "operands must have rank >= 2, got " + shape_str(sa) + " x " + shape_str(sb));
  }
  m = sa[sa.size() - 2];
  k = sa[sa.size() - 1];
  const std::size_t k2 = sb[sb.size() - 2];
  n = sb[sb.size() - 1];
  if (k != k2) {
    fail(op, "inner extents disagree: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  a_shared = batch_a.empty() && !batch_b.empty();
  b_shared = batch_b.empty();
  if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b) {
    fail(op, "batch extents disagree: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const Shape& batch_shape = batch_a.empty() ? batch_b : batch_a;
  batch = numel(batch_shape);
  out = batch_shape;
  out.push_back(m);
  out.push_back(n);
}

}  // namespace

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  {
    Shape out;
    std::size_t batch, m, k, n;
    bool a_shared, b_shared;
    matmul_shapes<T>("matmul", node(a).value.shape(), node(b).value.shape(), out, batch, m, k, n,
                     a_shared, b_shared);
  }
  return make_node(
      "matmul", {a, b},
      [a, b](Graph& g, NodeId) {
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        Shape out_shape;
        std::size_t batch, m, k, n;
        bool a_shared, b_shared;
        matmul_shapes<T>("matmul", ta.shape(), tb.shape(), out_shape, batch, m, k, n, a_shared,
                         b_shared);
        Tensor<T> out = Tensor<T>::uninitialized(out_shape);
        if (b_shared) {
          // One gemm over the flattened batch: [batch*m, k] x [k, n].
          detail::gemm(false, false, batch * m, n, k, T{1}, ta.data(), k, tb.data(), n, T{0},
                       out.data(), n);
        } else {
          for (std::size_t i = 0; i < batch; ++i) {
            const T* pa = ta.data() + (a_shared ? 0 : i * m * k);
            detail::gemm(false, false, m, n, k, T{1}, pa, k, tb.data() + i * k * n, n, T{0},
                         out.data() + i * m * n, n);
          }
        }
        return out;
      },
      [a, b](Graph& g, NodeId self) {
        const Tensor<T>& ta = g.node(a).value;
        const Tensor<T>& tb = g.node(b).value;
        const Tensor<T>& go = g.node(self).grad;
        Shape out_shape;
        std::size_t batch, m, k, n;
        bool a_shared, b_shared;
        matmul_shapes<T>("matmul", ta.shape(), tb.shape(), out_shape, batch, m, k, n, a_shared,
                         b_shared);
        if (g.node(a).requires_grad) {
          Tensor<T> ga = Tensor<T>::uninitialized(ta.shape());
          if (b_shared) {
            detail::gemm(false, true, batch * m, k, n, T{1}, go.data(), n, tb.data(), n, T{0},
                         ga.data(), k);
          } else if (a_shared) {
            // dA = sum_i dC_i * B_i^T, accumulated via beta = 1.
            for (std::size_t i = 0; i < batch; ++i) {
              detail::gemm(false, true, m, k, n, T{1}, go.data() + i * m * n, n,
                           tb.data() + i * k * n, n, i == 0 ? T{0} : T{1}, ga.data(), k);
            }
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              detail::gemm(false, true, m, k, n, T{1}, go.data() + i * m * n, n,
                           tb.data() + i * k * n, n, T{0}, ga.data() + i * m * k, k);
            }
          }
          g.accum_grad(a, std::move(ga));
        }
        if (g.node(b).requires_grad) {
          Tensor<T> gb = Tensor<T>::uninitialized(tb.shape());
          if (b_shared) {
            detail::gemm(true, false, k, n, batch * m, T{1}, ta.data(), k, go.data(), n, T{0},
                         gb.data(), n);
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              const T* pa = ta.data() + (a_shared ? 0 : i * m * k);
              detail::gemm(true, false, k, n, m, T{1}, pa, k, go.data() + i * m * n, n, T{0},
                           gb.data() + i * k * n, n);
            }
          }
          g.accum_grad(b, std::move(gb));
        }
      });
}

namespace {

template <typename T>
Tensor<T> transpose_last2_kernel(const Tensor<T>& t) {
  const Shape& s = t.shape();
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s[s.size() - 1];
  const std::size_t batch = t.size() / (rows * cols);
  for (std::size_t i = 0; i < batch; ++i) {
    const T* src = t.data() + i * rows * cols;
    T* dst = out.data() + i * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
  return out;
}

}  // namespace

template <typename T>
NodeId Graph<T>::transpose_last2(NodeId a) {
  if (node(a).value.rank() < 2) {
    fail("transpose_last2", "rank >= 2 required, got " + shape_str(node(a).value.shape()));
  }
  return make_node(
      "transpose_last2", {a},
      [a](Graph& g, NodeId) { return transpose_last2_kernel(g.node(a).value); },
      [a](Graph& g, NodeId self) {
        g.accum_grad(a, transpose_last2_kernel(g.node(self).grad));
      });
}

// ---------------------------------------------------------------------------
// Shape surgery

template <typename T>
NodeId Graph<T>::reshape(NodeId a, Shape shape) {
  if (numel(shape) != node(a).value.size()) {
    fail("reshape", "cannot reshape " + shape_str(node(a).value.shape()) + " to " +
                        shape_str(shape) + " (element count differs)");
  }
  return make_node(
      "reshape", {a},
      [a, shape](Graph& g, NodeId) {
        return Tensor<T>(shape, g.node(a).value.vec());
      },
      [a](Graph& g, NodeId self) {
        g.accum_grad(a, Tensor<T>(g.node(a).value.shape(), g.node(self).grad.vec()));
      });
}

namespace {

template <typename T>
Tensor<T> permute_kernel(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
  const Shape& s = t.shape();
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = s[axes[i]];
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const Shape in_strides = row_major_strides(s);
  // Stride of the input along each output axis.
  std::vector<std::size_t> strides(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) strides[i] = in_strides[axes[i]];
  const std::size_t r = s.size();
  // A suffix of axes left in place is contiguous in both layouts and moves as
  // one block; the odometer only walks the leading (permuted) axes.
  std::size_t head = r;
  while (head > 0 && axes[head - 1] == head - 1) --head;
  std::size_t block = 1;
  for (std::size_t i = head; i < r; ++i) block *= s[i];
  T* dst = out.data();
  const T* src = t.data();
  if (head == 0) {
    std::copy(src, src + t.size(), dst);
    return out;
  }
  std::vector<std::size_t> idx(head, 0);
  const std::size_t blocks = t.size() / std::max<std::size_t>(block, 1);
  std::size_t src_off = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (block == 1) {
      dst[b] = src[src_off];
    } else {
      std::copy(src + src_off, src + src_off + block, dst + b * block);
    }
    // Odometer increment over the leading output axes, tracking input offset.
    for (std::size_t ax = head; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src_off += strides[ax];
        break;
      }
      src_off -= strides[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace

template <typename T>
NodeId Graph<T>::permute(NodeId a, std::vector<std::size_t> axes) {
  const Shape& s = node(a).value.shape();
  if (axes.size() != s.size()) fail("permute", "axes rank mismatch for " + shape_str(s));
  std::vector<bool> seen(axes.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= axes.size() || seen[ax]) fail("permute", "axes are not a permutation");
    seen[ax] = true;
  }
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  return make_node(
      "permute", {a},
      [a, axes](Graph& g, NodeId) { return permute_kernel(g.node(a).value, axes); },
      [a, inverse](Graph& g, NodeId self) {
        g.accum_grad(a, permute_kernel(g.node(self).grad, inverse));
      });
}

template <typename T>
NodeId Graph<T>::slice(NodeId a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = node(a).value.shape();
  if (axis >= s.size() || start + len > s[axis] || len == 0) {
    fail("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                      ") with axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  return make_node(
      "slice", {a},
      [a, axis, start, len](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const Shape& in = t.shape();
        Shape out_shape = in;
        out_shape[axis] = len;
        Tensor<T> out = Tensor<T>::uninitialized(out_shape);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = t.data() + (o * in[axis] + start) * inner;
          T* dst = out.data() + o * len * inner;
          std::copy(src, src + len * inner, dst);
        }
        return out;
      },
      [a, axis, start, len](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& in = g.node(a).value.shape();
        Tensor<T> ga(in);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = go.data() + o * len * inner;
          T* dst = ga.data() + (o * in[axis] + start) * inner;
          std::copy(src, src + len * inner, dst);
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::concat(const std::vector<NodeId>& parts, std::size_t axis) {
  if (parts.empty()) fail("concat", "no operands");
  const Shape& first = node(parts[0]).value.shape();
  if (axis >= first.size()) fail("concat", "axis out of range for " + shape_str(first));
  std::size_t total_axis = 0;
  for (NodeId p : parts) {
    const Shape& s = node(p).value.shape();
    if (s.size() != first.size()) fail("concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        fail("concat", "shapes " + shape_str(first) + " and " + shape_str(s) +
                           " differ off the concat axis");
      }
    }
    total_axis += s[axis];
  }
  return make_node(
      "concat", parts,
      [parts, axis, total_axis](Graph& g, NodeId) {
        const Shape& first_shape = g.node(parts[0]).value.shape();
        Shape out_shape = first_shape;
        out_shape[axis] = total_axis;
        Tensor<T> out = Tensor<T>::uninitialized(out_shape);
        const std::size_t outer = prod(out_shape, 0, axis);
        const std::size_t inner = prod(out_shape, axis + 1, out_shape.size());
        std::size_t written = 0;
        for (NodeId p : parts) {
          const Tensor<T>& t = g.node(p).value;
          const std::size_t ext = t.shape()[axis];
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = t.data() + o * ext * inner;
            T* dst = out.data() + (o * total_axis + written) * inner;
            std::copy(src, src + ext * inner, dst);
          }
          written += ext;
        }
        return out;
      },
      [parts, axis, total_axis](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& out_shape = go.shape();
        const std::size_t outer = prod(out_shape, 0, axis);
        const std::size_t inner = prod(out_shape, axis + 1, out_shape.size());
        std::size_t offset = 0;
        for (NodeId p : parts) {
          const Shape& in = g.node(p).value.shape();
          const std::size_t ext = in[axis];
          if (g.node(p).requires_grad) {
            Tensor<T> gp = Tensor<T>::uninitialized(in);
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = go.data() + (o * total_axis + offset) * inner;
              T* dst = gp.data() + o * ext * inner;
              std::copy(src, src + ext * inner, dst);
            }
            g.accum_grad(p, std::move(gp));
          }
          offset += ext;
        }
      });
}

template <typename T>
NodeId Graph<T>::expand(NodeId a, std::size_t axis, std::size_t times) {
  const Shape& s = node(a).value.shape();
  if (axis >= s.size() || s[axis] != 1 || times == 0) {
    fail("expand", "axis " + std::to_string(axis) + " of " + shape_str(s) +
                       " must exist with extent 1");
  }
  return make_node(
      "expand", {a},
      [a, axis, times](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const Shape& in = t.shape();
        Shape out_shape = in;
        out_shape[axis] = times;
        Tensor<T> out = Tensor<T>::uninitialized(out_shape);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = t.data() + o * inner;
          for (std::size_t r = 0; r < times; ++r) {
            std::copy(src, src + inner, out.data() + (o * times + r) * inner);
          }
        }
        return out;
      },
      [a, axis, times](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& in = g.node(a).value.shape();
        Tensor<T> ga(in);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        for (std::size_t o = 0; o < outer; ++o) {
          T* dst = ga.data() + o * inner;
          for (std::size_t r = 0; r < times; ++r) {
            const T* src = go.data() + (o * times + r) * inner;
            for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
          }
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  const Shape& s = node(a).value.shape();
  if (s.empty()) fail("gather_rows", "rank >= 1 required");
  for (std::size_t r : rows) {
    if (r >= s[0]) fail("gather_rows", "row " + std::to_string(r) + " out of range for " +
                                           shape_str(s));
  }
  return make_node(
      "gather_rows", {a},
      [a, rows](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const Shape& in = t.shape();
        Shape out_shape = in;
        out_shape[0] = rows.size();
        Tensor<T> out = Tensor<T>::uninitialized(out_shape);
        const std::size_t inner = prod(in, 1, in.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const T* src = t.data() + rows[i] * inner;
          std::copy(src, src + inner, out.data() + i * inner);
        }
        return out;
      },
      [a, rows](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& in = g.node(a).value.shape();
        Tensor<T> ga(in);
        const std::size_t inner = prod(in, 1, in.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const T* src = go.data() + i * inner;
          T* dst = ga.data() + rows[i] * inner;  // repeated rows accumulate
          for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
        }
        g.accum_grad(a, std::move(ga));
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
NodeId Graph<T>::reduce_sum(NodeId a, std::size_t axis, bool keepdim) {
  const Shape& s = node(a).value.shape();
  if (axis >= s.size()) fail("reduce_sum", "axis out of range for " + shape_str(s));
  return make_node(
      "reduce_sum", {a},
      [a, axis, keepdim](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const Shape& in = t.shape();
        Shape out_shape = in;
        if (keepdim) {
          out_shape[axis] = 1;
        } else {
          out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
        }
        Tensor<T> out(out_shape);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        const std::size_t ext = in[axis];
        for (std::size_t o = 0; o < outer; ++o) {
          T* dst = out.data() + o * inner;
          for (std::size_t e = 0; e < ext; ++e) {
            const T* src = t.data() + (o * ext + e) * inner;
            for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
          }
        }
        return out;
      },
      [a, axis](Graph& g, NodeId self) {
        const Tensor<T>& go = g.node(self).grad;
        const Shape& in = g.node(a).value.shape();
        Tensor<T> ga = Tensor<T>::uninitialized(in);
        const std::size_t outer = prod(in, 0, axis);
        const std::size_t inner = prod(in, axis + 1, in.size());
        const std::size_t ext = in[axis];
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = go.data() + o * inner;
          for (std::size_t e = 0; e < ext; ++e) {
            T* dst = ga.data() + (o * ext + e) * inner;
            std::copy(src, src + inner, dst);
          }
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::reduce_mean(NodeId a, std::size_t axis, bool keepdim) {
  const Shape& s = node(a).value.shape();
  if (axis >= s.size()) fail("reduce_mean", "axis out of range for " + shape_str(s));
  const T inv = T{1} / static_cast<T>(s[axis]);
  return scale(reduce_sum(a, axis, keepdim), inv);
}

template <typename T>
NodeId Graph<T>::sum_all(NodeId a) {
  return make_node(
      "sum_all", {a},
      [a](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        T acc{0};
        for (std::size_t i = 0; i < t.size(); ++i) acc += t[i];
        return Tensor<T>::scalar(acc);
      },
      [a](Graph& g, NodeId self) {
        const T go = g.node(self).grad[0];
        g.accum_grad(a, Tensor<T>::full(g.node(a).value.shape(), go));
      });
}

template <typename T>
NodeId Graph<T>::mean_all(NodeId a) {
  const T inv = T{1} / static_cast<T>(node(a).value.size());
  return scale(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
NodeId Graph<T>::softmax_last(NodeId a) {
  if (node(a).value.rank() < 1) fail("softmax_last", "rank >= 1 required");
  return make_node(
      "softmax_last", {a},
      [a](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const std::size_t d = t.shape().back();
        const std::size_t rows = t.size() / d;
        Tensor<T> out = Tensor<T>::uninitialized(t.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* x = t.data() + r * d;
          T* y = out.data() + r * d;
          T mx = x[0];
          for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
          T sum{0};
          for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
          }
          const T inv = T{1} / sum;
          for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
        }
        return out;
      },
      [a](Graph& g, NodeId self) {
        const Tensor<T>& y = g.node(self).value;
        const Tensor<T>& go = g.node(self).grad;
        const std::size_t d = y.shape().back();
        const std::size_t rows = y.size() / d;
        Tensor<T> ga = Tensor<T>::uninitialized(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* py = y.data() + r * d;
          const T* pg = go.data() + r * d;
          T* px = ga.data() + r * d;
          T dot{0};
          for (std::size_t j = 0; j < d; ++j) dot += pg[j] * py[j];
          for (std::size_t j = 0; j < d; ++j) px[j] = py[j] * (pg[j] - dot);
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::log_floor(NodeId a, T floor) {
  if (!(floor > T{0})) fail("log_floor", "floor must be positive");
  return make_node(
      "log_floor", {a},
      [a, floor](Graph& g, NodeId) {
        const Tensor<T>& x = g.node(a).value;
        Tensor<T> out = Tensor<T>::uninitialized(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x[i], floor));
        return out;
      },
      [a, floor](Graph& g, NodeId self) {
        const Tensor<T>& x = g.node(a).value;
        const Tensor<T>& go = g.node(self).grad;
        Tensor<T> ga = Tensor<T>::uninitialized(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          ga[i] = x[i] > floor ? go[i] / x[i] : T{0};
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::gelu(NodeId a) {
  return make_node(
      "gelu", {a},
      [a](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        Tensor<T> out = Tensor<T>::uninitialized(t.shape());
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double x = static_cast<double>(t[i]);
          out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
        }
        return out;
      },
      [a](Graph& g, NodeId self) {
        const Tensor<T>& x = g.node(a).value;
        const Tensor<T>& go = g.node(self).grad;
        Tensor<T> ga = Tensor<T>::uninitialized(x.shape());
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double v = static_cast<double>(x[i]);
          const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
          ga[i] = static_cast<T>(static_cast<double>(go[i]) * (cdf + v * pdf));
        }
        g.accum_grad(a, std::move(ga));
      });
}

template <typename T>
NodeId Graph<T>::layer_norm(NodeId x, NodeId gain, NodeId bias, T eps) {
  const Shape& sx = node(x).value.shape();
  const std::size_t d = sx.empty() ? 0 : sx.back();
  if (d == 0 || node(gain).value.shape() != Shape{d} || node(bias).value.shape() != Shape{d}) {
    fail("layer_norm", "gain/bias must be [" + std::to_string(d) + "] for input " +
                           shape_str(sx));
  }
  if (!(eps > T{0})) fail("layer_norm", "eps must be positive");
  return make_node(
      "layer_norm", {x, gain, bias},
      [x, gain, bias, eps, d](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(x).value;
        const T* pg = g.node(gain).value.data();
        const T* pb = g.node(bias).value.data();
        const std::size_t rows = t.size() / d;
        Tensor<T> out = Tensor<T>::uninitialized(t.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* px = t.data() + r * d;
          T* py = out.data() + r * d;
          T mean{0};
          for (std::size_t j = 0; j < d; ++j) mean += px[j];
          mean /= static_cast<T>(d);
          T var{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T c = px[j] - mean;
            var += c * c;
          }
          var /= static_cast<T>(d);
          const T inv_std = T{1} / std::sqrt(var + eps);
          for (std::size_t j = 0; j < d; ++j) {
            py[j] = (px[j] - mean) * inv_std * pg[j] + pb[j];
          }
        }
        return out;
      },
      [x, gain, bias, eps, d](Graph& g, NodeId self) {
        const Tensor<T>& t = g.node(x).value;
        const T* pg = g.node(gain).value.data();
        const Tensor<T>& go = g.node(self).grad;
        const std::size_t rows = t.size() / d;
        Tensor<T> gx = Tensor<T>::uninitialized(t.shape());
        Tensor<T> ggain({d});  // accumulates across rows; zero-filled
        Tensor<T> gbias({d});
        for (std::size_t r = 0; r < rows; ++r) {
          const T* px = t.data() + r * d;
          const T* pgo = go.data() + r * d;
          T* pgx = gx.data() + r * d;
          T mean{0};
          for (std::size_t j = 0; j < d; ++j) mean += px[j];
          mean /= static_cast<T>(d);
          T var{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T c = px[j] - mean;
            var += c * c;
          }
          var /= static_cast<T>(d);
          const T inv_std = T{1} / std::sqrt(var + eps);
          // dxhat_j = go_j * gain_j; dx via the usual three-term expansion.
          T sum_dxhat{0};
          T sum_dxhat_xhat{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T xhat = (px[j] - mean) * inv_std;
            const T dxhat = pgo[j] * pg[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            ggain[j] += pgo[j] * xhat;
            gbias[j] += pgo[j];
          }
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T xhat = (px[j] - mean) * inv_std;
            const T dxhat = pgo[j] * pg[j];
            pgx[j] = inv_std * (dxhat - inv_d * sum_dxhat - inv_d * xhat * sum_dxhat_xhat);
          }
        }
        g.accum_grad(x, std::move(gx));
        g.accum_grad(gain, std::move(ggain));
        g.accum_grad(bias, std::move(gbias));
      });
}

template <typename T>
NodeId Graph<T>::l2_normalize_last(NodeId a, T eps) {
  if (node(a).value.rank() < 1) fail("l2_normalize_last", "rank >= 1 required");
  if (!(eps > T{0})) fail("l2_normalize_last", "eps must be positive");
  return make_node(
      "l2_normalize_last", {a},
      [a, eps](Graph& g, NodeId) {
        const Tensor<T>& t = g.node(a).value;
        const std::size_t d = t.shape().back();
        const std::size_t rows = t.size() / d;
        Tensor<T> out = Tensor<T>::uninitialized(t.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* px = t.data() + r * d;
          T* py = out.data() + r * d;
          T sq{0};
          for (std::size_t j = 0; j < d; ++j) sq += px[j] * px[j];
          const T norm = std::sqrt(sq);
          const T inv = T{1} / std::max(norm, eps);
          for (std::size_t j = 0; j < d; ++j) py[j] = px[j] * inv;
        }
        return out;
      },
      [a, eps](Graph& g, NodeId self) {
        const Tensor<T>& t = g.node(a).value;
        const Tensor<T>& y = g.node(self).value;
        const Tensor<T>& go = g.node(self).grad;
        const std::size_t d = t.shape().back();
        const std::size_t rows = t.size() / d;
        Tensor<T> ga = Tensor<T>::uninitialized(t.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* px = t.data() + r * d;
          const T* py = y.data() + r * d;
          const T* pgo = go.data() + r * d;
          T* pga = ga.data() + r * d;
          T sq{0};
          for (std::size_t j = 0; j < d; ++j) sq += px[j] * px[j];
          const T norm = std::sqrt(sq);
          if (norm > eps) {
            T dot{0};
            for (std::size_t j = 0; j < d; ++j) dot += pgo[j] * py[j];
            const T inv = T{1} / norm;
            for (std::size_t j = 0; j < d; ++j) pga[j] = (pgo[j] - py[j] * dot) * inv;
          } else {
            // Below eps the map is linear: y = x / eps.
            const T inv = T{1} / eps;
            for (std::size_t j = 0; j < d; ++j) pga[j] = pgo[j] * inv;
          }
        }
        g.accum_grad(a, std::move(ga));
      });
}

// ---------------------------------------------------------------------------
// Finite differences

template <typename T>
GradCheckReport finite_difference_check(Graph<T>& g, NodeId root, double epsilon,
                                        std::size_t max_entries_per_param, std::uint64_t seed) {
  if (!(epsilon > 0)) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  g.recompute();
  g.backward(root);

  struct ParamGrad {
    NodeId id;
    std::string name;
    Tensor<T> grad;
  };
  std::vector<ParamGrad> params;
  for (NodeId id : g.parameters()) {
    Tensor<T> grad = g.has_grad(id) ? g.grad(id) : Tensor<T>(g.value(id).shape());
    params.push_back({id, g.label(id), std::move(grad)});
  }

  GradCheckReport rep;
  rep.epsilon = epsilon;
  Rng rng(seed);

  for (ParamGrad& p : params) {
    Tensor<T>& v = g.leaf_value(p.id);
    std::vector<std::size_t> indices(v.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::size_t take = indices.size();
    if (max_entries_per_param > 0 && max_entries_per_param < take) {
      take = max_entries_per_param;
      // Partial Fisher-Yates: the first `take` slots become a uniform sample
      // without replacement.
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i),
                            static_cast<std::int64_t>(indices.size() - 1)));
        std::swap(indices[i], indices[j]);
      }
    }

    double param_max = 0;
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t idx = indices[s];
      const T keep = v[idx];
      v[idx] = keep + static_cast<T>(epsilon);
      g.recompute();
      const double fp = static_cast<double>(g.value(root)[0]);
      v[idx] = keep - static_cast<T>(epsilon);
      g.recompute();
      const double fm = static_cast<double>(g.value(root)[0]);
      v[idx] = keep;

      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double analytic = static_cast<double>(p.grad[idx]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;

      ++rep.entries_checked;
      param_max = std::max(param_max, rel);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = {p.name, idx, analytic, numeric, rel};
      }
    }
    rep.per_parameter[p.name] = param_max;
  }

  g.recompute();  // leave values consistent with the restored leaves
  return rep;
}

template class Graph<float>;
template class Graph<double>;
template GradCheckReport finite_difference_check<float>(Graph<float>&, NodeId, double, std::size_t,
                                                        std::uint64_t);
template GradCheckReport finite_difference_check<double>(Graph<double>&, NodeId, double,
                                                         std::size_t, std::uint64_t);

}  // namespace vsd
