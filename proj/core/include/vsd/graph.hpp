// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vsd/tensor.hpp"

namespace vsd {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Reverse-mode tape over dense tensors. Ops evaluate eagerly at build time
// (define-by-run); creation order is therefore a valid topological order and
// recompute()/backward() walk it forward/backward. Gradients accumulate by
// addition at nodes with several consumers.
//
// Elementwise ops broadcast only over leading singleton axes: the smaller
// operand, right-aligned against the larger shape, must have extent 1 on
// every axis where the extents differ and those axes must form a leading
// prefix. Anything else is a shape error, never silent.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  // Leaves. Parameters participate in backward; constants never do.
  NodeId parameter(std::string name, Tensor<T> value);
  NodeId constant(Tensor<T> value, std::string name = "const");

  // Elementwise.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, T c);
  NodeId neg(NodeId a) { return scale(a, T{-1}); }

  // Linear algebra. matmul accepts [.., M, K] x [.., K, N]; either operand
  // may be rank 2 and is then shared across the other's batch.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose_last2(NodeId a);

  // Shape surgery. All of these materialize their result.
  NodeId reshape(NodeId a, Shape shape);
  NodeId permute(NodeId a, std::vector<std::size_t> axes);
  NodeId slice(NodeId a, std::size_t axis, std::size_t start, std::size_t len);
  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis);
  NodeId expand(NodeId a, std::size_t axis, std::size_t times);
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);

  // Reductions.
  NodeId reduce_sum(NodeId a, std::size_t axis, bool keepdim = true);
  NodeId reduce_mean(NodeId a, std::size_t axis, bool keepdim = true);
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);

  // Nonlinearities and normalizations, all over the last axis where rowwise.
  NodeId softmax_last(NodeId a);
  NodeId log_floor(NodeId a, T floor);
  NodeId gelu(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps);
  NodeId l2_normalize_last(NodeId a, T eps);

  // Evaluation and differentiation.
  const Tensor<T>& value(NodeId id) const;
  Tensor<T>& leaf_value(NodeId id);  // mutable; leaves only
  void recompute();                  // re-evaluates every non-leaf in order
  void zero_grads();
  void backward(NodeId root);        // root must hold exactly one element
  bool has_grad(NodeId id) const;
  const Tensor<T>& grad(NodeId id) const;

  bool requires_grad(NodeId id) const;
  bool is_leaf(NodeId id) const;
  const std::string& label(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> parameters() const;
  NodeId first_nonfinite() const;  // kNoNode when every value is finite

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool leaf = false;
    std::string name;
    std::vector<NodeId> parents;
    std::function<void(Graph&, NodeId)> forward;
    std::function<void(Graph&, NodeId)> backward;
  };

  NodeId make_node(std::string label, std::vector<NodeId> parents,
                   std::function<Tensor<T>(Graph&, NodeId)> compute,
                   std::function<void(Graph&, NodeId)> backward);
  void accum_grad(NodeId id, const Tensor<T>& g);
  void accum_grad(NodeId id, Tensor<T>&& g);  // moves into an empty grad slot
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  double epsilon = 0;
  std::size_t entries_checked = 0;
  double max_rel_err = 0;
  GradCheckEntry worst;
  std::map<std::string, double> per_parameter;  // name -> max rel err
  bool passed(double tol) const { return entries_checked > 0 && max_rel_err < tol; }
};

// Central-difference check of every parameter gradient against the tape.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// max_entries_per_param == 0 checks every entry; otherwise that many
// distinct entries are sampled per parameter with the given seed.
template <typename T>
GradCheckReport finite_difference_check(Graph<T>& g, NodeId root, double epsilon,
                                        std::size_t max_entries_per_param = 0,
                                        std::uint64_t seed = 17);

}  // namespace vsd
