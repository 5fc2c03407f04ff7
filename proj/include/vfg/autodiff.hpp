#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "vfg/tensor.hpp"

namespace vfg::ad {

using NodeId = std::size_t;

enum class Op {
  Constant,
  Param,
  Add,
  Sub,
  ElemMul,
  Scale,
  Neg,
  MatVec,      // W[o x i] applied to every row of X[b x i] (or X[i])
  Affine,      // MatVec plus a bias row
  Relu,
  Tanh,
  Exp,
  Softplus,
  Sum,         // all elements -> scalar
  RowSum,      // [b x n] -> [b]
  L1Norm,      // -> scalar
  SqNorm,      // -> scalar
  Concat,      // along the last axis
  Split,       // column range along the last axis
  MeanOf,      // elementwise mean of equally shaped inputs
  GatherRows,  // table[C x m] indexed by one class label per row -> [b x m]
};

const char* op_name(Op op);

/// Reverse-mode tape. Every node's forward value is computed eagerly when it
/// is appended; inputs always have smaller ids than the node itself.
class Tape {
 public:
  NodeId constant(Tensor value);
  NodeId param(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId elem_mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId neg(NodeId a);
  NodeId matvec(NodeId w, NodeId x);
  NodeId affine(NodeId w, NodeId x, NodeId bias);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId softplus(NodeId a);
  NodeId sum(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId l1_norm(NodeId a);
  NodeId sq_norm(NodeId a);
  NodeId concat(std::span<const NodeId> parts);
  NodeId split(NodeId a, std::size_t begin, std::size_t end);
  NodeId mean_of(std::span<const NodeId> parts);
  NodeId gather_rows(NodeId table, std::vector<std::size_t> rows);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  double scalar(NodeId id) const { return value(id).item(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& params() const { return params_; }

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    double factor = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<std::size_t> rows;
  };

  NodeId push(Node node);
  bool any_requires_grad(std::span<const NodeId> ids) const;
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;

  friend struct BackwardAccess;
};

/// Gradient of a scalar loss with respect to every param node of a tape.
struct Gradients {
  std::map<NodeId, Tensor> by_param;

  const Tensor& at(NodeId id) const { return by_param.at(id); }
  /// Global L2 norm across all entries.
  double norm() const;
};

/// Reverse sweep from `loss` (must be a scalar). Params not reachable from
/// the loss receive zero gradients. Throws NumericError on non-finite adjoints.
Gradients backward(const Tape& tape, NodeId loss);

/// Builds a scalar loss on a fresh tape from the given param node ids.
using TapeFn = std::function<NodeId(Tape&, std::span<const NodeId>)>;

/// Evaluates `fn` once on a fresh tape and returns the scalar value.
double evaluate(const TapeFn& fn, std::span<const Tensor> params);

/// Max over all parameter coordinates of
/// |analytic - central difference| / max(1, |central difference|).
double grad_check(const TapeFn& fn, std::span<const Tensor> params, double eps);

}  // namespace vfg::ad
