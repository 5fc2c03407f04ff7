#include "vfg/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "vfg/error.hpp"

namespace vfg::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ArrMap as_array(Tensor& t) { return ArrMap(t.data().data(), static_cast<Eigen::Index>(t.size())); }
ConstArrMap as_array(const Tensor& t) {
  return ConstArrMap(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

void require_same_shape(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() != b.shape()) {
    throw NumericError(std::string("shape mismatch in ") + op_name(op) + ": " + shape_string(a.shape()) +
                       " vs " + shape_string(b.shape()));
  }
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

Shape batched_shape(const Tensor& x, std::size_t cols) {
  return x.rank() == 2 ? Shape{x.rows(), cols} : Shape{cols};
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::ElemMul: return "elem_mul";
    case Op::Scale: return "scale";
    case Op::Neg: return "neg";
    case Op::MatVec: return "matvec";
    case Op::Affine: return "affine";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Softplus: return "softplus";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::L1Norm: return "l1_norm";
    case Op::SqNorm: return "sq_norm";
    case Op::Concat: return "concat";
    case Op::Split: return "split";
    case Op::MeanOf: return "mean_of";
    case Op::GatherRows: return "gather_rows";
  }
  return "?";
}

void Tape::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw NumericError("unknown tape node " + std::to_string(id));
}

bool Tape::any_requires_grad(std::span<const NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](NodeId i) { return nodes_[i].requires_grad; });
}

NodeId Tape::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericError(std::string("non-finite result in ") + op_name(node.op) + " at node " +
                       std::to_string(nodes_.size()));
  }
  if (node.op != Op::Param && node.op != Op::Constant) node.requires_grad = any_requires_grad(node.inputs);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) { return push(Node{Op::Constant, {}, std::move(value)}); }

NodeId Tape::param(Tensor value) {
  const NodeId id = push(Node{Op::Param, {}, std::move(value), true});
  params_.push_back(id);
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a), check_id(b);
  const Tensor& x = nodes_[a].value;
  const Tensor& y = nodes_[b].value;
  require_same_shape(x, y, Op::Add);
  Tensor out(x.shape());
  as_array(out) = as_array(x) + as_array(y);
  return push(Node{Op::Add, {a, b}, std::move(out)});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_id(a), check_id(b);
  const Tensor& x = nodes_[a].value;
  const Tensor& y = nodes_[b].value;
  require_same_shape(x, y, Op::Sub);
  Tensor out(x.shape());
  as_array(out) = as_array(x) - as_array(y);
  return push(Node{Op::Sub, {a, b}, std::move(out)});
}

NodeId Tape::elem_mul(NodeId a, NodeId b) {
  check_id(a), check_id(b);
  const Tensor& x = nodes_[a].value;
  const Tensor& y = nodes_[b].value;
  require_same_shape(x, y, Op::ElemMul);
  Tensor out(x.shape());
  as_array(out) = as_array(x) * as_array(y);
  return push(Node{Op::ElemMul, {a, b}, std::move(out)});
}

NodeId Tape::scale(NodeId a, double factor) {
  check_id(a);
  Tensor out(nodes_[a].value.shape());
  as_array(out) = as_array(nodes_[a].value) * factor;
  Node n{Op::Scale, {a}, std::move(out)};
  n.factor = factor;
  return push(std::move(n));
}

NodeId Tape::neg(NodeId a) {
  check_id(a);
  Tensor out(nodes_[a].value.shape());
  as_array(out) = -as_array(nodes_[a].value);
  return push(Node{Op::Neg, {a}, std::move(out)});
}

NodeId Tape::matvec(NodeId w, NodeId x) {
  check_id(w), check_id(x);
  const Tensor& W = nodes_[w].value;
  const Tensor& X = nodes_[x].value;
  if (W.rank() != 2 || X.rank() == 0 || X.cols() != W.cols()) {
    throw NumericError("shape mismatch in matvec: " + shape_string(W.shape()) + " vs " + shape_string(X.shape()));
  }
  Tensor out(batched_shape(X, W.rows()));
  as_matrix(out).noalias() = as_matrix(X) * as_matrix(W).transpose();
  return push(Node{Op::MatVec, {w, x}, std::move(out)});
}

NodeId Tape::affine(NodeId w, NodeId x, NodeId bias) {
  check_id(w), check_id(x), check_id(bias);
  const Tensor& W = nodes_[w].value;
  const Tensor& X = nodes_[x].value;
  const Tensor& b = nodes_[bias].value;
  if (W.rank() != 2 || X.rank() == 0 || X.cols() != W.cols() || b.rank() != 1 || b.size() != W.rows()) {
    throw NumericError("shape mismatch in affine: " + shape_string(W.shape()) + " x " + shape_string(X.shape()) +
                       " + " + shape_string(b.shape()));
  }
  Tensor out(batched_shape(X, W.rows()));
  auto Y = as_matrix(out);
  Y.noalias() = as_matrix(X) * as_matrix(W).transpose();
  Y.rowwise() += as_matrix(b).row(0);
  return push(Node{Op::Affine, {w, x, bias}, std::move(out)});
}

NodeId Tape::relu(NodeId a) {
  check_id(a);
  Tensor out(nodes_[a].value.shape());
  as_array(out) = as_array(nodes_[a].value).max(0.0);
  return push(Node{Op::Relu, {a}, std::move(out)});
}

NodeId Tape::tanh(NodeId a) {
  check_id(a);
  Tensor out(nodes_[a].value.shape());
  as_array(out) = as_array(nodes_[a].value).tanh();
  return push(Node{Op::Tanh, {a}, std::move(out)});
}

NodeId Tape::exp(NodeId a) {
  check_id(a);
  Tensor out(nodes_[a].value.shape());
  as_array(out) = as_array(nodes_[a].value).exp();
  return push(Node{Op::Exp, {a}, std::move(out)});
}

NodeId Tape::softplus(NodeId a) {
  check_id(a);
  const Tensor& x = nodes_[a].value;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = vfg::ad::softplus(x[i]);
  return push(Node{Op::Softplus, {a}, std::move(out)});
}

NodeId Tape::sum(NodeId a) {
  check_id(a);
  return push(Node{Op::Sum, {a}, Tensor::scalar(as_array(nodes_[a].value).sum())});
}

NodeId Tape::row_sum(NodeId a) {
  check_id(a);
  const Tensor& x = nodes_[a].value;
  if (x.rank() == 0) throw NumericError("row_sum of a scalar");
  Tensor out = x.rank() == 2 ? Tensor(Shape{x.rows()}) : Tensor(Shape{});
  Eigen::Map<Eigen::VectorXd>(out.data().data(), static_cast<Eigen::Index>(out.size())) =
      as_matrix(x).rowwise().sum();
  return push(Node{Op::RowSum, {a}, std::move(out)});
}

NodeId Tape::l1_norm(NodeId a) {
  check_id(a);
  return push(Node{Op::L1Norm, {a}, Tensor::scalar(as_array(nodes_[a].value).abs().sum())});
}

NodeId Tape::sq_norm(NodeId a) {
  check_id(a);
  return push(Node{Op::SqNorm, {a}, Tensor::scalar(as_array(nodes_[a].value).square().sum())});
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw NumericError("concat of zero inputs");
  for (NodeId p : parts) check_id(p);
  const Tensor& first = nodes_[parts[0]].value;
  if (first.rank() == 0) throw NumericError("concat of scalars");
  std::size_t width = 0;
  for (NodeId p : parts) {
    const Tensor& t = nodes_[p].value;
    if (t.rank() != first.rank() || t.rows() != first.rows()) {
      throw NumericError("shape mismatch in concat: " + shape_string(first.shape()) + " vs " + shape_string(t.shape()));
    }
    width += t.cols();
  }
  Tensor out(batched_shape(first, width));
  auto Y = as_matrix(out);
  Eigen::Index offset = 0;
  for (NodeId p : parts) {
    const auto X = as_matrix(nodes_[p].value);
    Y.middleCols(offset, X.cols()) = X;
    offset += X.cols();
  }
  return push(Node{Op::Concat, {parts.begin(), parts.end()}, std::move(out)});
}

NodeId Tape::split(NodeId a, std::size_t begin, std::size_t end) {
  check_id(a);
  const Tensor& x = nodes_[a].value;
  if (x.rank() == 0 || begin >= end || end > x.cols()) {
    throw NumericError("split range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                       shape_string(x.shape()));
  }
  Node n{Op::Split, {a}, x.columns(begin, end)};
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

NodeId Tape::mean_of(std::span<const NodeId> parts) {
  if (parts.empty()) throw NumericError("mean_of zero inputs");
  for (NodeId p : parts) check_id(p);
  const Tensor& first = nodes_[parts[0]].value;
  Tensor out(first.shape());
  auto acc = as_array(out);
  for (NodeId p : parts) {
    require_same_shape(first, nodes_[p].value, Op::MeanOf);
    acc += as_array(nodes_[p].value);
  }
  acc /= static_cast<double>(parts.size());
  return push(Node{Op::MeanOf, {parts.begin(), parts.end()}, std::move(out)});
}

NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> rows) {
  check_id(table);
  const Tensor& t = nodes_[table].value;
  if (t.rank() != 2) throw NumericError("gather_rows needs a matrix table");
  Tensor out(Shape{rows.size(), t.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= t.rows()) throw NumericError("gather_rows index " + std::to_string(rows[r]) + " out of range");
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, c) = t.at(rows[r], c);
  }
  Node n{Op::GatherRows, {table}, std::move(out)};
  n.rows = std::move(rows);
  return push(std::move(n));
}

double Gradients::norm() const {
  double total = 0.0;
  for (const auto& [id, g] : by_param) total += as_array(g).square().sum();
  return std::sqrt(total);
}

struct BackwardAccess {
  static const auto& nodes(const Tape& t) { return t.nodes_; }
};

Gradients backward(const Tape& tape, NodeId loss) {
  const auto& nodes = BackwardAccess::nodes(tape);
  if (loss >= nodes.size()) throw NumericError("unknown loss node " + std::to_string(loss));
  if (nodes[loss].value.size() != 1) {
    throw NumericError("backward from non-scalar node " + std::to_string(loss) + " of shape " +
                       shape_string(nodes[loss].value.shape()));
  }

  std::vector<Tensor> adj(loss + 1);
  std::vector<bool> live(loss + 1, false);
  auto accumulate = [&](NodeId id) -> Tensor& {
    if (!live[id]) {
      adj[id] = zeros_like(nodes[id].value);
      live[id] = true;
    }
    return adj[id];
  };
  accumulate(loss)[0] = 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!live[id] || !nodes[id].requires_grad) continue;
    const auto& node = nodes[id];
    const Tensor& g = adj[id];
    if (!g.all_finite()) throw NumericError("non-finite adjoint at node " + std::to_string(id) + " (" + op_name(node.op) + ")");
    const auto G = as_array(g);

    auto grad_of = [&](std::size_t k) -> Tensor* {
      const NodeId in = node.inputs[k];
      return nodes[in].requires_grad ? &accumulate(in) : nullptr;
    };

    switch (node.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::Add:
        if (auto* a = grad_of(0)) as_array(*a) += G;
        if (auto* b = grad_of(1)) as_array(*b) += G;
        break;
      case Op::Sub:
        if (auto* a = grad_of(0)) as_array(*a) += G;
        if (auto* b = grad_of(1)) as_array(*b) -= G;
        break;
      case Op::ElemMul: {
        const auto X = as_array(nodes[node.inputs[0]].value);
        const auto Y = as_array(nodes[node.inputs[1]].value);
        if (auto* a = grad_of(0)) as_array(*a) += G * Y;
        if (auto* b = grad_of(1)) as_array(*b) += G * X;
        break;
      }
      case Op::Scale:
        if (auto* a = grad_of(0)) as_array(*a) += G * node.factor;
        break;
      case Op::Neg:
        if (auto* a = grad_of(0)) as_array(*a) -= G;
        break;
      case Op::MatVec:
      case Op::Affine: {
        const auto W = as_matrix(nodes[node.inputs[0]].value);
        const auto X = as_matrix(nodes[node.inputs[1]].value);
        const auto GM = as_matrix(g);
        if (auto* w = grad_of(0)) as_matrix(*w).noalias() += GM.transpose() * X;
        if (auto* x = grad_of(1)) as_matrix(*x).noalias() += GM * W;
        if (node.op == Op::Affine) {
          if (auto* b = grad_of(2)) as_matrix(*b).row(0) += GM.colwise().sum();
        }
        break;
      }
      case Op::Relu: {
        const auto X = as_array(nodes[node.inputs[0]].value);
        if (auto* a = grad_of(0)) as_array(*a) += (X > 0.0).select(G, 0.0);
        break;
      }
      case Op::Tanh: {
        const auto Y = as_array(node.value);
        if (auto* a = grad_of(0)) as_array(*a) += G * (1.0 - Y.square());
        break;
      }
      case Op::Exp:
        if (auto* a = grad_of(0)) as_array(*a) += G * as_array(node.value);
        break;
      case Op::Softplus: {
        const Tensor& x = nodes[node.inputs[0]].value;
        if (auto* a = grad_of(0)) {
          for (std::size_t i = 0; i < x.size(); ++i) (*a)[i] += g[i] * sigmoid(x[i]);
        }
        break;
      }
      case Op::Sum:
        if (auto* a = grad_of(0)) as_array(*a) += g[0];
        break;
      case Op::RowSum:
        if (auto* a = grad_of(0)) {
          auto A = as_matrix(*a);
          const Eigen::Map<const Eigen::VectorXd> gv(g.data().data(), static_cast<Eigen::Index>(g.size()));
          A.colwise() += gv;
        }
        break;
      case Op::L1Norm: {
        const Tensor& x = nodes[node.inputs[0]].value;
        if (auto* a = grad_of(0)) {
          for (std::size_t i = 0; i < x.size(); ++i) (*a)[i] += g[0] * sign(x[i]);
        }
        break;
      }
      case Op::SqNorm:
        if (auto* a = grad_of(0)) as_array(*a) += 2.0 * g[0] * as_array(nodes[node.inputs[0]].value);
        break;
      case Op::Concat: {
        const auto GM = as_matrix(g);
        Eigen::Index offset = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const auto width = static_cast<Eigen::Index>(nodes[node.inputs[k]].value.cols());
          if (auto* a = grad_of(k)) as_matrix(*a) += GM.middleCols(offset, width);
          offset += width;
        }
        break;
      }
      case Op::Split:
        if (auto* a = grad_of(0)) {
          as_matrix(*a).middleCols(static_cast<Eigen::Index>(node.begin),
                                   static_cast<Eigen::Index>(node.end - node.begin)) += as_matrix(g);
        }
        break;
      case Op::MeanOf: {
        const double w = 1.0 / static_cast<double>(node.inputs.size());
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          if (auto* a = grad_of(k)) as_array(*a) += w * G;
        }
        break;
      }
      case Op::GatherRows:
        if (auto* a = grad_of(0)) {
          const std::size_t m = a->cols();
          for (std::size_t r = 0; r < node.rows.size(); ++r) {
            for (std::size_t c = 0; c < m; ++c) a->at(node.rows[r], c) += g.at(r, c);
          }
        }
        break;
    }
  }

  Gradients out;
  for (NodeId p : tape.params()) {
    if (p <= loss && live[p]) {
      if (!adj[p].all_finite()) throw NumericError("non-finite adjoint at param node " + std::to_string(p));
      out.by_param.emplace(p, std::move(adj[p]));
    } else {
      out.by_param.emplace(p, zeros_like(tape.value(p)));
    }
  }
  return out;
}

double evaluate(const TapeFn& fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(tape.param(p));
  const NodeId loss = fn(tape, ids);
  if (tape.value(loss).size() != 1) throw NumericError("grad_check function produced a non-scalar loss");
  return tape.scalar(loss);
}

double grad_check(const TapeFn& fn, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0)) throw NumericError("grad_check needs eps > 0");
  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& p : params) ids.push_back(tape.param(p));
  const NodeId loss = fn(tape, ids);
  if (tape.value(loss).size() != 1) throw NumericError("grad_check function produced a non-scalar loss");
  const Gradients grads = backward(tape, loss);

  std::vector<Tensor> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const Tensor& analytic = grads.at(ids[k]);
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + eps;
      const double up = evaluate(fn, probe);
      probe[k][i] = saved - eps;
      const double down = evaluate(fn, probe);
      probe[k][i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace vfg::ad
