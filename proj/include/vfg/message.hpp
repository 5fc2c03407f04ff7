#pragma once

#include <optional>
#include <set>
#include <vector>

#include "vfg/autodiff.hpp"
#include "vfg/model.hpp"

namespace vfg {

/// Node indices of the leaves whose sections are observed.
using ObservedSet = std::set<std::size_t>;

ObservedSet all_leaves(const VfgGraph& graph);
/// Leaves by 1-based position in the declared leaf order.
ObservedSet observed_from_sections(const VfgGraph& graph, const std::vector<std::size_t>& positions);

/// Per-sample node states living on one tape. Entries are indexed by node
/// (h, hhat) or by edge (fwd_msg, bwd_msg); nullopt means "no state".
struct NodeStates {
  std::vector<std::optional<ad::NodeId>> h;        // forward state
  std::vector<std::optional<ad::NodeId>> hhat;     // backward state
  std::vector<std::optional<ad::NodeId>> fwd_msg;  // f_(child->parent)(h_child)
  std::vector<std::optional<ad::NodeId>> bwd_msg;  // f^-1(hhat_parent), delivered to the child
  std::vector<bool> informed;                      // nodes reached by observed data

  explicit NodeStates(const VfgGraph& graph)
      : h(graph.node_count()),
        hhat(graph.node_count()),
        fwd_msg(graph.edge_count()),
        bwd_msg(graph.edge_count()),
        informed(graph.node_count(), false) {}
};

/// Constant nodes holding every leaf's section of x (rows = samples),
/// indexed by node.
std::vector<std::optional<ad::NodeId>> section_inputs(ad::Tape& tape, const VfgGraph& graph, const Tensor& x);

/// Bottom-up sweep in topological order. An internal node's state is the
/// mean of the messages from its children that carry a state; nodes without
/// informed children stay empty. Throws DataError when `observed` is empty,
/// not a subset of the leaves, or reaches no root.
NodeStates forward_pass(ad::Tape& tape, const Model& model, const ModelNodes& nodes,
                        const std::vector<std::optional<ad::NodeId>>& sections, const ObservedSet& observed);

/// Top-down sweep: roots with a forward state start from it (hhat = h), then
/// every other node averages the inverse-mapped states of the parents that
/// have one. Roots lacking a forward state send nothing; at least one root
/// must have a state.
void backward_pass(ad::Tape& tape, const Model& model, const ModelNodes& nodes, NodeStates& states);

/// Backward sweep started from externally supplied root states (sampling).
NodeStates backward_from_roots(ad::Tape& tape, const Model& model, const ModelNodes& nodes,
                               const std::vector<std::pair<std::size_t, ad::NodeId>>& root_states);

/// Reconstructed section per leaf, in declared leaf order. In binary mode
/// these are logits; squash with the logistic to get probabilities.
std::vector<ad::NodeId> reconstruct(const VfgGraph& graph, const NodeStates& states);

/// Concatenates per-leaf values (declared order) into [rows x n].
Tensor assemble_sections(const VfgGraph& graph, const ad::Tape& tape, const std::vector<ad::NodeId>& parts);

}  // namespace vfg
