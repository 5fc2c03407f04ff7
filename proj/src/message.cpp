#include "vfg/message.hpp"

#include "vfg/error.hpp"

namespace vfg {

ObservedSet all_leaves(const VfgGraph& graph) { return ObservedSet(graph.leaves().begin(), graph.leaves().end()); }

ObservedSet observed_from_sections(const VfgGraph& graph, const std::vector<std::size_t>& positions) {
  ObservedSet out;
  for (std::size_t p : positions) {
    if (p < 1 || p > graph.leaves().size()) {
      throw UsageError("section " + std::to_string(p) + " out of range 1.." + std::to_string(graph.leaves().size()));
    }
    out.insert(graph.leaves()[p - 1]);
  }
  return out;
}

std::vector<std::optional<ad::NodeId>> section_inputs(ad::Tape& tape, const VfgGraph& graph, const Tensor& x) {
  if (x.cols() != graph.data_dim()) {
    throw DataError("data has " + std::to_string(x.cols()) + " columns, graph expects " +
                    std::to_string(graph.data_dim()));
  }
  const Tensor batch = x.rank() == 2 ? x : Tensor(Shape{1, x.cols()}, x.storage());
  std::vector<std::optional<ad::NodeId>> out(graph.node_count());
  for (std::size_t leaf : graph.leaves()) {
    const Section& s = graph.section(leaf);
    out[leaf] = tape.constant(batch.columns(s.begin, s.end));
  }
  return out;
}

namespace {

ad::NodeId apply_edge(ad::Tape& tape, const Model& model, const ModelNodes& nodes, std::size_t e, ad::NodeId x,
                      bool inverse) {
  const FlowStack* stack = model.flow(e);
  if (stack == nullptr) return x;
  const StackNodes& bound = *nodes.edges.at(e);
  return inverse ? flow_inverse(tape, *stack, bound, x).y : flow_forward(tape, *stack, bound, x).y;
}

void sweep_down(ad::Tape& tape, const Model& model, const ModelNodes& nodes, NodeStates& states) {
  const VfgGraph& g = model.graph;
  const auto& order = g.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t i = *it;
    if (g.is_root(i)) continue;
    std::vector<ad::NodeId> msgs;
    for (std::size_t e : g.parent_edges(i)) {
      const auto& parent_state = states.hhat[g.edge_parent(e)];
      if (!parent_state) continue;
      states.bwd_msg[e] = apply_edge(tape, model, nodes, e, *parent_state, true);
      msgs.push_back(*states.bwd_msg[e]);
    }
    if (!msgs.empty()) states.hhat[i] = msgs.size() == 1 ? msgs[0] : tape.mean_of(msgs);
  }
}

}  // namespace

NodeStates forward_pass(ad::Tape& tape, const Model& model, const ModelNodes& nodes,
                        const std::vector<std::optional<ad::NodeId>>& sections, const ObservedSet& observed) {
  const VfgGraph& g = model.graph;
  if (observed.empty()) throw DataError("forward pass needs at least one observed leaf");
  NodeStates states(g);
  for (std::size_t leaf : observed) {
    if (leaf >= g.node_count() || !g.is_leaf(leaf)) {
      throw DataError("observed set contains non-leaf node index " + std::to_string(leaf));
    }
    if (leaf >= sections.size() || !sections[leaf]) {
      throw DataError("observed leaf '" + g.node(leaf).id + "' has no section value");
    }
    const Tensor& v = tape.value(*sections[leaf]);
    if (v.cols() != g.node(leaf).dim) {
      throw DataError("section for leaf '" + g.node(leaf).id + "' has dim " + std::to_string(v.cols()) +
                      ", expected " + std::to_string(g.node(leaf).dim));
    }
    states.h[leaf] = *sections[leaf];
    states.informed[leaf] = true;
  }

  for (std::size_t i : g.topo_order()) {
    if (g.is_leaf(i)) continue;
    std::vector<ad::NodeId> msgs;
    for (std::size_t e : g.child_edges(i)) {
      const auto& child_state = states.h[g.edge_child(e)];
      if (!child_state) continue;
      states.fwd_msg[e] = apply_edge(tape, model, nodes, e, *child_state, false);
      msgs.push_back(*states.fwd_msg[e]);
    }
    if (msgs.empty()) continue;
    states.h[i] = msgs.size() == 1 ? msgs[0] : tape.mean_of(msgs);
    states.informed[i] = true;
  }

  bool any_root = false;
  for (std::size_t r : g.roots()) any_root = any_root || states.h[r].has_value();
  if (!any_root) throw DataError("no root is reachable from the observed leaves");
  return states;
}

void backward_pass(ad::Tape& tape, const Model& model, const ModelNodes& nodes, NodeStates& states) {
  const VfgGraph& g = model.graph;
  bool any_root = false;
  for (std::size_t r : g.roots()) {
    states.hhat[r] = states.h[r];
    any_root = any_root || states.h[r].has_value();
  }
  if (!any_root) throw DataError("backward pass: no root has a forward state");
  sweep_down(tape, model, nodes, states);
}

NodeStates backward_from_roots(ad::Tape& tape, const Model& model, const ModelNodes& nodes,
                               const std::vector<std::pair<std::size_t, ad::NodeId>>& root_states) {
  NodeStates states(model.graph);
  for (const auto& [root, id] : root_states) {
    if (!model.graph.is_root(root)) throw DataError("node '" + model.graph.node(root).id + "' is not a root");
    states.h[root] = id;
  }
  backward_pass(tape, model, nodes, states);
  return states;
}

std::vector<ad::NodeId> reconstruct(const VfgGraph& graph, const NodeStates& states) {
  std::vector<ad::NodeId> out;
  for (std::size_t leaf : graph.leaves()) {
    if (!states.hhat[leaf]) throw DataError("leaf '" + graph.node(leaf).id + "' received no backward message");
    out.push_back(*states.hhat[leaf]);
  }
  return out;
}

Tensor assemble_sections(const VfgGraph& graph, const ad::Tape& tape, const std::vector<ad::NodeId>& parts) {
  if (parts.size() != graph.leaves().size()) throw DataError("section count does not match leaf count");
  const std::size_t rows = tape.value(parts.front()).rows();
  Tensor out(Shape{rows, graph.data_dim()});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Section& s = graph.section(graph.leaves()[k]);
    const Tensor& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < s.size(); ++c) out.at(r, s.begin + c) = v.at(r, c);
    }
  }
  return out;
}

}  // namespace vfg
