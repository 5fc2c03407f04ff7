#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace vfg {

enum class NodeKind { Leaf, Internal };

struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::Internal;
  bool aggregation = false;
  std::size_t dim = 0;
};

struct EdgeFunc {
  enum class Kind { Identity, Flow };
  Kind kind = Kind::Identity;
  int blocks = 0;  // flow only

  static EdgeFunc identity() { return {}; }
  static EdgeFunc flow(int blocks) { return {Kind::Flow, blocks}; }
  bool is_flow() const { return kind == Kind::Flow; }
};

struct EdgeSpec {
  std::string child;
  std::string parent;
  EdgeFunc func;
};

/// Half-open coordinate range of x owned by one leaf.
struct Section {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Validated VFG structure. Nodes and edges keep their declaration order;
/// all lookups below are by index into those lists.
class VfgGraph {
 public:
  /// Validates and derives children/parents, roots, topological order,
  /// layers and leaf sections. Throws DataError listing every violation.
  static VfgGraph build(std::vector<NodeSpec> nodes, std::vector<EdgeSpec> edges, std::vector<std::string> leaf_order);

  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<EdgeSpec>& edges() const { return edges_; }
  const NodeSpec& node(std::size_t i) const { return nodes_.at(i); }
  const EdgeSpec& edge(std::size_t e) const { return edges_.at(e); }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  std::size_t index_of(std::string_view id) const;
  std::size_t edge_child(std::size_t e) const { return edge_ends_.at(e).first; }
  std::size_t edge_parent(std::size_t e) const { return edge_ends_.at(e).second; }

  /// Edges whose parent is node i, in declaration order.
  const std::vector<std::size_t>& child_edges(std::size_t i) const { return child_edges_.at(i); }
  /// Edges whose child is node i, in declaration order.
  const std::vector<std::size_t>& parent_edges(std::size_t i) const { return parent_edges_.at(i); }

  bool is_leaf(std::size_t i) const { return nodes_.at(i).kind == NodeKind::Leaf; }
  bool is_root(std::size_t i) const { return parent_edges_.at(i).empty(); }

  /// Leaves in declared order (section order).
  const std::vector<std::size_t>& leaves() const { return leaves_; }
  const std::vector<std::size_t>& roots() const { return roots_; }
  /// Children before parents; ties broken by ascending node id.
  const std::vector<std::size_t>& topo_order() const { return topo_; }
  /// 0 for leaves, otherwise 1 + max layer of the children.
  std::size_t layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const;

  /// Section of x for the leaf at node index i.
  const Section& section(std::size_t leaf) const { return sections_.at(leaf); }
  /// Position of a leaf in the declared order (0-based).
  std::size_t leaf_position(std::size_t leaf) const;
  std::size_t data_dim() const { return data_dim_; }

  /// leaf id -> [begin, end)
  std::map<std::string, Section> section_slices() const;

  /// True when every node has at most one parent.
  bool is_tree() const;

 private:
  std::vector<NodeSpec> nodes_;
  std::vector<EdgeSpec> edges_;
  std::vector<std::pair<std::size_t, std::size_t>> edge_ends_;
  std::vector<std::vector<std::size_t>> child_edges_;
  std::vector<std::vector<std::size_t>> parent_edges_;
  std::vector<std::size_t> leaves_;
  std::vector<std::size_t> roots_;
  std::vector<std::size_t> topo_;
  std::vector<std::size_t> layers_;
  std::map<std::size_t, Section> sections_;
  std::size_t data_dim_ = 0;
};

/// Graph-spec document: {"version": 1, "nodes": [...], "edges": [...],
/// "leaf_order": [...]}. Throws DataError with the offending field.
VfgGraph parse_graph_spec(std::string_view text);
VfgGraph graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const VfgGraph& graph);
std::string serialize_graph_spec(const VfgGraph& graph);

}  // namespace vfg
