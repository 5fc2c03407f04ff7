#include "vfg/graph.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vfg/error.hpp"

namespace vfg {

using json = nlohmann::json;

namespace {

void fail(const std::vector<std::string>& problems) {
  std::ostringstream msg;
  msg << "invalid graph:";
  for (const auto& p : problems) msg << "\n  - " << p;
  throw DataError(msg.str());
}

}  // namespace

VfgGraph VfgGraph::build(std::vector<NodeSpec> nodes, std::vector<EdgeSpec> edges, std::vector<std::string> leaf_order) {
  VfgGraph g;
  g.nodes_ = std::move(nodes);
  g.edges_ = std::move(edges);
  std::vector<std::string> problems;

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    const auto& n = g.nodes_[i];
    if (n.id.empty()) problems.push_back("node " + std::to_string(i) + ": empty id");
    if (!index.emplace(n.id, i).second) problems.push_back("duplicate id '" + n.id + "'");
    if (n.dim == 0) problems.push_back("node '" + n.id + "': dim must be positive");
  }
  if (g.nodes_.empty()) problems.push_back("graph has no nodes");
  if (!problems.empty()) fail(problems);

  const std::size_t n = g.nodes_.size();
  g.child_edges_.assign(n, {});
  g.parent_edges_.assign(n, {});
  std::set<std::pair<std::size_t, std::size_t>> seen_edges;
  for (std::size_t e = 0; e < g.edges_.size(); ++e) {
    const auto& edge = g.edges_[e];
    const auto c = index.find(edge.child);
    const auto p = index.find(edge.parent);
    const std::string label = "edge " + edge.child + "->" + edge.parent;
    if (c == index.end() || p == index.end()) {
      problems.push_back(label + ": unknown node");
      g.edge_ends_.emplace_back(0, 0);
      continue;
    }
    g.edge_ends_.emplace_back(c->second, p->second);
    if (c->second == p->second) {
      problems.push_back(label + ": cycle (self loop)");
      continue;
    }
    if (!seen_edges.emplace(c->second, p->second).second) problems.push_back(label + ": duplicate edge");
    g.child_edges_[p->second].push_back(e);
    g.parent_edges_[c->second].push_back(e);
    const auto& child = g.nodes_[c->second];
    const auto& parent = g.nodes_[p->second];
    if (child.dim != parent.dim) {
      problems.push_back(label + ": dim mismatch (" + std::to_string(child.dim) + " vs " + std::to_string(parent.dim) + ")");
    }
    if (edge.func.is_flow()) {
      if (edge.func.blocks < 1) problems.push_back(label + ": flow needs blocks >= 1");
      if (child.dim < 2) problems.push_back(label + ": coupling flow needs dim >= 2");
    }
    if (parent.kind == NodeKind::Leaf) problems.push_back(label + ": leaf '" + parent.id + "' cannot have children");
  }
  if (!problems.empty()) fail(problems);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = g.nodes_[i];
    if (node.kind == NodeKind::Leaf) {
      if (g.parent_edges_[i].empty()) problems.push_back("orphan node '" + node.id + "': leaf without parent");
    } else {
      if (g.child_edges_[i].empty()) {
        problems.push_back("orphan node '" + node.id + "': internal node without children");
      } else if (!node.aggregation && g.child_edges_[i].size() != 1) {
        problems.push_back("node '" + node.id + "': non-aggregation node needs exactly one child, has " +
                           std::to_string(g.child_edges_[i].size()));
      }
    }
  }

  // Kahn's algorithm, smallest id first among ready nodes.
  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = g.child_edges_[i].size();
  auto by_id = [&](std::size_t a, std::size_t b) { return g.nodes_[a].id > g.nodes_[b].id; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_id)> ready(by_id);
  for (std::size_t i = 0; i < n; ++i) {
    if (pending[i] == 0) ready.push(i);
  }
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    g.topo_.push_back(i);
    for (std::size_t e : g.parent_edges_[i]) {
      if (--pending[g.edge_ends_[e].second] == 0) ready.push(g.edge_ends_[e].second);
    }
  }
  if (g.topo_.size() != n) {
    std::vector<std::string> stuck;
    for (std::size_t i = 0; i < n; ++i) {
      if (pending[i] > 0) stuck.push_back(g.nodes_[i].id);
    }
    std::ostringstream msg;
    msg << "cycle through nodes";
    for (const auto& s : stuck) msg << ' ' << s;
    problems.push_back(msg.str());
    fail(problems);
  }
  if (!problems.empty()) fail(problems);

  // Weak connectivity: one data vector must map onto one graph.
  std::vector<std::size_t> component(n);
  std::iota(component.begin(), component.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return component[x] == x ? x : component[x] = find(component[x]);
  };
  for (const auto& [c, p] : g.edge_ends_) component[find(c)] = find(p);
  for (std::size_t i = 1; i < n; ++i) {
    if (find(i) != find(0)) {
      problems.push_back("disconnected: node '" + g.nodes_[i].id + "' is not connected to '" + g.nodes_[0].id + "'");
      break;
    }
  }

  g.layers_.assign(n, 0);
  for (std::size_t i : g.topo_) {
    for (std::size_t e : g.child_edges_[i]) g.layers_[i] = std::max(g.layers_[i], g.layers_[g.edge_ends_[e].first] + 1);
    if (g.parent_edges_[i].empty()) g.roots_.push_back(i);
  }
  std::sort(g.roots_.begin(), g.roots_.end());

  std::set<std::size_t> declared;
  std::size_t offset = 0;
  for (const auto& id : leaf_order) {
    const auto it = index.find(id);
    if (it == index.end()) {
      problems.push_back("leaf_order: unknown node '" + id + "'");
      continue;
    }
    if (g.nodes_[it->second].kind != NodeKind::Leaf) {
      problems.push_back("leaf_order: '" + id + "' is not a leaf");
      continue;
    }
    if (!declared.insert(it->second).second) {
      problems.push_back("leaf_order: '" + id + "' listed twice");
      continue;
    }
    g.leaves_.push_back(it->second);
    const std::size_t dim = g.nodes_[it->second].dim;
    g.sections_[it->second] = Section{offset, offset + dim};
    offset += dim;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (g.nodes_[i].kind == NodeKind::Leaf && !declared.contains(i)) {
      problems.push_back("leaf_order: leaf '" + g.nodes_[i].id + "' missing");
    }
  }
  if (g.leaves_.empty() && problems.empty()) problems.push_back("graph has no leaves");
  g.data_dim_ = offset;
  if (!problems.empty()) fail(problems);
  return g;
}

std::size_t VfgGraph::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id == id) return i;
  }
  throw DataError("unknown node '" + std::string(id) + "'");
}

std::size_t VfgGraph::layer_count() const { return 1 + *std::max_element(layers_.begin(), layers_.end()); }

std::size_t VfgGraph::leaf_position(std::size_t leaf) const {
  const auto it = std::find(leaves_.begin(), leaves_.end(), leaf);
  if (it == leaves_.end()) throw DataError("node '" + nodes_.at(leaf).id + "' is not a leaf");
  return static_cast<std::size_t>(it - leaves_.begin());
}

std::map<std::string, Section> VfgGraph::section_slices() const {
  std::map<std::string, Section> out;
  for (const auto& [leaf, sec] : sections_) out.emplace(nodes_[leaf].id, sec);
  return out;
}

bool VfgGraph::is_tree() const {
  return std::all_of(parent_edges_.begin(), parent_edges_.end(), [](const auto& p) { return p.size() <= 1; });
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw DataError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw DataError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

VfgGraph graph_from_json(const json& doc) {
  reject_unknown_keys(doc, {"version", "nodes", "edges", "leaf_order"}, "graph spec");
  if (doc.contains("version") && get_field<int>(doc, "version", "graph spec") != 1) {
    throw DataError("graph spec: unsupported version " + doc.at("version").dump());
  }
  for (const char* key : {"nodes", "edges", "leaf_order"}) {
    if (!doc.contains(key) || !doc.at(key).is_array()) throw DataError(std::string("graph spec: '") + key + "' must be a list");
  }

  std::vector<NodeSpec> nodes;
  for (std::size_t i = 0; i < doc["nodes"].size(); ++i) {
    const auto& n = doc["nodes"][i];
    const std::string where = "nodes[" + std::to_string(i) + "]";
    reject_unknown_keys(n, {"id", "kind", "aggregation", "dim"}, where);
    NodeSpec spec;
    spec.id = get_field<std::string>(n, "id", where);
    const auto kind = get_field<std::string>(n, "kind", where);
    if (kind == "leaf") {
      spec.kind = NodeKind::Leaf;
    } else if (kind == "internal") {
      spec.kind = NodeKind::Internal;
    } else {
      throw DataError(where + ": kind must be \"leaf\" or \"internal\", got \"" + kind + "\"");
    }
    spec.aggregation = n.contains("aggregation") ? get_field<bool>(n, "aggregation", where) : false;
    const auto dim = get_field<long long>(n, "dim", where);
    if (dim <= 0) throw DataError(where + ": dim must be positive");
    spec.dim = static_cast<std::size_t>(dim);
    nodes.push_back(std::move(spec));
  }

  std::vector<EdgeSpec> edges;
  for (std::size_t i = 0; i < doc["edges"].size(); ++i) {
    const auto& e = doc["edges"][i];
    const std::string where = "edges[" + std::to_string(i) + "]";
    reject_unknown_keys(e, {"child", "parent", "func"}, where);
    EdgeSpec spec;
    spec.child = get_field<std::string>(e, "child", where);
    spec.parent = get_field<std::string>(e, "parent", where);
    if (!e.contains("func")) throw DataError(where + ": missing field 'func'");
    const auto& f = e["func"];
    if (f.is_string() && f.get<std::string>() == "identity") {
      spec.func = EdgeFunc::identity();
    } else if (f.is_object()) {
      reject_unknown_keys(f, {"flow"}, where + ".func");
      if (!f.contains("flow")) throw DataError(where + ".func: expected \"identity\" or {\"flow\": {...}}");
      const auto& flow = f["flow"];
      reject_unknown_keys(flow, {"blocks"}, where + ".func.flow");
      spec.func = EdgeFunc::flow(get_field<int>(flow, "blocks", where + ".func.flow"));
    } else {
      throw DataError(where + ".func: expected \"identity\" or {\"flow\": {\"blocks\": B}}");
    }
    edges.push_back(std::move(spec));
  }

  std::vector<std::string> leaf_order;
  for (const auto& id : doc["leaf_order"]) {
    if (!id.is_string()) throw DataError("leaf_order: entries must be strings");
    leaf_order.push_back(id.get<std::string>());
  }
  return VfgGraph::build(std::move(nodes), std::move(edges), std::move(leaf_order));
}

VfgGraph parse_graph_spec(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("graph spec is not valid JSON: ") + e.what());
  }
  return graph_from_json(doc);
}

json graph_to_json(const VfgGraph& graph) {
  json nodes = json::array();
  for (const auto& n : graph.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"kind", n.kind == NodeKind::Leaf ? "leaf" : "internal"},
                     {"aggregation", n.aggregation},
                     {"dim", n.dim}});
  }
  json edges = json::array();
  for (const auto& e : graph.edges()) {
    json func = e.func.is_flow() ? json{{"flow", {{"blocks", e.func.blocks}}}} : json("identity");
    edges.push_back({{"child", e.child}, {"parent", e.parent}, {"func", func}});
  }
  json order = json::array();
  for (std::size_t leaf : graph.leaves()) order.push_back(graph.node(leaf).id);
  return json{{"version", 1}, {"nodes", nodes}, {"edges", edges}, {"leaf_order", order}};
}

std::string serialize_graph_spec(const VfgGraph& graph) { return graph_to_json(graph).dump(2) + "\n"; }

}  // namespace vfg
