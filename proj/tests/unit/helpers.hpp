#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vfg/graph.hpp"
#include "vfg/model.hpp"
#include "vfg/rng.hpp"
#include "vfg/tensor.hpp"

namespace testutil {

inline vfg::Tensor random_tensor(vfg::Shape shape, vfg::Rng& rng, double scale = 1.0) {
  vfg::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline double max_abs_diff(const vfg::Tensor& a, const vfg::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline vfg::NodeSpec leaf(const std::string& id, std::size_t dim) { return {id, vfg::NodeKind::Leaf, false, dim}; }
inline vfg::NodeSpec inner(const std::string& id, std::size_t dim, bool agg = false) {
  return {id, vfg::NodeKind::Internal, agg, dim};
}
inline vfg::EdgeSpec flow_edge(const std::string& c, const std::string& p, int blocks = 2) {
  return {c, p, vfg::EdgeFunc::flow(blocks)};
}
inline vfg::EdgeSpec id_edge(const std::string& c, const std::string& p) { return {c, p, vfg::EdgeFunc::identity()}; }

// k leaves of width `dim` under one aggregation root.
inline vfg::VfgGraph star(std::size_t k, std::size_t dim, int blocks = 2) {
  std::vector<vfg::NodeSpec> nodes;
  std::vector<vfg::EdgeSpec> edges;
  std::vector<std::string> order;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::string id = "x" + std::to_string(i);
    nodes.push_back(leaf(id, dim));
    edges.push_back(flow_edge(id, "root", blocks));
    order.push_back(id);
  }
  nodes.push_back(inner("root", dim, true));
  return vfg::VfgGraph::build(nodes, edges, order);
}

// Leaves 1,2,3 each lifted by a flow into 4,5,6, which feed aggregation
// node 7 through identity edges.
inline vfg::VfgGraph three_branch(std::size_t dim = 2, int blocks = 2) {
  return vfg::VfgGraph::build({leaf("1", dim), leaf("2", dim), leaf("3", dim), inner("4", dim), inner("5", dim),
                               inner("6", dim), inner("7", dim, true)},
                              {flow_edge("1", "4", blocks), flow_edge("2", "5", blocks), flow_edge("3", "6", blocks),
                               id_edge("4", "7"), id_edge("5", "7"), id_edge("6", "7")},
                              {"1", "2", "3"});
}

// Overlapping DAG: 4 = {1,2}, 5 = {2,3}, 6 = {4,5}, 7 = {6}.
inline vfg::VfgGraph layered_dag(std::size_t dim = 2, int blocks = 1) {
  return vfg::VfgGraph::build({leaf("1", dim), leaf("2", dim), leaf("3", dim), inner("4", dim, true),
                               inner("5", dim, true), inner("6", dim, true), inner("7", dim)},
                              {flow_edge("1", "4", blocks), flow_edge("2", "4", blocks), flow_edge("2", "5", blocks),
                               flow_edge("3", "5", blocks), flow_edge("4", "6", blocks), flow_edge("5", "6", blocks),
                               flow_edge("6", "7", blocks)},
                              {"1", "2", "3"});
}

// Single leaf pushed through `depth` flow edges.
inline vfg::VfgGraph chain(std::size_t dim, std::size_t depth, int blocks = 2) {
  std::vector<vfg::NodeSpec> nodes{leaf("x", dim)};
  std::vector<vfg::EdgeSpec> edges;
  std::string prev = "x";
  for (std::size_t d = 1; d <= depth; ++d) {
    const std::string id = "h" + std::to_string(d);
    nodes.push_back(inner(id, dim));
    edges.push_back(flow_edge(prev, id, blocks));
    prev = id;
  }
  return vfg::VfgGraph::build(nodes, edges, {"x"});
}

inline vfg::Model random_model(vfg::VfgGraph g, std::uint64_t seed, double clamp = vfg::kDefaultClamp) {
  vfg::ModelConfig cfg;
  cfg.init = vfg::InitMode::Random;
  cfg.clamp = clamp;
  return vfg::init_model(std::move(g), cfg, seed);
}

// Shrinks every parameter so random models stay well conditioned.
inline void scale_parameters(vfg::Model& m, double factor) {
  for (vfg::Tensor* p : m.parameters())
    for (auto& v : p->data()) v *= factor;
}

}  // namespace testutil
