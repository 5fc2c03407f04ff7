#include "vfg/objective.hpp"

#include <cmath>
#include <numbers>

#include "vfg/error.hpp"

namespace vfg {
namespace {

const double kLn2 = std::numbers::ln2;
const double kLn2Pi = std::log(2.0 * std::numbers::pi);

ad::NodeId add_constant(ad::Tape& tape, ad::NodeId x, double c) { return tape.add(x, tape.constant(Tensor::scalar(c))); }

ad::NodeId sum_nodes(ad::Tape& tape, const std::vector<ad::NodeId>& parts) {
  ad::NodeId acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) acc = tape.add(acc, parts[k]);
  return acc;
}

double batch_rows(const ad::Tape& tape, ad::NodeId x) { return static_cast<double>(tape.value(x).rows()); }

ElboTerms assemble(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const NodeStates& states,
                   ad::NodeId recon, std::span<const std::size_t> labels, double beta) {
  const VfgGraph& g = model.graph;
  ElboTerms terms{recon, recon, {}, {}, beta};
  std::vector<ad::NodeId> kls;
  for (std::size_t i : g.topo_order()) {
    if (g.is_leaf(i) || g.is_root(i) || !states.h[i]) continue;
    bool has_msg = false;
    for (std::size_t e : g.parent_edges(i)) has_msg = has_msg || states.bwd_msg[e].has_value();
    if (!has_msg) continue;
    terms.node_kls.emplace_back(i, node_kl(tape, g, states, i));
    kls.push_back(terms.node_kls.back().second);
  }
  for (std::size_t r : g.roots()) {
    if (!states.h[r]) continue;
    terms.root_kls.emplace_back(r, root_kl(tape, model, nodes, states, r, labels));
    kls.push_back(terms.root_kls.back().second);
  }
  if (!kls.empty()) terms.total = tape.sub(recon, tape.scale(sum_nodes(tape, kls), beta));
  return terms;
}

}  // namespace

double ElboBreakdown::kl_sum() const {
  double s = 0.0;
  for (const auto& [_, v] : node_kls) s += v;
  for (const auto& [_, v] : root_kls) s += v;
  return s;
}

ad::NodeId node_kl(ad::Tape& tape, const VfgGraph& graph, const NodeStates& states, std::size_t node) {
  if (graph.is_root(node)) throw DataError("node_kl on root '" + graph.node(node).id + "'");
  if (!states.h[node]) throw DataError("node_kl: node '" + graph.node(node).id + "' has no forward state");
  const ad::NodeId h = *states.h[node];
  std::vector<ad::NodeId> residuals;
  for (std::size_t e : graph.parent_edges(node)) {
    if (states.bwd_msg[e]) residuals.push_back(tape.l1_norm(tape.sub(h, *states.bwd_msg[e])));
  }
  if (residuals.empty()) throw DataError("node_kl: node '" + graph.node(node).id + "' has no backward message");
  const double m = static_cast<double>(graph.node(node).dim);
  const double weight = 1.0 / (static_cast<double>(residuals.size()) * batch_rows(tape, h));
  return add_constant(tape, tape.scale(sum_nodes(tape, residuals), weight), m * kLn2);
}

ad::NodeId root_kl(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const NodeStates& states,
                   std::size_t root, std::span<const std::size_t> labels) {
  const VfgGraph& g = model.graph;
  if (!states.h[root]) throw DataError("root_kl: root '" + g.node(root).id + "' has no forward state");
  ad::NodeId h = *states.h[root];
  const double rows = batch_rows(tape, h);
  if (model.prior.conditional()) {
    if (labels.size() != static_cast<std::size_t>(rows)) {
      throw DataError("conditional prior needs one label per sample (got " + std::to_string(labels.size()) + " for " +
                      std::to_string(static_cast<std::size_t>(rows)) + " rows)");
    }
    for (std::size_t label : labels) {
      if (label >= model.prior.num_classes) throw DataError("label " + std::to_string(label) + " out of range");
    }
    const auto it = nodes.class_locations.find(root);
    if (it == nodes.class_locations.end()) throw DataError("root '" + g.node(root).id + "' has no class locations");
    const ad::NodeId mu = tape.gather_rows(it->second, std::vector<std::size_t>(labels.begin(), labels.end()));
    h = tape.sub(h, mu);
  }
  const double m = static_cast<double>(g.node(root).dim);
  if (model.prior.family == PriorFamily::Laplace) {
    return add_constant(tape, tape.scale(tape.l1_norm(h), 1.0 / rows), m * kLn2);
  }
  return add_constant(tape, tape.scale(tape.sq_norm(h), 0.5 / rows), 0.5 * m * kLn2Pi);
}

ad::NodeId recon_term(ad::Tape& tape, std::span<const ad::NodeId> x_sections, std::span<const ad::NodeId> xhat_sections,
                      ReconMode mode) {
  if (x_sections.size() != xhat_sections.size() || x_sections.empty()) {
    throw DataError("recon_term needs matching, non-empty section lists");
  }
  std::vector<ad::NodeId> parts;
  for (std::size_t k = 0; k < x_sections.size(); ++k) {
    // Pushing onto the tape may move node storage, so read sizes up front.
    const Tensor& x = tape.value(x_sections[k]);
    if (x.shape() != tape.value(xhat_sections[k]).shape()) {
      throw DataError("recon_term: section " + std::to_string(k + 1) + " shape mismatch");
    }
    const double rows = static_cast<double>(x.rows());
    const double cols = static_cast<double>(x.cols());
    if (mode == ReconMode::Gaussian) {
      const ad::NodeId sq = tape.sq_norm(tape.sub(x_sections[k], xhat_sections[k]));
      parts.push_back(add_constant(tape, tape.scale(sq, -0.5 / rows), -0.5 * cols * kLn2Pi));
    } else {
      for (double v : x.data()) {
        if (v < 0.0 || v > 1.0) throw DataError("binary reconstruction needs data in [0, 1], got " + std::to_string(v));
      }
      // log Bernoulli(x | sigmoid(a)) = x a - softplus(a)
      const ad::NodeId a = xhat_sections[k];
      const ad::NodeId ll = tape.sub(tape.elem_mul(x_sections[k], a), tape.softplus(a));
      parts.push_back(tape.scale(tape.sum(ll), 1.0 / rows));
    }
  }
  return sum_nodes(tape, parts);
}

ElboTerms build_elbo(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const Tensor& x,
                     std::span<const std::size_t> labels, double beta) {
  const VfgGraph& g = model.graph;
  const auto sections = section_inputs(tape, g, x);
  NodeStates states = forward_pass(tape, model, nodes, sections, all_leaves(g));
  backward_pass(tape, model, nodes, states);
  const auto xhat = reconstruct(g, states);
  std::vector<ad::NodeId> xs;
  for (std::size_t leaf : g.leaves()) xs.push_back(*sections[leaf]);
  const ad::NodeId recon = recon_term(tape, xs, xhat, model.recon_mode);
  return assemble(tape, model, nodes, states, recon, labels, beta);
}

ElboTerms build_masked_elbo(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const Tensor& x,
                            const ObservedSet& observed, std::span<const std::size_t> labels, double beta) {
  const VfgGraph& g = model.graph;
  if (observed.empty()) throw DataError("masked ELBO needs at least one observed leaf");
  if (observed.size() >= g.leaves().size()) throw DataError("masked ELBO needs at least one unobserved leaf");
  const auto sections = section_inputs(tape, g, x);
  NodeStates states = forward_pass(tape, model, nodes, sections, observed);
  backward_pass(tape, model, nodes, states);
  std::vector<ad::NodeId> xs;
  std::vector<ad::NodeId> xhat;
  for (std::size_t leaf : g.leaves()) {
    if (observed.contains(leaf)) continue;
    if (!states.hhat[leaf]) throw DataError("leaf '" + g.node(leaf).id + "' received no backward message");
    xs.push_back(*sections[leaf]);
    xhat.push_back(*states.hhat[leaf]);
  }
  const ad::NodeId recon = recon_term(tape, xs, xhat, model.recon_mode);
  return assemble(tape, model, nodes, states, recon, labels, beta);
}

ElboBreakdown read_breakdown(const ad::Tape& tape, const VfgGraph& graph, const ElboTerms& terms) {
  ElboBreakdown out;
  out.recon = tape.scalar(terms.recon);
  for (const auto& [i, id] : terms.node_kls) out.node_kls[graph.node(i).id] = tape.scalar(id);
  for (const auto& [i, id] : terms.root_kls) out.root_kls[graph.node(i).id] = tape.scalar(id);
  out.beta = terms.beta;
  out.total = tape.scalar(terms.total);
  return out;
}

ElboBreakdown elbo(const Model& model, const Tensor& x, std::span<const std::size_t> labels, double beta) {
  ad::Tape tape;
  const ModelNodes nodes = bind_model(tape, model, false);
  return read_breakdown(tape, model.graph, build_elbo(tape, model, nodes, x, labels, beta));
}

ElboBreakdown masked_elbo(const Model& model, const Tensor& x, const ObservedSet& observed,
                          std::span<const std::size_t> labels, double beta) {
  ad::Tape tape;
  const ModelNodes nodes = bind_model(tape, model, false);
  return read_breakdown(tape, model.graph, build_masked_elbo(tape, model, nodes, x, observed, labels, beta));
}

std::map<std::string, double> consistency_gaps(const Model& model, const Tensor& x) {
  const VfgGraph& g = model.graph;
  ad::Tape tape;
  const ModelNodes nodes = bind_model(tape, model, false);
  const auto sections = section_inputs(tape, g, x);
  NodeStates states = forward_pass(tape, model, nodes, sections, all_leaves(g));
  backward_pass(tape, model, nodes, states);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.is_root(i)) continue;
    const double floor = static_cast<double>(g.node(i).dim) * kLn2;
    out[g.node(i).id] = tape.scalar(node_kl(tape, g, states, i)) - floor;
  }
  return out;
}

}  // namespace vfg
