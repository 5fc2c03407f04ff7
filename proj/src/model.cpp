#include "vfg/model.hpp"

#include "vfg/error.hpp"
#include "vfg/rng.hpp"

namespace vfg {

const char* to_string(PriorFamily f) { return f == PriorFamily::Laplace ? "laplace" : "standard-gaussian"; }
const char* to_string(ReconMode m) { return m == ReconMode::Binary ? "binary" : "gaussian"; }

PriorFamily parse_prior_family(const std::string& s) {
  if (s == "standard-gaussian" || s == "gaussian") return PriorFamily::StandardGaussian;
  if (s == "laplace") return PriorFamily::Laplace;
  throw UsageError("unknown prior family '" + s + "' (expected standard-gaussian or laplace)");
}

ReconMode parse_recon_mode(const std::string& s) {
  if (s == "gaussian") return ReconMode::Gaussian;
  if (s == "binary") return ReconMode::Binary;
  throw UsageError("unknown reconstruction mode '" + s + "' (expected gaussian or binary)");
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& edge : edges) {
    if (auto* stack = std::get_if<FlowStack>(&edge)) {
      for (auto* p : stack->parameters()) out.push_back(p);
    }
  }
  for (std::size_t root : graph.roots()) {
    const auto it = prior.class_locations.find(graph.node(root).id);
    if (it != prior.class_locations.end()) out.push_back(&it->second);
  }
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<std::size_t> Model::parameter_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (const auto* stack = flow(e)) {
      out.insert(out.end(), stack->parameters().size(), graph.layer(graph.edge_parent(e)));
    }
  }
  for (std::size_t root : graph.roots()) {
    if (prior.class_locations.contains(graph.node(root).id)) out.push_back(graph.layer(root));
  }
  return out;
}

Model init_model(VfgGraph graph, const ModelConfig& config, std::uint64_t seed) {
  Model model{std::move(graph), {}, {}, config.recon};
  const Rng base(seed);
  for (std::size_t e = 0; e < model.graph.edge_count(); ++e) {
    const auto& spec = model.graph.edge(e);
    if (spec.func.is_flow()) {
      const std::size_t dim = model.graph.node(model.graph.edge_child(e)).dim;
      model.edges.emplace_back(init_flow(dim, spec.func.blocks, base.fork(e).next_u64(), config.init, config.clamp));
    } else {
      model.edges.emplace_back(IdentityEdge{});
    }
  }
  model.prior.family = config.prior;
  model.prior.num_classes = config.num_classes;
  for (std::size_t root : model.graph.roots()) {
    if (config.num_classes > 0) {
      model.prior.class_locations.emplace(model.graph.node(root).id,
                                          Tensor(Shape{config.num_classes, model.graph.node(root).dim}));
    }
  }
  return model;
}

ModelNodes bind_model(ad::Tape& tape, const Model& model, bool trainable) {
  ModelNodes out;
  for (std::size_t e = 0; e < model.edges.size(); ++e) {
    if (const auto* stack = model.flow(e)) {
      out.edges.emplace_back(bind_flow(tape, *stack, trainable));
      for (const auto& block : *out.edges.back()) {
        for (const auto& net : {block.scale, block.shift}) {
          out.params.insert(out.params.end(), {net.w1, net.b1, net.w2, net.b2, net.w3, net.b3});
        }
      }
    } else {
      out.edges.emplace_back(std::nullopt);
    }
  }
  for (std::size_t root : model.graph.roots()) {
    const auto it = model.prior.class_locations.find(model.graph.node(root).id);
    if (it == model.prior.class_locations.end()) continue;
    const ad::NodeId id = trainable ? tape.param(it->second) : tape.constant(it->second);
    out.class_locations.emplace(root, id);
    out.params.push_back(id);
  }
  return out;
}

}  // namespace vfg
