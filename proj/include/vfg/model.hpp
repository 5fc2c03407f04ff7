#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vfg/autodiff.hpp"
#include "vfg/flow.hpp"
#include "vfg/graph.hpp"

namespace vfg {

enum class PriorFamily { StandardGaussian, Laplace };
enum class ReconMode { Gaussian, Binary };

const char* to_string(PriorFamily f);
const char* to_string(ReconMode m);
PriorFamily parse_prior_family(const std::string& s);
ReconMode parse_recon_mode(const std::string& s);

/// Root prior p(h^L). With `num_classes > 0` every root carries a trainable
/// [num_classes x dim] table of class locations and the prior is centred at
/// the row selected by the sample's label.
struct PriorSpec {
  PriorFamily family = PriorFamily::StandardGaussian;
  std::size_t num_classes = 0;
  std::map<std::string, Tensor> class_locations;  // root id -> [C x m]

  bool conditional() const { return num_classes > 0; }
};

struct IdentityEdge {};
using EdgeFunction = std::variant<IdentityEdge, FlowStack>;

struct Model {
  VfgGraph graph;
  std::vector<EdgeFunction> edges;  // parallel to graph.edges()
  PriorSpec prior;
  ReconMode recon_mode = ReconMode::Gaussian;

  const FlowStack* flow(std::size_t edge) const { return std::get_if<FlowStack>(&edges.at(edge)); }

  /// Canonical parameter order: edges in declaration order (blocks, scale
  /// net then shift net, w1 b1 w2 b2 w3 b3), then class-location tables in
  /// root order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// Layer that owns each parameter (layer of the edge's parent node, or of
  /// the root for class locations); parallel to parameters().
  std::vector<std::size_t> parameter_layers() const;
};

struct ModelConfig {
  InitMode init = InitMode::NearIdentity;
  double clamp = kDefaultClamp;
  PriorFamily prior = PriorFamily::StandardGaussian;
  std::size_t num_classes = 0;
  ReconMode recon = ReconMode::Gaussian;
};

/// Fresh model over `graph`; each flow edge gets its own seeded stream.
Model init_model(VfgGraph graph, const ModelConfig& config, std::uint64_t seed);

/// Tape node ids for every model parameter.
struct ModelNodes {
  std::vector<std::optional<StackNodes>> edges;      // nullopt for identity edges
  std::map<std::size_t, ad::NodeId> class_locations;  // root index -> table node
  std::vector<ad::NodeId> params;                     // canonical order
};

ModelNodes bind_model(ad::Tape& tape, const Model& model, bool trainable);

}  // namespace vfg
