#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "vfg/message.hpp"
#include "vfg/model.hpp"

namespace vfg {

inline constexpr double kDefaultBeta = 0.1;

/// Per-sample averages over the batch. total = recon - beta * (sum of KLs).
struct ElboBreakdown {
  double recon = 0.0;
  std::map<std::string, double> node_kls;
  std::map<std::string, double> root_kls;
  double beta = kDefaultBeta;
  double total = 0.0;

  double kl_sum() const;
};

/// Node consistency term: mean over the parents u that delivered a backward
/// message of ||h - msg_u||_1, plus m ln 2 (Laplace normaliser). The entropy
/// of the deterministic posterior is dropped. Averaged over batch rows.
ad::NodeId node_kl(ad::Tape& tape, const VfgGraph& graph, const NodeStates& states, std::size_t node);

/// -log p(h_root) for the root's forward state; the location is the class
/// row of the prior table when the prior is conditional.
ad::NodeId root_kl(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const NodeStates& states,
                   std::size_t root, std::span<const std::size_t> labels);

/// Gaussian (unit variance) or Bernoulli-logit log-likelihood of the given
/// sections, averaged over batch rows.
ad::NodeId recon_term(ad::Tape& tape, std::span<const ad::NodeId> x_sections, std::span<const ad::NodeId> xhat_sections,
                      ReconMode mode);

struct ElboTerms {
  ad::NodeId total;
  ad::NodeId recon;
  std::vector<std::pair<std::size_t, ad::NodeId>> node_kls;  // node index -> term
  std::vector<std::pair<std::size_t, ad::NodeId>> root_kls;
  double beta;
};

/// Full-observation objective on a [b x n] batch.
ElboTerms build_elbo(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const Tensor& x,
                     std::span<const std::size_t> labels, double beta);

/// Masked objective: forward pass sees only `observed`; reconstruction is
/// scored on the unobserved sections. Throws DataError when `observed` is
/// empty or covers every leaf.
ElboTerms build_masked_elbo(ad::Tape& tape, const Model& model, const ModelNodes& nodes, const Tensor& x,
                            const ObservedSet& observed, std::span<const std::size_t> labels, double beta);

ElboBreakdown read_breakdown(const ad::Tape& tape, const VfgGraph& graph, const ElboTerms& terms);

ElboBreakdown elbo(const Model& model, const Tensor& x, std::span<const std::size_t> labels, double beta);
ElboBreakdown masked_elbo(const Model& model, const Tensor& x, const ObservedSet& observed,
                          std::span<const std::size_t> labels, double beta);

/// node_kl minus its m ln 2 floor (the mean L1 disagreement between a
/// node's forward state and its incoming backward messages) for every
/// non-root node, leaves included, on a fully observed batch.
std::map<std::string, double> consistency_gaps(const Model& model, const Tensor& x);

}  // namespace vfg
