#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "vfg/message.hpp"
#include "vfg/model.hpp"

namespace vfg {

/// Masked forward pass from `observed`, full backward pass, then the
/// reconstructions of the unobserved sections; observed sections are copied
/// from x unchanged. x is [b x n] (or a single [n] row, returned as [n]).
/// Binary models return probabilities. Throws DataError when `observed` is
/// empty, covers every leaf, or leaves some section without a message.
Tensor impute(const Model& model, const Tensor& x, const ObservedSet& observed);

/// Composition f_(a->j)^-1 ... f_(i->a) from leaf i up to the closest common
/// ancestor a and back down to leaf j. Tree models only; i != j.
Tensor lemma1_path(const Model& model, std::size_t leaf_i, std::size_t leaf_j, const Tensor& x_i);

/// Closest common ancestor of two nodes of a tree model.
std::size_t common_ancestor(const VfgGraph& graph, std::size_t a, std::size_t b);

/// `count` draws: root states from the prior (centred on the label's class
/// location for conditional priors), pushed down by the backward pass.
/// Per sample, roots are drawn in sorted order, coordinates in order.
Tensor sample(const Model& model, std::size_t count, std::uint64_t seed, std::optional<std::size_t> label = {});

/// Forward-pass root states of fully observed rows, keyed by root id.
std::map<std::string, Tensor> encode(const Model& model, const Tensor& x);

/// Per-row log prior density of the given root states.
double log_prior(const Model& model, const std::map<std::size_t, Tensor>& roots, std::size_t row,
                 std::optional<std::size_t> label);

struct NllEstimate {
  double nll = 0.0;        // -log p(x) estimate
  double std_error = 0.0;  // delta-method standard error of log p(x)
  double ess = 0.0;        // effective sample size of the importance weights
  bool degenerate = false; // ess < 2
};

inline constexpr double kDefaultProposalStd = 0.1;

/// Importance-sampled -log p(x) for one row: proposal N(encode(x),
/// proposal_std^2 I) over the concatenated root states, integrand
/// p(h) p(x | h) / q(h) with p(x | h) the reconstruction likelihood of the
/// backward pass from h. Draws come in chunks; estimates for the same seed
/// do not depend on the chunking.
NllEstimate nll_estimate(const Model& model, const Tensor& x, std::size_t k, double proposal_std, std::uint64_t seed,
                         std::optional<std::size_t> label = {});

}  // namespace vfg
