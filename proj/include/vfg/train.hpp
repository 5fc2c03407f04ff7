#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "vfg/message.hpp"
#include "vfg/model.hpp"
#include "vfg/objective.hpp"
#include "vfg/rng.hpp"

namespace vfg {

/// Rows of x (standardized if the caller wants it) plus optional labels for
/// class-conditional priors.
struct Dataset {
  Tensor x;
  std::vector<std::size_t> labels;

  std::size_t rows() const { return x.rank() == 2 ? x.rows() : 0; }
};

/// One phase of the layer-wise schedule: only parameters owned by `layers`
/// move during the next `steps` steps. Phases repeat cyclically.
struct LayerPhase {
  std::set<std::size_t> layers;
  std::size_t steps = 0;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  double beta = kDefaultBeta;
  std::size_t mask_every = 5;  // 0 disables masked steps
  double mask_fraction = 0.5;
  std::vector<LayerPhase> layerwise;
  std::uint64_t seed = 0;
  ReconMode recon_mode = ReconMode::Gaussian;
  std::size_t checkpoint_every = 0;
  double grad_clip = 100.0;  // global L2 norm; 0 disables

  /// Throws UsageError on an invalid field.
  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

OptimizerState init_optimizer(std::span<const Tensor* const> params);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam ascent step: params move along +grad. Entries with
/// active[k] == false keep both the parameter and its moments untouched
/// (an empty `active` means all). Throws DataError on a shape mismatch.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
               const std::vector<bool>& active = {});

/// Uniform random subset of the leaves of size round(k * (1 - fraction)),
/// clamped to [1, k - 1]. Throws DataError when k < 2.
ObservedSet mask_plan(const VfgGraph& graph, double fraction, Rng& rng);

/// True when observing `observed` delivers a backward message to every leaf.
bool mask_covers_leaves(const VfgGraph& graph, const ObservedSet& observed);

struct StepRecord {
  std::size_t step = 0;
  double elbo = 0.0;
  double recon = 0.0;
  double kl_sum = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  bool masked = false;
};

struct TrainHistory {
  std::vector<StepRecord> records;
};

struct TrainResult {
  Model model;
  TrainHistory history;
  OptimizerState optimizer;
  std::uint64_t rng_state = 0;
};

using StepCallback = std::function<void(const StepRecord&, const Model&)>;

/// Minibatch ELBO ascent with interleaved masked steps: step s (0-based)
/// uses the masked objective when mask_every > 0 and (s + 1) % mask_every
/// == 0. Minibatches walk a seeded permutation that is reshuffled at each
/// epoch. Deterministic given (model, data, cfg); wall_ms is the only
/// timing-dependent field.
TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step = {});

/// Full-observation ELBO over every row, evaluated in fixed chunks and
/// combined as a row-weighted mean.
ElboBreakdown evaluate_dataset(const Model& model, const Dataset& data, double beta);

inline constexpr std::size_t kEvalChunk = 256;

}  // namespace vfg
