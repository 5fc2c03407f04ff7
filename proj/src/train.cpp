#include "vfg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <utility>

#include "vfg/error.hpp"

namespace vfg {

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw UsageError("beta must be >= 0");
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) throw UsageError("mask_fraction must lie in (0, 1)");
  if (!(grad_clip >= 0.0)) throw UsageError("grad_clip must be >= 0");
  for (const auto& phase : layerwise) {
    if (phase.steps == 0) throw UsageError("layer-wise phase with zero steps");
    if (phase.layers.empty()) throw UsageError("layer-wise phase with no layers");
  }
}

OptimizerState init_optimizer(std::span<const Tensor* const> params) {
  OptimizerState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape(), 0.0);
    s.v.emplace_back(p->shape(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
               const std::vector<bool>& active) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DataError("adam_step: parameter, gradient and moment counts differ");
  }
  if (!active.empty() && active.size() != params.size()) throw DataError("adam_step: active mask length mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape() || params[k]->shape() != state.m[k].shape()) {
      throw DataError("adam_step: shape mismatch for parameter " + std::to_string(k) + " (" +
                      shape_string(params[k]->shape()) + " vs " + shape_string(grads[k].shape()) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!active.empty() && !active[k]) continue;
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      p[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
  }
}

ObservedSet mask_plan(const VfgGraph& graph, double fraction, Rng& rng) {
  const auto& leaves = graph.leaves();
  const std::size_t k = leaves.size();
  if (k < 2) throw DataError("masking needs at least two leaves, graph has " + std::to_string(k));
  const double target = std::round(static_cast<double>(k) * (1.0 - fraction));
  const std::size_t size = static_cast<std::size_t>(std::clamp(target, 1.0, static_cast<double>(k - 1)));
  std::vector<std::size_t> order(leaves.begin(), leaves.end());
  rng.shuffle(std::span<std::size_t>(order));
  return ObservedSet(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
}

bool mask_covers_leaves(const VfgGraph& graph, const ObservedSet& observed) {
  std::vector<bool> up(graph.node_count(), false);
  for (std::size_t leaf : observed) up[leaf] = true;
  for (std::size_t i : graph.topo_order()) {
    for (std::size_t e : graph.child_edges(i)) up[i] = up[i] || up[graph.edge_child(e)];
  }
  std::vector<bool> down(graph.node_count(), false);
  const auto& order = graph.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t i = *it;
    if (graph.is_root(i)) {
      down[i] = up[i];
      continue;
    }
    for (std::size_t e : graph.parent_edges(i)) down[i] = down[i] || down[graph.edge_parent(e)];
  }
  return std::all_of(graph.leaves().begin(), graph.leaves().end(), [&](std::size_t l) { return down[l]; });
}

namespace {

constexpr int kMaskRedraws = 1000;

Dataset gather(const Dataset& data, std::span<const std::size_t> idx) {
  const std::size_t cols = data.x.cols();
  Dataset out{Tensor(Shape{idx.size(), cols}), {}};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(data.x.storage().begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                out.x.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
    if (!data.labels.empty()) out.labels.push_back(data.labels[idx[r]]);
  }
  return out;
}

/// Walks a permutation of the rows, reshuffling whenever it runs out.
class BatchSampler {
 public:
  BatchSampler(std::size_t rows, Rng& rng) : rng_(rng), perm_(rows) {
    std::iota(perm_.begin(), perm_.end(), 0);
    rng_.shuffle(std::span<std::size_t>(perm_));
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == perm_.size()) {
        rng_.shuffle(std::span<std::size_t>(perm_));
        pos_ = 0;
      }
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

 private:
  Rng& rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

std::vector<bool> active_mask(const Model& model, const TrainConfig& cfg, std::size_t step) {
  const auto layers = model.parameter_layers();
  if (cfg.layerwise.empty()) return std::vector<bool>(layers.size(), true);
  std::size_t cycle = 0;
  for (const auto& phase : cfg.layerwise) cycle += phase.steps;
  std::size_t t = step % cycle;
  const LayerPhase* current = &cfg.layerwise.front();
  for (const auto& phase : cfg.layerwise) {
    if (t < phase.steps) {
      current = &phase;
      break;
    }
    t -= phase.steps;
  }
  std::vector<bool> out(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) out[k] = current->layers.contains(layers[k]);
  return out;
}

}  // namespace

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (data.rows() == 0) throw DataError("training data is empty");
  if (data.x.cols() != model.graph.data_dim()) {
    throw DataError("data has " + std::to_string(data.x.cols()) + " columns, graph expects " +
                    std::to_string(model.graph.data_dim()));
  }
  if (model.prior.conditional() && data.labels.size() != data.rows()) {
    throw DataError("conditional prior needs one label per training row");
  }
  if (cfg.mask_every > 0 && model.graph.leaves().size() < 2) throw DataError("masked steps need at least two leaves");
  model.recon_mode = cfg.recon_mode;

  Rng rng(cfg.seed);
  BatchSampler sampler(data.rows(), rng);
  TrainResult result{std::move(model), {}, {}, 0};
  Model& m = result.model;
  const VfgGraph& g = m.graph;
  result.optimizer = init_optimizer(std::as_const(m).parameters());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto idx = sampler.next(cfg.batch_size);
    const Dataset batch = gather(data, idx);
    const bool masked = cfg.mask_every > 0 && (step + 1) % cfg.mask_every == 0;
    ObservedSet observed;
    if (masked) {
      int tries = 0;
      do {
        if (++tries > kMaskRedraws) throw DataError("no mask draw reaches every leaf; lower mask_fraction");
        observed = mask_plan(g, cfg.mask_fraction, rng);
      } while (!mask_covers_leaves(g, observed));
    }

    StepRecord rec;
    rec.step = step;
    rec.masked = masked;
    std::vector<Tensor> grads;
    try {
      ad::Tape tape;
      const ModelNodes nodes = bind_model(tape, m, true);
      const ElboTerms terms = masked ? build_masked_elbo(tape, m, nodes, batch.x, observed, batch.labels, cfg.beta)
                                     : build_elbo(tape, m, nodes, batch.x, batch.labels, cfg.beta);
      const ElboBreakdown bd = read_breakdown(tape, g, terms);
      rec.elbo = bd.total;
      rec.recon = bd.recon;
      rec.kl_sum = bd.kl_sum();
      const ad::Gradients gr = ad::backward(tape, terms.total);
      for (ad::NodeId id : nodes.params) grads.push_back(gr.at(id));
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }

    const std::vector<bool> active = active_mask(m, cfg, step);
    double sq = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      if (!active[k]) continue;
      for (double v : grads[k].data()) sq += v * v;
    }
    rec.grad_norm = std::sqrt(sq);
    if (!std::isfinite(rec.grad_norm)) {
      throw NumericError("step " + std::to_string(step) + ": non-finite gradient norm");
    }
    if (cfg.grad_clip > 0.0 && rec.grad_norm > cfg.grad_clip) {
      const double f = cfg.grad_clip / rec.grad_norm;
      for (auto& gk : grads) {
        for (double& v : gk.data()) v *= f;
      }
    }
    const std::vector<Tensor*> params = m.parameters();
    adam_step(params, grads, result.optimizer, cfg.learning_rate, active);

    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.records.push_back(rec);
    if (on_step) on_step(rec, m);
  }
  result.rng_state = rng.state();
  return result;
}

ElboBreakdown evaluate_dataset(const Model& model, const Dataset& data, double beta) {
  const std::size_t rows = data.rows();
  if (rows == 0) throw DataError("evaluation data is empty");
  ElboBreakdown acc;
  acc.beta = beta;
  for (std::size_t begin = 0; begin < rows; begin += kEvalChunk) {
    const std::size_t end = std::min(rows, begin + kEvalChunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Dataset chunk = gather(data, idx);
    const ElboBreakdown part = elbo(model, chunk.x, chunk.labels, beta);
    const double w = static_cast<double>(end - begin) / static_cast<double>(rows);
    acc.recon += w * part.recon;
    acc.total += w * part.total;
    for (const auto& [k, v] : part.node_kls) acc.node_kls[k] += w * v;
    for (const auto& [k, v] : part.root_kls) acc.root_kls[k] += w * v;
  }
  return acc;
}

}  // namespace vfg
