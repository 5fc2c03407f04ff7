#include "vfg/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vfg/error.hpp"
#include "vfg/rng.hpp"

namespace vfg {
namespace {

const double kLn2Pi = std::log(2.0 * std::numbers::pi);
constexpr std::size_t kChunk = 512;
constexpr std::size_t kDrawChunk = 1024;

Tensor as_batch(const Tensor& x) { return x.rank() == 2 ? x : Tensor(Shape{1, x.cols()}, x.storage()); }

Tensor restore_rank(Tensor out, const Tensor& like) {
  if (like.rank() == 2) return out;
  return Tensor(Shape{out.cols()}, std::move(out.storage()));
}

Tensor take_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t cols = x.cols();
  Storage v(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * cols),
            x.storage().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor(Shape{end - begin, cols}, std::move(v));
}

void put_rows(Tensor& dst, std::size_t begin, const Tensor& src) {
  std::copy(src.storage().begin(), src.storage().end(),
            dst.storage().begin() + static_cast<std::ptrdiff_t>(begin * dst.cols()));
}

double logistic(double a) { return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a)); }
double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

void squash_if_binary(const Model& model, Tensor& t) {
  if (model.recon_mode != ReconMode::Binary) return;
  for (double& v : t.data()) v = logistic(v);
}

const Tensor* class_table(const Model& model, std::size_t root) {
  const auto it = model.prior.class_locations.find(model.graph.node(root).id);
  if (it == model.prior.class_locations.end()) {
    throw DataError("root '" + model.graph.node(root).id + "' has no class locations");
  }
  return &it->second;
}

void check_label(const Model& model, std::optional<std::size_t> label) {
  if (!model.prior.conditional()) return;
  if (!label) throw UsageError("conditional prior needs a label");
  if (*label >= model.prior.num_classes) {
    throw UsageError("label " + std::to_string(*label) + " out of range 0.." + std::to_string(model.prior.num_classes - 1));
  }
}

double prior_location(const Model& model, std::size_t root, std::optional<std::size_t> label, std::size_t c) {
  if (!model.prior.conditional()) return 0.0;
  return class_table(model, root)->at(*label, c);
}

/// Reconstruction log-likelihood of one row of x given one row of x_hat.
double recon_loglik(const Model& model, const Tensor& x, const Tensor& xhat, std::size_t row) {
  const std::size_t n = x.cols();
  double ll = 0.0;
  if (model.recon_mode == ReconMode::Gaussian) {
    for (std::size_t c = 0; c < n; ++c) {
      const double d = x.at(0, c) - xhat.at(row, c);
      ll -= 0.5 * d * d;
    }
    return ll - 0.5 * static_cast<double>(n) * kLn2Pi;
  }
  for (std::size_t c = 0; c < n; ++c) ll += x.at(0, c) * xhat.at(row, c) - softplus(xhat.at(row, c));
  return ll;
}

}  // namespace

Tensor impute(const Model& model, const Tensor& x, const ObservedSet& observed) {
  const VfgGraph& g = model.graph;
  if (observed.empty()) throw DataError("impute needs at least one observed section");
  if (observed.size() >= g.leaves().size()) throw DataError("impute needs at least one unobserved section");
  for (std::size_t leaf : observed) {
    if (leaf >= g.node_count() || !g.is_leaf(leaf)) throw DataError("observed set holds a non-leaf node");
  }
  const Tensor batch = as_batch(x);
  if (batch.cols() != g.data_dim()) {
    throw DataError("data has " + std::to_string(batch.cols()) + " columns, graph expects " +
                    std::to_string(g.data_dim()));
  }
  Tensor out = batch;
  for (std::size_t begin = 0; begin < batch.rows(); begin += kChunk) {
    const std::size_t end = std::min(batch.rows(), begin + kChunk);
    ad::Tape tape;
    const ModelNodes nodes = bind_model(tape, model, false);
    const auto sections = section_inputs(tape, g, take_rows(batch, begin, end));
    NodeStates states = forward_pass(tape, model, nodes, sections, observed);
    backward_pass(tape, model, nodes, states);
    for (std::size_t leaf : g.leaves()) {
      if (observed.contains(leaf)) continue;
      if (!states.hhat[leaf]) {
        throw DataError("section " + std::to_string(g.leaf_position(leaf) + 1) + " ('" + g.node(leaf).id +
                        "') is not reachable from the observed sections");
      }
      Tensor v = tape.value(*states.hhat[leaf]);
      squash_if_binary(model, v);
      const Section& s = g.section(leaf);
      for (std::size_t r = 0; r < end - begin; ++r) {
        for (std::size_t c = 0; c < s.size(); ++c) out.at(begin + r, s.begin + c) = v.at(r, c);
      }
    }
  }
  return restore_rank(std::move(out), x);
}

std::size_t common_ancestor(const VfgGraph& graph, std::size_t a, std::size_t b) {
  if (!graph.is_tree()) throw DataError("common ancestor needs a tree-structured graph");
  auto chain = [&](std::size_t v) {
    std::vector<std::size_t> up{v};
    while (!graph.is_root(up.back())) up.push_back(graph.edge_parent(graph.parent_edges(up.back()).front()));
    return up;
  };
  const auto ca = chain(a);
  const auto cb = chain(b);
  for (std::size_t v : ca) {
    if (std::find(cb.begin(), cb.end(), v) != cb.end()) return v;
  }
  throw DataError("nodes '" + graph.node(a).id + "' and '" + graph.node(b).id + "' share no ancestor");
}

Tensor lemma1_path(const Model& model, std::size_t leaf_i, std::size_t leaf_j, const Tensor& x_i) {
  const VfgGraph& g = model.graph;
  if (!g.is_tree()) throw DataError("lemma1_path needs a tree-structured model");
  if (leaf_i >= g.node_count() || leaf_j >= g.node_count() || !g.is_leaf(leaf_i) || !g.is_leaf(leaf_j)) {
    throw DataError("lemma1_path endpoints must be leaves");
  }
  if (leaf_i == leaf_j) throw DataError("lemma1_path needs two distinct leaves");
  if (x_i.cols() != g.node(leaf_i).dim) {
    throw DataError("x_i has dim " + std::to_string(x_i.cols()) + ", leaf '" + g.node(leaf_i).id + "' expects " +
                    std::to_string(g.node(leaf_i).dim));
  }
  const std::size_t a = common_ancestor(g, leaf_i, leaf_j);
  Tensor h = as_batch(x_i);
  for (std::size_t v = leaf_i; v != a;) {
    const std::size_t e = g.parent_edges(v).front();
    if (const FlowStack* f = model.flow(e)) h = flow_forward(*f, h).y;
    v = g.edge_parent(e);
  }
  std::vector<std::size_t> down;
  for (std::size_t v = leaf_j; v != a;) {
    const std::size_t e = g.parent_edges(v).front();
    down.push_back(e);
    v = g.edge_parent(e);
  }
  for (auto it = down.rbegin(); it != down.rend(); ++it) {
    if (const FlowStack* f = model.flow(*it)) h = flow_inverse(*f, h).y;
  }
  return restore_rank(std::move(h), x_i);
}

Tensor sample(const Model& model, std::size_t count, std::uint64_t seed, std::optional<std::size_t> label) {
  if (count < 1) throw UsageError("sample count must be >= 1");
  check_label(model, label);
  const VfgGraph& g = model.graph;
  Rng rng(seed);
  std::map<std::size_t, Tensor> draws;
  for (std::size_t r : g.roots()) draws.emplace(r, Tensor(Shape{count, g.node(r).dim}));
  for (std::size_t row = 0; row < count; ++row) {
    for (std::size_t r : g.roots()) {
      Tensor& t = draws.at(r);
      for (std::size_t c = 0; c < t.cols(); ++c) {
        const double z = model.prior.family == PriorFamily::Laplace ? rng.laplace() : rng.normal();
        t.at(row, c) = z + prior_location(model, r, label, c);
      }
    }
  }
  Tensor out(Shape{count, g.data_dim()});
  for (std::size_t begin = 0; begin < count; begin += kChunk) {
    const std::size_t end = std::min(count, begin + kChunk);
    ad::Tape tape;
    const ModelNodes nodes = bind_model(tape, model, false);
    std::vector<std::pair<std::size_t, ad::NodeId>> roots;
    for (const auto& [r, t] : draws) roots.emplace_back(r, tape.constant(take_rows(t, begin, end)));
    const NodeStates states = backward_from_roots(tape, model, nodes, roots);
    Tensor part = assemble_sections(g, tape, reconstruct(g, states));
    squash_if_binary(model, part);
    put_rows(out, begin, part);
  }
  return out;
}

std::map<std::string, Tensor> encode(const Model& model, const Tensor& x) {
  const VfgGraph& g = model.graph;
  const Tensor batch = as_batch(x);
  if (batch.cols() != g.data_dim()) {
    throw DataError("data has " + std::to_string(batch.cols()) + " columns, graph expects " +
                    std::to_string(g.data_dim()));
  }
  std::map<std::string, Tensor> out;
  for (std::size_t r : g.roots()) out.emplace(g.node(r).id, Tensor(Shape{batch.rows(), g.node(r).dim}));
  for (std::size_t begin = 0; begin < batch.rows(); begin += kChunk) {
    const std::size_t end = std::min(batch.rows(), begin + kChunk);
    ad::Tape tape;
    const ModelNodes nodes = bind_model(tape, model, false);
    const auto sections = section_inputs(tape, g, take_rows(batch, begin, end));
    const NodeStates states = forward_pass(tape, model, nodes, sections, all_leaves(g));
    for (std::size_t r : g.roots()) put_rows(out.at(g.node(r).id), begin, tape.value(*states.h[r]));
  }
  if (x.rank() != 2) {
    for (auto& [id, t] : out) t = restore_rank(std::move(t), x);
  }
  return out;
}

double log_prior(const Model& model, const std::map<std::size_t, Tensor>& roots, std::size_t row,
                 std::optional<std::size_t> label) {
  double lp = 0.0;
  for (const auto& [r, t] : roots) {
    const double m = static_cast<double>(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const double d = t.at(row, c) - prior_location(model, r, label, c);
      lp += model.prior.family == PriorFamily::Laplace ? -std::abs(d) : -0.5 * d * d;
    }
    lp -= model.prior.family == PriorFamily::Laplace ? m * std::numbers::ln2 : 0.5 * m * kLn2Pi;
  }
  return lp;
}

NllEstimate nll_estimate(const Model& model, const Tensor& x, std::size_t k, double proposal_std, std::uint64_t seed,
                         std::optional<std::size_t> label) {
  if (k < 1) throw UsageError("nll_estimate needs K >= 1");
  if (!(proposal_std > 0.0) || !std::isfinite(proposal_std)) throw UsageError("proposal_std must be > 0");
  check_label(model, label);
  const VfgGraph& g = model.graph;
  const Tensor row = as_batch(x);
  if (row.rows() != 1) throw DataError("nll_estimate takes a single row");
  const auto centres = encode(model, row);

  Rng rng(seed);
  std::vector<double> logw;
  logw.reserve(k);
  for (std::size_t begin = 0; begin < k; begin += kDrawChunk) {
    const std::size_t end = std::min(k, begin + kDrawChunk);
    const std::size_t b = end - begin;
    std::map<std::size_t, Tensor> h;
    for (std::size_t r : g.roots()) h.emplace(r, Tensor(Shape{b, g.node(r).dim}));
    std::vector<double> logq(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t r : g.roots()) {
        const Tensor& mu = centres.at(g.node(r).id);
        Tensor& t = h.at(r);
        for (std::size_t c = 0; c < t.cols(); ++c) {
          const double z = rng.normal();
          t.at(i, c) = mu.at(0, c) + proposal_std * z;
          logq[i] += -0.5 * z * z - std::log(proposal_std) - 0.5 * kLn2Pi;
        }
      }
    }
    ad::Tape tape;
    const ModelNodes nodes = bind_model(tape, model, false);
    std::vector<std::pair<std::size_t, ad::NodeId>> roots;
    for (const auto& [r, t] : h) roots.emplace_back(r, tape.constant(t));
    const NodeStates states = backward_from_roots(tape, model, nodes, roots);
    const Tensor xhat = assemble_sections(g, tape, reconstruct(g, states));
    for (std::size_t i = 0; i < b; ++i) {
      logw.push_back(log_prior(model, h, i, label) + recon_loglik(model, row, xhat, i) - logq[i]);
    }
  }

  const double mx = *std::max_element(logw.begin(), logw.end());
  double s1 = 0.0;
  double s2 = 0.0;
  for (double lw : logw) {
    const double w = std::exp(lw - mx);
    s1 += w;
    s2 += w * w;
  }
  const double kd = static_cast<double>(k);
  const double mean = s1 / kd;
  NllEstimate out;
  out.nll = -(mx + std::log(mean));
  const double var = k > 1 ? std::max(0.0, (s2 - kd * mean * mean) / (kd - 1.0)) : 0.0;
  out.std_error = std::sqrt(var / kd) / mean;
  out.ess = s1 * s1 / s2;
  out.degenerate = out.ess < 2.0;
  return out;
}

}  // namespace vfg
