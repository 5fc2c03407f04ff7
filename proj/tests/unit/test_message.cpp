#include <doctest.h>

#include <algorithm>
#include <memory>

#include "helpers.hpp"
#include "vfg/error.hpp"
#include "vfg/message.hpp"

using namespace vfg;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

struct Pass {
  ad::Tape tape;
  ModelNodes nodes;
  std::vector<std::optional<ad::NodeId>> sections;
  std::optional<NodeStates> states;
};

// Runs a forward (and optionally backward) sweep; the tape lives in the result.
std::unique_ptr<Pass> run(const Model& m, const Tensor& x, const ObservedSet& observed, bool backward = true) {
  auto p = std::make_unique<Pass>();
  p->nodes = bind_model(p->tape, m, false);
  p->sections = section_inputs(p->tape, m.graph, x);
  p->states.emplace(forward_pass(p->tape, m, p->nodes, p->sections, observed));
  if (backward) backward_pass(p->tape, m, p->nodes, *p->states);
  return p;
}

Tensor reconstruction(const Model& m, const Pass& p) {
  return assemble_sections(m.graph, p.tape, reconstruct(m.graph, *p.states));
}

Tensor mean2(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  return out;
}

Model identity_star() {
  const VfgGraph g = VfgGraph::build({testutil::leaf("a", 2), testutil::leaf("b", 2), testutil::inner("r", 2, true)},
                                     {testutil::id_edge("a", "r"), testutil::id_edge("b", "r")}, {"a", "b"});
  return init_model(g, {}, 0);
}

}  // namespace

TEST_CASE("aggregation over identity edges is the mean") {
  const Model m = identity_star();
  const auto p = run(m, Tensor::matrix({{1, 2, 3, 4}}), all_leaves(m.graph), false);
  const std::size_t r = m.graph.index_of("r");
  CHECK(p->tape.value(*p->states->h[r]) == Tensor::matrix({{2, 3}}));
}

TEST_CASE("identical sections propagate unchanged through near-identity flows") {
  const Model m = init_model(testutil::three_branch(), {}, 3);
  const Tensor x = Tensor::matrix({{0.3, -1.2, 0.3, -1.2, 0.3, -1.2}, {2, 5, 2, 5, 2, 5}});
  const auto p = run(m, x, all_leaves(m.graph));
  for (std::size_t i = 0; i < m.graph.node_count(); ++i) {
    CHECK(p->tape.value(*p->states->h[i]) == x.columns(0, 2));
    CHECK(p->tape.value(*p->states->hhat[i]) == x.columns(0, 2));
  }
}

TEST_CASE("masked forward pass only aggregates observed branches") {
  const Model m = testutil::random_model(testutil::three_branch(), 5);
  Rng rng(1);
  const Tensor x = random_tensor({4, 6}, rng);
  const VfgGraph& g = m.graph;
  const auto p = run(m, x, observed_from_sections(g, {1, 2}), false);
  const auto& st = *p->states;

  // Independent oracle: push each observed section through its own flow.
  const Tensor m4 = flow_forward(*m.flow(0), x.columns(0, 2)).y;
  const Tensor m5 = flow_forward(*m.flow(1), x.columns(2, 4)).y;
  CHECK(max_abs_diff(p->tape.value(*st.h[g.index_of("7")]), mean2(m4, m5)) < 1e-12);
  CHECK(!st.h[g.index_of("3")].has_value());
  CHECK(!st.h[g.index_of("6")].has_value());
  CHECK(!st.informed[g.index_of("6")]);
  CHECK(st.informed[g.index_of("7")]);
}

TEST_CASE("backward pass down a near-identity chain") {
  const Model m = init_model(testutil::chain(3, 3), {}, 0);
  const auto p = run(m, Tensor::matrix({{1, -2, 0.5}}), all_leaves(m.graph));
  const std::size_t root = m.graph.roots()[0];
  const Tensor& hr = p->tape.value(*p->states->h[root]);
  CHECK(*p->states->hhat[root] == *p->states->h[root]);
  for (std::size_t i = 0; i < m.graph.node_count(); ++i) CHECK(p->tape.value(*p->states->hhat[i]) == hr);
}

TEST_CASE("a node with two parents averages their backward messages") {
  const VfgGraph g = VfgGraph::build({testutil::leaf("l", 2), testutil::inner("p", 2), testutil::inner("q", 2)},
                                     {testutil::id_edge("l", "p"), testutil::id_edge("l", "q")}, {"l"});
  const Model m = init_model(g, {}, 0);
  ad::Tape t;
  const ModelNodes nodes = bind_model(t, m, false);
  const std::vector<std::pair<std::size_t, ad::NodeId>> roots{
      {g.index_of("p"), t.constant(Tensor::matrix({{1, 5}}))}, {g.index_of("q"), t.constant(Tensor::matrix({{3, -1}}))}};
  const NodeStates st = backward_from_roots(t, m, nodes, roots);
  CHECK(t.value(*st.hhat[g.index_of("l")]) == Tensor::matrix({{2, 2}}));
}

TEST_CASE("near-identity tree reconstructs consistent input exactly") {
  const Model m = init_model(testutil::star(4, 2), {}, 11);
  Rng rng(2);
  const Tensor v = random_tensor({5, 2}, rng);
  Tensor x(Shape{5, 8});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) x.at(r, c) = v.at(r, c % 2);
  const auto p = run(m, x, all_leaves(m.graph));
  CHECK(reconstruction(m, *p) == x);
}

TEST_CASE("chains invert exactly whatever the parameters") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = testutil::random_model(testutil::chain(4, 3, 4), seed);
    Rng rng(seed);
    const Tensor x = random_tensor({20, 4}, rng);
    const auto p = run(m, x, all_leaves(m.graph));
    CHECK(max_abs_diff(reconstruction(m, *p), x) < 1e-8);
  }
}

TEST_CASE("child order does not change a node's state") {
  const Model a = testutil::random_model(testutil::star(3, 2), 7);
  std::vector<EdgeSpec> edges = a.graph.edges();
  std::reverse(edges.begin(), edges.end());
  Model b = init_model(VfgGraph::build(a.graph.nodes(), edges, {"x1", "x2", "x3"}), {}, 0);
  for (std::size_t e = 0; e < edges.size(); ++e) b.edges[e] = a.edges[edges.size() - 1 - e];
  Rng rng(3);
  const Tensor x = random_tensor({6, 6}, rng);
  const auto pa = run(a, x, all_leaves(a.graph), false);
  const auto pb = run(b, x, all_leaves(b.graph), false);
  const std::size_t ra = a.graph.index_of("root"), rb = b.graph.index_of("root");
  CHECK(max_abs_diff(pa->tape.value(*pa->states->h[ra]), pb->tape.value(*pb->states->h[rb])) < 1e-14);
}

TEST_CASE("observing more leaves never shrinks the informed set") {
  const Model m = init_model(testutil::layered_dag(), {}, 0);
  const Tensor x(Shape{1, 6}, 0.5);
  const auto& leaves = m.graph.leaves();
  for (unsigned mask = 1; mask < 8; ++mask) {
    ObservedSet obs;
    for (unsigned k = 0; k < 3; ++k)
      if (mask & (1u << k)) obs.insert(leaves[k]);
    const auto base = run(m, x, obs, false);
    for (std::size_t extra : leaves) {
      ObservedSet more = obs;
      more.insert(extra);
      const auto bigger = run(m, x, more, false);
      for (std::size_t i = 0; i < m.graph.node_count(); ++i)
        if (base->states->informed[i]) CHECK(bigger->states->informed[i]);
    }
  }
}

TEST_CASE("masked four-leaf model reconstructs the hidden sections") {
  const Model m = testutil::random_model(testutil::star(4, 2, 4), 9);
  Rng rng(4);
  const Tensor x = random_tensor({3, 8}, rng);
  const auto p = run(m, x, observed_from_sections(m.graph, {1, 3}));
  const auto parts = reconstruct(m.graph, *p->states);
  REQUIRE(parts.size() == 4);
  for (std::size_t k : {1, 3}) {
    CHECK(p->tape.value(parts[k]).shape() == Shape{3, 2});
    CHECK(p->tape.value(parts[k]).all_finite());
  }
  const auto& leaves = m.graph.leaves();
  CHECK(!p->states->h[leaves[1]].has_value());
  CHECK(!p->states->h[leaves[3]].has_value());
}

TEST_CASE("invalid observed sets") {
  const Model m = init_model(testutil::star(2, 2), {}, 0);
  const Tensor x(Shape{1, 4}, 1.0);
  CHECK_THROWS_AS(run(m, x, {}), DataError);
  CHECK_THROWS_AS(run(m, x, {m.graph.index_of("root")}), DataError);
  CHECK_THROWS_AS(observed_from_sections(m.graph, {3}), std::exception);
}
