#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "vfg/error.hpp"
#include "vfg/infer.hpp"
#include "vfg/objective.hpp"

using namespace vfg;
using testutil::random_tensor;

namespace {

constexpr double kLn2 = std::numbers::ln2;
const double kLn2Pi = std::log(2.0 * std::numbers::pi);

// l -> p (identity), p a root; optionally a second root q above l.
VfgGraph pair_graph(bool two_parents) {
  std::vector<NodeSpec> nodes{testutil::leaf("l", 2), testutil::inner("p", 2)};
  std::vector<EdgeSpec> edges{testutil::id_edge("l", "p")};
  if (two_parents) {
    nodes.push_back(testutil::inner("q", 2));
    edges.push_back(testutil::id_edge("l", "q"));
  }
  return VfgGraph::build(nodes, edges, {"l"});
}

// a -> p, b -> q, p -> r, q -> r with flow edges; r aggregates.
VfgGraph two_leaf_tree(std::size_t dim, int blocks) {
  using namespace testutil;
  return VfgGraph::build({leaf("a", dim), leaf("b", dim), inner("p", dim), inner("q", dim), inner("r", dim, true)},
                         {flow_edge("a", "p", blocks), flow_edge("b", "q", blocks), flow_edge("p", "r", blocks),
                          flow_edge("q", "r", blocks)},
                         {"a", "b"});
}

double l1(const Tensor& a, const Tensor& b, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += std::abs(a.at(r, c) - b.at(r, c));
  return s;
}

double sq(const Tensor& a, const Tensor& b, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += (a.at(r, c) - b.at(r, c)) * (a.at(r, c) - b.at(r, c));
  return s;
}

Tensor avg(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  return out;
}

// Straight-line evaluation of the two-leaf-tree objective from value-level
// flow calls only.
struct Oracle {
  double recon, kl_p, kl_q, kl_r, total;
};

Oracle straight_line(const Model& m, const Tensor& x, double beta) {
  const std::size_t d = m.graph.node(0).dim;
  const Tensor xa = x.columns(0, d), xb = x.columns(d, 2 * d);
  const FlowStack &fap = *m.flow(0), &fbq = *m.flow(1), &fpr = *m.flow(2), &fqr = *m.flow(3);
  const Tensor hp = flow_forward(fap, xa).y;
  const Tensor hq = flow_forward(fbq, xb).y;
  const Tensor hr = avg(flow_forward(fpr, hp).y, flow_forward(fqr, hq).y);
  const Tensor hhp = flow_inverse(fpr, hr).y;
  const Tensor hhq = flow_inverse(fqr, hr).y;
  const Tensor xha = flow_inverse(fap, hhp).y;
  const Tensor xhb = flow_inverse(fbq, hhq).y;
  const double rows = static_cast<double>(x.rows());
  const Tensor zero(hr.shape(), 0.0);
  Oracle o{0, 0, 0, 0, 0};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    o.recon += (-0.5 * sq(xa, xha, r) - 0.5 * sq(xb, xhb, r) - static_cast<double>(d) * kLn2Pi) / rows;
    o.kl_p += (l1(hp, hhp, r) + static_cast<double>(d) * kLn2) / rows;
    o.kl_q += (l1(hq, hhq, r) + static_cast<double>(d) * kLn2) / rows;
    o.kl_r += (0.5 * sq(hr, zero, r) + 0.5 * static_cast<double>(d) * kLn2Pi) / rows;
  }
  o.total = o.recon - beta * (o.kl_p + o.kl_q + o.kl_r);
  return o;
}

double total_of(const Model& m, const Tensor& x, double beta) { return elbo(m, x, {}, beta).total; }

}  // namespace

TEST_CASE("node consistency term") {
  SUBCASE("single parent") {
    const VfgGraph g = pair_graph(false);
    ad::Tape t;
    NodeStates st(g);
    st.h[g.index_of("l")] = t.constant(Tensor::matrix({{1, 0}}));
    st.bwd_msg[0] = t.constant(Tensor::matrix({{0, 0}}));
    CHECK(t.scalar(node_kl(t, g, st, g.index_of("l"))) == doctest::Approx(1 + 2 * kLn2).epsilon(1e-15));
    st.bwd_msg[0] = st.h[g.index_of("l")];
    CHECK(t.scalar(node_kl(t, g, st, g.index_of("l"))) == 2 * kLn2);
    CHECK(std::abs(1 + 2 * kLn2 - 2.3863) < 1e-4);
  }
  SUBCASE("two parents") {
    const VfgGraph g = pair_graph(true);
    ad::Tape t;
    NodeStates st(g);
    st.h[g.index_of("l")] = t.constant(Tensor::matrix({{1, 0}}));
    st.bwd_msg[0] = t.constant(Tensor::matrix({{0, 0}}));
    st.bwd_msg[1] = t.constant(Tensor::matrix({{2, 0}}));
    CHECK(t.scalar(node_kl(t, g, st, g.index_of("l"))) == doctest::Approx(1 + 2 * kLn2).epsilon(1e-15));
  }
  SUBCASE("errors") {
    const VfgGraph g = pair_graph(false);
    ad::Tape t;
    NodeStates st(g);
    CHECK_THROWS_AS(node_kl(t, g, st, g.index_of("l")), DataError);
    CHECK_THROWS_AS(node_kl(t, g, st, g.index_of("p")), DataError);
    st.h[g.index_of("l")] = t.constant(Tensor::matrix({{1, 0}}));
    CHECK_THROWS_AS(node_kl(t, g, st, g.index_of("l")), DataError);
  }
}

TEST_CASE("root prior term") {
  Model m = init_model(pair_graph(false), {}, 0);
  const std::size_t root = m.graph.index_of("p");
  const auto eval = [&](const Tensor& h) {
    ad::Tape t;
    const ModelNodes nodes = bind_model(t, m, false);
    NodeStates st(m.graph);
    st.h[root] = t.constant(h);
    return t.scalar(root_kl(t, m, nodes, st, root, {}));
  };
  CHECK(eval(Tensor::matrix({{0, 0}})) == doctest::Approx(kLn2Pi).epsilon(1e-15));
  CHECK(std::abs(kLn2Pi - 1.8379) < 1e-4);
  CHECK(eval(Tensor::matrix({{3, 4}})) == doctest::Approx(12.5 + kLn2Pi).epsilon(1e-15));
  m.prior.family = PriorFamily::Laplace;
  CHECK(eval(Tensor::matrix({{1, -1}})) == doctest::Approx(2 + 2 * kLn2).epsilon(1e-15));

  SUBCASE("class-conditional locations") {
    ModelConfig cfg;
    cfg.num_classes = 3;
    Model c = init_model(pair_graph(false), cfg, 0);
    c.prior.class_locations.at("p") = Tensor::matrix({{0, 0}, {1, 2}, {-1, 0}});
    ad::Tape t;
    const ModelNodes nodes = bind_model(t, c, false);
    NodeStates st(c.graph);
    st.h[root] = t.constant(Tensor::matrix({{1, 2}, {0, 0}}));
    const std::vector<std::size_t> labels{1, 2};
    // rows: zero residual, then residual (1, 0)
    CHECK(t.scalar(root_kl(t, c, nodes, st, root, labels)) == doctest::Approx(0.25 + kLn2Pi).epsilon(1e-15));
    CHECK_THROWS_AS(root_kl(t, c, nodes, st, root, {}), DataError);
  }
}

TEST_CASE("reconstruction term") {
  ad::Tape t;
  const Tensor x = Tensor::matrix({{1, 2, 3, 4, 5, 6, 7, 8}});
  std::vector<ad::NodeId> xs{t.constant(x)};
  CHECK(t.scalar(recon_term(t, xs, xs, ReconMode::Gaussian)) == doctest::Approx(-4 * kLn2Pi).epsilon(1e-15));

  std::vector<ad::NodeId> one{t.constant(Tensor::matrix({{1}}))};
  std::vector<ad::NodeId> zero{t.constant(Tensor::matrix({{0}}))};
  CHECK(t.scalar(recon_term(t, one, zero, ReconMode::Gaussian)) ==
        doctest::Approx(-0.5 - 0.5 * kLn2Pi).epsilon(1e-15));
  CHECK(t.scalar(recon_term(t, one, zero, ReconMode::Binary)) == doctest::Approx(std::log(0.5)).epsilon(1e-15));

  std::vector<ad::NodeId> bad{t.constant(Tensor::matrix({{2}}))};
  CHECK_THROWS_AS(recon_term(t, bad, zero, ReconMode::Binary), DataError);
}

TEST_CASE("near-identity model: zero residuals everywhere") {
  const Model m = init_model(testutil::three_branch(), {}, 0);
  Tensor x(Shape{3, 6});
  Rng rng(1);
  for (std::size_t r = 0; r < 3; ++r) {
    const double a = rng.normal(), b = rng.normal();
    for (std::size_t c = 0; c < 6; ++c) x.at(r, c) = c % 2 ? b : a;
  }
  for (double beta : {0.0, 0.1, 3.0}) {
    const ElboBreakdown e = elbo(m, x, {}, beta);
    CHECK(e.recon == doctest::Approx(-3 * kLn2Pi).epsilon(1e-14));
    CHECK(e.node_kls.size() == 3);
    for (const auto& [_, v] : e.node_kls) CHECK(v == doctest::Approx(2 * kLn2).epsilon(1e-15));
    CHECK(e.total == doctest::Approx(e.recon - beta * e.kl_sum()).epsilon(1e-12));
  }
}

TEST_CASE("beta zero leaves only reconstruction") {
  const Model m = testutil::random_model(two_leaf_tree(2, 2), 4);
  Rng rng(2);
  const Tensor x = random_tensor({5, 4}, rng);
  const ElboBreakdown e = elbo(m, x, {}, 0.0);
  CHECK(e.total == e.recon);
}

TEST_CASE("two-leaf tree matches a straight-line evaluation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = testutil::random_model(two_leaf_tree(3, 2), seed);
    Rng rng(seed + 100);
    const Tensor x = random_tensor({7, 6}, rng);
    const ElboBreakdown e = elbo(m, x, {}, 0.1);
    const Oracle o = straight_line(m, x, 0.1);
    CAPTURE(seed);
    CHECK(std::abs(e.recon - o.recon) < 1e-10);
    CHECK(std::abs(e.node_kls.at("p") - o.kl_p) < 1e-10);
    CHECK(std::abs(e.node_kls.at("q") - o.kl_q) < 1e-10);
    CHECK(std::abs(e.root_kls.at("r") - o.kl_r) < 1e-10);
    CHECK(std::abs(e.total - o.total) < 1e-10);
    CHECK(std::abs(e.total - (e.recon - e.beta * e.kl_sum())) < 1e-12);
  }
}

TEST_CASE("full objective gradient matches finite differences") {
  Model m = testutil::random_model(two_leaf_tree(4, 1), 21);
  Rng rng(5);
  const Tensor x = random_tensor({6, 8}, rng);
  constexpr double beta = 0.1;

  ad::Tape tape;
  const ModelNodes nodes = bind_model(tape, m, true);
  const ElboTerms terms = build_elbo(tape, m, nodes, x, {}, beta);
  const ad::Gradients g = ad::backward(tape, terms.total);

  auto params = m.parameters();
  Rng pick(6);
  double worst = 0.0;
  constexpr double eps = 1e-5;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = pick.below(params.size());
    const std::size_t i = pick.below(params[k]->size());
    const double orig = (*params[k])[i];
    (*params[k])[i] = orig + eps;
    const double fp = total_of(m, x, beta);
    (*params[k])[i] = orig - eps;
    const double fm = total_of(m, x, beta);
    (*params[k])[i] = orig;
    const double fd = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(g.at(nodes.params[k])[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("dropping the normalising constants leaves gradients unchanged") {
  const Model m = testutil::random_model(two_leaf_tree(2, 1), 8);
  Rng rng(9);
  const Tensor x = random_tensor({4, 4}, rng);
  ad::Tape tape;
  const ModelNodes nodes = bind_model(tape, m, true);
  const ElboTerms terms = build_elbo(tape, m, nodes, x, {}, 0.1);
  const ElboBreakdown b = read_breakdown(tape, m.graph, terms);
  const double constants = -2.0 * kLn2Pi - 0.1 * (2 * 2 * kLn2 + kLn2Pi);
  const ad::NodeId stripped = tape.sub(terms.total, tape.constant(Tensor::scalar(constants)));
  const ad::Gradients ga = ad::backward(tape, terms.total);
  const ad::Gradients gb = ad::backward(tape, stripped);
  for (ad::NodeId p : nodes.params) CHECK(ga.at(p) == gb.at(p));
  CHECK(b.total - constants == doctest::Approx(tape.scalar(stripped)).epsilon(1e-14));
}

TEST_CASE("node terms never drop below their floor") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = testutil::random_model(testutil::layered_dag(2, 1), seed);
    Rng rng(seed);
    const ElboBreakdown e = elbo(m, random_tensor({5, 6}, rng), {}, 0.1);
    for (const auto& [_, v] : e.node_kls) CHECK(v >= 2 * kLn2);
  }
}

TEST_CASE("objective is invariant to child order") {
  const Model a = testutil::random_model(testutil::star(3, 2), 7);
  std::vector<EdgeSpec> edges = a.graph.edges();
  std::reverse(edges.begin(), edges.end());
  Model b = init_model(VfgGraph::build(a.graph.nodes(), edges, {"x1", "x2", "x3"}), {}, 0);
  for (std::size_t e = 0; e < edges.size(); ++e) b.edges[e] = a.edges[edges.size() - 1 - e];
  Rng rng(3);
  const Tensor x = random_tensor({6, 6}, rng);
  CHECK(elbo(a, x, {}, 0.1).total == doctest::Approx(elbo(b, x, {}, 0.1).total).epsilon(1e-13));
}

TEST_CASE("masked objective") {
  SUBCASE("near-identity model with equal sections") {
    const Model m = init_model(testutil::star(4, 2), {}, 0);
    const Tensor x = Tensor::matrix({{0.4, -1, 0.4, -1, 0.4, -1, 0.4, -1}});
    const ElboBreakdown e = masked_elbo(m, x, observed_from_sections(m.graph, {1, 3}), {}, 0.1);
    CHECK(e.recon == doctest::Approx(-2 * kLn2Pi).epsilon(1e-14));
  }
  SUBCASE("precondition") {
    const Model m = init_model(testutil::star(4, 2), {}, 0);
    const Tensor x(Shape{1, 8}, 0.0);
    CHECK_THROWS_AS(masked_elbo(m, x, all_leaves(m.graph), {}, 0.1), DataError);
    CHECK_THROWS_AS(masked_elbo(m, x, {}, {}, 0.1), DataError);
  }
  SUBCASE("agrees with imputation") {
    const Model m = testutil::random_model(testutil::star(4, 2, 2), 12);
    Rng rng(10);
    const Tensor x = random_tensor({9, 8}, rng);
    const ObservedSet obs = observed_from_sections(m.graph, {1, 3});
    const ElboBreakdown e = masked_elbo(m, x, obs, {}, 0.1);
    const Tensor imp = impute(m, x, obs);
    double ref = 0.0;
    for (std::size_t r = 0; r < 9; ++r) {
      for (std::size_t c : {2, 3, 6, 7}) ref += -0.5 * (x.at(r, c) - imp.at(r, c)) * (x.at(r, c) - imp.at(r, c)) / 9.0;
    }
    ref -= 2 * kLn2Pi;
    CHECK(std::abs(e.recon - ref) < 1e-10);
  }
}
