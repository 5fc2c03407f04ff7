#include "vfg/flow.hpp"

#include <cmath>

#include "vfg/error.hpp"
#include "vfg/rng.hpp"

namespace vfg {

std::vector<Tensor*> Mlp::parameters() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
std::vector<const Tensor*> Mlp::parameters() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

std::vector<Tensor*> FlowStack::parameters() {
  std::vector<Tensor*> out;
  for (auto& block : blocks) {
    for (auto* p : block.scale_net.parameters()) out.push_back(p);
    for (auto* p : block.shift_net.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> FlowStack::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& block : blocks) {
    for (const auto* p : block.scale_net.parameters()) out.push_back(p);
    for (const auto* p : block.shift_net.parameters()) out.push_back(p);
  }
  return out;
}

namespace {

Tensor glorot(std::size_t out, std::size_t in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(Shape{out, in});
  for (double& v : w.data()) v = rng.uniform(-a, a);
  return w;
}

Mlp init_mlp(std::size_t in, std::size_t out, Rng& rng, InitMode mode) {
  Mlp net;
  net.w1 = glorot(kHiddenWidth, in, rng);
  net.b1 = Tensor(Shape{kHiddenWidth});
  net.w2 = glorot(kHiddenWidth, kHiddenWidth, rng);
  net.b2 = Tensor(Shape{kHiddenWidth});
  net.w3 = glorot(out, kHiddenWidth, rng);
  net.b3 = Tensor(Shape{out});
  if (mode == InitMode::NearIdentity) net.w3 = Tensor(Shape{out, kHiddenWidth});
  return net;
}

MlpNodes bind_mlp(ad::Tape& tape, const Mlp& net, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.param(t) : tape.constant(t); };
  return MlpNodes{put(net.w1), put(net.b1), put(net.w2), put(net.b2), put(net.w3), put(net.b3)};
}

ad::NodeId run_mlp(ad::Tape& tape, const MlpNodes& net, ad::NodeId x) {
  const ad::NodeId h1 = tape.relu(tape.affine(net.w1, x, net.b1));
  const ad::NodeId h2 = tape.relu(tape.affine(net.w2, h1, net.b2));
  return tape.affine(net.w3, h2, net.b3);
}

struct Parts {
  ad::NodeId a;
  ad::NodeId b;
};

Parts partition(ad::Tape& tape, const CouplingBlock& block, ad::NodeId x) {
  const std::size_t c = block.split_point();
  const ad::NodeId lo = tape.split(x, 0, c);
  const ad::NodeId hi = tape.split(x, c, block.dim);
  return block.swapped ? Parts{hi, lo} : Parts{lo, hi};
}

ad::NodeId assemble(ad::Tape& tape, const CouplingBlock& block, ad::NodeId a, ad::NodeId b) {
  const ad::NodeId parts[2] = {block.swapped ? b : a, block.swapped ? a : b};
  return tape.concat(parts);
}

void check_input(const ad::Tape& tape, const CouplingBlock& block, ad::NodeId x) {
  const Tensor& v = tape.value(x);
  if (v.rank() == 0 || v.cols() != block.dim) {
    throw NumericError("coupling block of dim " + std::to_string(block.dim) + " applied to " +
                       shape_string(v.shape()));
  }
}

ad::NodeId clamped_scale(ad::Tape& tape, const CouplingBlock& block, const BlockNodes& nodes, ad::NodeId a) {
  return tape.scale(tape.tanh(run_mlp(tape, nodes.scale, a)), block.clamp);
}

FlowResult to_result(const ad::Tape& tape, const FlowNodes& out) {
  const Tensor& ld = tape.value(out.logdet);
  return FlowResult{tape.value(out.y), std::vector<double>(ld.data().begin(), ld.data().end())};
}

}  // namespace

FlowStack init_flow(std::size_t dim, int blocks, std::uint64_t seed, InitMode mode, double clamp) {
  if (dim < 2) throw DataError("coupling flows need dim >= 2, got " + std::to_string(dim));
  if (blocks < 1) throw DataError("flow needs at least one coupling block");
  if (!(clamp > 0.0)) throw DataError("scale clamp must be positive");
  Rng rng(seed);
  FlowStack stack;
  stack.dim = dim;
  for (int k = 0; k < blocks; ++k) {
    CouplingBlock block;
    block.dim = dim;
    block.swapped = (k % 2) == 1;
    block.clamp = clamp;
    block.scale_net = init_mlp(block.a_size(), block.b_size(), rng, mode);
    block.shift_net = init_mlp(block.a_size(), block.b_size(), rng, mode);
    stack.blocks.push_back(std::move(block));
  }
  return stack;
}

StackNodes bind_flow(ad::Tape& tape, const FlowStack& stack, bool trainable) {
  StackNodes out;
  out.reserve(stack.blocks.size());
  for (const auto& block : stack.blocks) {
    out.push_back(BlockNodes{bind_mlp(tape, block.scale_net, trainable), bind_mlp(tape, block.shift_net, trainable)});
  }
  return out;
}

FlowNodes coupling_forward(ad::Tape& tape, const CouplingBlock& block, const BlockNodes& nodes, ad::NodeId x) {
  check_input(tape, block, x);
  const auto [a, b] = partition(tape, block, x);
  const ad::NodeId s = clamped_scale(tape, block, nodes, a);
  const ad::NodeId t = run_mlp(tape, nodes.shift, a);
  const ad::NodeId yb = tape.add(tape.elem_mul(b, tape.exp(s)), t);
  return FlowNodes{assemble(tape, block, a, yb), tape.row_sum(s)};
}

FlowNodes coupling_inverse(ad::Tape& tape, const CouplingBlock& block, const BlockNodes& nodes, ad::NodeId y) {
  check_input(tape, block, y);
  const auto [a, b] = partition(tape, block, y);
  const ad::NodeId s = clamped_scale(tape, block, nodes, a);
  const ad::NodeId t = run_mlp(tape, nodes.shift, a);
  const ad::NodeId xb = tape.elem_mul(tape.sub(b, t), tape.exp(tape.neg(s)));
  return FlowNodes{assemble(tape, block, a, xb), tape.neg(tape.row_sum(s))};
}

FlowNodes flow_forward(ad::Tape& tape, const FlowStack& stack, const StackNodes& nodes, ad::NodeId x) {
  FlowNodes out{x, 0};
  for (std::size_t k = 0; k < stack.blocks.size(); ++k) {
    const FlowNodes step = coupling_forward(tape, stack.blocks[k], nodes[k], out.y);
    out.logdet = k == 0 ? step.logdet : tape.add(out.logdet, step.logdet);
    out.y = step.y;
  }
  return out;
}

FlowNodes flow_inverse(ad::Tape& tape, const FlowStack& stack, const StackNodes& nodes, ad::NodeId y) {
  FlowNodes out{y, 0};
  for (std::size_t k = stack.blocks.size(); k-- > 0;) {
    const FlowNodes step = coupling_inverse(tape, stack.blocks[k], nodes[k], out.y);
    out.logdet = k + 1 == stack.blocks.size() ? step.logdet : tape.add(out.logdet, step.logdet);
    out.y = step.y;
  }
  return out;
}

FlowResult coupling_forward(const CouplingBlock& block, const Tensor& x) {
  ad::Tape tape;
  const BlockNodes nodes{bind_mlp(tape, block.scale_net, false), bind_mlp(tape, block.shift_net, false)};
  return to_result(tape, coupling_forward(tape, block, nodes, tape.constant(x)));
}

FlowResult coupling_inverse(const CouplingBlock& block, const Tensor& y) {
  ad::Tape tape;
  const BlockNodes nodes{bind_mlp(tape, block.scale_net, false), bind_mlp(tape, block.shift_net, false)};
  return to_result(tape, coupling_inverse(tape, block, nodes, tape.constant(y)));
}

FlowResult flow_forward(const FlowStack& stack, const Tensor& x) {
  ad::Tape tape;
  const StackNodes nodes = bind_flow(tape, stack, false);
  return to_result(tape, flow_forward(tape, stack, nodes, tape.constant(x)));
}

FlowResult flow_inverse(const FlowStack& stack, const Tensor& y) {
  ad::Tape tape;
  const StackNodes nodes = bind_flow(tape, stack, false);
  return to_result(tape, flow_inverse(tape, stack, nodes, tape.constant(y)));
}

}  // namespace vfg
