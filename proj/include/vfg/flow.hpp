#pragma once

#include <cstdint>
#include <vector>

#include "vfg/autodiff.hpp"
#include "vfg/tensor.hpp"

namespace vfg {

inline constexpr std::size_t kHiddenWidth = 64;
inline constexpr double kDefaultClamp = 2.0;
inline constexpr int kDefaultBlocks = 4;

/// Three affine layers with two relu activations in between.
/// Weights are [out x in], biases [out].
struct Mlp {
  Tensor w1, b1, w2, b2, w3, b3;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

/// Affine coupling block. Coordinates split into a conditioning part A and a
/// transformed part B: y_A = x_A, y_B = x_B * exp(s(x_A)) + t(x_A) with
/// s = clamp * tanh(scale_net(x_A)) and t = shift_net(x_A).
///
/// With c = ceil(dim/2), an unswapped block has A = [0, c), B = [c, dim);
/// a swapped block exchanges the roles: B = [0, c), A = [c, dim).
struct CouplingBlock {
  std::size_t dim = 0;
  bool swapped = false;
  double clamp = kDefaultClamp;
  Mlp scale_net;
  Mlp shift_net;

  std::size_t split_point() const { return (dim + 1) / 2; }
  std::size_t a_size() const { return swapped ? dim - split_point() : split_point(); }
  std::size_t b_size() const { return dim - a_size(); }
};

/// Sequence of coupling blocks with alternating partitions (block k is
/// swapped iff k is odd).
struct FlowStack {
  std::size_t dim = 0;
  std::vector<CouplingBlock> blocks;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

enum class InitMode { NearIdentity, Random };

/// near_identity zeroes the final layer of both nets so the map starts as
/// the identity; random draws every weight from U[-a, a] with
/// a = sqrt(6 / (fan_in + fan_out)). Biases start at zero. Throws
/// DataError when dim < 2 or blocks < 1.
FlowStack init_flow(std::size_t dim, int blocks, std::uint64_t seed, InitMode mode, double clamp = kDefaultClamp);

// --- tape-level evaluation -------------------------------------------------

struct MlpNodes {
  ad::NodeId w1, b1, w2, b2, w3, b3;
};
struct BlockNodes {
  MlpNodes scale, shift;
};
using StackNodes = std::vector<BlockNodes>;

/// Records the stack's parameters on the tape, as params when `trainable`
/// and as constants otherwise.
StackNodes bind_flow(ad::Tape& tape, const FlowStack& stack, bool trainable);

/// `y` has the input's shape; `logdet` holds one entry per row ([b] for a
/// [b x dim] input, scalar for a [dim] input).
struct FlowNodes {
  ad::NodeId y;
  ad::NodeId logdet;
};

FlowNodes coupling_forward(ad::Tape& tape, const CouplingBlock& block, const BlockNodes& nodes, ad::NodeId x);
FlowNodes coupling_inverse(ad::Tape& tape, const CouplingBlock& block, const BlockNodes& nodes, ad::NodeId y);
FlowNodes flow_forward(ad::Tape& tape, const FlowStack& stack, const StackNodes& nodes, ad::NodeId x);
FlowNodes flow_inverse(ad::Tape& tape, const FlowStack& stack, const StackNodes& nodes, ad::NodeId y);

// --- value-level convenience ----------------------------------------------

struct FlowResult {
  Tensor y;
  std::vector<double> logdet;  // one per row
};

FlowResult coupling_forward(const CouplingBlock& block, const Tensor& x);
FlowResult coupling_inverse(const CouplingBlock& block, const Tensor& y);
FlowResult flow_forward(const FlowStack& stack, const Tensor& x);
FlowResult flow_inverse(const FlowStack& stack, const Tensor& y);

}  // namespace vfg
