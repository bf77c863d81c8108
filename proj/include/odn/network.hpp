#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "odn/ops.hpp"
#include "odn/optim.hpp"
#include "odn/tensor.hpp"

namespace odn {

enum class Arch { kResNet18, kResNet34, kResNet50 };

std::string_view arch_name(Arch arch);
Arch parse_arch(std::string_view name);

enum class BlockKind { kBasic, kBottleneck };

/// Shape of one residual block. Basic blocks hold two 3x3 convs; bottleneck
/// blocks hold 1x1 -> 3x3 -> 1x1 with `mid_channels` in the middle. Every
/// conv is followed by batch norm.
struct BlockSpec {
  BlockKind kind = BlockKind::kBasic;
  int in_channels = 0;
  int mid_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool has_projection = false;

  int conv_count() const { return kind == BlockKind::kBasic ? 2 : 3; }
};

/// Architecture identity: everything needed to rebuild a network's shapes.
struct NetworkSpec {
  Arch arch = Arch::kResNet18;
  int in_channels = 3;
  int num_classes = 10;
  double width_multiplier = 1.0;

  int max_depth() const;
  int stem_channels() const;
  /// Ordered block plan, one entry per depth level.
  std::vector<BlockSpec> blocks() const;
  void validate() const;
};

/// Channel count after applying the width multiplier.
int scale_channels(int base, double width_multiplier);

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = false;
};

/// Deep copy of a network's parameters and batch-norm buffers, in network
/// order. Optimizer state is not part of it.
class StateDict {
 public:
  void add(std::string name, Tensor tensor, bool trainable);
  const std::vector<NamedTensor>& entries() const { return entries_; }
  const NamedTensor* find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::int64_t value_count() const;
  /// FNV-1a over names, shapes and raw payload bytes.
  std::uint64_t hash() const;

 private:
  std::vector<NamedTensor> entries_;
};

struct ConvBn {
  Parameter weight;
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  int stride = 1;
  int padding = 0;

  Tensor forward(const Tensor& x, Mode mode);
  ConvBn clone() const;
};

struct ResidualBlock {
  BlockSpec spec;
  std::vector<ConvBn> layers;
  std::optional<ConvBn> projection;

  Tensor forward(const Tensor& x, Mode mode);
  ResidualBlock clone() const;
};

/// Per-depth classifier: global average pool then one linear layer.
struct Head {
  Parameter weight;
  Parameter bias;

  Tensor forward(const Tensor& features);
  Head clone() const;
};

using BlockObserver = std::function<void(int depth, const Tensor& activation)>;

class ExtractedNetwork;

/// Stem + D_max residual blocks + one head per depth level. Depth d routes
/// data through the stem, blocks 1..d and head d only.
class DepthPartitionedNetwork {
 public:
  DepthPartitionedNetwork(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  int max_depth() const { return static_cast<int>(blocks_.size()); }
  int active_depth() const { return active_depth_; }

  void activate_depth(int depth);

  /// Stem, blocks 1..active_depth and head active_depth.
  std::vector<Parameter*> trainable_parameters();
  /// Stem, blocks 1..depth and head `depth` (the deployment view).
  std::vector<Parameter*> parameters_at_depth(int depth);
  std::vector<Parameter*> all_parameters();

  Tensor forward_at_depth(const Tensor& x, int depth, Mode mode, const BlockObserver* observer = nullptr);
  /// One pass through all blocks, collecting every head's logits.
  std::vector<Tensor> forward_all_heads(const Tensor& x, Mode mode);

  StateDict state_dict() const;
  /// Restores every entry of `state` (deep copy). Throws if a name is
  /// unknown or a shape differs; entries absent from `state` are untouched.
  void load_state_dict(const StateDict& state);

  /// Fresh random initialization of block `depth` and head `depth`.
  void reinitialize_level(int depth, std::uint64_t seed);

  const ConvBn& stem() const { return stem_; }
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  const std::vector<Head>& heads() const { return heads_; }

  friend ExtractedNetwork extract_odn(const DepthPartitionedNetwork& net, int depth);

 private:
  void check_depth(int depth) const;
  void check_input(const Tensor& x) const;

  NetworkSpec spec_;
  ConvBn stem_;
  std::vector<ResidualBlock> blocks_;
  std::vector<Head> heads_;
  int active_depth_;
};

/// Standalone deployable prefix: stem, blocks 1..depth and head `depth`,
/// deep-copied from the parent network.
class ExtractedNetwork {
 public:
  ExtractedNetwork(NetworkSpec spec, int depth, ConvBn stem, std::vector<ResidualBlock> blocks, Head head);
  /// Freshly initialized extracted layout, for loading checkpoints into.
  ExtractedNetwork(NetworkSpec spec, int depth);

  const NetworkSpec& spec() const { return spec_; }
  int depth() const { return depth_; }

  Tensor forward(const Tensor& x, Mode mode);
  std::vector<Parameter*> parameters();
  StateDict state_dict() const;
  void load_state_dict(const StateDict& state);

 private:
  NetworkSpec spec_;
  int depth_;
  ConvBn stem_;
  std::vector<ResidualBlock> blocks_;
  Head head_;
};

DepthPartitionedNetwork build_network(Arch arch, int in_channels, int num_classes, double width_multiplier,
                                      std::uint64_t seed = 0);

ExtractedNetwork extract_odn(const DepthPartitionedNetwork& net, int depth);

}  // namespace odn
