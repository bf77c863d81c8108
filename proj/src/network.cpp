#include "odn/network.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <unordered_map>

#include "odn/error.hpp"

namespace odn {

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::kResNet18: return "resnet18";
    case Arch::kResNet34: return "resnet34";
    case Arch::kResNet50: return "resnet50";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  if (name == "resnet18") return Arch::kResNet18;
  if (name == "resnet34") return Arch::kResNet34;
  if (name == "resnet50") return Arch::kResNet50;
  fail(ErrorCode::kInvalidArgument, "unknown architecture '" + std::string(name) + "'");
}

int scale_channels(int base, double width_multiplier) {
  return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

int NetworkSpec::max_depth() const { return arch == Arch::kResNet18 ? 8 : 16; }

int NetworkSpec::stem_channels() const { return scale_channels(64, width_multiplier); }

void NetworkSpec::validate() const {
  if (in_channels < 1) fail(ErrorCode::kInvalidArgument, "in_channels must be positive");
  if (num_classes < 2) fail(ErrorCode::kInvalidArgument, "num_classes must be at least 2");
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier)) {
    fail(ErrorCode::kInvalidArgument, "width_multiplier must be positive");
  }
}

std::vector<BlockSpec> NetworkSpec::blocks() const {
  const int stages[4] = {arch == Arch::kResNet18 ? 2 : 3, arch == Arch::kResNet18 ? 2 : 4,
                         arch == Arch::kResNet18 ? 2 : 6, arch == Arch::kResNet18 ? 2 : 3};
  const int widths[4] = {64, 128, 256, 512};
  const bool bottleneck = arch == Arch::kResNet50;
  std::vector<BlockSpec> plan;
  int channels = stem_channels();
  for (int s = 0; s < 4; ++s) {
    const int mid = scale_channels(widths[s], width_multiplier);
    const int out = bottleneck ? 4 * mid : mid;
    for (int b = 0; b < stages[s]; ++b) {
      BlockSpec block;
      block.kind = bottleneck ? BlockKind::kBottleneck : BlockKind::kBasic;
      block.in_channels = channels;
      block.mid_channels = mid;
      block.out_channels = out;
      block.stride = (b == 0 && s > 0) ? 2 : 1;
      block.has_projection = block.stride != 1 || block.in_channels != block.out_channels;
      plan.push_back(block);
      channels = out;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// StateDict

void StateDict::add(std::string name, Tensor tensor, bool trainable) {
  entries_.push_back({std::move(name), std::move(tensor), trainable});
}

const NamedTensor* StateDict::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::int64_t StateDict::value_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::uint64_t StateDict::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (auto d : e.tensor.shape()) mix(&d, sizeof(d));
    const auto data = e.tensor.data();
    mix(data.data(), data.size_bytes());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

using Rng = std::mt19937_64;

Tensor kaiming_conv(int out, int in, int k, Rng& rng) {
  const float std_dev = std::sqrt(2.0f / static_cast<float>(out * k * k));
  std::normal_distribution<float> dist(0.0f, std_dev);
  std::vector<float> w(static_cast<std::size_t>(out) * in * k * k);
  for (auto& v : w) v = dist(rng);
  return Tensor::from({out, in, k, k}, std::move(w));
}

ConvBn make_conv_bn(const std::string& prefix, const std::string& bn_prefix, int in, int out, int k, int stride,
                    Rng& rng) {
  ConvBn layer;
  layer.weight = Parameter(prefix + ".weight", kaiming_conv(out, in, k, rng));
  layer.gamma = Parameter(bn_prefix + ".weight", Tensor::full({out}, 1.0f));
  layer.beta = Parameter(bn_prefix + ".bias", Tensor::zeros({out}));
  layer.running_mean = Tensor::zeros({out});
  layer.running_var = Tensor::full({out}, 1.0f);
  layer.stride = stride;
  layer.padding = k / 2;
  return layer;
}

std::string block_prefix(int depth) { return "blocks." + std::to_string(depth); }

ResidualBlock make_block(int depth, const BlockSpec& spec, Rng& rng) {
  const auto p = block_prefix(depth);
  ResidualBlock block;
  block.spec = spec;
  if (spec.kind == BlockKind::kBasic) {
    block.layers.push_back(make_conv_bn(p + ".conv1", p + ".bn1", spec.in_channels, spec.out_channels, 3,
                                        spec.stride, rng));
    block.layers.push_back(make_conv_bn(p + ".conv2", p + ".bn2", spec.out_channels, spec.out_channels, 3, 1, rng));
  } else {
    block.layers.push_back(make_conv_bn(p + ".conv1", p + ".bn1", spec.in_channels, spec.mid_channels, 1, 1, rng));
    block.layers.push_back(
        make_conv_bn(p + ".conv2", p + ".bn2", spec.mid_channels, spec.mid_channels, 3, spec.stride, rng));
    block.layers.push_back(make_conv_bn(p + ".conv3", p + ".bn3", spec.mid_channels, spec.out_channels, 1, 1, rng));
  }
  if (spec.has_projection) {
    block.projection = make_conv_bn(p + ".shortcut.conv", p + ".shortcut.bn", spec.in_channels, spec.out_channels, 1,
                                    spec.stride, rng);
  }
  return block;
}

Head make_head(int depth, int features, int classes, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(features));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(static_cast<std::size_t>(features) * classes);
  for (auto& v : w) v = dist(rng);
  const auto p = "heads." + std::to_string(depth);
  Head head;
  head.weight = Parameter(p + ".weight", Tensor::from({classes, features}, std::move(w)));
  head.bias = Parameter(p + ".bias", Tensor::zeros({classes}));
  return head;
}

ConvBn make_stem(const NetworkSpec& spec, Rng& rng) {
  return make_conv_bn("stem.conv", "stem.bn", spec.in_channels, spec.stem_channels(), 3, 1, rng);
}

Parameter clone_param(const Parameter& p) {
  Parameter copy(p.name, p.value.clone());
  return copy;
}

void collect(ConvBn& layer, std::vector<Parameter*>& out) {
  out.push_back(&layer.weight);
  out.push_back(&layer.gamma);
  out.push_back(&layer.beta);
}

void collect(ResidualBlock& block, std::vector<Parameter*>& out) {
  for (auto& l : block.layers) collect(l, out);
  if (block.projection) collect(*block.projection, out);
}

void collect(Head& head, std::vector<Parameter*>& out) {
  out.push_back(&head.weight);
  out.push_back(&head.bias);
}

std::string buffer_prefix(const Parameter& gamma) {
  // "<bn>.weight" -> "<bn>"
  return gamma.name.substr(0, gamma.name.size() - std::strlen(".weight"));
}

void append_state(const ConvBn& layer, StateDict& state) {
  state.add(layer.weight.name, layer.weight.value.clone(), true);
  state.add(layer.gamma.name, layer.gamma.value.clone(), true);
  state.add(layer.beta.name, layer.beta.value.clone(), true);
  const auto bn = buffer_prefix(layer.gamma);
  state.add(bn + ".running_mean", layer.running_mean.clone(), false);
  state.add(bn + ".running_var", layer.running_var.clone(), false);
}

void append_state(const ResidualBlock& block, StateDict& state) {
  for (const auto& l : block.layers) append_state(l, state);
  if (block.projection) append_state(*block.projection, state);
}

void append_state(const Head& head, StateDict& state) {
  state.add(head.weight.name, head.weight.value.clone(), true);
  state.add(head.bias.name, head.bias.value.clone(), true);
}

// Name -> destination storage, for loading.
using Slots = std::unordered_map<std::string, Tensor>;

void add_slots(ConvBn& layer, Slots& slots) {
  slots.emplace(layer.weight.name, layer.weight.value);
  slots.emplace(layer.gamma.name, layer.gamma.value);
  slots.emplace(layer.beta.name, layer.beta.value);
  const auto bn = buffer_prefix(layer.gamma);
  slots.emplace(bn + ".running_mean", layer.running_mean);
  slots.emplace(bn + ".running_var", layer.running_var);
}

void add_slots(ResidualBlock& block, Slots& slots) {
  for (auto& l : block.layers) add_slots(l, slots);
  if (block.projection) add_slots(*block.projection, slots);
}

void add_slots(Head& head, Slots& slots) {
  slots.emplace(head.weight.name, head.weight.value);
  slots.emplace(head.bias.name, head.bias.value);
}

void load_into(Slots& slots, const StateDict& state) {
  for (const auto& e : state.entries()) {
    auto it = slots.find(e.name);
    if (it == slots.end()) fail(ErrorCode::kInvalidArgument, "state entry '" + e.name + "' has no matching tensor");
    if (it->second.shape() != e.tensor.shape()) {
      fail(ErrorCode::kShapeMismatch, "state entry '" + e.name + "' has shape " + shape_to_string(e.tensor.shape()) +
                                          ", expected " + shape_to_string(it->second.shape()));
    }
    const auto src = e.tensor.data();
    auto dst = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

Tensor run_prefix(ConvBn& stem, std::span<ResidualBlock> blocks, const Tensor& x, Mode mode,
                  const BlockObserver* observer) {
  Tensor h = relu(stem.forward(x, mode));
  int depth = 0;
  for (auto& block : blocks) {
    h = block.forward(h, mode);
    ++depth;
    if (observer) (*observer)(depth, h);
  }
  return h;
}

}  // namespace

Tensor ConvBn::forward(const Tensor& x, Mode mode) {
  return batch_norm(conv2d(x, weight.value, stride, padding), gamma.value, beta.value, running_mean, running_var,
                    mode);
}

ConvBn ConvBn::clone() const {
  ConvBn copy;
  copy.weight = clone_param(weight);
  copy.gamma = clone_param(gamma);
  copy.beta = clone_param(beta);
  copy.running_mean = running_mean.clone();
  copy.running_var = running_var.clone();
  copy.stride = stride;
  copy.padding = padding;
  return copy;
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h, mode);
    if (i + 1 < layers.size()) h = relu(h);
  }
  const Tensor shortcut = projection ? projection->forward(x, mode) : x;
  return relu(add(h, shortcut));
}

ResidualBlock ResidualBlock::clone() const {
  ResidualBlock copy;
  copy.spec = spec;
  for (const auto& l : layers) copy.layers.push_back(l.clone());
  if (projection) copy.projection = projection->clone();
  return copy;
}

Tensor Head::forward(const Tensor& features) {
  return linear(global_avg_pool(features), weight.value, bias.value);
}

Head Head::clone() const {
  Head copy;
  copy.weight = clone_param(weight);
  copy.bias = clone_param(bias);
  return copy;
}

// ---------------------------------------------------------------------------
// DepthPartitionedNetwork

DepthPartitionedNetwork::DepthPartitionedNetwork(NetworkSpec spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  stem_ = make_stem(spec_, rng);
  const auto plan = spec_.blocks();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    blocks_.push_back(make_block(static_cast<int>(i) + 1, plan[i], rng));
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    heads_.push_back(make_head(static_cast<int>(i) + 1, plan[i].out_channels, spec_.num_classes, rng));
  }
  active_depth_ = max_depth();
}

void DepthPartitionedNetwork::check_depth(int depth) const {
  if (depth < 1 || depth > max_depth()) {
    fail(ErrorCode::kOutOfRange,
         "depth " + std::to_string(depth) + " outside [1, " + std::to_string(max_depth()) + "]");
  }
}

void DepthPartitionedNetwork::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    fail(ErrorCode::kShapeMismatch, "network input must be [N," + std::to_string(spec_.in_channels) +
                                        ",H,W], got " + shape_to_string(x.shape()));
  }
  if (x.dim(2) < 8 || x.dim(3) < 8) {
    fail(ErrorCode::kShapeMismatch, "network input spatial size must be at least 8x8, got " +
                                        shape_to_string(x.shape()));
  }
}

void DepthPartitionedNetwork::activate_depth(int depth) {
  check_depth(depth);
  active_depth_ = depth;
}

std::vector<Parameter*> DepthPartitionedNetwork::trainable_parameters() { return parameters_at_depth(active_depth_); }

std::vector<Parameter*> DepthPartitionedNetwork::parameters_at_depth(int depth) {
  check_depth(depth);
  std::vector<Parameter*> out;
  collect(stem_, out);
  for (int i = 0; i < depth; ++i) collect(blocks_[static_cast<std::size_t>(i)], out);
  collect(heads_[static_cast<std::size_t>(depth - 1)], out);
  return out;
}

std::vector<Parameter*> DepthPartitionedNetwork::all_parameters() {
  std::vector<Parameter*> out;
  collect(stem_, out);
  for (auto& b : blocks_) collect(b, out);
  for (auto& h : heads_) collect(h, out);
  return out;
}

Tensor DepthPartitionedNetwork::forward_at_depth(const Tensor& x, int depth, Mode mode,
                                                 const BlockObserver* observer) {
  check_depth(depth);
  check_input(x);
  const Tensor features =
      run_prefix(stem_, std::span(blocks_).first(static_cast<std::size_t>(depth)), x, mode, observer);
  return heads_[static_cast<std::size_t>(depth - 1)].forward(features);
}

std::vector<Tensor> DepthPartitionedNetwork::forward_all_heads(const Tensor& x, Mode mode) {
  check_input(x);
  std::vector<Tensor> logits;
  logits.reserve(heads_.size());
  BlockObserver collect_heads = [&](int depth, const Tensor& h) {
    logits.push_back(heads_[static_cast<std::size_t>(depth - 1)].forward(h));
  };
  run_prefix(stem_, blocks_, x, mode, &collect_heads);
  return logits;
}

StateDict DepthPartitionedNetwork::state_dict() const {
  StateDict state;
  append_state(stem_, state);
  for (const auto& b : blocks_) append_state(b, state);
  for (const auto& h : heads_) append_state(h, state);
  return state;
}

void DepthPartitionedNetwork::load_state_dict(const StateDict& state) {
  Slots slots;
  add_slots(stem_, slots);
  for (auto& b : blocks_) add_slots(b, slots);
  for (auto& h : heads_) add_slots(h, slots);
  load_into(slots, state);
}

void DepthPartitionedNetwork::reinitialize_level(int depth, std::uint64_t seed) {
  check_depth(depth);
  const auto i = static_cast<std::size_t>(depth - 1);
  Rng rng(seed);
  // Write into the existing storage so outstanding aliases stay valid.
  StateDict fresh;
  append_state(make_block(depth, blocks_[i].spec, rng), fresh);
  append_state(make_head(depth, blocks_[i].spec.out_channels, spec_.num_classes, rng), fresh);
  load_state_dict(fresh);
}

DepthPartitionedNetwork build_network(Arch arch, int in_channels, int num_classes, double width_multiplier,
                                      std::uint64_t seed) {
  NetworkSpec spec;
  spec.arch = arch;
  spec.in_channels = in_channels;
  spec.num_classes = num_classes;
  spec.width_multiplier = width_multiplier;
  return DepthPartitionedNetwork(spec, seed);
}

// ---------------------------------------------------------------------------
// ExtractedNetwork

ExtractedNetwork::ExtractedNetwork(NetworkSpec spec, int depth, ConvBn stem, std::vector<ResidualBlock> blocks,
                                   Head head)
    : spec_(spec), depth_(depth), stem_(std::move(stem)), blocks_(std::move(blocks)), head_(std::move(head)) {}

ExtractedNetwork::ExtractedNetwork(NetworkSpec spec, int depth) : spec_(spec), depth_(depth) {
  spec_.validate();
  if (depth < 1 || depth > spec_.max_depth()) {
    fail(ErrorCode::kOutOfRange, "extracted depth " + std::to_string(depth) + " outside [1, " +
                                     std::to_string(spec_.max_depth()) + "]");
  }
  Rng rng(0);
  stem_ = make_stem(spec_, rng);
  const auto plan = spec_.blocks();
  for (int i = 0; i < depth; ++i) blocks_.push_back(make_block(i + 1, plan[static_cast<std::size_t>(i)], rng));
  head_ = make_head(depth, plan[static_cast<std::size_t>(depth - 1)].out_channels, spec_.num_classes, rng);
}

Tensor ExtractedNetwork::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    fail(ErrorCode::kShapeMismatch, "network input must be [N," + std::to_string(spec_.in_channels) +
                                        ",H,W], got " + shape_to_string(x.shape()));
  }
  return head_.forward(run_prefix(stem_, blocks_, x, mode, nullptr));
}

std::vector<Parameter*> ExtractedNetwork::parameters() {
  std::vector<Parameter*> out;
  collect(stem_, out);
  for (auto& b : blocks_) collect(b, out);
  collect(head_, out);
  return out;
}

StateDict ExtractedNetwork::state_dict() const {
  StateDict state;
  append_state(stem_, state);
  for (const auto& b : blocks_) append_state(b, state);
  append_state(head_, state);
  return state;
}

void ExtractedNetwork::load_state_dict(const StateDict& state) {
  Slots slots;
  add_slots(stem_, slots);
  for (auto& b : blocks_) add_slots(b, slots);
  add_slots(head_, slots);
  load_into(slots, state);
}

ExtractedNetwork extract_odn(const DepthPartitionedNetwork& net, int depth) {
  net.check_depth(depth);
  std::vector<ResidualBlock> blocks;
  for (int i = 0; i < depth; ++i) blocks.push_back(net.blocks_[static_cast<std::size_t>(i)].clone());
  return ExtractedNetwork(net.spec_, depth, net.stem_.clone(), std::move(blocks),
                          net.heads_[static_cast<std::size_t>(depth - 1)].clone());
}

}  // namespace odn
