#include "odn/accounting.hpp"

#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "odn/error.hpp"

namespace odn {

namespace {

struct Spatial {
  std::int64_t h;
  std::int64_t w;
};

Spatial conv_out(Spatial in, int kernel, int stride) {
  const int pad = kernel / 2;
  return {(in.h + 2 * pad - kernel) / stride + 1, (in.w + 2 * pad - kernel) / stride + 1};
}

void add_conv_bn(std::vector<TensorCount>& layout, const std::string& conv, const std::string& bn, int in, int out,
                 int kernel) {
  layout.push_back({conv + ".weight", static_cast<std::int64_t>(in) * out * kernel * kernel, true});
  layout.push_back({bn + ".weight", out, true});
  layout.push_back({bn + ".bias", out, true});
  layout.push_back({bn + ".running_mean", out, false});
  layout.push_back({bn + ".running_var", out, false});
}

// FLOPs of conv (2 per MAC) + its batch norm (2 per output element).
std::int64_t conv_bn_flops(int in, int out, int kernel, Spatial out_hw) {
  const auto elems = static_cast<std::int64_t>(out) * out_hw.h * out_hw.w;
  return 2LL * kernel * kernel * in * elems + 2 * elems;
}

void check_depth(const NetworkSpec& spec, int depth) {
  if (depth < 1 || depth > spec.max_depth()) {
    fail(ErrorCode::kOutOfRange, "depth " + std::to_string(depth) + " outside [1, " +
                                     std::to_string(spec.max_depth()) + "]");
  }
}

}  // namespace

std::vector<TensorCount> analytic_layout(const NetworkSpec& spec, int depth) {
  spec.validate();
  check_depth(spec, depth);
  std::vector<TensorCount> layout;
  add_conv_bn(layout, "stem.conv", "stem.bn", spec.in_channels, spec.stem_channels(), 3);
  const auto plan = spec.blocks();
  for (int d = 1; d <= depth; ++d) {
    const auto& b = plan[static_cast<std::size_t>(d - 1)];
    const auto p = "blocks." + std::to_string(d);
    if (b.kind == BlockKind::kBasic) {
      add_conv_bn(layout, p + ".conv1", p + ".bn1", b.in_channels, b.out_channels, 3);
      add_conv_bn(layout, p + ".conv2", p + ".bn2", b.out_channels, b.out_channels, 3);
    } else {
      add_conv_bn(layout, p + ".conv1", p + ".bn1", b.in_channels, b.mid_channels, 1);
      add_conv_bn(layout, p + ".conv2", p + ".bn2", b.mid_channels, b.mid_channels, 3);
      add_conv_bn(layout, p + ".conv3", p + ".bn3", b.mid_channels, b.out_channels, 1);
    }
    if (b.has_projection) {
      add_conv_bn(layout, p + ".shortcut.conv", p + ".shortcut.bn", b.in_channels, b.out_channels, 1);
    }
  }
  const auto features = plan[static_cast<std::size_t>(depth - 1)].out_channels;
  const auto h = "heads." + std::to_string(depth);
  layout.push_back({h + ".weight", static_cast<std::int64_t>(features) * spec.num_classes, true});
  layout.push_back({h + ".bias", spec.num_classes, true});
  return layout;
}

ModelStats stats_at_depth(const NetworkSpec& spec, int depth, const InputShape& input) {
  ModelStats stats;
  stats.spec = spec;
  stats.depth = depth;
  stats.input_channels = input.channels;
  stats.input_height = input.height;
  stats.input_width = input.width;
  if (input.channels != spec.in_channels) {
    fail(ErrorCode::kShapeMismatch, "input shape has " + std::to_string(input.channels) +
                                        " channels but the network expects " + std::to_string(spec.in_channels));
  }
  for (const auto& t : analytic_layout(spec, depth)) {
    (t.trainable ? stats.trainable_params : stats.buffer_values) += t.values;
  }
  stats.size_bytes = 4 * (stats.trainable_params + stats.buffer_values);

  // Stem: conv + bn + relu.
  Spatial hw = conv_out({input.height, input.width}, 3, 1);
  const int stem = spec.stem_channels();
  std::int64_t flops = conv_bn_flops(spec.in_channels, stem, 3, hw) + 2LL * stem * hw.h * hw.w;

  const auto plan = spec.blocks();
  for (int d = 1; d <= depth; ++d) {
    const auto& b = plan[static_cast<std::size_t>(d - 1)];
    Spatial out_hw{};
    if (b.kind == BlockKind::kBasic) {
      const auto s1 = conv_out(hw, 3, b.stride);
      flops += conv_bn_flops(b.in_channels, b.out_channels, 3, s1) + 2LL * b.out_channels * s1.h * s1.w;
      out_hw = conv_out(s1, 3, 1);
      flops += conv_bn_flops(b.out_channels, b.out_channels, 3, out_hw);
    } else {
      const auto s1 = conv_out(hw, 1, 1);
      flops += conv_bn_flops(b.in_channels, b.mid_channels, 1, s1) + 2LL * b.mid_channels * s1.h * s1.w;
      const auto s2 = conv_out(s1, 3, b.stride);
      flops += conv_bn_flops(b.mid_channels, b.mid_channels, 3, s2) + 2LL * b.mid_channels * s2.h * s2.w;
      out_hw = conv_out(s2, 1, 1);
      flops += conv_bn_flops(b.mid_channels, b.out_channels, 1, out_hw);
    }
    if (b.has_projection) flops += conv_bn_flops(b.in_channels, b.out_channels, 1, conv_out(hw, 1, b.stride));
    // Residual add (1 per element) and the closing relu (2 per element).
    flops += 3LL * b.out_channels * out_hw.h * out_hw.w;
    hw = out_hw;
  }
  const auto features = plan[static_cast<std::size_t>(depth - 1)].out_channels;
  flops += 2LL * features * hw.h * hw.w;              // global average pool
  flops += 2LL * features * spec.num_classes;         // linear
  stats.flops = flops;
  return stats;
}

double reduction_percent(const ModelStats& full, const ModelStats& reduced) {
  if (full.spec.arch != reduced.spec.arch) {
    fail(ErrorCode::kInvalidArgument, "reduction_percent requires stats of the same architecture");
  }
  return 100.0 * (1.0 - static_cast<double>(reduced.size_bytes) / static_cast<double>(full.size_bytes));
}

VerificationReport verify_against_instantiated(const DepthPartitionedNetwork& net, int depth) {
  VerificationReport report;
  const auto layout = analytic_layout(net.spec(), depth);
  const auto state = extract_odn(net, depth).state_dict();

  std::map<std::string, const TensorCount*> expected;
  for (const auto& t : layout) {
    expected.emplace(t.name, &t);
    (t.trainable ? report.analytic_params : report.analytic_buffers) += t.values;
  }
  for (const auto& e : state.entries()) {
    (e.trainable ? report.enumerated_params : report.enumerated_buffers) += e.tensor.numel();
    auto it = expected.find(e.name);
    if (it == expected.end() || it->second->values != e.tensor.numel() || it->second->trainable != e.trainable) {
      report.mismatches.push_back(e.name);
    }
    if (it != expected.end()) expected.erase(it);
  }
  for (const auto& [name, _] : expected) report.mismatches.push_back(name);
  report.passed = report.mismatches.empty() && report.analytic_params == report.enumerated_params &&
                  report.analytic_buffers == report.enumerated_buffers;
  return report;
}

StatsFormat parse_stats_format(const std::string& name) {
  if (name == "table") return StatsFormat::kTable;
  if (name == "csv") return StatsFormat::kCsv;
  if (name == "jsonl" || name == "json") return StatsFormat::kJsonLines;
  fail(ErrorCode::kInvalidArgument, "unknown stats format '" + name + "' (expected table, csv or jsonl)");
}

void render_stats(std::ostream& os, const std::vector<ModelStats>& rows, StatsFormat format,
                  const ModelStats* baseline) {
  auto input_label = [](const ModelStats& s) {
    return std::to_string(s.input_channels) + "x" + std::to_string(s.input_height) + "x" + std::to_string(s.input_width);
  };
  switch (format) {
    case StatsFormat::kTable: {
      os << std::left << std::setw(10) << "arch" << std::setw(7) << "width" << std::setw(8) << "depth"
         << std::right << std::setw(12) << "params(M)" << std::setw(12) << "buffers" << std::setw(12)
         << "size(MB)" << std::setw(12) << "FLOPs(M)";
      if (baseline) os << std::setw(14) << "reduction(%)";
      os << "  input\n";
      for (const auto& s : rows) {
        std::ostringstream depth;
        depth << s.depth << '/' << s.spec.max_depth();
        std::ostringstream width;
        width << s.spec.width_multiplier;
        os << std::left << std::setw(10) << arch_name(s.spec.arch) << std::setw(7) << width.str() << std::setw(8)
           << depth.str() << std::right << std::fixed << std::setprecision(2) << std::setw(12)
           << s.params_millions() << std::setw(12) << s.buffer_values << std::setw(12) << s.size_megabytes()
           << std::setw(12) << s.flops_millions();
        if (baseline) os << std::setw(14) << reduction_percent(*baseline, s);
        os << "  " << input_label(s) << '\n';
        os.unsetf(std::ios::fixed);
      }
      break;
    }
    case StatsFormat::kCsv: {
      os << "arch,width_multiplier,depth,depth_max,num_classes,input,trainable_params,buffer_values,size_bytes,flops";
      if (baseline) os << ",reduction_percent";
      os << '\n';
      for (const auto& s : rows) {
        os << arch_name(s.spec.arch) << ',' << s.spec.width_multiplier << ',' << s.depth << ','
           << s.spec.max_depth() << ',' << s.spec.num_classes << ',' << input_label(s) << ',' << s.trainable_params
           << ',' << s.buffer_values << ',' << s.size_bytes << ',' << s.flops;
        if (baseline) os << ',' << std::fixed << std::setprecision(4) << reduction_percent(*baseline, s);
        os.unsetf(std::ios::fixed);
        os << '\n';
      }
      break;
    }
    case StatsFormat::kJsonLines: {
      for (const auto& s : rows) {
        nlohmann::json j = {{"arch", arch_name(s.spec.arch)},
                            {"width_multiplier", s.spec.width_multiplier},
                            {"depth", s.depth},
                            {"depth_max", s.spec.max_depth()},
                            {"num_classes", s.spec.num_classes},
                            {"input", input_label(s)},
                            {"trainable_params", s.trainable_params},
                            {"buffer_values", s.buffer_values},
                            {"size_bytes", s.size_bytes},
                            {"flops", s.flops}};
        if (baseline) j["reduction_percent"] = reduction_percent(*baseline, s);
        os << j.dump() << '\n';
      }
      break;
    }
  }
}

}  // namespace odn
