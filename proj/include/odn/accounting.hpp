#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "odn/network.hpp"

namespace odn {

/// Deployment-view bookkeeping for one depth: stem, blocks 1..depth and
/// head `depth`. Sizes are float32 bytes over parameters and batch-norm
/// running buffers; FLOPs count 2 per multiply-accumulate.
struct ModelStats {
  NetworkSpec spec;
  int depth = 0;
  std::int64_t trainable_params = 0;
  std::int64_t buffer_values = 0;
  std::int64_t size_bytes = 0;
  std::int64_t flops = 0;
  std::int64_t input_channels = 0;
  std::int64_t input_height = 0;
  std::int64_t input_width = 0;

  double params_millions() const { return static_cast<double>(trainable_params) / 1e6; }
  /// Decimal megabytes (10^6 bytes).
  double size_megabytes() const { return static_cast<double>(size_bytes) / 1e6; }
  double flops_millions() const { return static_cast<double>(flops) / 1e6; }
};

struct InputShape {
  std::int64_t channels = 3;
  std::int64_t height = 32;
  std::int64_t width = 32;
};

/// Expected value count of one named tensor, derived from the architecture
/// plan alone.
struct TensorCount {
  std::string name;
  std::int64_t values = 0;
  bool trainable = false;
};

std::vector<TensorCount> analytic_layout(const NetworkSpec& spec, int depth);

ModelStats stats_at_depth(const NetworkSpec& spec, int depth, const InputShape& input);

/// 100 * (1 - reduced.size_bytes / full.size_bytes)
double reduction_percent(const ModelStats& full, const ModelStats& reduced);

struct VerificationReport {
  bool passed = false;
  std::int64_t analytic_params = 0;
  std::int64_t enumerated_params = 0;
  std::int64_t analytic_buffers = 0;
  std::int64_t enumerated_buffers = 0;
  std::vector<std::string> mismatches;  // offending tensor names
};

/// Compares the analytic layout at `depth` against the tensors actually held
/// by extract_odn(net, depth).
VerificationReport verify_against_instantiated(const DepthPartitionedNetwork& net, int depth);

enum class StatsFormat { kTable, kCsv, kJsonLines };

StatsFormat parse_stats_format(const std::string& name);

/// Renders rows; when `baseline` is given, a reduction column relative to it
/// is included.
void render_stats(std::ostream& os, const std::vector<ModelStats>& rows, StatsFormat format,
                  const ModelStats* baseline = nullptr);

}  // namespace odn
