#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "odn/network.hpp"

namespace odn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint8_t { kFull = 0, kExtracted = 1 };

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  NetworkSpec spec;
  int depth_max = 0;
  int depth = 0;  // active depth (full) or extracted depth
  CheckpointKind kind = CheckpointKind::kFull;
  std::string metadata;  // free-form JSON
};

/// On-disk layout, all integers little-endian:
///
///   "ODN1" | u32 version | u8 arch | u32 depth_max | u32 depth | u32 classes
///   | u32 in_channels | f64 width_multiplier | u8 kind | u32 len + metadata
///   | u64 tensor_count | records...
///
/// record: u32 name_len | name | u8 dtype (0 = f32) | u8 trainable | u32 rank
///         | i64 dims[rank] | f32 payload[prod(dims)]
struct Checkpoint {
  CheckpointHeader header;
  StateDict state;

  /// Bytes of float payload across all records.
  std::int64_t payload_bytes() const { return 4 * state.value_count(); }
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Validates magic, version, duplicate names and per-record lengths.
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const DepthPartitionedNetwork& net, std::string metadata = "{}");
Checkpoint make_checkpoint(const ExtractedNetwork& net, std::string metadata = "{}");

/// Rebuilds the network recorded in a kFull checkpoint, with its active
/// depth restored. Every tensor of the network must be present.
DepthPartitionedNetwork restore_network(const Checkpoint& checkpoint);
/// Rebuilds an extracted network. A kFull checkpoint is extracted at
/// `depth` (0 = its recorded depth).
ExtractedNetwork restore_extracted(const Checkpoint& checkpoint, int depth = 0);

}  // namespace odn
