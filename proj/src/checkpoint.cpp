#include "odn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "odn/error.hpp"

namespace odn {

namespace {

constexpr char kMagic[4] = {'O', 'D', 'N', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFF));
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n, const std::string& what) {
    if (remaining() < n) {
      fail(ErrorCode::kTruncated, "checkpoint truncated while reading " + what + " (need " + std::to_string(n) +
                                      " bytes, " + std::to_string(remaining()) + " left)");
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(const std::string& what) {
    using U = std::make_unsigned_t<T>;
    const auto s = take(sizeof(T), what);
    U u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
      u = static_cast<U>(u << (sizeof(T) > 1 ? 8 : 0)) | static_cast<U>(static_cast<unsigned char>(s[i]));
    }
    return static_cast<T>(u);
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint8_t arch_code(Arch arch) { return static_cast<std::uint8_t>(arch); }

Arch arch_from_code(std::uint8_t code) {
  if (code > static_cast<std::uint8_t>(Arch::kResNet50)) {
    fail(ErrorCode::kInvalidArgument, "checkpoint names unknown architecture code " + std::to_string(code));
  }
  return static_cast<Arch>(code);
}

// Every tensor of `expected` must be present in `state` and nothing else.
void check_complete(const StateDict& expected, const StateDict& state) {
  for (const auto& e : expected.entries()) {
    if (!state.find(e.name)) {
      fail(ErrorCode::kCountMismatch, "checkpoint holds " + std::to_string(state.size()) + " of " +
                                          std::to_string(expected.size()) + " tensors; missing '" + e.name + "'");
    }
  }
  if (expected.size() != state.size()) {
    fail(ErrorCode::kCountMismatch, "checkpoint holds " + std::to_string(state.size()) + " tensors, network expects " +
                                        std::to_string(expected.size()));
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  const auto& h = checkpoint.header;
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, h.version);
  put_le<std::uint8_t>(out, arch_code(h.spec.arch));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.depth_max));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.depth));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.spec.num_classes));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.spec.in_channels));
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(h.spec.width_multiplier));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(h.kind));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.metadata.size()));
  out += h.metadata;

  put_le<std::uint64_t>(out, checkpoint.state.size());
  for (const auto& e : checkpoint.state.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_le<std::uint8_t>(out, kDtypeF32);
    put_le<std::uint8_t>(out, e.trainable ? 1 : 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put_le<std::int64_t>(out, d);
    for (float v : e.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kBadMagic, "not an ODN checkpoint (bad magic)");
  }
  r.take(sizeof(kMagic), "magic");

  Checkpoint ck;
  auto& h = ck.header;
  h.version = r.get<std::uint32_t>("version");
  if (h.version != kCheckpointVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint format version " + std::to_string(h.version) +
                                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  h.spec.arch = arch_from_code(r.get<std::uint8_t>("arch"));
  h.depth_max = static_cast<int>(r.get<std::uint32_t>("depth_max"));
  h.depth = static_cast<int>(r.get<std::uint32_t>("depth"));
  h.spec.num_classes = static_cast<int>(r.get<std::uint32_t>("num_classes"));
  h.spec.in_channels = static_cast<int>(r.get<std::uint32_t>("in_channels"));
  h.spec.width_multiplier = std::bit_cast<double>(r.get<std::uint64_t>("width_multiplier"));
  const auto kind = r.get<std::uint8_t>("kind");
  if (kind > static_cast<std::uint8_t>(CheckpointKind::kExtracted)) {
    fail(ErrorCode::kInvalidArgument, "unknown checkpoint kind " + std::to_string(kind));
  }
  h.kind = static_cast<CheckpointKind>(kind);
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  h.metadata = std::string(r.take(meta_len, "metadata"));

  const auto count = r.get<std::uint64_t>("tensor count");
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto record = "tensor record " + std::to_string(i);
    const auto name_len = r.get<std::uint32_t>(record + " name length");
    std::string name(r.take(name_len, record + " name"));
    if (!seen.insert(name).second) fail(ErrorCode::kNameCollision, "duplicate tensor name '" + name + "'");
    const auto dtype = r.get<std::uint8_t>("dtype of '" + name + "'");
    if (dtype != kDtypeF32) {
      fail(ErrorCode::kInvalidArgument, "tensor '" + name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const bool trainable = r.get<std::uint8_t>("flags of '" + name + "'") != 0;
    const auto rank = r.get<std::uint32_t>("rank of '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::int64_t>("dims of '" + name + "'");
      if (d < 0) fail(ErrorCode::kInvalidArgument, "tensor '" + name + "' has a negative dimension");
    }
    const auto n = static_cast<std::size_t>(numel_of(shape));
    if (r.remaining() < 4 * n) {
      fail(ErrorCode::kLengthMismatch, "tensor '" + name + "' payload has " + std::to_string(r.remaining()) +
                                           " bytes, expected " + std::to_string(4 * n));
    }
    const auto payload = r.take(4 * n, "payload of '" + name + "'");
    std::vector<float> values(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t u = 0;
      for (int b = 3; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(payload[4 * k + static_cast<std::size_t>(b)]);
      values[k] = std::bit_cast<float>(u);
    }
    ck.state.add(std::move(name), Tensor::from(std::move(shape), std::move(values)), trainable);
  }
  if (r.remaining() != 0) {
    fail(ErrorCode::kLengthMismatch, std::to_string(r.remaining()) + " trailing bytes after the tensor table");
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_checkpoint(buffer.str());
}

Checkpoint make_checkpoint(const DepthPartitionedNetwork& net, std::string metadata) {
  Checkpoint ck;
  ck.header.spec = net.spec();
  ck.header.depth_max = net.max_depth();
  ck.header.depth = net.active_depth();
  ck.header.kind = CheckpointKind::kFull;
  ck.header.metadata = std::move(metadata);
  ck.state = net.state_dict();
  return ck;
}

Checkpoint make_checkpoint(const ExtractedNetwork& net, std::string metadata) {
  Checkpoint ck;
  ck.header.spec = net.spec();
  ck.header.depth_max = net.spec().max_depth();
  ck.header.depth = net.depth();
  ck.header.kind = CheckpointKind::kExtracted;
  ck.header.metadata = std::move(metadata);
  ck.state = net.state_dict();
  return ck;
}

DepthPartitionedNetwork restore_network(const Checkpoint& checkpoint) {
  const auto& h = checkpoint.header;
  if (h.kind != CheckpointKind::kFull) {
    fail(ErrorCode::kInvalidArgument, "checkpoint holds an extracted network, not a full depth-partitioned one");
  }
  h.spec.validate();
  if (h.depth_max != h.spec.max_depth()) {
    fail(ErrorCode::kCountMismatch, "checkpoint depth_max " + std::to_string(h.depth_max) + " disagrees with " +
                                        std::string(arch_name(h.spec.arch)));
  }
  DepthPartitionedNetwork net(h.spec, 0);
  check_complete(net.state_dict(), checkpoint.state);
  net.load_state_dict(checkpoint.state);
  net.activate_depth(h.depth);
  return net;
}

ExtractedNetwork restore_extracted(const Checkpoint& checkpoint, int depth) {
  const auto& h = checkpoint.header;
  if (h.kind == CheckpointKind::kFull) return extract_odn(restore_network(checkpoint), depth == 0 ? h.depth : depth);
  if (depth != 0 && depth != h.depth) {
    fail(ErrorCode::kInvalidArgument, "extracted checkpoint has depth " + std::to_string(h.depth) +
                                          ", cannot serve depth " + std::to_string(depth));
  }
  h.spec.validate();
  ExtractedNetwork net(h.spec, h.depth);
  check_complete(net.state_dict(), checkpoint.state);
  net.load_state_dict(checkpoint.state);
  return net;
}

}  // namespace odn
