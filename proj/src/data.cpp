#include "odn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include "odn/error.hpp"

namespace odn {

namespace {

std::size_t at(std::int64_t i) { return static_cast<std::size_t>(i); }

// Whole-file read through zlib, which passes plain files through unchanged.
std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file(gzopen(path.c_str(), "rb"), gzclose);
  if (!file) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes;
  std::array<unsigned char, 1 << 16> chunk{};
  for (;;) {
    const int n = gzread(file.get(), chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) fail(ErrorCode::kIo, "read error in '" + path.string() + "'");
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> bytes;
  std::size_t payload_offset = 0;
};

IdxFile read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  IdxFile idx;
  idx.bytes = read_all(path);
  if (idx.bytes.size() < 4) fail(ErrorCode::kTruncated, "IDX file '" + path.string() + "' is shorter than its magic");
  const auto magic = read_be32(idx.bytes, 0);
  if (magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x (expected 0x%08x)", magic, expected_magic);
    fail(ErrorCode::kBadMagic, "IDX file '" + path.string() + "' has magic " + buf);
  }
  const std::size_t rank = expected_magic & 0xffu;
  if (idx.bytes.size() < 4 + 4 * rank) fail(ErrorCode::kTruncated, "IDX header of '" + path.string() + "' is truncated");
  std::size_t expected = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    idx.dims.push_back(read_be32(idx.bytes, 4 + 4 * i));
    expected *= idx.dims.back();
  }
  idx.payload_offset = 4 + 4 * rank;
  if (idx.bytes.size() - idx.payload_offset < expected) {
    fail(ErrorCode::kTruncated, "IDX file '" + path.string() + "' holds " +
                                    std::to_string(idx.bytes.size() - idx.payload_offset) + " payload bytes, expected " +
                                    std::to_string(expected));
  }
  return idx;
}

Dataset finish(std::vector<float> pixels, Shape shape, std::vector<std::int32_t> labels, int num_classes,
               std::string name) {
  Dataset ds;
  ds.images = Tensor::from(std::move(shape), std::move(pixels));
  ds.labels = std::move(labels);
  if (num_classes <= 0) {
    num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  }
  ds.num_classes = num_classes;
  ds.name = std::move(name);
  ds.validate();
  return ds;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) fail(ErrorCode::kEmptyDataset, "dataset '" + name + "' is empty");
  if (!images.defined() || images.rank() != 4 || images.dim(0) != size()) {
    fail(ErrorCode::kShapeMismatch, "dataset '" + name + "' images do not match its " + std::to_string(size()) +
                                        " labels");
  }
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) {
      fail(ErrorCode::kOutOfRange, "dataset '" + name + "' has label " + std::to_string(l) + " outside [0, " +
                                       std::to_string(num_classes) + ")");
    }
  }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 int num_classes) {
  const auto images = read_idx(images_path, 0x00000803);
  const auto labels = read_idx(labels_path, 0x00000801);
  if (images.dims[0] != labels.dims[0]) {
    fail(ErrorCode::kCountMismatch, "IDX image count " + std::to_string(images.dims[0]) + " differs from label count " +
                                        std::to_string(labels.dims[0]));
  }
  const std::int64_t n = images.dims[0], rows = images.dims[1], cols = images.dims[2];
  std::vector<float> pixels(at(n * rows * cols));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<float>(images.bytes[images.payload_offset + i]) / 255.0f;
  }
  std::vector<std::int32_t> y(at(n));
  for (std::int64_t i = 0; i < n; ++i) y[at(i)] = labels.bytes[labels.payload_offset + at(i)];
  return finish(std::move(pixels), {n, 1, rows, cols}, std::move(y), num_classes, images_path.filename().string());
}

Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& batch_paths) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  if (batch_paths.empty()) fail(ErrorCode::kInvalidArgument, "no CIFAR-10 batch files given");
  std::vector<float> pixels;
  std::vector<std::int32_t> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = read_all(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      fail(ErrorCode::kTruncated, "CIFAR-10 batch '" + path.string() + "' has " + std::to_string(bytes.size()) +
                                      " bytes, not a positive multiple of 3073");
    }
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const auto* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) fail(ErrorCode::kOutOfRange, "CIFAR-10 label " + std::to_string(rec[0]) + " in '" + path.string() + "'");
      labels.push_back(rec[0]);
      for (std::size_t p = 0; p < kPixels; ++p) pixels.push_back(static_cast<float>(rec[1 + p]) / 255.0f);
    }
  }
  const auto n = static_cast<std::int64_t>(labels.size());
  return finish(std::move(pixels), {n, 3, 32, 32}, std::move(labels), 10, "cifar10");
}

Difficulty parse_difficulty(const std::string& name) {
  if (name == "easy") return Difficulty::kEasy;
  if (name == "hard") return Difficulty::kHard;
  fail(ErrorCode::kInvalidArgument, "unknown synthetic difficulty '" + name + "' (expected easy or hard)");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Dataset synthesize(const SynthSpec& spec) {
  if (spec.num_classes < 2 || spec.samples_per_class < 1 || spec.image_size < 8 || spec.channels < 1) {
    fail(ErrorCode::kInvalidArgument, "invalid synthetic spec");
  }
  const bool easy = spec.difficulty == Difficulty::kEasy;
  const int tile = easy ? 4 : 8;
  const float sigma = easy ? 0.1f : 0.8f;
  const int cells = spec.channels * tile * tile;
  std::mt19937_64 rng(mix_seed(spec.seed, easy ? 1 : 2));

  // Class tiles, laid out [class][channel][ty][tx].
  std::vector<std::vector<std::uint8_t>> tiles(static_cast<std::size_t>(spec.num_classes),
                                               std::vector<std::uint8_t>(static_cast<std::size_t>(cells), 0));
  auto shifted_equal = [&](const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (int dy = 0; dy < tile; ++dy)
      for (int dx = 0; dx < tile; ++dx) {
        bool same = true;
        for (int c = 0; c < spec.channels && same; ++c)
          for (int y = 0; y < tile && same; ++y)
            for (int x = 0; x < tile && same; ++x) {
              const auto ia = static_cast<std::size_t>((c * tile + y) * tile + x);
              const auto ib = static_cast<std::size_t>((c * tile + (y + dy) % tile) * tile + (x + dx) % tile);
              same = a[ia] == b[ib];
            }
        if (same) return true;
      }
    return false;
  };
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) fail(ErrorCode::kInvalidArgument, "cannot build distinguishable synthetic class tiles");
    for (auto& t : tiles) std::fill(t.begin(), t.end(), 0);
    if (easy) {
      if (cells < spec.num_classes) fail(ErrorCode::kInvalidArgument, "too many classes for the easy tile");
      std::vector<int> order(static_cast<std::size_t>(cells));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const int per_class = cells / spec.num_classes;
      for (int k = 0; k < spec.num_classes; ++k)
        for (int j = 0; j < per_class; ++j) tiles[static_cast<std::size_t>(k)][static_cast<std::size_t>(order[static_cast<std::size_t>(k * per_class + j)])] = 1;
    } else {
      std::bernoulli_distribution coin(0.5);
      for (auto& t : tiles)
        for (auto& v : t) v = coin(rng) ? 1 : 0;
    }
    bool distinct = true;
    for (std::size_t a = 0; a < tiles.size() && distinct; ++a)
      for (std::size_t b = a + 1; b < tiles.size() && distinct; ++b) distinct = !shifted_equal(tiles[a], tiles[b]);
    if (distinct) break;
  }

  const std::int64_t n = static_cast<std::int64_t>(spec.num_classes) * spec.samples_per_class;
  const std::int64_t hw = spec.image_size;
  std::vector<float> pixels(at(n * spec.channels * hw * hw));
  std::vector<std::int32_t> labels(at(n));
  std::normal_distribution<float> noise(0.0f, sigma);
  std::uniform_int_distribution<int> phase(0, tile - 1);
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    labels[at(i)] = label;
    const auto& t = tiles[static_cast<std::size_t>(label)];
    const int py = phase(rng), px = phase(rng);
    float* img = pixels.data() + i * spec.channels * hw * hw;
    for (int c = 0; c < spec.channels; ++c)
      for (std::int64_t y = 0; y < hw; ++y)
        for (std::int64_t x = 0; x < hw; ++x) {
          const auto cell = static_cast<std::size_t>((c * tile + (y + py) % tile) * tile + (x + px) % tile);
          img[(c * hw + y) * hw + x] = static_cast<float>(t[cell]) + noise(rng);
        }
  }
  return finish(std::move(pixels), {n, spec.channels, hw, hw}, std::move(labels), spec.num_classes,
                easy ? "synthetic-easy" : "synthetic-hard");
}

std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::int64_t> order(at(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Dataset subset(const Dataset& dataset, std::span<const std::int64_t> indices) {
  const auto sample = dataset.channels() * dataset.height() * dataset.width();
  std::vector<float> pixels(indices.size() * at(sample));
  std::vector<std::int32_t> labels(indices.size());
  const auto src = dataset.images.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    if (i < 0 || i >= dataset.size()) fail(ErrorCode::kOutOfRange, "subset index " + std::to_string(i) + " out of range");
    std::copy_n(src.begin() + i * sample, sample, pixels.begin() + static_cast<std::int64_t>(k) * sample);
    labels[k] = dataset.labels[at(i)];
  }
  return finish(std::move(pixels),
                {static_cast<std::int64_t>(indices.size()), dataset.channels(), dataset.height(), dataset.width()},
                std::move(labels), dataset.num_classes, dataset.name);
}

Dataset random_subset(const Dataset& dataset, std::int64_t count, std::uint64_t seed) {
  if (count < 1 || count > dataset.size()) {
    fail(ErrorCode::kInvalidArgument, "subset size " + std::to_string(count) + " outside [1, " +
                                          std::to_string(dataset.size()) + "]");
  }
  auto order = epoch_permutation(dataset.size(), seed, 0);
  order.resize(at(count));
  return subset(dataset, order);
}

SplitPair split(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));
  }
  const auto n = dataset.size();
  const auto n_val = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n_val < 1 || n_val >= n) fail(ErrorCode::kInvalidArgument, "split leaves an empty side");
  const auto order = epoch_permutation(n, mix_seed(seed, 0x5117), 0);
  SplitPair pair;
  pair.val_fraction = val_fraction;
  pair.seed = seed;
  pair.val_indices.assign(order.begin(), order.begin() + n_val);
  pair.train_indices.assign(order.begin() + n_val, order.end());
  pair.train = subset(dataset, pair.train_indices);
  pair.val = subset(dataset, pair.val_indices);
  return pair;
}

ChannelStats channel_statistics(const Dataset& dataset) {
  const auto c_count = dataset.channels();
  const auto spatial = dataset.height() * dataset.width();
  const auto x = dataset.images.data();
  ChannelStats stats;
  for (std::int64_t c = 0; c < c_count; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t n = 0; n < dataset.size(); ++n)
      for (std::int64_t s = 0; s < spatial; ++s) {
        const double v = x[at((n * c_count + c) * spatial + s)];
        sum += v;
        sq += v * v;
      }
    const double count = static_cast<double>(dataset.size() * spatial);
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    stats.mean.push_back(static_cast<float>(mean));
    stats.std.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return stats;
}

namespace {

Dataset map_channels(const Dataset& dataset, const ChannelStats& stats, bool forward) {
  const auto c_count = dataset.channels();
  if (static_cast<std::int64_t>(stats.mean.size()) != c_count || static_cast<std::int64_t>(stats.std.size()) != c_count) {
    fail(ErrorCode::kShapeMismatch, "normalization stats have " + std::to_string(stats.mean.size()) +
                                        " channels, dataset has " + std::to_string(c_count));
  }
  for (float s : stats.std) {
    if (!(s > 0.0f) || !std::isfinite(s)) fail(ErrorCode::kInvalidArgument, "normalization std must be positive");
  }
  Dataset out = dataset;
  out.images = dataset.images.clone();
  auto x = out.images.data();
  const auto spatial = dataset.height() * dataset.width();
  for (std::int64_t n = 0; n < dataset.size(); ++n)
    for (std::int64_t c = 0; c < c_count; ++c) {
      const float m = stats.mean[at(c)], s = stats.std[at(c)];
      float* p = x.data() + (n * c_count + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) p[i] = forward ? (p[i] - m) / s : p[i] * s + m;
    }
  return out;
}

}  // namespace

Dataset normalize(const Dataset& dataset, const ChannelStats& stats) { return map_channels(dataset, stats, true); }

Dataset denormalize(const Dataset& dataset, const ChannelStats& stats) { return map_channels(dataset, stats, false); }

Dataset pad_and_expand(const Dataset& dataset, std::int64_t target_hw, std::int64_t target_channels) {
  const auto c_in = dataset.channels(), h = dataset.height(), w = dataset.width();
  if (target_hw < h || target_hw < w) fail(ErrorCode::kInvalidArgument, "pad target smaller than the images");
  if (c_in != target_channels && c_in != 1) {
    fail(ErrorCode::kInvalidArgument, "can only expand single-channel images, got " + std::to_string(c_in) + " channels");
  }
  const auto top = (target_hw - h) / 2, left = (target_hw - w) / 2;
  std::vector<float> pixels(at(dataset.size() * target_channels * target_hw * target_hw), 0.0f);
  const auto src = dataset.images.data();
  for (std::int64_t n = 0; n < dataset.size(); ++n)
    for (std::int64_t c = 0; c < target_channels; ++c) {
      const auto c_src = c_in == 1 ? 0 : c;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          pixels[at(((n * target_channels + c) * target_hw + y + top) * target_hw + x + left)] =
              src[at(((n * c_in + c_src) * h + y) * w + x)];
        }
    }
  Dataset out;
  out.images = Tensor::from({dataset.size(), target_channels, target_hw, target_hw}, std::move(pixels));
  out.labels = dataset.labels;
  out.num_classes = dataset.num_classes;
  out.name = dataset.name;
  return out;
}

BatchStream::BatchStream(const Dataset& dataset, std::int64_t batch_size, std::uint64_t shuffle_seed,
                         std::uint64_t epoch, bool shuffle)
    : dataset_(&dataset), batch_size_(batch_size) {
  if (batch_size < 1) fail(ErrorCode::kInvalidArgument, "batch_size must be at least 1");
  if (dataset.size() < 1) fail(ErrorCode::kEmptyDataset, "cannot batch an empty dataset");
  if (shuffle) {
    order_ = epoch_permutation(dataset.size(), shuffle_seed, epoch);
  } else {
    order_.resize(at(dataset.size()));
    std::iota(order_.begin(), order_.end(), 0);
  }
  count_ = at((dataset.size() + batch_size - 1) / batch_size);
}

Batch BatchStream::operator[](std::size_t index) const {
  if (index >= count_) fail(ErrorCode::kOutOfRange, "batch index out of range");
  const auto begin = static_cast<std::int64_t>(index) * batch_size_;
  const auto end = std::min<std::int64_t>(begin + batch_size_, dataset_->size());
  const auto sample = dataset_->channels() * dataset_->height() * dataset_->width();
  std::vector<float> pixels(at((end - begin) * sample));
  Batch batch;
  batch.y.resize(at(end - begin));
  const auto src = dataset_->images.data();
  for (std::int64_t k = begin; k < end; ++k) {
    const auto i = order_[at(k)];
    std::copy_n(src.begin() + i * sample, sample, pixels.begin() + (k - begin) * sample);
    batch.y[at(k - begin)] = dataset_->labels[at(i)];
  }
  batch.x = Tensor::from({end - begin, dataset_->channels(), dataset_->height(), dataset_->width()},
                         std::move(pixels));
  return batch;
}

std::vector<Batch> batches(const Dataset& dataset, std::int64_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch) {
  BatchStream stream(dataset, batch_size, shuffle_seed, epoch);
  std::vector<Batch> out;
  out.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) out.push_back(stream[i]);
  return out;
}

void augment_crop_flip(Batch& batch, std::uint64_t seed) {
  constexpr std::int64_t kPad = 4;
  const auto n = batch.x.dim(0), c = batch.x.dim(1), h = batch.x.dim(2), w = batch.x.dim(3);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> offset(0, 2 * kPad);
  std::bernoulli_distribution flip(0.5);
  auto x = batch.x.data();
  std::vector<float> plane(at(h * w));
  for (std::int64_t s = 0; s < n; ++s) {
    const auto dy = offset(rng) - kPad, dx = offset(rng) - kPad;
    const bool mirror = flip(rng);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      float* p = x.data() + (s * c + ch) * h * w;
      std::copy_n(p, h * w, plane.begin());
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) {
          const auto sy = y + dy;
          const auto sx0 = mirror ? (w - 1 - xx) : xx;
          const auto sx = sx0 + dx;
          p[y * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? plane[at(sy * w + sx)] : 0.0f;
        }
    }
  }
}

}  // namespace odn
