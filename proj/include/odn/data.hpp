#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odn/tensor.hpp"

namespace odn {

/// Images [N,C,H,W] plus integer labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<std::int32_t> labels;
  int num_classes = 0;
  std::string name;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t channels() const { return images.dim(1); }
  std::int64_t height() const { return images.dim(2); }
  std::int64_t width() const { return images.dim(3); }
  void validate() const;
};

/// Reads an IDX image/label pair (MNIST family). Either file may be gzip
/// compressed. `num_classes` 0 means max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 int num_classes = 0);

/// Reads CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
/// (R, G, B planes of 32x32).
Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& batch_paths);

enum class Difficulty { kEasy, kHard };

/// Texture-classification toy problem. Each class owns a binary tile that is
/// repeated over the image with a random per-sample phase. Easy: 4x4 tiles
/// with disjoint (orthogonal) class supports, noise sigma 0.1. Hard: 8x8
/// tiles drawn on a shared support so classes overlap, noise sigma 0.8.
struct SynthSpec {
  int num_classes = 4;
  int samples_per_class = 50;
  int image_size = 32;
  int channels = 3;
  Difficulty difficulty = Difficulty::kEasy;
  std::uint64_t seed = 0;
};

Dataset synthesize(const SynthSpec& spec);

Difficulty parse_difficulty(const std::string& name);

struct SplitPair {
  Dataset train;
  Dataset val;
  double val_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> train_indices;
  std::vector<std::int64_t> val_indices;
};

/// Seeded permutation partition; val gets round(N * val_fraction) samples.
SplitPair split(const Dataset& dataset, double val_fraction, std::uint64_t seed);

Dataset subset(const Dataset& dataset, std::span<const std::int64_t> indices);
/// First `count` samples of a seeded permutation.
Dataset random_subset(const Dataset& dataset, std::int64_t count, std::uint64_t seed);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std;
};

ChannelStats channel_statistics(const Dataset& dataset);
Dataset normalize(const Dataset& dataset, const ChannelStats& stats);
Dataset denormalize(const Dataset& dataset, const ChannelStats& stats);

/// Zero-pads spatially (centered) to target_hw x target_hw and replicates a
/// single channel to `target_channels`.
Dataset pad_and_expand(const Dataset& dataset, std::int64_t target_hw, std::int64_t target_channels);

struct Batch {
  Tensor x;
  std::vector<std::int32_t> y;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Permutation of [0, n) that is a pure function of (seed, epoch).
std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t seed, std::uint64_t epoch);

/// ceil(N / batch_size) mini-batches of one epoch, in permutation order.
/// With shuffle off, samples keep dataset order.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, std::int64_t batch_size, std::uint64_t shuffle_seed, std::uint64_t epoch,
              bool shuffle = true);

  std::size_t size() const { return count_; }
  Batch operator[](std::size_t index) const;

 private:
  const Dataset* dataset_;
  std::int64_t batch_size_;
  std::vector<std::int64_t> order_;
  std::size_t count_;
};

std::vector<Batch> batches(const Dataset& dataset, std::int64_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch);

/// Random 4-pixel-padded crop and horizontal flip, per sample, seeded.
void augment_crop_flip(Batch& batch, std::uint64_t seed);

}  // namespace odn
