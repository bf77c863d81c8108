#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "odn/accounting.hpp"
#include "odn/network.hpp"
#include "odn/search.hpp"

namespace odn {

/// Where samples come from. Paths are relative to data_root unless absolute.
struct DataConfig {
  std::string dataset = "synth-easy";  // synth-easy | synth-hard | mnist | idx | cifar10
  std::string data_root;               // empty: $ODN_DATA_ROOT, then "data"
  std::string train_images = "mnist-subset/train-images-idx3-ubyte.gz";
  std::string train_labels = "mnist-subset/train-labels-idx1-ubyte.gz";
  std::string test_images = "mnist-subset/t10k-images-idx3-ubyte.gz";
  std::string test_labels = "mnist-subset/t10k-labels-idx1-ubyte.gz";
  std::string cifar_dir = "cifar-10-batches-bin";

  int synth_classes = 4;
  int synth_samples_per_class = 50;
  int synth_test_samples_per_class = 25;
  int synth_image_size = 32;
  int synth_channels = 3;
  std::uint64_t synth_seed = 0;

  std::int64_t train_subset = 0;  // 0 keeps every training sample
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  bool normalize = true;
  std::int64_t pad_to = 0;           // 0 keeps the native size
  std::int64_t expand_channels = 0;  // 0 keeps the native channel count

  std::filesystem::path resolve(const std::string& relative) const;
};

struct RunConfig {
  DataConfig data;
  Arch arch = Arch::kResNet18;
  double width_multiplier = 1.0;
  int in_channels = 0;  // 0: taken from the data
  int num_classes = 0;  // 0: taken from the data
  SearchConfig search;
  bool finetune = true;
  int finetune_max_epochs = 0;  // 0: same as max_epochs_per_depth
  std::string output_dir = "runs/odn";
  std::vector<StatsFormat> report_formats{StatsFormat::kTable};
  bool record_wall_time = false;  // wall time in metrics.csv breaks byte-determinism
  int threads = 0;                // 0: OpenMP default
};

/// Flat `key = value` text, one per line; `#` starts a comment. Unknown or
/// repeated keys are errors (kConfig).
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its current value, in documented order. Parsing the
/// result reproduces `config` exactly.
std::string serialize_run_config(const RunConfig& config);

/// Key reference: name, default and description, one per line.
void describe_run_config_keys(std::ostream& os);

}  // namespace odn
