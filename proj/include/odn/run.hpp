#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "odn/accounting.hpp"
#include "odn/checkpoint.hpp"
#include "odn/data.hpp"
#include "odn/run_config.hpp"
#include "odn/search.hpp"

namespace odn {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages, which
/// otherwise cost a page fault per 4 KiB on every training step. Call once at
/// program start; a no-op outside glibc.
void prefer_heap_allocation();

/// Train/val split of the training source plus the held-out test set, all
/// normalized with statistics of the training split.
struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  ChannelStats stats;  // empty when normalization is off
};

/// Raw (unnormalized) training source and held-out set after subsetting,
/// padding and channel expansion.
std::pair<Dataset, Dataset> load_sources(const DataConfig& config);

PreparedData prepare_data(const RunConfig& config);

/// Held-out set normalized with `stats` (no normalization when empty).
Dataset load_test_data(const DataConfig& config, const ChannelStats& stats);

/// JSON stored in checkpoint headers: dataset name and normalization.
std::string checkpoint_metadata(const RunConfig& config, const ChannelStats& stats);
ChannelStats stats_from_metadata(const std::string& metadata);

NetworkSpec network_spec(const RunConfig& config, const Dataset& data);

struct RunSummary {
  SearchResult search;
  double search_val_accuracy = 0.0;    // best validation accuracy at D_opt during the search
  double finetune_val_accuracy = 0.0;  // equals search_val_accuracy when fine-tuning is off
  double test_accuracy = 0.0;          // extracted network on the held-out set
  ModelStats odn_stats;
  ModelStats full_stats;
  double reduction_percent = 0.0;
};

/// warm-up -> search -> fine-tune -> extract, writing into config.output_dir:
///   config.txt, metrics.csv, timing.csv, warmup.odn, depth_<d>_best.odn,
///   finetuned.odn, odn.odn, summary.json, stats.<format>
/// Artifacts written before a failure are kept.
RunSummary run_search(const RunConfig& config, std::ostream* log = nullptr);

/// Warm-up only; writes config.txt, metrics.csv and warmup.odn.
void run_warmup(const RunConfig& config, std::ostream* log = nullptr);

/// Fine-tunes a full checkpoint at `depth` (0: its recorded depth); writes
/// config.txt, metrics.csv, finetuned.odn and odn.odn. Returns the best
/// validation accuracy.
double run_finetune(const RunConfig& config, const std::filesystem::path& checkpoint, int depth,
                    std::ostream* log = nullptr);

}  // namespace odn
