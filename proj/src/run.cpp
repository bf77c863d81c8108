#include "odn/run.hpp"

#include <omp.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <fstream>
#include <numeric>

#include "json.hpp"
#include "odn/error.hpp"
#include "odn/metrics.hpp"

namespace odn {

namespace {

namespace fs = std::filesystem;

Dataset shape_images(Dataset ds, const DataConfig& config) {
  const auto hw = config.pad_to > 0 ? config.pad_to : std::max(ds.height(), ds.width());
  const auto channels = config.expand_channels > 0 ? config.expand_channels : ds.channels();
  if (hw != ds.height() || hw != ds.width() || channels != ds.channels()) ds = pad_and_expand(ds, hw, channels);
  return ds;
}

std::vector<std::int64_t> range(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(end - begin));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
}

void apply_threads(const RunConfig& config) {
  if (config.threads > 0) omp_set_num_threads(config.threads);
}

struct Workspace {
  fs::path dir;
  CsvMetricsSink csv;

  explicit Workspace(const RunConfig& config)
      : dir(make_dir(config.output_dir)),
        csv(dir / "metrics.csv", dir / "timing.csv", config.record_wall_time) {
    write_text(dir / "config.txt", serialize_run_config(config));
  }

  static fs::path make_dir(const std::string& path) {
    fs::create_directories(path);
    return path;
  }
};

// Forwards to the CSV sink, logs progress and keeps each depth's best model.
class RunSink : public MetricsSink {
 public:
  RunSink(Workspace& ws, std::string metadata, std::ostream* log)
      : ws_(ws), metadata_(std::move(metadata)), log_(log) {}

  void on_epoch(const EpochMetrics& m) override {
    ws_.csv.on_epoch(m);
    if (log_) {
      *log_ << phase_name(m.phase) << " depth " << m.depth << " epoch " << m.epoch << ": loss " << m.train_loss
            << ", val acc " << m.val_accuracy << ", lr " << m.lr << " (" << m.seconds << " s)\n";
    }
  }

  void on_depth_complete(const DepthOutcome& outcome, const DepthPartitionedNetwork& net) override {
    write_checkpoint(ws_.dir / ("depth_" + std::to_string(outcome.depth) + "_best.odn"),
                     make_checkpoint(net, metadata_));
    if (log_) {
      *log_ << "depth " << outcome.depth << " done after " << outcome.epochs_trained << " epochs, best val acc "
            << outcome.best_val_accuracy << (outcome.target_met ? " (target met)" : "") << '\n';
    }
  }

 private:
  Workspace& ws_;
  std::string metadata_;
  std::ostream* log_;
};

SearchConfig finetune_config(const RunConfig& config) {
  SearchConfig c = config.search;
  if (config.finetune_max_epochs > 0) c.max_epochs_per_depth = config.finetune_max_epochs;
  return c;
}

void write_summary(const fs::path& dir, const RunConfig& config, const RunSummary& s) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : s.search.per_depth_history) {
    history.push_back({{"depth", h.depth},
                       {"epochs_trained", h.epochs_trained},
                       {"best_val_accuracy", h.best_val_accuracy},
                       {"target_met", h.target_met},
                       {"converged", h.converged},
                       {"lr_trace", h.lr_trace}});
  }
  auto stats_json = [](const ModelStats& m) {
    return nlohmann::json{{"depth", m.depth},
                          {"trainable_params", m.trainable_params},
                          {"buffer_values", m.buffer_values},
                          {"size_bytes", m.size_bytes},
                          {"flops", m.flops}};
  };
  nlohmann::json j = {{"arch", arch_name(config.arch)},
                      {"width_multiplier", config.width_multiplier},
                      {"target_accuracy", config.search.target_accuracy},
                      {"optimal_depth", s.search.optimal_depth},
                      {"max_depth", s.full_stats.depth},
                      {"target_reached", s.search.target_reached},
                      {"total_search_epochs", s.search.total_epochs},
                      {"search_val_accuracy", s.search_val_accuracy},
                      {"finetune_val_accuracy", s.finetune_val_accuracy},
                      {"test_accuracy", s.test_accuracy},
                      {"odn", stats_json(s.odn_stats)},
                      {"full", stats_json(s.full_stats)},
                      {"reduction_percent", s.reduction_percent},
                      {"per_depth_history", history},
                      {"by_products", "depth_<d>_best.odn holds the best model of every visited depth"}};
  write_text(dir / "summary.json", j.dump(2) + "\n");

  for (auto format : config.report_formats) {
    const char* ext = format == StatsFormat::kTable ? "txt" : format == StatsFormat::kCsv ? "csv" : "jsonl";
    std::ofstream out(dir / (std::string("stats.") + ext), std::ios::trunc);
    render_stats(out, {s.full_stats, s.odn_stats}, format, &s.full_stats);
  }
}

}  // namespace

void prefer_heap_allocation() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::pair<Dataset, Dataset> load_sources(const DataConfig& config) {
  Dataset train, test;
  if (config.dataset == "synth-easy" || config.dataset == "synth-hard") {
    SynthSpec spec;
    spec.num_classes = config.synth_classes;
    spec.samples_per_class = config.synth_samples_per_class + config.synth_test_samples_per_class;
    spec.image_size = config.synth_image_size;
    spec.channels = config.synth_channels;
    spec.difficulty = config.dataset == "synth-easy" ? Difficulty::kEasy : Difficulty::kHard;
    spec.seed = config.synth_seed;
    const auto all = synthesize(spec);
    // Labels cycle through the classes, so both ranges stay balanced.
    const auto n_train = static_cast<std::int64_t>(config.synth_classes) * config.synth_samples_per_class;
    train = subset(all, range(0, n_train));
    if (config.synth_test_samples_per_class > 0) test = subset(all, range(n_train, all.size()));
  } else if (config.dataset == "mnist" || config.dataset == "idx") {
    train = load_idx(config.resolve(config.train_images), config.resolve(config.train_labels),
                     config.dataset == "mnist" ? 10 : 0);
    if (!config.test_images.empty()) {
      test = load_idx(config.resolve(config.test_images), config.resolve(config.test_labels), train.num_classes);
    }
  } else if (config.dataset == "cifar10") {
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i) {
      batches.push_back(config.resolve(config.cifar_dir) / ("data_batch_" + std::to_string(i) + ".bin"));
    }
    train = load_cifar10_binary(batches);
    test = load_cifar10_binary({config.resolve(config.cifar_dir) / "test_batch.bin"});
  } else {
    fail(ErrorCode::kConfig, "unknown dataset '" + config.dataset + "'");
  }
  if (config.train_subset > 0) train = random_subset(train, config.train_subset, config.split_seed);
  train = shape_images(std::move(train), config);
  if (test.images.defined()) test = shape_images(std::move(test), config);
  return {std::move(train), std::move(test)};
}

PreparedData prepare_data(const RunConfig& config) {
  auto [source, test] = load_sources(config.data);
  auto parts = split(source, config.data.val_fraction, config.data.split_seed);
  PreparedData out;
  if (config.data.normalize) {
    out.stats = channel_statistics(parts.train);
    out.train = normalize(parts.train, out.stats);
    out.val = normalize(parts.val, out.stats);
    if (test.images.defined()) out.test = normalize(test, out.stats);
  } else {
    out.train = std::move(parts.train);
    out.val = std::move(parts.val);
    out.test = std::move(test);
  }
  return out;
}

Dataset load_test_data(const DataConfig& config, const ChannelStats& stats) {
  auto test = load_sources(config).second;
  if (!test.images.defined()) fail(ErrorCode::kEmptyDataset, "dataset '" + config.dataset + "' has no held-out set");
  return stats.mean.empty() ? test : normalize(test, stats);
}

std::string checkpoint_metadata(const RunConfig& config, const ChannelStats& stats) {
  nlohmann::json j = {{"dataset", config.data.dataset}, {"mean", stats.mean}, {"std", stats.std}};
  return j.dump();
}

ChannelStats stats_from_metadata(const std::string& metadata) {
  ChannelStats stats;
  if (metadata.empty()) return stats;
  try {
    const auto j = nlohmann::json::parse(metadata);
    if (j.contains("mean")) stats.mean = j.at("mean").get<std::vector<float>>();
    if (j.contains("std")) stats.std = j.at("std").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  return stats;
}

NetworkSpec network_spec(const RunConfig& config, const Dataset& data) {
  NetworkSpec spec;
  spec.arch = config.arch;
  spec.width_multiplier = config.width_multiplier;
  spec.in_channels = config.in_channels > 0 ? config.in_channels : static_cast<int>(data.channels());
  spec.num_classes = config.num_classes > 0 ? config.num_classes : data.num_classes;
  if (spec.in_channels != data.channels()) {
    fail(ErrorCode::kConfig, "in_channels " + std::to_string(spec.in_channels) + " but the data has " +
                                 std::to_string(data.channels()) + " channels");
  }
  if (spec.num_classes < data.num_classes) {
    fail(ErrorCode::kConfig, "num_classes " + std::to_string(spec.num_classes) + " but the data has " +
                                 std::to_string(data.num_classes) + " classes");
  }
  spec.validate();
  return spec;
}

RunSummary run_search(const RunConfig& config, std::ostream* log) {
  apply_threads(config);
  const auto data = prepare_data(config);
  const auto spec = network_spec(config, data.train);
  config.search.validate(spec.max_depth());
  Workspace ws(config);
  const auto metadata = checkpoint_metadata(config, data.stats);
  RunSink sink(ws, metadata, log);

  DepthPartitionedNetwork net(spec, config.search.seed);
  const auto warm = warmup(net, data.train, config.search, &sink, &data.val);
  write_checkpoint(ws.dir / "warmup.odn", make_checkpoint(net, metadata));

  RunSummary summary;
  summary.search = search(net, data.train, data.val, config.search, warm, &sink);
  const int d_opt = summary.search.optimal_depth;
  summary.search_val_accuracy = summary.search.per_depth_history.back().best_val_accuracy;
  summary.finetune_val_accuracy = summary.search_val_accuracy;
  if (config.finetune) {
    summary.finetune_val_accuracy = finetune(net, d_opt, data.train, data.val, finetune_config(config), &sink);
    write_checkpoint(ws.dir / "finetuned.odn", make_checkpoint(net, metadata));
  }

  auto odn = extract_odn(net, d_opt);
  write_checkpoint(ws.dir / "odn.odn", make_checkpoint(odn, metadata));
  if (data.test.images.defined()) {
    summary.test_accuracy =
        evaluate([&](const Tensor& x) { return odn.forward(x, Mode::kEval); }, data.test, config.search.batch_size)
            .accuracy;
  }

  const InputShape input{data.train.channels(), data.train.height(), data.train.width()};
  summary.odn_stats = stats_at_depth(spec, d_opt, input);
  summary.full_stats = stats_at_depth(spec, spec.max_depth(), input);
  summary.reduction_percent = reduction_percent(summary.full_stats, summary.odn_stats);
  write_summary(ws.dir, config, summary);
  if (log) {
    *log << "D_opt " << d_opt << "/" << spec.max_depth() << (summary.search.target_reached ? "" : " (target not reached)")
         << ", val acc " << summary.finetune_val_accuracy << ", test acc " << summary.test_accuracy << ", size "
         << summary.odn_stats.size_megabytes() << " MB (" << summary.reduction_percent << "% smaller)\n";
  }
  return summary;
}

void run_warmup(const RunConfig& config, std::ostream* log) {
  apply_threads(config);
  const auto data = prepare_data(config);
  const auto spec = network_spec(config, data.train);
  config.search.validate(spec.max_depth());
  Workspace ws(config);
  const auto metadata = checkpoint_metadata(config, data.stats);
  RunSink sink(ws, metadata, log);
  DepthPartitionedNetwork net(spec, config.search.seed);
  warmup(net, data.train, config.search, &sink, &data.val);
  write_checkpoint(ws.dir / "warmup.odn", make_checkpoint(net, metadata));
}

double run_finetune(const RunConfig& config, const fs::path& checkpoint, int depth, std::ostream* log) {
  apply_threads(config);
  const auto ck = read_checkpoint(checkpoint);
  auto net = restore_network(ck);
  const int d = depth == 0 ? ck.header.depth : depth;
  auto cfg = config;
  auto raw = load_sources(config.data).first;
  auto parts = split(raw, config.data.val_fraction, config.data.split_seed);
  const auto stats = stats_from_metadata(ck.header.metadata);
  if (!stats.mean.empty()) {
    parts.train = normalize(parts.train, stats);
    parts.val = normalize(parts.val, stats);
  }
  if (net.spec().in_channels != parts.train.channels()) {
    fail(ErrorCode::kConfig, "checkpoint expects " + std::to_string(net.spec().in_channels) +
                                 " input channels, data has " + std::to_string(parts.train.channels()));
  }
  Workspace ws(cfg);
  RunSink sink(ws, ck.header.metadata, log);
  const double acc = finetune(net, d, parts.train, parts.val, finetune_config(cfg), &sink);
  write_checkpoint(ws.dir / "finetuned.odn", make_checkpoint(net, ck.header.metadata));
  write_checkpoint(ws.dir / "odn.odn", make_checkpoint(extract_odn(net, d), ck.header.metadata));
  if (log) *log << "fine-tuned depth " << d << ": best val acc " << acc << '\n';
  return acc;
}

}  // namespace odn
