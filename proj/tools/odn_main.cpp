// Command-line front end: search, warmup, finetune, extract, stats, eval, report.

#include <omp.h>

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "odn/accounting.hpp"
#include "odn/checkpoint.hpp"
#include "odn/error.hpp"
#include "odn/metrics.hpp"
#include "odn/run.hpp"

namespace {

using namespace odn;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags) {
  cmd->add_option("--config", flags.config, "run configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--out", flags.out, "override the output directory");
  cmd->add_flag("--quiet", flags.quiet, "no per-epoch progress");
}

RunConfig resolve(const RunFlags& flags, int threads) {
  auto config = load_run_config(flags.config);
  if (flags.seed) config.search.seed = *flags.seed;
  if (!flags.out.empty()) config.output_dir = flags.out;
  if (threads > 0) config.threads = threads;
  return config;
}

InputShape parse_input(const std::string& text) {
  InputShape s;
  char x1 = 0, x2 = 0;
  long long c = 0, h = 0, w = 0;
  if (std::sscanf(text.c_str(), "%lld%c%lld%c%lld", &c, &x1, &h, &x2, &w) != 5 || x1 != 'x' || x2 != 'x' || c < 1 ||
      h < 1 || w < 1) {
    fail(ErrorCode::kInvalidArgument, "input shape must look like 3x32x32, got '" + text + "'");
  }
  s.channels = c;
  s.height = h;
  s.width = w;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimally deep networks: depth search, extraction and model accounting"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0: default)")->check(CLI::NonNegativeNumber);

  RunFlags search_flags;
  auto* search_cmd = app.add_subcommand("search", "warm-up, depth search, fine-tune and extract");
  add_run_flags(search_cmd, search_flags);

  RunFlags warmup_flags;
  auto* warmup_cmd = app.add_subcommand("warmup", "warm up every depth level and save warmup.odn");
  add_run_flags(warmup_cmd, warmup_flags);

  RunFlags finetune_flags;
  std::string finetune_ckpt;
  int finetune_depth = 0;
  auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune a saved network at one depth");
  add_run_flags(finetune_cmd, finetune_flags);
  finetune_cmd->add_option("--checkpoint", finetune_ckpt, "full network checkpoint")->required();
  finetune_cmd->add_option("--depth", finetune_depth, "depth level (0: the checkpoint's)");

  std::string extract_in, extract_out;
  int extract_depth = 0;
  auto* extract_cmd = app.add_subcommand("extract", "copy stem, blocks 1..d and head d into a standalone network");
  extract_cmd->add_option("--checkpoint", extract_in, "full network checkpoint")->required();
  extract_cmd->add_option("--depth", extract_depth, "depth level (0: the checkpoint's)");
  extract_cmd->add_option("--output", extract_out, "extracted checkpoint path")->required();

  std::string stats_arch = "resnet18", stats_depth = "all", stats_input = "3x32x32", stats_format = "table";
  int stats_classes = 10;
  double stats_width = 1.0;
  auto* stats_cmd = app.add_subcommand("stats", "parameters, size and FLOPs per depth");
  stats_cmd->add_option("--arch", stats_arch, "resnet18, resnet34 or resnet50");
  stats_cmd->add_option("--depth", stats_depth, "depth level or 'all'");
  stats_cmd->add_option("--classes", stats_classes, "class count");
  stats_cmd->add_option("--input", stats_input, "input shape CxHxW");
  stats_cmd->add_option("--width", stats_width, "width multiplier");
  stats_cmd->add_option("--format", stats_format, "table, csv or jsonl");

  std::string eval_ckpt, eval_config, eval_split = "test";
  int eval_depth = 0;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "full or extracted checkpoint")->required();
  eval_cmd->add_option("--config", eval_config, "run configuration naming the dataset")->required();
  eval_cmd->add_option("--depth", eval_depth, "depth for full checkpoints (0: the checkpoint's)");
  eval_cmd->add_option("--split", eval_split, "test or val")->check(CLI::IsMember({"test", "val"}));

  std::string report_metrics, report_out;
  auto* report_cmd = app.add_subcommand("report", "per-depth learning-curve CSVs and an SVG plot");
  report_cmd->add_option("--metrics", report_metrics, "metrics.csv of a run")->required();
  report_cmd->add_option("--out", report_out, "output directory (default: next to metrics.csv)");

  app.add_subcommand("keys", "list configuration keys");

  CLI11_PARSE(app, argc, argv);
  prefer_heap_allocation();
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*search_cmd) {
      const auto config = resolve(search_flags, threads);
      const auto s = run_search(config, search_flags.quiet ? nullptr : &std::cerr);
      std::printf("optimal_depth %d/%d target_reached %s test_accuracy %.4f size_mb %.4f reduction %.2f%%\n",
                  s.search.optimal_depth, s.full_stats.depth, s.search.target_reached ? "true" : "false",
                  s.test_accuracy, s.odn_stats.size_megabytes(), s.reduction_percent);
    } else if (*warmup_cmd) {
      run_warmup(resolve(warmup_flags, threads), warmup_flags.quiet ? nullptr : &std::cerr);
    } else if (*finetune_cmd) {
      const auto acc = run_finetune(resolve(finetune_flags, threads), finetune_ckpt, finetune_depth,
                                    finetune_flags.quiet ? nullptr : &std::cerr);
      std::printf("val_accuracy %.4f\n", acc);
    } else if (*extract_cmd) {
      const auto ck = read_checkpoint(extract_in);
      const auto net = restore_extracted(ck, extract_depth);
      write_checkpoint(extract_out, make_checkpoint(net, ck.header.metadata));
      std::printf("extracted depth %d/%d to %s\n", net.depth(), net.spec().max_depth(), extract_out.c_str());
    } else if (*stats_cmd) {
      NetworkSpec spec;
      spec.arch = parse_arch(stats_arch);
      spec.num_classes = stats_classes;
      spec.width_multiplier = stats_width;
      const auto input = parse_input(stats_input);
      spec.in_channels = static_cast<int>(input.channels);
      spec.validate();
      std::vector<ModelStats> rows;
      if (stats_depth == "all") {
        for (int d = 1; d <= spec.max_depth(); ++d) rows.push_back(stats_at_depth(spec, d, input));
      } else {
        rows.push_back(stats_at_depth(spec, std::stoi(stats_depth), input));
      }
      const auto full = stats_at_depth(spec, spec.max_depth(), input);
      render_stats(std::cout, rows, parse_stats_format(stats_format), &full);
    } else if (*eval_cmd) {
      const auto config = load_run_config(eval_config);
      const auto ck = read_checkpoint(eval_ckpt);
      auto net = restore_extracted(ck, eval_depth);
      const auto stats = stats_from_metadata(ck.header.metadata);
      Dataset data;
      if (eval_split == "test") {
        data = load_test_data(config.data, stats);
      } else {
        data = split(load_sources(config.data).first, config.data.val_fraction, config.data.split_seed).val;
        if (!stats.mean.empty()) data = normalize(data, stats);
      }
      const auto r = evaluate([&](const Tensor& x) { return net.forward(x, Mode::kEval); }, data,
                              config.search.batch_size);
      std::printf("%.4f\n", r.accuracy);
    } else if (*report_cmd) {
      const std::filesystem::path metrics(report_metrics);
      const auto out = report_out.empty() ? metrics.parent_path() / "report" : std::filesystem::path(report_out);
      for (const auto& p : write_report(read_metrics_csv(metrics), out)) std::printf("%s\n", p.string().c_str());
    } else {
      describe_run_config_keys(std::cout);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "odn: error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "odn: %s\n", e.what());
    return 1;
  }
  return 0;
}
