#include "odn/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "odn/error.hpp"

namespace odn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) fail(ErrorCode::kConfig, "key '" + key + "': cannot parse '" + value + "'");
  return out;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  fail(ErrorCode::kConfig, "key '" + key + "': expected true or false, got '" + value + "'");
}

std::string_view transition_name(DepthTransition t) {
  return t == DepthTransition::kWarmStart ? "warm_start" : "random_new_level";
}

DepthTransition parse_transition(const std::string& key, const std::string& value) {
  if (value == "warm_start") return DepthTransition::kWarmStart;
  if (value == "random_new_level") return DepthTransition::kRandomNewLevel;
  fail(ErrorCode::kConfig, "key '" + key + "': expected warm_start or random_new_level, got '" + value + "'");
}

std::string_view format_name(StatsFormat f) {
  switch (f) {
    case StatsFormat::kTable: return "table";
    case StatsFormat::kCsv: return "csv";
    case StatsFormat::kJsonLines: return "jsonl";
  }
  return "table";
}

struct Key {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key number_key(std::string name, std::string help, T RunConfig::*outer) {
  return {std::move(name), std::move(help),
          [outer](RunConfig& c, const std::string& k, const std::string& v) { c.*outer = parse_number<T>(k, v); },
          [outer](const RunConfig& c) { return format_number(c.*outer); }};
}

template <typename T>
Key data_number(std::string name, std::string help, T DataConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& k, const std::string& v) { c.data.*field = parse_number<T>(k, v); },
          [field](const RunConfig& c) { return format_number(c.data.*field); }};
}

Key data_string(std::string name, std::string help, std::string DataConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string&, const std::string& v) { c.data.*field = v; },
          [field](const RunConfig& c) { return c.data.*field; }};
}

template <typename T>
Key search_number(std::string name, std::string help, T SearchConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& k, const std::string& v) { c.search.*field = parse_number<T>(k, v); },
          [field](const RunConfig& c) { return format_number(c.search.*field); }};
}

template <typename T>
Key optimizer_number(std::string name, std::string help, T OptimizerConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            c.search.optimizer.*field = parse_number<T>(k, v);
          },
          [field](const RunConfig& c) { return format_number(c.search.optimizer.*field); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(data_string("dataset", "synth-easy, synth-hard, mnist, idx or cifar10", &DataConfig::dataset));
    k.push_back(data_string("data_root", "base directory for data paths (empty: $ODN_DATA_ROOT, then data)",
                            &DataConfig::data_root));
    k.push_back(data_string("train_images", "IDX training images (mnist, idx)", &DataConfig::train_images));
    k.push_back(data_string("train_labels", "IDX training labels (mnist, idx)", &DataConfig::train_labels));
    k.push_back(data_string("test_images", "IDX held-out images (mnist, idx)", &DataConfig::test_images));
    k.push_back(data_string("test_labels", "IDX held-out labels (mnist, idx)", &DataConfig::test_labels));
    k.push_back(data_string("cifar_dir", "directory with data_batch_*.bin and test_batch.bin", &DataConfig::cifar_dir));
    k.push_back(data_number("synth_classes", "synthetic class count", &DataConfig::synth_classes));
    k.push_back(data_number("synth_samples_per_class", "synthetic training samples per class",
                            &DataConfig::synth_samples_per_class));
    k.push_back(data_number("synth_test_samples_per_class", "synthetic held-out samples per class",
                            &DataConfig::synth_test_samples_per_class));
    k.push_back(data_number("synth_image_size", "synthetic image side length", &DataConfig::synth_image_size));
    k.push_back(data_number("synth_channels", "synthetic channel count", &DataConfig::synth_channels));
    k.push_back(data_number("synth_seed", "seed of the synthetic generator", &DataConfig::synth_seed));
    k.push_back(data_number("train_subset", "keep this many training samples (0: all)", &DataConfig::train_subset));
    k.push_back(data_number("val_fraction", "share of training samples held out for validation",
                            &DataConfig::val_fraction));
    k.push_back(data_number("split_seed", "seed of the subset and validation split", &DataConfig::split_seed));
    k.push_back({"normalize", "standardize channels with training-set statistics",
                 [](RunConfig& c, const std::string& key, const std::string& v) { c.data.normalize = parse_bool(key, v); },
                 [](const RunConfig& c) { return std::string(c.data.normalize ? "true" : "false"); }});
    k.push_back(data_number("pad_to", "zero-pad images to this square size (0: native)", &DataConfig::pad_to));
    k.push_back(data_number("expand_channels", "replicate single-channel images to this many channels (0: native)",
                            &DataConfig::expand_channels));

    k.push_back({"arch", "resnet18, resnet34 or resnet50",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   try {
                     c.arch = parse_arch(v);
                   } catch (const Error&) {
                     fail(ErrorCode::kConfig, "key '" + key + "': unknown architecture '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return std::string(arch_name(c.arch)); }});
    k.push_back(number_key("width_multiplier", "channel width scale", &RunConfig::width_multiplier));
    k.push_back(number_key("in_channels", "input channels (0: from data)", &RunConfig::in_channels));
    k.push_back(number_key("num_classes", "class count (0: from data)", &RunConfig::num_classes));

    k.push_back(search_number("warmup_epochs", "warm-up epochs over all heads", &SearchConfig::warmup_epochs));
    k.push_back(search_number("warmup_lr", "warm-up learning rate", &SearchConfig::warmup_lr));
    k.push_back(search_number("base_lr", "learning rate at the start of each depth", &SearchConfig::base_lr));
    k.push_back(search_number("initial_depth", "first depth level searched", &SearchConfig::initial_depth));
    k.push_back(search_number("final_depth", "last depth level searched (0: maximum)", &SearchConfig::final_depth));
    k.push_back(search_number("target_accuracy", "validation accuracy that ends the search",
                              &SearchConfig::target_accuracy));
    k.push_back(search_number("stop_epochs", "epochs without improvement that count as converged",
                              &SearchConfig::stop_epochs));
    k.push_back(search_number("lr_decay_factor", "learning-rate multiplier on each plateau step",
                              &SearchConfig::lr_decay_factor));
    k.push_back(search_number("lr_decay_interval", "epochs without improvement between decays",
                              &SearchConfig::lr_decay_interval));
    k.push_back(optimizer_number("momentum", "SGD momentum", &OptimizerConfig::momentum));
    k.push_back(optimizer_number("weight_decay", "L2 weight decay", &OptimizerConfig::weight_decay));
    k.push_back(search_number("batch_size", "mini-batch size", &SearchConfig::batch_size));
    k.push_back(search_number("seed", "initialization and shuffling seed", &SearchConfig::seed));
    k.push_back(search_number("max_epochs_per_depth", "safety bound on epochs at one depth",
                              &SearchConfig::max_epochs_per_depth));
    k.push_back({"augment", "random crop and horizontal flip",
                 [](RunConfig& c, const std::string& key, const std::string& v) { c.search.augment = parse_bool(key, v); },
                 [](const RunConfig& c) { return std::string(c.search.augment ? "true" : "false"); }});
    k.push_back({"transition", "warm_start or random_new_level (ablation)",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.search.transition = parse_transition(key, v);
                 },
                 [](const RunConfig& c) { return std::string(transition_name(c.search.transition)); }});

    k.push_back({"finetune", "fine-tune at the selected depth after the search",
                 [](RunConfig& c, const std::string& key, const std::string& v) { c.finetune = parse_bool(key, v); },
                 [](const RunConfig& c) { return std::string(c.finetune ? "true" : "false"); }});
    k.push_back(number_key("finetune_max_epochs", "epoch bound for fine-tuning (0: max_epochs_per_depth)",
                           &RunConfig::finetune_max_epochs));
    k.push_back({"output_dir", "run directory",
                 [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
                 [](const RunConfig& c) { return c.output_dir; }});
    k.push_back({"report_formats", "comma-separated stats formats: table, csv, jsonl",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.report_formats.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (item.empty()) continue;
                     try {
                       c.report_formats.push_back(parse_stats_format(item));
                     } catch (const Error& e) {
                       fail(ErrorCode::kConfig, "key '" + key + "': " + e.what());
                     }
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (auto f : c.report_formats) {
                     if (!out.empty()) out += ',';
                     out += format_name(f);
                   }
                   return out;
                 }});
    k.push_back({"record_wall_time", "write wall-clock seconds into metrics.csv",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   c.record_wall_time = parse_bool(key, v);
                 },
                 [](const RunConfig& c) { return std::string(c.record_wall_time ? "true" : "false"); }});
    k.push_back(number_key("threads", "OpenMP threads (0: default)", &RunConfig::threads));
    return k;
  }();
  return table;
}

const Key* find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void validate(const RunConfig& c) {
  static const std::set<std::string> datasets{"synth-easy", "synth-hard", "mnist", "idx", "cifar10"};
  if (!datasets.count(c.data.dataset)) fail(ErrorCode::kConfig, "unknown dataset '" + c.data.dataset + "'");
  if (!(c.data.val_fraction > 0.0 && c.data.val_fraction < 1.0)) {
    fail(ErrorCode::kConfig, "val_fraction must lie in (0, 1)");
  }
  if (c.data.train_subset < 0 || c.data.pad_to < 0 || c.data.expand_channels < 0) {
    fail(ErrorCode::kConfig, "train_subset, pad_to and expand_channels must be non-negative");
  }
  if (!(c.width_multiplier > 0.0)) fail(ErrorCode::kConfig, "width_multiplier must be positive");
  if (c.in_channels < 0 || c.num_classes < 0 || c.finetune_max_epochs < 0 || c.threads < 0) {
    fail(ErrorCode::kConfig, "in_channels, num_classes, finetune_max_epochs and threads must be non-negative");
  }
  if (c.output_dir.empty()) fail(ErrorCode::kConfig, "output_dir must not be empty");
  NetworkSpec probe;
  probe.arch = c.arch;
  c.search.validate(probe.max_depth());
}

}  // namespace

std::filesystem::path DataConfig::resolve(const std::string& relative) const {
  std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  std::string root = data_root;
  if (root.empty()) {
    const char* env = std::getenv("ODN_DATA_ROOT");
    root = env && *env ? env : "data";
  }
  return std::filesystem::path(root) / p;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const Key* k = find_key(key);
    if (!k) fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": key '" + key + "' given twice");
    }
    k->set(config, key, value);
  }
  validate(config);
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

void describe_run_config_keys(std::ostream& os) {
  const RunConfig defaults;
  for (const auto& k : keys()) {
    os << k.name << " (default: " << k.get(defaults) << ")\n    " << k.help << '\n';
  }
}

}  // namespace odn
