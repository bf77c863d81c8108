#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "odn/data.hpp"
#include "odn/network.hpp"
#include "odn/optim.hpp"

namespace odn {

/// What happens to the network when the search moves to a deeper level.
enum class DepthTransition {
  kWarmStart,       // restore every parameter from the warm-up snapshot
  kRandomNewLevel,  // ablation: restore the snapshot, then re-randomize the new block and head
};

struct SearchConfig {
  int warmup_epochs = 3;
  float warmup_lr = 0.01f;
  float base_lr = 0.1f;
  int initial_depth = 1;
  int final_depth = 0;  // 0 selects the network's maximum depth
  double target_accuracy = 0.9;
  int stop_epochs = 23;
  float lr_decay_factor = 0.6f;
  int lr_decay_interval = 5;
  OptimizerConfig optimizer{0.1f, 0.9f, 5e-4f};
  std::int64_t batch_size = 128;
  std::uint64_t seed = 0;
  int max_epochs_per_depth = 200;
  bool augment = false;
  DepthTransition transition = DepthTransition::kWarmStart;

  int resolved_final_depth(int max_depth) const { return final_depth == 0 ? max_depth : final_depth; }
  void validate(int max_depth) const;
};

/// Plateau bookkeeping for one depth (or the fine-tuning run).
struct ConvergenceTracker {
  double best_accuracy = 0.0;
  double current_accuracy = 0.0;
  int no_improve_epochs = 0;
  float current_lr = 0.0f;
  bool improved = false;  // whether the most recent observation was a strict improvement

  static ConvergenceTracker fresh(const SearchConfig& config);
};

enum class EpochAction { kContinue, kDecayLr, kConverged };

/// Strict improvement resets the counter; otherwise the counter grows, the
/// learning rate is multiplied by lr_decay_factor every lr_decay_interval
/// stale epochs, and the depth is converged once the counter hits
/// stop_epochs.
EpochAction observe_epoch(ConvergenceTracker& tracker, double val_accuracy, const SearchConfig& config);

enum class Phase { kWarmup, kSearch, kFinetune };

std::string_view phase_name(Phase phase);

struct EpochMetrics {
  int depth = 0;
  int epoch = 0;  // 1-based within (phase, depth)
  Phase phase = Phase::kSearch;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  float lr = 0.0f;
  double seconds = 0.0;
};

struct DepthOutcome {
  int depth = 0;
  int epochs_trained = 0;
  double best_val_accuracy = 0.0;
  std::vector<float> lr_trace;
  bool target_met = false;
  bool converged = false;
};

struct SearchResult {
  int optimal_depth = 0;
  bool target_reached = false;
  std::vector<DepthOutcome> per_depth_history;
  int total_epochs = 0;
};

/// Receives progress from the training loops. Default methods ignore it.
class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void on_epoch(const EpochMetrics& metrics) { (void)metrics; }
  /// Called after each searched depth with the network holding that depth's
  /// best snapshot.
  virtual void on_depth_complete(const DepthOutcome& outcome, const DepthPartitionedNetwork& net) {
    (void)outcome;
    (void)net;
  }
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

using ForwardFn = std::function<Tensor(const Tensor& x)>;

/// Eval-mode accuracy and mean cross-entropy, batches in dataset order.
EvalResult evaluate(const ForwardFn& forward, const Dataset& data, std::int64_t batch_size);
EvalResult evaluate(DepthPartitionedNetwork& net, int depth, const Dataset& data, std::int64_t batch_size);

/// Mean over heads of each head's cross-entropy, averaged over the dataset.
double multi_head_loss(DepthPartitionedNetwork& net, const Dataset& data, std::int64_t batch_size, Mode mode);

/// Trains every head at once (mean of the per-head losses) for
/// config.warmup_epochs epochs at config.warmup_lr and returns the snapshot
/// of all parameters and buffers.
StateDict warmup(DepthPartitionedNetwork& net, const Dataset& train, const SearchConfig& config,
                 MetricsSink* sink = nullptr, const Dataset* val = nullptr);

struct DepthTrainingOptions {
  Phase phase = Phase::kSearch;
  bool stop_at_target = true;
  /// Accuracy the run must beat before its first snapshot is taken; the
  /// starting parameters count as the best so far.
  std::optional<double> initial_best;
};

/// Trains head `depth` until converged, the target is met (when enabled) or
/// max_epochs_per_depth is hit. Leaves the best snapshot loaded.
DepthOutcome train_depth_to_convergence(DepthPartitionedNetwork& net, int depth, const Dataset& train,
                                        const Dataset& val, const SearchConfig& config, MetricsSink* sink = nullptr,
                                        const DepthTrainingOptions& options = {});

/// Loads `warm` and applies config.transition for `depth`.
void enter_depth(DepthPartitionedNetwork& net, int depth, const StateDict& warm, const SearchConfig& config);

/// Progressive depth expansion from config.initial_depth, restarting each
/// depth from `warm` (see DepthTransition).
SearchResult search(DepthPartitionedNetwork& net, const Dataset& train, const Dataset& val,
                    const SearchConfig& config, const StateDict& warm, MetricsSink* sink = nullptr);

/// Continues training at `depth` from the current parameters with a fresh
/// tracker until the stopping criterion fires; returns the best validation
/// accuracy, whose snapshot is left loaded.
double finetune(DepthPartitionedNetwork& net, int depth, const Dataset& train, const Dataset& val,
                const SearchConfig& config, MetricsSink* sink = nullptr);

}  // namespace odn
