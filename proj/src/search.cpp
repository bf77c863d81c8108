#include "odn/search.hpp"

#include <chrono>
#include <cmath>

#include "odn/error.hpp"
#include "odn/ops.hpp"

namespace odn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stream identifiers so warm-up, each searched depth and fine-tuning draw
// independent but reproducible batch orders.
std::uint64_t stream_seed(const SearchConfig& config, Phase phase, int depth) {
  return mix_seed(config.seed, static_cast<std::uint64_t>(phase) * 1000 + static_cast<std::uint64_t>(depth));
}

void check_finite(const Tensor& loss, Phase phase, int depth, int epoch, std::size_t batch) {
  if (!std::isfinite(loss.item())) {
    fail(ErrorCode::kDivergence, "non-finite loss during " + std::string(phase_name(phase)) + " at depth " +
                                     std::to_string(depth) + ", epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch));
  }
}

template <typename LossFn>
double run_epoch(const Dataset& train, const SearchConfig& config, std::uint64_t seed, int epoch,
                 const std::vector<Parameter*>& params, float lr, Phase phase, int depth, LossFn&& loss_of) {
  BatchStream stream(train, config.batch_size, seed, static_cast<std::uint64_t>(epoch));
  OptimizerConfig opt = config.optimizer;
  opt.learning_rate = lr;
  double total = 0.0;
  for (std::size_t b = 0; b < stream.size(); ++b) {
    Batch batch = stream[b];
    if (config.augment) augment_crop_flip(batch, mix_seed(seed, (static_cast<std::uint64_t>(epoch) << 20) + b));
    zero_grad(params);
    const Tensor loss = loss_of(batch);
    check_finite(loss, phase, depth, epoch, b);
    loss.backward();
    sgd_step(params, opt);
    total += static_cast<double>(loss.item()) * static_cast<double>(batch.y.size());
  }
  zero_grad(params);
  return total / static_cast<double>(train.size());
}

}  // namespace

void SearchConfig::validate(int max_depth) const {
  const int final = resolved_final_depth(max_depth);
  if (initial_depth < 1 || initial_depth > final || final > max_depth) {
    fail(ErrorCode::kConfig, "depth range must satisfy 1 <= initial_depth (" + std::to_string(initial_depth) +
                                 ") <= final_depth (" + std::to_string(final) + ") <= " + std::to_string(max_depth));
  }
  if (warmup_epochs < 0) fail(ErrorCode::kConfig, "warmup_epochs must be non-negative");
  if (!(warmup_lr > 0.0f) || !(base_lr > 0.0f)) fail(ErrorCode::kConfig, "learning rates must be positive");
  if (!(target_accuracy >= 0.0) || !std::isfinite(target_accuracy)) {
    fail(ErrorCode::kConfig, "target_accuracy must be a finite non-negative number");
  }
  if (stop_epochs < 1) fail(ErrorCode::kConfig, "stop_epochs must be positive");
  if (!(lr_decay_factor > 0.0f && lr_decay_factor < 1.0f)) fail(ErrorCode::kConfig, "lr_decay_factor must lie in (0, 1)");
  if (lr_decay_interval < 1 || lr_decay_interval > stop_epochs) {
    fail(ErrorCode::kConfig, "lr_decay_interval must lie in [1, stop_epochs]");
  }
  if (batch_size < 1) fail(ErrorCode::kConfig, "batch_size must be positive");
  if (max_epochs_per_depth < 1) fail(ErrorCode::kConfig, "max_epochs_per_depth must be positive");
  OptimizerConfig probe = optimizer;
  probe.learning_rate = base_lr;
  try {
    probe.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
}

ConvergenceTracker ConvergenceTracker::fresh(const SearchConfig& config) {
  ConvergenceTracker tracker;
  tracker.current_lr = config.base_lr;
  return tracker;
}

EpochAction observe_epoch(ConvergenceTracker& tracker, double val_accuracy, const SearchConfig& config) {
  tracker.current_accuracy = val_accuracy;
  tracker.improved = val_accuracy > tracker.best_accuracy;
  if (tracker.improved) {
    tracker.best_accuracy = val_accuracy;
    tracker.no_improve_epochs = 0;
    return EpochAction::kContinue;
  }
  ++tracker.no_improve_epochs;
  if (tracker.no_improve_epochs >= config.stop_epochs) return EpochAction::kConverged;
  if (tracker.no_improve_epochs % config.lr_decay_interval == 0) {
    tracker.current_lr *= config.lr_decay_factor;
    return EpochAction::kDecayLr;
  }
  return EpochAction::kContinue;
}

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kWarmup: return "warmup";
    case Phase::kSearch: return "search";
    case Phase::kFinetune: return "finetune";
  }
  return "unknown";
}

EvalResult evaluate(const ForwardFn& forward, const Dataset& data, std::int64_t batch_size) {
  NoGradGuard no_grad;
  BatchStream stream(data, batch_size, 0, 0, false);
  std::int64_t correct = 0;
  double loss = 0.0;
  for (std::size_t b = 0; b < stream.size(); ++b) {
    const Batch batch = stream[b];
    const Tensor logits = forward(batch.x);
    const auto predicted = argmax_rows(logits);
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == batch.y[i];
    loss += static_cast<double>(cross_entropy(logits, batch.y).item()) * static_cast<double>(batch.y.size());
  }
  const auto n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

EvalResult evaluate(DepthPartitionedNetwork& net, int depth, const Dataset& data, std::int64_t batch_size) {
  return evaluate([&](const Tensor& x) { return net.forward_at_depth(x, depth, Mode::kEval); }, data, batch_size);
}

double multi_head_loss(DepthPartitionedNetwork& net, const Dataset& data, std::int64_t batch_size, Mode mode) {
  NoGradGuard no_grad;
  BatchStream stream(data, batch_size, 0, 0, false);
  double total = 0.0;
  for (std::size_t b = 0; b < stream.size(); ++b) {
    const Batch batch = stream[b];
    std::vector<Tensor> losses;
    for (const auto& logits : net.forward_all_heads(batch.x, mode)) losses.push_back(cross_entropy(logits, batch.y));
    total += static_cast<double>(mean_of(losses).item()) * static_cast<double>(batch.y.size());
  }
  return total / static_cast<double>(data.size());
}

StateDict warmup(DepthPartitionedNetwork& net, const Dataset& train, const SearchConfig& config, MetricsSink* sink,
                 const Dataset* val) {
  train.validate();
  const int full = net.max_depth();
  net.activate_depth(full);
  auto params = net.all_parameters();
  reset_momentum(params);
  const auto seed = stream_seed(config, Phase::kWarmup, full);
  for (int epoch = 1; epoch <= config.warmup_epochs; ++epoch) {
    const auto start = Clock::now();
    const double train_loss =
        run_epoch(train, config, seed, epoch, params, config.warmup_lr, Phase::kWarmup, full, [&](const Batch& batch) {
          std::vector<Tensor> losses;
          for (const auto& logits : net.forward_all_heads(batch.x, Mode::kTrain)) {
            losses.push_back(cross_entropy(logits, batch.y));
          }
          return mean_of(losses);
        });
    if (sink) {
      EpochMetrics m;
      m.depth = full;
      m.epoch = epoch;
      m.phase = Phase::kWarmup;
      m.train_loss = train_loss;
      if (val) {
        const auto r = evaluate(net, full, *val, config.batch_size);
        m.val_accuracy = r.accuracy;
        m.val_loss = r.loss;
      }
      m.lr = config.warmup_lr;
      m.seconds = seconds_since(start);
      sink->on_epoch(m);
    }
  }
  reset_momentum(params);
  return net.state_dict();
}

DepthOutcome train_depth_to_convergence(DepthPartitionedNetwork& net, int depth, const Dataset& train,
                                        const Dataset& val, const SearchConfig& config, MetricsSink* sink,
                                        const DepthTrainingOptions& options) {
  train.validate();
  val.validate();
  net.activate_depth(depth);
  const auto params = net.trainable_parameters();
  reset_momentum(params);

  auto tracker = ConvergenceTracker::fresh(config);
  std::optional<StateDict> best;
  if (options.initial_best) {
    tracker.best_accuracy = *options.initial_best;
    best = net.state_dict();
  }

  DepthOutcome outcome;
  outcome.depth = depth;
  const auto seed = stream_seed(config, options.phase, depth);
  for (int epoch = 1; epoch <= config.max_epochs_per_depth; ++epoch) {
    const auto start = Clock::now();
    const float lr = tracker.current_lr;
    const double train_loss =
        run_epoch(train, config, seed, epoch, params, lr, options.phase, depth, [&](const Batch& batch) {
          return cross_entropy(net.forward_at_depth(batch.x, depth, Mode::kTrain), batch.y);
        });
    const auto result = evaluate(net, depth, val, config.batch_size);
    const auto action = observe_epoch(tracker, result.accuracy, config);
    outcome.epochs_trained = epoch;
    outcome.lr_trace.push_back(lr);
    if (tracker.improved) best = net.state_dict();
    if (sink) {
      EpochMetrics m;
      m.depth = depth;
      m.epoch = epoch;
      m.phase = options.phase;
      m.train_loss = train_loss;
      m.val_accuracy = result.accuracy;
      m.val_loss = result.loss;
      m.lr = lr;
      m.seconds = seconds_since(start);
      sink->on_epoch(m);
    }
    if (options.stop_at_target && tracker.best_accuracy >= config.target_accuracy) {
      outcome.target_met = true;
      break;
    }
    if (action == EpochAction::kConverged) {
      outcome.converged = true;
      break;
    }
  }
  outcome.best_val_accuracy = tracker.best_accuracy;
  outcome.target_met = tracker.best_accuracy >= config.target_accuracy;
  if (best) net.load_state_dict(*best);
  return outcome;
}

void enter_depth(DepthPartitionedNetwork& net, int depth, const StateDict& warm, const SearchConfig& config) {
  net.load_state_dict(warm);
  if (config.transition == DepthTransition::kRandomNewLevel && depth > config.initial_depth) {
    net.reinitialize_level(depth, mix_seed(config.seed, 0xab1a7eull + static_cast<std::uint64_t>(depth)));
  }
}

SearchResult search(DepthPartitionedNetwork& net, const Dataset& train, const Dataset& val,
                    const SearchConfig& config, const StateDict& warm, MetricsSink* sink) {
  config.validate(net.max_depth());
  const int final = config.resolved_final_depth(net.max_depth());
  SearchResult result;
  for (int depth = config.initial_depth; depth <= final; ++depth) {
    enter_depth(net, depth, warm, config);
    auto outcome = train_depth_to_convergence(net, depth, train, val, config, sink);
    result.total_epochs += outcome.epochs_trained;
    result.per_depth_history.push_back(outcome);
    if (sink) sink->on_depth_complete(outcome, net);
    if (outcome.best_val_accuracy >= config.target_accuracy) {
      result.optimal_depth = depth;
      result.target_reached = true;
      return result;
    }
  }
  result.optimal_depth = final;
  result.target_reached = false;
  return result;
}

double finetune(DepthPartitionedNetwork& net, int depth, const Dataset& train, const Dataset& val,
                const SearchConfig& config, MetricsSink* sink) {
  DepthTrainingOptions options;
  options.phase = Phase::kFinetune;
  options.stop_at_target = false;
  options.initial_best = evaluate(net, depth, val, config.batch_size).accuracy;
  return train_depth_to_convergence(net, depth, train, val, config, sink, options).best_val_accuracy;
}

}  // namespace odn
