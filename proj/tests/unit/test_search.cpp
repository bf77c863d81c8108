#include <gtest/gtest.h>

#include <cmath>

#include "odn/error.hpp"
#include "odn/search.hpp"

namespace odn {
namespace {

struct RecordingSink : MetricsSink {
  std::vector<EpochMetrics> epochs;
  std::vector<DepthOutcome> depths;
  void on_epoch(const EpochMetrics& m) override { epochs.push_back(m); }
  void on_depth_complete(const DepthOutcome& o, const DepthPartitionedNetwork&) override { depths.push_back(o); }
};

// Drives one scripted plateau: improve once, then `stale` equal readings.
std::vector<std::pair<EpochAction, float>> plateau(int stale, const SearchConfig& config) {
  auto tracker = ConvergenceTracker::fresh(config);
  std::vector<std::pair<EpochAction, float>> out;
  out.emplace_back(observe_epoch(tracker, 0.5, config), tracker.current_lr);
  for (int i = 0; i < stale; ++i) out.emplace_back(observe_epoch(tracker, 0.5, config), tracker.current_lr);
  return out;
}

TEST(Convergence, DecaysAtFiveTenFifteenTwentyAndStopsAtTwentyThree) {
  const SearchConfig config;
  const auto trace = plateau(23, config);
  EXPECT_EQ(trace[0].first, EpochAction::kContinue);
  const std::vector<float> expected_lr = {0.1f, 0.06f, 0.036f, 0.0216f, 0.01296f};
  std::vector<float> lrs = {0.1f};
  for (int k = 1; k <= 23; ++k) {
    const auto action = trace[static_cast<std::size_t>(k)].first;
    if (k == 23) {
      EXPECT_EQ(action, EpochAction::kConverged);
    } else if (k % 5 == 0) {
      EXPECT_EQ(action, EpochAction::kDecayLr) << k;
      lrs.push_back(trace[static_cast<std::size_t>(k)].second);
    } else {
      EXPECT_EQ(action, EpochAction::kContinue) << k;
    }
  }
  ASSERT_EQ(lrs.size(), expected_lr.size());
  for (std::size_t i = 0; i < lrs.size(); ++i) EXPECT_NEAR(lrs[i], expected_lr[i], 1e-7) << i;
}

TEST(Convergence, StrictImprovementResetsCounterButKeepsLr) {
  const SearchConfig config;
  auto tracker = ConvergenceTracker::fresh(config);
  observe_epoch(tracker, 0.5, config);
  for (int i = 0; i < 7; ++i) observe_epoch(tracker, 0.4, config);
  EXPECT_EQ(tracker.no_improve_epochs, 7);
  EXPECT_FLOAT_EQ(tracker.current_lr, 0.06f);
  observe_epoch(tracker, 0.5, config);  // equal is not an improvement
  EXPECT_EQ(tracker.no_improve_epochs, 8);
  EXPECT_EQ(observe_epoch(tracker, 0.51, config), EpochAction::kContinue);
  EXPECT_TRUE(tracker.improved);
  EXPECT_EQ(tracker.no_improve_epochs, 0);
  EXPECT_DOUBLE_EQ(tracker.best_accuracy, 0.51);
  EXPECT_FLOAT_EQ(tracker.current_lr, 0.06f);
  // The next decay needs five fresh stale epochs.
  for (int i = 0; i < 4; ++i) EXPECT_EQ(observe_epoch(tracker, 0.1, config), EpochAction::kContinue);
  EXPECT_EQ(observe_epoch(tracker, 0.1, config), EpochAction::kDecayLr);
  EXPECT_FLOAT_EQ(tracker.current_lr, 0.036f);
}

TEST(Convergence, ExhaustiveResetPositions) {
  // For every reset position r in 1..22, convergence comes exactly 23 stale
  // epochs after the last improvement.
  const SearchConfig config;
  for (int r = 1; r <= 22; ++r) {
    auto tracker = ConvergenceTracker::fresh(config);
    observe_epoch(tracker, 0.5, config);
    for (int i = 0; i < r; ++i) observe_epoch(tracker, 0.5, config);
    observe_epoch(tracker, 0.6, config);
    int epochs = 0;
    EpochAction action = EpochAction::kContinue;
    while (action != EpochAction::kConverged) {
      action = observe_epoch(tracker, 0.59, config);
      ++epochs;
      ASSERT_LE(epochs, 23);
    }
    EXPECT_EQ(epochs, 23) << r;
  }
}

TEST(Convergence, FirstReadingOfZeroIsStale) {
  const SearchConfig config;
  auto tracker = ConvergenceTracker::fresh(config);
  observe_epoch(tracker, 0.0, config);
  EXPECT_FALSE(tracker.improved);
  EXPECT_EQ(tracker.no_improve_epochs, 1);
}

TEST(SearchConfig, Validation) {
  auto bad = [](auto mutate) {
    SearchConfig c;
    mutate(c);
    try {
      c.validate(8);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kConfig;
    }
    return false;
  };
  EXPECT_NO_THROW(SearchConfig{}.validate(8));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.initial_depth = 0; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.initial_depth = 5, c.final_depth = 4; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.final_depth = 9; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.warmup_epochs = -1; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.base_lr = 0.0f; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.warmup_lr = -1.0f; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.target_accuracy = std::nan(""); }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.stop_epochs = 0; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.lr_decay_factor = 1.0f; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.lr_decay_interval = 24; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.batch_size = 0; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.max_epochs_per_depth = 0; }));
  EXPECT_TRUE(bad([](SearchConfig& c) { c.optimizer.momentum = 1.5f; }));
}

// Tiny end-to-end fixtures: 4-class texture images through a narrow network.
struct TinyProblem {
  Dataset train, val;
  SearchConfig config;
  NetworkSpec spec;

  explicit TinyProblem(Difficulty difficulty = Difficulty::kEasy) {
    SynthSpec s;
    s.samples_per_class = 16;
    s.image_size = 8;
    s.difficulty = difficulty;
    const auto parts = split(synthesize(s), 0.25, 0);
    train = parts.train;
    val = parts.val;
    spec.num_classes = 4;
    spec.width_multiplier = 0.0625;
    config.warmup_epochs = 1;
    config.batch_size = 16;
    config.final_depth = 3;
    config.stop_epochs = 2;
    config.lr_decay_interval = 1;
    config.max_epochs_per_depth = 4;
  }
};

TEST(Search, WarmupTouchesEveryHeadAndReports) {
  TinyProblem p;
  p.config.warmup_epochs = 2;
  DepthPartitionedNetwork net(p.spec, 0);
  const auto before = net.state_dict();
  RecordingSink sink;
  const auto warm = warmup(net, p.train, p.config, &sink, &p.val);
  ASSERT_EQ(sink.epochs.size(), 2u);
  EXPECT_EQ(sink.epochs[1].phase, Phase::kWarmup);
  EXPECT_EQ(sink.epochs[1].depth, 8);
  EXPECT_FLOAT_EQ(sink.epochs[1].lr, p.config.warmup_lr);
  EXPECT_EQ(warm.hash(), net.state_dict().hash());
  for (int d = 1; d <= 8; ++d) {
    const auto name = "heads." + std::to_string(d) + ".weight";
    const auto* a = before.find(name);
    const auto* b = warm.find(name);
    EXPECT_FALSE(std::equal(a->tensor.data().begin(), a->tensor.data().end(), b->tensor.data().begin())) << name;
  }
}

TEST(Search, ZeroTargetStopsAtInitialDepth) {
  TinyProblem p;
  p.config.target_accuracy = 0.0;
  p.config.initial_depth = 2;
  DepthPartitionedNetwork net(p.spec, 0);
  const auto warm = warmup(net, p.train, p.config);
  RecordingSink sink;
  const auto r = search(net, p.train, p.val, p.config, warm, &sink);
  EXPECT_EQ(r.optimal_depth, 2);
  EXPECT_TRUE(r.target_reached);
  ASSERT_EQ(r.per_depth_history.size(), 1u);
  EXPECT_EQ(r.per_depth_history[0].epochs_trained, 1);
  EXPECT_EQ(sink.depths.size(), 1u);
}

TEST(Search, UnreachableTargetClampsToFinalDepth) {
  TinyProblem p;
  p.config.target_accuracy = 1.5;
  DepthPartitionedNetwork net(p.spec, 0);
  const auto warm = warmup(net, p.train, p.config);
  RecordingSink sink;
  const auto r = search(net, p.train, p.val, p.config, warm, &sink);
  EXPECT_EQ(r.optimal_depth, 3);
  EXPECT_FALSE(r.target_reached);
  ASSERT_EQ(r.per_depth_history.size(), 3u);
  int total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& h = r.per_depth_history[i];
    EXPECT_EQ(h.depth, static_cast<int>(i) + 1);
    EXPECT_FALSE(h.target_met);
    EXPECT_LE(h.epochs_trained, p.config.max_epochs_per_depth);
    EXPECT_EQ(h.lr_trace.size(), static_cast<std::size_t>(h.epochs_trained));
    EXPECT_FLOAT_EQ(h.lr_trace.front(), p.config.base_lr);
    total += h.epochs_trained;
  }
  EXPECT_EQ(r.total_epochs, total);
  EXPECT_EQ(static_cast<int>(sink.epochs.size()), total);
  for (const auto& m : sink.epochs) EXPECT_EQ(m.phase, Phase::kSearch);
}

TEST(Search, IsDeterministicForAFixedSeed) {
  auto run = [] {
    TinyProblem p;
    p.config.target_accuracy = 1.5;
    p.config.final_depth = 2;
    DepthPartitionedNetwork net(p.spec, 3);
    const auto warm = warmup(net, p.train, p.config);
    RecordingSink sink;
    search(net, p.train, p.val, p.config, warm, &sink);
    return std::make_pair(sink.epochs, net.state_dict().hash());
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i) {
    EXPECT_EQ(a.first[i].train_loss, b.first[i].train_loss);
    EXPECT_EQ(a.first[i].val_accuracy, b.first[i].val_accuracy);
  }
  EXPECT_EQ(a.second, b.second);
}

TEST(Search, TrainingLeavesTheBestSnapshotLoaded) {
  TinyProblem p;
  p.config.target_accuracy = 1.5;
  p.config.max_epochs_per_depth = 5;
  p.config.stop_epochs = 5;
  DepthPartitionedNetwork net(p.spec, 1);
  RecordingSink sink;
  const auto outcome = train_depth_to_convergence(net, 1, p.train, p.val, p.config, &sink);
  double best = 0.0;
  for (const auto& m : sink.epochs) best = std::max(best, m.val_accuracy);
  EXPECT_DOUBLE_EQ(outcome.best_val_accuracy, best);
  EXPECT_DOUBLE_EQ(evaluate(net, 1, p.val, 16).accuracy, best);
}

TEST(Search, FinetuneNeverLosesValidationAccuracy) {
  TinyProblem p;
  DepthPartitionedNetwork net(p.spec, 2);
  const double start = evaluate(net, 2, p.val, 16).accuracy;
  const double after = finetune(net, 2, p.train, p.val, p.config);
  EXPECT_GE(after, start);
  EXPECT_DOUBLE_EQ(evaluate(net, 2, p.val, 16).accuracy, after);
}

TEST(Search, RandomNewLevelChangesOnlyLevelsAfterTheFirst) {
  auto run = [](DepthTransition transition) {
    TinyProblem p;
    p.config.target_accuracy = 1.5;
    p.config.final_depth = 2;
    p.config.max_epochs_per_depth = 1;
    p.config.transition = transition;
    DepthPartitionedNetwork net(p.spec, 0);
    const auto warm = warmup(net, p.train, p.config);
    RecordingSink sink;
    search(net, p.train, p.val, p.config, warm, &sink);
    return sink.epochs;
  };
  const auto warm = run(DepthTransition::kWarmStart), ablation = run(DepthTransition::kRandomNewLevel);
  ASSERT_EQ(warm.size(), 2u);
  ASSERT_EQ(ablation.size(), 2u);
  // Depth 1 never re-initializes (there is no newly added level yet).
  EXPECT_EQ(warm[0].train_loss, ablation[0].train_loss);
  EXPECT_NE(warm[1].train_loss, ablation[1].train_loss);
}

TEST(Search, DivergenceIsReported) {
  TinyProblem p;
  p.config.base_lr = 1e30f;
  p.config.optimizer.weight_decay = 0.0f;
  DepthPartitionedNetwork net(p.spec, 0);
  try {
    train_depth_to_convergence(net, 1, p.train, p.val, p.config);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Evaluate, MultiHeadLossIsMeanOfHeads) {
  TinyProblem p;
  DepthPartitionedNetwork net(p.spec, 0);
  double total = 0.0;
  for (int d = 1; d <= 8; ++d) total += evaluate(net, d, p.val, 16).loss;
  EXPECT_NEAR(multi_head_loss(net, p.val, 16, Mode::kEval), total / 8.0, 1e-5);
}

}  // namespace
}  // namespace odn
