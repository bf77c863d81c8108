#include <gtest/gtest.h>

#include <sstream>

#include "odn/error.hpp"
#include "odn/run.hpp"
#include "odn/run_config.hpp"

namespace odn {
namespace {

ErrorCode parse_error(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kShapeMismatch;
}

TEST(RunConfig, ParsesKeysCommentsAndWhitespace) {
  const auto c = parse_run_config(R"(
# a comment
dataset = synth-hard
arch=resnet50   # trailing comment
width_multiplier = 0.5
target_accuracy = 0.8
initial_depth = 2
final_depth = 4
transition = random_new_level
report_formats = table,csv,jsonl
momentum = 0.5
finetune = false
)");
  EXPECT_EQ(c.data.dataset, "synth-hard");
  EXPECT_EQ(c.arch, Arch::kResNet50);
  EXPECT_DOUBLE_EQ(c.width_multiplier, 0.5);
  EXPECT_DOUBLE_EQ(c.search.target_accuracy, 0.8);
  EXPECT_EQ(c.search.initial_depth, 2);
  EXPECT_EQ(c.search.final_depth, 4);
  EXPECT_EQ(c.search.transition, DepthTransition::kRandomNewLevel);
  EXPECT_EQ(c.report_formats.size(), 3u);
  EXPECT_FLOAT_EQ(c.search.optimizer.momentum, 0.5f);
  EXPECT_FALSE(c.finetune);
}

TEST(RunConfig, DefaultsFollowTheTrainingRecipe) {
  const auto c = parse_run_config("");
  EXPECT_EQ(c.search.stop_epochs, 23);
  EXPECT_FLOAT_EQ(c.search.lr_decay_factor, 0.6f);
  EXPECT_EQ(c.search.lr_decay_interval, 5);
  EXPECT_FLOAT_EQ(c.search.optimizer.momentum, 0.9f);
  EXPECT_FLOAT_EQ(c.search.optimizer.weight_decay, 5e-4f);
}

TEST(RunConfig, Errors) {
  EXPECT_EQ(parse_error("nonsense = 1"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("seed = 1\nseed = 2"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("seed = abc"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("batch_size = 12x"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("just a line"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("base_lr = -1"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("transition = sideways"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("finetune = maybe"), ErrorCode::kConfig);
  EXPECT_EQ(parse_error("arch = vgg"), ErrorCode::kConfig);
  try {
    load_run_config("/nonexistent/odn.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(RunConfig, SerializeRoundTrips) {
  auto c = parse_run_config("seed = 12345678901234\nwarmup_lr = 0.0123\ndataset = mnist\nval_fraction = 0.3\n");
  c.search.base_lr = 0.1f;
  c.width_multiplier = 1.0 / 3.0;
  const auto text = serialize_run_config(c);
  const auto back = parse_run_config(text);
  EXPECT_EQ(serialize_run_config(back), text);
  EXPECT_EQ(back.search.seed, 12345678901234u);
  EXPECT_EQ(back.width_multiplier, 1.0 / 3.0);
  EXPECT_EQ(back.search.warmup_lr, 0.0123f);
}

TEST(RunConfig, KeyReferenceListsEveryKey) {
  std::ostringstream os;
  describe_run_config_keys(os);
  const auto text = serialize_run_config(parse_run_config(""));
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto key = line.substr(0, line.find(' '));
    EXPECT_NE(os.str().find(key), std::string::npos) << key;
  }
}

TEST(RunConfig, SyntheticSourcesKeepTrainAndTestDisjoint) {
  DataConfig d;
  d.synth_samples_per_class = 6;
  d.synth_test_samples_per_class = 3;
  d.synth_image_size = 8;
  const auto [train, test] = load_sources(d);
  EXPECT_EQ(train.size(), 24);
  EXPECT_EQ(test.size(), 12);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(std::count(test.labels.begin(), test.labels.end(), c), 3);
}

TEST(RunConfig, MetadataCarriesNormalization) {
  RunConfig c;
  const ChannelStats stats{{0.25f, 0.5f}, {1.5f, 2.0f}};
  const auto back = stats_from_metadata(checkpoint_metadata(c, stats));
  EXPECT_EQ(back.mean, stats.mean);
  EXPECT_EQ(back.std, stats.std);
  EXPECT_TRUE(stats_from_metadata("{}").mean.empty());
}

}  // namespace
}  // namespace odn
