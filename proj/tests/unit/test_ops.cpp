#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "odn/error.hpp"
#include "odn/ops.hpp"

namespace odn {
namespace {

using testing::gradcheck;
using testing::random_projection;
using testing::random_tensor;

constexpr double kTolerance = 1e-3;

TEST(Ops, ReluAndAdd) {
  auto a = Tensor::from({4}, {-1.0f, 0.0f, 2.0f, -3.0f});
  auto r = relu(a);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{0, 0, 2, 0}));
  auto s = add(a, a);
  EXPECT_EQ(s.at(2), 4.0f);
  EXPECT_FLOAT_EQ(sum(a).item(), -2.0f);
  EXPECT_FLOAT_EQ(mean_of({Tensor::scalar(1.0f), Tensor::scalar(4.0f)}).item(), 2.5f);
}

TEST(Ops, LinearAndPool) {
  auto x = Tensor::from({1, 2}, {1.0f, 2.0f});
  auto w = Tensor::from({2, 2}, {1.0f, 0.0f, 3.0f, -1.0f});
  auto b = Tensor::from({2}, {0.5f, 0.0f});
  auto y = linear(x, w, b);
  EXPECT_FLOAT_EQ(y.at(0), 1.5f);
  EXPECT_FLOAT_EQ(y.at(1), 1.0f);
  auto img = Tensor::from({1, 2, 1, 2}, {1.0f, 3.0f, -2.0f, 4.0f});
  auto p = global_avg_pool(img);
  EXPECT_EQ(p.shape(), (Shape{1, 2}));
  EXPECT_FLOAT_EQ(p.at(0), 2.0f);
  EXPECT_FLOAT_EQ(p.at(1), 1.0f);
}

TEST(Ops, CrossEntropyMatchesLogSumExp) {
  auto logits = Tensor::from({2, 3}, {1.0f, 2.0f, 3.0f, 1000.0f, 0.0f, -1000.0f});
  const std::vector<std::int32_t> labels = {2, 1};
  const double row0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double row1 = 1000.0;  // stable even for huge logits
  EXPECT_NEAR(cross_entropy(logits, labels).item(), (row0 + row1) / 2.0, 1e-3);
  EXPECT_EQ(argmax_rows(Tensor::from({2, 3}, {1, 5, 5, 0, 0, 0})), (std::vector<std::int32_t>{1, 0}));
}

TEST(Ops, Errors) {
  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kConfig;
  };
  EXPECT_EQ(code([] { conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 1); }),
            ErrorCode::kShapeMismatch);
  EXPECT_EQ(code([] { conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), 0, 1); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(code([] { conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), 1, 1); }),
            ErrorCode::kShapeMismatch);
  EXPECT_EQ(code([] { cross_entropy(Tensor::zeros({2, 3}), std::vector<std::int32_t>{0, 3}); }),
            ErrorCode::kOutOfRange);
  EXPECT_EQ(code([] { cross_entropy(Tensor::zeros({2, 3}), std::vector<std::int32_t>{0}); }),
            ErrorCode::kShapeMismatch);
  EXPECT_EQ(code([] { add(Tensor::zeros({2}), Tensor::zeros({3})); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code([] { mean_of({}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code([] {
              Tensor rm, rv;
              batch_norm(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({2}), Tensor::zeros({2}), rm, rv, Mode::kTrain);
            }),
            ErrorCode::kUninitializedBuffer);
}

TEST(Ops, BatchNormRunningStatsUseUnbiasedVariance) {
  auto x = Tensor::from({2, 1, 1, 2}, {1.0f, 2.0f, 3.0f, 6.0f});
  auto gamma = Tensor::full({1}, 1.0f), beta = Tensor::zeros({1});
  auto rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0f);
  auto y = batch_norm(x, gamma, beta, rm, rv, Mode::kTrain, 0.1f);
  // mean 3, biased var 3.5, unbiased 14/3
  EXPECT_NEAR(rm.at(0), 0.3f, 1e-6);
  EXPECT_NEAR(rv.at(0), 0.9f + 0.1f * 14.0f / 3.0f, 1e-6);
  EXPECT_NEAR(y.at(0), (1.0f - 3.0f) / std::sqrt(3.5f + 1e-5f), 1e-5);
  auto e = batch_norm(x, gamma, beta, rm, rv, Mode::kEval);
  EXPECT_NEAR(e.at(0), (1.0f - rm.at(0)) / std::sqrt(rv.at(0) + 1e-5f), 1e-5);
}

// Each primitive against central differences on several seeds.
class OpGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradients, Conv2d) {
  const auto seed = GetParam();
  auto x = random_tensor({2, 3, 5, 5}, seed, 1.0f, true);
  auto w = random_tensor({4, 3, 3, 3}, seed + 100, 0.3f, true);
  const int stride = 1 + static_cast<int>(seed % 2);
  const auto r = gradcheck(
      [&](const std::vector<Tensor>& in) { return random_projection(conv2d(in[0], in[1], stride, 1), seed); }, {x, w});
  EXPECT_LT(r.max_relative_error, kTolerance) << r.worst;
}

TEST_P(OpGradients, BatchNormTrainAndEval) {
  const auto seed = GetParam();
  auto x = random_tensor({3, 2, 3, 3}, seed, 2.0f, true);
  auto gamma = random_tensor({2}, seed + 1, 1.0f, true);
  auto beta = random_tensor({2}, seed + 2, 1.0f, true);
  for (auto mode : {Mode::kTrain, Mode::kEval}) {
    auto rm = random_tensor({2}, seed + 3, 0.1f), rv = Tensor::full({2}, 1.5f);
    const auto r = gradcheck(
        [&](const std::vector<Tensor>& in) {
          auto m = rm.clone(), v = rv.clone();
          return random_projection(batch_norm(in[0], in[1], in[2], m, v, mode), seed);
        },
        {x, gamma, beta});
    EXPECT_LT(r.max_relative_error, kTolerance) << (mode == Mode::kTrain ? "train " : "eval ") << r.worst;
  }
}

TEST_P(OpGradients, ReluLinearPoolAdd) {
  const auto seed = GetParam();
  auto x = random_tensor({3, 4, 2, 2}, seed, 1.0f, true);
  testing::push_away_from_zero(x, 0.05f);
  auto w = random_tensor({5, 4}, seed + 1, 0.5f, true);
  auto b = random_tensor({5}, seed + 2, 0.5f, true);
  const auto r = gradcheck(
      [&](const std::vector<Tensor>& in) {
        return random_projection(linear(global_avg_pool(relu(add(in[0], in[0]))), in[1], in[2]), seed);
      },
      {x, w, b}, {.step = 1e-3});
  EXPECT_LT(r.max_relative_error, kTolerance) << r.worst;
}

TEST_P(OpGradients, CrossEntropyAndMeanOf) {
  const auto seed = GetParam();
  auto a = random_tensor({4, 6}, seed, 2.0f, true);
  auto b = random_tensor({4, 6}, seed + 1, 2.0f, true);
  const std::vector<std::int32_t> labels = {0, 5, 2, static_cast<std::int32_t>(seed % 6)};
  const auto r = gradcheck(
      [&](const std::vector<Tensor>& in) {
        return mean_of({cross_entropy(in[0], labels), cross_entropy(in[1], labels), sum(in[1])});
      },
      {a, b}, {.step = 1e-3});
  EXPECT_LT(r.max_relative_error, kTolerance) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range<std::uint64_t>(0, 5));

}  // namespace
}  // namespace odn
