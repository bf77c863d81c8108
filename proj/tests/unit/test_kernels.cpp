#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "odn/kernels.hpp"
#include "odn/reference_kernels.hpp"

namespace odn {
namespace {

std::vector<float> randn(std::int64_t n, unsigned seed, float mean = 0.0f) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(mean, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(rng);
  return v;
}

void expect_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_NEAR(a[i], b[i], tol * std::max(1.0, std::abs(static_cast<double>(b[i])))) << "index " << i;
  }
}

// batch, in, hw, out, kernel, stride, padding
struct ConvCase {
  std::int64_t n, c, hw, o, k, s, p;
};

class ConvParity : public ::testing::TestWithParam<ConvCase> {
 protected:
  Conv2dGeometry geometry() const {
    const auto& c = GetParam();
    Conv2dGeometry g;
    g.batch = c.n;
    g.in_channels = c.c;
    g.height = g.width = c.hw;
    g.out_channels = c.o;
    g.kernel = c.k;
    g.stride = c.s;
    g.padding = c.p;
    return g;
  }
};

TEST_P(ConvParity, ForwardMatchesReference) {
  const auto g = geometry();
  const auto x = randn(g.input_size(), 1), w = randn(g.weight_size(), 2);
  std::vector<float> y(static_cast<std::size_t>(g.output_size()), 99.0f), r(y.size(), -99.0f);
  kernels::conv2d_forward(g, x, w, y);
  reference::conv2d_forward(g, x, w, r);
  expect_close(y, r, 1e-4);
}

TEST_P(ConvParity, BackwardMatchesReferenceAndAccumulates) {
  const auto g = geometry();
  const auto x = randn(g.input_size(), 3), w = randn(g.weight_size(), 4), gy = randn(g.output_size(), 5);
  // Start both from the same non-zero contents: backward kernels add.
  auto gx = randn(g.input_size(), 6), gx_ref = gx;
  auto gw = randn(g.weight_size(), 7), gw_ref = gw;
  kernels::conv2d_backward_input(g, gy, w, gx);
  reference::conv2d_backward_input(g, gy, w, gx_ref);
  kernels::conv2d_backward_weight(g, x, gy, gw);
  reference::conv2d_backward_weight(g, x, gy, gw_ref);
  expect_close(gx, gx_ref, 1e-4);
  expect_close(gw, gw_ref, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvParity,
                         ::testing::Values(ConvCase{2, 3, 8, 4, 3, 1, 1}, ConvCase{3, 4, 9, 5, 3, 2, 1},
                                           ConvCase{2, 4, 8, 6, 1, 1, 0}, ConvCase{2, 4, 8, 6, 1, 2, 0},
                                           ConvCase{1, 2, 5, 3, 3, 1, 0}, ConvCase{33, 2, 4, 2, 3, 1, 1},
                                           ConvCase{2, 3, 7, 2, 5, 2, 2}, ConvCase{1, 1, 1, 2, 3, 1, 1}));

TEST(ConvReference, HandComputedValue) {
  // 1x1x3x3 input, 1x1x2x2 all-ones kernel, no padding: sums of 2x2 windows.
  Conv2dGeometry g;
  g.height = g.width = 3;
  g.kernel = 2;
  const std::vector<float> x = {1, 2, 3, 4, 5, 6, 7, 8, 9}, w = {1, 1, 1, 1};
  std::vector<float> y(4), r(4);
  kernels::conv2d_forward(g, x, w, y);
  reference::conv2d_forward(g, x, w, r);
  EXPECT_EQ(y, (std::vector<float>{12, 16, 24, 28}));
  EXPECT_EQ(r, y);
}

TEST(BatchNormKernels, MatchReference) {
  const BatchNormGeometry g{5, 3, 7};
  const auto x = randn(g.size(), 1, 2.0f), gy = randn(g.size(), 2);
  std::vector<float> mean(3), var(3), mean_r(3), var_r(3);
  kernels::batch_norm_statistics(g, x, mean, var);
  reference::batch_norm_statistics(g, x, mean_r, var_r);
  expect_close(mean, mean_r, 1e-5);
  expect_close(var, var_r, 1e-5);

  std::vector<float> inv(3), gamma = {0.5f, 1.5f, -1.0f}, beta = {0.1f, 0.0f, 2.0f};
  for (int c = 0; c < 3; ++c) inv[c] = 1.0f / std::sqrt(var[c] + 1e-5f);
  std::vector<float> y(x.size()), y_r(x.size());
  kernels::batch_norm_apply(g, x, mean, inv, gamma, beta, y);
  reference::batch_norm_apply(g, x, mean, inv, gamma, beta, y_r);
  expect_close(y, y_r, 1e-5);

  auto gx = randn(g.size(), 3), gx_r = gx;
  std::vector<float> gg = {1, 2, 3}, gg_r = gg, gb = {-1, 0, 1}, gb_r = gb;
  kernels::batch_norm_backward_train(g, x, mean, inv, gamma, gy, gx, gg, gb);
  reference::batch_norm_backward_train(g, x, mean, inv, gamma, gy, gx_r, gg_r, gb_r);
  expect_close(gx, gx_r, 1e-4);
  expect_close(gg, gg_r, 1e-4);
  expect_close(gb, gb_r, 1e-4);
}

TEST(BatchNormKernels, EmptyOutputsAreSkipped) {
  const BatchNormGeometry g{2, 2, 3};
  const auto x = randn(g.size(), 1), gy = randn(g.size(), 2);
  std::vector<float> mean(2), var(2), inv(2), gamma = {1, 1};
  kernels::batch_norm_statistics(g, x, mean, var);
  for (int c = 0; c < 2; ++c) inv[c] = 1.0f / std::sqrt(var[c] + 1e-5f);
  std::vector<float> gx(g.size());
  kernels::batch_norm_backward_train(g, x, mean, inv, gamma, gy, gx, {}, {});
  kernels::batch_norm_backward_eval(g, x, mean, inv, gamma, gy, {}, {}, {});
  SUCCEED();
}

TEST(BatchNormKernels, EvalBackwardIsAffine) {
  // With fixed statistics, dx = gamma * inv_std * dy, dgamma = sum(dy * xhat), dbeta = sum(dy).
  const BatchNormGeometry g{3, 2, 4};
  const auto x = randn(g.size(), 4), gy = randn(g.size(), 5);
  const std::vector<float> mean = {0.3f, -0.2f}, inv = {1.5f, 0.5f}, gamma = {2.0f, -1.0f};
  std::vector<float> gx(g.size(), 1.0f), gg(2, 0.0f), gb(2, 0.0f);
  kernels::batch_norm_backward_eval(g, x, mean, inv, gamma, gy, gx, gg, gb);
  std::vector<double> egg(2, 0.0), egb(2, 0.0);
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t c = 0; c < 2; ++c) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const auto i = static_cast<std::size_t>((n * 2 + c) * g.spatial + s);
        EXPECT_NEAR(gx[i], 1.0f + gamma[c] * inv[c] * gy[i], 1e-5);
        egg[c] += gy[i] * (x[i] - mean[c]) * inv[c];
        egb[c] += gy[i];
      }
    }
  }
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(gg[c], egg[c], 1e-4);
    EXPECT_NEAR(gb[c], egb[c], 1e-4);
  }
}

TEST(LinearKernels, MatchReference) {
  const LinearGeometry g{6, 5, 4};
  const auto x = randn(30, 1), w = randn(20, 2), b = randn(4, 3), gy = randn(24, 4);
  std::vector<float> y(24), y_r(24);
  kernels::linear_forward(g, x, w, b, y);
  reference::linear_forward(g, x, w, b, y_r);
  expect_close(y, y_r, 1e-5);
  auto gx = randn(30, 5), gx_r = gx, gw = randn(20, 6), gw_r = gw, gb = randn(4, 7), gb_r = gb;
  kernels::linear_backward(g, x, w, gy, gx, gw, gb);
  reference::linear_backward(g, x, w, gy, gx_r, gw_r, gb_r);
  expect_close(gx, gx_r, 1e-5);
  expect_close(gw, gw_r, 1e-5);
  expect_close(gb, gb_r, 1e-5);
}

TEST(KernelDeterminism, BitIdenticalAcrossThreadCounts) {
  Conv2dGeometry g;
  g.batch = 37;
  g.in_channels = 8;
  g.height = g.width = 10;
  g.out_channels = 8;
  g.kernel = 3;
  g.padding = 1;
  const auto x = randn(g.input_size(), 1), w = randn(g.weight_size(), 2), gy = randn(g.output_size(), 3);
  const BatchNormGeometry bg{37, 8, 100};
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> y(static_cast<std::size_t>(g.output_size())), gx(static_cast<std::size_t>(g.input_size())),
        gw(static_cast<std::size_t>(g.weight_size()));
    kernels::conv2d_forward(g, x, w, y);
    kernels::conv2d_backward_input(g, gy, w, gx);
    kernels::conv2d_backward_weight(g, x, gy, gw);
    std::vector<float> mean(8), var(8), inv(8, 1.0f), gamma(8, 1.0f), gbn(y.size()), gg(8), gb(8);
    kernels::batch_norm_statistics(bg, y, mean, var);
    kernels::batch_norm_backward_train(bg, y, mean, inv, gamma, gy, gbn, gg, gb);
    std::vector<float> all;
    for (const auto* v : {&y, &gx, &gw, &mean, &var, &gbn, &gg, &gb}) all.insert(all.end(), v->begin(), v->end());
    return all;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1), three = run(3), four = run(4);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, three);
  EXPECT_EQ(one, four);
}

}  // namespace
}  // namespace odn
