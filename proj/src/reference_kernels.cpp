#include "odn/reference_kernels.hpp"

#include <vector>

namespace odn::reference {

namespace {

std::size_t at(std::int64_t i) { return static_cast<std::size_t>(i); }

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<float> output) {
  const auto ho = g.out_height(), wo = g.out_width();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < g.in_channels; ++c) {
            for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
              const auto iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) continue;
              for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                const auto ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= g.width) continue;
                acc += static_cast<double>(input[at(((n * g.in_channels + c) * g.height + iy) * g.width + ix)]) *
                       weight[at(((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx)];
              }
            }
          }
          output[at(((n * g.out_channels + o) * ho + oy) * wo + ox)] = static_cast<float>(acc);
        }
      }
    }
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weight, std::span<float> grad_input) {
  const auto ho = g.out_height(), wo = g.out_width();
  std::vector<double> acc(at(g.input_size()), 0.0);
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < g.out_channels; ++o)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const double go = grad_output[at(((n * g.out_channels + o) * ho + oy) * wo + ox)];
          for (std::int64_t c = 0; c < g.in_channels; ++c)
            for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
              const auto iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) continue;
              for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                const auto ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= g.width) continue;
                acc[at(((n * g.in_channels + c) * g.height + iy) * g.width + ix)] +=
                    go * weight[at(((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx)];
              }
            }
        }
  for (std::size_t i = 0; i < acc.size(); ++i) grad_input[i] += static_cast<float>(acc[i]);
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const float> input,
                            std::span<const float> grad_output, std::span<float> grad_weight) {
  const auto ho = g.out_height(), wo = g.out_width();
  for (std::int64_t o = 0; o < g.out_channels; ++o)
    for (std::int64_t c = 0; c < g.in_channels; ++c)
      for (std::int64_t ky = 0; ky < g.kernel; ++ky)
        for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.batch; ++n)
            for (std::int64_t oy = 0; oy < ho; ++oy) {
              const auto iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) continue;
              for (std::int64_t ox = 0; ox < wo; ++ox) {
                const auto ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= g.width) continue;
                acc += static_cast<double>(grad_output[at(((n * g.out_channels + o) * ho + oy) * wo + ox)]) *
                       input[at(((n * g.in_channels + c) * g.height + iy) * g.width + ix)];
              }
            }
          grad_weight[at(((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx)] += static_cast<float>(acc);
        }
}

void batch_norm_statistics(const BatchNormGeometry& g, std::span<const float> input, std::span<float> mean,
                           std::span<float> variance) {
  const double count = static_cast<double>(g.batch * g.spatial);
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t s = 0; s < g.spatial; ++s) sum += input[at((n * g.channels + c) * g.spatial + s)];
    const double m = sum / count;
    double sq = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const double d = input[at((n * g.channels + c) * g.spatial + s)] - m;
        sq += d * d;
      }
    mean[at(c)] = static_cast<float>(m);
    variance[at(c)] = static_cast<float>(sq / count);
  }
}

void batch_norm_apply(const BatchNormGeometry& g, std::span<const float> input, std::span<const float> mean,
                      std::span<const float> inv_std, std::span<const float> gamma, std::span<const float> beta,
                      std::span<float> output) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t c = 0; c < g.channels; ++c)
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const auto i = at((n * g.channels + c) * g.spatial + s);
        output[i] = gamma[at(c)] * ((input[i] - mean[at(c)]) * inv_std[at(c)]) + beta[at(c)];
      }
}

void batch_norm_backward_train(const BatchNormGeometry& g, std::span<const float> input,
                               std::span<const float> mean, std::span<const float> inv_std,
                               std::span<const float> gamma, std::span<const float> grad_output,
                               std::span<float> grad_input, std::span<float> grad_gamma,
                               std::span<float> grad_beta) {
  const double count = static_cast<double>(g.batch * g.spatial);
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const auto i = at((n * g.channels + c) * g.spatial + s);
        const double xhat = (static_cast<double>(input[i]) - mean[at(c)]) * inv_std[at(c)];
        sum_dy += grad_output[i];
        sum_dy_xhat += grad_output[i] * xhat;
      }
    if (!grad_gamma.empty()) grad_gamma[at(c)] += static_cast<float>(sum_dy_xhat);
    if (!grad_beta.empty()) grad_beta[at(c)] += static_cast<float>(sum_dy);
    if (grad_input.empty()) continue;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const auto i = at((n * g.channels + c) * g.spatial + s);
        const double xhat = (static_cast<double>(input[i]) - mean[at(c)]) * inv_std[at(c)];
        const double v = grad_output[i] - sum_dy / count - xhat * sum_dy_xhat / count;
        grad_input[i] += static_cast<float>(gamma[at(c)] * inv_std[at(c)] * v);
      }
  }
}

void linear_forward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < g.out_features; ++o) {
      double acc = bias[at(o)];
      for (std::int64_t f = 0; f < g.in_features; ++f)
        acc += static_cast<double>(input[at(n * g.in_features + f)]) * weight[at(o * g.in_features + f)];
      output[at(n * g.out_features + o)] = static_cast<float>(acc);
    }
}

void linear_backward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_output, std::span<float> grad_input,
                     std::span<float> grad_weight, std::span<float> grad_bias) {
  if (!grad_input.empty()) {
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t f = 0; f < g.in_features; ++f) {
        double acc = 0.0;
        for (std::int64_t o = 0; o < g.out_features; ++o)
          acc += static_cast<double>(grad_output[at(n * g.out_features + o)]) * weight[at(o * g.in_features + f)];
        grad_input[at(n * g.in_features + f)] += static_cast<float>(acc);
      }
  }
  if (!grad_weight.empty()) {
    for (std::int64_t o = 0; o < g.out_features; ++o)
      for (std::int64_t f = 0; f < g.in_features; ++f) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < g.batch; ++n)
          acc += static_cast<double>(grad_output[at(n * g.out_features + o)]) * input[at(n * g.in_features + f)];
        grad_weight[at(o * g.in_features + f)] += static_cast<float>(acc);
      }
  }
  if (!grad_bias.empty()) {
    for (std::int64_t o = 0; o < g.out_features; ++o) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < g.batch; ++n) acc += grad_output[at(n * g.out_features + o)];
      grad_bias[at(o)] += static_cast<float>(acc);
    }
  }
}

}  // namespace odn::reference
