#include "odn/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace odn::kernels {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Samples per weight-gradient partial sum. Fixed so the reduction tree is the
// same for every thread count.
constexpr std::int64_t kWeightGradChunk = 16;

std::size_t at(std::int64_t i) { return static_cast<std::size_t>(i); }

bool is_pointwise(const Conv2dGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// Output columns [lo, hi) whose tap at kernel offset `k` lands inside a row
// of `extent` pixels.
struct ValidRange {
  std::int64_t lo;
  std::int64_t hi;
};

ValidRange valid_outputs(std::int64_t k, std::int64_t extent, std::int64_t out_extent, std::int64_t stride,
                         std::int64_t padding) {
  // ix = o * stride - padding + k must satisfy 0 <= ix < extent.
  const auto first = padding - k;
  std::int64_t lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const auto last = extent - 1 + padding - k;
  std::int64_t hi = last < 0 ? 0 : last / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

// Unfolds one sample [C,H,W] into columns [C*K*K, Ho*Wo].
void im2col(const Conv2dGeometry& g, const float* image, float* columns) {
  const auto ho = g.out_height(), wo = g.out_width();
  const auto k = g.kernel, s = g.stride;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    const float* plane = image + c * g.height * g.width;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      const auto rows = valid_outputs(ky, g.height, ho, s, g.padding);
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto cols = valid_outputs(kx, g.width, wo, s, g.padding);
        float* row = columns + ((c * k + ky) * k + kx) * ho * wo;
        std::fill(row, row + rows.lo * wo, 0.0f);
        for (std::int64_t oy = rows.lo; oy < rows.hi; ++oy) {
          float* out = row + oy * wo;
          const float* src = plane + (oy * s - g.padding + ky) * g.width - g.padding + kx;
          std::fill(out, out + cols.lo, 0.0f);
          if (s == 1) {
            std::copy(src + cols.lo, src + cols.hi, out + cols.lo);
          } else {
            for (std::int64_t ox = cols.lo; ox < cols.hi; ++ox) out[ox] = src[ox * s];
          }
          std::fill(out + cols.hi, out + wo, 0.0f);
        }
        std::fill(row + rows.hi * wo, row + ho * wo, 0.0f);
      }
    }
  }
}

// Adds columns back onto one sample, overlapping taps in a fixed
// (c, ky, kx, oy, ox) order.
void col2im(const Conv2dGeometry& g, const float* columns, float* image) {
  const auto ho = g.out_height(), wo = g.out_width();
  const auto k = g.kernel, s = g.stride;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    float* plane = image + c * g.height * g.width;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      const auto rows = valid_outputs(ky, g.height, ho, s, g.padding);
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto cols = valid_outputs(kx, g.width, wo, s, g.padding);
        const float* row = columns + ((c * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = rows.lo; oy < rows.hi; ++oy) {
          float* __restrict dst = plane + (oy * s - g.padding + ky) * g.width - g.padding + kx;
          const float* __restrict src = row + oy * wo;
          if (s == 1) {
            for (std::int64_t ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::int64_t ox = cols.lo; ox < cols.hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<float> output) {
  const auto spatial_out = g.out_height() * g.out_width();
  const auto patch = g.in_channels * g.kernel * g.kernel;
  const auto in_stride = g.in_channels * g.height * g.width;
  const auto out_stride = g.out_channels * spatial_out;
  ConstMatrixMap w(weight.data(), g.out_channels, patch);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    std::vector<float> columns(pointwise ? 0 : at(patch * spatial_out));
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* src = input.data() + n * in_stride;
      if (!pointwise) {
        im2col(g, src, columns.data());
        src = columns.data();
      }
      MatrixMap out(output.data() + n * out_stride, g.out_channels, spatial_out);
      out.noalias() = w * ConstMatrixMap(src, patch, spatial_out);
    }
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weight, std::span<float> grad_input) {
  const auto spatial_out = g.out_height() * g.out_width();
  const auto patch = g.in_channels * g.kernel * g.kernel;
  const auto in_stride = g.in_channels * g.height * g.width;
  const auto out_stride = g.out_channels * spatial_out;
  ConstMatrixMap w(weight.data(), g.out_channels, patch);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    std::vector<float> columns(pointwise ? 0 : at(patch * spatial_out));
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      ConstMatrixMap dy(grad_output.data() + n * out_stride, g.out_channels, spatial_out);
      float* dst = grad_input.data() + n * in_stride;
      if (pointwise) {
        MatrixMap(dst, patch, spatial_out).noalias() += w.transpose() * dy;
      } else {
        MatrixMap(columns.data(), patch, spatial_out).noalias() = w.transpose() * dy;
        col2im(g, columns.data(), dst);
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const float> input,
                            std::span<const float> grad_output, std::span<float> grad_weight) {
  const auto spatial_out = g.out_height() * g.out_width();
  const auto patch = g.in_channels * g.kernel * g.kernel;
  const auto in_stride = g.in_channels * g.height * g.width;
  const auto out_stride = g.out_channels * spatial_out;
  const auto chunks = (g.batch + kWeightGradChunk - 1) / kWeightGradChunk;
  const auto wsize = g.out_channels * patch;
  const bool pointwise = is_pointwise(g);
  std::vector<float> partials(at(chunks * wsize), 0.0f);

#pragma omp parallel
  {
    std::vector<float> columns(pointwise ? 0 : at(patch * spatial_out));
#pragma omp for schedule(static)
    for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
      MatrixMap acc(partials.data() + chunk * wsize, g.out_channels, patch);
      const auto end = std::min(g.batch, (chunk + 1) * kWeightGradChunk);
      for (std::int64_t n = chunk * kWeightGradChunk; n < end; ++n) {
        const float* src = input.data() + n * in_stride;
        if (!pointwise) {
          im2col(g, src, columns.data());
          src = columns.data();
        }
        ConstMatrixMap dy(grad_output.data() + n * out_stride, g.out_channels, spatial_out);
        acc.noalias() += dy * ConstMatrixMap(src, patch, spatial_out).transpose();
      }
    }
  }

  for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
    const float* p = partials.data() + chunk * wsize;
    for (std::int64_t i = 0; i < wsize; ++i) grad_weight[at(i)] += p[i];
  }
}

void batch_norm_statistics(const BatchNormGeometry& g, std::span<const float> input, std::span<float> mean,
                           std::span<float> variance) {
  const double count = static_cast<double>(g.batch * g.spatial);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* x = input.data() + (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) sum += x[s];
    }
    const double m = sum / count;
    double sq = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* x = input.data() + (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const double d = x[s] - m;
        sq += d * d;
      }
    }
    mean[at(c)] = static_cast<float>(m);
    variance[at(c)] = static_cast<float>(sq / count);
  }
}

void batch_norm_apply(const BatchNormGeometry& g, std::span<const float> input, std::span<const float> mean,
                      std::span<const float> inv_std, std::span<const float> gamma, std::span<const float> beta,
                      std::span<float> output) {
#pragma omp parallel for schedule(static) collapse(2)
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t c = 0; c < g.channels; ++c) {
      const float scale = gamma[at(c)] * inv_std[at(c)];
      const float shift = beta[at(c)] - mean[at(c)] * scale;
      const auto base = (n * g.channels + c) * g.spatial;
      const float* x = input.data() + base;
      float* y = output.data() + base;
      for (std::int64_t s = 0; s < g.spatial; ++s) y[s] = x[s] * scale + shift;
    }
  }
}

void batch_norm_backward_train(const BatchNormGeometry& g, std::span<const float> input,
                               std::span<const float> mean, std::span<const float> inv_std,
                               std::span<const float> gamma, std::span<const float> grad_output,
                               std::span<float> grad_input, std::span<float> grad_gamma,
                               std::span<float> grad_beta) {
  const double count = static_cast<double>(g.batch * g.spatial);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const double m = mean[at(c)];
    const double istd = inv_std[at(c)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const auto base = (n * g.channels + c) * g.spatial;
      const float* x = input.data() + base;
      const float* dy = grad_output.data() + base;
      double local_dy = 0.0, local_dyx = 0.0;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        local_dy += dy[s];
        local_dyx += static_cast<double>(dy[s]) * (x[s] - m);
      }
      sum_dy += local_dy;
      sum_dy_xhat += local_dyx * istd;
    }
    if (!grad_gamma.empty()) grad_gamma[at(c)] += static_cast<float>(sum_dy_xhat);
    if (!grad_beta.empty()) grad_beta[at(c)] += static_cast<float>(sum_dy);
    if (grad_input.empty()) continue;
    const float k = static_cast<float>(gamma[at(c)] * istd);
    const float mean_dy = static_cast<float>(sum_dy / count);
    const float coeff = static_cast<float>(sum_dy_xhat / count * istd);
    const float mf = static_cast<float>(m);
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const auto base = (n * g.channels + c) * g.spatial;
      const float* x = input.data() + base;
      const float* dy = grad_output.data() + base;
      float* dx = grad_input.data() + base;
      for (std::int64_t s = 0; s < g.spatial; ++s) dx[s] += k * (dy[s] - mean_dy - (x[s] - mf) * coeff);
    }
  }
}

void batch_norm_backward_eval(const BatchNormGeometry& g, std::span<const float> input,
                              std::span<const float> mean, std::span<const float> inv_std,
                              std::span<const float> gamma, std::span<const float> grad_output,
                              std::span<float> grad_input, std::span<float> grad_gamma,
                              std::span<float> grad_beta) {
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const double m = mean[at(c)];
    const double istd = inv_std[at(c)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    const float k = gamma[at(c)] * inv_std[at(c)];
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const auto base = (n * g.channels + c) * g.spatial;
      const float* x = input.data() + base;
      const float* dy = grad_output.data() + base;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        sum_dy += dy[s];
        sum_dy_xhat += static_cast<double>(dy[s]) * (x[s] - m) * istd;
      }
      if (!grad_input.empty()) {
        float* dx = grad_input.data() + base;
        for (std::int64_t s = 0; s < g.spatial; ++s) dx[s] += k * dy[s];
      }
    }
    if (!grad_gamma.empty()) grad_gamma[at(c)] += static_cast<float>(sum_dy_xhat);
    if (!grad_beta.empty()) grad_beta[at(c)] += static_cast<float>(sum_dy);
  }
}

void linear_forward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  ConstMatrixMap x(input.data(), g.batch, g.in_features);
  ConstMatrixMap w(weight.data(), g.out_features, g.in_features);
  MatrixMap y(output.data(), g.batch, g.out_features);
  y.noalias() = x * w.transpose();
  Eigen::Map<const Eigen::RowVectorXf> b(bias.data(), g.out_features);
  y.rowwise() += b;
}

void linear_backward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_output, std::span<float> grad_input,
                     std::span<float> grad_weight, std::span<float> grad_bias) {
  ConstMatrixMap x(input.data(), g.batch, g.in_features);
  ConstMatrixMap w(weight.data(), g.out_features, g.in_features);
  ConstMatrixMap dy(grad_output.data(), g.batch, g.out_features);
  if (!grad_input.empty()) MatrixMap(grad_input.data(), g.batch, g.in_features).noalias() += dy * w;
  if (!grad_weight.empty()) {
    MatrixMap(grad_weight.data(), g.out_features, g.in_features).noalias() += dy.transpose() * x;
  }
  if (!grad_bias.empty()) {
    for (std::int64_t o = 0; o < g.out_features; ++o) {
      float acc = 0.0f;
      for (std::int64_t n = 0; n < g.batch; ++n) acc += grad_output[at(n * g.out_features + o)];
      grad_bias[at(o)] += acc;
    }
  }
}

}  // namespace odn::kernels
