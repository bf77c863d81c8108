#pragma once

#include <cstdint>
#include <span>

// Raw compute kernels over flat row-major buffers. The functions in
// odn::kernels are the OpenMP-parallel versions used in training; the ones in
// odn::reference (reference_kernels.hpp) are plain serial loops kept as the
// test oracle and benchmark baseline. Both share these geometry types.
//
// Parallel kernels only split work at boundaries that do not depend on the
// thread count, and every reduction runs in a fixed order, so outputs are
// bit-identical for any OMP_NUM_THREADS.
//
// Forward kernels overwrite their output. Backward kernels add into their
// gradient outputs, so callers start from zeroed buffers or from gradient
// already accumulated by other consumers.

namespace odn {

struct Conv2dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::int64_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::int64_t input_size() const { return batch * in_channels * height * width; }
  std::int64_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::int64_t output_size() const { return batch * out_channels * out_height() * out_width(); }
};

struct BatchNormGeometry {
  std::int64_t batch = 1;
  std::int64_t channels = 1;
  std::int64_t spatial = 1;  // H*W

  std::int64_t size() const { return batch * channels * spatial; }
};

struct LinearGeometry {
  std::int64_t batch = 1;
  std::int64_t in_features = 1;
  std::int64_t out_features = 1;
};

namespace kernels {

void conv2d_forward(const Conv2dGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<float> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weight, std::span<float> grad_input);
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const float> input,
                            std::span<const float> grad_output, std::span<float> grad_weight);

/// Per-channel batch mean and biased variance.
void batch_norm_statistics(const BatchNormGeometry& g, std::span<const float> input, std::span<float> mean,
                           std::span<float> variance);
/// y = gamma * (x - mean) * inv_std + beta
void batch_norm_apply(const BatchNormGeometry& g, std::span<const float> input, std::span<const float> mean,
                      std::span<const float> inv_std, std::span<const float> gamma, std::span<const float> beta,
                      std::span<float> output);
/// Backward through batch statistics (train mode). Any of the output spans
/// may be empty to skip that gradient.
void batch_norm_backward_train(const BatchNormGeometry& g, std::span<const float> input,
                               std::span<const float> mean, std::span<const float> inv_std,
                               std::span<const float> gamma, std::span<const float> grad_output,
                               std::span<float> grad_input, std::span<float> grad_gamma,
                               std::span<float> grad_beta);
/// Backward with fixed (running) statistics (eval mode).
void batch_norm_backward_eval(const BatchNormGeometry& g, std::span<const float> input,
                              std::span<const float> mean, std::span<const float> inv_std,
                              std::span<const float> gamma, std::span<const float> grad_output,
                              std::span<float> grad_input, std::span<float> grad_gamma,
                              std::span<float> grad_beta);

/// out[N,C] = in[N,F] * weight[C,F]^T + bias[C]
void linear_forward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void linear_backward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_output, std::span<float> grad_input,
                     std::span<float> grad_weight, std::span<float> grad_bias);

}  // namespace kernels

}  // namespace odn
