#pragma once

#include "odn/kernels.hpp"

// Straightforward serial loops with double accumulation. Slow; used to check
// the parallel kernels and as the benchmark baseline.

namespace odn::reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<float> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weight, std::span<float> grad_input);
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const float> input,
                            std::span<const float> grad_output, std::span<float> grad_weight);

void batch_norm_statistics(const BatchNormGeometry& g, std::span<const float> input, std::span<float> mean,
                           std::span<float> variance);
void batch_norm_apply(const BatchNormGeometry& g, std::span<const float> input, std::span<const float> mean,
                      std::span<const float> inv_std, std::span<const float> gamma, std::span<const float> beta,
                      std::span<float> output);
void batch_norm_backward_train(const BatchNormGeometry& g, std::span<const float> input,
                               std::span<const float> mean, std::span<const float> inv_std,
                               std::span<const float> gamma, std::span<const float> grad_output,
                               std::span<float> grad_input, std::span<float> grad_gamma,
                               std::span<float> grad_beta);

void linear_forward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void linear_backward(const LinearGeometry& g, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_output, std::span<float> grad_input,
                     std::span<float> grad_weight, std::span<float> grad_bias);

}  // namespace odn::reference
