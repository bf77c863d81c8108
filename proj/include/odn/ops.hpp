#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "odn/tensor.hpp"

// Differentiable primitives. Each records a backward closure when grad mode
// is on and at least one input requires grad.

namespace odn {

enum class Mode { kTrain, kEval };

inline constexpr float kBatchNormEpsilon = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

/// input [N,C,H,W], weight [O,C,K,K] -> [N,O,Ho,Wo]
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding);

/// Per-channel normalization over (N,H,W). Train mode normalizes by batch
/// statistics and blends them into the running buffers (unbiased variance);
/// eval mode uses the running buffers as-is. Running buffers are updated in
/// place through their shared storage.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, Mode mode, float momentum = kBatchNormMomentum,
                  float epsilon = kBatchNormEpsilon);

Tensor relu(const Tensor& input);

/// input [N,F], weight [C,F], bias [C] -> [N,C]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);

/// Scalar sum of all elements.
Tensor sum(const Tensor& input);

/// Arithmetic mean of scalar tensors.
Tensor mean_of(const std::vector<Tensor>& scalars);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Row-wise argmax of [N,C] logits; ties resolve to the lowest index.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

}  // namespace odn
