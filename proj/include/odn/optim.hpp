#pragma once

#include <string>
#include <vector>

#include "odn/tensor.hpp"

namespace odn {

struct Parameter {
  std::string name;
  Tensor value;                        // requires_grad == true
  std::vector<float> momentum_buffer;  // empty until the first momentum step

  Parameter() = default;
  Parameter(std::string name, Tensor value);
};

struct OptimizerConfig {
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;

  void validate() const;
};

/// g = grad + wd * w;  buf = momentum * buf + g;  w -= lr * buf.
/// The first step initializes buf to g. Throws kMissingGradient if any
/// parameter has no grad.
void sgd_step(const std::vector<Parameter*>& params, const OptimizerConfig& config);

/// Clears grads so the next backward starts from absence.
void zero_grad(const std::vector<Parameter*>& params);

void reset_momentum(const std::vector<Parameter*>& params);

}  // namespace odn
