#include "odn/optim.hpp"

#include <cmath>

#include "odn/error.hpp"

namespace odn {

Parameter::Parameter(std::string param_name, Tensor param_value)
    : name(std::move(param_name)), value(std::move(param_value)) {
  value.set_requires_grad(true);
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  }
  if (!(momentum >= 0.0f && momentum < 1.0f)) fail(ErrorCode::kInvalidArgument, "momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0f)) fail(ErrorCode::kInvalidArgument, "weight_decay must be non-negative");
}

void sgd_step(const std::vector<Parameter*>& params, const OptimizerConfig& config) {
  config.validate();
  for (const Parameter* p : params) {
    if (!p->value.has_grad()) fail(ErrorCode::kMissingGradient, "parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    auto w = p->value.data();
    const auto grad = p->value.grad();
    auto& buf = p->momentum_buffer;
    const bool fresh = buf.empty();
    if (fresh) buf.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float g = grad[i] + config.weight_decay * w[i];
      buf[i] = fresh ? g : config.momentum * buf[i] + g;
      w[i] -= config.learning_rate * buf[i];
    }
  }
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->value.clear_grad();
}

void reset_momentum(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->momentum_buffer.clear();
}

}  // namespace odn
