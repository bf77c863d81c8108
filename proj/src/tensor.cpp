#include "odn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "odn/error.hpp"

namespace odn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kUninitializedBuffer: return "uninitialized_buffer";
    case ErrorCode::kMissingGradient: return "missing_gradient";
    case ErrorCode::kNonScalarLoss: return "non_scalar_loss";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kCountMismatch: return "count_mismatch";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kNameCollision: return "name_collision";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) fail(ErrorCode::kInvalidArgument, "non-positive dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> values, bool requires_grad) {
  const auto n = numel_of(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    fail(ErrorCode::kShapeMismatch, "tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) fail(ErrorCode::kUninitializedBuffer, "use of undefined tensor");
  return *impl;
}

thread_local bool g_grad_mode = true;

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(new_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(new_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor(new_impl({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorCode::kOutOfRange, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked(impl_).data.size()); }

std::span<float> Tensor::data() {
  checked(impl_);
  return impl_->data;
}

std::span<const float> Tensor::data() const { return checked(impl_).data; }

float Tensor::item() const {
  const auto& impl = checked(impl_);
  if (impl.data.size() != 1) {
    fail(ErrorCode::kShapeMismatch, "item() on tensor of shape " + shape_to_string(impl.shape));
  }
  return impl.data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(impl_);
  impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<float> Tensor::grad() {
  checked(impl_);
  return impl_->grad;
}

std::span<const float> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::clear_grad() {
  checked(impl_);
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  const auto& impl = checked(impl_);
  return Tensor(new_impl(impl.shape, impl.data, impl.requires_grad));
}

Tensor Tensor::detach() const {
  checked(impl_);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::reshape(Shape new_shape) const {
  const auto& impl = checked(impl_);
  if (numel_of(new_shape) != numel()) {
    fail(ErrorCode::kShapeMismatch,
         "cannot reshape " + shape_to_string(impl.shape) + " to " + shape_to_string(new_shape));
  }
  return detail::make_result(std::move(new_shape), impl.data, {*this},
                             [](std::span<const float> g, std::span<std::vector<float>> gi) {
                               if (gi[0].empty()) return;
                               for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                             });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

namespace detail {

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs, BackwardFn backward) {
  auto impl = new_impl(std::move(shape), std::move(values), false);
  if (g_grad_mode) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      auto node = std::make_shared<Node>();
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.impl());
      node->backward = std::move(backward);
      impl->grad_fn = std::move(node);
      impl->requires_grad = true;
    }
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

}  // namespace odn
