#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace odn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// Backward closure of one recorded op. `grad_out` is d(loss)/d(output);
// `grad_inputs[i]` is pre-sized to input i's element count when that input
// needs a gradient and left empty otherwise. Closures add into the buffers.
using BackwardFn = std::function<void(std::span<const float> grad_out,
                                      std::span<std::vector<float>> grad_inputs)>;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty means "absent"
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Dense row-major float32 tensor with shared storage and an optional
/// reverse-mode graph. Copies of a Tensor alias the same storage; use
/// clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;
  float at(std::int64_t flat_index) const { return data()[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  /// Gradient accumulated by backward(). Absent until the first backward
  /// that reaches this tensor, and after clear_grad().
  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  void clear_grad();

  /// Runs reverse-mode differentiation from this scalar. Leaf tensors that
  /// require grad accumulate into their grad buffer; the graph is retained
  /// so backward may be called again.
  void backward() const;

  Tensor clone() const;
  /// Same storage, no graph, no grad requirement.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  /// Identity of the underlying storage; equal for aliasing copies.
  const void* id() const noexcept { return impl_.get(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

// Creates the result tensor of an op and, when grad mode is on and any input
// requires grad, attaches `backward` as its grad_fn.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

}  // namespace detail

}  // namespace odn
