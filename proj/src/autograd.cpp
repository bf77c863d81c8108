#include <unordered_map>
#include <unordered_set>

#include "odn/error.hpp"
#include "odn/tensor.hpp"

namespace odn {

namespace {

using detail::TensorImpl;

// Iterative post-order DFS; returns nodes with every consumer after its inputs.
std::vector<TensorImpl*> topological_order(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  if (!impl()) fail(ErrorCode::kUninitializedBuffer, "backward() on undefined tensor");
  if (impl()->data.size() != 1) {
    fail(ErrorCode::kNonScalarLoss, "backward() requires a scalar loss, got shape " + shape_to_string(shape()));
  }
  if (!impl()->requires_grad) return;

  auto order = topological_order(impl().get());
  // Gradients of non-leaf tensors live only for the duration of this call so
  // that repeated backward() passes accumulate exactly once into leaves.
  std::unordered_map<TensorImpl*, std::vector<float>> pending;
  pending[impl().get()] = {1.0f};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    std::vector<float> grad_out = std::move(found->second);
    pending.erase(found);

    if (!node->grad_fn) {
      if (node->grad.empty()) {
        node->grad = std::move(grad_out);
      } else {
        for (std::size_t i = 0; i < grad_out.size(); ++i) node->grad[i] += grad_out[i];
      }
      continue;
    }

    auto& fn = *node->grad_fn;
    // An input that already has a pending gradient hands that buffer to the
    // closure, which adds into it; others get a zeroed buffer.
    std::vector<std::vector<float>> grad_inputs(fn.inputs.size());
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      TensorImpl* input = fn.inputs[i].get();
      if (!input->requires_grad) continue;
      auto slot = pending.find(input);
      if (slot != pending.end() && !slot->second.empty()) {
        grad_inputs[i] = std::move(slot->second);
        slot->second.clear();
      } else {
        grad_inputs[i].assign(input->data.size(), 0.0f);
      }
    }
    fn.backward(grad_out, grad_inputs);
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      if (grad_inputs[i].empty()) continue;
      TensorImpl* input = fn.inputs[i].get();
      auto& acc = pending[input];
      if (acc.empty()) {
        acc = std::move(grad_inputs[i]);
      } else {
        // The same tensor feeds this node more than once.
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grad_inputs[i][k];
      }
    }
  }
}

}  // namespace odn
