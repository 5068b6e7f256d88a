#include "egcfl/nn/tensor.hpp"

#include <unordered_set>

namespace egcfl::nn {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

}  // namespace detail

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value.assign(static_cast<size_t>(numel(shape)), 0.0);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(const Shape& shape, real_t v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<real_t> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != numel(shape))
    throw InvalidArgument("Tensor::from_data: data length does not match shape");
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(real_t v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

void Tensor::backward() const {
  if (!defined()) throw InvalidArgument("Tensor::backward: undefined tensor");
  if (size() != 1) throw InvalidArgument("Tensor::backward: root must be scalar");

  // Iterative post-order DFS; emits a topological order of the DAG.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) n->ensure_grad();
  n_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn();
    // An interior node's grad has no readers once its own backward ran
    // (children run earlier); drop it to bound peak memory on deep graphs.
    if (!n->parents.empty() && !n->retain_grad) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace egcfl::nn
