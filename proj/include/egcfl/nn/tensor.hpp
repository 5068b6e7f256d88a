#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "egcfl/common.hpp"

namespace egcfl::nn {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<real_t> value;
  std::vector<real_t> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  bool retain_grad = false;  // keep the grad buffer of an interior node alive
  // Graph edges. Parents are held alive by the child; backward_fn captures
  // raw Node pointers, which stay valid while the child exists.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Autograd recording switch. Ops build backward graphs only when recording
// is on and some input requires a gradient; inference paths run with it off.
bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, real_t v, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<real_t> data,
                          bool requires_grad = false);
  static Tensor scalar(real_t v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(n_->value.size()); }

  real_t* data() { return n_->value.data(); }
  const real_t* data() const { return n_->value.data(); }
  std::vector<real_t>& values() { return n_->value; }
  const std::vector<real_t>& values() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  bool is_leaf() const { return n_->parents.empty(); }

  // Gradient buffer; allocated (zeroed) on first access.
  real_t* grad() {
    n_->ensure_grad();
    return n_->grad.data();
  }
  const std::vector<real_t>& grad_values() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }
  void clear_grad() {
    n_->grad.clear();
    n_->grad.shrink_to_fit();
  }

  real_t item() const {
    if (size() != 1) throw InvalidArgument("Tensor::item: tensor is not scalar");
    return n_->value[0];
  }

  // Interior gradients are normally released during backward; taps that need
  // them afterwards (e.g. activation-map weighting) opt in here.
  void set_retain_grad(bool retain) { n_->retain_grad = retain; }

  // Runs reverse-mode accumulation from this scalar through the recorded
  // graph. Gradients add into every node that requires them.
  void backward() const;

  // Value copy with no graph history.
  Tensor detach() const { return from_data(shape(), n_->value, false); }

  std::shared_ptr<detail::Node> node() const { return n_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> n_;
};

namespace detail {

// True when the op must record a backward edge: autograd is on and at least
// one input participates in differentiation.
inline bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

inline void attach(Tensor& out, std::vector<Tensor> parents, std::function<void()> fn) {
  auto& n = *out.node();
  n.parents.reserve(parents.size());
  for (auto& p : parents) n.parents.push_back(p.node());
  n.backward_fn = std::move(fn);
  n.requires_grad = true;
}

}  // namespace detail

}  // namespace egcfl::nn
