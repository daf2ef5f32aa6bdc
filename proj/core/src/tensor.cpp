#include "mdfn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mdfn {

namespace {
bool g_finite_check = false;
}

void set_finite_check_enabled(bool enabled) { g_finite_check = enabled; }
bool finite_check_enabled() { return g_finite_check; }

size_t checked_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError(msg("non-positive dimension in shape ", shape_str(shape)));
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(checked_numel(shape), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values) {
  if (checked_numel(shape) != values.size())
    throw ShapeError(msg("from_vector: shape ", shape_str(shape), " needs ",
                         checked_numel(shape), " values, got ", values.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

Tensor Tensor::he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ValueError(msg("he_uniform: fan_in must be positive, got ", fan_in));
  Tensor t = zeros(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor Tensor::detached_copy() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = this->impl()->shape;
  impl->data = this->impl()->data;
  return Tensor(std::move(impl));
}

void backward(Tensor& loss) {
  TensorImpl* root = loss.impl();
  if (root->numel() != 1)
    throw ShapeError(msg("backward: loss must be scalar, got shape ", shape_str(root->shape)));
  if (root->backward_ran)
    throw ValueError("backward: called twice on the same graph without rebuilding it");
  root->backward_ran = true;

  // iterative post-order DFS; reversed post-order is a valid topological order
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      for (auto& p : node->parents) p->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace mdfn
