#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mdfn/error.hpp"
#include "mdfn/rng.hpp"

namespace mdfn {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense n-dimensional array of 64-bit floats in row-major order, with an
// optional gradient buffer and the graph edges reverse-mode backward needs.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward()/zero_grad()
  bool requires_grad = false;
  std::string name;

  // graph node (empty for leaves)
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;
  bool backward_ran = false;

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_vector(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);
  // He-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in))
  static Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl()->shape; }
  int ndim() const { return static_cast<int>(impl()->shape.size()); }
  int dim(int i) const { return impl()->shape.at(static_cast<size_t>(i)); }
  size_t numel() const { return impl()->numel(); }

  std::span<double> data() { return impl()->data; }
  std::span<const double> data() const { return impl()->data; }
  bool has_grad() const { return impl()->grad.size() == impl()->data.size(); }
  std::span<double> grad() { return impl()->grad; }
  std::span<const double> grad() const { return impl()->grad; }

  double item() const {
    if (numel() != 1)
      throw ShapeError(msg("item() on non-scalar tensor of shape ", shape_str(shape())));
    return impl()->data[0];
  }

  Tensor& set_requires_grad(bool v) {
    impl()->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return impl()->requires_grad; }

  Tensor& set_name(std::string n) {
    impl()->name = std::move(n);
    return *this;
  }
  const std::string& name() const { return impl()->name; }

  void zero_grad() {
    impl()->ensure_grad();
    std::fill(impl()->grad.begin(), impl()->grad.end(), 0.0);
  }

  // Fresh leaf with copied data, no graph history.
  Tensor detached_copy() const;

  const TensorImplPtr& ptr() const { return impl_; }
  TensorImpl* impl() {
    if (!impl_) throw ValueError("use of undefined Tensor");
    return impl_.get();
  }
  const TensorImpl* impl() const {
    if (!impl_) throw ValueError("use of undefined Tensor");
    return impl_.get();
  }

 private:
  TensorImplPtr impl_;
};

// Reverse topological gradient accumulation from a scalar loss. Populates
// grad on every reachable tensor; throws if invoked twice on the same root.
void backward(Tensor& loss);

// When enabled, every op validates its output for NaN/Inf and throws
// ValueError naming the op. Off by default.
void set_finite_check_enabled(bool enabled);
bool finite_check_enabled();

// Flat offset for a 4-D (b, c, h, w) access.
inline size_t idx4(int c_dim, int h_dim, int w_dim, int b, int c, int h, int w) {
  return ((static_cast<size_t>(b) * c_dim + c) * h_dim + h) * w_dim + w;
}

size_t checked_numel(const std::vector<int>& shape);

}  // namespace mdfn
