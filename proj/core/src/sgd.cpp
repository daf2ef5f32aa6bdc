#include "mdfn/sgd.hpp"

#include <cmath>

namespace mdfn {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.push_back(Tensor::zeros(p.shape()));
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad())
      throw ValueError(msg("sgd_step: parameter '", p.name(), "' has no gradient"));
    auto data = p.data();
    auto grad = p.grad();
    auto vel = velocity_[i].data();
    for (size_t j = 0; j < data.size(); ++j) {
      vel[j] = config_.momentum * vel[j] -
               config_.learning_rate * (grad[j] + config_.weight_decay * data[j]);
      data[j] += vel[j];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double SgdOptimizer::grad_norm() const {
  double acc = 0.0;
  for (const Tensor& p : params_)
    if (p.has_grad())
      for (double g : p.grad()) acc += g * g;
  return std::sqrt(acc);
}

}  // namespace mdfn
