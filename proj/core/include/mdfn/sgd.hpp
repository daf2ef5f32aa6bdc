#pragma once

#include <vector>

#include "mdfn/tensor.hpp"

namespace mdfn {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// SGD with momentum and decoupled-from-nothing classic weight decay:
//   v <- momentum * v - lr * (grad + weight_decay * param)
//   param <- param + v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig config);

  void step();
  void zero_grad();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  const SgdConfig& config() const { return config_; }

  double grad_norm() const;

  size_t size() const { return params_.size(); }
  const Tensor& param(size_t i) const { return params_[i]; }
  Tensor& velocity(size_t i) { return velocity_[i]; }
  const Tensor& velocity(size_t i) const { return velocity_[i]; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> velocity_;
  SgdConfig config_;
};

}  // namespace mdfn
