#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdfn/data.hpp"
#include "mdfn/loss.hpp"
#include "mdfn/network.hpp"
#include "mdfn/sgd.hpp"

namespace mdfn {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 8;
  double learning_rate = 0.02;
  std::vector<int> lr_milestones = {1400, 1800};  // x0.1 at each
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double alpha = 1.0;
  double neg_pos_ratio = 3.0;
  bool augment_flip = true;
  int checkpoint_interval = 500;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// NaN loss or non-finite gradients; carries the diagnostic the operator needs
struct TrainAbort : Error {
  TrainAbort(int iteration, double lr, double grad_norm)
      : Error(msg("training aborted: non-finite loss at iteration ", iteration,
                  " (learning_rate=", lr, ", last grad_norm=", grad_norm, ")")) {}
};

// One optimizer step per call. Batch composition and augmentation decisions
// are pure functions of (seed, iteration), so a restored checkpoint replays
// the exact trajectory of an uninterrupted run.
class Trainer {
 public:
  Trainer(Model& model, const Dataset& dataset, TrainConfig config, uint64_t seed);

  LossReport step();

  int iteration() const { return iteration_; }
  double current_lr() const;
  double last_grad_norm() const { return last_grad_norm_; }
  const TrainConfig& config() const { return config_; }
  SgdOptimizer& optimizer() { return opt_; }

  // parameters + velocities + iteration, restorable bit-exactly
  void save(const std::string& path) const;
  void restore(const Checkpoint& ckpt);

 private:
  int dataset_index_for_slot(long long slot) const;

  Model& model_;
  const Dataset& dataset_;
  TrainConfig config_;
  uint64_t seed_;
  SgdOptimizer opt_;
  int iteration_ = 0;
  double last_grad_norm_ = 0.0;
  mutable std::vector<int> epoch_perm_;
  mutable long long perm_epoch_ = -1;
};

// checkpoint writer shared by trainer and CLI
void save_model_checkpoint(const std::string& path, const Model& model,
                           const SgdOptimizer* opt, int iteration);

}  // namespace mdfn
