#include "mdfn/train.hpp"

#include <algorithm>
#include <cmath>

namespace mdfn {

nlohmann::json TrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"lr_milestones", lr_milestones},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"alpha", alpha},
          {"neg_pos_ratio", neg_pos_ratio},
          {"augment_flip", augment_flip},
          {"checkpoint_interval", checkpoint_interval}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.alpha = j.value("alpha", c.alpha);
  c.neg_pos_ratio = j.value("neg_pos_ratio", c.neg_pos_ratio);
  c.augment_flip = j.value("augment_flip", c.augment_flip);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  return c;
}

Trainer::Trainer(Model& model, const Dataset& dataset, TrainConfig config, uint64_t seed)
    : model_(model),
      dataset_(dataset),
      config_(std::move(config)),
      seed_(seed),
      opt_(model.params(),
           SgdConfig{config_.learning_rate, config_.momentum, config_.weight_decay}) {
  if (dataset_.size() == 0) throw ConfigError("Trainer: empty dataset");
  if (config_.batch_size <= 0) throw ConfigError("Trainer: batch_size must be positive");
}

double Trainer::current_lr() const {
  double lr = config_.learning_rate;
  for (int m : config_.lr_milestones)
    if (iteration_ >= m) lr *= 0.1;
  return lr;
}

int Trainer::dataset_index_for_slot(long long slot) const {
  const long long n = static_cast<long long>(dataset_.size());
  const long long epoch = slot / n;
  const int pos = static_cast<int>(slot % n);
  if (epoch != perm_epoch_) {
    epoch_perm_.resize(n);
    for (long long i = 0; i < n; ++i) epoch_perm_[i] = static_cast<int>(i);
    Rng rng = Rng::derive(seed_, 0x5F0FF1E0ULL + static_cast<uint64_t>(epoch));
    for (int i = static_cast<int>(n) - 1; i > 0; --i) {
      const int j = rng.uniform_int(0, i);
      std::swap(epoch_perm_[i], epoch_perm_[j]);
    }
    perm_epoch_ = epoch;
  }
  return epoch_perm_[pos];
}

LossReport Trainer::step() {
  const int b_size = config_.batch_size;
  const int s = model_.spec().image_size;

  Tensor batch = Tensor::zeros({b_size, 3, s, s});
  std::vector<std::vector<GroundTruthBox>> gts(b_size);
  auto bdata = batch.data();
  const size_t img_len = static_cast<size_t>(3) * s * s;
  for (int j = 0; j < b_size; ++j) {
    const long long slot = static_cast<long long>(iteration_) * b_size + j;
    const int idx = dataset_index_for_slot(slot);
    Scene scene{dataset_.images[idx], dataset_.annotations[idx]};
    if (config_.augment_flip) {
      Rng flip_rng = Rng::derive(seed_, 0xF11BULL * 0x10000ULL + static_cast<uint64_t>(slot));
      scene = augment(scene, flip_rng);
    }
    std::copy(scene.image.data().begin(), scene.image.data().end(),
              bdata.begin() + static_cast<size_t>(j) * img_len);
    for (const auto& obj : scene.annotation.objects)
      gts[j].push_back({obj.box, obj.class_id});
  }

  std::vector<MatchAssignment> assignments;
  assignments.reserve(b_size);
  for (int j = 0; j < b_size; ++j) assignments.push_back(match(model_.default_boxes(), gts[j]));

  opt_.set_learning_rate(current_lr());
  opt_.zero_grad();
  auto fwd = model_.forward(batch);
  auto loss = detection_loss(fwd.preds, model_.default_boxes(), assignments, gts,
                             model_.spec().num_classes, config_.alpha, config_.neg_pos_ratio);
  if (!std::isfinite(loss.report.total))
    throw TrainAbort(iteration_, current_lr(), last_grad_norm_);
  backward(loss.loss);
  last_grad_norm_ = opt_.grad_norm();
  if (!std::isfinite(last_grad_norm_))
    throw TrainAbort(iteration_, current_lr(), last_grad_norm_);
  opt_.step();
  ++iteration_;
  return loss.report;
}

void save_model_checkpoint(const std::string& path, const Model& model,
                           const SgdOptimizer* opt, int iteration) {
  std::vector<CheckpointEntry> entries;
  auto named = model.named_params();
  for (auto& [name, tensor] : named) entries.push_back({name, tensor});
  if (opt) {
    for (size_t i = 0; i < named.size(); ++i)
      entries.push_back({"velocity/" + named[i].first, opt->velocity(i)});
  }
  nlohmann::json meta;
  meta["variant"] = variant_name(model.spec().variant);
  meta["network_spec"] = model.spec().to_json();
  meta["iteration"] = iteration;
  save_checkpoint(path, entries, meta);
}

void Trainer::save(const std::string& path) const {
  save_model_checkpoint(path, model_, &opt_, iteration_);
}

void Trainer::restore(const Checkpoint& ckpt) {
  model_.load_params(ckpt);
  auto named = model_.named_params();
  for (size_t i = 0; i < named.size(); ++i) {
    const Tensor* v = ckpt.find("velocity/" + named[i].first);
    if (!v)
      throw ConfigError(msg("checkpoint has no optimizer state for '", named[i].first,
                            "'; cannot resume"));
    if (v->shape() != opt_.velocity(i).shape())
      throw ConfigError(msg("optimizer state shape mismatch for '", named[i].first, "'"));
    std::copy(v->data().begin(), v->data().end(), opt_.velocity(i).data().begin());
  }
  iteration_ = ckpt.meta.value("iteration", 0);
}

}  // namespace mdfn
