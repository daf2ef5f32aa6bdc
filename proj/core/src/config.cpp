#include "mdfn/config.hpp"

#include <fstream>

namespace mdfn {

nlohmann::json eval_options_to_json(const EvalOptions& opts) {
  return {{"iou_thresholds", opts.iou_thresholds},
          {"nms_threshold", opts.nms_threshold},
          {"score_floor", opts.score_floor},
          {"top_k", opts.top_k},
          {"eleven_point", opts.eleven_point},
          {"small_area", opts.small_area},
          {"occlusion_threshold", opts.occlusion_threshold}};
}

EvalOptions eval_options_from_json(const nlohmann::json& j) {
  EvalOptions o;
  o.iou_thresholds = j.value("iou_thresholds", o.iou_thresholds);
  o.nms_threshold = j.value("nms_threshold", o.nms_threshold);
  o.score_floor = j.value("score_floor", o.score_floor);
  o.top_k = j.value("top_k", o.top_k);
  o.eleven_point = j.value("eleven_point", o.eleven_point);
  o.small_area = j.value("small_area", o.small_area);
  o.occlusion_threshold = j.value("occlusion_threshold", o.occlusion_threshold);
  return o;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["checkpoint"] = checkpoint_path;
  j["dataset_dir"] = dataset_dir;
  j["image_size"] = image_size;
  j["dataset"] = dataset.to_json();
  j["dataset_count"] = dataset_count;
  j["train"] = train.to_json();
  j["eval"] = eval_options_to_json(eval);
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.variant = j.value("variant", c.variant);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.checkpoint_path = j.value("checkpoint", c.checkpoint_path);
  c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("dataset")) c.dataset = SceneSpec::from_json(j.at("dataset"));
  c.dataset_count = j.value("dataset_count", c.dataset_count);
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_options_from_json(j.at("eval"));
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(msg("cannot open config file: ", path));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(msg("invalid config JSON in ", path, ": ", e.what()));
  }
  return from_json(j);
}

}  // namespace mdfn
