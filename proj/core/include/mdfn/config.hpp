#pragma once

#include <string>

#include <json.hpp>

#include "mdfn/data.hpp"
#include "mdfn/eval.hpp"
#include "mdfn/train.hpp"

namespace mdfn {

// Everything a run needs; a run is reproducible from config + seed alone.
struct RunConfig {
  std::string variant = "mdfn-i2";
  uint64_t seed = 42;
  std::string out_dir;
  std::string checkpoint_path;
  std::string dataset_dir;
  int image_size = 64;
  SceneSpec dataset;
  int dataset_count = 64;
  TrainConfig train;
  EvalOptions eval;
  bool force = false;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

nlohmann::json eval_options_to_json(const EvalOptions& opts);
EvalOptions eval_options_from_json(const nlohmann::json& j);

}  // namespace mdfn
