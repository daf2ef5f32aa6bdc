#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdfn/tensor.hpp"

namespace mdfn {

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }
};

// Single binary file: a one-line UTF-8 JSON manifest (names, shapes, byte
// offsets) terminated by '\n', followed by the little-endian float64 payload.
// Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& tensors,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace mdfn
