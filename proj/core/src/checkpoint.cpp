#include "mdfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mdfn {

namespace {

void write_f64_le(std::ostream& os, const double* values, size_t count) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * 8));
  } else {
    for (size_t i = 0; i < count; ++i) {
      char buf[8];
      std::memcpy(buf, &values[i], 8);
      std::swap(buf[0], buf[7]);
      std::swap(buf[1], buf[6]);
      std::swap(buf[2], buf[5]);
      std::swap(buf[3], buf[4]);
      os.write(buf, 8);
    }
  }
}

void read_f64_le(std::istream& is, double* values, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(count * 8));
  } else {
    for (size_t i = 0; i < count; ++i) {
      char buf[8];
      is.read(buf, 8);
      std::swap(buf[0], buf[7]);
      std::swap(buf[1], buf[6]);
      std::swap(buf[2], buf[5]);
      std::swap(buf[3], buf[4]);
      std::memcpy(&values[i], buf, 8);
    }
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& tensors,
                     const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["format"] = "mdfn-checkpoint-v1";
  manifest["meta"] = meta;
  nlohmann::json list = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : tensors) {
    nlohmann::json t;
    t["name"] = e.name;
    t["shape"] = e.tensor.shape();
    t["offset"] = offset;
    list.push_back(std::move(t));
    offset += static_cast<uint64_t>(e.tensor.numel()) * 8;
  }
  manifest["tensors"] = std::move(list);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(msg("cannot open checkpoint for writing: ", path));
  os << manifest.dump() << '\n';
  for (const auto& e : tensors) write_f64_le(os, e.tensor.data().data(), e.tensor.numel());
  if (!os) throw IoError(msg("write failure on checkpoint: ", path));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(msg("cannot open checkpoint: ", path));
  std::string line;
  if (!std::getline(is, line)) throw IoError(msg("checkpoint missing manifest line: ", path));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("checkpoint manifest is not valid JSON: ", e.what()));
  }
  if (manifest.value("format", "") != "mdfn-checkpoint-v1")
    throw IoError(msg("unrecognized checkpoint format in ", path));

  const std::streampos payload_start = is.tellg();
  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    const uint64_t offset = t.at("offset").get<uint64_t>();
    Tensor tensor = Tensor::zeros(shape);
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    read_f64_le(is, tensor.data().data(), tensor.numel());
    if (!is) throw IoError(msg("truncated checkpoint payload for tensor '", name, "' in ", path));
    ckpt.tensors.push_back({name, std::move(tensor)});
  }
  return ckpt;
}

}  // namespace mdfn
