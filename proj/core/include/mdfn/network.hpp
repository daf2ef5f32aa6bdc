#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdfn/boxes.hpp"
#include "mdfn/checkpoint.hpp"
#include "mdfn/eval.hpp"
#include "mdfn/inception.hpp"

namespace mdfn {

enum class Variant { MdfnI1, MdfnI2, Baseline };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class UnitKind { Cubic, Square, Plain };
const char* unit_kind_name(UnitKind k);

// One deep unit: a 1x1 bottleneck followed by either an inception module's
// multi-scale stage set (cubic/square) or a single 3x3 conv (plain).
struct UnitSpec {
  UnitKind kind = UnitKind::Plain;
  int bottleneck = 0;
  int branch = 0;     // stage width for cubic/square
  int out_plain = 0;  // 3x3 output width for plain
  int stride = 1;

  int out_channels() const;
};

struct NetworkSpec {
  Variant variant = Variant::MdfnI2;
  int image_size = 64;
  int num_classes = 4;  // including background
  std::vector<int> backbone_widths = {32, 64, 128, 128};
  std::array<UnitSpec, 4> units;
  std::vector<double> ratios = {1.0, 2.0, 3.0, 0.5, 1.0 / 3.0};
  double s_min = 0.2;
  double s_max = 0.9;

  int boxes_per_cell() const { return static_cast<int>(ratios.size()) + 1; }
  // deepest unit (1-based) still producing multi-scale taps: 3 for I1, 4 for I2
  int multiscale_feature_depth() const;

  // shipped configurations; unit kinds per variant are
  //   mdfn-i1:  cubic cubic square plain
  //   mdfn-i2:  cubic cubic square square
  //   baseline: plain plain plain plain
  static NetworkSpec make(Variant v, int image_size = 64, int num_classes = 4);

  void validate() const;
  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
};

struct DeepUnit {
  UnitSpec spec;
  int in_channels = 0;
  std::optional<InceptionModule> module;  // cubic/square
  ConvParams plain_bottleneck, plain_conv;

  Tensor forward(const Tensor& x) const;
  int out_channels() const { return spec.out_channels(); }
  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
  long long param_count() const;
  long long mult_adds(int in_h, int in_w) const;
};

// Backbone, four deep units, five taps (one shallow backbone tap plus every
// unit output), and one k(c+4)-channel 3x3 prediction head per tap.
class Model {
 public:
  Model(NetworkSpec spec, uint64_t seed);

  struct Forward {
    std::vector<Tensor> taps;
    std::vector<Tensor> preds;  // per tap: (B, k*(c+4), m, n)
  };
  Forward forward(const Tensor& batch) const;

  const NetworkSpec& spec() const { return spec_; }
  const DefaultBoxGrid& default_boxes() const { return grid_; }
  std::vector<std::array<int, 2>> tap_shapes() const { return tap_shapes_; }

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;

  long long param_count() const;
  long long mult_adds() const;  // one image at the configured input size
  nlohmann::json structural_summary() const;

  void load_params(const Checkpoint& ckpt);

 private:
  NetworkSpec spec_;
  std::vector<ConvParams> backbone_;  // 3x3 stride 1 pad 1 each, pool after 1..3
  std::vector<DeepUnit> units_;
  std::vector<PredictionHead> heads_;
  std::vector<std::array<int, 2>> tap_shapes_;
  std::vector<int> tap_channels_;
  DefaultBoxGrid grid_;
};

Model build(const NetworkSpec& spec, uint64_t seed);

// single-image end-to-end inference: forward, decode, NMS
std::vector<Detection> run_inference(const Model& model, const Tensor& image,
                                     const EvalOptions& opts = {});

}  // namespace mdfn
