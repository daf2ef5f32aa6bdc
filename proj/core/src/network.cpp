#include "mdfn/network.hpp"

#include <algorithm>

namespace mdfn {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::MdfnI1:
      return "mdfn-i1";
    case Variant::MdfnI2:
      return "mdfn-i2";
    case Variant::Baseline:
      return "baseline";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "mdfn-i1") return Variant::MdfnI1;
  if (name == "mdfn-i2") return Variant::MdfnI2;
  if (name == "baseline") return Variant::Baseline;
  throw ConfigError(msg("unknown variant '", name, "' (expected mdfn-i1, mdfn-i2, baseline)"));
}

const char* unit_kind_name(UnitKind k) {
  switch (k) {
    case UnitKind::Cubic:
      return "cubic";
    case UnitKind::Square:
      return "square";
    case UnitKind::Plain:
      return "plain";
  }
  return "?";
}

int UnitSpec::out_channels() const {
  switch (kind) {
    case UnitKind::Cubic:
      return 7 * branch + bottleneck;
    case UnitKind::Square:
      return 3 * branch + bottleneck;
    case UnitKind::Plain:
      return out_plain;
  }
  return 0;
}

int NetworkSpec::multiscale_feature_depth() const {
  int depth = 0;
  for (int i = 0; i < 4; ++i)
    if (units[i].kind != UnitKind::Plain) depth = i + 1;
  return depth;
}

NetworkSpec NetworkSpec::make(Variant v, int image_size, int num_classes) {
  NetworkSpec spec;
  spec.variant = v;
  spec.image_size = image_size;
  spec.num_classes = num_classes;
  switch (v) {
    case Variant::MdfnI1:
    case Variant::MdfnI2:
      spec.units[0] = {UnitKind::Cubic, 64, 16, 0, 1};    // in 128 -> out 176
      spec.units[1] = {UnitKind::Cubic, 88, 16, 0, 2};    // in 176 -> out 200
      spec.units[2] = {UnitKind::Square, 100, 24, 0, 2};  // in 200 -> out 172
      if (v == Variant::MdfnI2) {
        spec.units[3] = {UnitKind::Square, 86, 24, 0, 2};  // in 172 -> out 158
      } else {
        spec.units[3] = {UnitKind::Plain, 86, 0, 64, 2};  // in 172 -> out 64
      }
      break;
    case Variant::Baseline:
      spec.units[0] = {UnitKind::Plain, 64, 0, 128, 1};
      spec.units[1] = {UnitKind::Plain, 64, 0, 128, 2};
      spec.units[2] = {UnitKind::Plain, 32, 0, 64, 2};
      spec.units[3] = {UnitKind::Plain, 32, 0, 64, 2};
      break;
  }
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  if (backbone_widths.size() != 4)
    throw ConfigError(msg("NetworkSpec: backbone needs 4 stage widths, got ",
                          backbone_widths.size()));
  for (int w : backbone_widths)
    if (w <= 0) throw ConfigError("NetworkSpec: non-positive backbone width");
  if (image_size < 32 || image_size % 16 != 0)
    throw ConfigError(msg("NetworkSpec: image_size must be a multiple of 16 and >= 32, got ",
                          image_size));
  if (num_classes < 2) throw ConfigError("NetworkSpec: need at least background + 1 class");
  if (ratios.empty()) throw ConfigError("NetworkSpec: empty aspect ratio set");

  static const std::array<std::array<UnitKind, 4>, 3> expected = {{
      {UnitKind::Cubic, UnitKind::Cubic, UnitKind::Square, UnitKind::Plain},   // I1
      {UnitKind::Cubic, UnitKind::Cubic, UnitKind::Square, UnitKind::Square},  // I2
      {UnitKind::Plain, UnitKind::Plain, UnitKind::Plain, UnitKind::Plain},    // baseline
  }};
  const auto& want = expected[static_cast<size_t>(variant)];
  for (int i = 0; i < 4; ++i) {
    if (units[i].kind != want[i])
      throw ConfigError(msg("NetworkSpec: ", variant_name(variant), " unit ", i + 1,
                            " must be ", unit_kind_name(want[i]), ", got ",
                            unit_kind_name(units[i].kind)));
    if (units[i].bottleneck <= 0)
      throw ConfigError(msg("NetworkSpec: unit ", i + 1, " bottleneck width must be positive"));
    if (units[i].kind == UnitKind::Plain && units[i].out_plain <= 0)
      throw ConfigError(msg("NetworkSpec: plain unit ", i + 1, " needs out_plain"));
    if (units[i].kind != UnitKind::Plain && units[i].branch <= 0)
      throw ConfigError(msg("NetworkSpec: unit ", i + 1, " needs branch width"));
    if (units[i].stride != 1 && units[i].stride != 2)
      throw ConfigError(msg("NetworkSpec: unit ", i + 1, " stride must be 1 or 2"));
  }
}

namespace {

nlohmann::json unit_to_json(const UnitSpec& u) {
  return {{"kind", unit_kind_name(u.kind)}, {"bottleneck", u.bottleneck},
          {"branch", u.branch},             {"out_plain", u.out_plain},
          {"stride", u.stride}};
}

UnitSpec unit_from_json(const nlohmann::json& j) {
  UnitSpec u;
  const std::string k = j.at("kind").get<std::string>();
  if (k == "cubic")
    u.kind = UnitKind::Cubic;
  else if (k == "square")
    u.kind = UnitKind::Square;
  else if (k == "plain")
    u.kind = UnitKind::Plain;
  else
    throw ConfigError(msg("unknown unit kind '", k, "'"));
  u.bottleneck = j.at("bottleneck").get<int>();
  u.branch = j.at("branch").get<int>();
  u.out_plain = j.at("out_plain").get<int>();
  u.stride = j.at("stride").get<int>();
  return u;
}

}  // namespace

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json j;
  j["variant"] = variant_name(variant);
  j["image_size"] = image_size;
  j["num_classes"] = num_classes;
  j["backbone_widths"] = backbone_widths;
  nlohmann::json us = nlohmann::json::array();
  for (const auto& u : units) us.push_back(unit_to_json(u));
  j["units"] = std::move(us);
  j["ratios"] = ratios;
  j["s_min"] = s_min;
  j["s_max"] = s_max;
  return j;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.variant = variant_from_name(j.at("variant").get<std::string>());
  s.image_size = j.at("image_size").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.backbone_widths = j.at("backbone_widths").get<std::vector<int>>();
  const auto& us = j.at("units");
  if (us.size() != 4) throw ConfigError("NetworkSpec: expected 4 units");
  for (int i = 0; i < 4; ++i) s.units[i] = unit_from_json(us[i]);
  s.ratios = j.at("ratios").get<std::vector<double>>();
  s.s_min = j.at("s_min").get<double>();
  s.s_max = j.at("s_max").get<double>();
  s.validate();
  return s;
}

Tensor DeepUnit::forward(const Tensor& x) const {
  if (spec.kind == UnitKind::Plain) {
    Tensor in = spec.stride > 1 ? max_pool2d(x, spec.stride, spec.stride) : x;
    return relu(conv2d(relu(conv2d(in, plain_bottleneck)), plain_conv));
  }
  return module->forward(x);
}

std::vector<std::pair<std::string, Tensor>> DeepUnit::named_params(
    const std::string& prefix) const {
  if (spec.kind != UnitKind::Plain) return module->named_params();
  return {{prefix + ".bottleneck.weight", plain_bottleneck.weights},
          {prefix + ".bottleneck.bias", plain_bottleneck.bias},
          {prefix + ".conv.weight", plain_conv.weights},
          {prefix + ".conv.bias", plain_conv.bias}};
}

long long DeepUnit::param_count() const {
  if (spec.kind != UnitKind::Plain) return module_param_count(module->spec());
  return plain_bottleneck.param_count() + plain_conv.param_count();
}

long long DeepUnit::mult_adds(int in_h, int in_w) const {
  if (spec.kind != UnitKind::Plain) return module_mult_adds(module->spec(), in_h, in_w);
  const int h = spec.stride > 1 ? pool_out_extent(in_h, spec.stride, spec.stride) : in_h;
  const int w = spec.stride > 1 ? pool_out_extent(in_w, spec.stride, spec.stride) : in_w;
  return plain_bottleneck.mult_adds(h, w) + plain_conv.mult_adds(h, w);
}

Model::Model(NetworkSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng = Rng::derive(seed, 0x11D0DE1);

  int ch = 3;
  for (int i = 0; i < 4; ++i) {
    backbone_.push_back(ConvParams::create(spec_.backbone_widths[i], ch, 3, 1, 1, rng));
    backbone_.back().weights.set_name(msg("backbone.conv", i + 1, ".weight"));
    backbone_.back().bias.set_name(msg("backbone.conv", i + 1, ".bias"));
    ch = spec_.backbone_widths[i];
  }

  // spatial trace: pool after conv1..conv3, shallow tap at conv3
  const int s = spec_.image_size;
  const int shallow = s / 4;  // after two pools
  int grid = s / 8;           // after three pools, input to unit 1
  tap_shapes_.push_back({shallow, shallow});
  tap_channels_.push_back(spec_.backbone_widths[2]);

  int in_ch = spec_.backbone_widths[3];
  for (int i = 0; i < 4; ++i) {
    DeepUnit unit;
    unit.spec = spec_.units[i];
    unit.in_channels = in_ch;
    const std::string name = msg("unit", i + 1);
    if (unit.spec.kind == UnitKind::Plain) {
      unit.plain_bottleneck =
          ConvParams::create(unit.spec.bottleneck, in_ch, 1, 1, 0, rng);
      unit.plain_conv =
          ConvParams::create(unit.spec.out_plain, unit.spec.bottleneck, 3, 1, 1, rng);
      unit.plain_bottleneck.weights.set_name(name + ".bottleneck.weight");
      unit.plain_bottleneck.bias.set_name(name + ".bottleneck.bias");
      unit.plain_conv.weights.set_name(name + ".conv.weight");
      unit.plain_conv.bias.set_name(name + ".conv.bias");
    } else {
      InceptionSpec ispec;
      ispec.kind = unit.spec.kind == UnitKind::Cubic ? InceptionKind::Cubic
                                                     : InceptionKind::Square;
      ispec.in_channels = in_ch;
      ispec.bottleneck_channels = unit.spec.bottleneck;
      ispec.branch_channels = unit.spec.branch;
      ispec.stride = unit.spec.stride;
      unit.module.emplace(ispec, name, rng);
    }
    grid = unit.spec.stride > 1 ? pool_out_extent(grid, unit.spec.stride, unit.spec.stride) : grid;
    tap_shapes_.push_back({grid, grid});
    tap_channels_.push_back(unit.out_channels());
    in_ch = unit.out_channels();
    units_.push_back(std::move(unit));
  }

  for (size_t t = 0; t < tap_shapes_.size(); ++t) {
    heads_.push_back(PredictionHead::create(tap_channels_[t], spec_.boxes_per_cell(),
                                            spec_.num_classes, rng));
    heads_.back().conv.weights.set_name(msg("head", t, ".weight"));
    heads_.back().conv.bias.set_name(msg("head", t, ".bias"));
  }

  grid_ = generate_default_boxes(tap_shapes_, spec_.s_min, spec_.s_max, spec_.ratios);
}

Model::Forward Model::forward(const Tensor& batch) const {
  if (batch.ndim() != 4 || batch.dim(1) != 3 || batch.dim(2) != spec_.image_size ||
      batch.dim(3) != spec_.image_size)
    throw ShapeError(msg("forward: expected (B,3,", spec_.image_size, ",", spec_.image_size,
                         "), got ", shape_str(batch.shape())));
  Forward out;
  Tensor x = batch;
  for (int i = 0; i < 4; ++i) {
    x = relu(conv2d(x, backbone_[i]));
    if (i == 2) out.taps.push_back(x);  // shallow tap before the third pool
    if (i < 3) x = max_pool2d(x, 2, 2);
  }
  for (const DeepUnit& unit : units_) {
    x = unit.forward(x);
    out.taps.push_back(x);
  }
  out.preds = predict(out.taps, heads_, spec_.boxes_per_cell(), spec_.num_classes);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& c : backbone_) {
    out.emplace_back(c.weights.name(), c.weights);
    out.emplace_back(c.bias.name(), c.bias);
  }
  for (size_t i = 0; i < units_.size(); ++i) {
    auto up = units_[i].named_params(msg("unit", i + 1));
    out.insert(out.end(), up.begin(), up.end());
  }
  for (const auto& h : heads_) {
    out.emplace_back(h.conv.weights.name(), h.conv.weights);
    out.emplace_back(h.conv.bias.name(), h.conv.bias);
  }
  return out;
}

std::vector<Tensor> Model::params() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_params()) out.push_back(t);
  return out;
}

long long Model::param_count() const {
  long long total = 0;
  for (const auto& c : backbone_) total += c.param_count();
  for (const auto& u : units_) total += u.param_count();
  for (const auto& h : heads_) total += h.conv.param_count();
  return total;
}

long long Model::mult_adds() const {
  long long total = 0;
  int extent = spec_.image_size;
  for (int i = 0; i < 4; ++i) {
    total += backbone_[i].mult_adds(extent, extent);
    if (i < 3) extent /= 2;
  }
  int grid = extent;
  for (size_t i = 0; i < units_.size(); ++i) {
    total += units_[i].mult_adds(grid, grid);
    grid = units_[i].spec.stride > 1 ? pool_out_extent(grid, units_[i].spec.stride, units_[i].spec.stride) : grid;
  }
  for (size_t t = 0; t < heads_.size(); ++t)
    total += heads_[t].conv.mult_adds(tap_shapes_[t][0], tap_shapes_[t][1]);
  return total;
}

nlohmann::json Model::structural_summary() const {
  nlohmann::json j;
  j["variant"] = variant_name(spec_.variant);
  j["image_size"] = spec_.image_size;
  j["num_classes"] = spec_.num_classes;
  j["backbone_widths"] = spec_.backbone_widths;
  j["multiscale_feature_depth"] = spec_.multiscale_feature_depth();
  j["boxes_per_cell"] = spec_.boxes_per_cell();
  j["head_channels"] = spec_.boxes_per_cell() * (spec_.num_classes + 4);
  j["total_boxes"] = grid_.total();
  j["param_count"] = param_count();
  j["mult_adds"] = mult_adds();

  nlohmann::json units = nlohmann::json::array();
  int grid = spec_.image_size / 8;
  long long backbone_params = 0;
  for (const auto& c : backbone_) backbone_params += c.param_count();
  j["backbone_params"] = backbone_params;
  for (size_t i = 0; i < units_.size(); ++i) {
    nlohmann::json u;
    u["name"] = msg("unit", i + 1);
    u["kind"] = unit_kind_name(units_[i].spec.kind);
    u["in_channels"] = units_[i].in_channels;
    u["out_channels"] = units_[i].out_channels();
    u["stride"] = units_[i].spec.stride;
    u["param_count"] = units_[i].param_count();
    u["mult_adds"] = units_[i].mult_adds(grid, grid);
    if (units_[i].spec.kind != UnitKind::Plain)
      u["module"] = units_[i].module->summary().to_json();
    grid = units_[i].spec.stride > 1 ? pool_out_extent(grid, units_[i].spec.stride, units_[i].spec.stride) : grid;
    units.push_back(std::move(u));
  }
  j["units"] = std::move(units);

  nlohmann::json taps = nlohmann::json::array();
  for (size_t t = 0; t < tap_shapes_.size(); ++t) {
    taps.push_back({{"h", tap_shapes_[t][0]},
                    {"w", tap_shapes_[t][1]},
                    {"channels", tap_channels_[t]},
                    {"head_params", heads_[t].conv.param_count()},
                    {"boxes", grid_.boxes_per_tap[t]}});
  }
  j["taps"] = std::move(taps);
  return j;
}

void Model::load_params(const Checkpoint& ckpt) {
  for (auto& [name, tensor] : named_params()) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw ConfigError(msg("checkpoint missing parameter '", name, "'"));
    if (src->shape() != tensor.shape())
      throw ConfigError(msg("checkpoint parameter '", name, "' has shape ",
                            shape_str(src->shape()), ", model expects ",
                            shape_str(tensor.shape())));
    Tensor dst = tensor;
    std::copy(src->data().begin(), src->data().end(), dst.data().begin());
  }
}

Model build(const NetworkSpec& spec, uint64_t seed) { return Model(spec, seed); }

std::vector<Detection> run_inference(const Model& model, const Tensor& image,
                                     const EvalOptions& opts) {
  Tensor batch = Tensor::zeros({1, 3, image.dim(1), image.dim(2)});
  std::copy(image.data().begin(), image.data().end(), batch.data().begin());
  auto fwd = model.forward(batch);
  return postprocess_predictions(fwd.preds, model.default_boxes(), model.spec().num_classes,
                                 opts);
}

}  // namespace mdfn
