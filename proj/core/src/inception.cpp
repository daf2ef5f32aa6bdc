#include "mdfn/inception.hpp"

namespace mdfn {

const char* inception_kind_name(InceptionKind kind) {
  switch (kind) {
    case InceptionKind::Basic:
      return "basic";
    case InceptionKind::Square:
      return "square";
    case InceptionKind::Cubic:
      return "cubic";
  }
  return "?";
}

InceptionSpec InceptionSpec::with_default_widths(InceptionKind kind, int in_channels) {
  InceptionSpec spec;
  spec.kind = kind;
  spec.in_channels = in_channels;
  spec.bottleneck_channels = in_channels / 2;
  if (in_channels % 2 != 0)
    throw ValueError(msg("default widths need even in_channels, got ", in_channels));
  const int remainder = in_channels - spec.bottleneck_channels;
  int mult_sum = 0;
  switch (kind) {
    case InceptionKind::Basic:
      mult_sum = 3;
      break;
    case InceptionKind::Square:
      mult_sum = 3;
      break;
    case InceptionKind::Cubic:
      mult_sum = 7;
      break;
  }
  if (remainder % mult_sum != 0)
    throw ValueError(msg("default widths for ", inception_kind_name(kind), ": (",
                         in_channels, " - ", spec.bottleneck_channels,
                         ") not divisible by ", mult_sum,
                         "; configure branch_channels explicitly"));
  spec.branch_channels = remainder / mult_sum;
  spec.validate();
  return spec;
}

std::vector<int> InceptionSpec::multiplicities() const {
  switch (kind) {
    case InceptionKind::Basic:
      return {1, 1, 1, 1};
    case InceptionKind::Square:
      return {1, 2, 1};
    case InceptionKind::Cubic:
      return {1, cubic_mid_multiplicity, 3, 1};
  }
  return {};
}

int InceptionSpec::out_channels() const {
  switch (kind) {
    case InceptionKind::Basic:
      return bottleneck_channels + 3 * branch_channels;
    case InceptionKind::Square:
      return 3 * branch_channels + bottleneck_channels;
    case InceptionKind::Cubic:
      return (1 + cubic_mid_multiplicity + 3) * branch_channels + bottleneck_channels;
  }
  return 0;
}

void InceptionSpec::validate() const {
  if (in_channels <= 0 || bottleneck_channels <= 0 || branch_channels <= 0)
    throw ValueError(msg("InceptionSpec: channel counts must be positive: in=", in_channels,
                         " bottleneck=", bottleneck_channels, " branch=", branch_channels));
  if (stride <= 0) throw ValueError(msg("InceptionSpec: stride must be positive, got ", stride));
  if (cubic_mid_multiplicity < 1)
    throw ValueError(msg("InceptionSpec: cubic_mid_multiplicity must be >= 1, got ",
                         cubic_mid_multiplicity));
}

SharedBranchSet SharedBranchSet::create(const InceptionSpec& spec, Rng& rng) {
  spec.validate();
  SharedBranchSet set;
  set.bottleneck = ConvParams::create(spec.bottleneck_channels, spec.in_channels, 1, 1, 0, rng);
  set.stage1 = ConvParams::create(spec.branch_channels, spec.bottleneck_channels, 3, 1, 1, rng);
  set.stage2 = ConvParams::create(spec.branch_channels, spec.branch_channels, 3, 1, 1, rng);
  if (spec.kind == InceptionKind::Cubic)
    set.stage3 = ConvParams::create(spec.branch_channels, spec.branch_channels, 3, 1, 1, rng);
  return set;
}

BasicBranchSet BasicBranchSet::create(const InceptionSpec& spec, Rng& rng) {
  spec.validate();
  BasicBranchSet set;
  const int cb = spec.bottleneck_channels, c = spec.branch_channels;
  set.bottleneck = ConvParams::create(cb, spec.in_channels, 1, 1, 0, rng);
  set.b3 = ConvParams::create(c, cb, 3, 1, 1, rng);
  set.b5a = ConvParams::create(c, cb, 3, 1, 1, rng);
  set.b5b = ConvParams::create(c, c, 3, 1, 1, rng);
  set.b7a = ConvParams::create(c, cb, 3, 1, 1, rng);
  set.b7b = ConvParams::create(c, c, 3, 1, 1, rng);
  set.b7c = ConvParams::create(c, c, 3, 1, 1, rng);
  return set;
}

namespace {

// kernel sizes are restricted to 1/3 and conv output sizes must divide
// exactly, so spatial reduction happens through pooling ahead of the module
Tensor apply_stride(const Tensor& input, int stride) {
  return stride > 1 ? max_pool2d(input, stride, stride) : input;
}

}  // namespace

Tensor basic_inception(const Tensor& x, const BasicBranchSet& branches,
                       const InceptionSpec& spec) {
  if (spec.kind != InceptionKind::Basic)
    throw ValueError("basic_inception: spec.kind is not basic");
  const Tensor input = apply_stride(x, spec.stride);
  const Tensor b = relu(conv2d(input, branches.bottleneck));
  const Tensor r3 = relu(conv2d(b, branches.b3));

  Tensor r5_mid = conv2d(b, branches.b5a);
  if (spec.relu_between_stages) r5_mid = relu(r5_mid);
  const Tensor r5 = relu(conv2d(r5_mid, branches.b5b));

  Tensor r7_mid = conv2d(b, branches.b7a);
  if (spec.relu_between_stages) r7_mid = relu(r7_mid);
  Tensor r7_mid2 = conv2d(r7_mid, branches.b7b);
  if (spec.relu_between_stages) r7_mid2 = relu(r7_mid2);
  const Tensor r7 = relu(conv2d(r7_mid2, branches.b7c));

  return concat_channels({b, r3, r5, r7});
}

namespace {

// shared cascade: each stage conv runs once; branch outputs are the
// activated stage results, the next stage consumes the (optionally
// unactivated) shared result
struct CascadeOut {
  Tensor b_act, s1_act, s2_act, s3_act;
};

CascadeOut run_cascade(const Tensor& x, const SharedBranchSet& br, const InceptionSpec& spec,
                       bool with_stage3) {
  CascadeOut out;
  const Tensor input = apply_stride(x, spec.stride);
  out.b_act = relu(conv2d(input, br.bottleneck));
  Tensor s1_pre = conv2d(out.b_act, br.stage1);
  out.s1_act = relu(s1_pre);
  const Tensor& s2_in = spec.relu_between_stages ? out.s1_act : s1_pre;
  Tensor s2_pre = conv2d(s2_in, br.stage2);
  out.s2_act = relu(s2_pre);
  if (with_stage3) {
    const Tensor& s3_in = spec.relu_between_stages ? out.s2_act : s2_pre;
    out.s3_act = relu(conv2d(s3_in, br.stage3));
  }
  return out;
}

}  // namespace

Tensor square_module(const Tensor& input, const SharedBranchSet& branches,
                     const InceptionSpec& spec) {
  if (spec.kind != InceptionKind::Square)
    throw ValueError("square_module: spec.kind is not square");
  CascadeOut c = run_cascade(input, branches, spec, false);
  // multiplicities {1,2,1}: the doubled block is the same activation twice
  return concat_channels({c.s2_act, c.s1_act, c.s1_act, c.b_act});
}

Tensor cubic_module(const Tensor& input, const SharedBranchSet& branches,
                    const InceptionSpec& spec) {
  if (spec.kind != InceptionKind::Cubic)
    throw ValueError("cubic_module: spec.kind is not cubic");
  CascadeOut c = run_cascade(input, branches, spec, true);
  std::vector<Tensor> parts;
  parts.push_back(c.s3_act);
  for (int i = 0; i < spec.cubic_mid_multiplicity; ++i) parts.push_back(c.s2_act);
  for (int i = 0; i < 3; ++i) parts.push_back(c.s1_act);
  parts.push_back(c.b_act);
  return concat_channels(parts);
}

namespace {

long long conv_params(int out_c, int in_c, int k) {
  return static_cast<long long>(out_c) * in_c * k * k + out_c;
}

long long conv_macs(int out_c, int in_c, int k, int h, int w) {
  return static_cast<long long>(out_c) * in_c * k * k * h * w;
}

}  // namespace

ModuleSummary module_summary(const InceptionSpec& spec) {
  spec.validate();
  ModuleSummary s;
  s.kind = inception_kind_name(spec.kind);
  s.in_channels = spec.in_channels;
  s.out_channels = spec.out_channels();
  s.multiplicities = spec.multiplicities();
  const int cb = spec.bottleneck_channels, c = spec.branch_channels;
  const long long p_bneck = conv_params(cb, spec.in_channels, 1);
  const long long p_first = conv_params(c, cb, 3);
  const long long p_next = conv_params(c, c, 3);
  switch (spec.kind) {
    case InceptionKind::Basic:
      s.branches = {{"passthrough_1x1", cb, 1, p_bneck},
                    {"rf3", c, 1, p_first},
                    {"rf5_cascade", c, 1, p_first + p_next},
                    {"rf7_cascade", c, 1, p_first + 2 * p_next}};
      break;
    case InceptionKind::Square:
      s.branches = {{"rf5_cascade", c, 1, p_first + p_next},
                    {"rf3_shared", c, 2, 0},
                    {"passthrough_1x1", cb, 1, p_bneck}};
      break;
    case InceptionKind::Cubic:
      s.branches = {{"rf7_cascade", c, 1, p_first + 2 * p_next},
                    {"rf5_shared", c, spec.cubic_mid_multiplicity, 0},
                    {"rf3_shared", c, 3, 0},
                    {"passthrough_1x1", cb, 1, p_bneck}};
      break;
  }
  s.param_count = module_param_count(spec);
  return s;
}

long long module_param_count(const InceptionSpec& spec) {
  spec.validate();
  const int cb = spec.bottleneck_channels, c = spec.branch_channels;
  const long long p_bneck = conv_params(cb, spec.in_channels, 1);
  const long long p_first = conv_params(c, cb, 3);
  const long long p_next = conv_params(c, c, 3);
  switch (spec.kind) {
    case InceptionKind::Basic:
      // independent cascades: 3 first-stage convs plus 3 continuation convs
      return p_bneck + 3 * p_first + 3 * p_next;
    case InceptionKind::Square:
      return p_bneck + p_first + p_next;
    case InceptionKind::Cubic:
      return p_bneck + p_first + 2 * p_next;
  }
  return 0;
}

long long module_mult_adds(const InceptionSpec& spec, int in_h, int in_w) {
  spec.validate();
  const int h = spec.stride > 1 ? pool_out_extent(in_h, spec.stride, spec.stride) : in_h;
  const int w = spec.stride > 1 ? pool_out_extent(in_w, spec.stride, spec.stride) : in_w;
  const int cb = spec.bottleneck_channels, c = spec.branch_channels;
  const long long m_bneck = conv_macs(cb, spec.in_channels, 1, h, w);
  const long long m_first = conv_macs(c, cb, 3, h, w);
  const long long m_next = conv_macs(c, c, 3, h, w);
  switch (spec.kind) {
    case InceptionKind::Basic:
      return m_bneck + 3 * m_first + 3 * m_next;
    case InceptionKind::Square:
      return m_bneck + m_first + m_next;
    case InceptionKind::Cubic:
      return m_bneck + m_first + 2 * m_next;
  }
  return 0;
}

std::pair<long long, long long> count_params_and_flops(const InceptionSpec& spec, int in_h,
                                                       int in_w) {
  return {module_param_count(spec), module_mult_adds(spec, in_h, in_w)};
}

double cascaded_weight_ratio(int n_stages, int equivalent_kernel) {
  if (n_stages <= 0 || equivalent_kernel <= 0)
    throw ValueError("cascaded_weight_ratio: arguments must be positive");
  return static_cast<double>(9 * n_stages) /
         static_cast<double>(equivalent_kernel * equivalent_kernel);
}

InceptionModule::InceptionModule(InceptionSpec spec, std::string name_prefix, Rng& rng)
    : spec_(spec), name_(std::move(name_prefix)) {
  spec_.validate();
  if (spec_.kind == InceptionKind::Basic) {
    basic_ = BasicBranchSet::create(spec_, rng);
  } else {
    shared_ = SharedBranchSet::create(spec_, rng);
  }
  auto np = named_params();
  for (auto& [n, t] : np) t.set_name(n);
}

Tensor InceptionModule::forward(const Tensor& input) const {
  switch (spec_.kind) {
    case InceptionKind::Basic:
      return basic_inception(input, basic_, spec_);
    case InceptionKind::Square:
      return square_module(input, shared_, spec_);
    case InceptionKind::Cubic:
      return cubic_module(input, shared_, spec_);
  }
  throw ValueError("InceptionModule: unknown kind");
}

std::vector<std::pair<std::string, Tensor>> InceptionModule::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const std::string& sub, const ConvParams& p) {
    if (!p.weights.defined()) return;
    out.emplace_back(name_ + "." + sub + ".weight", p.weights);
    out.emplace_back(name_ + "." + sub + ".bias", p.bias);
  };
  if (spec_.kind == InceptionKind::Basic) {
    push("bottleneck", basic_.bottleneck);
    push("b3", basic_.b3);
    push("b5a", basic_.b5a);
    push("b5b", basic_.b5b);
    push("b7a", basic_.b7a);
    push("b7b", basic_.b7b);
    push("b7c", basic_.b7c);
  } else {
    push("bottleneck", shared_.bottleneck);
    push("stage1", shared_.stage1);
    push("stage2", shared_.stage2);
    push("stage3", shared_.stage3);
  }
  return out;
}

const SharedBranchSet& InceptionModule::shared_branches() const {
  if (spec_.kind == InceptionKind::Basic)
    throw ValueError("shared_branches: basic module has independent branches");
  return shared_;
}

const BasicBranchSet& InceptionModule::basic_branches() const {
  if (spec_.kind != InceptionKind::Basic)
    throw ValueError("basic_branches: module is not basic");
  return basic_;
}

nlohmann::json ModuleSummary::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["in_channels"] = in_channels;
  j["out_channels"] = out_channels;
  j["multiplicities"] = multiplicities;
  j["param_count"] = param_count;
  nlohmann::json br = nlohmann::json::array();
  for (const auto& b : branches) {
    br.push_back({{"name", b.name},
                  {"channels", b.channels},
                  {"multiplicity", b.multiplicity},
                  {"params", b.params}});
  }
  j["branches"] = std::move(br);
  return j;
}

}  // namespace mdfn
