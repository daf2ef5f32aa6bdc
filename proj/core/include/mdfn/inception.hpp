#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mdfn/ops.hpp"

namespace mdfn {

enum class InceptionKind { Basic, Square, Cubic };

const char* inception_kind_name(InceptionKind kind);

// Multi-scale module over a deep feature map. Every receptive field larger
// than 3x3 is built from cascaded 3x3 stages; square/cubic kinds reuse the
// shared stage activations so binomial branch multiplicities cost one
// evaluation each.
struct InceptionSpec {
  InceptionKind kind = InceptionKind::Basic;
  int in_channels = 0;
  int bottleneck_channels = 0;
  int branch_channels = 0;
  int stride = 1;
  // apply ReLU between cascaded 3x3 stages inside a 5x5/7x7 substitute
  bool relu_between_stages = true;
  // channel multiplicity of the middle (squared) term of the cubic module
  int cubic_mid_multiplicity = 3;

  // bottleneck = in/2, branch sized so out_channels == in_channels;
  // throws when that is not integral for the requested kind
  static InceptionSpec with_default_widths(InceptionKind kind, int in_channels);

  std::vector<int> multiplicities() const;  // {1,2,1} square, {1,3,3,1} cubic
  int out_channels() const;
  void validate() const;
};

// Parameters of a square/cubic module. stage1 output feeds both the
// single-stage branch and stage2's input; stage2 output feeds both the
// two-stage branch and stage3's input. stage3 is left undefined for the
// square kind. A module stride > 1 is realized as max-pooling ahead of the
// bottleneck (strided 1x1/3x3 convs cannot halve even grids exactly).
struct SharedBranchSet {
  ConvParams bottleneck;  // 1x1
  ConvParams stage1;      // 3x3: bottleneck_channels -> branch_channels
  ConvParams stage2;      // 3x3: branch_channels -> branch_channels
  ConvParams stage3;      // 3x3 (cubic only)

  static SharedBranchSet create(const InceptionSpec& spec, Rng& rng);
};

// Independent branch parameters of the basic multi-scale module.
struct BasicBranchSet {
  ConvParams bottleneck;
  ConvParams b3;             // 3x3 branch
  ConvParams b5a, b5b;       // cascaded pair, 5x5-equivalent receptive field
  ConvParams b7a, b7b, b7c;  // cascaded triple, 7x7-equivalent receptive field

  static BasicBranchSet create(const InceptionSpec& spec, Rng& rng);
};

// concat([bottleneck, 3x3, 3x3x2, 3x3x3]), ReLU after every conv
Tensor basic_inception(const Tensor& input, const BasicBranchSet& branches,
                       const InceptionSpec& spec);

// concat([s2(s1(x)) x1, s1(x) x2, bottleneck(x) x1])
Tensor square_module(const Tensor& input, const SharedBranchSet& branches,
                     const InceptionSpec& spec);

// concat([s3(s2(s1(x))) x1, s2(s1(x)) x3, s1(x) x3, bottleneck(x) x1])
Tensor cubic_module(const Tensor& input, const SharedBranchSet& branches,
                    const InceptionSpec& spec);

struct BranchInfo {
  std::string name;
  int channels = 0;
  int multiplicity = 1;
  long long params = 0;  // 0 for repeated references to a shared stage
};

struct ModuleSummary {
  std::string kind;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<int> multiplicities;
  std::vector<BranchInfo> branches;
  long long param_count = 0;

  nlohmann::json to_json() const;
};

ModuleSummary module_summary(const InceptionSpec& spec);

// exact counts over the realized graph; shared stages are counted once
long long module_param_count(const InceptionSpec& spec);
long long module_mult_adds(const InceptionSpec& spec, int in_h, int in_w);
std::pair<long long, long long> count_params_and_flops(const InceptionSpec& spec, int in_h,
                                                       int in_w);

// weight count of n cascaded 3x3 convs (C->C) relative to one kxk conv (C->C);
// two cascaded 3x3 vs one 5x5 gives 18/25
double cascaded_weight_ratio(int n_stages, int equivalent_kernel);

// Owning module: parameters plus the forward graph builder.
class InceptionModule {
 public:
  InceptionModule(InceptionSpec spec, std::string name_prefix, Rng& rng);

  Tensor forward(const Tensor& input) const;

  const InceptionSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  ModuleSummary summary() const { return module_summary(spec_); }

  const SharedBranchSet& shared_branches() const;
  const BasicBranchSet& basic_branches() const;

 private:
  InceptionSpec spec_;
  std::string name_;
  SharedBranchSet shared_;
  BasicBranchSet basic_;
};

}  // namespace mdfn
