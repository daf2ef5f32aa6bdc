#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mdfn/inception.hpp"
#include "oracles.hpp"

using namespace mdfn;

namespace {

InceptionSpec make_spec(InceptionKind kind, int in, int bneck, int branch, int stride = 1) {
  InceptionSpec s;
  s.kind = kind;
  s.in_channels = in;
  s.bottleneck_channels = bneck;
  s.branch_channels = branch;
  s.stride = stride;
  return s;
}

ConvParams tied_copy(const ConvParams& src) {
  ConvParams p;
  p.weights = src.weights.detached_copy().set_requires_grad(true);
  p.bias = src.bias.detached_copy().set_requires_grad(true);
  p.stride = src.stride;
  p.padding = src.padding;
  return p;
}

// unshared square: the f-branch and the f^2 cascade each own a stage1 copy
Tensor unshared_square(const Tensor& x, const SharedBranchSet& br, const ConvParams& s1_a,
                       const ConvParams& s1_b, const InceptionSpec& spec) {
  Tensor in = spec.stride > 1 ? max_pool2d(x, spec.stride, spec.stride) : x;
  Tensor b = relu(conv2d(in, br.bottleneck));
  Tensor f = relu(conv2d(b, s1_a));
  Tensor cascade_pre = conv2d(b, s1_b);
  Tensor cascade_in = spec.relu_between_stages ? relu(cascade_pre) : cascade_pre;
  Tensor f2 = relu(conv2d(cascade_in, br.stage2));
  return concat_channels({f2, f, f, b});
}

}  // namespace

TEST_CASE("basic inception channel arithmetic and stride halving") {
  Rng rng(7);
  InceptionSpec spec = make_spec(InceptionKind::Basic, 8, 4, 4);
  BasicBranchSet br = BasicBranchSet::create(spec, rng);
  Tensor x = oracle::random_tensor({1, 8, 10, 10}, rng);
  Tensor y = basic_inception(x, br, spec);
  CHECK(y.shape() == std::vector<int>{1, 16, 10, 10});
  CHECK(spec.out_channels() == 16);

  InceptionSpec strided = make_spec(InceptionKind::Basic, 8, 4, 4, 2);
  BasicBranchSet br2 = BasicBranchSet::create(strided, rng);
  Tensor y2 = basic_inception(x, br2, strided);
  CHECK(y2.shape() == std::vector<int>{1, 16, 5, 5});
}

TEST_CASE("impulse response support grows 3 -> 5 -> 7 across cascaded stages") {
  Rng rng(9);
  InceptionSpec spec = make_spec(InceptionKind::Basic, 2, 2, 2);
  BasicBranchSet br = BasicBranchSet::create(spec, rng);
  // positive weights and zero bias keep the response strictly positive
  // inside the geometric support
  for (ConvParams* p : {&br.bottleneck, &br.b3, &br.b5a, &br.b5b, &br.b7a, &br.b7b, &br.b7c}) {
    for (double& v : p->weights.data()) v = 0.1;
    for (double& v : p->bias.data()) v = 0.0;
  }
  const int n = 11, center = 5;
  Tensor x = Tensor::zeros({1, 2, n, n});
  for (int c = 0; c < 2; ++c) x.data()[idx4(2, n, n, 0, c, center, center)] = 1.0;
  Tensor y = basic_inception(x, br, spec);

  // max Chebyshev radius of any nonzero response in a channel block
  auto support = [&](int ch_lo, int ch_hi) {
    int radius = -1;
    for (int ch = ch_lo; ch < ch_hi; ++ch)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (y.data()[idx4(y.dim(1), n, n, 0, ch, i, j)] > 1e-15)
            radius = std::max({radius, std::abs(i - center), std::abs(j - center)});
    return radius;
  };
  // block layout: [bottleneck(2), rf3(2), rf5(2), rf7(2)]
  CHECK(support(0, 2) == 0);   // 1x1 path stays on the impulse
  CHECK(support(2, 4) == 1);   // 3x3: 3-pixel support
  CHECK(support(4, 6) == 2);   // cascaded pair: 5-pixel support
  CHECK(support(6, 8) == 3);   // cascaded triple: 7-pixel support
}

TEST_CASE("square module: decomposition, duplicated block identity, tied reference") {
  Rng rng(13);
  InceptionSpec spec = make_spec(InceptionKind::Square, 8, 4, 3);
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = oracle::random_tensor({2, 8, 6, 6}, rng);
  Tensor y = square_module(x, br, spec);

  // [C, 2C, Cp] blocks
  CHECK(y.dim(1) == 3 + 3 + 3 + 4);
  CHECK(spec.out_channels() == 13);
  CHECK(spec.multiplicities() == std::vector<int>{1, 2, 1});

  // the two f blocks are bit-identical slices
  const int plane = 6 * 6;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < plane; ++p) {
        const double a = y.data()[idx4(13, 6, 6, n, 3 + c, p / 6, p % 6)];
        const double b = y.data()[idx4(13, 6, 6, n, 6 + c, p / 6, p % 6)];
        CHECK(a == b);
      }

  // forward and parameter gradients match an explicitly tied unshared graph
  ConvParams s1_a = tied_copy(br.stage1);
  ConvParams s1_b = tied_copy(br.stage1);
  SharedBranchSet br_ref;
  br_ref.bottleneck = tied_copy(br.bottleneck);
  br_ref.stage2 = tied_copy(br.stage2);
  br_ref.stage1 = s1_a;  // placeholder; reference path uses the copies directly

  Tensor r = oracle::random_tensor(y.shape(), rng);
  auto shared_params = {br.bottleneck.weights, br.bottleneck.bias, br.stage1.weights,
                        br.stage1.bias, br.stage2.weights, br.stage2.bias};
  for (Tensor t : shared_params) t.zero_grad();
  Tensor loss = sum(mul(square_module(x, br, spec), r));
  backward(loss);

  for (Tensor t : {s1_a.weights, s1_a.bias, s1_b.weights, s1_b.bias, br_ref.bottleneck.weights,
                   br_ref.bottleneck.bias, br_ref.stage2.weights, br_ref.stage2.bias})
    t.zero_grad();
  Tensor ref_loss = sum(mul(unshared_square(x, br_ref, s1_a, s1_b, spec), r));
  backward(ref_loss);

  CHECK(std::abs(loss.item() - ref_loss.item()) < 1e-12);
  for (size_t i = 0; i < br.stage1.weights.numel(); ++i) {
    const double tied = s1_a.weights.grad()[i] + s1_b.weights.grad()[i];
    CHECK(std::abs(br.stage1.weights.grad()[i] - tied) < 1e-12);
  }
  for (size_t i = 0; i < br.stage2.weights.numel(); ++i)
    CHECK(std::abs(br.stage2.weights.grad()[i] - br_ref.stage2.weights.grad()[i]) < 1e-12);
  for (size_t i = 0; i < br.bottleneck.weights.numel(); ++i)
    CHECK(std::abs(br.bottleneck.weights.grad()[i] - br_ref.bottleneck.weights.grad()[i]) <
          1e-12);
}

TEST_CASE("cubic module: decomposition, single evaluation, gradient accumulation") {
  Rng rng(17);
  InceptionSpec spec = make_spec(InceptionKind::Cubic, 8, 4, 2);
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = oracle::random_tensor({1, 8, 5, 5}, rng);

  CHECK(spec.multiplicities() == std::vector<int>{1, 3, 3, 1});
  CHECK(spec.out_channels() == 2 + 6 + 6 + 4);

  instr_reset();
  Tensor y = cubic_module(x, br, spec);
  CHECK(y.dim(1) == 18);
  // shared stages execute exactly once per forward despite fan-out
  CHECK(conv_exec_count(br.stage1.weights) == 1);
  CHECK(conv_exec_count(br.stage2.weights) == 1);
  CHECK(conv_exec_count(br.stage3.weights) == 1);
  cubic_module(x, br, spec);
  CHECK(conv_exec_count(br.stage1.weights) == 2);

  // full-module finite differences, including the shared stages
  Tensor xg = x.detached_copy().set_requires_grad(true);
  Tensor r = oracle::random_tensor(y.shape(), rng);
  auto f = [&] { return sum(mul(cubic_module(xg, br, spec), r)); };
  const double err = oracle::finite_diff_check(
      f, {xg, br.bottleneck.weights, br.stage1.weights, br.stage1.bias, br.stage2.weights,
          br.stage3.weights});
  CHECK(err < 1e-6);
}

TEST_CASE("square module finite differences") {
  Rng rng(19);
  InceptionSpec spec = make_spec(InceptionKind::Square, 6, 2, 2);
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = oracle::random_tensor({1, 6, 5, 5}, rng).set_requires_grad(true);
  Tensor r = oracle::random_tensor({1, 8, 5, 5}, rng);
  auto f = [&] { return sum(mul(square_module(x, br, spec), r)); };
  CHECK(oracle::finite_diff_check(f, {x, br.bottleneck.weights, br.stage1.weights,
                                      br.stage2.weights, br.stage2.bias}) < 1e-6);
}

TEST_CASE("parameter and mult-add counting") {
  // two cascaded 3x3 vs one 5x5 at equal width: 18/25
  CHECK(cascaded_weight_ratio(2, 5) == doctest::Approx(18.0 / 25.0));
  CHECK(cascaded_weight_ratio(3, 7) == doctest::Approx(27.0 / 49.0));

  // 1x1 bottleneck C -> C/2: C^2/2 + C/2 parameters
  Rng rng(23);
  for (int c : {4, 8, 16}) {
    ConvParams p = ConvParams::create(c / 2, c, 1, 1, 0, rng);
    CHECK(p.param_count() == static_cast<long long>(c) * c / 2 + c / 2);
  }

  // sharing saves exactly one stage1's worth on the square module
  InceptionSpec spec = make_spec(InceptionKind::Square, 8, 4, 3);
  const long long shared = module_param_count(spec);
  const long long stage1 = static_cast<long long>(3) * 4 * 9 + 3;
  const long long stage2 = static_cast<long long>(3) * 3 * 9 + 3;
  const long long bneck = static_cast<long long>(4) * 8 + 4;
  const long long unshared = bneck + 2 * stage1 + stage2;
  CHECK(shared == bneck + stage1 + stage2);
  CHECK(unshared - shared == stage1);

  // cubic saves one stage1 and one stage2
  InceptionSpec cu = make_spec(InceptionKind::Cubic, 8, 4, 2);
  const long long cu_stage1 = static_cast<long long>(2) * 4 * 9 + 2;
  const long long cu_stage2 = static_cast<long long>(2) * 2 * 9 + 2;
  CHECK(module_param_count(cu) ==
        (static_cast<long long>(4) * 8 + 4) + cu_stage1 + 2 * cu_stage2);

  // mult-adds count shared stages once and follow the realized sizes
  auto [params, macs] = count_params_and_flops(cu, 6, 6);
  CHECK(params == module_param_count(cu));
  const long long want_macs = (4LL * 8 * 1 + 0) * 36   // bottleneck 1x1
                              + 2LL * 4 * 9 * 36       // stage1
                              + 2LL * (2LL * 2 * 9 * 36);  // stage2 + stage3
  CHECK(macs == want_macs);

  // strided module counts at the pooled size
  InceptionSpec cu2 = cu;
  cu2.stride = 2;
  CHECK(module_mult_adds(cu2, 6, 6) ==
        (4LL * 8) * 9 + 2LL * 4 * 9 * 9 + 2LL * (2LL * 2 * 9 * 9));
}

TEST_CASE("module summary metadata and JSON export") {
  InceptionSpec sq = make_spec(InceptionKind::Square, 8, 4, 3);
  ModuleSummary s = module_summary(sq);
  CHECK(s.kind == "square");
  CHECK(s.multiplicities == std::vector<int>{1, 2, 1});
  CHECK(s.out_channels == 13);
  auto j = s.to_json();
  CHECK(j["multiplicities"] == nlohmann::json({1, 2, 1}));
  CHECK(j["branches"].size() == 3);
  CHECK(j["branches"][1]["multiplicity"] == 2);
  CHECK(j["branches"][1]["params"] == 0);  // shared reference, counted once elsewhere

  InceptionSpec cu = make_spec(InceptionKind::Cubic, 14, 7, 1);
  ModuleSummary c = module_summary(cu);
  CHECK(c.multiplicities == std::vector<int>{1, 3, 3, 1});
  CHECK(c.to_json()["param_count"].get<long long>() == module_param_count(cu));

  // the cubic mid multiplicity stays a configuration knob
  InceptionSpec cu2 = cu;
  cu2.cubic_mid_multiplicity = 2;
  CHECK(cu2.multiplicities() == std::vector<int>{1, 2, 3, 1});
  CHECK(cu2.out_channels() == (1 + 2 + 3) * 1 + 7);
}

TEST_CASE("default width derivation") {
  InceptionSpec sq = InceptionSpec::with_default_widths(InceptionKind::Square, 12);
  CHECK(sq.bottleneck_channels == 6);
  CHECK(sq.branch_channels == 2);
  CHECK(sq.out_channels() == 12);

  InceptionSpec cu = InceptionSpec::with_default_widths(InceptionKind::Cubic, 28);
  CHECK(cu.bottleneck_channels == 14);
  CHECK(cu.branch_channels == 2);
  CHECK(cu.out_channels() == 28);

  CHECK_THROWS_AS(InceptionSpec::with_default_widths(InceptionKind::Cubic, 128), ValueError);
}

TEST_CASE("relu_between_stages knob changes the cascade") {
  Rng rng(31);
  InceptionSpec spec = make_spec(InceptionKind::Square, 4, 2, 2);
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor with = square_module(x, br, spec);
  InceptionSpec no_relu = spec;
  no_relu.relu_between_stages = false;
  Tensor without = square_module(x, br, no_relu);
  bool any_diff = false;
  for (size_t i = 0; i < with.numel(); ++i)
    if (with.data()[i] != without.data()[i]) any_diff = true;
  CHECK(any_diff);

  // gradients stay correct on the linear cascade too
  Tensor r = oracle::random_tensor(without.shape(), rng);
  auto f = [&] { return sum(mul(square_module(x, br, no_relu), r)); };
  CHECK(oracle::finite_diff_check(f, {br.stage1.weights, br.stage2.weights}) < 1e-6);
}
