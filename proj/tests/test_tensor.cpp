#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mdfn/checkpoint.hpp"
#include "mdfn/ops.hpp"
#include "mdfn/sgd.hpp"
#include "oracles.hpp"

using namespace mdfn;

TEST_CASE("conv2d box filter counts neighborhood") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  ConvParams p;
  p.weights = Tensor::full({1, 1, 3, 3}, 1.0).set_requires_grad(true);
  p.bias = Tensor::zeros({1}).set_requires_grad(true);
  p.stride = 1;
  p.padding = 1;
  Tensor y = conv2d(x, p);
  CHECK(y.shape() == std::vector<int>{1, 1, 3, 3});
  CHECK(y.data()[4] == doctest::Approx(9.0));  // center
  CHECK(y.data()[0] == doctest::Approx(4.0));  // corner
  CHECK(y.data()[1] == doctest::Approx(6.0));  // edge
}

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(3);
  Tensor x = oracle::random_tensor({2, 1, 4, 5}, rng);
  ConvParams p;
  p.weights = Tensor::full({1, 1, 1, 1}, 1.0);
  p.bias = Tensor::zeros({1});
  Tensor y = conv2d(x, p);
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches the nested-loop reference") {
  Rng rng(11);
  Tensor x = oracle::random_tensor({2, 3, 8, 8}, rng);
  ConvParams p = ConvParams::create(4, 3, 3, 1, 1, rng);
  Tensor y = conv2d(x, p);
  auto ref = oracle::naive_conv2d({x.data().begin(), x.data().end()}, 2, 3, 8, 8,
                                  {p.weights.data().begin(), p.weights.data().end()},
                                  {p.bias.data().begin(), p.bias.data().end()}, 4, 3, 1, 1);
  REQUIRE(ref.size() == y.numel());
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(y.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Rng rng(5);
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  ConvParams p = ConvParams::create(3, 4, 3, 1, 1, rng);
  CHECK_THROWS_WITH_AS(conv2d(x, p),
                       doctest::Contains("(1,2,4,4)"), ShapeError);
}

TEST_CASE("conv2d kernel restriction and parameter count") {
  Rng rng(5);
  CHECK_THROWS_AS(ConvParams::create(2, 2, 5, 1, 2, rng), ValueError);
  ConvParams p = ConvParams::create(8, 3, 3, 1, 1, rng);
  CHECK(p.param_count() == 8 * 3 * 9 + 8);
  ConvParams q = ConvParams::create(4, 6, 1, 1, 0, rng);
  CHECK(q.param_count() == 4 * 6 + 4);
}

TEST_CASE("conv output shape algebra across pad/stride combinations") {
  Rng rng(17);
  for (int h : {5, 7, 9, 12}) {
    for (int pad : {0, 1, 2}) {
      for (int stride : {1, 2, 3}) {
        const int num = h + 2 * pad - 3;
        if (num < 0 || num % stride != 0) continue;
        Tensor x = oracle::random_tensor({1, 2, h, h}, rng);
        ConvParams p = ConvParams::create(2, 2, 3, stride, pad, rng);
        Tensor y = conv2d(x, p);
        CHECK(y.dim(2) == num / stride + 1);
        CHECK(y.dim(3) == num / stride + 1);
      }
    }
  }
  CHECK_THROWS_AS(conv_out_extent(4, 3, 2, 0), ShapeError);  // (4-3)/2 not integral
}

TEST_CASE("relu forward and gradient mask") {
  Tensor x = Tensor::from_vector({3}, {-1.0, 0.0, 2.0}).set_requires_grad(true);
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);

  Tensor pos = Tensor::from_vector({4}, {0.5, 1.0, 2.0, 3.5});
  Tensor ypos = relu(pos);
  for (size_t i = 0; i < pos.numel(); ++i) CHECK(ypos.data()[i] == pos.data()[i]);

  Tensor g = Tensor::from_vector({2}, {-0.5, 0.5}).set_requires_grad(true);
  g.zero_grad();
  Tensor loss = sum(relu(g));
  backward(loss);
  CHECK(g.grad()[0] == 0.0);  // x <= 0 blocks
  CHECK(g.grad()[1] == 1.0);  // upstream passes
}

TEST_CASE("max_pool2d basics, tie-break, oracle agreement") {
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = max_pool2d(x, 2, 2);
  CHECK(y.numel() == 1);
  CHECK(y.data()[0] == 4.0);

  // constant input: gradient concentrates on the first element per window
  Tensor c = Tensor::full({1, 1, 4, 4}, 2.5).set_requires_grad(true);
  c.zero_grad();
  Tensor loss = sum(max_pool2d(c, 2, 2));
  backward(loss);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(c.grad()[i * 4 + j] == ((i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0));

  Rng rng(23);
  Tensor r = oracle::random_tensor({1, 1, 6, 6}, rng);
  Tensor pooled = max_pool2d(r, 2, 2);
  auto ref = oracle::naive_max_pool({r.data().begin(), r.data().end()}, 1, 1, 6, 6, 2, 2);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(pooled.data()[i] == ref[i]);

  CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 1, 3, 3}), 4, 1), ShapeError);
}

TEST_CASE("concat_channels ordering, identity, gradient routing, errors") {
  Rng rng(29);
  Tensor a = oracle::random_tensor({1, 2, 4, 4}, rng);
  Tensor b = oracle::random_tensor({1, 2, 4, 4}, rng);
  Tensor y = concat_channels({a, b});
  CHECK(y.shape() == std::vector<int>{1, 4, 4, 4});
  for (size_t i = 0; i < a.numel(); ++i) {
    CHECK(y.data()[i] == a.data()[i]);
    CHECK(y.data()[i + a.numel()] == b.data()[i]);
  }

  Tensor single = concat_channels({a});
  for (size_t i = 0; i < a.numel(); ++i) CHECK(single.data()[i] == a.data()[i]);

  Tensor ga = a.detached_copy().set_requires_grad(true);
  Tensor gb = b.detached_copy().set_requires_grad(true);
  ga.zero_grad();
  gb.zero_grad();
  Tensor loss = sum(concat_channels({ga, gb}));
  backward(loss);
  for (double v : ga.grad()) CHECK(v == 1.0);
  for (double v : gb.grad()) CHECK(v == 1.0);

  Tensor bad = Tensor::zeros({1, 2, 5, 4});
  CHECK_THROWS_WITH_AS(concat_channels({a, bad}), doctest::Contains("input 1"), ShapeError);
}

TEST_CASE("softmax_cross_entropy values and errors") {
  Tensor uniform = Tensor::zeros({2, 4});
  Tensor l1 = softmax_cross_entropy(uniform, {1, 3});
  CHECK(l1.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor margin = Tensor::from_vector({1, 3}, {50.0, 0.0, 0.0});
  CHECK(softmax_cross_entropy(margin, {0}).item() < 1e-9);

  Rng rng(31);
  Tensor logits = oracle::random_tensor({5, 3}, rng, -3.0, 3.0);
  std::vector<int> targets = {0, 2, 1, 1, 0};
  const double ref = oracle::logsumexp_ce({logits.data().begin(), logits.data().end()}, 5, 3,
                                          targets);
  CHECK(softmax_cross_entropy(logits, targets).item() == doctest::Approx(ref).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1, 2, 3, 0}), ValueError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1}), ShapeError);
}

TEST_CASE("smooth_l1 closed forms and reference") {
  Tensor zero_d = Tensor::from_vector({2}, {1.0, -2.0});
  CHECK(smooth_l1(zero_d, zero_d.detached_copy()).item() == 0.0);

  Tensor p = Tensor::from_vector({2}, {0.5, 2.0});
  Tensor t = Tensor::zeros({2});
  CHECK(smooth_l1(slice_cols(reshape(p, {1, 2}), 0, 1),
                  Tensor::from_vector({1, 1}, {0.0}))
            .item() == doctest::Approx(0.125));
  CHECK(smooth_l1(p, t).item() == doctest::Approx(0.125 + 1.5));

  Rng rng(37);
  Tensor rp = oracle::random_tensor({3, 4}, rng, -2.0, 2.0);
  Tensor rt = oracle::random_tensor({3, 4}, rng, -2.0, 2.0);
  const double ref = oracle::smooth_l1_ref({rp.data().begin(), rp.data().end()},
                                           {rt.data().begin(), rt.data().end()});
  CHECK(smooth_l1(rp, rt).item() == doctest::Approx(ref).epsilon(1e-12));

  CHECK_THROWS_AS(smooth_l1(rp, Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("backward: linear case, disconnected parameter, double call") {
  Rng rng(41);
  Tensor w = oracle::random_tensor({3, 2}, rng).set_requires_grad(true);
  Tensor b = Tensor::zeros({3}).set_requires_grad(true);
  Tensor x = oracle::random_tensor({4, 2}, rng);
  w.zero_grad();
  b.zero_grad();
  Tensor loss = sum(linear(x, w, b));
  backward(loss);
  // d sum(xW^T + b) / dW[o][i] = sum_n x[n][i]
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 2; ++i) {
      double want = 0.0;
      for (int n = 0; n < 4; ++n) want += x.data()[n * 2 + i];
      CHECK(w.grad()[o * 2 + i] == doctest::Approx(want).epsilon(1e-12));
    }
  for (double g : b.grad()) CHECK(g == doctest::Approx(4.0));

  Tensor lonely = oracle::random_tensor({5}, rng).set_requires_grad(true);
  lonely.zero_grad();
  for (double g : lonely.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(backward(loss), ValueError);  // same graph, no rebuild
}

TEST_CASE("finite differences pass for every primitive op") {
  Rng rng(43);
  double err = 0.0;

  {  // conv2d wrt input, weights, bias
    Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng).set_requires_grad(true);
    ConvParams p = ConvParams::create(3, 2, 3, 1, 1, rng);
    Tensor r = oracle::random_tensor({1, 3, 5, 5}, rng);
    auto f = [&] { return sum(mul(conv2d(x, p), r)); };
    err = oracle::finite_diff_check(f, {x, p.weights, p.bias});
    CHECK(err < 1e-6);
  }
  {  // pool + relu composition
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng).set_requires_grad(true);
    Tensor r = oracle::random_tensor({1, 2, 3, 3}, rng);
    auto f = [&] { return sum(mul(relu(max_pool2d(x, 2, 2)), r)); };
    CHECK(oracle::finite_diff_check(f, {x}) < 1e-6);
  }
  {  // concat + permute + reshape + slice + gather
    Tensor a = oracle::random_tensor({1, 2, 3, 3}, rng).set_requires_grad(true);
    Tensor b = oracle::random_tensor({1, 1, 3, 3}, rng).set_requires_grad(true);
    Tensor r = oracle::random_tensor({4, 2}, rng);
    auto f = [&] {
      Tensor rows = reshape(permute_bhwc(concat_channels({a, b})), {9, 3});
      Tensor picked = gather_rows(slice_cols(rows, 0, 2), {0, 3, 3, 8});
      return sum(mul(picked, r));
    };
    CHECK(oracle::finite_diff_check(f, {a, b}) < 1e-6);
  }
  {  // cross-entropy + smooth-l1 + add/scale
    Tensor logits = oracle::random_tensor({4, 3}, rng).set_requires_grad(true);
    Tensor pred = oracle::random_tensor({2, 4}, rng).set_requires_grad(true);
    Tensor tgt = oracle::random_tensor({2, 4}, rng, -0.4, 0.4);
    std::vector<int> targets = {0, 2, 1, 1};
    auto f = [&] {
      Tensor ce = softmax_cross_entropy(logits, targets, Reduction::Sum);
      Tensor sl = smooth_l1(pred, tgt);
      return scale(add(ce, scale(sl, 0.7)), 0.25);
    };
    CHECK(oracle::finite_diff_check(f, {logits, pred}) < 1e-6);
  }
  {  // linear wrt input, weights, bias
    Tensor x = oracle::random_tensor({2, 4}, rng).set_requires_grad(true);
    Tensor w = oracle::random_tensor({3, 4}, rng).set_requires_grad(true);
    Tensor bias = oracle::random_tensor({3}, rng).set_requires_grad(true);
    Tensor r = oracle::random_tensor({2, 3}, rng);
    auto g = [&] { return sum(mul(linear(x, w, bias), r)); };
    CHECK(oracle::finite_diff_check(g, {x, w, bias}) < 1e-6);
  }
}

TEST_CASE("sgd_step closed forms") {
  {  // plain step
    Tensor p = Tensor::from_vector({1}, {1.0}).set_requires_grad(true);
    p.zero_grad();
    p.grad()[0] = 1.0;
    SgdOptimizer opt({p}, {0.1, 0.0, 0.0});
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
  }
  {  // decay-only pulls toward zero
    Tensor p = Tensor::from_vector({1}, {2.0}).set_requires_grad(true);
    p.zero_grad();
    SgdOptimizer opt({p}, {0.5, 0.0, 0.1});
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0));
    const double after_one = p.data()[0];
    opt.step();
    CHECK(p.data()[0] < after_one);
  }
  {  // two momentum steps vs hand-unrolled recurrence
    Tensor p = Tensor::from_vector({1}, {1.0}).set_requires_grad(true);
    p.zero_grad();
    SgdOptimizer opt({p}, {0.1, 0.9, 0.0});
    p.grad()[0] = 0.5;
    opt.step();
    double v = -0.1 * 0.5;
    double ref = 1.0 + v;
    CHECK(p.data()[0] == doctest::Approx(ref).epsilon(1e-15));
    p.zero_grad();
    p.grad()[0] = 0.25;
    opt.step();
    v = 0.9 * v - 0.1 * 0.25;
    ref += v;
    CHECK(p.data()[0] == doctest::Approx(ref).epsilon(1e-15));
  }
  {  // missing grad is an error
    Tensor p = Tensor::from_vector({1}, {1.0}).set_requires_grad(true);
    SgdOptimizer opt({p}, {0.1, 0.9, 0.0});
    CHECK_THROWS_AS(opt.step(), ValueError);
  }
}

TEST_CASE("training micro-loop is bit-deterministic") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    ConvParams p = ConvParams::create(2, 1, 3, 1, 1, rng);
    SgdOptimizer opt({p.weights, p.bias}, {0.05, 0.9, 0.0005});
    for (int it = 0; it < 5; ++it) {
      Tensor x = oracle::random_tensor({1, 1, 6, 6}, rng);
      Tensor target = oracle::random_tensor({1, 2, 6, 6}, rng);
      opt.zero_grad();
      Tensor loss = smooth_l1(reshape(conv2d(x, p), {1, 72}), reshape(target, {1, 72}));
      backward(loss);
      opt.step();
    }
    return std::vector<double>(p.weights.data().begin(), p.weights.data().end());
  };
  auto a = run(99), b = run(99), c = run(100);
  CHECK(a == b);   // bit-identical
  CHECK(a != c);   // seed actually matters
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(47);
  Tensor a = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({7}, rng);
  // denormal-ish and special values survive
  a.data()[0] = 1e-310;
  a.data()[1] = -0.0;
  const std::string path = (std::filesystem::temp_directory_path() / "mdfn_ckpt_test.ckpt")
                               .string();
  save_checkpoint(path, {{"layer.weight", a}, {"layer.bias", b}},
                  {{"variant", "test"}, {"iteration", 3}});
  Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.meta.at("iteration").get<int>() == 3);
  REQUIRE(ckpt.find("layer.weight") != nullptr);
  REQUIRE(ckpt.find("layer.bias") != nullptr);
  const Tensor& ra = *ckpt.find("layer.weight");
  CHECK(ra.shape() == a.shape());
  for (size_t i = 0; i < a.numel(); ++i) {
    uint64_t bits_a, bits_r;
    std::memcpy(&bits_a, &a.data()[i], 8);
    std::memcpy(&bits_r, &ra.data()[i], 8);
    CHECK(bits_a == bits_r);
  }
  std::filesystem::remove(path);
}

TEST_CASE("finite-check mode flags NaN outputs") {
  set_finite_check_enabled(true);
  Tensor x = Tensor::from_vector({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(scale(x, 2.0), ValueError);
  set_finite_check_enabled(false);
  CHECK_NOTHROW(scale(x, 2.0));
}
