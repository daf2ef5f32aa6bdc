#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mdfn/network.hpp"
#include "mdfn/train.hpp"
#include "oracles.hpp"

using namespace mdfn;

TEST_CASE("variant unit rosters") {
  NetworkSpec i1 = NetworkSpec::make(Variant::MdfnI1);
  NetworkSpec i2 = NetworkSpec::make(Variant::MdfnI2);
  NetworkSpec base = NetworkSpec::make(Variant::Baseline);

  auto count_kinds = [](const NetworkSpec& s, UnitKind k) {
    int n = 0;
    for (const auto& u : s.units)
      if (u.kind == k) ++n;
    return n;
  };
  CHECK(count_kinds(i2, UnitKind::Cubic) == 2);
  CHECK(count_kinds(i2, UnitKind::Square) == 2);
  CHECK(count_kinds(i1, UnitKind::Cubic) == 2);
  CHECK(count_kinds(i1, UnitKind::Square) == 1);
  CHECK(count_kinds(i1, UnitKind::Plain) == 1);
  CHECK(count_kinds(base, UnitKind::Plain) == 4);

  CHECK(i1.multiscale_feature_depth() == 3);
  CHECK(i2.multiscale_feature_depth() == 4);

  // kind arrangement is an invariant, not a suggestion
  NetworkSpec bad = i1;
  bad.units[0].kind = UnitKind::Square;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward produces five taps of strictly decreasing size") {
  for (Variant v : {Variant::MdfnI1, Variant::MdfnI2, Variant::Baseline}) {
    Model model(NetworkSpec::make(v), 7);
    Rng rng(19);
    Tensor batch = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
    auto fwd = model.forward(batch);
    REQUIRE(fwd.taps.size() == 5);
    REQUIRE(fwd.preds.size() == 5);

    const std::vector<int> want = {16, 8, 4, 2, 1};
    for (size_t t = 0; t < fwd.taps.size(); ++t) {
      CHECK(fwd.taps[t].dim(2) == want[t]);
      CHECK(fwd.taps[t].dim(3) == want[t]);
      CHECK(fwd.preds[t].dim(1) == model.spec().boxes_per_cell() * (4 + 4));
    }

    // each prediction is one conv away from its tap, nothing in between
    for (size_t t = 0; t < fwd.preds.size(); ++t)
      CHECK(fwd.preds[t].ptr()->parents[0].get() == fwd.taps[t].ptr().get());
  }
}

TEST_CASE("default box grid matches tap geometry") {
  Model model(NetworkSpec::make(Variant::MdfnI2), 7);
  const auto& grid = model.default_boxes();
  CHECK(grid.boxes_per_cell == 6);
  CHECK(grid.total() == 6 * (16 * 16 + 8 * 8 + 4 * 4 + 2 * 2 + 1));
  long long preds_cover = 0;
  for (auto [m, n] : model.tap_shapes()) preds_cover += 6LL * m * n;
  CHECK(preds_cover == grid.total());
}

TEST_CASE("end-to-end gradient reaches the first backbone conv") {
  Model model(NetworkSpec::make(Variant::MdfnI2), 11);
  Rng rng(23);
  Tensor batch = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
  std::vector<GroundTruthBox> gts = {{Box{0.4, 0.4, 0.3, 0.3}, 1},
                                     {Box{0.75, 0.7, 0.2, 0.25}, 2}};
  auto assignment = match(model.default_boxes(), gts);
  REQUIRE(assignment.n_matched > 0);

  for (Tensor p : model.params()) p.zero_grad();
  auto fwd = model.forward(batch);
  auto loss = detection_loss(fwd.preds, model.default_boxes(), {assignment}, {gts},
                             model.spec().num_classes);
  backward(loss.loss);

  auto named = model.named_params();
  bool conv1_nonzero = false;
  for (auto& [name, t] : named)
    if (name == "backbone.conv1.weight")
      for (double g : t.grad())
        if (g != 0.0) conv1_nonzero = true;
  CHECK(conv1_nonzero);
}

TEST_CASE("I1 and I2 differ in exactly the fourth unit") {
  Model i1(NetworkSpec::make(Variant::MdfnI1), 3);
  Model i2(NetworkSpec::make(Variant::MdfnI2), 3);
  auto s1 = i1.structural_summary();
  auto s2 = i2.structural_summary();

  int diffs = 0;
  for (int u = 0; u < 4; ++u) {
    const bool same_kind = s1["units"][u]["kind"] == s2["units"][u]["kind"];
    if (!same_kind) ++diffs;
    if (u < 3) {
      CHECK(same_kind);
      CHECK(s1["units"][u]["param_count"] == s2["units"][u]["param_count"]);
    }
  }
  CHECK(diffs == 1);
  CHECK(s1["units"][3]["kind"] == "plain");
  CHECK(s2["units"][3]["kind"] == "square");

  // the whole parameter delta is the swapped unit plus its head
  const long long delta = i2.param_count() - i1.param_count();
  const long long unit_delta = s2["units"][3]["param_count"].get<long long>() -
                               s1["units"][3]["param_count"].get<long long>();
  const long long head_delta = s2["taps"][4]["head_params"].get<long long>() -
                               s1["taps"][4]["head_params"].get<long long>();
  CHECK(delta == unit_delta + head_delta);
  CHECK(i2.param_count() > i1.param_count());
}

TEST_CASE("parameter increase over the baseline sits in the claimed band") {
  Model base(NetworkSpec::make(Variant::Baseline), 3);
  Model i1(NetworkSpec::make(Variant::MdfnI1), 3);
  Model i2(NetworkSpec::make(Variant::MdfnI2), 3);
  const double r1 = static_cast<double>(i1.param_count()) / base.param_count();
  const double r2 = static_cast<double>(i2.param_count()) / base.param_count();
  CHECK(r1 >= 1.05);
  CHECK(r1 <= 1.20);
  CHECK(r2 >= 1.05);
  CHECK(r2 <= 1.20);
}

TEST_CASE("zeroing any single tap's predictions changes the evaluation output") {
  Model model(NetworkSpec::make(Variant::MdfnI2), 5);
  SceneSpec sspec;
  sspec.seed = 13;
  sspec.min_objects = 3;
  sspec.max_objects = 5;
  Scene scene = generate(sspec, 0);
  Tensor batch = Tensor::zeros({1, 3, 64, 64});
  std::copy(scene.image.data().begin(), scene.image.data().end(), batch.data().begin());

  auto fwd = model.forward(batch);
  // permissive decode keeps every box so the probe sees the whole output
  EvalOptions opts;
  opts.score_floor = 0.0;
  opts.top_k = 1 << 20;
  opts.nms_threshold = 1.0;
  auto base_dets = postprocess_predictions(fwd.preds, model.default_boxes(),
                                           model.spec().num_classes, opts);

  for (size_t t = 0; t < fwd.preds.size(); ++t) {
    auto fwd2 = model.forward(batch);
    std::fill(fwd2.preds[t].data().begin(), fwd2.preds[t].data().end(), 0.0);
    auto dets = postprocess_predictions(fwd2.preds, model.default_boxes(),
                                        model.spec().num_classes, opts);
    bool changed = dets.size() != base_dets.size();
    for (size_t i = 0; !changed && i < dets.size(); ++i)
      changed = dets[i].score != base_dets[i].score ||
                dets[i].box.cx != base_dets[i].box.cx ||
                dets[i].class_id != base_dets[i].class_id;
    CHECK(changed);
  }
}

TEST_CASE("checkpoint round-trip restores the model bit-exactly") {
  Model model(NetworkSpec::make(Variant::MdfnI1), 21);
  const auto path = std::filesystem::temp_directory_path() / "mdfn_net_test.ckpt";
  save_model_checkpoint(path.string(), model, nullptr, 0);

  Checkpoint ckpt = load_checkpoint(path.string());
  CHECK(ckpt.meta.at("variant") == "mdfn-i1");
  Model restored(NetworkSpec::from_json(ckpt.meta.at("network_spec")), 999);
  restored.load_params(ckpt);

  auto a = model.named_params();
  auto b = restored.named_params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    auto da = a[i].second.data();
    auto db = b[i].second.data();
    for (size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("structural summary carries the documented fields") {
  Model model(NetworkSpec::make(Variant::MdfnI2), 1);
  auto j = model.structural_summary();
  for (const char* key : {"variant", "image_size", "multiscale_feature_depth", "units",
                          "taps", "param_count", "mult_adds", "total_boxes", "head_channels"})
    CHECK(j.contains(key));
  CHECK(j["head_channels"].get<int>() == 48);
  CHECK(j["units"].size() == 4);
  CHECK(j["taps"].size() == 5);
  // binomial multiplicities surface through the module summaries
  CHECK(j["units"][0]["module"]["multiplicities"] == nlohmann::json({1, 3, 3, 1}));
  CHECK(j["units"][2]["module"]["multiplicities"] == nlohmann::json({1, 2, 1}));
}

TEST_CASE("trainer: short run is deterministic and resumable") {
  SceneSpec sspec;
  sspec.seed = 3;
  Dataset ds = generate_dataset(sspec, 8);

  TrainConfig tc;
  tc.iterations = 6;
  tc.batch_size = 2;
  tc.learning_rate = 0.005;
  tc.lr_milestones = {4};
  tc.checkpoint_interval = 0;

  auto run_full = [&] {
    Model m(NetworkSpec::make(Variant::MdfnI1), 42);
    Trainer tr(m, ds, tc, 42);
    while (tr.iteration() < tc.iterations) tr.step();
    std::vector<double> flat;
    for (auto& [n, t] : m.named_params())
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    return flat;
  };
  auto a = run_full();
  auto b = run_full();
  CHECK(a == b);

  // resume at the midpoint and land on the same parameters
  const auto path = std::filesystem::temp_directory_path() / "mdfn_resume_test.ckpt";
  {
    Model m(NetworkSpec::make(Variant::MdfnI1), 42);
    Trainer tr(m, ds, tc, 42);
    while (tr.iteration() < 3) tr.step();
    tr.save(path.string());
  }
  {
    Model m(NetworkSpec::make(Variant::MdfnI1), 999);  // init overwritten by restore
    Trainer tr(m, ds, tc, 42);
    tr.restore(load_checkpoint(path.string()));
    CHECK(tr.iteration() == 3);
    while (tr.iteration() < tc.iterations) tr.step();
    std::vector<double> flat;
    for (auto& [n, t] : m.named_params())
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    CHECK(flat == a);
  }
  std::filesystem::remove(path);

  // learning-rate schedule decays at the milestone
  Model m(NetworkSpec::make(Variant::MdfnI1), 42);
  Trainer tr(m, ds, tc, 42);
  CHECK(tr.current_lr() == doctest::Approx(0.005));
  while (tr.iteration() < 4) tr.step();
  CHECK(tr.current_lr() == doctest::Approx(0.0005));
}

TEST_CASE("diverging training aborts with a diagnostic instead of emitting NaN") {
  SceneSpec sspec;
  sspec.seed = 3;
  Dataset ds = generate_dataset(sspec, 8);
  TrainConfig tc;
  tc.iterations = 20;
  tc.batch_size = 2;
  tc.learning_rate = 1e10;  // guaranteed blow-up
  Model m(NetworkSpec::make(Variant::Baseline), 1);
  Trainer tr(m, ds, tc, 1);
  try {
    while (tr.iteration() < tc.iterations) tr.step();
    FAIL("expected TrainAbort");
  } catch (const TrainAbort& e) {
    const std::string what = e.what();
    CHECK(what.find("iteration") != std::string::npos);
    CHECK(what.find("learning_rate") != std::string::npos);
    CHECK(what.find("grad_norm") != std::string::npos);
  }
}
