#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mdfn/config.hpp"
#include "mdfn/ppm.hpp"

namespace fs = std::filesystem;
using namespace mdfn;

namespace {

struct CommonFlags {
  std::optional<std::string> config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> variant;
  std::optional<std::string> dataset_dir;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--seed", f.seed, "run seed (u64)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  cmd->add_option("--variant", f.variant, "model variant: mdfn-i1 | mdfn-i2 | baseline");
  cmd->add_option("--dataset", f.dataset_dir, "dataset directory");
  cmd->add_flag("--force", f.force, "overwrite non-empty output directory");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  if (f.config_path) cfg = RunConfig::load(*f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out_dir = *f.out;
  if (f.checkpoint) cfg.checkpoint_path = *f.checkpoint;
  if (f.variant) cfg.variant = *f.variant;
  if (f.dataset_dir) cfg.dataset_dir = *f.dataset_dir;
  cfg.force = cfg.force || f.force;
  cfg.dataset.seed = cfg.seed;
  return cfg;
}

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(msg("missing required ", what));
  return value;
}

std::vector<std::vector<EvalObject>> to_eval_objects(const Dataset& ds) {
  std::vector<std::vector<EvalObject>> gts(ds.size());
  for (size_t i = 0; i < ds.size(); ++i)
    for (const auto& obj : ds.annotations[i].objects)
      gts[i].push_back({obj.box, obj.class_id, obj.occluded_fraction});
  return gts;
}

int cmd_dataset(const CommonFlags& flags, std::optional<int> count_flag) {
  RunConfig cfg = resolve_config(flags);
  const std::string out = require(cfg.out_dir, "--out directory");
  if (count_flag) cfg.dataset_count = *count_flag;
  write_dataset(out, cfg.dataset, cfg.dataset_count, cfg.force);
  std::cout << "wrote " << cfg.dataset_count << " scenes to " << out << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  RunConfig cfg = resolve_config(flags);
  const std::string out = require(cfg.out_dir, "--out directory");
  Dataset ds = load_dataset(require(cfg.dataset_dir, "--dataset directory"));
  fs::create_directories(out);

  NetworkSpec nspec = NetworkSpec::make(variant_from_name(cfg.variant), cfg.image_size);
  Model model(nspec, cfg.seed);
  Trainer trainer(model, ds, cfg.train, cfg.seed);

  if (!cfg.checkpoint_path.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path);
    const std::string cv = ckpt.meta.value("variant", "");
    if (cv != cfg.variant)
      throw ConfigError(msg("checkpoint variant '", cv, "' does not match requested '",
                            cfg.variant, "'"));
    trainer.restore(ckpt);
    std::cout << "resumed from " << cfg.checkpoint_path << " at iteration "
              << trainer.iteration() << "\n";
  }

  std::ofstream log(fs::path(out) / "train_log.jsonl",
                    trainer.iteration() > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError(msg("cannot open training log in ", out));

  while (trainer.iteration() < cfg.train.iterations) {
    const double lr = trainer.current_lr();
    LossReport report = trainer.step();
    nlohmann::json line = report.to_json();
    line["iteration"] = trainer.iteration();
    line["learning_rate"] = lr;
    log << line.dump() << "\n";
    if (cfg.train.checkpoint_interval > 0 &&
        trainer.iteration() % cfg.train.checkpoint_interval == 0 &&
        trainer.iteration() < cfg.train.iterations) {
      std::ostringstream name;
      name << "checkpoint_" << std::setfill('0') << std::setw(6) << trainer.iteration()
           << ".ckpt";
      trainer.save((fs::path(out) / name.str()).string());
    }
    if (trainer.iteration() % 100 == 0)
      std::cout << "iter " << trainer.iteration() << " total " << report.total << " conf "
                << report.conf << " loc " << report.loc << " N " << report.n_matched << "\n";
  }
  const std::string final_path = (fs::path(out) / "checkpoint_final.ckpt").string();
  trainer.save(final_path);

  // closing summary on the training set
  auto gts = to_eval_objects(ds);
  Detector detector = [&](int i) { return run_inference(model, ds.images[i], cfg.eval); };
  ApResult ap = evaluate(detector, gts, nspec.num_classes, cfg.eval);
  std::ofstream es(fs::path(out) / "final_eval.json", std::ios::trunc);
  es << ap.to_json(class_names()).dump(2) << "\n";
  std::cout << "final checkpoint: " << final_path << "\n";
  std::cout << "train-set mAP@0.50 = " << ap.map_at(0.5) << "\n";
  return 0;
}

Model model_from_checkpoint(const Checkpoint& ckpt, const std::string& requested_variant) {
  if (!ckpt.meta.contains("network_spec"))
    throw ConfigError("checkpoint carries no network spec");
  NetworkSpec nspec = NetworkSpec::from_json(ckpt.meta.at("network_spec"));
  if (!requested_variant.empty() &&
      requested_variant != std::string(variant_name(nspec.variant)))
    throw ConfigError(msg("checkpoint variant '", variant_name(nspec.variant),
                          "' does not match requested '", requested_variant, "'"));
  Model model(nspec, 0);
  model.load_params(ckpt);
  return model;
}

int cmd_eval(const CommonFlags& flags, bool oracle, const std::string& variant_requested) {
  RunConfig cfg = resolve_config(flags);
  const std::string out = require(cfg.out_dir, "--out directory");
  Dataset ds = load_dataset(require(cfg.dataset_dir, "--dataset directory"));
  fs::create_directories(out);
  auto gts = to_eval_objects(ds);

  Detector detector;
  std::optional<Model> model;
  if (oracle) {
    detector = [&](int i) {
      std::vector<Detection> dets;
      for (const auto& o : gts[static_cast<size_t>(i)]) dets.push_back({o.box, o.class_id, 1.0});
      return dets;
    };
  } else {
    Checkpoint ckpt = load_checkpoint(require(cfg.checkpoint_path, "--checkpoint"));
    model.emplace(model_from_checkpoint(ckpt, variant_requested));
    detector = [&](int i) { return run_inference(*model, ds.images[i], cfg.eval); };
  }

  std::vector<std::vector<Detection>> dets(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) dets[i] = detector(static_cast<int>(i));
  if (ds.size() == 0) throw ConfigError("eval: empty dataset");

  ApResult ap = evaluate_detections(dets, gts, cfg.eval.iou_thresholds,
                                    kNumClasses, cfg.eval.eleven_point);
  StrataResult strata =
      evaluate_strata(dets, gts, cfg.eval.iou_thresholds, kNumClasses, cfg.eval);

  std::ofstream os(fs::path(out) / "eval.json", std::ios::trunc);
  os << ap.to_json(class_names()).dump(2) << "\n";
  std::ofstream ss(fs::path(out) / "eval_strata.json", std::ios::trunc);
  ss << strata.to_json(class_names()).dump(2) << "\n";

  std::cout << "mAP@0.50 = " << ap.map_at(0.5) << "\n";
  for (size_t t = 0; t < ap.thresholds.size(); ++t)
    std::cout << "  mAP@" << std::fixed << std::setprecision(2) << ap.thresholds[t] << " = "
              << std::setprecision(4) << ap.map_per_threshold[t] << "\n";
  return 0;
}

int cmd_infer(const CommonFlags& flags, const std::string& image_path,
              const std::string& inject_path, const std::string& variant_requested) {
  RunConfig cfg = resolve_config(flags);
  const std::string out = require(cfg.out_dir, "--out directory");
  fs::create_directories(out);
  ImageU8 img = read_ppm(require(image_path, "--image path"));

  std::vector<Detection> dets;
  if (!inject_path.empty()) {
    std::ifstream is(inject_path);
    if (!is) throw IoError(msg("cannot open injected detections: ", inject_path));
    nlohmann::json j;
    is >> j;
    for (const auto& d : j) {
      dets.push_back({Box{d.at("cx").get<double>(), d.at("cy").get<double>(),
                          d.at("w").get<double>(), d.at("h").get<double>()},
                      d.at("class_id").get<int>(), d.value("score", 1.0)});
    }
  } else {
    Checkpoint ckpt = load_checkpoint(require(cfg.checkpoint_path, "--checkpoint"));
    Model model = model_from_checkpoint(ckpt, variant_requested);
    if (img.h != model.spec().image_size || img.w != model.spec().image_size)
      throw ConfigError(msg("image is ", img.w, "x", img.h, ", model expects ",
                            model.spec().image_size, "x", model.spec().image_size));
    dets = run_inference(model, to_tensor(img), cfg.eval);
  }

  nlohmann::json out_json = nlohmann::json::array();
  for (const auto& d : dets) {
    out_json.push_back({{"class_id", d.class_id},
                        {"class", class_names()[d.class_id - 1]},
                        {"score", d.score},
                        {"cx", d.box.cx},
                        {"cy", d.box.cy},
                        {"w", d.box.w},
                        {"h", d.box.h}});
    draw_rect(img, d.box, class_color(d.class_id));
  }
  std::ofstream os(fs::path(out) / "detections.json", std::ios::trunc);
  os << out_json.dump(2) << "\n";
  write_ppm((fs::path(out) / "infer.ppm").string(), img);
  std::cout << dets.size() << " detections; render written to " << out << "/infer.ppm\n";
  return 0;
}

int cmd_report(const CommonFlags& flags) {
  RunConfig cfg = resolve_config(flags);
  const Variant v = variant_from_name(cfg.variant);

  Model model(NetworkSpec::make(v, cfg.image_size), cfg.seed);
  nlohmann::json summary = model.structural_summary();

  std::cout << "variant: " << variant_name(v) << "\n";
  std::cout << std::left << std::setw(12) << "module" << std::right << std::setw(12)
            << "params" << std::setw(16) << "mult-adds" << "\n";
  std::cout << std::left << std::setw(12) << "backbone" << std::right << std::setw(12)
            << summary["backbone_params"].get<long long>() << std::setw(16) << "-" << "\n";
  for (const auto& u : summary["units"]) {
    std::cout << std::left << std::setw(12)
              << (u["name"].get<std::string>() + "/" + u["kind"].get<std::string>())
              << std::right << std::setw(12) << u["param_count"].get<long long>()
              << std::setw(16) << u["mult_adds"].get<long long>() << "\n";
  }
  long long head_params = 0;
  for (const auto& t : summary["taps"]) head_params += t["head_params"].get<long long>();
  std::cout << std::left << std::setw(12) << "heads" << std::right << std::setw(12)
            << head_params << std::setw(16) << "-" << "\n";
  std::cout << std::left << std::setw(12) << "total" << std::right << std::setw(12)
            << model.param_count() << std::setw(16) << model.mult_adds() << "\n\n";

  // cross-variant comparison at the same widths
  Model base(NetworkSpec::make(Variant::Baseline, cfg.image_size), cfg.seed);
  Model i1(NetworkSpec::make(Variant::MdfnI1, cfg.image_size), cfg.seed);
  Model i2(NetworkSpec::make(Variant::MdfnI2, cfg.image_size), cfg.seed);
  const double pct_i1 =
      100.0 * (static_cast<double>(i1.param_count()) / base.param_count() - 1.0);
  const double pct_i2 =
      100.0 * (static_cast<double>(i2.param_count()) / base.param_count() - 1.0);
  std::cout << "baseline params: " << base.param_count() << "\n";
  std::cout << "mdfn-i1  params: " << i1.param_count() << "  (+" << std::fixed
            << std::setprecision(1) << pct_i1 << "% vs baseline)\n";
  std::cout << "mdfn-i2  params: " << i2.param_count() << "  (+" << pct_i2
            << "% vs baseline)\n";
  std::cout << "i2 - i1 params delta: " << i2.param_count() - i1.param_count() << "\n";
  std::cout << "cascaded 3x3x2 vs single 5x5 weight ratio: " << std::setprecision(2)
            << cascaded_weight_ratio(2, 5) << "\n";

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    nlohmann::json rep;
    rep["summary"] = std::move(summary);
    rep["baseline_params"] = base.param_count();
    rep["mdfn_i1_params"] = i1.param_count();
    rep["mdfn_i2_params"] = i2.param_count();
    rep["i1_vs_baseline_pct"] = pct_i1;
    rep["i2_vs_baseline_pct"] = pct_i2;
    rep["cascade2_vs_5x5_ratio"] = cascaded_weight_ratio(2, 5);
    std::ofstream os(fs::path(cfg.out_dir) / "report.json", std::ios::trunc);
    os << rep.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scale deep-feature detector: dataset | train | eval | infer | report"};
  app.require_subcommand(1);

  CommonFlags f_dataset, f_train, f_eval, f_infer, f_report;
  std::optional<int> dataset_count;
  bool eval_oracle = false;
  std::string infer_image, infer_inject;
  std::string eval_variant, infer_variant;

  CLI::App* c_dataset = app.add_subcommand("dataset", "generate a synthetic shapes dataset");
  add_common(c_dataset, f_dataset);
  c_dataset->add_option("--count", dataset_count, "number of scenes");

  CLI::App* c_train = app.add_subcommand("train", "train a detector");
  add_common(c_train, f_train);

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint (AP sweep + strata)");
  add_common(c_eval, f_eval);
  c_eval->add_flag("--oracle", eval_oracle, "score ground-truth boxes as detections");

  CLI::App* c_infer = app.add_subcommand("infer", "detect objects in one PPM image");
  add_common(c_infer, f_infer);
  c_infer->add_option("--image", infer_image, "input P6 PPM image");
  c_infer->add_option("--inject", infer_inject, "JSON detections to render instead of running the model");

  CLI::App* c_report = app.add_subcommand("report", "parameter / mult-add accounting");
  add_common(c_report, f_report);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_dataset->parsed()) return cmd_dataset(f_dataset, dataset_count);
    if (c_train->parsed()) return cmd_train(f_train);
    if (c_eval->parsed())
      return cmd_eval(f_eval, eval_oracle, f_eval.variant.value_or(""));
    if (c_infer->parsed())
      return cmd_infer(f_infer, infer_image, infer_inject, f_infer.variant.value_or(""));
    if (c_report->parsed()) return cmd_report(f_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
