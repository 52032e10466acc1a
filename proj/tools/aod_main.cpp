// Command-line front end: dataset generation, training, evaluation, detection,
// glimpse visualization, gradient checking and the design-choice ablation
// harness. Exit codes: 0 ok, 1 usage, 2 validation, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "aod/ablate.hpp"
#include "aod/checkpoint.hpp"
#include "aod/config.hpp"
#include "aod/data.hpp"
#include "aod/eval.hpp"
#include "aod/netcheck.hpp"
#include "aod/render.hpp"
#include "aod/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw aod::ValidationError("cannot read config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw aod::ParseError(std::string("malformed JSON in ") + path + ": " + e.what());
  }
  return j;
}

struct TrainCli {
  std::string data_path;
  std::string out_dir;
  std::string config_path;
  std::string resume_path;
  bool print_config = false;
};

aod::TrainConfig resolve_train_config(const CLI::App* cmd, const TrainCli& cli) {
  aod::TrainConfig cfg;
  if (!cli.config_path.empty()) {
    cfg = aod::train_config_from_json(load_json_file(cli.config_path));
  }
  auto flag_given = [&](const char* name) { return cmd->count(name) > 0; };
  if (flag_given("--seed")) cfg.seed = cmd->get_option("--seed")->as<std::uint64_t>();
  if (flag_given("--steps")) cfg.net.T = cmd->get_option("--steps")->as<int>();
  if (flag_given("--episodes")) cfg.rl.n_episodes = cmd->get_option("--episodes")->as<int>();
  if (flag_given("--iterations")) cfg.iterations = cmd->get_option("--iterations")->as<int>();
  if (flag_given("--lr")) cfg.lr = cmd->get_option("--lr")->as<double>();
  if (flag_given("--threads")) cfg.threads = cmd->get_option("--threads")->as<int>();
  if (flag_given("--sigma")) cfg.rl.sigma = cmd->get_option("--sigma")->as<double>();
  if (flag_given("--classes")) cfg.net.K = cmd->get_option("--classes")->as<int>();
  if (flag_given("--reward")) {
    const std::string v = cmd->get_option("--reward")->as<std::string>();
    if (v == "continuous") {
      cfg.rl.reward_kind = aod::RewardKind::continuous;
    } else if (v == "discrete") {
      cfg.rl.reward_kind = aod::RewardKind::discrete;
    } else {
      throw aod::ValidationError("--reward must be continuous|discrete");
    }
  }
  if (flag_given("--baseline")) {
    const std::string v = cmd->get_option("--baseline")->as<std::string>();
    if (v == "return-norm" || v == "return_norm") {
      cfg.rl.baseline_kind = aod::BaselineKind::return_norm;
    } else if (v == "ema" || v == "moving_average") {
      cfg.rl.baseline_kind = aod::BaselineKind::moving_average;
    } else {
      throw aod::ValidationError("--baseline must be return-norm|ema");
    }
  }
  if (flag_given("--include-background")) cfg.rl.include_background = true;
  if (flag_given("--glimpse-dof")) {
    cfg.net.glimpse_dof = cmd->get_option("--glimpse-dof")->as<int>();
  }
  if (flag_given("--no-stacked-rnn")) cfg.net.stacked_rnn = false;
  if (flag_given("--no-eltwise-max")) cfg.net.eltwise_max = false;
  cfg.validate();
  return cfg;
}

void attach_train_flags(CLI::App* cmd) {
  cmd->add_option("--seed", "rng seed");
  cmd->add_option("--steps", "glimpse steps T");
  cmd->add_option("--episodes", "episodes per foreground sample");
  cmd->add_option("--iterations", "sgd iterations");
  cmd->add_option("--lr", "base learning rate");
  cmd->add_option("--threads", "worker threads (0 = hardware)");
  cmd->add_option("--sigma", "glimpse perturbation stddev");
  cmd->add_option("--classes", "foreground class count K");
  cmd->add_option("--reward", "continuous|discrete");
  cmd->add_option("--baseline", "return-norm|ema");
  cmd->add_flag("--include-background", "generate episodes for background samples too");
  cmd->add_option("--glimpse-dof", "4 (shift+scale) or 2 (shift only)");
  cmd->add_flag("--no-stacked-rnn", "recurrence only at fc7");
  cmd->add_flag("--no-eltwise-max", "classify from the last step instead of the max fusion");
}

int cmd_gen_data(const std::string& out, int images, aod::SceneConfig scene,
                 bool print_config) {
  scene.validate();
  if (print_config) {
    nlohmann::json j = aod::scene_config_to_json(scene);
    j["images"] = images;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  const aod::Dataset ds = aod::generate_dataset(scene, images);
  aod::save_dataset(out, ds);
  std::cout << "wrote " << ds.images.size() << " images to " << out << "\n";
  return kExitOk;
}

int cmd_train(const CLI::App* cmd, const TrainCli& cli) {
  const aod::TrainConfig cfg = resolve_train_config(cmd, cli);
  if (cli.print_config) {
    std::cout << aod::resolved_train_config(cfg).dump(2) << "\n";
    return kExitOk;
  }
  const aod::Dataset ds = aod::load_dataset(cli.data_path);
  if (ds.scene_config.K != cfg.net.K) {
    throw aod::ValidationError("dataset K=" + std::to_string(ds.scene_config.K) +
                               " does not match AODConfig.K=" + std::to_string(cfg.net.K) +
                               " (pass --classes)");
  }
  const aod::TrainResult result = aod::train(ds, cfg, cli.out_dir, cli.resume_path);
  if (!result.metrics.empty()) {
    const aod::StepMetrics& last = result.metrics.back();
    std::printf("trained %d iterations; final supervised_loss %.4f mean_return %.4f\n",
                result.progress.iteration, last.supervised_loss, last.mean_return);
  }
  if (cli.out_dir.empty()) {
    std::cout << "note: no --out directory given, checkpoint not written\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& data_path, const std::string& checkpoint_path,
             const std::string& out_prefix, aod::EvalSettings settings,
             const std::string& protocol) {
  if (protocol == "voc2007_11pt") {
    settings.protocol_11pt = true;
  } else if (protocol == "all_points") {
    settings.protocol_11pt = false;
  } else {
    throw aod::ValidationError("--protocol must be voc2007_11pt|all_points");
  }
  const aod::Dataset ds = aod::load_dataset(data_path);
  aod::AODParams params = aod::load_checkpoint(checkpoint_path);
  if (params.config.K != ds.scene_config.K) {
    throw aod::ValidationError("checkpoint K=" + std::to_string(params.config.K) +
                               " does not match dataset K=" +
                               std::to_string(ds.scene_config.K));
  }
  const aod::EvalResult res = aod::evaluate_dataset(ds, params, settings);
  aod::save_eval_result(out_prefix + ".json", out_prefix + ".csv", res);
  std::printf("mAP %.4f (%s, iou %.2f) over %zu images\n", res.map, res.protocol.c_str(),
              res.iou_thresh, ds.images.size());
  for (std::size_t c = 0; c < res.per_class_ap.size(); ++c) {
    if (res.class_has_gt[c]) std::printf("  class_%zu AP %.4f\n", c, res.per_class_ap[c]);
  }
  return kExitOk;
}

int cmd_detect(const std::string& data_path, const std::string& checkpoint_path, int index,
               aod::EvalSettings settings, const std::string& out_path) {
  const aod::Dataset ds = aod::load_dataset(data_path);
  aod::AODParams params = aod::load_checkpoint(checkpoint_path);
  if (index < 0 || index >= static_cast<int>(ds.images.size())) {
    throw aod::ValidationError("--index out of range");
  }
  const aod::AnnotatedImage& img = ds.images[index];
  const aod::FeatureMap fm = aod::extract_features(img.image, params.backbone);
  const std::vector<aod::Detection> dets =
      aod::detect_image(fm, img.id, img.proposals, params, settings);
  nlohmann::json out = nlohmann::json::array();
  for (const aod::Detection& d : dets) {
    out.push_back({{"image_id", d.image_id},
                   {"class", d.class_index},
                   {"score", d.score},
                   {"box", {{"cx", d.box.cx}, {"cy", d.box.cy}, {"w", d.box.w}, {"h", d.box.h}}}});
  }
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw aod::ValidationError("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_visualize(const std::string& data_path, const std::string& checkpoint_path,
                  const std::string& out_dir, int n_images, int per_image) {
  const aod::Dataset ds = aod::load_dataset(data_path);
  aod::AODParams params = aod::load_checkpoint(checkpoint_path);
  std::filesystem::create_directories(out_dir);
  const int count = std::min<int>(n_images, static_cast<int>(ds.images.size()));
  for (int i = 0; i < count; ++i) {
    const aod::AnnotatedImage& img = ds.images[i];
    const aod::FeatureMap fm = aod::extract_features(img.image, params.backbone);

    // best-overlapping proposals make the most informative renderings
    std::vector<std::pair<double, int>> ranked;
    for (std::size_t p = 0; p < img.proposals.size(); ++p) {
      double best = 0.0;
      for (const aod::GtBox& g : img.gts) {
        best = std::max(best, aod::iou(img.proposals[p], g.box));
      }
      ranked.push_back({best, static_cast<int>(p)});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const int take = std::min<int>(per_image, static_cast<int>(ranked.size()));
    for (int k = 0; k < take; ++k) {
      const aod::BoundingBox& proposal = img.proposals[ranked[k].second];
      const aod::Rollout r = aod::forward_rollout(fm, proposal, params, aod::ActionPlan{},
                                                  aod::RunMode::eval, 0);
      const std::vector<aod::OverlayBox> boxes =
          aod::rollout_overlays(r, proposal, fm.image_w, fm.image_h);
      const std::string stem =
          out_dir + "/" + img.id + "_proposal" + std::to_string(ranked[k].second);
      aod::write_ppm(stem + ".ppm", img.image, boxes);
      aod::write_svg(stem + ".svg", img.image, boxes);
    }
  }
  std::cout << "wrote renderings for " << count << " image(s) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_grad_check(double eps, double threshold, double sabotage) {
  std::vector<aod::CheckEntry> entries = aod::op_grad_checks(eps);
  std::vector<aod::CheckEntry> net = aod::network_grad_check(eps, sabotage);
  entries.insert(entries.end(), net.begin(), net.end());
  bool ok = true;
  std::printf("%-14s %s\n", "group", "max_rel_error");
  for (const aod::CheckEntry& e : entries) {
    const bool pass = e.max_rel_error < threshold;
    ok = ok && pass;
    std::printf("%-14s %.3e %s\n", e.group.c_str(), e.max_rel_error, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::cerr << "gradient check exceeded threshold " << threshold << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_ablate(const CLI::App* cmd, const TrainCli& cli, const std::string& test_data,
               const std::string& out_prefix, int n_seeds,
               const std::vector<std::string>& axes) {
  const aod::TrainConfig base = resolve_train_config(cmd, cli);
  const std::vector<aod::AblateCell> cells = aod::ablation_matrix(base, axes);
  if (cli.print_config) {
    nlohmann::json j = aod::resolved_train_config(base);
    j["cells"] = cells.size();
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  const aod::Dataset train_ds = aod::load_dataset(cli.data_path);
  const aod::Dataset test_ds = aod::load_dataset(test_data);
  std::vector<std::uint64_t> seeds;
  for (int s = 1; s <= n_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  const std::vector<aod::AblateRow> rows =
      aod::run_ablation(train_ds, test_ds, cells, seeds, aod::EvalSettings{}, &std::cerr);
  aod::write_ablation_csv(out_prefix + ".csv", rows);
  aod::write_ablation_markdown(out_prefix + ".md", rows);
  std::printf("%zu rows -> %s.csv / %s.md\n", rows.size(), out_prefix.c_str(),
              out_prefix.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attentional object detection on a synthetic desk-scale benchmark"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic detection dataset");
  std::string gen_out = "dataset.json";
  int gen_images = 200;
  aod::SceneConfig scene;
  bool gen_print = false;
  gen->add_option("--out", gen_out, "output dataset JSON path");
  gen->add_option("--images", gen_images, "number of images");
  gen->add_option("--seed", scene.seed, "generation seed");
  gen->add_flag("--context-cue", scene.context_cue,
                "confusable class pairs disambiguated only by out-of-box markers");
  gen->add_option("--image-size", scene.image_size, "square image size in pixels");
  gen->add_option("--classes", scene.K, "foreground class count K");
  gen->add_option("--min-objects", scene.min_objects, "min objects per image");
  gen->add_option("--max-objects", scene.max_objects, "max objects per image");
  gen->add_option("--clutter", scene.clutter_density, "clutter density");
  gen->add_option("--noise", scene.noise_level, "pixel noise stddev");
  gen->add_flag("--print-config", gen_print, "print the resolved config and exit");

  // train
  auto* tr = app.add_subcommand("train", "train the glimpse network");
  TrainCli tr_cli;
  tr->add_option("--data", tr_cli.data_path, "training dataset JSON");
  tr->add_option("--out", tr_cli.out_dir, "output directory for checkpoints + metrics");
  tr->add_option("--config", tr_cli.config_path, "TrainConfig JSON file");
  tr->add_option("--resume", tr_cli.resume_path, "checkpoint to resume from");
  tr->add_flag("--print-config", tr_cli.print_config, "print the resolved config and exit");
  attach_train_flags(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with the VOC protocol");
  std::string ev_data, ev_ckpt, ev_out = "results", ev_protocol = "voc2007_11pt";
  aod::EvalSettings ev_settings;
  ev->add_option("--data", ev_data, "dataset JSON")->required();
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON")->required();
  ev->add_option("--out", ev_out, "output prefix for results .json/.csv");
  ev->add_option("--iou", ev_settings.iou_thresh, "matching IoU threshold");
  ev->add_option("--protocol", ev_protocol, "voc2007_11pt|all_points");
  ev->add_option("--score-thresh", ev_settings.score_thresh, "detection score threshold");
  ev->add_option("--nms", ev_settings.nms_thresh, "NMS IoU threshold");

  // detect
  auto* de = app.add_subcommand("detect", "run detection on one image");
  std::string de_data, de_ckpt, de_out;
  int de_index = 0;
  aod::EvalSettings de_settings;
  de->add_option("--data", de_data, "dataset JSON")->required();
  de->add_option("--checkpoint", de_ckpt, "checkpoint JSON")->required();
  de->add_option("--index", de_index, "image index");
  de->add_option("--out", de_out, "detections JSON path (stdout when omitted)");
  de->add_option("--score-thresh", de_settings.score_thresh, "detection score threshold");
  de->add_option("--nms", de_settings.nms_thresh, "NMS IoU threshold");

  // visualize
  auto* vis = app.add_subcommand("visualize", "render proposals, glimpses and final boxes");
  std::string vis_data, vis_ckpt, vis_out = "viz";
  int vis_images = 4, vis_per_image = 2;
  vis->add_option("--data", vis_data, "dataset JSON")->required();
  vis->add_option("--checkpoint", vis_ckpt, "checkpoint JSON")->required();
  vis->add_option("--out", vis_out, "output directory");
  vis->add_option("--images", vis_images, "number of images to render");
  vis->add_option("--per-image", vis_per_image, "proposals per image");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every gradient path");
  double gc_eps = 1e-5, gc_threshold = 1e-4, gc_sabotage = 0.0;
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--threshold", gc_threshold, "max allowed relative error");
  gc->add_option("--sabotage", gc_sabotage,
                 "test hook: offset added to one analytic gradient coordinate")
      ->group("");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the design-choice comparison matrix");
  TrainCli ab_cli;
  std::string ab_test, ab_out = "ablation";
  int ab_seeds = 3;
  std::vector<std::string> ab_axes;
  ab->add_option("--data", ab_cli.data_path, "training dataset JSON");
  ab->add_option("--test-data", ab_test, "held-out dataset JSON");
  ab->add_option("--out", ab_out, "output prefix for .csv/.md");
  ab->add_option("--seeds", ab_seeds, "number of seeds per cell");
  ab->add_option("--axis", ab_axes,
                 "episodes|architecture|baseline|reward|background|glimpse-dof (repeatable; "
                 "default all)");
  ab->add_option("--config", ab_cli.config_path, "base TrainConfig JSON file");
  ab->add_flag("--print-config", ab_cli.print_config, "print the resolved config and exit");
  attach_train_flags(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_images, scene, gen_print);
    if (tr->parsed()) {
      if (!tr_cli.print_config && tr_cli.data_path.empty()) {
        throw aod::ValidationError("train: --data is required");
      }
      return cmd_train(tr, tr_cli);
    }
    if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_out, ev_settings, ev_protocol);
    if (de->parsed()) return cmd_detect(de_data, de_ckpt, de_index, de_settings, de_out);
    if (vis->parsed()) {
      return cmd_visualize(vis_data, vis_ckpt, vis_out, vis_images, vis_per_image);
    }
    if (gc->parsed()) return cmd_grad_check(gc_eps, gc_threshold, gc_sabotage);
    if (ab->parsed()) {
      if (!ab_cli.print_config && (ab_cli.data_path.empty() || ab_test.empty())) {
        throw aod::ValidationError("ablate: --data and --test-data are required");
      }
      return cmd_ablate(ab, ab_cli, ab_test, ab_out, ab_seeds, ab_axes);
    }
  } catch (const aod::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const aod::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
