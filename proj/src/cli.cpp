#include "dgsp/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dgsp/checkpoint.hpp"
#include "dgsp/config.hpp"
#include "dgsp/data.hpp"
#include "dgsp/image_io.hpp"
#include "dgsp/metrics.hpp"
#include "dgsp/trainer.hpp"

namespace dgsp {
namespace fs = std::filesystem;

namespace {

nlohmann::json effective_config(const std::string& config_path, const std::vector<std::string>& sets) {
  nlohmann::json cfg = load_config(config_path);
  for (const auto& kv : sets) apply_override(cfg, kv);
  std::cerr << "[dgsp] config: " << cfg.dump() << "\n";
  return cfg;
}

std::uint64_t env_seed_or(std::uint64_t fallback) {
  if (const char* env = std::getenv("DGSP_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (env[0] == '\0' || end == nullptr || *end != '\0') {
      throw ConfigError("DGSP_SEED must be an unsigned integer");
    }
    return static_cast<std::uint64_t>(v);
  }
  return fallback;
}

// Rebuilds the model exactly as checkpointed: model/prompt/seed come from the
// checkpoint's config snapshot, data/metrics/train stay with the caller.
nlohmann::json adopt_model_config(nlohmann::json cfg, const Checkpoint& ck) {
  if (ck.meta.contains("config") && ck.meta["config"].is_object()) {
    const auto& stored = ck.meta["config"];
    for (const char* key : {"model", "prompt", "seed"}) {
      if (stored.contains(key)) cfg[key] = stored[key];
    }
  }
  return cfg;
}

nlohmann::json report_json(const EvalReport& rep, std::size_t n_images) {
  return {{"iou", rep.iou},          {"pd", rep.pd},
          {"fa", rep.fa},            {"iou_1e2", rep.iou * 100.0},
          {"pd_1e2", rep.pd * 100.0}, {"fa_1e6", rep.fa * 1e6},
          {"n_images", n_images}};
}

void print_eval(const EvalReport& rep, std::size_t n_images, bool as_json, const std::string& report_path) {
  const nlohmann::json rj = report_json(rep, n_images);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write report: " + report_path);
    out << rj.dump(2) << "\n";
  }
  if (as_json) {
    std::cout << rj.dump() << "\n";
  } else {
    std::printf("iou=%.2f, pd=%.2f, fa=%.3f\n", rep.iou * 100.0, rep.pd * 100.0, rep.fa * 1e6);
  }
}

int run_gen_data(const std::string& out, long count, long size, std::uint64_t seed) {
  synth_generate(out, count, size, seed);
  std::cerr << "[dgsp] wrote " << count << " pairs under " << out << "\n";
  return 0;
}

int run_fit(Phase phase, const std::string& config_path, const std::vector<std::string>& sets) {
  Trainer trainer(effective_config(config_path, sets), phase);
  trainer.fit();
  return 0;
}

int run_eval(const std::string& config_path, const std::vector<std::string>& sets,
             const std::string& ckpt_path, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& split, bool as_json, const std::string& report_path,
             double threshold_override) {
  nlohmann::json cfg = effective_config(config_path, sets);
  if (threshold_override >= 0.0) cfg["metrics"]["threshold"] = threshold_override;

  if (!pred_dir.empty() || !gt_dir.empty()) {
    if (pred_dir.empty() || gt_dir.empty()) {
      throw ConfigError("--pred-dir and --gt-dir must be given together");
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(gt_dir)) {
      if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw DataError("no .png masks under " + gt_dir);
    std::vector<Tensor<float>> preds;
    std::vector<Tensor<float>> gts;
    for (const auto& name : names) {
      const std::string pp = pred_dir + "/" + name;
      if (!fs::exists(pp)) throw DataError("missing prediction for '" + name + "'");
      preds.push_back(read_png_gray(pp));
      gts.push_back(read_png_gray(gt_dir + "/" + name));
    }
    const auto& m = cfg.at("metrics");
    const EvalReport rep =
        evaluate_dataset(preds, gts, m.at("threshold").get<double>(), m.at("radius").get<double>(),
                         static_cast<int>(m.at("connectivity").get<long>()));
    print_eval(rep, names.size(), as_json, report_path);
    return 0;
  }

  if (ckpt_path.empty()) throw ConfigError("eval needs --checkpoint or --pred-dir/--gt-dir");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Trainer trainer(adopt_model_config(cfg, ck), Phase::train);
  trainer.restore(ck, false);
  const std::string root = trainer.config().at("data").at("root").get<std::string>();
  if (root.empty()) throw ConfigError("data.root must point at a dataset");
  const auto pairs = load_dataset(root, split);
  if (pairs.empty()) throw DataError("split '" + split + "' is empty");
  const EvalReport rep = trainer.evaluate_pairs(pairs);
  print_eval(rep, pairs.size(), as_json, report_path);
  return 0;
}

int run_predict(const std::string& config_path, const std::vector<std::string>& sets,
                const std::string& ckpt_path, const std::string& image_path, const std::string& out_path,
                double threshold) {
  nlohmann::json cfg = effective_config(config_path, sets);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Trainer trainer(adopt_model_config(cfg, ck), Phase::train);
  trainer.restore(ck, false);
  const Tensor<float> image = read_png_gray(image_path);
  Tensor<float> prob = trainer.predict_prob(image);
  for (long i = 0; i < prob.numel(); ++i) {
    prob[i] = prob[i] > static_cast<float>(threshold) ? 1.0f : 0.0f;
  }
  write_png_mask(out_path, prob);
  std::cerr << "[dgsp] wrote mask " << out_path << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"dual-granularity prompt pipeline for infrared small-target detection"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a seeded synthetic dataset");
  std::string gen_out;
  long gen_count = 8;
  long gen_size = 64;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--count", gen_count, "number of image/mask pairs")->capture_default_str();
  gen->add_option("--size", gen_size, "square image size, multiple of 16")->capture_default_str();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed (default: DGSP_SEED or 0)");

  std::string config_path;
  std::vector<std::string> sets;
  auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", sets, "dotted.key=value override, repeatable");
  };

  auto* pre = app.add_subcommand("pretrain", "contrastive + reconstruction pretraining");
  add_config_opts(pre);
  auto* tr = app.add_subcommand("train", "detection training");
  add_config_opts(tr);

  auto* ev = app.add_subcommand("eval", "score a checkpoint or predicted masks");
  add_config_opts(ev);
  std::string ev_ckpt, ev_pred_dir, ev_gt_dir, ev_report;
  std::string ev_split = "test";
  bool ev_json = false;
  double ev_threshold = -1.0;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint to score");
  ev->add_option("--pred-dir", ev_pred_dir, "directory of predicted masks");
  ev->add_option("--gt-dir", ev_gt_dir, "directory of ground-truth masks");
  ev->add_option("--split", ev_split, "dataset split for checkpoint scoring")->capture_default_str();
  ev->add_option("--threshold", ev_threshold, "binarization threshold override");
  ev->add_flag("--json", ev_json, "print one JSON object to stdout");
  ev->add_option("--report", ev_report, "also write the report JSON here");

  auto* pd = app.add_subcommand("predict", "run one image through a checkpoint");
  add_config_opts(pd);
  std::string pd_ckpt, pd_image, pd_out;
  double pd_threshold = 0.5;
  pd->add_option("--checkpoint", pd_ckpt, "model checkpoint")->required();
  pd->add_option("--image", pd_image, "input grayscale PNG")->required();
  pd->add_option("--out", pd_out, "output mask PNG")->required();
  pd->add_option("--threshold", pd_threshold, "binarization threshold")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      const std::uint64_t seed = gen_seed_opt->count() > 0 ? gen_seed : env_seed_or(0);
      return run_gen_data(gen_out, gen_count, gen_size, seed);
    }
    if (pre->parsed()) return run_fit(Phase::pretrain, config_path, sets);
    if (tr->parsed()) return run_fit(Phase::train, config_path, sets);
    if (ev->parsed()) {
      return run_eval(config_path, sets, ev_ckpt, ev_pred_dir, ev_gt_dir, ev_split, ev_json,
                      ev_report, ev_threshold);
    }
    if (pd->parsed()) {
      return run_predict(config_path, sets, pd_ckpt, pd_image, pd_out, pd_threshold);
    }
    std::cerr << "[dgsp] no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "[dgsp] config error: " << e.what() << "\n";
    return 1;
  } catch (const PromptError& e) {
    std::cerr << "[dgsp] prompt error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[dgsp] error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dgsp
