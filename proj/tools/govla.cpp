#include "govla/cli.hpp"

#include <CLI11.hpp>

#include <string>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-scale adapter workbench: training, ablation, caption and detection "
               "evaluation, annotation verification, dataset tooling."};
  app.require_subcommand(1);

  govla::cli::CommonArgs common;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "INI config file");
    sub->add_option("--set", common.overrides, "override a config key, key=value (repeatable)");
    sub->add_option("--out-dir", common.out_dir, "output directory")->capture_default_str();
    CLI::Option* seed_opt = sub->add_option("--seed", seed_value, "root seed override");
    sub->parse_complete_callback([&common, &seed_value, seed_opt]() {
      if (seed_opt->count() > 0) common.seed = seed_value;
    });
  };

  CLI::App* train = app.add_subcommand("train", "train the adapter against the frozen LM");
  add_common(train);

  std::string axis;
  CLI::App* ablate = app.add_subcommand("ablate", "run one ablation axis");
  ablate->add_option("axis", axis, "adapter_onoff | depth | feature_mask")->required();
  add_common(ablate);

  std::string hyp_path, ann_path, det_path, pred_path;
  double threshold = 0.5;

  CLI::App* eval_captions = app.add_subcommand("eval-captions", "score hypothesis captions");
  eval_captions->add_option("hypotheses", hyp_path, "JSONL with image_id and hypothesis")->required();
  eval_captions->add_option("annotations", ann_path, "annotations JSONL")->required();
  add_common(eval_captions);

  CLI::App* eval_detection = app.add_subcommand("eval-detection", "score detections");
  eval_detection->add_option("detections", det_path, "detections JSONL")->required();
  eval_detection->add_option("annotations", ann_path, "annotations JSONL")->required();
  add_common(eval_detection);

  CLI::App* verify = app.add_subcommand("verify", "cross-verify human boxes against predictions");
  verify->add_option("predictions", pred_path, "predictions JSONL")->required();
  verify->add_option("annotations", ann_path, "annotations JSONL")->required();
  verify->add_option("--threshold", threshold, "flag boxes whose best overlap falls below this")
      ->capture_default_str();
  add_common(verify);

  CLI::App* stats = app.add_subcommand("stats", "dataset statistics report");
  stats->add_option("annotations", ann_path, "annotations JSONL")->required();
  add_common(stats);

  CLI::App* gen = app.add_subcommand("gen-synthetic", "generate an annotated synthetic dataset");
  add_common(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (train->parsed()) return govla::cli::cmd_train(common);
  if (ablate->parsed()) return govla::cli::cmd_ablate(axis, common);
  if (eval_captions->parsed()) return govla::cli::cmd_eval_captions(hyp_path, ann_path, common);
  if (eval_detection->parsed()) return govla::cli::cmd_eval_detection(det_path, ann_path, common);
  if (verify->parsed()) return govla::cli::cmd_verify(pred_path, ann_path, threshold, common);
  if (stats->parsed()) return govla::cli::cmd_stats(ann_path, common);
  if (gen->parsed()) return govla::cli::cmd_gen_synthetic(common);
  return 2;
}
