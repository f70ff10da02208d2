#pragma once

#include "govla/config.hpp"
#include "govla/manifest.hpp"
#include "govla/metrics.hpp"
#include "govla/train.hpp"
#include "govla/verify.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace govla::cli {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "govla-out";
  std::optional<std::uint64_t> seed;
};

inline Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config() : Config::load(args.config_path);
  for (const std::string& o : args.overrides) cfg.apply_override(o);
  if (args.seed) cfg.set("run.seed", std::to_string(*args.seed));
  return cfg;
}

template <class Fn>
inline int guarded(const std::string& command, Fn&& fn) {
  try {
    return fn();
  } catch (const AuditError& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << ": unexpected failure: " << e.what() << '\n';
    return 3;
  }
}

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

inline AdapterConfig adapter_config_from(const Config& cfg) {
  AdapterConfig a;
  a.n = cfg.get_int("adapter.n", 32);
  a.c = cfg.get_int("adapter.c", 64);
  a.depth = static_cast<int>(cfg.get_int("adapter.depth", 2));
  a.heads = static_cast<int>(cfg.get_int("adapter.heads", 4));
  a.d_lm = cfg.get_int("adapter.d_lm", 64);
  a.validate();
  return a;
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 16));
  t.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs", 20));
  t.lr = cfg.get_real("train.lr", 1e-4);
  t.lr_gamma = cfg.get_real("train.lr_gamma", 0.1);
  t.lr_milestones = cfg.get_int_list("train.milestones", {12, 17});
  t.weight_decay = cfg.get_real("train.weight_decay", 0.01);
  t.clip_norm = cfg.get_real("train.clip_norm", 1.0);
  t.seed = cfg.get_u64("run.seed", 0);
  t.adapter = adapter_config_from(cfg);
  t.use_adapter = cfg.get_bool("train.use_adapter", true);
  t.mask_img = cfg.get_bool("train.mask_img", false);
  t.mask_query = cfg.get_bool("train.mask_query", false);
  t.mask_decoder = cfg.get_bool("train.mask_decoder", false);
  t.validate();
  return t;
}

inline FeatureShape shape_from(const Config& cfg) {
  FeatureShape shape;
  shape.n = cfg.get_int("adapter.n", 32);
  shape.c = cfg.get_int("adapter.c", 64);
  shape.l_query = cfg.get_int("data.l_query", 64);
  shape.l_decoder = cfg.get_int("data.l_decoder", 64);
  shape.validate();
  return shape;
}

inline std::array<double, kNumCategories> mix_from(const Config& cfg) {
  std::string mix = cfg.get("data.mix", "reference");
  if (mix == "reference") return reference_mix();
  if (mix == "uniform") {
    std::array<double, kNumCategories> m;
    m.fill(1.0 / static_cast<double>(kNumCategories));
    return m;
  }
  throw ConfigError("config: data.mix must be \"reference\" or \"uniform\", got \"" + mix + "\"");
}

// Training corpus resolved from config: annotated files plus per-image
// feature bundles, or a generated synthetic set.
struct Corpus {
  std::vector<Sample> train, eval;
  std::vector<FeatureBundle<float>> train_bundles, eval_bundles;
};

inline Corpus load_corpus(const Config& cfg, RunManifest& manifest) {
  std::uint64_t seed = cfg.get_u64("run.seed", 0);
  std::vector<Sample> samples;
  std::map<std::string, FeatureBundle<float>> by_image;
  if (cfg.has("data.annotations")) {
    std::string ann_path = cfg.require("data.annotations");
    std::string feat_dir = cfg.require("data.features_dir");
    samples = load_annotations(ann_path);
    manifest.add_input(ann_path);
    for (const Sample& s : samples)
      by_image.emplace(s.image_id, load_features(join_path(feat_dir, s.image_id + ".gvlf")));
  } else {
    SyntheticSpec spec;
    spec.n_samples = static_cast<std::size_t>(cfg.get_int("data.n_samples", 36));
    spec.mix = mix_from(cfg);
    spec.seed = derive_key(seed, "data");
    spec.shape = shape_from(cfg);
    SyntheticDataset data = gen_synthetic(spec);
    samples = data.samples;
    for (std::size_t i = 0; i < samples.size(); ++i) by_image.emplace(samples[i].image_id, data.bundles[i]);
    manifest.add_input_bytes("synthetic-data", samples_to_jsonl(samples));
  }
  double ratio = cfg.get_real("data.split_ratio", 0.7);
  Corpus corpus;
  auto [train, eval] = stratified_split(samples, ratio, seed);
  corpus.train = std::move(train);
  corpus.eval = std::move(eval);
  for (const Sample& s : corpus.train) corpus.train_bundles.push_back(by_image.at(s.image_id));
  for (const Sample& s : corpus.eval) corpus.eval_bundles.push_back(by_image.at(s.image_id));
  return corpus;
}

// Builds the vocabulary from the training captions, pretrains the LM on
// them, and freezes it.
inline std::pair<Vocab, LmState<float>> prepare_lm(const Config& cfg, const Corpus& corpus) {
  std::vector<std::string> captions;
  for (const Sample& s : corpus.train) captions.push_back(s.caption);
  Vocab vocab = Vocab::build(captions, static_cast<std::size_t>(cfg.get_int("lm.max_vocab", 200)));

  LmConfig lc;
  lc.vocab = static_cast<int>(vocab.size());
  lc.d_lm = cfg.get_int("adapter.d_lm", 64);
  lc.depth = static_cast<int>(cfg.get_int("lm.depth", 2));
  lc.heads = static_cast<int>(cfg.get_int("lm.heads", 4));
  lc.max_pos = cfg.get_int("lm.max_pos", 96);
  lc.validate();

  std::uint64_t seed = cfg.get_u64("run.seed", 0);
  LmState<float> lm(lc, derive_key(seed, "lm"));
  std::vector<TrainItem> items = make_train_items(corpus.train, corpus.train_bundles, vocab);
  int epochs = static_cast<int>(cfg.get_int("lm.pretrain_epochs", 150));
  int prefix_rows = static_cast<int>(cfg.get_int("adapter.n", 32));
  if (epochs > 0)
    pretrain_lm(lm, items, epochs, cfg.get_real("lm.pretrain_lr", 1e-3), derive_key(seed, "lm-pretrain"), 8,
                prefix_rows);
  lm.set_frozen(true);
  return {std::move(vocab), std::move(lm)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code.
// ---------------------------------------------------------------------------

inline int cmd_train(const CommonArgs& args) {
  return guarded("train", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config = cfg.to_json();
    manifest.seed = cfg.get_u64("run.seed", 0);
    if (!args.config_path.empty()) manifest.add_input(args.config_path);

    detail::Corpus corpus = detail::load_corpus(cfg, manifest);
    auto [vocab, lm] = detail::prepare_lm(cfg, corpus);
    TrainConfig tcfg = detail::train_config_from(cfg);
    std::vector<TrainItem> items = make_train_items(corpus.train, corpus.train_bundles, vocab);

    std::unique_ptr<Frontend<float>> frontend;
    if (tcfg.use_adapter)
      frontend = std::make_unique<AdapterFrontend<float>>(tcfg.adapter, tcfg.seed, tcfg.mask_img,
                                                          tcfg.mask_query, tcfg.mask_decoder);
    else
      frontend = std::make_unique<ProjectionFrontend<float>>(tcfg.adapter.c, tcfg.adapter.d_lm, tcfg.seed);
    TrainLog log = train_frontend(tcfg, items, lm, *frontend);

    std::string ck_path = detail::join_path(args.out_dir, "adapter.gvck");
    std::string lm_path = detail::join_path(args.out_dir, "lm.gvck");
    std::string vocab_path = detail::join_path(args.out_dir, "vocab.txt");
    std::string log_path = detail::join_path(args.out_dir, "train_log.jsonl");
    frontend->to_checkpoint().save(ck_path);
    lm_checkpoint(lm).save(lm_path);
    vocab.save(vocab_path);
    write_file(log_path, log.to_jsonl());
    manifest.outputs = {ck_path, lm_path, vocab_path, log_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << "train: " << log.epochs.size() << " epochs, final loss " << log.epochs.back().mean_loss
              << ", checkpoint " << ck_path << '\n';
    return 0;
  });
}

inline int cmd_ablate(const std::string& axis_name, const CommonArgs& args) {
  return guarded("ablate", [&]() {
    detail::Timer timer;
    AblationAxis axis = ablation_axis_from_name(axis_name);
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.config = cfg.to_json();
    manifest.seed = cfg.get_u64("run.seed", 0);
    if (!args.config_path.empty()) manifest.add_input(args.config_path);

    detail::Corpus corpus = detail::load_corpus(cfg, manifest);
    auto [vocab, lm] = detail::prepare_lm(cfg, corpus);
    TrainConfig tcfg = detail::train_config_from(cfg);

    AblationData data;
    data.train_items = make_train_items(corpus.train, corpus.train_bundles, vocab);
    for (const Sample& s : corpus.eval) data.eval_captions.push_back(s.caption);
    data.eval_bundles = corpus.eval_bundles;

    AblationTable table = run_ablation(axis, tcfg, data, lm, vocab);
    std::string csv_path = detail::join_path(args.out_dir, "ablation_" + table.axis + ".csv");
    std::string json_path = detail::join_path(args.out_dir, "ablation_" + table.axis + ".json");
    write_file(csv_path, table.to_csv());
    write_file(json_path, table.to_json().dump(2) + "\n");
    manifest.outputs = {csv_path, json_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << "ablate: axis " << table.axis << ", " << table.rows.size() << " rows, " << csv_path << '\n';
    return 0;
  });
}

inline int cmd_eval_captions(const std::string& hyp_path, const std::string& ann_path, const CommonArgs& args) {
  return guarded("eval-captions", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "eval-captions";
    manifest.config = cfg.to_json();
    manifest.add_input(hyp_path);
    manifest.add_input(ann_path);

    std::vector<Sample> samples = load_annotations(ann_path);
    std::map<std::string, std::string> refs_by_image;
    for (const Sample& s : samples) refs_by_image[s.image_id] = s.caption;

    std::vector<std::string> hyps;
    std::vector<std::vector<std::string>> refs;
    std::istringstream in(read_file(hyp_path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      lineno += 1;
      if (line.empty()) continue;
      ordered_json j;
      try {
        j = ordered_json::parse(line);
      } catch (const ordered_json::exception& e) {
        throw ValidationError("hypotheses line " + std::to_string(lineno) + ": " + e.what());
      }
      if (!j.contains("image_id") || !j.contains("hypothesis"))
        throw ValidationError("hypotheses line " + std::to_string(lineno) +
                              ": need image_id and hypothesis fields");
      std::string id = j.at("image_id").get<std::string>();
      auto it = refs_by_image.find(id);
      if (it == refs_by_image.end())
        throw ValidationError("hypotheses line " + std::to_string(lineno) + ": unknown image_id \"" + id + "\"");
      hyps.push_back(j.at("hypothesis").get<std::string>());
      refs.push_back({it->second});
    }

    CaptionScores scores = score_caption_strings(hyps, refs);
    std::string csv_path = detail::join_path(args.out_dir, "caption_scores.csv");
    std::string report_path = detail::join_path(args.out_dir, "caption_report.txt");
    write_file(csv_path, caption_csv(scores));
    write_file(report_path, caption_report(scores));
    manifest.outputs = {csv_path, report_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << caption_report(scores);
    return 0;
  });
}

inline int cmd_eval_detection(const std::string& det_path, const std::string& ann_path, const CommonArgs& args) {
  return guarded("eval-detection", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "eval-detection";
    manifest.config = cfg.to_json();
    manifest.add_input(det_path);
    manifest.add_input(ann_path);

    std::vector<Sample> samples = load_annotations(ann_path);
    std::vector<Detection> dets = detections_from_jsonl(read_file(det_path));
    DetectionScores scores = mean_ap(dets, samples);

    std::string csv_path = detail::join_path(args.out_dir, "detection_scores.csv");
    std::string report_path = detail::join_path(args.out_dir, "detection_report.txt");
    write_file(csv_path, detection_csv(scores));
    write_file(report_path, detection_report(scores));
    manifest.outputs = {csv_path, report_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << detection_report(scores);
    return 0;
  });
}

inline int cmd_verify(const std::string& pred_path, const std::string& ann_path, double threshold,
                      const CommonArgs& args) {
  return guarded("verify", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "verify";
    manifest.config = cfg.to_json();
    manifest.config["verify.threshold"] = threshold;
    manifest.add_input(pred_path);
    manifest.add_input(ann_path);

    std::vector<Sample> samples = load_annotations(ann_path);
    std::vector<Detection> preds = detections_from_jsonl(read_file(pred_path));
    std::vector<VerificationFlag> flags = cross_verify(samples, preds, threshold);

    std::string queue_path = detail::join_path(args.out_dir, "review_queue.jsonl");
    export_review_queue(flags, queue_path);
    manifest.outputs = {queue_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << "verify: " << flags.size() << " of " << [&]() {
      std::size_t n = 0;
      for (const Sample& s : samples) n += s.boxes.size();
      return n;
    }() << " boxes flagged at threshold " << threshold << '\n';
    return 0;
  });
}

inline int cmd_stats(const std::string& ann_path, const CommonArgs& args) {
  return guarded("stats", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "stats";
    manifest.config = cfg.to_json();
    manifest.add_input(ann_path);

    std::vector<Sample> samples = load_annotations(ann_path);
    DatasetStats stats = compute_stats(samples);

    std::string stats_path = detail::join_path(args.out_dir, "stats.json");
    write_file(stats_path, stats.to_json().dump(2) + "\n");
    manifest.outputs = {stats_path};
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << "stats: " << stats.n_images << " images, " << stats.n_boxes << " boxes, " << stats_path << '\n';
    return 0;
  });
}

inline int cmd_gen_synthetic(const CommonArgs& args) {
  return guarded("gen-synthetic", [&]() {
    detail::Timer timer;
    Config cfg = resolve_config(args);
    detail::ensure_out_dir(args.out_dir);

    RunManifest manifest;
    manifest.command = "gen-synthetic";
    manifest.config = cfg.to_json();
    manifest.seed = cfg.get_u64("run.seed", 0);
    if (!args.config_path.empty()) manifest.add_input(args.config_path);

    SyntheticSpec spec;
    spec.n_samples = static_cast<std::size_t>(cfg.get_int("data.n_samples", 100));
    spec.mix = detail::mix_from(cfg);
    spec.seed = derive_key(manifest.seed, "data");
    spec.shape = detail::shape_from(cfg);
    SyntheticDataset data = gen_synthetic(spec);

    std::string ann_path = detail::join_path(args.out_dir, "annotations.jsonl");
    std::string feat_dir = detail::join_path(args.out_dir, "features");
    detail::ensure_out_dir(feat_dir);
    save_annotations(data.samples, ann_path);
    manifest.outputs = {ann_path, feat_dir};
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      save_features(data.bundles[i], detail::join_path(feat_dir, data.samples[i].image_id + ".gvlf"));
    manifest.wall_seconds = timer.seconds();
    manifest.write(detail::join_path(args.out_dir, "manifest.json"));

    std::cout << "gen-synthetic: " << data.samples.size() << " samples, " << ann_path << '\n';
    return 0;
  });
}

}  // namespace govla::cli
