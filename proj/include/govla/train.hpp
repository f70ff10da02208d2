#pragma once

#include "govla/adapter.hpp"
#include "govla/checkpoint.hpp"
#include "govla/dataset.hpp"
#include "govla/lm.hpp"
#include "govla/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace govla {

struct TrainConfig {
  int batch_size = 16;
  int max_epochs = 20;
  double lr = 1e-4;
  double lr_gamma = 0.1;
  std::vector<int> lr_milestones = {12, 17};
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  AdapterConfig adapter;
  bool use_adapter = true;
  bool mask_img = false, mask_query = false, mask_decoder = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be at least 1");
    if (!(lr > 0)) throw ConfigError("train config: lr must be positive");
    if (!(lr_gamma > 0)) throw ConfigError("train config: lr_gamma must be positive");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] >= max_epochs)
        throw ConfigError("train config: milestones must lie before max_epochs");
      if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])
        throw ConfigError("train config: milestones must be strictly increasing");
    }
    adapter.validate();
  }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
  int decays = 0;
  for (int m : cfg.lr_milestones)
    if (m <= epoch) decays += 1;
  return cfg.lr * std::pow(cfg.lr_gamma, decays);
}

// Decoupled-weight-decay adaptive moment optimizer.
template <class S>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const ParamRefs<S>& params, double lr) {
    if (m_.empty()) {
      for (Param<S>* p : params) {
        m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size()) throw ValidationError("optimizer: parameter set changed between steps");
    t_ += 1;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<S>* p = params[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
      v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * p->grad.array().square()).matrix();
      auto mhat = (m_[i].array() / bc1);
      auto vhat = (v_[i].array() / bc2);
      p->value.array() -= static_cast<S>(lr) * (mhat / (vhat.sqrt() + eps_) + weight_decay_ * p->value.array());
    }
  }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

// Scales all gradients down when their joint norm exceeds max_norm.
template <class S>
inline double clip_global_norm(const ParamRefs<S>& params, double max_norm) {
  double sq = 0.0;
  for (Param<S>* p : params) sq += static_cast<double>(p->grad.squaredNorm());
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    S scale = static_cast<S>(max_norm / norm);
    for (Param<S>* p : params) p->grad *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Frontends: map a feature bundle to LM prefix tokens. The adapter frontend
// is the trained path; the projection frontend is the adapter-free baseline
// that feeds f_img through a lone affine map.
// ---------------------------------------------------------------------------

template <class S>
class Frontend {
 public:
  virtual ~Frontend() = default;
  virtual Mat<S> forward(const FeatureBundle<S>& bundle) = 0;
  virtual void backward(const Mat<S>& dprefix) = 0;
  virtual ParamRefs<S> params() = 0;
  virtual Checkpoint to_checkpoint() = 0;
};

template <class S>
inline FeatureBundle<S> apply_mask(FeatureBundle<S> b, bool mask_img, bool mask_query, bool mask_decoder) {
  if (mask_img) b.f_img.setZero();
  if (mask_query) b.f_query.setZero();
  if (mask_decoder) b.f_decoder.setZero();
  return b;
}

template <class S>
class AdapterFrontend : public Frontend<S> {
 public:
  AdapterFrontend(const AdapterConfig& cfg, std::uint64_t seed, bool mask_img = false, bool mask_query = false,
                  bool mask_decoder = false)
      : adapter_(cfg, seed), mask_img_(mask_img), mask_query_(mask_query), mask_decoder_(mask_decoder) {}

  explicit AdapterFrontend(AdapterState<S> adapter) : adapter_(std::move(adapter)) {}

  Mat<S> forward(const FeatureBundle<S>& bundle) override {
    return adapter_.forward(apply_mask<S>(bundle, mask_img_, mask_query_, mask_decoder_));
  }

  void backward(const Mat<S>& dprefix) override { adapter_.backward(dprefix); }

  ParamRefs<S> params() override { return adapter_.params(); }

  Checkpoint to_checkpoint() override {
    if constexpr (std::is_same_v<S, float>) {
      return adapter_checkpoint(adapter_);
    } else {
      ordered_json cfg;
      cfg["N"] = adapter_.config().n;
      cfg["C"] = adapter_.config().c;
      cfg["D"] = adapter_.config().depth;
      cfg["H"] = adapter_.config().heads;
      cfg["d_lm"] = adapter_.config().d_lm;
      return snapshot_params<S>(adapter_.params(), cfg);
    }
  }

  AdapterState<S>& adapter() { return adapter_; }

 private:
  AdapterState<S> adapter_;
  bool mask_img_ = false, mask_query_ = false, mask_decoder_ = false;
};

template <class S>
class ProjectionFrontend : public Frontend<S> {
 public:
  ProjectionFrontend(Eigen::Index c, Eigen::Index d_lm, std::uint64_t seed) : proj_("baseline.proj", c, d_lm) {
    Philox gen(derive_key(seed, "baseline-init"));
    proj_.init(gen);
  }

  Mat<S> forward(const FeatureBundle<S>& bundle) override {
    bundle.validate();
    return proj_.forward(bundle.f_img);
  }

  void backward(const Mat<S>& dprefix) override { proj_.backward(dprefix); }

  ParamRefs<S> params() override {
    ParamRefs<S> out;
    proj_.collect(out);
    return out;
  }

  Checkpoint to_checkpoint() override {
    ordered_json cfg;
    cfg["kind"] = "projection";
    cfg["C"] = proj_.w.value.rows();
    cfg["d_lm"] = proj_.w.value.cols();
    return snapshot_params<S>(params(), cfg);
  }

 private:
  Linear<S> proj_;
};

// ---------------------------------------------------------------------------
// Training items and the caption loop.
// ---------------------------------------------------------------------------

struct TrainItem {
  FeatureBundle<float> bundle;
  std::vector<int> input_ids;   // BOS + caption
  std::vector<int> target_ids;  // caption + EOS
};

inline std::vector<TrainItem> make_train_items(const std::vector<Sample>& samples,
                                               const std::vector<FeatureBundle<float>>& bundles,
                                               const Vocab& vocab) {
  if (samples.size() != bundles.size())
    throw ValidationError("train items: samples and bundles differ in length");
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    TrainItem it;
    it.bundle = bundles[i];
    std::vector<int> ids = vocab.encode(samples[i].caption);
    if (ids.empty()) throw ValidationError("train items: caption of " + samples[i].image_id + " tokenizes to nothing");
    it.input_ids = {Vocab::kBos};
    it.input_ids.insert(it.input_ids.end(), ids.begin(), ids.end());
    it.target_ids = ids;
    it.target_ids.push_back(Vocab::kEos);
    items.push_back(std::move(it));
  }
  return items;
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct FreezeReport {
  std::vector<std::pair<std::string, bool>> entries;  // component -> changed

  bool changed(const std::string& component) const {
    for (const auto& [name, ch] : entries)
      if (name == component) return ch;
    throw ValidationError("freeze audit: unknown component " + component);
  }

  ordered_json to_json() const {
    ordered_json j = ordered_json::object();
    for (const auto& [name, ch] : entries) j[name] = ch ? "changed" : "unchanged";
    return j;
  }
};

inline FreezeReport freeze_audit(const std::map<std::string, std::string>& before,
                                 const std::map<std::string, std::string>& after) {
  for (const auto& [name, bytes] : before)
    if (!after.count(name)) throw ValidationError("freeze audit: component " + name + " missing from after-state");
  for (const auto& [name, bytes] : after)
    if (!before.count(name)) throw ValidationError("freeze audit: component " + name + " missing from before-state");
  FreezeReport report;
  for (const auto& [name, bytes] : before) report.entries.emplace_back(name, after.at(name) != bytes);
  return report;
}

struct TrainLog {
  std::vector<EpochRecord> epochs;
  FreezeReport audit;
  double total_seconds = 0.0;

  std::string to_jsonl() const {
    std::string out;
    for (const EpochRecord& r : epochs) {
      ordered_json j;
      j["epoch"] = r.epoch;
      j["mean_loss"] = r.mean_loss;
      j["lr"] = r.lr;
      j["wall_seconds"] = r.wall_seconds;
      out += j.dump();
      out += '\n';
    }
    ordered_json summary;
    summary["summary"] = true;
    summary["epochs"] = epochs.size();
    summary["final_loss"] = epochs.empty() ? 0.0 : epochs.back().mean_loss;
    summary["total_seconds"] = total_seconds;
    summary["freeze_audit"] = audit.to_json();
    out += summary.dump();
    out += '\n';
    return out;
  }
};

// Digest of the grounding backend's contribution to a run: the exact bytes
// of every bundle it delivered. Stands in for backend weights in the audit.
inline std::string backend_digest(const std::vector<TrainItem>& items) {
  std::uint64_t h = fnv1a64("backend");
  for (const TrainItem& it : items) h = fnv1a64(bundle_to_bytes(it.bundle), h);
  return to_hex(h);
}

// One optimization run of the frontend against a frozen LM. The LM and the
// backend digest are audited for byte-identity afterwards; a violation is an
// AuditError, not a log entry.
inline TrainLog train_frontend(const TrainConfig& cfg, const std::vector<TrainItem>& items, LmState<float>& lm,
                               Frontend<float>& frontend) {
  cfg.validate();
  if (items.empty()) throw ConfigError("train: empty training set");
  if (!lm.frozen()) throw ConfigError("train: refusing to run against an unfrozen language model");

  std::map<std::string, std::string> before{{"adapter", frontend.to_checkpoint().to_bytes()},
                                            {"lm", lm_checkpoint(lm).to_bytes()},
                                            {"backend", backend_digest(items)}};

  AdamW<float> opt(0.9, 0.999, 1e-8, cfg.weight_decay);
  ParamRefs<float> fparams = frontend.params();
  ParamRefs<float> lparams = lm.params();

  TrainLog log;
  auto run_start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto epoch_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) order[i] = i;
    Philox(derive_key(cfg.seed, "batch-order", static_cast<std::uint64_t>(epoch))).shuffle(order);

    double lr = lr_at(epoch, cfg);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      zero_grads(fparams);
      zero_grads(lparams);
      for (std::size_t k = start; k < stop; ++k) {
        const TrainItem& it = items[order[k]];
        Mat<float> prefix = frontend.forward(it.bundle);
        Mat<float> logits = lm.forward(prefix, it.input_ids);
        loss_sum += caption_loss<float>(logits, it.target_ids);
        Mat<float> dprefix = lm.backward(caption_loss_backward<float>(logits, it.target_ids));
        frontend.backward(dprefix);
      }
      float inv = 1.0f / static_cast<float>(stop - start);
      for (Param<float>* p : fparams) p->grad *= inv;
      clip_global_norm<float>(fparams, cfg.clip_norm);
      opt.step(fparams, lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(items.size());
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    log.epochs.push_back(rec);
  }
  log.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();

  std::map<std::string, std::string> after{{"adapter", frontend.to_checkpoint().to_bytes()},
                                           {"lm", lm_checkpoint(lm).to_bytes()},
                                           {"backend", backend_digest(items)}};
  log.audit = freeze_audit(before, after);
  if (log.audit.changed("lm")) throw AuditError("freeze audit: the language model changed during adapter training");
  if (log.audit.changed("backend")) throw AuditError("freeze audit: the grounding backend changed during training");
  return log;
}

// Convenience wrapper matching the adapter-centric call shape.
inline std::pair<std::unique_ptr<AdapterFrontend<float>>, TrainLog> train_adapter(
    const TrainConfig& cfg, const std::vector<TrainItem>& items, LmState<float>& lm) {
  auto frontend = std::make_unique<AdapterFrontend<float>>(cfg.adapter, cfg.seed, cfg.mask_img, cfg.mask_query,
                                                           cfg.mask_decoder);
  TrainLog log = train_frontend(cfg, items, lm, *frontend);
  return {std::move(frontend), std::move(log)};
}

// ---------------------------------------------------------------------------
// Ablation harness: three axes, one trained frontend per cell, caption
// metrics on a shared evaluation set.
// ---------------------------------------------------------------------------

enum class AblationAxis { adapter_onoff, depth, feature_mask };

inline AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "adapter_onoff") return AblationAxis::adapter_onoff;
  if (name == "depth") return AblationAxis::depth;
  if (name == "feature_mask") return AblationAxis::feature_mask;
  throw ValidationError("ablation: unknown axis \"" + name + "\"");
}

inline std::string ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::adapter_onoff: return "adapter_onoff";
    case AblationAxis::depth: return "depth";
    case AblationAxis::feature_mask: return "feature_mask";
  }
  throw ValidationError("ablation: unknown axis value");
}

struct AblationData {
  std::vector<TrainItem> train_items;
  std::vector<std::string> eval_captions;
  std::vector<FeatureBundle<float>> eval_bundles;

  void validate() const {
    if (train_items.empty()) throw ValidationError("ablation: empty training set");
    if (eval_captions.empty()) throw ValidationError("ablation: empty evaluation set");
    if (eval_captions.size() != eval_bundles.size())
      throw ValidationError("ablation: evaluation captions and bundles differ in length");
  }
};

struct AblationRow {
  std::string label;
  CaptionScores scores;
  double final_loss = 0.0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;

  ordered_json to_json() const {
    ordered_json j;
    j["axis"] = axis;
    j["rows"] = ordered_json::array();
    for (const AblationRow& r : rows) {
      ordered_json row;
      row["label"] = r.label;
      row["scores"] = r.scores.to_json();
      row["final_loss"] = r.final_loss;
      j["rows"].push_back(row);
    }
    return j;
  }

  std::string to_csv() const {
    std::string out = "label,bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider_d,final_loss\n";
    for (const AblationRow& r : rows) {
      std::ostringstream line;
      line.precision(4);
      line << std::fixed << r.label << ',' << r.scores.bleu1 << ',' << r.scores.bleu2 << ',' << r.scores.bleu3
           << ',' << r.scores.bleu4 << ',' << r.scores.meteor << ',' << r.scores.rouge_l << ','
           << r.scores.cider_d << ',' << r.final_loss;
      out += line.str();
      out += '\n';
    }
    return out;
  }

  const AblationRow& row(const std::string& label) const {
    for (const AblationRow& r : rows)
      if (r.label == label) return r;
    throw ValidationError("ablation: no row labeled \"" + label + "\"");
  }
};

// Greedy-decodes one caption per evaluation bundle and scores the batch
// against the reference captions.
inline CaptionScores evaluate_captions(Frontend<float>& frontend, LmState<float>& lm, const Vocab& vocab,
                                       const std::vector<std::string>& eval_captions,
                                       const std::vector<FeatureBundle<float>>& eval_bundles,
                                       int max_len = 24) {
  if (eval_captions.size() != eval_bundles.size())
    throw ValidationError("caption evaluation: captions and bundles differ in length");
  std::vector<std::string> hyps;
  std::vector<std::vector<std::string>> refs;
  for (std::size_t i = 0; i < eval_bundles.size(); ++i) {
    Mat<float> prefix = frontend.forward(eval_bundles[i]);
    hyps.push_back(vocab.decode(lm.generate(prefix, max_len)));
    refs.push_back({eval_captions[i]});
  }
  return score_caption_strings(hyps, refs);
}

inline AblationRow run_ablation_cell(const std::string& label, const TrainConfig& cfg, const AblationData& data,
                                     LmState<float>& lm, const Vocab& vocab) {
  std::unique_ptr<Frontend<float>> frontend;
  if (cfg.use_adapter) {
    frontend = std::make_unique<AdapterFrontend<float>>(cfg.adapter, cfg.seed, cfg.mask_img, cfg.mask_query,
                                                        cfg.mask_decoder);
  } else {
    frontend = std::make_unique<ProjectionFrontend<float>>(cfg.adapter.c, cfg.adapter.d_lm, cfg.seed);
  }
  TrainLog log = train_frontend(cfg, data.train_items, lm, *frontend);
  AblationRow row;
  row.label = label;
  row.final_loss = log.epochs.back().mean_loss;
  row.scores = evaluate_captions(*frontend, lm, vocab, data.eval_captions, data.eval_bundles);
  return row;
}

// Grid of training runs along one axis; every cell shares the base config,
// seed, and data, so rows differ only in the ablated ingredient.
inline AblationTable run_ablation(AblationAxis axis, const TrainConfig& base_cfg, const AblationData& data,
                                  LmState<float>& lm, const Vocab& vocab) {
  base_cfg.validate();
  data.validate();
  AblationTable table;
  table.axis = ablation_axis_name(axis);
  switch (axis) {
    case AblationAxis::adapter_onoff: {
      TrainConfig with = base_cfg;
      with.use_adapter = true;
      table.rows.push_back(run_ablation_cell("with_adapter", with, data, lm, vocab));
      TrainConfig without = base_cfg;
      without.use_adapter = false;
      table.rows.push_back(run_ablation_cell("without_adapter", without, data, lm, vocab));
      break;
    }
    case AblationAxis::depth: {
      for (int d : {1, 2, 3, 4}) {
        TrainConfig cfg = base_cfg;
        cfg.use_adapter = true;
        cfg.adapter.depth = d;
        table.rows.push_back(run_ablation_cell(std::to_string(d), cfg, data, lm, vocab));
      }
      break;
    }
    case AblationAxis::feature_mask: {
      struct MaskRow {
        const char* label;
        bool img, query, decoder;
      };
      for (MaskRow m : {MaskRow{"no_img", true, false, false}, MaskRow{"no_query", false, true, false},
                        MaskRow{"no_decoder", false, false, true}, MaskRow{"full", false, false, false}}) {
        TrainConfig cfg = base_cfg;
        cfg.use_adapter = true;
        cfg.mask_img = m.img;
        cfg.mask_query = m.query;
        cfg.mask_decoder = m.decoder;
        table.rows.push_back(run_ablation_cell(m.label, cfg, data, lm, vocab));
      }
      break;
    }
  }
  return table;
}

// Optimization of the LM stub before it is frozen. With prefix_rows == 0
// this is plain text-only training. With prefix_rows > 0 each caption is
// conditioned on a prefix built from its own token embeddings (cycled to
// fill the rows, taken as constants): the stub both learns the language and
// learns to read informative prefix rows at the exact positions the visual
// tokens will occupy later. The positional embeddings are learned and
// absolute, so skipping this offset match leaves the frozen stub unable to
// use anything a frontend feeds it.
inline double pretrain_lm(LmState<float>& lm, const std::vector<TrainItem>& items, int epochs, double lr,
                          std::uint64_t seed, int batch_size = 8, int prefix_rows = 0) {
  if (items.empty()) throw ConfigError("lm pretraining: empty corpus");
  if (lm.frozen()) throw ConfigError("lm pretraining: model is already frozen");
  if (prefix_rows < 0) throw ConfigError("lm pretraining: prefix_rows must be non-negative");
  AdamW<float> opt;
  ParamRefs<float> params = lm.params();
  double mean_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) order[i] = i;
    Philox(derive_key(seed, "lm-pretrain-order", static_cast<std::uint64_t>(epoch))).shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      zero_grads(params);
      for (std::size_t k = start; k < stop; ++k) {
        const TrainItem& it = items[order[k]];
        Mat<float> prefix(0, lm.config().d_lm);
        if (prefix_rows > 0) {
          std::vector<int> content(it.input_ids.begin() + 1, it.input_ids.end());
          std::vector<int> pre_ids(static_cast<std::size_t>(prefix_rows));
          for (std::size_t r = 0; r < pre_ids.size(); ++r) pre_ids[r] = content[r % content.size()];
          prefix = lm.tok_emb().forward(pre_ids);
        }
        Mat<float> logits = lm.forward(prefix, it.input_ids);
        loss_sum += caption_loss<float>(logits, it.target_ids);
        lm.backward(caption_loss_backward<float>(logits, it.target_ids));
      }
      float inv = 1.0f / static_cast<float>(stop - start);
      for (Param<float>* p : params) p->grad *= inv;
      clip_global_norm<float>(params, 1.0);
      opt.step(params, lr);
    }
    mean_loss = loss_sum / static_cast<double>(items.size());
  }
  return mean_loss;
}

}  // namespace govla
