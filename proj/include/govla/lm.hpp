#pragma once

#include "govla/checkpoint.hpp"
#include "govla/nn.hpp"
#include "govla/text.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace govla {

// Word-level vocabulary with four reserved ids. Real ids are assigned by
// corpus frequency (descending), ties broken lexicographically, so rebuilding
// from the same corpus is deterministic.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocab() : id_to_token_{"<pad>", "<bos>", "<eos>", "<unk>"} {}

  static Vocab build(const std::vector<std::string>& captions, std::size_t max_size = 200) {
    if (captions.empty()) throw ValidationError("vocab: empty corpus");
    std::map<std::string, std::size_t> freq;
    for (const std::string& cap : captions)
      for (const std::string& tok : text::tokenize(cap)) freq[tok] += 1;
    std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, count] : order) {
      if (v.size() >= max_size) break;
      v.push(tok);
    }
    return v;
  }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw ValidationError("vocab: id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return id_to_token_.size(); }

  std::vector<int> encode(const std::string& sentence) const {
    std::vector<int> ids;
    for (const std::string& tok : text::tokenize(sentence)) ids.push_back(id(tok));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int i : ids) {
      if (i == kPad || i == kBos) continue;
      if (i == kEos) break;
      words.push_back(token(i));
    }
    return text::join(words);
  }

  // One token per line; the four reserved tokens come first.
  std::string to_text() const {
    std::string out;
    for (const std::string& tok : id_to_token_) {
      out += tok;
      out += '\n';
    }
    return out;
  }

  static Vocab from_text(const std::string& body) {
    std::istringstream in(body);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(line);
    if (lines.size() < 4 || lines[0] != "<pad>" || lines[1] != "<bos>" || lines[2] != "<eos>" ||
        lines[3] != "<unk>")
      throw LoadError(LoadError::Kind::bad_header, "vocab file: reserved token lines missing");
    Vocab v;
    for (std::size_t i = 4; i < lines.size(); ++i) v.push(lines[i]);
    return v;
  }

  void save(const std::string& path) const { write_file(path, to_text()); }
  static Vocab load(const std::string& path) { return from_text(read_file(path)); }

 private:
  void push(const std::string& tok) {
    token_to_id_[tok] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(tok);
  }

  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct LmConfig {
  Eigen::Index vocab = 200;
  Eigen::Index d_lm = 64;
  Eigen::Index depth = 2;
  int heads = 4;
  Eigen::Index max_pos = 96;  // prefix tokens plus the longest decoder input

  void validate() const {
    if (vocab < 5 || d_lm < 1 || depth < 1 || heads < 1 || max_pos < 2)
      throw ConfigError("lm config: dimensions out of range");
    if (d_lm % heads != 0) throw ConfigError("lm config: d_lm must be divisible by the head count");
  }
};

// Tiny causal decoder: token + learned position embeddings, a stack of
// causal pre-norm blocks, a final layer norm, and a linear head to the
// vocabulary. The visual tokens from the adapter occupy the first positions
// as non-predicted context; gradients flow back through them into the
// adapter while the LM itself stays frozen.
template <class S>
class LmState {
 public:
  LmState(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    tok_emb_ = Embedding<S>("lm.tok_emb", cfg_.vocab, cfg_.d_lm);
    pos_emb_ = Param<S>("lm.pos_emb", cfg_.max_pos, cfg_.d_lm);
    blocks_.reserve(static_cast<std::size_t>(cfg_.depth));
    for (Eigen::Index i = 0; i < cfg_.depth; ++i)
      blocks_.emplace_back("lm.block." + std::to_string(i), cfg_.d_lm, cfg_.heads, 4 * cfg_.d_lm, true);
    final_ln_ = LayerNorm<S>("lm.final_ln", cfg_.d_lm);
    head_ = Linear<S>("lm.head", cfg_.d_lm, cfg_.vocab);
    Philox gen(derive_key(seed, "lm-init"));
    tok_emb_.init(gen, 0.02);
    pos_emb_.init_normal(gen, 0.02);
    for (auto& b : blocks_) b.init(gen);
    head_.init(gen);
  }

  const LmConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    tok_emb_.collect(out);
    out.push_back(&pos_emb_);
    for (auto& b : blocks_) b.collect(out);
    final_ln_.collect(out);
    head_.collect(out);
    return out;
  }

  // Logits for each decoder input position, conditioned on `prefix` rows
  // occupying the first positions. Pass a 0-row prefix for text-only use.
  Mat<S> forward(const Mat<S>& prefix, const std::vector<int>& ids) {
    if (ids.empty()) throw ValidationError("lm: empty decoder input");
    if (prefix.rows() > 0 && prefix.cols() != cfg_.d_lm)
      throw DimensionError("lm: prefix width != d_lm");
    for (int i : ids)
      if (i < 0 || i >= cfg_.vocab) throw ValidationError("lm: token id out of range: " + std::to_string(i));
    const Eigen::Index np = prefix.rows();
    const auto nt = static_cast<Eigen::Index>(ids.size());
    if (np + nt > cfg_.max_pos) throw ValidationError("lm: sequence exceeds max positions");
    cache_np_ = np;
    Mat<S> seq(np + nt, cfg_.d_lm);
    if (np > 0) seq.topRows(np) = prefix;
    seq.bottomRows(nt) = tok_emb_.forward(ids);
    seq += pos_emb_.value.topRows(np + nt);
    for (auto& b : blocks_) seq = b.forward(seq);
    Mat<S> normed = final_ln_.forward(seq);
    return head_.forward(normed).bottomRows(nt);
  }

  // Backward for the latest forward; returns d(loss)/d(prefix). LM parameter
  // grads accumulate too (used only by LM pretraining, never applied while
  // the LM is frozen).
  Mat<S> backward(const Mat<S>& dlogits) {
    const Eigen::Index np = cache_np_;
    const Eigen::Index total = np + dlogits.rows();
    Mat<S> dfull = Mat<S>::Zero(total, cfg_.vocab);
    dfull.bottomRows(dlogits.rows()) = dlogits;
    Mat<S> dseq = final_ln_.backward(head_.backward(dfull));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dseq = it->backward(dseq);
    pos_emb_.grad.topRows(total) += dseq;
    tok_emb_.backward(dseq.bottomRows(dlogits.rows()));
    return np > 0 ? Mat<S>(dseq.topRows(np)) : Mat<S>(0, cfg_.d_lm);
  }

  // Greedy decode from BOS until EOS or max_len generated tokens; argmax
  // ties resolve to the lowest token id. Returns generated ids, EOS excluded.
  std::vector<int> generate(const Mat<S>& prefix, int max_len) {
    if (max_len < 1) throw ValidationError("lm: max_len must be at least 1");
    std::vector<int> input = {Vocab::kBos};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
      Mat<S> logits = forward(prefix, input);
      const Eigen::Index last = logits.rows() - 1;
      int best = 0;
      for (Eigen::Index v = 1; v < logits.cols(); ++v)
        if (logits(last, v) > logits(last, best)) best = static_cast<int>(v);
      if (best == Vocab::kEos) break;
      out.push_back(best);
      input.push_back(best);
    }
    return out;
  }

  Embedding<S>& tok_emb() { return tok_emb_; }
  Param<S>& pos_emb() { return pos_emb_; }
  std::vector<TransformerBlock<S>>& blocks() { return blocks_; }
  LayerNorm<S>& final_ln() { return final_ln_; }
  Linear<S>& head() { return head_; }

 private:
  LmConfig cfg_;
  Embedding<S> tok_emb_;
  Param<S> pos_emb_;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNorm<S> final_ln_;
  Linear<S> head_;
  bool frozen_ = false;
  Eigen::Index cache_np_ = 0;
};

// Mean cross-entropy over non-PAD targets.
template <class S>
inline S caption_loss(const Mat<S>& logits, const std::vector<int>& targets) {
  if (logits.rows() != static_cast<Eigen::Index>(targets.size()))
    throw ValidationError("caption_loss: one logit row per target required");
  S total = 0;
  Eigen::Index counted = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int tgt = targets[static_cast<std::size_t>(t)];
    if (tgt == Vocab::kPad) continue;
    if (tgt < 0 || tgt >= logits.cols()) throw ValidationError("caption_loss: target id out of range");
    S mx = logits.row(t).maxCoeff();
    S lse = std::log((logits.row(t).array() - mx).exp().sum()) + mx;
    total += lse - logits(t, tgt);
    counted += 1;
  }
  if (counted == 0) throw ValidationError("caption_loss: all targets are PAD");
  return total / static_cast<S>(counted);
}

template <class S>
inline Mat<S> caption_loss_backward(const Mat<S>& logits, const std::vector<int>& targets) {
  Eigen::Index counted = 0;
  for (int tgt : targets)
    if (tgt != Vocab::kPad) counted += 1;
  Mat<S> d = Mat<S>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int tgt = targets[static_cast<std::size_t>(t)];
    if (tgt == Vocab::kPad) continue;
    Mat<S> p = softmax_rows<S>(logits.row(t));
    d.row(t) = p.row(0) / static_cast<S>(counted);
    d(t, tgt) -= S(1) / static_cast<S>(counted);
  }
  return d;
}

inline Checkpoint lm_checkpoint(LmState<float>& lm) {
  ordered_json cfg;
  cfg["V"] = lm.config().vocab;
  cfg["d_lm"] = lm.config().d_lm;
  cfg["D"] = lm.config().depth;
  cfg["H"] = lm.config().heads;
  cfg["max_pos"] = lm.config().max_pos;
  cfg["frozen"] = lm.frozen();
  return snapshot_params<float>(lm.params(), cfg);
}

inline LmState<float> lm_from_checkpoint(const Checkpoint& ck) {
  LmConfig cfg;
  try {
    cfg.vocab = ck.config.at("V").get<Eigen::Index>();
    cfg.d_lm = ck.config.at("d_lm").get<Eigen::Index>();
    cfg.depth = ck.config.at("D").get<Eigen::Index>();
    cfg.heads = ck.config.at("H").get<int>();
    cfg.max_pos = ck.config.at("max_pos").get<Eigen::Index>();
  } catch (const ordered_json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, std::string("checkpoint: bad lm config: ") + e.what());
  }
  LmState<float> lm(cfg, 0);
  restore_params<float>(lm.params(), ck);
  lm.set_frozen(ck.config.value("frozen", false));
  return lm;
}

}  // namespace govla
