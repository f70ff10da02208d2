#pragma once

#include "govla/common.hpp"
#include "govla/dataset.hpp"
#include "govla/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace govla {

using TokenSeq = std::vector<std::string>;
using RefSet = std::vector<TokenSeq>;

struct CaptionScores {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double meteor = 0, rouge_l = 0, cider_d = 0;

  ordered_json to_json() const {
    ordered_json j;
    j["bleu1"] = bleu1;
    j["bleu2"] = bleu2;
    j["bleu3"] = bleu3;
    j["bleu4"] = bleu4;
    j["meteor"] = meteor;
    j["rouge_l"] = rouge_l;
    j["cider_d"] = cider_d;
    return j;
  }
};

namespace detail {

inline void check_caption_inputs(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  if (hyps.empty()) throw ValidationError("caption metrics: empty hypothesis set");
  if (hyps.size() != refs.size())
    throw ValidationError("caption metrics: need exactly one reference set per hypothesis");
  for (const RefSet& rs : refs)
    if (rs.empty()) throw ValidationError("caption metrics: empty reference set");
}

// N-grams keyed as unit-separator joined strings; cheap and collision-free
// for alphanumeric tokens.
inline std::map<std::string, long> ngrams(const TokenSeq& toks, std::size_t n) {
  std::map<std::string, long> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + j];
    }
    out[key] += 1;
  }
  return out;
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// Corpus-level n-gram precision scores with clipping and the closest
// reference length brevity penalty (length ties resolved toward the
// shorter reference). Returns orders 1..4 in [0,1].
inline std::array<double, 4> bleu(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  detail::check_caption_inputs(hyps, refs);
  std::array<long, 4> matched{}, total{};
  long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const TokenSeq& h = hyps[i];
    hyp_len += static_cast<long>(h.size());
    std::size_t closest = refs[i][0].size();
    for (const TokenSeq& r : refs[i]) {
      long cur = std::labs(static_cast<long>(r.size()) - static_cast<long>(h.size()));
      long best = std::labs(static_cast<long>(closest) - static_cast<long>(h.size()));
      if (cur < best || (cur == best && r.size() < closest)) closest = r.size();
    }
    ref_len += static_cast<long>(closest);
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hc = detail::ngrams(h, n);
      std::map<std::string, long> clip;
      for (const TokenSeq& r : refs[i])
        for (const auto& [key, cnt] : detail::ngrams(r, n)) clip[key] = std::max(clip[key], cnt);
      for (const auto& [key, cnt] : hc) {
        auto it = clip.find(key);
        matched[n - 1] += std::min(cnt, it == clip.end() ? 0L : it->second);
        total[n - 1] += cnt;
      }
    }
  }
  double bp = 1.0;
  if (hyp_len < ref_len)
    bp = hyp_len == 0 ? 0.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  std::array<double, 4> out{};
  double log_sum = 0.0;
  bool dead = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double p = total[n] > 0 ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (p <= 0.0) dead = true;
    if (!dead) log_sum += std::log(p);
    out[n] = dead ? 0.0 : bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

// Longest-common-subsequence F-measure, recall-weighted with beta = 1.2.
// Best reference per pair, mean over pairs. Returns [0,1].
inline double rouge_l(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  detail::check_caption_inputs(hyps, refs);
  const double beta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double best = 0.0;
    for (const TokenSeq& r : refs[i]) {
      std::size_t l = detail::lcs_length(hyps[i], r);
      if (l == 0 || hyps[i].empty() || r.empty()) continue;
      double p = static_cast<double>(l) / static_cast<double>(hyps[i].size());
      double rec = static_cast<double>(l) / static_cast<double>(r.size());
      best = std::max(best, (1.0 + beta2) * p * rec / (rec + beta2 * p));
    }
    sum += best;
  }
  return sum / static_cast<double>(hyps.size());
}

// Exact-match unigram variant: alignment prefers continuing the previous
// match, F_mean has alpha = 0.9, fragmentation penalty 0.5 * (chunks/m)^3.
// Best reference per pair, mean over pairs. Returns [0,1].
inline double meteor(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  detail::check_caption_inputs(hyps, refs);
  const double alpha = 0.9, gamma = 0.5, beta = 3.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double best = 0.0;
    for (const TokenSeq& r : refs[i]) {
      const TokenSeq& h = hyps[i];
      std::vector<bool> used(r.size(), false);
      long matches = 0, chunks = 0;
      long prev = -2;
      for (const std::string& tok : h) {
        long pick = -1;
        if (prev + 1 >= 0 && static_cast<std::size_t>(prev + 1) < r.size() && !used[prev + 1] &&
            r[prev + 1] == tok)
          pick = prev + 1;
        else
          for (std::size_t j = 0; j < r.size(); ++j)
            if (!used[j] && r[j] == tok) {
              pick = static_cast<long>(j);
              break;
            }
        if (pick >= 0) {
          used[pick] = true;
          matches += 1;
          if (pick != prev + 1) chunks += 1;
          prev = pick;
        }
      }
      if (matches == 0 || h.empty() || r.empty()) continue;
      double p = static_cast<double>(matches) / static_cast<double>(h.size());
      double rec = static_cast<double>(matches) / static_cast<double>(r.size());
      double f = p * rec / (alpha * p + (1.0 - alpha) * rec);
      double frag = static_cast<double>(chunks) / static_cast<double>(matches);
      best = std::max(best, f * (1.0 - gamma * std::pow(frag, beta)));
    }
    sum += best;
  }
  return sum / static_cast<double>(hyps.size());
}

// Consensus tf-idf similarity over n = 1..4 with hypothesis count clipping
// and a Gaussian length penalty (sigma = 6), scaled by 10. The reference
// corpus defines the idf table. Returns the mean over images.
inline double cider_d(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  detail::check_caption_inputs(hyps, refs);
  const double sigma = 6.0;
  const double log_images = std::log(static_cast<double>(refs.size()));
  std::array<std::map<std::string, long>, 4> df;
  for (const RefSet& rs : refs)
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, long> seen;
      for (const TokenSeq& r : rs)
        for (const auto& [key, cnt] : detail::ngrams(r, n)) seen[key] = 1;
      for (const auto& [key, one] : seen) df[n - 1][key] += 1;
    }
  auto idf = [&](std::size_t n, const std::string& key) {
    auto it = df[n - 1].find(key);
    long d = it == df[n - 1].end() ? 0 : it->second;
    return log_images - std::log(static_cast<double>(std::max(1L, d)));
  };

  double corpus = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double image_score = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hc = detail::ngrams(hyps[i], n);
      std::map<std::string, double> hv;
      double hnorm2 = 0.0;
      for (const auto& [key, cnt] : hc) {
        double v = static_cast<double>(cnt) * idf(n, key);
        hv[key] = v;
        hnorm2 += v * v;
      }
      double acc = 0.0;
      for (const TokenSeq& r : refs[i]) {
        auto rc = detail::ngrams(r, n);
        std::map<std::string, double> rv;
        double rnorm2 = 0.0;
        for (const auto& [key, cnt] : rc) {
          double v = static_cast<double>(cnt) * idf(n, key);
          rv[key] = v;
          rnorm2 += v * v;
        }
        double dot = 0.0;
        for (const auto& [key, cnt] : hc) {
          auto it = rc.find(key);
          if (it == rc.end()) continue;
          double w = idf(n, key);
          dot += static_cast<double>(std::min(cnt, it->second)) * w * static_cast<double>(it->second) * w;
        }
        if (hnorm2 > 0.0 && rnorm2 > 0.0) {
          double delta = static_cast<double>(hyps[i].size()) - static_cast<double>(r.size());
          acc += std::exp(-delta * delta / (2.0 * sigma * sigma)) * dot / std::sqrt(hnorm2 * rnorm2);
        }
      }
      image_score += acc / static_cast<double>(refs[i].size());
    }
    corpus += 10.0 * image_score / 4.0;
  }
  return corpus / static_cast<double>(hyps.size());
}

inline std::vector<TokenSeq> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<TokenSeq> out;
  for (const std::string& t : texts) out.push_back(text::tokenize(t));
  return out;
}

// Reported convention: every score ×100.
inline CaptionScores score_captions(const std::vector<TokenSeq>& hyps, const std::vector<RefSet>& refs) {
  CaptionScores s;
  auto b = bleu(hyps, refs);
  s.bleu1 = 100.0 * b[0];
  s.bleu2 = 100.0 * b[1];
  s.bleu3 = 100.0 * b[2];
  s.bleu4 = 100.0 * b[3];
  s.meteor = 100.0 * meteor(hyps, refs);
  s.rouge_l = 100.0 * rouge_l(hyps, refs);
  s.cider_d = 100.0 * cider_d(hyps, refs);
  return s;
}

inline CaptionScores score_caption_strings(const std::vector<std::string>& hyps,
                                           const std::vector<std::vector<std::string>>& refs) {
  std::vector<RefSet> rsets;
  for (const auto& rs : refs) rsets.push_back(tokenize_all(rs));
  return score_captions(tokenize_all(hyps), rsets);
}

// ---------------------------------------------------------------------------
// Detection metrics.
// ---------------------------------------------------------------------------

struct Detection {
  std::string image_id;
  BBox bbox;
  double score = 0.0;

  void validate() const {
    if (image_id.empty()) throw ValidationError("detection: empty image_id");
    if (!std::isfinite(score) || score < 0.0 || score > 1.0)
      throw ValidationError("detection for " + image_id + ": score must be a finite value in [0,1]");
    if (!std::isfinite(bbox.x_min) || !std::isfinite(bbox.y_min) || !std::isfinite(bbox.x_max) ||
        !std::isfinite(bbox.y_max))
      throw ValidationError("detection for " + image_id + ": non-finite box");
    if (!(bbox.x_min < bbox.x_max) || !(bbox.y_min < bbox.y_max))
      throw ValidationError("detection for " + image_id + ": degenerate box");
    if (bbox.category >= kNumCategories)
      throw ValidationError("detection for " + image_id + ": category index out of range");
  }
};

struct DetectionScores {
  double map = 0, map50 = 0, map75 = 0;

  ordered_json to_json() const {
    ordered_json j;
    j["map"] = map;
    j["map50"] = map50;
    j["map75"] = map75;
    return j;
  }
};

inline double iou(const BBox& a, const BBox& b) {
  auto area = [](const BBox& x) {
    if (!(x.x_min < x.x_max) || !(x.y_min < x.y_max)) throw ValidationError("iou: degenerate box");
    return (x.x_max - x.x_min) * (x.y_max - x.y_min);
  };
  double aa = area(a), ab = area(b);
  double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  double inter = ix * iy;
  return inter / (aa + ab - inter);
}

struct GtBox {
  std::string image_id;
  BBox box;
};

// AP over a single category slice: greedy matching in descending score
// order with single-use ground truths, then 101-point interpolation of the
// precision envelope.
inline double average_precision(std::vector<Detection> dets, const std::vector<GtBox>& gts, double iou_thresh) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<bool> taken(gts.size(), false);
  std::vector<double> prec, rec;
  long tp = 0, fp = 0;
  for (const Detection& d : dets) {
    long best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != d.image_id) continue;
      double v = iou(d.bbox, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<long>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_thresh) {
      taken[best] = true;
      tp += 1;
    } else {
      fp += 1;
    }
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  double ap = 0.0;
  for (int i = 0; i <= 100; ++i) {
    double r = static_cast<double>(i) / 100.0;
    double best_p = 0.0;
    for (std::size_t k = 0; k < prec.size(); ++k)
      if (rec[k] >= r - 1e-12) best_p = std::max(best_p, prec[k]);
    ap += best_p;
  }
  return ap / 101.0;
}

inline std::vector<double> map_iou_grid() {
  std::vector<double> grid;
  for (int i = 50; i <= 95; i += 5) grid.push_back(static_cast<double>(i) / 100.0);
  return grid;
}

inline std::vector<std::size_t> all_category_ids() {
  std::vector<std::size_t> ids(kNumCategories);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

// Mean AP across categories and the 0.50:0.05:0.95 IoU grid; categories
// with no ground truth anywhere are left out of the mean. Reported ×100.
inline DetectionScores mean_ap(const std::vector<Detection>& dets, const std::vector<Sample>& gt_samples,
                               const std::vector<std::size_t>& categories = all_category_ids()) {
  for (const Detection& d : dets) d.validate();
  double sum = 0, sum50 = 0, sum75 = 0;
  std::size_t included = 0;
  for (std::size_t cat : categories) {
    std::vector<GtBox> gts;
    for (const Sample& s : gt_samples)
      for (const BBox& b : s.boxes)
        if (b.category == cat) gts.push_back({s.image_id, b});
    if (gts.empty()) continue;
    included += 1;
    std::vector<Detection> slice;
    for (const Detection& d : dets)
      if (d.bbox.category == cat) slice.push_back(d);
    double over_grid = 0.0;
    for (double t : map_iou_grid()) over_grid += average_precision(slice, gts, t);
    sum += over_grid / static_cast<double>(map_iou_grid().size());
    sum50 += average_precision(slice, gts, 0.50);
    sum75 += average_precision(slice, gts, 0.75);
  }
  DetectionScores out;
  if (included > 0) {
    out.map = 100.0 * sum / static_cast<double>(included);
    out.map50 = 100.0 * sum50 / static_cast<double>(included);
    out.map75 = 100.0 * sum75 / static_cast<double>(included);
  }
  return out;
}

inline Detection detection_from_json(const ordered_json& j) {
  for (const char* key : {"image_id", "bbox", "category", "score"})
    if (!j.contains(key)) throw ValidationError(std::string("detection record: missing field ") + key);
  Detection d;
  d.image_id = j.at("image_id").get<std::string>();
  const auto& bb = j.at("bbox");
  if (!bb.is_array() || bb.size() != 4)
    throw ValidationError("detection for " + d.image_id + ": bbox must be [x_min,y_min,x_max,y_max]");
  d.bbox.x_min = bb[0].get<double>();
  d.bbox.y_min = bb[1].get<double>();
  d.bbox.x_max = bb[2].get<double>();
  d.bbox.y_max = bb[3].get<double>();
  std::string cat = j.at("category").get<std::string>();
  auto idx = category_index(cat);
  if (!idx) throw ValidationError("detection for " + d.image_id + ": unknown category \"" + cat + "\"");
  d.bbox.category = *idx;
  d.score = j.at("score").get<double>();
  d.validate();
  return d;
}

inline ordered_json detection_to_json(const Detection& d) {
  ordered_json j;
  j["image_id"] = d.image_id;
  j["bbox"] = {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max};
  j["category"] = category_names()[d.bbox.category];
  j["score"] = d.score;
  return j;
}

inline std::vector<Detection> detections_from_jsonl(const std::string& content) {
  std::vector<Detection> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    if (line.empty()) continue;
    try {
      out.push_back(detection_from_json(ordered_json::parse(line)));
    } catch (const ordered_json::exception& e) {
      throw ValidationError("detections line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering.
// ---------------------------------------------------------------------------

inline std::string caption_csv(const CaptionScores& s) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed;
  out << "bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider_d\n";
  out << s.bleu1 << ',' << s.bleu2 << ',' << s.bleu3 << ',' << s.bleu4 << ',' << s.meteor << ',' << s.rouge_l
      << ',' << s.cider_d << '\n';
  return out.str();
}

inline std::string caption_report(const CaptionScores& s) {
  std::ostringstream out;
  out.precision(2);
  out << std::fixed;
  out << "caption metrics (x100)\n";
  out << "note: METEOR is the exact-match variant (alpha=0.9, beta=3, gamma=0.5);\n";
  out << "      stem and synonym stages of the official scorer are not applied.\n";
  out << "BLEU-1   " << s.bleu1 << '\n';
  out << "BLEU-2   " << s.bleu2 << '\n';
  out << "BLEU-3   " << s.bleu3 << '\n';
  out << "BLEU-4   " << s.bleu4 << '\n';
  out << "METEOR   " << s.meteor << '\n';
  out << "ROUGE-L  " << s.rouge_l << '\n';
  out << "CIDEr-D  " << s.cider_d << '\n';
  return out.str();
}

inline std::string detection_csv(const DetectionScores& s) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed;
  out << "map,map50,map75\n";
  out << s.map << ',' << s.map50 << ',' << s.map75 << '\n';
  return out.str();
}

inline std::string detection_report(const DetectionScores& s) {
  std::ostringstream out;
  out.precision(2);
  out << std::fixed;
  out << "detection metrics (x100)\n";
  out << "mAP      " << s.map << '\n';
  out << "mAP@50   " << s.map50 << '\n';
  out << "mAP@75   " << s.map75 << '\n';
  return out.str();
}

}  // namespace govla
