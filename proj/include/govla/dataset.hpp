#pragma once

#include "govla/common.hpp"
#include "govla/grounding.hpp"
#include "govla/rng.hpp"
#include "govla/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace govla {

// The closed category set, in the dataset's canonical order.
inline const std::array<std::string, 9>& category_names() {
  static const std::array<std::string, 9> names = {
      "illegally parked vehicle", "construction debris", "construction fencing",
      "brick pile",               "aggregate pile",      "construction worker",
      "ground litter",            "overflowing trash bin", "scaffolding"};
  return names;
}

constexpr std::size_t kNumCategories = 9;

// Published instance proportions for the full-scale dataset, normalized to
// sum to 1; used as the default synthetic category mix.
inline std::array<double, kNumCategories> reference_mix() {
  std::array<double, kNumCategories> raw = {7.2, 34.0, 18.5, 2.0, 6.3, 9.1, 18.8, 0.3, 3.9};
  double sum = 0.0;
  for (double v : raw) sum += v;
  for (double& v : raw) v /= sum;
  return raw;
}

inline std::optional<std::size_t> category_index(const std::string& name) {
  const auto& names = category_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  return std::nullopt;
}

struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  std::size_t category = 0;

  void validate(double width, double height, const std::string& image_id) const {
    if (category >= kNumCategories)
      throw ValidationError("sample " + image_id + ": category index out of range");
    if (!(x_min < x_max) || !(y_min < y_max))
      throw ValidationError("sample " + image_id + ": degenerate box [" + std::to_string(x_min) + "," +
                            std::to_string(y_min) + "," + std::to_string(x_max) + "," + std::to_string(y_max) + "]");
    if (x_min < 0 || y_min < 0 || x_max > width || y_max > height)
      throw ValidationError("sample " + image_id + ": box outside image bounds");
  }
};

enum class Split { unassigned, train, test };

struct Sample {
  std::string image_id;
  std::string image_ref;
  double width = 512, height = 512;
  std::vector<BBox> boxes;
  std::string caption;
  Split split = Split::unassigned;

  void validate(bool allow_negative = false) const {
    if (image_id.empty()) throw ValidationError("sample with empty image_id");
    if (caption.empty()) throw ValidationError("sample " + image_id + ": empty caption");
    if (width <= 0 || height <= 0) throw ValidationError("sample " + image_id + ": non-positive image size");
    if (boxes.empty() && !allow_negative)
      throw ValidationError("sample " + image_id + ": no boxes (negative samples are disallowed)");
    for (const BBox& b : boxes) b.validate(width, height, image_id);
  }
};

inline ordered_json sample_to_json(const Sample& s) {
  ordered_json j;
  j["image_id"] = s.image_id;
  j["image_ref"] = s.image_ref;
  j["width"] = s.width;
  j["height"] = s.height;
  j["boxes"] = ordered_json::array();
  for (const BBox& b : s.boxes) {
    ordered_json jb;
    jb["bbox"] = {b.x_min, b.y_min, b.x_max, b.y_max};
    jb["category"] = category_names()[b.category];
    j["boxes"].push_back(jb);
  }
  j["caption"] = s.caption;
  return j;
}

inline Sample sample_from_json(const ordered_json& j) {
  Sample s;
  s.image_id = j.at("image_id").get<std::string>();
  s.image_ref = j.at("image_ref").get<std::string>();
  s.width = j.at("width").get<double>();
  s.height = j.at("height").get<double>();
  for (const auto& jb : j.at("boxes")) {
    BBox b;
    const auto& arr = jb.at("bbox");
    if (!arr.is_array() || arr.size() != 4)
      throw ValidationError("sample " + s.image_id + ": bbox must be [x_min,y_min,x_max,y_max]");
    b.x_min = arr[0].get<double>();
    b.y_min = arr[1].get<double>();
    b.x_max = arr[2].get<double>();
    b.y_max = arr[3].get<double>();
    std::string cat = jb.at("category").get<std::string>();
    auto idx = category_index(cat);
    if (!idx) throw ValidationError("sample " + s.image_id + ": unknown category \"" + cat + "\"");
    b.category = *idx;
    s.boxes.push_back(b);
  }
  s.caption = j.at("caption").get<std::string>();
  s.validate();
  return s;
}

inline std::string samples_to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const Sample& s : samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Sample> samples_from_jsonl(const std::string& body) {
  std::vector<Sample> out;
  std::istringstream in(body);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(ordered_json::parse(line)));
    } catch (const ordered_json::exception& e) {
      throw ValidationError("annotations line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("annotations line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Sample> load_annotations(const std::string& path) {
  return samples_from_jsonl(read_file(path));
}

inline void save_annotations(const std::vector<Sample>& samples, const std::string& path) {
  write_file(path, samples_to_jsonl(samples));
}

// ---------------------------------------------------------------------------
// Stratified split. Each image's stratum is its rarest category (rarity by
// global image count, ties by canonical category order); strata are shuffled
// with a seeded generator and cut so the test share is rounded up, keeping
// rare strata represented. A bounded repair pass then restores per-category
// presence in both splits where multi-label images broke it.
// ---------------------------------------------------------------------------

inline std::pair<std::vector<Sample>, std::vector<Sample>> stratified_split(std::vector<Sample> samples,
                                                                            double ratio, std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("split: empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split: ratio must lie strictly between 0 and 1");

  std::array<std::vector<std::size_t>, kNumCategories> images_with;  // sample indices per category
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::array<bool, kNumCategories> seen{};
    for (const BBox& b : samples[i].boxes) {
      if (!seen[b.category]) {
        seen[b.category] = true;
        images_with[b.category].push_back(i);
      }
    }
  }
  for (std::size_t c = 0; c < kNumCategories; ++c)
    if (images_with[c].size() == 1)
      throw ValidationError("split: category \"" + category_names()[c] +
                            "\" appears in only one image and cannot reach both splits");

  // rarity order: ascending image count, canonical order inside ties
  std::array<std::size_t, kNumCategories> rarity_rank{};
  {
    std::vector<std::size_t> order(kNumCategories);
    for (std::size_t c = 0; c < kNumCategories; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return images_with[a].size() < images_with[b].size();
    });
    for (std::size_t r = 0; r < kNumCategories; ++r) rarity_rank[order[r]] = r;
  }

  auto stratum_of = [&](const Sample& s) {
    std::size_t best = kNumCategories;
    for (const BBox& b : s.boxes)
      if (best == kNumCategories || rarity_rank[b.category] < rarity_rank[best]) best = b.category;
    return best;
  };

  std::array<std::vector<std::size_t>, kNumCategories> strata;
  for (std::size_t i = 0; i < samples.size(); ++i) strata[stratum_of(samples[i])].push_back(i);

  std::vector<bool> in_test(samples.size(), false);
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    auto& members = strata[c];
    if (members.empty()) continue;
    Philox gen(derive_key(seed, "split", c));
    gen.shuffle(members);
    auto n_test = static_cast<std::size_t>(
        std::ceil((1.0 - ratio) * static_cast<double>(members.size()) - 1e-9));
    if (n_test >= members.size()) n_test = members.size() - 1;
    for (std::size_t k = 0; k < n_test; ++k) in_test[members[k]] = true;
  }

  // repair: every category with >= 2 images must appear in both splits.
  // When choosing which image to relocate, prefer one that is not the sole
  // carrier of some other category on its current side, so one fix does not
  // create the next hole.
  auto sole_carrier_count = [&](std::size_t img) {
    std::size_t n = 0;
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      if (images_with[c].size() < 2) continue;
      bool contains = false, alone = true;
      for (std::size_t i : images_with[c]) {
        if (i == img) {
          contains = true;
        } else if (in_test[i] == in_test[img]) {
          alone = false;
        }
      }
      if (contains && alone) n += 1;
    }
    return n;
  };
  for (int sweep = 0; sweep < 10; ++sweep) {
    bool moved = false;
    std::vector<std::size_t> by_rarity(kNumCategories);
    for (std::size_t c = 0; c < kNumCategories; ++c) by_rarity[rarity_rank[c]] = c;
    for (std::size_t c : by_rarity) {
      if (images_with[c].size() < 2) continue;
      std::size_t n_train = 0, n_test = 0;
      for (std::size_t i : images_with[c]) (in_test[i] ? n_test : n_train) += 1;
      if (n_train > 0 && n_test > 0) continue;
      bool need_test = n_test == 0;
      std::size_t pick = samples.size();
      std::size_t pick_cost = 0;
      for (std::size_t i : images_with[c]) {
        if (in_test[i] == need_test) continue;
        std::size_t cost = sole_carrier_count(i);
        if (pick == samples.size() || cost < pick_cost ||
            (cost == pick_cost && samples[i].image_id < samples[pick].image_id)) {
          pick = i;
          pick_cost = cost;
        }
      }
      if (pick < samples.size()) {
        in_test[pick] = need_test;
        moved = true;
      }
    }
    if (!moved) break;
  }

  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].split = in_test[i] ? Split::test : Split::train;
    (in_test[i] ? test : train).push_back(samples[i]);
  }
  if (train.empty() || test.empty()) throw ValidationError("split: one side ended up empty");
  return {train, test};
}

// ---------------------------------------------------------------------------
// Dataset statistics.
// ---------------------------------------------------------------------------

struct DatasetStats {
  std::size_t n_images = 0, n_boxes = 0;
  std::array<std::size_t, kNumCategories> box_counts{};
  std::array<double, kNumCategories> proportions{};
  std::map<int, std::size_t> caption_hist;  // bucket start (width 10 words) -> image count
  std::vector<std::pair<std::string, std::size_t>> top_words;
  std::map<std::string, std::pair<std::size_t, std::size_t>> split_counts;  // split -> (images, boxes)

  ordered_json to_json() const {
    ordered_json j;
    j["n_images"] = n_images;
    j["n_boxes"] = n_boxes;
    j["categories"] = ordered_json::array();
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      ordered_json jc;
      jc["category"] = category_names()[c];
      jc["boxes"] = box_counts[c];
      jc["proportion"] = proportions[c];
      j["categories"].push_back(jc);
    }
    j["caption_length_histogram"] = ordered_json::object();
    for (const auto& [bucket, count] : caption_hist) {
      std::string key = std::to_string(bucket) + "-" + std::to_string(bucket + 9);
      j["caption_length_histogram"][key] = count;
    }
    j["top_words"] = ordered_json::array();
    for (const auto& [word, count] : top_words) j["top_words"].push_back({{"word", word}, {"count", count}});
    j["splits"] = ordered_json::object();
    for (const auto& [name, counts] : split_counts)
      j["splits"][name] = {{"images", counts.first}, {"boxes", counts.second}};
    return j;
  }
};

inline DatasetStats compute_stats(const std::vector<Sample>& samples, std::size_t top_k = 50) {
  if (samples.empty()) throw ValidationError("stats: empty dataset");
  DatasetStats st;
  st.n_images = samples.size();
  std::map<std::string, std::size_t> words;
  auto split_name = [](Split s) {
    return s == Split::train ? "train" : s == Split::test ? "test" : "unassigned";
  };
  for (const Sample& s : samples) {
    st.n_boxes += s.boxes.size();
    for (const BBox& b : s.boxes) st.box_counts[b.category] += 1;
    std::size_t len = text::tokenize(s.caption).size();
    st.caption_hist[static_cast<int>(len / 10) * 10] += 1;
    for (const std::string& w : text::tokenize(s.caption)) words[w] += 1;
    auto& sc = st.split_counts[split_name(s.split)];
    sc.first += 1;
    sc.second += s.boxes.size();
  }
  for (std::size_t c = 0; c < kNumCategories; ++c)
    st.proportions[c] =
        st.n_boxes == 0 ? 0.0 : static_cast<double>(st.box_counts[c]) / static_cast<double>(st.n_boxes);
  std::vector<std::pair<std::string, std::size_t>> order(words.begin(), words.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (order.size() > top_k) order.resize(top_k);
  st.top_words = order;
  return st;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation. Every sample gets one primary category, a
// caption from a fixed template, boxes of that category, and a feature
// bundle whose prompt is the normalized caption, so each content word leaves
// its signature in the features.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t n_samples = 8;
  std::array<double, kNumCategories> mix = reference_mix();
  std::uint64_t seed = 0;
  FeatureShape shape;

  void validate() const {
    if (n_samples < 1) throw ValidationError("synthetic spec: need at least one sample");
    double sum = 0.0;
    for (double v : mix) {
      if (v < 0.0) throw ValidationError("synthetic spec: negative mix entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("synthetic spec: mix must sum to 1");
    shape.validate();
  }
};

struct SyntheticDataset {
  std::vector<Sample> samples;
  std::vector<FeatureBundle<float>> bundles;  // parallel to samples
  FeatureShape shape;
};

// Category counts by largest-remainder apportionment: exact quotas at any n.
inline std::array<std::size_t, kNumCategories> apportion(std::size_t n,
                                                         const std::array<double, kNumCategories>& mix) {
  std::array<std::size_t, kNumCategories> counts{};
  std::array<double, kNumCategories> rema{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    double quota = mix[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(quota));
    rema[c] = quota - std::floor(quota);
    assigned += counts[c];
  }
  std::vector<std::size_t> order(kNumCategories);
  for (std::size_t c = 0; c < kNumCategories; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rema[a] > rema[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[order[k % kNumCategories]] += 1;
  return counts;
}

inline SyntheticDataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  static const std::vector<std::string> zones = {"gate 1", "gate 2", "zone a", "zone b",
                                                 "sector 5", "the north lot"};
  static const std::vector<std::string> actions = {"cleanup", "removal", "inspection",
                                                   "dispatch", "notify owner", "barrier check"};
  auto counts = apportion(spec.n_samples, spec.mix);

  // per-sample primary category, then a seeded order shuffle
  std::vector<std::size_t> cats;
  for (std::size_t c = 0; c < kNumCategories; ++c)
    for (std::size_t k = 0; k < counts[c]; ++k) cats.push_back(c);
  Philox order_gen(derive_key(spec.seed, "synthetic-order"));
  order_gen.shuffle(cats);

  SyntheticDataset ds;
  ds.shape = spec.shape;
  std::array<std::size_t, kNumCategories> seen{};  // cycles box counts 1,2,3 per category
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    std::size_t cat = cats[i];
    Philox gen(derive_key(spec.seed, "synthetic-sample", i));
    std::size_t n_boxes = 1 + (seen[cat] % 3);
    seen[cat] += 1;
    const std::string& zone = zones[static_cast<std::size_t>(gen.next_below(zones.size()))];
    const std::string& action = actions[static_cast<std::size_t>(gen.next_below(actions.size()))];

    Sample s;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "syn_%05zu", i);
    s.image_id = idbuf;
    s.image_ref = "synthetic:" + s.image_id;
    s.caption = std::to_string(n_boxes) + " " + category_names()[cat] + " near " + zone + "; recommend " + action;
    for (std::size_t b = 0; b < n_boxes; ++b) {
      auto q = [](double v) { return std::round(v * 10.0) / 10.0; };
      double x0 = q(gen.next_double() * 400.0);
      double y0 = q(gen.next_double() * 400.0);
      double w = q(20.0 + gen.next_double() * 80.0);
      double h = q(20.0 + gen.next_double() * 80.0);
      s.boxes.push_back({x0, y0, x0 + w, y0 + h, cat});
    }
    s.validate();
    GroundingRequest req{s.image_id, text::normalize(s.caption), spec.seed};
    ds.bundles.push_back(generate_features(req, spec.shape));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace govla
