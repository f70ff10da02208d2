#pragma once

#include "govla/dataset.hpp"
#include "govla/metrics.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace govla {

// A human annotation that failed cross-verification against the detector.
struct VerificationFlag {
  enum class Reason { low_iou, unmatched };

  std::string image_id;
  BBox human_box;
  double best_iou = 0.0;
  std::optional<Detection> matched_pred;
  Reason reason = Reason::unmatched;
};

inline std::string reason_name(VerificationFlag::Reason r) {
  return r == VerificationFlag::Reason::low_iou ? "low_iou" : "unmatched";
}

// Flags every human box whose best same-category, same-image prediction
// overlaps below the threshold; boxes without any candidate prediction are
// flagged as unmatched. Output ordered by (image_id, best_iou ascending).
inline std::vector<VerificationFlag> cross_verify(const std::vector<Sample>& human,
                                                  const std::vector<Detection>& preds,
                                                  double threshold = 0.5) {
  if (!(threshold > 0.0) || threshold > 1.0)
    throw ValidationError("cross_verify: threshold must lie in (0,1]");
  for (const Sample& s : human) s.validate();
  for (const Detection& d : preds) d.validate();

  std::vector<VerificationFlag> flags;
  for (const Sample& s : human) {
    for (const BBox& hb : s.boxes) {
      double best = 0.0;
      const Detection* best_pred = nullptr;
      bool any_candidate = false;
      for (const Detection& d : preds) {
        if (d.image_id != s.image_id || d.bbox.category != hb.category) continue;
        any_candidate = true;
        double v = iou(hb, d.bbox);
        if (best_pred == nullptr || v > best) {
          best = v;
          best_pred = &d;
        }
      }
      if (best < threshold) {
        VerificationFlag f;
        f.image_id = s.image_id;
        f.human_box = hb;
        f.best_iou = any_candidate ? best : 0.0;
        if (any_candidate) f.matched_pred = *best_pred;
        f.reason = any_candidate ? VerificationFlag::Reason::low_iou : VerificationFlag::Reason::unmatched;
        flags.push_back(std::move(f));
      }
    }
  }
  std::stable_sort(flags.begin(), flags.end(), [](const VerificationFlag& a, const VerificationFlag& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.best_iou < b.best_iou;
  });
  return flags;
}

// ---------------------------------------------------------------------------
// Structured prompt rendering.
// ---------------------------------------------------------------------------

struct StructuredPrompt {
  std::string text;
  std::string scene_header;
  std::vector<std::string> box_lines;
  std::string regulations;
  std::string instruction;
};

namespace detail {

inline std::string fmt_coord(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace detail

// Deterministic prompt with one coordinate line per box in raster order
// (top to bottom, then left to right), the regulations excerpt verbatim,
// and a fixed instruction tail.
inline StructuredPrompt build_structured_prompt(const Sample& sample, const std::string& regulations,
                                                const std::string& template_id = "v1") {
  if (template_id != "v1")
    throw ValidationError("build_structured_prompt: unknown template \"" + template_id + "\"");
  sample.validate();
  if (sample.boxes.empty())
    throw ValidationError("build_structured_prompt: sample " + sample.image_id + " has no boxes");

  std::vector<std::size_t> order(sample.boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const BBox& ba = sample.boxes[a];
    const BBox& bb = sample.boxes[b];
    if (ba.y_min != bb.y_min) return ba.y_min < bb.y_min;
    return ba.x_min < bb.x_min;
  });

  StructuredPrompt p;
  std::ostringstream header;
  header << "[template v1] Scene: image " << sample.image_id << " (" << sample.width << "x" << sample.height
         << "), " << sample.boxes.size() << " annotated target" << (sample.boxes.size() == 1 ? "" : "s")
         << ".";
  p.scene_header = header.str();
  for (std::size_t i : order) {
    const BBox& b = sample.boxes[i];
    std::ostringstream line;
    line << "- " << category_names()[b.category] << " @ [" << detail::fmt_coord(b.x_min) << ", "
         << detail::fmt_coord(b.y_min) << ", " << detail::fmt_coord(b.x_max) << ", "
         << detail::fmt_coord(b.y_max) << "]";
    p.box_lines.push_back(line.str());
  }
  p.regulations = regulations;
  p.instruction =
      "Write an objective scene description covering every listed target, then give "
      "management recommendations consistent with the regulations above.";

  std::ostringstream text;
  text << p.scene_header << "\nTargets:\n";
  for (const std::string& line : p.box_lines) text << line << '\n';
  text << "Regulations:\n" << p.regulations << "\nInstruction: " << p.instruction << '\n';
  p.text = text.str();
  return p;
}

// ---------------------------------------------------------------------------
// Review queue serialization.
// ---------------------------------------------------------------------------

inline ordered_json flag_to_json(const VerificationFlag& f) {
  ordered_json j;
  j["image_id"] = f.image_id;
  j["human_box"] = {f.human_box.x_min, f.human_box.y_min, f.human_box.x_max, f.human_box.y_max};
  j["category"] = category_names()[f.human_box.category];
  j["best_iou"] = f.best_iou;
  j["reason"] = reason_name(f.reason);
  if (f.matched_pred)
    j["matched_pred"] = detection_to_json(*f.matched_pred);
  else
    j["matched_pred"] = nullptr;
  return j;
}

inline VerificationFlag flag_from_json(const ordered_json& j) {
  VerificationFlag f;
  f.image_id = j.at("image_id").get<std::string>();
  const auto& hb = j.at("human_box");
  if (!hb.is_array() || hb.size() != 4) throw ValidationError("verification flag: human_box must have 4 entries");
  f.human_box.x_min = hb[0].get<double>();
  f.human_box.y_min = hb[1].get<double>();
  f.human_box.x_max = hb[2].get<double>();
  f.human_box.y_max = hb[3].get<double>();
  std::string cat = j.at("category").get<std::string>();
  auto idx = category_index(cat);
  if (!idx) throw ValidationError("verification flag: unknown category \"" + cat + "\"");
  f.human_box.category = *idx;
  f.best_iou = j.at("best_iou").get<double>();
  std::string reason = j.at("reason").get<std::string>();
  if (reason == "low_iou")
    f.reason = VerificationFlag::Reason::low_iou;
  else if (reason == "unmatched")
    f.reason = VerificationFlag::Reason::unmatched;
  else
    throw ValidationError("verification flag: unknown reason \"" + reason + "\"");
  if (j.contains("matched_pred") && !j.at("matched_pred").is_null())
    f.matched_pred = detection_from_json(j.at("matched_pred"));
  return f;
}

inline std::string review_queue_to_jsonl(const std::vector<VerificationFlag>& flags) {
  std::string out;
  for (const VerificationFlag& f : flags) {
    out += flag_to_json(f).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<VerificationFlag> review_queue_from_jsonl(const std::string& content) {
  std::vector<VerificationFlag> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    if (line.empty()) continue;
    try {
      out.push_back(flag_from_json(ordered_json::parse(line)));
    } catch (const ordered_json::exception& e) {
      throw ValidationError("review queue line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("review queue line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void export_review_queue(const std::vector<VerificationFlag>& flags, const std::string& path) {
  write_file(path, review_queue_to_jsonl(flags));
}

inline std::vector<VerificationFlag> load_review_queue(const std::string& path) {
  return review_queue_from_jsonl(read_file(path));
}

}  // namespace govla
