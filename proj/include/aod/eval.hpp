#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "aod/aodnet.hpp"
#include "aod/data.hpp"

namespace aod {

struct Detection {
  std::string image_id;
  int class_index = -1;
  double score = 0.0;  // the network's class probability
  BoundingBox box;
};

struct EvalSettings {
  double score_thresh = 0.05;
  double nms_thresh = 0.3;
  double iou_thresh = 0.5;
  bool protocol_11pt = true;  // VOC2007-era 11-point interpolation
};

// Greedy per-class suppression. Order: score descending, ties by smaller box
// area, then input order; survivors kill everything overlapping above the
// threshold.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].box.area() < dets[b].box.area();
  });
  std::vector<Detection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[idx].box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

// Noiseless eval-mode rollout per proposal; every foreground class clearing
// the score threshold emits a detection with its class-specific decoded box,
// then per-class NMS.
inline std::vector<Detection> detect_image(const FeatureMap& fm, const std::string& image_id,
                                           const std::vector<BoundingBox>& proposals,
                                           const AODParams& params,
                                           const EvalSettings& settings) {
  const int K = params.config.K;
  std::vector<std::vector<Detection>> per_class(K);
  for (const BoundingBox& proposal : proposals) {
    const Rollout r =
        forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::eval, /*dropout_seed=*/0);
    for (int c = 0; c < K; ++c) {
      const double score = r.output.class_probs[c];
      if (score < settings.score_thresh) continue;
      Detection d;
      d.image_id = image_id;
      d.class_index = c;
      d.score = score;
      d.box = clip_box(decode_glimpse(r.output.delta_for(c), proposal), fm.image_w,
                       fm.image_h);
      per_class[c].push_back(std::move(d));
    }
  }
  std::vector<Detection> out;
  for (int c = 0; c < K; ++c) {
    for (Detection& d : nms(per_class[c], settings.nms_thresh)) out.push_back(std::move(d));
  }
  return out;
}

struct EvalGt {
  BoundingBox box;
  bool difficult = false;
};

using GtIndex = std::map<std::string, std::vector<EvalGt>>;

// VOC matching for one class: detections by descending score, each matched to
// the highest-IoU unmatched non-difficult gt in its image (TP if IoU clears
// the threshold, FP otherwise). Difficult gts neither count as TP targets nor
// as misses. 11-point AP: mean over recall levels {0, 0.1, ..., 1} of the max
// precision at recall >= r; the all-points variant integrates the exact
// precision envelope instead.
inline double average_precision(const std::vector<Detection>& dets, const GtIndex& gts,
                                double iou_thresh = 0.5, bool protocol_11pt = true) {
  std::size_t n_positive = 0;
  for (const auto& [id, list] : gts) {
    for (const EvalGt& g : list) {
      if (!g.difficult) ++n_positive;
    }
  }

  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::map<std::string, std::vector<bool>> used;
  std::vector<bool> is_tp(order.size(), false);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Detection& d = dets[order[rank]];
    auto it = gts.find(d.image_id);
    if (it == gts.end()) continue;  // stays FP
    const std::vector<EvalGt>& cand = it->second;
    std::vector<bool>& taken = used[d.image_id];
    taken.resize(cand.size(), false);
    double best = -1.0;
    int best_g = -1;
    for (std::size_t g = 0; g < cand.size(); ++g) {
      if (cand[g].difficult || taken[g]) continue;
      const double v = iou(d.box, cand[g].box);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_thresh) {
      is_tp[rank] = true;
      taken[best_g] = true;
    }
  }

  if (n_positive == 0) return 0.0;

  std::vector<double> precision(order.size());
  std::vector<double> recall(order.size());
  int tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (is_tp[rank]) ++tp;
    precision[rank] = static_cast<double>(tp) / static_cast<double>(rank + 1);
    recall[rank] = static_cast<double>(tp) / static_cast<double>(n_positive);
  }

  if (protocol_11pt) {
    double ap = 0.0;
    for (int level = 0; level <= 10; ++level) {
      const double r = level / 10.0;
      double best = 0.0;
      for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (recall[rank] >= r) best = std::max(best, precision[rank]);
      }
      ap += best / 11.0;
    }
    return ap;
  }

  // all-points: sum precision-envelope area over recall increments
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (recall[rank] > prev_recall) {
      double best = 0.0;
      for (std::size_t r2 = rank; r2 < order.size(); ++r2) {
        best = std::max(best, precision[r2]);
      }
      ap += (recall[rank] - prev_recall) * best;
      prev_recall = recall[rank];
    }
  }
  return ap;
}

// Unweighted mean over classes that have ground truth; empty classes are
// excluded (and reported via the skipped list).
inline double mean_ap(const std::vector<double>& per_class_ap,
                      const std::vector<bool>& class_has_gt,
                      std::vector<int>* skipped = nullptr) {
  if (per_class_ap.size() != class_has_gt.size()) {
    throw ContractError("mean_ap: per-class sizes mismatch");
  }
  double sum = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
    if (!class_has_gt[c]) {
      if (skipped) skipped->push_back(static_cast<int>(c));
      continue;
    }
    sum += per_class_ap[c];
    ++counted;
  }
  if (counted == 0) throw ValidationError("mean_ap: no class has ground truth");
  return sum / counted;
}

struct EvalResult {
  std::vector<double> per_class_ap;
  std::vector<bool> class_has_gt;
  double map = 0.0;
  std::string protocol;
  double iou_thresh = 0.5;
};

// Whole-dataset evaluation with the stored proposals.
inline EvalResult evaluate_dataset(const Dataset& ds, AODParams& params,
                                   const EvalSettings& settings) {
  const int K = params.config.K;
  std::vector<std::vector<Detection>> dets_by_class(K);
  std::vector<GtIndex> gts_by_class(K);

  for (const AnnotatedImage& img : ds.images) {
    const FeatureMap fm = extract_features(img.image, params.backbone);
    for (const Detection& d : detect_image(fm, img.id, img.proposals, params, settings)) {
      dets_by_class[d.class_index].push_back(d);
    }
    for (const GtBox& g : img.gts) {
      gts_by_class[g.label][img.id].push_back(EvalGt{g.box, g.difficult});
    }
  }

  EvalResult res;
  res.iou_thresh = settings.iou_thresh;
  res.protocol = settings.protocol_11pt ? "voc2007_11pt" : "all_points";
  res.per_class_ap.resize(K, 0.0);
  res.class_has_gt.resize(K, false);
  for (int c = 0; c < K; ++c) {
    res.class_has_gt[c] = !gts_by_class[c].empty();
    res.per_class_ap[c] = average_precision(dets_by_class[c], gts_by_class[c],
                                            settings.iou_thresh, settings.protocol_11pt);
  }
  res.map = mean_ap(res.per_class_ap, res.class_has_gt);
  return res;
}

inline void save_eval_result(const std::string& json_path, const std::string& csv_path,
                             const EvalResult& res) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < res.per_class_ap.size(); ++c) {
    if (res.class_has_gt[c]) {
      per_class["class_" + std::to_string(c)] = res.per_class_ap[c];
    }
  }
  nlohmann::json root{{"per_class", per_class},
                      {"mAP", res.map},
                      {"protocol", res.protocol},
                      {"iou_thresh", res.iou_thresh}};
  if (!json_path.empty()) {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw ValidationError("save_eval_result: cannot write " + json_path);
    out << root.dump(2) << "\n";
  }
  if (!csv_path.empty()) {
    // classes as columns with mAP last, one value row
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ValidationError("save_eval_result: cannot write " + csv_path);
    for (std::size_t c = 0; c < res.per_class_ap.size(); ++c) {
      if (res.class_has_gt[c]) out << "class_" << c << ",";
    }
    out << "mAP\n";
    char buf[32];
    for (std::size_t c = 0; c < res.per_class_ap.size(); ++c) {
      if (!res.class_has_gt[c]) continue;
      std::snprintf(buf, sizeof(buf), "%.6f,", res.per_class_ap[c]);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.6f\n", res.map);
    out << buf;
  }
}

}  // namespace aod
