#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "aod/eval.hpp"
#include "aod/trainer.hpp"

namespace aod {

// One configuration cell of the design-choice matrix. reference_map carries
// the VOC 2007 / CaffeNet mAP reported for the corresponding full-scale
// variant, shown for direction only and never asserted against desk results.
struct AblateCell {
  std::string axis;
  std::string variant;
  TrainConfig config;
  double reference_map = 0.0;
  bool has_reference = false;
};

inline std::vector<AblateCell> ablation_matrix(const TrainConfig& base,
                                               const std::vector<std::string>& axes) {
  auto wanted = [&](const std::string& axis) {
    if (axes.empty()) return true;
    return std::find(axes.begin(), axes.end(), axis) != axes.end();
  };
  std::vector<AblateCell> cells;
  auto add = [&](const std::string& axis, const std::string& variant, TrainConfig cfg,
                 double ref) {
    cells.push_back(AblateCell{axis, variant, std::move(cfg), ref, true});
  };

  if (wanted("episodes")) {
    const int counts[4] = {2, 4, 8, 16};
    const double refs[4] = {57.4, 57.5, 58.1, 57.8};
    for (int i = 0; i < 4; ++i) {
      TrainConfig c = base;
      c.rl.n_episodes = counts[i];
      add("episodes", std::to_string(counts[i]), c, refs[i]);
    }
  }
  if (wanted("architecture")) {
    struct Variant {
      bool stacked, max;
      const char* name;
      double ref;
    };
    const Variant variants[4] = {{true, true, "stacked+max", 58.1},
                                 {false, true, "plain+max", 57.4},
                                 {true, false, "stacked+no-max", 57.0},
                                 {false, false, "plain+no-max", 57.2}};
    for (const Variant& v : variants) {
      TrainConfig c = base;
      c.net.stacked_rnn = v.stacked;
      c.net.eltwise_max = v.max;
      add("architecture", v.name, c, v.ref);
    }
  }
  if (wanted("baseline")) {
    TrainConfig a = base;
    a.rl.baseline_kind = BaselineKind::return_norm;
    add("baseline", "return-norm", a, 58.1);
    TrainConfig b = base;
    b.rl.baseline_kind = BaselineKind::moving_average;
    add("baseline", "ema", b, 57.8);
  }
  if (wanted("reward")) {
    TrainConfig a = base;
    a.rl.reward_kind = RewardKind::continuous;
    add("reward", "continuous", a, 58.1);
    TrainConfig b = base;
    b.rl.reward_kind = RewardKind::discrete;
    add("reward", "discrete", b, 57.8);
  }
  if (wanted("background")) {
    TrainConfig a = base;
    a.rl.include_background = false;
    add("background", "excluded", a, 58.1);
    TrainConfig b = base;
    b.rl.include_background = true;
    add("background", "included", b, 57.6);
  }
  if (wanted("glimpse-dof")) {
    TrainConfig a = base;
    a.net.glimpse_dof = 4;
    add("glimpse-dof", "4", a, 58.1);
    TrainConfig b = base;
    b.net.glimpse_dof = 2;
    add("glimpse-dof", "2", b, 57.3);
  }
  return cells;
}

struct AblateRow {
  std::string axis;
  std::string variant;
  double median_map = 0.0;
  std::vector<double> per_seed_map;
  double reference_map = 0.0;
  bool has_reference = false;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Trains every cell over the given seeds and reports median test mAP. Desk
// results are reported, never asserted against the reference column.
inline std::vector<AblateRow> run_ablation(const Dataset& train_ds, const Dataset& test_ds,
                                           const std::vector<AblateCell>& cells,
                                           const std::vector<std::uint64_t>& seeds,
                                           const EvalSettings& eval_settings,
                                           std::ostream* log = nullptr) {
  std::vector<AblateRow> rows;
  for (const AblateCell& cell : cells) {
    AblateRow row;
    row.axis = cell.axis;
    row.variant = cell.variant;
    row.reference_map = cell.reference_map;
    row.has_reference = cell.has_reference;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = cell.config;
      cfg.seed = seed;
      TrainResult res = train(train_ds, cfg);
      const EvalResult ev = evaluate_dataset(test_ds, res.params, eval_settings);
      row.per_seed_map.push_back(ev.map);
      if (log) {
        *log << "[ablate] " << cell.axis << "/" << cell.variant << " seed " << seed
             << " mAP " << ev.map << "\n";
      }
    }
    row.median_map = median_of(row.per_seed_map);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblateRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("write_ablation_csv: cannot write " + path);
  out << "axis,variant,median_map,seeds,reference_voc07_caffenet\n";
  for (const AblateRow& r : rows) {
    out << r.axis << "," << r.variant << "," << r.median_map << "," << r.per_seed_map.size()
        << ",";
    if (r.has_reference) out << r.reference_map;
    out << "\n";
  }
}

inline void write_ablation_markdown(const std::string& path,
                                    const std::vector<AblateRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("write_ablation_markdown: cannot write " + path);
  out << "| axis | variant | median mAP (desk) | reference mAP (VOC07/CaffeNet) |\n";
  out << "|---|---|---|---|\n";
  char buf[64];
  for (const AblateRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f", r.median_map);
    out << "| " << r.axis << " | " << r.variant << " | " << buf << " | ";
    if (r.has_reference) {
      std::snprintf(buf, sizeof(buf), "%.1f", r.reference_map);
      out << buf;
    } else {
      out << "-";
    }
    out << " |\n";
  }
}

}  // namespace aod
