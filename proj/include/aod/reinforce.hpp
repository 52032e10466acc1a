#pragma once

#include <vector>

#include "aod/aodnet.hpp"
#include "aod/geometry.hpp"

namespace aod {

enum class RewardKind { continuous, discrete };
enum class BaselineKind { return_norm, moving_average };

struct RLConfig {
  int n_episodes = 8;
  double sigma = 0.2;            // std of the Gaussian action perturbation
  double return_scale = 0.1;     // balances the return against the supervised losses
  RewardKind reward_kind = RewardKind::continuous;
  BaselineKind baseline_kind = BaselineKind::return_norm;
  double ema_decay = 0.9;
  bool include_background = false;
  double discrete_iou_thresh = 0.5;

  void validate() const {
    if (n_episodes < 1) throw ValidationError("RLConfig.n_episodes must be >= 1");
    if (sigma <= 0.0) throw ValidationError("RLConfig.sigma must be positive");
    if (return_scale < 0.0) throw ValidationError("RLConfig.return_scale must be >= 0");
    if (ema_decay <= 0.0 || ema_decay >= 1.0) {
      throw ValidationError("RLConfig.ema_decay must be in (0, 1)");
    }
  }

  bool operator==(const RLConfig&) const = default;
};

// One noisy rollout of the glimpse policy. The noise list is exactly
// a_t - mu_t at every step, so the score-function term needs no recomputation.
struct Episode {
  int sample_index = -1;
  std::vector<GlimpseDelta> noise;
  Rollout rollout;
  double raw_return = 0.0;
  double normalized_return = 0.0;
};

// Final-step reward of the continuous kind: predicted probability of the true
// class times the IoU of that class's regressed box with the ground truth.
// Earlier steps pay zero, so this is also the episode return.
inline double compute_reward(const NetworkOutput& output, int true_class,
                             const BoundingBox& gt_box, const BoundingBox& proposal) {
  if (true_class < 0 || true_class >= static_cast<int>(output.bbox_deltas.size())) {
    throw ContractError("compute_reward: true_class must be a foreground index");
  }
  require_valid(gt_box, "compute_reward gt");
  const BoundingBox predicted = decode_glimpse(output.delta_for(true_class), proposal);
  return output.class_probs[true_class] * iou(predicted, gt_box);
}

// 0/1 variant: top-scoring class must be the label and the regressed box must
// clear the evaluation IoU threshold.
inline double compute_discrete_reward(const NetworkOutput& output, int true_class,
                                      const BoundingBox& gt_box, const BoundingBox& proposal,
                                      double iou_thresh) {
  if (true_class < 0 || true_class >= static_cast<int>(output.bbox_deltas.size())) {
    throw ContractError("compute_discrete_reward: true_class must be a foreground index");
  }
  require_valid(gt_box, "compute_discrete_reward gt");
  int argmax = 0;
  for (std::size_t i = 1; i < output.class_probs.numel(); ++i) {
    if (output.class_probs[i] > output.class_probs[argmax]) argmax = static_cast<int>(i);
  }
  if (argmax != true_class) return 0.0;
  const BoundingBox predicted = decode_glimpse(output.delta_for(true_class), proposal);
  return iou(predicted, gt_box) >= iou_thresh ? 1.0 : 0.0;
}

// Standardizes the returns of all episodes generated from one sample to mean 0
// and (population) variance 1. A degenerate set carries no preference signal
// and maps to all zeros.
inline std::vector<double> normalize_returns(const std::vector<double>& returns) {
  if (returns.empty()) throw ValidationError("normalize_returns: empty return list");
  const double n = static_cast<double>(returns.size());
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= n;
  std::vector<double> out(returns.size(), 0.0);
  if (var < 1e-12) return out;
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < returns.size(); ++i) out[i] = (returns[i] - mean) * inv_std;
  return out;
}

struct EmaUpdate {
  double new_state = 0.0;
  double centered_return = 0.0;
};

// Exponential-moving-average baseline: center against the previous state,
// then fold the new return in.
inline EmaUpdate ema_baseline_update(double state, double new_return, double decay) {
  if (decay <= 0.0 || decay >= 1.0) {
    throw ValidationError("ema_baseline_update: decay must be in (0, 1)");
  }
  EmaUpdate u;
  u.centered_return = new_return - state;
  u.new_state = decay * state + (1.0 - decay) * new_return;
  return u;
}

// Score-function gradients on the action means: for episode i and step t,
//   g_t = scale * R_i * (a_t - mu_t) / sigma^2 / n.
// This is an ascent direction; backpropagating it through mu_t = W x_t
// produces the weight-space estimator with the x_t outer product. Returns
// must already be baseline-adjusted.
inline std::vector<std::vector<GlimpseDelta>> policy_gradient_core(
    const std::vector<double>& adjusted_returns,
    const std::vector<std::vector<GlimpseDelta>>& noises, double sigma,
    double return_scale) {
  if (adjusted_returns.size() != noises.size()) {
    throw ContractError("policy_gradient: returns/noises length mismatch");
  }
  if (sigma <= 0.0) throw ValidationError("policy_gradient: sigma must be positive");
  const double n = static_cast<double>(adjusted_returns.size());
  const double inv = return_scale / (sigma * sigma) / n;
  std::vector<std::vector<GlimpseDelta>> grads(noises.size());
  for (std::size_t i = 0; i < noises.size(); ++i) {
    const double w = adjusted_returns[i] * inv;
    grads[i].reserve(noises[i].size());
    for (const GlimpseDelta& d : noises[i]) {
      grads[i].push_back(GlimpseDelta{w * d.dx, w * d.dy, w * d.dw, w * d.dh});
    }
  }
  return grads;
}

inline std::vector<std::vector<GlimpseDelta>> policy_gradient(
    const std::vector<Episode>& episodes, double sigma, double return_scale) {
  std::vector<double> returns;
  std::vector<std::vector<GlimpseDelta>> noises;
  returns.reserve(episodes.size());
  noises.reserve(episodes.size());
  for (const Episode& e : episodes) {
    returns.push_back(e.normalized_return);
    noises.push_back(e.noise);
  }
  return policy_gradient_core(returns, noises, sigma, return_scale);
}

// Per-component i.i.d. Gaussian glimpse noise; the scale components stay zero
// for the 2-dof variant so a_t - mu_t bookkeeping remains exact.
inline std::vector<GlimpseDelta> sample_glimpse_noise(Rng& rng, int steps, double sigma,
                                                      int glimpse_dof) {
  std::vector<GlimpseDelta> noise(steps);
  for (GlimpseDelta& d : noise) {
    d.dx = rng.normal(0.0, sigma);
    d.dy = rng.normal(0.0, sigma);
    if (glimpse_dof == 4) {
      d.dw = rng.normal(0.0, sigma);
      d.dh = rng.normal(0.0, sigma);
    }
  }
  return noise;
}

}  // namespace aod
