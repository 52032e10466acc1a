#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "aod/checkpoint.hpp"
#include "aod/trainer.hpp"

namespace aod {

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config: bad value for field '") + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json rl_config_to_json(const RLConfig& c) {
  return nlohmann::json{
      {"n_episodes", c.n_episodes},
      {"sigma", c.sigma},
      {"return_scale", c.return_scale},
      {"reward_kind", c.reward_kind == RewardKind::continuous ? "continuous" : "discrete"},
      {"baseline_kind",
       c.baseline_kind == BaselineKind::return_norm ? "return_norm" : "moving_average"},
      {"ema_decay", c.ema_decay},
      {"include_background", c.include_background},
      {"discrete_iou_thresh", c.discrete_iou_thresh}};
}

inline RLConfig rl_config_from_json(const nlohmann::json& j) {
  RLConfig c;
  c.n_episodes = detail::get_or(j, "n_episodes", c.n_episodes);
  c.sigma = detail::get_or(j, "sigma", c.sigma);
  c.return_scale = detail::get_or(j, "return_scale", c.return_scale);
  const std::string reward =
      detail::get_or<std::string>(j, "reward_kind", "continuous");
  if (reward == "continuous") {
    c.reward_kind = RewardKind::continuous;
  } else if (reward == "discrete") {
    c.reward_kind = RewardKind::discrete;
  } else {
    throw ValidationError("config: RLConfig.reward_kind must be continuous|discrete");
  }
  const std::string baseline =
      detail::get_or<std::string>(j, "baseline_kind", "return_norm");
  if (baseline == "return_norm" || baseline == "return-norm") {
    c.baseline_kind = BaselineKind::return_norm;
  } else if (baseline == "moving_average" || baseline == "ema") {
    c.baseline_kind = BaselineKind::moving_average;
  } else {
    throw ValidationError(
        "config: RLConfig.baseline_kind must be return_norm|moving_average");
  }
  c.ema_decay = detail::get_or(j, "ema_decay", c.ema_decay);
  c.include_background = detail::get_or(j, "include_background", c.include_background);
  c.discrete_iou_thresh = detail::get_or(j, "discrete_iou_thresh", c.discrete_iou_thresh);
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j{{"images_per_batch", c.images_per_batch},
                   {"fg_per_image", c.fg_per_image},
                   {"bg_per_image", c.bg_per_image},
                   {"lr", c.lr},
                   {"momentum", c.momentum},
                   {"iterations", c.iterations},
                   {"lr_schedule",
                    {{"decay_factor", c.lr_schedule.decay_factor},
                     {"decay_at_fraction", c.lr_schedule.decay_at_fraction}}},
                   {"seed", c.seed},
                   {"checkpoint_every", c.checkpoint_every},
                   {"threads", c.threads},
                   {"RLConfig", rl_config_to_json(c.rl)},
                   {"AODConfig", aod_config_to_json(c.net)}};
  if (c.grad_clip) {
    j["grad_clip"] = *c.grad_clip;
  } else {
    j["grad_clip"] = nullptr;
  }
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.images_per_batch = detail::get_or(j, "images_per_batch", c.images_per_batch);
  c.fg_per_image = detail::get_or(j, "fg_per_image", c.fg_per_image);
  c.bg_per_image = detail::get_or(j, "bg_per_image", c.bg_per_image);
  c.lr = detail::get_or(j, "lr", c.lr);
  c.momentum = detail::get_or(j, "momentum", c.momentum);
  if (j.contains("grad_clip")) {
    if (j.at("grad_clip").is_null()) {
      c.grad_clip = std::nullopt;
    } else {
      c.grad_clip = j.at("grad_clip").get<double>();
    }
  }
  c.iterations = detail::get_or(j, "iterations", c.iterations);
  if (j.contains("lr_schedule")) {
    const nlohmann::json& s = j.at("lr_schedule");
    c.lr_schedule.decay_factor =
        detail::get_or(s, "decay_factor", c.lr_schedule.decay_factor);
    c.lr_schedule.decay_at_fraction =
        detail::get_or(s, "decay_at_fraction", c.lr_schedule.decay_at_fraction);
  }
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.checkpoint_every = detail::get_or(j, "checkpoint_every", c.checkpoint_every);
  c.threads = detail::get_or(j, "threads", c.threads);
  if (j.contains("RLConfig")) c.rl = rl_config_from_json(j.at("RLConfig"));
  if (j.contains("AODConfig")) {
    // partial AODConfig blocks are filled from defaults
    nlohmann::json merged = aod_config_to_json(c.net);
    merged.update(j.at("AODConfig"));
    c.net = aod_config_from_json(merged);
  }
  c.validate();
  return c;
}

// Fields whose defaults are artifact decisions rather than values the original
// system pinned; --print-config surfaces them.
inline std::vector<std::string> spec_default_fields() {
  return {"lr",
          "momentum",
          "grad_clip",
          "iterations",
          "lr_schedule",
          "checkpoint_every",
          "threads",
          "AODConfig.K",
          "AODConfig.fc6_dim",
          "AODConfig.fc7_dim",
          "AODConfig.roi_grid",
          "AODConfig.image_channels",
          "AODConfig.backbone_c1",
          "AODConfig.backbone_c2",
          "AODConfig.dropout_rate",
          "RLConfig.ema_decay",
          "RLConfig.discrete_iou_thresh"};
}

inline nlohmann::json resolved_train_config(const TrainConfig& c) {
  nlohmann::json j = train_config_to_json(c);
  j["_spec_default_fields"] = spec_default_fields();
  return j;
}

}  // namespace aod
