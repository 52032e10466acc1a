#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "aod/aodnet.hpp"
#include "aod/util.hpp"

namespace aod {

constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json aod_config_to_json(const AODConfig& c) {
  return nlohmann::json{{"T", c.T},
                        {"K", c.K},
                        {"fc6_dim", c.fc6_dim},
                        {"fc7_dim", c.fc7_dim},
                        {"glimpse_embed_dim", c.glimpse_embed_dim},
                        {"roi_grid", {c.roi_grid_h, c.roi_grid_w}},
                        {"stacked_rnn", c.stacked_rnn},
                        {"eltwise_max", c.eltwise_max},
                        {"glimpse_dof", c.glimpse_dof},
                        {"image_channels", c.image_channels},
                        {"backbone_c1", c.backbone_c1},
                        {"backbone_c2", c.backbone_c2},
                        {"dropout_rate", c.dropout_rate}};
}

inline AODConfig aod_config_from_json(const nlohmann::json& j) {
  AODConfig c;
  c.T = j.at("T").get<int>();
  c.K = j.at("K").get<int>();
  c.fc6_dim = j.at("fc6_dim").get<int>();
  c.fc7_dim = j.at("fc7_dim").get<int>();
  c.glimpse_embed_dim = j.at("glimpse_embed_dim").get<int>();
  c.roi_grid_h = j.at("roi_grid").at(0).get<int>();
  c.roi_grid_w = j.at("roi_grid").at(1).get<int>();
  c.stacked_rnn = j.at("stacked_rnn").get<bool>();
  c.eltwise_max = j.at("eltwise_max").get<bool>();
  c.glimpse_dof = j.at("glimpse_dof").get<int>();
  c.image_channels = j.at("image_channels").get<int>();
  c.backbone_c1 = j.at("backbone_c1").get<int>();
  c.backbone_c2 = j.at("backbone_c2").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.validate();
  return c;
}

struct TrainProgress {
  int iteration = 0;
  double ema_state = 0.0;
};

// Parameter values (and momentum buffers) as raw little-endian doubles in
// base64, so save/load round-trips bit-exactly.
inline void save_checkpoint(const std::string& path, const AODParams& params,
                            const TrainProgress* progress = nullptr) {
  nlohmann::json root;
  root["format_version"] = kCheckpointFormatVersion;
  root["net_config"] = aod_config_to_json(params.config);
  nlohmann::json jp = nlohmann::json::array();
  for (const Parameter* p : params.param_list()) {
    jp.push_back({{"name", p->name},
                  {"shape", p->value.shape},
                  {"values_b64", base64_of_doubles(p->value.v)},
                  {"velocity_b64", base64_of_doubles(p->velocity.v)}});
  }
  root["params"] = std::move(jp);
  if (progress) {
    root["progress"] = {{"iteration", progress->iteration}, {"ema_state", progress->ema_state}};
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("save_checkpoint: cannot write " + path);
  out << root.dump();
  out << "\n";
}

inline AODParams load_checkpoint(const std::string& path, TrainProgress* progress = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_checkpoint: cannot read " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_checkpoint: malformed JSON: ") + e.what());
  }
  if (!root.contains("format_version") ||
      root["format_version"].get<int>() != kCheckpointFormatVersion) {
    throw SchemaVersionError("load_checkpoint: unsupported format_version");
  }
  AODParams params = init_params(aod_config_from_json(root.at("net_config")), 0);
  std::vector<Parameter*> list = params.param_list();
  const nlohmann::json& jp = root.at("params");
  if (jp.size() != list.size()) {
    throw ParseError("load_checkpoint: parameter count mismatch");
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    const nlohmann::json& entry = jp.at(i);
    if (entry.at("name").get<std::string>() != list[i]->name) {
      throw ParseError("load_checkpoint: unexpected parameter order, found '" +
                       entry.at("name").get<std::string>() + "' expected '" + list[i]->name +
                       "'");
    }
    if (entry.at("shape").get<std::vector<int>>() != list[i]->value.shape) {
      throw ParseError("load_checkpoint: shape mismatch for " + list[i]->name);
    }
    std::vector<double> values = doubles_of_base64(entry.at("values_b64").get<std::string>());
    std::vector<double> velocity = doubles_of_base64(entry.at("velocity_b64").get<std::string>());
    if (values.size() != list[i]->value.numel() || velocity.size() != values.size()) {
      throw ParseError("load_checkpoint: payload size mismatch for " + list[i]->name);
    }
    list[i]->value.v = std::move(values);
    list[i]->velocity.v = std::move(velocity);
    list[i]->grad.fill(0.0);
  }
  if (progress) {
    if (root.contains("progress")) {
      progress->iteration = root["progress"].at("iteration").get<int>();
      progress->ema_state = root["progress"].at("ema_state").get<double>();
    } else {
      *progress = TrainProgress{};
    }
  }
  return params;
}

}  // namespace aod
