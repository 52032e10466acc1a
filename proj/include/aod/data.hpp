#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aod/geometry.hpp"
#include "aod/reinforce.hpp"
#include "aod/tensor.hpp"
#include "aod/util.hpp"

namespace aod {

struct GtBox {
  BoundingBox box;
  int label = 0;
  bool difficult = false;
};

struct AnnotatedImage {
  std::string id;
  Tensor image;  // (C,H,W), values in [0,1] quantized to 1/255 steps
  std::vector<GtBox> gts;
  std::vector<BoundingBox> proposals;
};

// Synthetic detection scenes: K silhouette classes on a noisy cluttered
// background. With context_cue, two class pairs share identical silhouettes
// and differ only by a small bright marker placed outside the box, so telling
// pair members apart requires looking beyond the object itself.
struct SceneConfig {
  int image_size = 48;
  int K = 5;
  int channels = 1;  // grayscale at desk scale; 3 replicates intensity
  int min_objects = 1;
  int max_objects = 2;
  double min_scale = 16.0;  // >= 4 backbone strides so ROI pooling sees a cell
  double max_scale = 26.0;
  double clutter_density = 1.0;
  bool context_cue = false;
  double noise_level = 0.02;
  std::uint64_t seed = 1;
  int jitters_per_gt = 12;
  int random_proposals = 8;

  void validate() const {
    if (image_size < 16) throw ValidationError("SceneConfig.image_size must be >= 16");
    if (K < 1 || K > 5) throw ValidationError("SceneConfig.K must be in 1..5");
    if (channels != 1 && channels != 3) {
      throw ValidationError("SceneConfig.channels must be 1 or 3");
    }
    if (min_objects < 1 || max_objects < min_objects) {
      throw ValidationError("SceneConfig: bad objects_per_image range");
    }
    if (min_scale < 16.0) {
      throw ValidationError("SceneConfig.min_scale must be >= 16 (4 backbone strides)");
    }
    if (max_scale < min_scale || max_scale > image_size - 4) {
      throw ValidationError("SceneConfig: bad scale range");
    }
    if (clutter_density < 0.0 || noise_level < 0.0) {
      throw ValidationError("SceneConfig: clutter/noise must be >= 0");
    }
  }

  bool operator==(const SceneConfig&) const = default;
};

struct Dataset {
  SceneConfig scene_config;
  std::vector<AnnotatedImage> images;
};

// Marker bookkeeping for tests and fixture inspection.
struct SceneDebug {
  struct Marker {
    int gt_index = -1;
    double mx = 0.0, my = 0.0;
  };
  std::vector<Marker> markers;
};

namespace detail {

enum class Silhouette { square, disc, triangle, ring, cross };

// With the context cue on, classes {0,1} are both squares and {2,3} both
// discs; only the marker side tells them apart. The marker axis/side per pair
// member: 0 above, 1 below, 2 left, 3 right.
inline Silhouette silhouette_for(int label, bool context_cue) {
  if (context_cue) {
    switch (label) {
      case 0:
      case 1:
        return Silhouette::square;
      case 2:
      case 3:
        return Silhouette::disc;
      default:
        return Silhouette::cross;
    }
  }
  switch (label) {
    case 0:
      return Silhouette::square;
    case 1:
      return Silhouette::disc;
    case 2:
      return Silhouette::triangle;
    case 3:
      return Silhouette::ring;
    default:
      return Silhouette::cross;
  }
}

inline bool confusable(int label, bool context_cue) { return context_cue && label < 4; }

inline bool inside_silhouette(Silhouette s, const BoundingBox& b, double px, double py) {
  if (px < b.x0() || px > b.x1() || py < b.y0() || py > b.y1()) return false;
  const double nx = (px - b.cx) / (0.5 * b.w);
  const double ny = (py - b.cy) / (0.5 * b.h);
  switch (s) {
    case Silhouette::square:
      return true;
    case Silhouette::disc:
      return nx * nx + ny * ny <= 1.0;
    case Silhouette::triangle:
      // apex at the top edge center
      return std::abs(nx) <= (ny + 1.0) * 0.5;
    case Silhouette::ring: {
      const double r2 = nx * nx + ny * ny;
      return r2 <= 1.0 && r2 >= 0.30;
    }
    case Silhouette::cross:
      return std::abs(nx) <= 0.34 || std::abs(ny) <= 0.34;
  }
  return false;
}

inline void paint_silhouette(Tensor& img, Silhouette s, const BoundingBox& b, double value) {
  const int H = img.shape[1], W = img.shape[2];
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x0())));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y0())));
  const int x1 = std::min(W, static_cast<int>(std::ceil(b.x1())));
  const int y1 = std::min(H, static_cast<int>(std::ceil(b.y1())));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (inside_silhouette(s, b, x + 0.5, y + 0.5)) img.at3(0, y, x) = value;
    }
  }
}

inline void paint_marker(Tensor& img, double mx, double my, double value) {
  const int H = img.shape[1], W = img.shape[2];
  const int cx = static_cast<int>(std::floor(mx));
  const int cy = static_cast<int>(std::floor(my));
  // 3x3 plus sign
  static const int offs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (const auto& o : offs) {
    const int x = cx + o[0], y = cy + o[1];
    if (x >= 0 && x < W && y >= 0 && y < H) img.at3(0, y, x) = value;
  }
}

}  // namespace detail

// Deterministic in (config.seed, index). Placement retries are bounded;
// objects that cannot be placed are skipped rather than looping forever.
inline AnnotatedImage generate_scene(const SceneConfig& config, int index,
                                     SceneDebug* debug = nullptr) {
  config.validate();
  Rng rng = Rng::stream(config.seed, 0x5ce, static_cast<std::uint64_t>(index));
  const int S = config.image_size;

  AnnotatedImage out;
  out.id = "synth_" + std::to_string(index);
  out.image = Tensor({1, S, S});
  out.image.fill(0.08);

  const int want =
      config.min_objects + static_cast<int>(rng.below(config.max_objects - config.min_objects + 1));

  struct Placed {
    BoundingBox box;
    int label;
    double mx, my;
    bool has_marker;
  };
  std::vector<Placed> placed;

  for (int obj = 0; obj < want; ++obj) {
    const int label = static_cast<int>(rng.below(config.K));
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      const double w = std::floor(rng.uniform(config.min_scale, config.max_scale + 1.0));
      const double h = std::floor(rng.uniform(config.min_scale, config.max_scale + 1.0));
      const double x0 = std::floor(rng.uniform(1.0, S - w - 1.0));
      const double y0 = std::floor(rng.uniform(1.0, S - h - 1.0));
      BoundingBox box = BoundingBox::from_corners(x0, y0, x0 + w, y0 + h);

      double mx = 0.0, my = 0.0;
      bool has_marker = false;
      if (detail::confusable(label, config.context_cue)) {
        // marker center sits along one axis, between ~1.05 and ~1.35 of the
        // box extent away from its center: outside the box, outside the
        // receptive-field spill of in-box features, within 1.5x the extent
        const double along = (label == 0 || label == 1) ? h : w;
        const double dist = rng.uniform(1.05, 1.35) * along;
        const int side = label % 2;  // 0: above/left, 1: below/right
        if (label <= 1) {
          mx = box.cx + rng.uniform(-0.25, 0.25) * w;
          my = box.cy + (side == 0 ? -dist : dist);
        } else {
          mx = box.cx + (side == 0 ? -dist : dist);
          my = box.cy + rng.uniform(-0.25, 0.25) * h;
        }
        if (mx < 2.0 || mx > S - 2.0 || my < 2.0 || my > S - 2.0) continue;
        has_marker = true;
      }

      bool overlaps = false;
      for (const Placed& p : placed) {
        if (iou(box, p.box) > 0.1) overlaps = true;
      }
      if (overlaps) continue;

      placed.push_back(Placed{box, label, mx, my, has_marker});
      ok = true;
    }
  }

  // ensure at least one object so the image is usable for training
  if (placed.empty()) {
    const double w = config.min_scale;
    BoundingBox box{S * 0.5, S * 0.5, w, w};
    placed.push_back(Placed{box, static_cast<int>(rng.below(config.K)), 0, 0, false});
  }

  for (const Placed& p : placed) {
    const double intensity = rng.uniform(0.55, 0.95);
    detail::paint_silhouette(out.image, detail::silhouette_for(p.label, config.context_cue),
                             p.box, intensity);
    if (p.has_marker) {
      detail::paint_marker(out.image, p.mx, p.my, rng.uniform(0.9, 1.0));
      if (debug) {
        debug->markers.push_back(
            SceneDebug::Marker{static_cast<int>(&p - placed.data()), p.mx, p.my});
      }
    }
    out.gts.push_back(GtBox{p.box, p.label, false});
  }

  // dim clutter specks, kept away from objects and markers
  const int n_clutter = static_cast<int>(std::lround(config.clutter_density * 8.0));
  for (int i = 0; i < n_clutter; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double size = rng.uniform(2.0, 4.0);
      const double cx = rng.uniform(2.0, S - 2.0);
      const double cy = rng.uniform(2.0, S - 2.0);
      BoundingBox speck{cx, cy, size, size};
      bool clear = true;
      for (const Placed& p : placed) {
        if (iou(speck, p.box) > 0.0) clear = false;
        if (p.has_marker && std::abs(cx - p.mx) < 4.0 && std::abs(cy - p.my) < 4.0) {
          clear = false;
        }
      }
      if (!clear) continue;
      detail::paint_silhouette(out.image, detail::Silhouette::disc, speck,
                               rng.uniform(0.15, 0.45));
      break;
    }
  }

  if (config.noise_level > 0.0) {
    for (double& v : out.image.v) v += rng.normal(0.0, config.noise_level);
  }
  for (double& v : out.image.v) {
    v = std::clamp(v, 0.0, 1.0);
    v = std::round(v * 255.0) / 255.0;  // 8-bit quantization; exact JSON round-trip
  }
  if (config.channels == 3) {
    Tensor rgb({3, S, S});
    for (int c = 0; c < 3; ++c) {
      std::copy(out.image.v.begin(), out.image.v.end(),
                rgb.v.begin() + static_cast<std::size_t>(c) * S * S);
    }
    out.image = std::move(rgb);
  }
  return out;
}

// Stand-in proposal generator: jittered copies of each ground-truth box at
// several magnitudes (spanning IoU from near 1 down past the background
// threshold) plus uniform random boxes.
inline std::vector<BoundingBox> generate_proposals(const std::vector<GtBox>& gts,
                                                   const SceneConfig& config,
                                                   std::uint64_t seed) {
  if (gts.empty()) throw ValidationError("generate_proposals: need at least one gt");
  Rng rng(seed);
  const double S = config.image_size;
  std::vector<BoundingBox> out;
  static const double magnitudes[4] = {0.06, 0.15, 0.3, 0.45};
  const int per_mag = std::max(1, (config.jitters_per_gt - 1) / 4);
  for (const GtBox& gt : gts) {
    out.push_back(gt.box);  // magnitude-0 copy: IoU 1 by construction
    for (double m : magnitudes) {
      for (int j = 0; j < per_mag; ++j) {
        GlimpseDelta d{rng.normal(0.0, m), rng.normal(0.0, m), rng.normal(0.0, m),
                       rng.normal(0.0, m)};
        out.push_back(clip_box(decode_glimpse(d, gt.box), S, S));
      }
    }
  }
  for (int i = 0; i < config.random_proposals; ++i) {
    const double w = rng.uniform(8.0, 0.8 * S);
    const double h = rng.uniform(8.0, 0.8 * S);
    const double cx = rng.uniform(0.5 * w, S - 0.5 * w);
    const double cy = rng.uniform(0.5 * h, S - 0.5 * h);
    out.push_back(BoundingBox{cx, cy, w, h});
  }
  return out;
}

inline Dataset generate_dataset(const SceneConfig& config, int count) {
  Dataset ds;
  ds.scene_config = config;
  ds.images.reserve(count);
  for (int i = 0; i < count; ++i) {
    AnnotatedImage img = generate_scene(config, i);
    img.proposals =
        generate_proposals(img.gts, config, derive_seed(config.seed, 0x9e0, i));
    ds.images.push_back(std::move(img));
  }
  return ds;
}

inline nlohmann::json scene_config_to_json(const SceneConfig& c) {
  return nlohmann::json{{"image_size", c.image_size},
                        {"K", c.K},
                        {"channels", c.channels},
                        {"objects_per_image", {c.min_objects, c.max_objects}},
                        {"scale_range", {c.min_scale, c.max_scale}},
                        {"clutter_density", c.clutter_density},
                        {"context_cue", c.context_cue},
                        {"noise_level", c.noise_level},
                        {"seed", c.seed},
                        {"jitters_per_gt", c.jitters_per_gt},
                        {"random_proposals", c.random_proposals}};
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.K = j.at("K").get<int>();
  if (j.contains("channels")) c.channels = j.at("channels").get<int>();
  c.min_objects = j.at("objects_per_image").at(0).get<int>();
  c.max_objects = j.at("objects_per_image").at(1).get<int>();
  c.min_scale = j.at("scale_range").at(0).get<double>();
  c.max_scale = j.at("scale_range").at(1).get<double>();
  c.clutter_density = j.at("clutter_density").get<double>();
  c.context_cue = j.at("context_cue").get<bool>();
  c.noise_level = j.at("noise_level").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.jitters_per_gt = j.at("jitters_per_gt").get<int>();
  c.random_proposals = j.at("random_proposals").get<int>();
  return c;
}

constexpr int kDatasetSchemaVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
  nlohmann::json root;
  root["schema_version"] = kDatasetSchemaVersion;
  root["scene_config"] = scene_config_to_json(ds.scene_config);
  nlohmann::json images = nlohmann::json::array();
  for (const AnnotatedImage& img : ds.images) {
    std::vector<std::uint8_t> bytes(img.image.numel());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(std::lround(img.image[i] * 255.0));
    }
    nlohmann::json gts = nlohmann::json::array();
    for (const GtBox& g : img.gts) {
      gts.push_back({{"cx", g.box.cx},
                     {"cy", g.box.cy},
                     {"w", g.box.w},
                     {"h", g.box.h},
                     {"label", g.label}});
    }
    nlohmann::json props = nlohmann::json::array();
    for (const BoundingBox& p : img.proposals) {
      props.push_back({{"cx", p.cx}, {"cy", p.cy}, {"w", p.w}, {"h", p.h}});
    }
    images.push_back({{"id", img.id},
                      {"shape", img.image.shape},
                      {"pixels_b64", base64_encode(bytes.data(), bytes.size())},
                      {"gts", std::move(gts)},
                      {"proposals", std::move(props)}});
  }
  root["images"] = std::move(images);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("save_dataset: cannot write " + path);
  out << root.dump();
  out << "\n";
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_dataset: cannot read " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_dataset: malformed JSON: ") + e.what());
  }
  if (!root.contains("schema_version") ||
      root["schema_version"].get<int>() != kDatasetSchemaVersion) {
    throw SchemaVersionError("load_dataset: unsupported schema_version");
  }
  Dataset ds;
  ds.scene_config = scene_config_from_json(root.at("scene_config"));
  for (const nlohmann::json& jm : root.at("images")) {
    AnnotatedImage img;
    img.id = jm.at("id").get<std::string>();
    const std::vector<int> shape = jm.at("shape").get<std::vector<int>>();
    const std::vector<std::uint8_t> bytes = base64_decode(jm.at("pixels_b64").get<std::string>());
    img.image = Tensor(shape);
    if (bytes.size() != img.image.numel()) {
      throw ParseError("load_dataset: pixel payload does not match shape");
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) img.image[i] = bytes[i] / 255.0;
    for (const nlohmann::json& jg : jm.at("gts")) {
      GtBox g;
      g.box = BoundingBox{jg.at("cx").get<double>(), jg.at("cy").get<double>(),
                          jg.at("w").get<double>(), jg.at("h").get<double>()};
      g.label = jg.at("label").get<int>();
      if (g.label < 0 || g.label >= ds.scene_config.K) {
        throw ParseError("load_dataset: gt label out of range");
      }
      if (!g.box.valid() || g.box.x0() < 0.0 || g.box.y0() < 0.0 ||
          g.box.x1() > shape[2] || g.box.y1() > shape[1]) {
        throw ParseError("load_dataset: gt box outside image bounds");
      }
      img.gts.push_back(g);
    }
    for (const nlohmann::json& jp : jm.at("proposals")) {
      img.proposals.push_back(BoundingBox{jp.at("cx").get<double>(), jp.at("cy").get<double>(),
                                          jp.at("w").get<double>(), jp.at("h").get<double>()});
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace aod
