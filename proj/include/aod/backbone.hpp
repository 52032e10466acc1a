#pragma once

#include <deque>

#include "aod/geometry.hpp"
#include "aod/grads.hpp"
#include "aod/ops.hpp"

namespace aod {

// Feature maps for one image, with the pixel stride needed to map boxes into
// feature coordinates. Immutable once built; many ROIs pool from one map.
struct FeatureMap {
  Tensor t;  // (C, FH, FW)
  int stride = 1;
  int image_w = 0;
  int image_h = 0;

  int channels() const { return t.shape[0]; }
  int fh() const { return t.shape[1]; }
  int fw() const { return t.shape[2]; }
};

// conv3x3 -> relu -> maxpool2 -> conv3x3 -> relu -> maxpool2; overall stride 4.
// A small from-scratch stand-in for the pretrained nets the full-scale system
// would use.
struct BackboneParams {
  Parameter conv1_w, conv1_b;
  Parameter conv2_w, conv2_b;

  static constexpr int kStride = 4;
  static constexpr int kMinImage = 4;

  static BackboneParams init(int in_channels, int c1, int c2, Rng& rng) {
    BackboneParams p;
    // He-style init; these layers train from scratch unlike the fc stack.
    const double s1 = std::sqrt(2.0 / (in_channels * 9.0));
    const double s2 = std::sqrt(2.0 / (c1 * 9.0));
    p.conv1_w = Parameter("conv1_w", Tensor::gaussian({c1, in_channels, 3, 3}, s1, rng));
    p.conv1_b = Parameter("conv1_b", Tensor({c1}));
    p.conv2_w = Parameter("conv2_w", Tensor::gaussian({c2, c1, 3, 3}, s2, rng));
    p.conv2_b = Parameter("conv2_b", Tensor({c2}));
    return p;
  }

  std::vector<Parameter*> param_list() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b};
  }
};

// Forward records for one image, kept only when gradients are needed.
struct BackboneTape {
  std::deque<Tensor> acts;
  std::vector<OpRecord> records;
};

inline FeatureMap extract_features(const Tensor& image, const BackboneParams& params,
                                   BackboneTape* tape = nullptr) {
  if (image.shape.size() != 3) throw ShapeError("extract_features: image must be (c,h,w)");
  if (image.shape[1] < BackboneParams::kMinImage ||
      image.shape[2] < BackboneParams::kMinImage) {
    throw ValidationError("extract_features: image smaller than backbone minimum");
  }
  OpAttrs conv_attrs;
  conv_attrs.stride = 1;
  conv_attrs.pad = 1;
  OpAttrs pool_attrs;
  pool_attrs.kernel = 2;
  pool_attrs.stride = 2;

  BackboneTape local;
  BackboneTape& tp = tape ? *tape : local;
  const Tensor* cur = &image;

  auto run = [&](OpKind kind, std::vector<const Tensor*> in, const OpAttrs& attrs) {
    auto [out, rec] = forward(kind, std::move(in), attrs);
    tp.acts.push_back(std::move(out));
    if (tape) tp.records.push_back(std::move(rec));
    cur = &tp.acts.back();
  };

  run(OpKind::conv2d, {cur, &params.conv1_w.value, &params.conv1_b.value}, conv_attrs);
  run(OpKind::relu, {cur}, {});
  run(OpKind::maxpool2d, {cur}, pool_attrs);
  run(OpKind::conv2d, {cur, &params.conv2_w.value, &params.conv2_b.value}, conv_attrs);
  run(OpKind::relu, {cur}, {});
  run(OpKind::maxpool2d, {cur}, pool_attrs);

  FeatureMap fm;
  fm.t = *cur;
  fm.stride = BackboneParams::kStride;
  fm.image_h = image.shape[1];
  fm.image_w = image.shape[2];
  if (!fm.t.all_finite()) throw DivergenceError("extract_features: non-finite feature map");
  return fm;
}

// Replays the recorded backbone ops in reverse, accumulating conv gradients
// into the sink. dfm is the gradient on the feature map, summed over every
// ROI pooled from this image.
inline void backbone_backward(const BackboneTape& tape, const BackboneParams& params,
                              const Tensor& dfm, GradSink& sink) {
  Tensor up = dfm;
  for (auto it = tape.records.rbegin(); it != tape.records.rend(); ++it) {
    std::vector<Tensor> g = backward(*it, up);
    if (it->kind == OpKind::conv2d) {
      const bool first = (it->inputs[1] == &params.conv1_w.value);
      sink.accumulate(first ? params.conv1_w : params.conv2_w, g[1]);
      sink.accumulate(first ? params.conv1_b : params.conv2_b, g[2]);
    }
    up = std::move(g[0]);
  }
}

// Saved pooling state for one ROI: where each output cell's max came from.
struct RoiRecord {
  std::vector<std::int32_t> argmax;  // flat index into the feature map
  std::vector<int> fm_shape;
  int out_numel = 0;
};

// Maps the box into feature cells (floor for start, ceil for end), partitions
// the cell rectangle into the output grid and max-pools each sub-window per
// channel. Sub-windows never go empty: each is forced to span at least one
// cell. Output is (grid_h, grid_w, channels) flattened.
inline std::pair<Tensor, RoiRecord> roi_pool(const FeatureMap& fm, const BoundingBox& box,
                                             int grid_h, int grid_w) {
  require_valid(box, "roi_pool box");
  if (grid_h < 1 || grid_w < 1) throw ValidationError("roi_pool: grid dims must be >= 1");
  const int C = fm.channels(), FH = fm.fh(), FW = fm.fw();
  int fx0 = static_cast<int>(std::floor(box.x0() / fm.stride));
  int fx1 = static_cast<int>(std::ceil(box.x1() / fm.stride));
  int fy0 = static_cast<int>(std::floor(box.y0() / fm.stride));
  int fy1 = static_cast<int>(std::ceil(box.y1() / fm.stride));
  if (fx1 <= 0 || fy1 <= 0 || fx0 >= FW || fy0 >= FH) {
    throw ValidationError("roi_pool: degenerate roi outside the feature map; clip first");
  }
  fx0 = std::max(fx0, 0);
  fy0 = std::max(fy0, 0);
  fx1 = std::min(fx1, FW);
  fy1 = std::min(fy1, FH);
  const int fw = std::max(1, fx1 - fx0);
  const int fh = std::max(1, fy1 - fy0);

  Tensor out({grid_h * grid_w * C});
  RoiRecord rec;
  rec.argmax.resize(out.numel());
  rec.fm_shape = fm.t.shape;
  rec.out_numel = static_cast<int>(out.numel());

  for (int i = 0; i < grid_h; ++i) {
    const int hs = fy0 + std::min(fh - 1, (i * fh) / grid_h);
    const int he = fy0 + std::min(fh, std::max((i * fh) / grid_h + 1,
                                               ((i + 1) * fh + grid_h - 1) / grid_h));
    for (int j = 0; j < grid_w; ++j) {
      const int ws = fx0 + std::min(fw - 1, (j * fw) / grid_w);
      const int we = fx0 + std::min(fw, std::max((j * fw) / grid_w + 1,
                                                 ((j + 1) * fw + grid_w - 1) / grid_w));
      for (int c = 0; c < C; ++c) {
        double best = -1e300;
        std::int32_t arg = -1;
        for (int y = hs; y < he; ++y) {
          for (int x = ws; x < we; ++x) {
            const double val = fm.t.at3(c, y, x);
            if (val > best) {
              best = val;
              arg = static_cast<std::int32_t>((static_cast<std::size_t>(c) * FH + y) * FW + x);
            }
          }
        }
        const std::size_t oi = (static_cast<std::size_t>(i) * grid_w + j) * C + c;
        out[oi] = best;
        rec.argmax[oi] = arg;
      }
    }
  }
  return {std::move(out), std::move(rec)};
}

inline void roi_pool_backward(const RoiRecord& rec, const Tensor& upstream, Tensor& dfm) {
  if (static_cast<int>(upstream.numel()) != rec.out_numel) {
    throw ShapeError("roi_pool_backward: upstream size mismatch");
  }
  if (dfm.shape != rec.fm_shape) throw ShapeError("roi_pool_backward: dfm shape mismatch");
  for (std::size_t i = 0; i < upstream.numel(); ++i) {
    dfm[rec.argmax[i]] += upstream[i];
  }
}

}  // namespace aod
