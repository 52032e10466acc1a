#pragma once

#include <algorithm>
#include <cmath>

#include "aod/common.hpp"

namespace aod {

// Axis-aligned box in continuous pixel coordinates, stored center/width/height.
// Corner form is derived on demand; rounding to integer pixels happens only at
// ROI pooling.
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return BoundingBox{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }

  bool valid() const {
    return w > 0.0 && h > 0.0 && is_finite(cx) && is_finite(cy) &&
           is_finite(w) && is_finite(h);
  }

  bool operator==(const BoundingBox&) const = default;
};

// Scale-invariant 4-dof shift against an anchor box: normalized center shift
// plus log-space width/height ratios.
struct GlimpseDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  bool finite() const {
    return is_finite(dx) && is_finite(dy) && is_finite(dw) && is_finite(dh);
  }

  bool operator==(const GlimpseDelta&) const = default;
};

inline void require_valid(const BoundingBox& b, const char* what) {
  if (!b.valid()) {
    throw InvalidBoxError(std::string(what) + ": box must have positive finite extent");
  }
}

inline GlimpseDelta encode_glimpse(const BoundingBox& box, const BoundingBox& anchor) {
  require_valid(box, "encode_glimpse box");
  require_valid(anchor, "encode_glimpse anchor");
  return GlimpseDelta{(box.cx - anchor.cx) / anchor.w, (box.cy - anchor.cy) / anchor.h,
                      std::log(box.w / anchor.w), std::log(box.h / anchor.h)};
}

inline BoundingBox decode_glimpse(const GlimpseDelta& delta, const BoundingBox& anchor) {
  require_valid(anchor, "decode_glimpse anchor");
  return BoundingBox{anchor.cx + delta.dx * anchor.w, anchor.cy + delta.dy * anchor.h,
                     anchor.w * std::exp(delta.dw), anchor.h * std::exp(delta.dh)};
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  require_valid(a, "iou a");
  require_valid(b, "iou b");
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

// Intersect with the [0,width]x[0,height] image extent. An empty intersection
// collapses to a 1x1 box at the nearest in-bounds location so that feature
// extraction from a wandering glimpse never aborts. An in-bounds box is
// returned unchanged, and the result is re-verified so repeated clipping is a
// fixed point despite center-form rounding.
inline BoundingBox clip_box(const BoundingBox& box, double width, double height) {
  if (width <= 0.0 || height <= 0.0) {
    throw ValidationError("clip_box: image extent must be positive");
  }
  BoundingBox cur = box;
  for (int pass = 0; pass < 4; ++pass) {
    const double x0 = cur.x0(), y0 = cur.y0(), x1 = cur.x1(), y1 = cur.y1();
    if (x0 >= 0.0 && y0 >= 0.0 && x1 <= width && y1 <= height && cur.w > 0.0 &&
        cur.h > 0.0) {
      return cur;
    }
    const double cx0 = std::max(x0, 0.0);
    const double cy0 = std::max(y0, 0.0);
    const double cx1 = std::min(x1, width);
    const double cy1 = std::min(y1, height);
    if (cx1 - cx0 < 1e-12 || cy1 - cy0 < 1e-12) {
      const double cx = std::clamp(cur.cx, std::min(0.5, 0.5 * width),
                                   std::max(width - 0.5, 0.5 * width));
      const double cy = std::clamp(cur.cy, std::min(0.5, 0.5 * height),
                                   std::max(height - 0.5, 0.5 * height));
      cur = BoundingBox{cx, cy, 1.0, 1.0};
    } else {
      cur = BoundingBox::from_corners(cx0, cy0, cx1, cy1);
    }
  }
  return cur;
}

}  // namespace aod
