#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aod/aodnet.hpp"

namespace aod {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Legend: white proposal, blue/yellow glimpse steps (cycling), red final
// localization.
inline Rgb box_color_for_step(int glimpse_step) {
  static const Rgb cycle[2] = {Rgb{40, 90, 255}, Rgb{250, 220, 40}};
  return cycle[glimpse_step % 2];
}

inline constexpr Rgb kProposalColor{255, 255, 255};
inline constexpr Rgb kFinalColor{235, 30, 30};

struct OverlayBox {
  BoundingBox box;
  Rgb color;
  std::string label;
};

namespace detail {

inline void draw_box_outline(std::vector<Rgb>& pix, int W, int H, const BoundingBox& b,
                             Rgb color) {
  const int x0 = std::clamp(static_cast<int>(std::lround(b.x0())), 0, W - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(b.x1())) - 1, 0, W - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(b.y0())), 0, H - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(b.y1())) - 1, 0, H - 1);
  for (int x = x0; x <= x1; ++x) {
    pix[y0 * W + x] = color;
    pix[y1 * W + x] = color;
  }
  for (int y = y0; y <= y1; ++y) {
    pix[y * W + x0] = color;
    pix[y * W + x1] = color;
  }
}

inline char hex_digit(int v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

inline std::string hex_color(Rgb c) {
  std::string s = "#......";
  s[1] = hex_digit(c.r >> 4);
  s[2] = hex_digit(c.r & 15);
  s[3] = hex_digit(c.g >> 4);
  s[4] = hex_digit(c.g & 15);
  s[5] = hex_digit(c.b >> 4);
  s[6] = hex_digit(c.b & 15);
  return s;
}

}  // namespace detail

// Binary P6 with the grayscale image and box overlays burned in.
inline void write_ppm(const std::string& path, const Tensor& image,
                      const std::vector<OverlayBox>& boxes) {
  const int H = image.shape[1], W = image.shape[2];
  std::vector<Rgb> pix(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(image.at3(0, y, x) * 255.0));
      pix[y * W + x] = Rgb{v, v, v};
    }
  }
  for (const OverlayBox& ob : boxes) detail::draw_box_outline(pix, W, H, ob.box, ob.color);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("write_ppm: cannot write " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size() * 3));
}

// SVG with run-length pixel rects under stroked box outlines; viewable at any
// zoom without an image codec.
inline void write_svg(const std::string& path, const Tensor& image,
                      const std::vector<OverlayBox>& boxes) {
  const int H = image.shape[1], W = image.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("write_svg: cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
      << "\" width=\"" << W * 8 << "\" height=\"" << H * 8 << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"#000\"/>\n";
  for (int y = 0; y < H; ++y) {
    int x = 0;
    while (x < W) {
      const double v = image.at3(0, y, x);
      int run = 1;
      while (x + run < W && image.at3(0, y, x + run) == v) ++run;
      const int g = static_cast<int>(std::lround(v * 255.0));
      if (g > 0) {
        const Rgb c{static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(g),
                    static_cast<std::uint8_t>(g)};
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << run
            << "\" height=\"1\" fill=\"" << detail::hex_color(c) << "\"/>\n";
      }
      x += run;
    }
  }
  for (const OverlayBox& ob : boxes) {
    out << "<rect x=\"" << ob.box.x0() << "\" y=\"" << ob.box.y0() << "\" width=\""
        << ob.box.w << "\" height=\"" << ob.box.h << "\" fill=\"none\" stroke=\""
        << detail::hex_color(ob.color) << "\" stroke-width=\"0.5\"";
    if (!ob.label.empty()) out << " data-label=\"" << ob.label << "\"";
    out << "/>\n";
  }
  out << "</svg>\n";
}

// Overlay set for one rollout: proposal (white), each subsequent glimpse box
// (blue, yellow, cycling), the predicted top foreground class's regressed box
// (red).
inline std::vector<OverlayBox> rollout_overlays(const Rollout& r, const BoundingBox& proposal,
                                                int image_w, int image_h) {
  std::vector<OverlayBox> boxes;
  boxes.push_back(OverlayBox{proposal, kProposalColor, "proposal"});
  for (std::size_t t = 1; t < r.states.size(); ++t) {
    boxes.push_back(OverlayBox{clip_box(r.states[t].glimpse_box, image_w, image_h),
                               box_color_for_step(static_cast<int>(t - 1)),
                               "glimpse_" + std::to_string(t)});
  }
  int best = 0;
  const int K = static_cast<int>(r.output.bbox_deltas.size());
  for (int c = 1; c < K; ++c) {
    if (r.output.class_probs[c] > r.output.class_probs[best]) best = c;
  }
  boxes.push_back(OverlayBox{
      clip_box(decode_glimpse(r.output.delta_for(best), proposal), image_w, image_h),
      kFinalColor, "final_class_" + std::to_string(best)});
  return boxes;
}

}  // namespace aod
