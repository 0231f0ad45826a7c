#pragma once

#include "agddad/core/image.hpp"

namespace agddad {

// Bilinear resample with half-pixel centers (align_corners = false).
inline Image resize_bilinear(const Image& src, int oh, int ow) {
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
  if (oh == src.h && ow == src.w) return src;
  Image dst(src.c, oh, ow);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int ci = 0; ci < src.c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, src.h - 1);
      const double wy = fy - y0;
      for (int x = 0; x < ow; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, src.w - 1);
        const double wx = fx - x0;
        const double a = src.at(ci, y0, x0) * (1 - wx) + src.at(ci, y0, x1) * wx;
        const double b = src.at(ci, y1, x0) * (1 - wx) + src.at(ci, y1, x1) * wx;
        dst.at(ci, y, x) = a * (1 - wy) + b * wy;
      }
    }
  }
  return dst;
}

inline Image crop(const Image& src, int top, int left, int ch, int cw) {
  if (top < 0 || left < 0 || ch <= 0 || cw <= 0 || top + ch > src.h || left + cw > src.w) {
    throw std::invalid_argument("crop: region outside image");
  }
  Image dst(src.c, ch, cw);
  for (int ci = 0; ci < src.c; ++ci) {
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) dst.at(ci, y, x) = src.at(ci, top + y, left + x);
    }
  }
  return dst;
}

inline Image hflip(const Image& src) {
  Image dst(src.c, src.h, src.w);
  for (int ci = 0; ci < src.c; ++ci) {
    for (int y = 0; y < src.h; ++y) {
      for (int x = 0; x < src.w; ++x) dst.at(ci, y, x) = src.at(ci, y, src.w - 1 - x);
    }
  }
  return dst;
}

}  // namespace agddad
