#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace agddad {

// Dense channel-major (c, h, w) image holding doubles. Pixel values are
// normalized to [-1, 1] everywhere in the pipeline; masks and anomaly maps
// reuse the same container with their own ranges.
struct Image {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Image() = default;
  Image(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  static Image zeros_like(const Image& o) { return Image(o.c, o.h, o.w); }

  size_t size() const { return v.size(); }
  bool same_shape(const Image& o) const { return c == o.c && h == o.h && w == o.w; }

  double& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  double at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

  std::string shape_str() const {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline void require_same_shape(const Image& a, const Image& b, const char* where) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

inline bool all_finite(const Image& a) {
  for (double x : a.v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double mean(const Image& a) {
  double s = 0.0;
  for (double x : a.v) s += x;
  return a.v.empty() ? 0.0 : s / static_cast<double>(a.v.size());
}

// y = a + s * b
inline Image axpy(const Image& a, double s, const Image& b) {
  require_same_shape(a, b, "axpy");
  Image out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += s * b.v[i];
  return out;
}

inline Image scaled(const Image& a, double s) {
  Image out = a;
  for (double& x : out.v) x *= s;
  return out;
}

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return s / static_cast<double>(a.v.size());
}

inline double max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace agddad
