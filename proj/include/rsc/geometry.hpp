#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "rsc/error.hpp"
#include "rsc/tensor.hpp"

namespace rsc {

// Axis-aligned box in normalized [0,1] image coordinates.
struct NormalizedBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool valid() const { return x0 < x1 && y0 < y1; }
  bool inside_unit() const { return x0 >= 0 && y0 >= 0 && x1 <= 1 && y1 <= 1; }
  bool operator==(const NormalizedBox&) const = default;

  std::string str() const {
    return "(" + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) + "," +
           std::to_string(y1) + ")";
  }
};

// Half-open pixel rectangle [x0,x1) × [y0,y1).
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  int area() const { return empty() ? 0 : (x1 - x0) * (y1 - y0); }
  bool operator==(const PixelBox&) const = default;
};

inline void validate_box(const NormalizedBox& b) {
  require(std::isfinite(b.x0) && std::isfinite(b.y0) && std::isfinite(b.x1) && std::isfinite(b.y1),
          ErrorKind::InvalidArgument, "non-finite box " + b.str());
  require(b.valid(), ErrorKind::InvalidArgument, "degenerate box " + b.str());
  require(b.inside_unit(), ErrorKind::InvalidArgument, "box outside [0,1]^2 " + b.str());
}

// Pixels whose extent overlaps the box; never empty for a valid box.
inline PixelBox to_pixels(const NormalizedBox& b, int height, int width) {
  PixelBox p;
  p.x0 = std::clamp(static_cast<int>(std::floor(b.x0 * width + 1e-9)), 0, width - 1);
  p.y0 = std::clamp(static_cast<int>(std::floor(b.y0 * height + 1e-9)), 0, height - 1);
  p.x1 = std::clamp(static_cast<int>(std::ceil(b.x1 * width - 1e-9)), p.x0 + 1, width);
  p.y1 = std::clamp(static_cast<int>(std::ceil(b.y1 * height - 1e-9)), p.y0 + 1, height);
  return p;
}

inline NormalizedBox to_normalized(const PixelBox& p, int height, int width) {
  return {static_cast<double>(p.x0) / width, static_cast<double>(p.y0) / height,
          static_cast<double>(p.x1) / width, static_cast<double>(p.y1) / height};
}

inline Mask box_mask(const PixelBox& p, int height, int width) {
  Mask m(height, width);
  for (int y = std::max(0, p.y0); y < std::min(height, p.y1); ++y)
    for (int x = std::max(0, p.x0); x < std::min(width, p.x1); ++x) m.set(y, x, true);
  return m;
}

inline std::optional<PixelBox> bounding_box(const Mask& m) {
  PixelBox p{m.width(), m.height(), 0, 0};
  bool any = false;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(y, x)) {
        any = true;
        p.x0 = std::min(p.x0, x);
        p.y0 = std::min(p.y0, y);
        p.x1 = std::max(p.x1, x + 1);
        p.y1 = std::max(p.y1, y + 1);
      }
  if (!any) return std::nullopt;
  return p;
}

}  // namespace rsc
