#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "rsc/geometry.hpp"
#include "rsc/scene_model.hpp"

namespace rsc {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kChangeThreshold = 0.05;
inline constexpr int kBoundaryBand = 2;

struct ReportOptions {
  int margin = 4;  // extra dilation of the editable region before preserved-region metrics
  double change_threshold = kChangeThreshold;
  int boundary_band = kBoundaryBand;
};

struct FrameFidelity {
  int index = 0;
  double preserved_psnr = 0.0;
  double preserved_mae = 0.0;
  double change_magnitude = 0.0;   // mean |edited − original| over editable pixels
  double boundary_gradient = 0.0;  // band mean |∇edited| − band mean |∇original|
  double placement_iou = 0.0;
  std::vector<std::string> flags;
};

struct FidelityReport {
  std::vector<FrameFidelity> frames;
  double mean_psnr = 0.0, min_psnr = 0.0;
  double mean_mae = 0.0, max_mae = 0.0;
  double mean_change = 0.0;
  double mean_boundary_gradient = 0.0;
  double mean_iou = 0.0, min_iou = 0.0;
};

inline double psnr_from_mse(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

// Region PSNR/MAE over pixels where `region` is set; never reads other pixels.
inline std::pair<double, double> region_psnr_mae(const Tensor& a, const Tensor& b, const Mask& region) {
  require_same_shape(a.shape(), b.shape(), "region metrics");
  require(region.height() == a.height() && region.width() == a.width(), ErrorKind::ShapeMismatch, "region mask");
  double se = 0.0, ae = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (!region(y, x)) continue;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = a(c, y, x) - b(c, y, x);
        se += d * d;
        ae += std::abs(d);
        ++n;
      }
    }
  if (n == 0) return {kPsnrCap, 0.0};
  return {psnr_from_mse(se / n), ae / n};
}

// Pixels whose largest per-channel change exceeds the threshold.
inline Mask change_mask(const Tensor& original, const Tensor& edited, double threshold = kChangeThreshold) {
  require_same_shape(original.shape(), edited.shape(), "change mask");
  Mask m(original.height(), original.width());
  for (int y = 0; y < original.height(); ++y)
    for (int x = 0; x < original.width(); ++x) {
      double d = 0.0;
      for (int c = 0; c < original.channels(); ++c) d = std::max(d, std::abs(edited(c, y, x) - original(c, y, x)));
      m.set(y, x, d > threshold);
    }
  return m;
}

// Largest 4-connected component (first in raster order on ties).
inline Mask largest_component(const Mask& m) {
  const int h = m.height(), w = m.width();
  std::vector<int> label(m.size(), -1);
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!m[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
    std::size_t size = 0;
    std::queue<int> q;
    q.push(start);
    label[static_cast<std::size_t>(start)] = next;
    while (!q.empty()) {
      const int p = q.front();
      q.pop();
      ++size;
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const auto k = static_cast<std::size_t>(n[0] * w + n[1]);
        if (m[k] && label[k] < 0) {
          label[k] = next;
          q.push(static_cast<int>(k));
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }
  Mask out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out.set(i, best >= 0 && label[i] == best);
  return out;
}

inline Mask change_support(const Tensor& original, const Tensor& edited, double threshold = kChangeThreshold) {
  return largest_component(change_mask(original, edited, threshold));
}

// Luminance gradient magnitude with forward differences (zero on the last row/column).
inline std::vector<double> gradient_magnitude(const Tensor& img) {
  const int h = img.height(), w = img.width();
  auto lum = [&](int y, int x) { return (img(0, y, x) + img(1, y, x) + img(2, y, x)) / 3.0; };
  std::vector<double> g(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = x + 1 < w ? lum(y, x + 1) - lum(y, x) : 0.0;
      const double gy = y + 1 < h ? lum(y + 1, x) - lum(y, x) : 0.0;
      g[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  return g;
}

// Pixels within `band` of the editable/preserved contour, on either side.
inline Mask contour_band(const Mask& editable, int band) {
  const Mask outer = dilate(editable, band);
  const Mask inner = dilate(editable.inverted(), band);
  Mask out(editable.height(), editable.width());
  for (std::size_t i = 0; i < out.size(); ++i) out.set(i, outer[i] && inner[i]);
  return out;
}

// `layout`: 1 = preserve, 0 = editable. `box`: requested placement, if any.
inline FrameFidelity frame_fidelity(const Tensor& original, const Tensor& edited, const Mask& layout,
                                    const std::optional<NormalizedBox>& box, const ReportOptions& options = {}) {
  require_same_shape(original.shape(), edited.shape(), "fidelity frames");
  require(layout.height() == original.height() && layout.width() == original.width(),
          ErrorKind::InconsistentGeometry, "layout mask size");
  FrameFidelity f;
  const Mask editable = layout.inverted();
  const Mask preserved = dilate(editable, options.margin).inverted();
  if (preserved.none()) f.flags.push_back("empty_preserved_region");
  std::tie(f.preserved_psnr, f.preserved_mae) = region_psnr_mae(original, edited, preserved);

  double change = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < original.height(); ++y)
    for (int x = 0; x < original.width(); ++x)
      if (editable(y, x))
        for (int c = 0; c < original.channels(); ++c, ++n) change += std::abs(edited(c, y, x) - original(c, y, x));
  f.change_magnitude = n ? change / n : 0.0;

  const Mask band = contour_band(editable, options.boundary_band);
  if (!editable.none() && !band.none()) {
    const auto ge = gradient_magnitude(edited), go = gradient_magnitude(original);
    double se = 0.0, so = 0.0;
    for (std::size_t i = 0; i < band.size(); ++i)
      if (band[i]) {
        se += ge[i];
        so += go[i];
      }
    f.boundary_gradient = (se - so) / static_cast<double>(band.count());
  }

  const Mask support = change_support(original, edited, options.change_threshold);
  if (support.none()) {
    f.flags.push_back("no_change_support");
  } else if (!box) {
    f.flags.push_back("no_requested_box");
  } else {
    f.placement_iou = iou(support, box_mask(to_pixels(*box, original.height(), original.width()),
                                            original.height(), original.width()));
  }
  return f;
}

inline FidelityReport fidelity_report(const TrajectoryRecord& original, const TrajectoryRecord& edited,
                                      const std::vector<Mask>& layouts,
                                      const std::vector<std::optional<NormalizedBox>>& boxes,
                                      const ReportOptions& options = {}) {
  require(original.size() == edited.size() && layouts.size() == original.size() &&
              (boxes.empty() || boxes.size() == original.size()),
          ErrorKind::InconsistentGeometry,
          "frame counts differ: " + std::to_string(original.size()) + " original, " + std::to_string(edited.size()) +
              " edited, " + std::to_string(layouts.size()) + " masks");
  FidelityReport r;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const auto& a = original.frames[i];
    const auto& b = edited.frames[i];
    require(a.image.shape() == b.image.shape(), ErrorKind::InconsistentGeometry,
            "frame " + std::to_string(a.index) + " size differs");
    FrameFidelity f = frame_fidelity(a.image, b.image, layouts[i], boxes.empty() ? std::nullopt : boxes[i], options);
    f.index = a.index;
    r.frames.push_back(std::move(f));
  }
  if (r.frames.empty()) return r;
  const double n = static_cast<double>(r.frames.size());
  r.min_psnr = r.min_iou = std::numeric_limits<double>::infinity();
  for (const auto& f : r.frames) {
    r.mean_psnr += f.preserved_psnr / n;
    r.min_psnr = std::min(r.min_psnr, f.preserved_psnr);
    r.mean_mae += f.preserved_mae / n;
    r.max_mae = std::max(r.max_mae, f.preserved_mae);
    r.mean_change += f.change_magnitude / n;
    r.mean_boundary_gradient += f.boundary_gradient / n;
    r.mean_iou += f.placement_iou / n;
    r.min_iou = std::min(r.min_iou, f.placement_iou);
  }
  return r;
}

inline json to_json(const FidelityReport& r) {
  json frames = json::array();
  for (const auto& f : r.frames)
    frames.push_back({{"index", f.index},
                      {"preserved_psnr", f.preserved_psnr},
                      {"preserved_mae", f.preserved_mae},
                      {"change_magnitude", f.change_magnitude},
                      {"boundary_gradient", f.boundary_gradient},
                      {"placement_iou", f.placement_iou},
                      {"flags", f.flags}});
  return {{"frames", frames},
          {"aggregate",
           {{"mean_psnr", r.mean_psnr},
            {"min_psnr", r.min_psnr},
            {"mean_mae", r.mean_mae},
            {"max_mae", r.max_mae},
            {"mean_change", r.mean_change},
            {"mean_boundary_gradient", r.mean_boundary_gradient},
            {"mean_iou", r.mean_iou},
            {"min_iou", r.min_iou}}}};
}

// Compositing oracle: fills the box with a flat colour.
inline Tensor paste_box(Tensor image, const NormalizedBox& box, const std::array<double, 3>& color) {
  const PixelBox p = to_pixels(box, image.height(), image.width());
  for (int c = 0; c < 3; ++c)
    for (int y = p.y0; y < p.y1; ++y)
      for (int x = p.x0; x < p.x1; ++x) image(c, y, x) = color[static_cast<std::size_t>(c)];
  return image;
}

// Rows of equal-size images laid out left to right with a 2-px dark gutter.
inline Tensor image_grid(const std::vector<std::vector<Tensor>>& rows, int gutter = 2) {
  require(!rows.empty() && !rows.front().empty(), ErrorKind::InvalidArgument, "empty grid");
  const int h = rows.front().front().height(), w = rows.front().front().width();
  std::size_t cols = 0;
  for (const auto& row : rows) cols = std::max(cols, row.size());
  const int H = static_cast<int>(rows.size()) * (h + gutter) + gutter;
  const int W = static_cast<int>(cols) * (w + gutter) + gutter;
  Tensor grid(3, H, W, 0.1);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Tensor& img = rows[r][c];
      require(img.channels() == 3 && img.height() == h && img.width() == w, ErrorKind::ShapeMismatch,
              "grid cells must share one size");
      const int oy = gutter + static_cast<int>(r) * (h + gutter), ox = gutter + static_cast<int>(c) * (w + gutter);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) grid(ch, oy + y, ox + x) = img(ch, y, x);
    }
  return grid;
}

}  // namespace rsc
