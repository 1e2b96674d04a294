#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "rsc/geometry.hpp"
#include "rsc/scene_model.hpp"

namespace rsc {

using Rgb = std::array<double, 3>;

enum class ObjectShape { Disk, Square, Bar };

inline std::string to_string(ObjectShape s) {
  switch (s) {
    case ObjectShape::Disk: return "disk";
    case ObjectShape::Square: return "square";
    case ObjectShape::Bar: return "bar";
  }
  return "disk";
}

inline ObjectShape parse_shape(const std::string& s) {
  if (s == "disk") return ObjectShape::Disk;
  if (s == "square") return ObjectShape::Square;
  if (s == "bar") return ObjectShape::Bar;
  throw Error(ErrorKind::InvalidArgument, "object shape '" + s + "' (expected disk, square or bar)");
}

// Half extents of the shape for radius r: disks and squares are 2r across, bars 3.2r × r.
inline std::array<double, 2> half_extent(ObjectShape s, double r) {
  if (s == ObjectShape::Bar) return {1.6 * r, 0.5 * r};
  return {r, r};
}

inline bool covers(ObjectShape s, double dx, double dy, double r) {
  switch (s) {
    case ObjectShape::Disk: return dx * dx + dy * dy <= r * r;
    case ObjectShape::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ObjectShape::Bar: return std::abs(dx) <= 1.6 * r && std::abs(dy) <= 0.5 * r;
  }
  return false;
}

// Pixel (x, y) is covered when its centre lies inside the shape.
inline Mask render_shape_mask(ObjectShape s, double cx, double cy, double r, int h, int w) {
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, covers(s, x + 0.5 - cx, y + 0.5 - cy, r));
  return m;
}

struct DepthParams {
  double wall = 0.1;
  double table_far = 0.3;
  double table_near = 0.6;
  double object_height = 0.3;
};

struct ToySceneSpec {
  int height = 32;
  int width = 32;
  Rgb background{0.78, 0.80, 0.84};
  Rgb table{0.55, 0.42, 0.30};
  int table_top = 12;  // first table row
  ObjectShape shape = ObjectShape::Disk;
  Rgb color{0.85, 0.15, 0.12};
  std::string label = "red disk";
  double radius = 6.0;
  std::array<double, 2> start{9.0, 20.0};  // centre in pixels at frame 0
  std::array<double, 2> end{23.0, 20.0};   // centre at the last frame
  DepthParams depth;
  double noise = 0.01;  // per-pixel uniform jitter amplitude before quantization
  std::string task_text = "pick up the object";
};

inline std::array<double, 2> scene_center(const ToySceneSpec& spec, int frame, int frames) {
  const double u = frames > 1 ? static_cast<double>(frame) / (frames - 1) : 0.0;
  return {spec.start[0] + u * (spec.end[0] - spec.start[0]), spec.start[1] + u * (spec.end[1] - spec.start[1])};
}

inline void require_in_bounds(ObjectShape shape, double cx, double cy, double r, int h, int w) {
  const auto [ex, ey] = half_extent(shape, r);
  require(r > 0 && cx - ex >= 0 && cy - ey >= 0 && cx + ex <= w && cy + ey <= h, ErrorKind::InvalidArgument,
          "object out of bounds at centre (" + std::to_string(cx) + "," + std::to_string(cy) + ")");
}

inline json depth_json(const DepthParams& d, int table_top) {
  return {{"wall", d.wall},
          {"table_top", table_top},
          {"table_far", d.table_far},
          {"table_near", d.table_near},
          {"object_height", d.object_height}};
}

// One rendered frame plus its annotation. `rng` drives the pixel jitter.
struct RenderedFrame {
  Tensor image;
  Mask object_mask;
  json metadata;
};

inline RenderedFrame render_toy_frame(const ToySceneSpec& spec, double cx, double cy, std::mt19937_64& rng) {
  const int h = spec.height, w = spec.width;
  require_in_bounds(spec.shape, cx, cy, spec.radius, h, w);
  RenderedFrame f;
  f.object_mask = render_shape_mask(spec.shape, cx, cy, spec.radius, h, w);
  f.image = Tensor(3, h, w);
  std::uniform_real_distribution<double> jitter(-spec.noise, spec.noise);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool table = y >= spec.table_top;
      // Table shading darkens slightly toward the far edge.
      const double shade = table ? 0.9 + 0.1 * (y - spec.table_top) / std::max(1, h - 1 - spec.table_top) : 1.0;
      for (int c = 0; c < 3; ++c) {
        double v = f.object_mask(y, x) ? spec.color[static_cast<std::size_t>(c)]
                                       : (table ? spec.table[static_cast<std::size_t>(c)] * shade
                                                : spec.background[static_cast<std::size_t>(c)]);
        v += jitter(rng);
        f.image(c, y, x) = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
  const auto pb = bounding_box(f.object_mask);
  require(pb.has_value(), ErrorKind::InvalidArgument, "object covers no pixel");
  json obj = {{"label", spec.label},
              {"shape", to_string(spec.shape)},
              {"center", {cx / w, cy / h}},
              {"radius", spec.radius},
              {"box", to_json(to_normalized(*pb, h, w))},
              {"mask_rle", mask_to_rle(f.object_mask)}};
  f.metadata = {{"objects", json::array({obj})}, {"depth", depth_json(spec.depth, spec.table_top)}};
  return f;
}

// Object moves linearly from start to end. Pixels are quantized to k/255 so a PNG round trip is exact.
inline TrajectoryRecord make_toy_scene(const ToySceneSpec& spec, int frames, std::uint64_t seed) {
  require(frames >= 1, ErrorKind::InvalidArgument, "need at least one frame");
  require(spec.height > 0 && spec.width > 0, ErrorKind::InvalidArgument, "empty scene");
  std::mt19937_64 rng(seed);
  TrajectoryRecord traj;
  traj.task_text = spec.task_text;
  traj.source_id = "toy-" + to_string(spec.shape) + "-" + std::to_string(seed);
  for (int i = 0; i < frames; ++i) {
    const auto [cx, cy] = scene_center(spec, i, frames);
    RenderedFrame r = render_toy_frame(spec, cx, cy, rng);
    FrameRecord f;
    f.index = i;
    f.image = std::move(r.image);
    f.metadata = std::move(r.metadata);
    const double u = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    f.action = {cx / spec.width, cy / spec.height, 0.1 * std::sin(3.0 * u), u < 0.5 ? 0.0 : 1.0};
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

// A product shot: the object centred on a plain light backdrop.
inline Tensor render_prompt_image(ObjectShape shape, const Rgb& color, int size = 32, double radius = 8.0,
                                  const Rgb& backdrop = {0.95, 0.95, 0.95}) {
  const double c = size / 2.0;
  require_in_bounds(shape, c, c, radius, size, size);
  Tensor img(3, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in = covers(shape, x + 0.5 - c, y + 0.5 - c, radius);
      for (int ch = 0; ch < 3; ++ch)
        img(ch, y, x) = std::lround((in ? color : backdrop)[static_cast<std::size_t>(ch)] * 255.0) / 255.0;
    }
  return img;
}

}  // namespace rsc
