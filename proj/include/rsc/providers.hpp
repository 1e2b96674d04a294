#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rsc/conditions.hpp"
#include "rsc/geometry.hpp"
#include "rsc/hash.hpp"
#include "rsc/scene_model.hpp"

namespace rsc {

struct Detection {
  NormalizedBox box;
  double score = 0.0;
};

// The five perception callables the condition generator consumes.
struct ProviderSuite {
  std::string name;
  bool deterministic = true;
  bool exclusive = false;  // calls must be serialized
  int token_width = 32;

  std::function<std::vector<Detection>(const FrameRecord&, const std::string&)> grounding;
  std::function<Mask(const FrameRecord&, const PixelBox&)> segmentation;  // 1 = object
  std::function<Tensor(const FrameRecord&)> depth;                        // 1×H×W
  std::function<Tokens(const Tensor&)> image_embed;                       // n_v × d
  std::function<Tokens(const std::string&)> text_embed;                   // n_t × d

  void validate() const {
    require(grounding && segmentation && depth && image_embed && text_embed, ErrorKind::InvalidArgument,
            "provider suite '" + name + "' is incomplete");
  }
};

// Wraps every callable of an exclusive suite behind one mutex.
inline ProviderSuite serialized(ProviderSuite suite) {
  if (!suite.exclusive) return suite;
  auto mutex = std::make_shared<std::mutex>();
  auto wrap = [mutex](auto fn) {
    return [mutex, fn](const auto&... args) {
      std::lock_guard lock(*mutex);
      return fn(args...);
    };
  };
  suite.grounding = wrap(suite.grounding);
  suite.segmentation = wrap(suite.segmentation);
  suite.depth = wrap(suite.depth);
  suite.image_embed = wrap(suite.image_embed);
  suite.text_embed = wrap(suite.text_embed);
  return suite;
}

namespace synthetic {

inline constexpr int kPatchGrid = 4;
inline constexpr std::uint64_t kEmbedSeed = 101;

inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline Tensor normalize_depth(Tensor d) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : d.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double& v : d.values()) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return d;
}

// Renders nearness from the scene annotation: a back wall, a table plane that gets nearer
// toward the bottom row, and flat-topped objects standing on the table.
inline Tensor analytic_depth(const json& meta, int h, int w) {
  const json& d = meta.at("depth");
  const double wall = d.value("wall", 0.1);
  const int table_top = d.value("table_top", h / 3);
  const double far_v = d.value("table_far", 0.3), near_v = d.value("table_near", 0.6);
  const double height = d.value("object_height", 0.3);
  auto plane = [&](double y) {
    if (y < table_top) return wall;
    const double u = h - 1 > table_top ? (y - table_top) / static_cast<double>(h - 1 - table_top) : 0.0;
    return far_v + (near_v - far_v) * u;
  };
  Tensor out(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(0, y, x) = plane(y);
  for (const auto& obj : meta.value("objects", json::array())) {
    const Mask m = mask_from_rle(obj.at("mask_rle"));
    const auto box = bounding_box(m);
    if (!box) continue;
    const double base = plane(box->y1 - 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m(y, x)) out(0, y, x) = base + height;
  }
  return out;
}

// Per-patch colour statistics and position, lifted to d dims by a fixed random map and tanh.
inline Tokens patch_embedding(const Tensor& image, int d) {
  require(image.channels() == 3 && image.height() > 0 && image.width() > 0, ErrorKind::ShapeMismatch,
          "image_embed expects a 3-channel image");
  constexpr int kFeatures = 9;
  std::mt19937_64 rng(kEmbedSeed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix<double> proj(d, kFeatures);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = normal(rng) / std::sqrt(3.0);

  const int g = kPatchGrid, h = image.height(), w = image.width();
  Tokens out(g * g, d);
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      const int y0 = py * h / g, y1 = std::max(y0 + 1, (py + 1) * h / g);
      const int x0 = px * w / g, x1 = std::max(x0 + 1, (px + 1) * w / g);
      Eigen::Matrix<double, kFeatures, 1> f;
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int c = 0; c < 3; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            const double v = image(c, y, x);
            s += v;
            s2 += v * v;
          }
        const double mean = s / n;
        f(c) = 2.0 * mean - 1.0;
        f(3 + c) = 2.0 * std::sqrt(std::max(0.0, s2 / n - mean * mean));
      }
      f(6) = (px + 0.5) / g * 2.0 - 1.0;
      f(7) = (py + 0.5) / g * 2.0 - 1.0;
      f(8) = 1.0;
      out.row(py * g + px) = (proj * f).array().tanh().transpose();
    }
  return out;
}

// One pseudo-random unit-variance token per word, seeded by the word itself.
inline Tokens word_embedding(const std::string& text, int d) {
  const auto ws = words(text);
  Tokens out(static_cast<Eigen::Index>(ws.size()), d);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const std::string digest = Hasher().str(ws[i]).hex(16);
    std::mt19937_64 rng(std::stoull(digest, nullptr, 16));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < d; ++k) out(static_cast<Eigen::Index>(i), k) = normal(rng);
  }
  return out;
}

}  // namespace synthetic

// Deterministic suite that echoes synthetic scene annotations (frame metadata):
// grounding matches annotation labels by word, segmentation returns annotated masks
// clipped to the box (the whole box when the frame carries no annotation), depth is
// rendered analytically, and embeddings are fixed random feature maps.
inline ProviderSuite make_synthetic_suite(int token_width = 32) {
  ProviderSuite s;
  s.name = "synthetic";
  s.token_width = token_width;
  s.grounding = [](const FrameRecord& frame, const std::string& query) {
    std::vector<Detection> hits;
    const auto q = synthetic::words(query);
    if (q.empty()) return hits;
    const std::set<std::string> wanted(q.begin(), q.end());
    for (const auto& obj : frame.metadata.value("objects", json::array())) {
      const auto label = synthetic::words(obj.value("label", ""));
      std::size_t matched = 0;
      for (const auto& wd : std::set<std::string>(label.begin(), label.end())) matched += wanted.count(wd);
      if (matched == 0) continue;
      hits.push_back({box_from_json(obj.at("box")), static_cast<double>(matched) / wanted.size()});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    return hits;
  };
  s.segmentation = [](const FrameRecord& frame, const PixelBox& box) {
    const int h = frame.height(), w = frame.width();
    const Mask rect = box_mask(box, h, w);
    const json objects = frame.metadata.value("objects", json::array());
    if (objects.empty()) return rect;
    Mask out(h, w);
    for (const auto& obj : objects) {
      const Mask m = mask_from_rle(obj.at("mask_rle"));
      require(m.height() == h && m.width() == w, ErrorKind::InconsistentGeometry, "annotation mask size");
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] && rect[i]) out.set(i, true);
    }
    return out;
  };
  s.depth = [](const FrameRecord& frame) {
    if (frame.metadata.contains("depth"))
      return synthetic::normalize_depth(synthetic::analytic_depth(frame.metadata, frame.height(), frame.width()));
    Tensor lum(1, frame.height(), frame.width());
    for (int y = 0; y < frame.height(); ++y)
      for (int x = 0; x < frame.width(); ++x)
        lum(0, y, x) = 0.299 * frame.image(0, y, x) + 0.587 * frame.image(1, y, x) + 0.114 * frame.image(2, y, x);
    return synthetic::normalize_depth(std::move(lum));
  };
  s.image_embed = [token_width](const Tensor& image) { return synthetic::patch_embedding(image, token_width); };
  s.text_embed = [token_width](const std::string& text) { return synthetic::word_embedding(text, token_width); };
  return s;
}

// Name → suite factory; "synthetic" is built in, others are plug-ins.
class ProviderRegistry {
 public:
  using Factory = std::function<ProviderSuite()>;

  static ProviderRegistry& instance() {
    static ProviderRegistry registry;
    return registry;
  }

  void add(const std::string& name, Factory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
  }

  ProviderSuite make(const std::string& name) const {
    if (name == "synthetic") return make_synthetic_suite();
    std::lock_guard lock(mutex_);
    auto it = factories_.find(name);
    require(it != factories_.end(), ErrorKind::UnknownName, "provider suite '" + name + "'");
    ProviderSuite suite = it->second();
    suite.validate();
    return serialized(std::move(suite));
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Factory> factories_;
};

}  // namespace rsc
