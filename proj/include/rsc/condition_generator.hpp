#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rsc/conditions.hpp"
#include "rsc/diffusion.hpp"
#include "rsc/providers.hpp"
#include "rsc/scene_model.hpp"

namespace rsc {

inline constexpr int kFourierBands = 8;
inline constexpr int kDefaultDilation = 4;

struct GroundingEmbedding {
  NormalizedBox box;
  std::vector<double> fourier_features;  // 4·2·L
};

// Per coordinate (x0, y0, x1, y1), then per band k: sin(2^k π c), cos(2^k π c).
inline GroundingEmbedding fourier_encode_box(const NormalizedBox& box, int bands = kFourierBands) {
  validate_box(box);
  require(bands >= 1, ErrorKind::InvalidArgument, "band count must be >= 1");
  GroundingEmbedding g{box, {}};
  g.fourier_features.reserve(static_cast<std::size_t>(8 * bands));
  for (double c : {box.x0, box.y0, box.x1, box.y1})
    for (int k = 0; k < bands; ++k) {
      const double arg = std::ldexp(std::numbers::pi, k) * c;
      g.fourier_features.push_back(std::sin(arg));
      g.fourier_features.push_back(std::cos(arg));
    }
  return g;
}

// Row-vector convention throughout: tokens are rows, a projection is x ↦ x·W.
struct ResamplerWeights {
  RowMatrix<double> box_proj;    // 8L × d, Fourier features to width d
  RowMatrix<double> query_init;  // 2d × (n_q·d), [f_t pooled, f_g projected] to n_q queries
  RowMatrix<double> wq, wk, wv, wo;  // d × d
  int n_q = 4;
  int d = 32;

  int bands() const { return static_cast<int>(box_proj.rows() / 8); }

  void validate() const {
    require(n_q >= 1 && d >= 1, ErrorKind::InvalidArgument, "resampler needs n_q, d >= 1");
    require(box_proj.cols() == d && box_proj.rows() > 0 && box_proj.rows() % 8 == 0, ErrorKind::ShapeMismatch,
            "box projection shape");
    require(query_init.rows() == 2 * d && query_init.cols() == static_cast<Eigen::Index>(n_q) * d,
            ErrorKind::ShapeMismatch, "query init shape");
    for (const auto* m : {&wq, &wk, &wv, &wo})
      require(m->rows() == d && m->cols() == d, ErrorKind::ShapeMismatch, "resampler projections must be d×d");
  }

  static ResamplerWeights seeded(int n_q, int d, std::uint64_t seed, int bands = kFourierBands) {
    require(n_q >= 1 && d >= 1 && bands >= 1, ErrorKind::InvalidArgument, "resampler sizes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](Eigen::Index r, Eigen::Index c) {
      RowMatrix<double> m(r, c);
      const double s = 1.0 / std::sqrt(static_cast<double>(r));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * normal(rng);
      return m;
    };
    ResamplerWeights w;
    w.n_q = n_q;
    w.d = d;
    w.box_proj = draw(8 * bands, d);
    w.query_init = draw(2 * d, static_cast<Eigen::Index>(n_q) * d);
    w.wq = draw(d, d);
    w.wk = draw(d, d);
    w.wv = draw(d, d);
    w.wo = draw(d, d);
    return w;
  }
};

struct ResamplerOutput {
  Tokens tokens;               // n_q × d
  RowMatrix<double> queries;   // f_q
  RowMatrix<double> attention; // n_q × (n_v + n_q), rows are probability vectors
};

// f_q from pooled text and the projected box code.
inline RowMatrix<double> initial_queries(const Tokens& f_t, const GroundingEmbedding& f_g, const ResamplerWeights& w) {
  require(f_t.rows() == 0 || f_t.cols() == w.d, ErrorKind::ShapeMismatch,
          "text token width " + std::to_string(f_t.cols()) + " vs " + std::to_string(w.d));
  require(static_cast<Eigen::Index>(f_g.fourier_features.size()) == w.box_proj.rows(), ErrorKind::ShapeMismatch,
          "grounding features " + std::to_string(f_g.fourier_features.size()) + " vs " +
              std::to_string(w.box_proj.rows()));
  Eigen::RowVectorXd in(2 * w.d);
  in.head(w.d) = f_t.rows() > 0 ? Eigen::RowVectorXd(f_t.colwise().mean()) : Eigen::RowVectorXd::Zero(w.d);
  const Eigen::Map<const Eigen::RowVectorXd> fg(f_g.fourier_features.data(),
                                                 static_cast<Eigen::Index>(f_g.fourier_features.size()));
  in.tail(w.d) = fg * w.box_proj;
  const Eigen::RowVectorXd flat = in * w.query_init;
  RowMatrix<double> f_q(w.n_q, w.d);
  for (int i = 0; i < w.n_q; ++i) f_q.row(i) = flat.segment(static_cast<Eigen::Index>(i) * w.d, w.d);
  return f_q;
}

// Softmax(Q(f_q)·K([f_v; f_q])ᵀ/√d)·V([f_v; f_q]), then the output projection.
inline ResamplerOutput grounding_resampler_full(const Tokens& f_v, const Tokens& f_t, const GroundingEmbedding& f_g,
                                                const ResamplerWeights& w) {
  w.validate();
  require(f_v.rows() == 0 || f_v.cols() == w.d, ErrorKind::ShapeMismatch,
          "visual token width " + std::to_string(f_v.cols()) + " vs " + std::to_string(w.d));
  ResamplerOutput out;
  out.queries = initial_queries(f_t, f_g, w);
  RowMatrix<double> kv_in(f_v.rows() + w.n_q, w.d);
  if (f_v.rows() > 0) kv_in.topRows(f_v.rows()) = f_v;
  kv_in.bottomRows(w.n_q) = out.queries;

  const RowMatrix<double> q = out.queries * w.wq;
  const RowMatrix<double> k = kv_in * w.wk;
  const RowMatrix<double> v = kv_in * w.wv;
  RowMatrix<double> logits = (q * k.transpose()) / std::sqrt(static_cast<double>(w.d));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  out.attention = std::move(logits);
  out.tokens = out.attention * v * w.wo;
  return out;
}

inline Tokens grounding_resampler(const Tokens& f_v, const Tokens& f_t, const GroundingEmbedding& f_g,
                                  const ResamplerWeights& w) {
  return grounding_resampler_full(f_v, f_t, f_g, w).tokens;
}

struct LayoutOptions {
  int dilation = kDefaultDilation;
  std::optional<NormalizedBox> resolved_box;  // skip grounding (used by --ground-once)
};

struct LayoutResult {
  Mask c_layout;
  NormalizedBox box;
  std::vector<std::string> flags;
};

// Resolves the placement box, then segmentation ∖ dilation → editable (0); preserve (1) elsewhere.
inline NormalizedBox resolve_placement(const FrameRecord& frame, const VisualPromptSpec& spec,
                                       const ProviderSuite& suite) {
  if (spec.placement) {
    validate_box(*spec.placement);
    return *spec.placement;
  }
  const auto hits = suite.grounding(frame, spec.source_object_text);
  require(!hits.empty(), ErrorKind::ObjectNotFound, "'" + spec.source_object_text + "'");
  validate_box(hits.front().box);
  return hits.front().box;
}

inline LayoutResult make_layout_mask(const FrameRecord& frame, const VisualPromptSpec& spec,
                                     const ProviderSuite& suite, const LayoutOptions& options = {}) {
  require(options.dilation >= 0, ErrorKind::InvalidArgument, "dilation margin must be >= 0");
  const int h = frame.height(), w = frame.width();
  LayoutResult r;
  r.box = options.resolved_box ? *options.resolved_box : resolve_placement(frame, spec, suite);
  const PixelBox pixels = to_pixels(r.box, h, w);
  Mask editable = suite.segmentation(frame, pixels);
  require(editable.height() == h && editable.width() == w, ErrorKind::ShapeMismatch, "segmentation mask size");
  if (editable.none()) {
    editable = box_mask(pixels, h, w);
    r.flags.push_back("segmentation_empty_box_fallback");
  }
  r.c_layout = dilate(editable, options.dilation).inverted();
  return r;
}

// Fixed 3×3 box average (zero padding, divided by 9) followed by a seeded 1→C channel map per
// injection site. Linear in the depth map.
class ControlAdapter {
 public:
  ControlAdapter() = default;

  static ControlAdapter seeded(const std::vector<InjectionSite>& sites, std::uint64_t seed) {
    ControlAdapter a;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& s : sites) {
      Site site{s, std::vector<double>(static_cast<std::size_t>(s.shape.channels))};
      for (double& g : site.gains) g = normal(rng);
      a.sites_.push_back(std::move(site));
    }
    return a;
  }

  std::vector<InjectionSite> sites() const {
    std::vector<InjectionSite> out;
    for (const auto& s : sites_) out.push_back(s.site);
    return out;
  }

  std::map<std::string, Tensor> apply(const Tensor& depth) const {
    require(depth.channels() == 1, ErrorKind::ShapeMismatch, "depth must be 1×H×W");
    std::map<std::string, Tensor> out;
    for (const auto& s : sites_) {
      const Shape3 shape = s.site.shape;
      const Tensor avg = box_average(resample(depth, shape.height, shape.width));
      Tensor r(shape);
      for (int c = 0; c < shape.channels; ++c)
        for (int y = 0; y < shape.height; ++y)
          for (int x = 0; x < shape.width; ++x) r(c, y, x) = s.gains[static_cast<std::size_t>(c)] * avg(0, y, x);
      out.emplace(s.site.name, std::move(r));
    }
    return out;
  }

 private:
  struct Site {
    InjectionSite site;
    std::vector<double> gains;
  };

  // Nearest-neighbour resampling onto the site grid.
  static Tensor resample(const Tensor& d, int h, int w) {
    if (d.height() == h && d.width() == w) return d;
    Tensor out(1, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(0, y, x) = d(0, y * d.height() / h, x * d.width() / w);
    return out;
  }

  static Tensor box_average(const Tensor& d) {
    const int h = d.height(), w = d.width();
    Tensor out(1, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) s += d(0, yy, xx);
          }
        out(0, y, x) = s / 9.0;
      }
    return out;
  }

  std::vector<Site> sites_;
};

inline std::map<std::string, Tensor> scale_residuals(std::map<std::string, Tensor> base, double control_scale) {
  require(std::isfinite(control_scale) && control_scale >= 0.0, ErrorKind::InvalidArgument,
          "control_scale must be >= 0");
  for (auto& [site, r] : base)
    for (double& v : r.values()) v = control_scale * v;
  return base;
}

inline std::map<std::string, Tensor> make_pose_condition(const FrameRecord& frame, const ProviderSuite& suite,
                                                         const ControlAdapter& adapter, double control_scale) {
  require(std::isfinite(control_scale) && control_scale >= 0.0, ErrorKind::InvalidArgument,
          "control_scale must be >= 0");
  Tensor depth = suite.depth(frame);
  require(depth.channels() == 1 && depth.height() == frame.height() && depth.width() == frame.width(),
          ErrorKind::ProviderFailure, "depth map shape " + depth.shape().str());
  for (double& v : depth.values()) {
    require(std::isfinite(v), ErrorKind::ProviderFailure, "non-finite depth");
    v = std::clamp(v, 0.0, 1.0);
  }
  return scale_residuals(adapter.apply(depth), control_scale);
}

// Everything besides the frame and prompt that shapes a bundle.
struct ConditionModels {
  ResamplerWeights resampler;
  ControlAdapter adapter;
  LayoutOptions layout;
};

// Builds the weights a backend expects: token width, query count and seeds from its config.
inline ConditionModels default_condition_models(const std::vector<InjectionSite>& sites, int n_q = 4, int d = 32,
                                                std::uint64_t resampler_seed = 23, std::uint64_t adapter_seed = 17) {
  return {ResamplerWeights::seeded(n_q, d, resampler_seed), ControlAdapter::seeded(sites, adapter_seed), {}};
}

inline Tokens make_visual_condition(const VisualPromptSpec& spec, const NormalizedBox& box, const ProviderSuite& suite,
                                    const ResamplerWeights& weights) {
  const Tokens f_v = suite.image_embed(spec.prompt_image);
  const Tokens f_t = suite.text_embed(spec.text);
  return grounding_resampler(f_v, f_t, fourier_encode_box(box, weights.bands()), weights);
}

inline ConditionBundle build_condition_bundle(const FrameRecord& frame, const VisualPromptSpec& spec,
                                              const ProviderSuite& suite, const ConditionModels& models,
                                              double control_scale) {
  try {
    ConditionBundle b;
    LayoutResult layout = make_layout_mask(frame, spec, suite, models.layout);
    b.c_layout = std::move(layout.c_layout);
    b.placement_box = layout.box;
    b.flags = std::move(layout.flags);
    b.c_visual = make_visual_condition(spec, layout.box, suite, models.resampler);
    b.c_pose = make_pose_condition(frame, suite, models.adapter, control_scale);
    b.control_scale = control_scale;
    b.validate(true);
    return b;
  } catch (const Error& e) {
    throw Error(e.kind(), "frame " + std::to_string(frame.index) + ": " + e.detail());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::ProviderFailure, "frame " + std::to_string(frame.index) + ": " + e.what());
  }
}

}  // namespace rsc
