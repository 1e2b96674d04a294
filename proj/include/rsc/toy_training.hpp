#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rsc/backend.hpp"
#include "rsc/condition_generator.hpp"
#include "rsc/providers.hpp"
#include "rsc/toy_scene.hpp"

namespace rsc::toy {

struct NamedColor {
  const char* name;
  Rgb rgb;
};

inline const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> colors{
      {"red", {0.85, 0.15, 0.12}},    {"green", {0.20, 0.70, 0.25}}, {"blue", {0.15, 0.30, 0.85}},
      {"yellow", {0.92, 0.82, 0.15}}, {"purple", {0.55, 0.20, 0.70}}, {"cyan", {0.15, 0.75, 0.80}},
      {"white", {0.95, 0.95, 0.92}},  {"black", {0.08, 0.08, 0.10}},
  };
  return colors;
}

struct TrainingConfig {
  int frames = 2000;
  int iterations = 4000;
  int batch = 8;
  double learning_rate = 2e-3;
  double final_learning_rate = 1e-4;
  double unconditional_prob = 0.2;
  double pose_prob = 0.6;
  double time_power = 2.0;  // schedule position drawn as v^p, v uniform; p > 1 favours low noise
  int min_margin = 2;
  int max_margin = 8;
  std::uint64_t seed = 1;
  std::function<void(int, double)> progress;  // (iteration, running loss)
};

// One training frame with the conditions the denoiser will see for it.
struct TrainingExample {
  TensorF x0;
  RowMatrix<float> visual;  // empty when unconditional
  Mask layout;
  TensorF pose_mid, pose_dec;  // empty unless pose is on
};

// Random tabletop: backdrop and table tints, one object of random shape, colour, size and place.
inline ToySceneSpec random_scene(std::mt19937_64& rng, int h = 32, int w = 32) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ToySceneSpec s;
  s.height = h;
  s.width = w;
  const double bg = 0.7 + 0.2 * u(rng);
  s.background = {bg, bg + 0.02, bg + 0.05};
  s.table = {0.45 + 0.2 * u(rng), 0.35 + 0.15 * u(rng), 0.22 + 0.12 * u(rng)};
  s.table_top = 8 + static_cast<int>(u(rng) * 8);
  s.shape = static_cast<ObjectShape>(static_cast<int>(u(rng) * 3) % 3);
  const auto& c = palette()[static_cast<std::size_t>(u(rng) * palette().size()) % palette().size()];
  s.color = c.rgb;
  s.label = std::string(c.name) + " " + to_string(s.shape);
  s.radius = 4.0 + 3.0 * u(rng);
  const auto [ex, ey] = half_extent(s.shape, s.radius);
  const double y_lo = std::max<double>(s.table_top, ey), y_hi = h - ey;
  const double cx = ex + u(rng) * (w - 2 * ex), cy = y_lo + u(rng) * std::max(0.0, y_hi - y_lo);
  s.start = s.end = {cx, cy};
  return s;
}

inline std::string color_name(const Rgb& rgb) {
  for (const auto& c : palette())
    if (c.rgb == rgb) return c.name;
  return "plain";
}

// Visual examples: the prompt shows the object's colour. With pose on it shows a random shape (the
// depth residual carries the silhouette); with pose off it shows the true shape. Editable region =
// object mask dilated by a random margin; the grounding box is the object box padded at random.
inline std::vector<TrainingExample> make_training_set(const TrainingConfig& cfg, const ToyConvConfig& net,
                                                      std::array<float, 3>& mean, float& var) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ProviderSuite suite = make_synthetic_suite(net.token_width);
  const Shape3 site_shape{net.channels, net.height, net.width};
  const ConditionModels models = default_condition_models({{kSiteMid, site_shape}, {kSiteDec, site_shape}},
                                                          net.queries, net.token_width, net.resampler_seed,
                                                          net.adapter_seed);
  std::vector<TrainingExample> out;
  out.reserve(static_cast<std::size_t>(cfg.frames));
  std::array<double, 3> sum{};
  double sq = 0.0;
  for (int i = 0; i < cfg.frames; ++i) {
    const ToySceneSpec scene = random_scene(rng, net.height, net.width);
    RenderedFrame r = render_toy_frame(scene, scene.start[0], scene.start[1], rng);
    FrameRecord frame;
    frame.index = i;
    frame.image = r.image;
    frame.metadata = r.metadata;

    TrainingExample ex;
    ex.x0 = r.image.cast<float>();
    if (u(rng) >= cfg.unconditional_prob) {
      const bool pose = u(rng) < cfg.pose_prob;
      const ObjectShape shown = pose ? static_cast<ObjectShape>(static_cast<int>(u(rng) * 3) % 3) : scene.shape;
      VisualPromptSpec prompt;
      prompt.prompt_image = render_prompt_image(shown, scene.color);
      prompt.text = color_name(scene.color) + " " + to_string(shown);
      const int margin = cfg.min_margin + static_cast<int>(u(rng) * (cfg.max_margin - cfg.min_margin + 1));
      ex.layout = dilate(r.object_mask, margin).inverted();
      const PixelBox pb = *bounding_box(r.object_mask);
      const int pad = static_cast<int>(u(rng) * 3);
      const PixelBox padded{std::max(0, pb.x0 - pad), std::max(0, pb.y0 - pad), std::min(net.width, pb.x1 + pad),
                            std::min(net.height, pb.y1 + pad)};
      const NormalizedBox box = to_normalized(padded, net.height, net.width);
      ex.visual = make_visual_condition(prompt, box, suite, models.resampler).cast<float>();
      if (pose) {
        const auto residuals = make_pose_condition(frame, suite, models.adapter, 1.0);
        ex.pose_mid = residuals.at(kSiteMid).cast<float>();
        ex.pose_dec = residuals.at(kSiteDec).cast<float>();
      }
    }
    const int P = ex.x0.plane_size();
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < P; ++p) {
        const double v = ex.x0.data()[c * P + p];
        sum[static_cast<std::size_t>(c)] += v;
        sq += v * v;
      }
    out.push_back(std::move(ex));
  }
  const double n = static_cast<double>(cfg.frames) * net.height * net.width;
  double mean_sq = 0.0;
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<std::size_t>(c)] = static_cast<float>(sum[static_cast<std::size_t>(c)] / n);
    mean_sq += std::pow(sum[static_cast<std::size_t>(c)] / n, 2) / 3.0;
  }
  var = static_cast<float>(sq / (3.0 * n) - mean_sq);
  return out;
}

// Continuous-time cosine ᾱ(u), the same law the step schedule samples.
inline double cosine_alpha_bar(double u, double offset = 0.008) {
  auto f = [&](double v) {
    const double c = std::cos((v + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  return std::clamp(f(u) / f(0.0), 1e-5, 1.0);
}

inline std::vector<std::span<float>> parameter_spans(ToyConvParams& p) {
  std::vector<std::span<float>> out;
  p.for_each([&](float* data, std::size_t n) { out.emplace_back(data, n); });
  return out;
}

class Adam {
 public:
  explicit Adam(const ToyConvConfig& cfg) : m_(ToyConvParams::zeros_like(cfg)), v_(ToyConvParams::zeros_like(cfg)) {}

  void step(ToyConvParams& params, ToyConvParams& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    auto p = parameter_spans(params), g = parameter_spans(grads), m = parameter_spans(m_), v = parameter_spans(v_);
    for (std::size_t k = 0; k < p.size(); ++k)
      for (std::size_t i = 0; i < p[k].size(); ++i) {
        const float gi = g[k][i];
        m[k][i] = static_cast<float>(kBeta1 * m[k][i] + (1.0 - kBeta1) * gi);
        v[k][i] = static_cast<float>(kBeta2 * v[k][i] + (1.0 - kBeta2) * gi * gi);
        p[k][i] -= static_cast<float>(lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + 1e-8));
      }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999;
  ToyConvParams m_, v_;
  int t_ = 0;
};

struct TrainingSummary {
  double first_loss = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

// Preconditioned ε-prediction MSE with Adam and a cosine learning-rate decay.
inline TrainingSummary train_toy(ToyConvNet& net, const TrainingConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  ToyConvConfig& nc = net.config();
  const auto data = make_training_set(cfg, nc, nc.data_mean, nc.data_var);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Adam adam(nc);
  TrainingSummary summary;
  double running = 0.0;
  const int h = nc.height, w = nc.width;
  for (int it = 0; it < cfg.iterations; ++it) {
    ToyConvParams grads = ToyConvParams::zeros_like(nc);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const TrainingExample& ex = data[pick(rng)];
      const double ab = cosine_alpha_bar(std::pow(u(rng), cfg.time_power));
      const float sa = static_cast<float>(std::sqrt(ab)), sb = static_cast<float>(std::sqrt(1.0 - ab));
      TensorF eps(ex.x0.shape()), z(ex.x0.shape());
      for (std::size_t i = 0; i < z.size(); ++i) {
        eps[i] = normal(rng);
        z[i] = sa * ex.x0[i] + sb * eps[i];
      }
      NetInput in;
      in.latent = &z;
      in.alpha_bar = ab;
      if (ex.visual.rows() > 0) {
        in.visual = &ex.visual;
        in.layout = &ex.layout;
      }
      if (!ex.pose_mid.empty()) {
        in.pose_mid = &ex.pose_mid;
        in.pose_dec = &ex.pose_dec;
      }
      NetCache cache;
      const TensorF pred = net.forward(in, &cache);
      TensorF grad(pred.shape());
      // Unit-variance weighting: the residual is measured on the learned correction, (ε̂ − ε)/c_out.
      const float c_out = net.output_scale(ab);
      const float inv = 1.0f / (c_out * c_out);
      const float scale = 2.0f * inv / static_cast<float>(pred.size() * cfg.batch);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const float d = pred[i] - eps[i];
        loss += static_cast<double>(d) * d * inv / static_cast<double>(pred.size() * cfg.batch);
        grad[i] = scale * d;
      }
      net.backward(cache, grad, h, w, grads);
    }
    const double progress = static_cast<double>(it) / std::max(1, cfg.iterations - 1);
    const double lr = cfg.final_learning_rate +
                      0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
    adam.step(net.params(), grads, lr);
    running = it == 0 ? loss : 0.98 * running + 0.02 * loss;
    if (it == 0) summary.first_loss = loss;
    if (cfg.progress && (it % 200 == 0 || it + 1 == cfg.iterations)) cfg.progress(it, running);
  }
  nc.trained = true;
  summary.final_loss = running;
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace rsc::toy
