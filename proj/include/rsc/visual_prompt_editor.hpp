#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rsc/backend.hpp"
#include "rsc/conditions.hpp"
#include "rsc/diffusion.hpp"
#include "rsc/injection.hpp"
#include "rsc/scene_model.hpp"

namespace rsc {

enum class StartMode { Gaussian, Anchor };

inline std::string to_string(StartMode m) { return m == StartMode::Gaussian ? "gaussian" : "anchor"; }

inline StartMode parse_start_mode(const std::string& s) {
  if (s == "gaussian") return StartMode::Gaussian;
  if (s == "anchor") return StartMode::Anchor;
  throw Error(ErrorKind::InvalidArgument, "start mode '" + s + "' (expected gaussian or anchor)");
}

struct FusionParams {
  double alpha = 0.3;
  std::uint64_t seed = 0;
  StartMode start_mode = StartMode::Gaussian;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0,1]");
  }
};

// Per-pixel M_t = c_layout·(1 − α·(T−t)/T), row-major H×W.
using BlendMask = RowMatrix<double>;

inline BlendMask blend_mask(int t, const Mask& c_layout, double alpha, int T) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidArgument, "alpha must lie in [0,1]");
  require(T >= 1 && t >= 1 && t <= T, ErrorKind::OutOfRange,
          "step " + std::to_string(t) + " outside 1.." + std::to_string(T));
  const double keep = 1.0 - alpha * static_cast<double>(T - t) / static_cast<double>(T);
  BlendMask m(c_layout.height(), c_layout.width());
  for (int y = 0; y < c_layout.height(); ++y)
    for (int x = 0; x < c_layout.width(); ++x) m(y, x) = c_layout(y, x) ? keep : 0.0;
  return m;
}

// M ⊙ anchor + (1 − M) ⊙ z̃, mask broadcast over channels.
inline Tensor fuse_step(const Tensor& anchor, const Tensor& z_tilde, const BlendMask& m) {
  require_same_shape(anchor.shape(), z_tilde.shape(), "fuse_step latents");
  require(m.rows() == anchor.height() && m.cols() == anchor.width(), ErrorKind::ShapeMismatch,
          "blend mask " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + " vs latent " +
              anchor.shape().str());
  Tensor out(anchor.shape());
  for (int c = 0; c < anchor.channels(); ++c)
    for (int y = 0; y < anchor.height(); ++y)
      for (int x = 0; x < anchor.width(); ++x) {
        const double w = m(y, x);
        out(c, y, x) = w * anchor(c, y, x) + (1.0 - w) * z_tilde(c, y, x);
      }
  return out;
}

struct StepDiagnostic {
  int t = 0;
  double mask_mean = 0.0;
  double latent_norm = 0.0;  // ‖z̃_t‖ before fusion
};

inline json to_json(const StepDiagnostic& d) {
  return {{"t", d.t}, {"mask_mean", d.mask_mean}, {"latent_norm", d.latent_norm}};
}

struct EditOptions {
  bool inject_conditions = true;  // false: the denoiser sees no bundle, only the blend uses c_layout
  bool record_latents = false;
  bool post_composite = false;
};

struct EditResult {
  Tensor edited_image;  // 3×H×W in [0,1]
  Tensor final_latent;  // z̃_0
  std::vector<StepDiagnostic> diagnostics;
  InjectionTrace trace;
  std::vector<std::string> flags;
  LatentAnchorSet anchors;
  std::vector<Tensor> fused;  // fused[t] = input of the step at t (record_latents only); fused[0] unused

  bool operator==(const EditResult& o) const {
    return edited_image == o.edited_image && final_latent == o.final_latent;
  }
};

inline Tensor gaussian_latent(const Shape3& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z(shape);
  for (double& v : z.values()) v = normal(rng);
  return z;
}

inline Tensor clamp_unit(Tensor image) {
  for (double& v : image.values()) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  return image;
}

// Encode, invert, then for t = T..1 blend with the anchor and take one conditioned DDIM step.
inline EditResult edit_frame(const FrameRecord& frame, const ConditionBundle& bundle, const Backend& backend,
                             const FusionParams& params, const EditOptions& options = {}) {
  params.validate();
  require(backend.denoiser && backend.codec, ErrorKind::InvalidArgument, "backend is incomplete");
  bundle.validate(false);
  const NoiseSchedule& schedule = backend.schedule;
  const Denoiser& denoiser = *backend.denoiser;
  const int T = schedule.steps();

  EditResult r;
  if (bundle.c_layout.all()) r.flags.push_back("no editable region");

  const Tensor z0 = backend.codec->encode(frame.image);
  const Mask layout = downsample_layout(bundle.c_layout, z0.height(), z0.width());
  r.anchors = invert_all(z0, denoiser, schedule);

  Tensor z = params.start_mode == StartMode::Gaussian ? gaussian_latent(z0.shape(), params.seed) : r.anchors.terminal();
  if (options.record_latents) r.fused.resize(static_cast<std::size_t>(T) + 1);
  const ConditionBundle* cond = options.inject_conditions ? &bundle : nullptr;
  for (int t = T; t >= 1; --t) {
    const BlendMask m = blend_mask(t, layout, params.alpha, T);
    r.diagnostics.push_back({t, m.mean(), l2_norm(z)});
    Tensor fused = fuse_step(r.anchors.at(t), z, m);
    z = ddim_forward_step(fused, t, denoiser, schedule, cond, &r.trace);
    if (options.record_latents) r.fused[static_cast<std::size_t>(t)] = std::move(fused);
  }
  r.final_latent = z;
  r.edited_image = clamp_unit(backend.codec->decode(z));
  require_same_shape(r.edited_image.shape(), frame.image.shape(), "decoded image");
  if (options.post_composite) {
    const Mask full = downsample_layout(bundle.c_layout, frame.height(), frame.width());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < frame.height(); ++y)
        for (int x = 0; x < frame.width(); ++x)
          if (full(y, x)) r.edited_image(c, y, x) = frame.image(c, y, x);
  }
  return r;
}

}  // namespace rsc
