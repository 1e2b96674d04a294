#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "rsc/conditions.hpp"
#include "rsc/error.hpp"
#include "rsc/tensor.hpp"

namespace rsc {

// Discrete ᾱ schedule over steps 0..T with ᾱ_0 = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  // Cosine ᾱ(u) = f(u)/f(0), f(u) = cos²(((u + s)/(1 + s))·π/2), sampled at u = t/T,
  // with per-step β clipped at max_beta so ᾱ_T stays positive.
  static NoiseSchedule cosine(int steps, double offset = 0.008, double max_beta = 0.999) {
    require(steps >= 1, ErrorKind::InvalidArgument, "schedule needs T >= 1");
    auto f = [&](double u) {
      const double c = std::cos((u + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    std::vector<double> ab(steps + 1);
    ab[0] = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double ratio = f(static_cast<double>(t) / steps) / f(static_cast<double>(t - 1) / steps);
      ab[t] = ab[t - 1] * std::max(ratio, 1.0 - max_beta);
    }
    return from_alpha_bar(std::move(ab));
  }

  // strict=false admits flat segments; only test fixtures need that.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar, bool strict = true) {
    require(alpha_bar.size() >= 2, ErrorKind::InvalidArgument, "schedule needs T >= 1");
    require(alpha_bar[0] == 1.0, ErrorKind::InvalidArgument, "alpha_bar[0] must be 1");
    for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
      require(alpha_bar[t] > 0.0 && alpha_bar[t] <= 1.0, ErrorKind::InvalidArgument, "alpha_bar outside (0,1]");
      require(strict ? alpha_bar[t] < alpha_bar[t - 1] : alpha_bar[t] <= alpha_bar[t - 1],
              ErrorKind::InvalidArgument, "alpha_bar must decrease");
    }
    NoiseSchedule s;
    s.alpha_bar_ = std::move(alpha_bar);
    return s;
  }

  int steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_{1.0};
};

struct Timestep {
  int index = 0;
  double alpha_bar = 1.0;
};

// ε-predictor. Implementations are read-only after construction.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::string name() const = 0;
  virtual Tensor predict_noise(const Tensor& z, Timestep t, const ConditionBundle* conditions = nullptr,
                               InjectionTrace* trace = nullptr) const = 0;
  virtual std::vector<InjectionSite> injection_sites() const { return {}; }
};

class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual std::string name() const = 0;
  virtual Tensor encode(const Tensor& image) const = 0;
  virtual Tensor decode(const Tensor& latent) const = 0;
};

class IdentityCodec final : public LatentCodec {
 public:
  std::string name() const override { return "identity"; }
  Tensor encode(const Tensor& image) const override { return image; }
  Tensor decode(const Tensor& latent) const override { return latent; }
};

// Deterministic DDIM transfer of a latent from noise level ᾱ_from to ᾱ_to given ε̂:
//   x̂_0 = (z − √(1−ᾱ_from)·ε̂)/√ᾱ_from,  z' = √ᾱ_to·x̂_0 + √(1−ᾱ_to)·ε̂.
// Forward (denoising) and inverse steps are both this map.
inline Tensor ddim_transfer(const Tensor& z, const Tensor& eps, double alpha_from, double alpha_to) {
  require_same_shape(z.shape(), eps.shape(), "ddim_transfer");
  if (alpha_from == alpha_to) return z;
  const double sa_from = std::sqrt(alpha_from), sb_from = std::sqrt(1.0 - alpha_from);
  const double sa_to = std::sqrt(alpha_to), sb_to = std::sqrt(1.0 - alpha_to);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - sb_from * eps[i]) / sa_from;
    out[i] = sa_to * x0 + sb_to * eps[i];
  }
  return out;
}

inline void require_step(int t, const NoiseSchedule& schedule) {
  require(t >= 1 && t <= schedule.steps(), ErrorKind::OutOfRange,
          "step " + std::to_string(t) + " outside 1.." + std::to_string(schedule.steps()));
}

// z_t → z_{t−1}, with ε̂ evaluated at (z_t, t) under the given conditions.
inline Tensor ddim_forward_step(const Tensor& z_t, int t, const Denoiser& denoiser, const NoiseSchedule& schedule,
                                const ConditionBundle* conditions = nullptr, InjectionTrace* trace = nullptr) {
  require_step(t, schedule);
  const Tensor eps = denoiser.predict_noise(z_t, {t, schedule.alpha_bar(t)}, conditions, trace);
  require_same_shape(eps.shape(), z_t.shape(), denoiser.name() + " output");
  return ddim_transfer(z_t, eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
}

// z_{t−1} → z_t, first-order: ε̂ evaluated at the known earlier latent z_{t−1} with step label t.
// Unconditioned.
inline Tensor ddim_inverse_step(const Tensor& z_prev, int t, const Denoiser& denoiser, const NoiseSchedule& schedule) {
  require_step(t, schedule);
  const Tensor eps = denoiser.predict_noise(z_prev, {t, schedule.alpha_bar(t)}, nullptr, nullptr);
  require_same_shape(eps.shape(), z_prev.shape(), denoiser.name() + " output");
  return ddim_transfer(z_prev, eps, schedule.alpha_bar(t - 1), schedule.alpha_bar(t));
}

// Inverted latents z_1..z_T of one frame; at(0) is the clean latent z_0.
class LatentAnchorSet {
 public:
  LatentAnchorSet() = default;
  explicit LatentAnchorSet(std::vector<Tensor> latents) : latents_(std::move(latents)) {
    require(latents_.size() >= 2, ErrorKind::InvalidArgument, "anchor set needs T >= 1");
  }

  int steps() const { return static_cast<int>(latents_.size()) - 1; }
  const Tensor& at(int t) const {
    require(t >= 0 && t <= steps(), ErrorKind::OutOfRange, "anchor " + std::to_string(t));
    return latents_[static_cast<std::size_t>(t)];
  }
  const Tensor& terminal() const { return latents_.back(); }
  bool operator==(const LatentAnchorSet&) const = default;

 private:
  std::vector<Tensor> latents_;
};

inline LatentAnchorSet invert_all(const Tensor& z0, const Denoiser& denoiser, const NoiseSchedule& schedule) {
  for (double v : z0.values()) require(std::isfinite(v), ErrorKind::InvalidArgument, "non-finite z_0");
  std::vector<Tensor> latents;
  latents.reserve(static_cast<std::size_t>(schedule.steps()) + 1);
  latents.push_back(z0);
  for (int t = 1; t <= schedule.steps(); ++t) latents.push_back(ddim_inverse_step(latents.back(), t, denoiser, schedule));
  return LatentAnchorSet(std::move(latents));
}

// Plain DDIM sampling from z_T down to z_0.
inline Tensor ddim_sample(Tensor z, const Denoiser& denoiser, const NoiseSchedule& schedule,
                          const ConditionBundle* conditions = nullptr) {
  for (int t = schedule.steps(); t >= 1; --t) z = ddim_forward_step(z, t, denoiser, schedule, conditions);
  return z;
}

// Denoiser whose prediction is identically zero.
class ZeroDenoiser final : public Denoiser {
 public:
  std::string name() const override { return "zero"; }
  Tensor predict_noise(const Tensor& z, Timestep, const ConditionBundle* = nullptr, InjectionTrace* = nullptr) const override {
    return Tensor(z.shape());
  }
};

// Returns a fixed ε̂ regardless of the latent.
class FrozenDenoiser final : public Denoiser {
 public:
  explicit FrozenDenoiser(Tensor eps) : eps_(std::move(eps)) {}
  std::string name() const override { return "frozen"; }
  Tensor predict_noise(const Tensor& z, Timestep, const ConditionBundle* = nullptr, InjectionTrace* = nullptr) const override {
    require_same_shape(z.shape(), eps_.shape(), "frozen denoiser");
    return eps_;
  }

 private:
  Tensor eps_;
};

}  // namespace rsc
