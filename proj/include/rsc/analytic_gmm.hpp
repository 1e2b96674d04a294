#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rsc/diffusion.hpp"

namespace rsc {

// Isotropic Gaussian mixture over R^D.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<double> variances;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  int components() const { return static_cast<int>(weights.size()); }

  void validate() const {
    require(!weights.empty() && weights.size() == means.size() && weights.size() == variances.size(),
            ErrorKind::InvalidArgument, "mixture arrays disagree");
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      require(weights[k] > 0.0 && variances[k] > 0.0, ErrorKind::InvalidArgument, "mixture weights/variances > 0");
      require(static_cast<int>(means[k].size()) == dim(), ErrorKind::InvalidArgument, "mixture mean dims differ");
      total += weights[k];
    }
    require(std::abs(total - 1.0) < 1e-12, ErrorKind::InvalidArgument, "mixture weights must sum to 1");
  }

  static GaussianMixture default_2d() {
    return {{0.4, 0.35, 0.25}, {{-1.5, 0.0}, {1.0, 1.2}, {0.8, -1.0}}, {0.35 * 0.35, 0.3 * 0.3, 0.4 * 0.4}};
  }

  // Draws from the mixture; used to produce clean latents for tests.
  std::vector<double> sample(std::mt19937_64& rng) const {
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    const int k = pick(rng);
    std::vector<double> out(static_cast<std::size_t>(dim()));
    for (int i = 0; i < dim(); ++i) out[i] = means[k][i] + std::sqrt(variances[k]) * normal(rng);
    return out;
  }
};

// Closed-form ε̂ for data drawn from a Gaussian mixture. Under z_t = √ᾱ·x + √(1−ᾱ)·ε the
// noised law is Σ π_k N(√ᾱ μ_k, (ᾱ σ_k² + 1 − ᾱ) I), and Tweedie gives
// ε̂ = −√(1−ᾱ) ∇ log p_t(z). Latents are D×1×1 tensors.
class AnalyticGmmDenoiser final : public Denoiser {
 public:
  explicit AnalyticGmmDenoiser(GaussianMixture mixture) : mix_(std::move(mixture)) { mix_.validate(); }

  std::string name() const override { return "analytic-gmm"; }
  const GaussianMixture& mixture() const { return mix_; }
  Shape3 latent_shape() const { return {mix_.dim(), 1, 1}; }

  Tensor predict_noise(const Tensor& z, Timestep t, const ConditionBundle* = nullptr, InjectionTrace* = nullptr) const override {
    require_same_shape(z.shape(), latent_shape(), name() + " latent");
    const std::vector<double> score = this->score(z.values(), t.alpha_bar);
    Tensor eps(z.shape());
    const double sb = std::sqrt(1.0 - t.alpha_bar);
    for (std::size_t i = 0; i < score.size(); ++i) eps[i] = -sb * score[i];
    return eps;
  }

  // ∇_z log p_t(z) via posterior responsibilities.
  std::vector<double> score(std::span<const double> z, double alpha_bar) const {
    const int d = mix_.dim(), k_count = mix_.components();
    const double sa = std::sqrt(alpha_bar);
    std::vector<double> log_r(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
      const double s2 = alpha_bar * mix_.variances[k] + (1.0 - alpha_bar);
      double sq = 0.0;
      for (int i = 0; i < d; ++i) {
        const double diff = z[i] - sa * mix_.means[k][i];
        sq += diff * diff;
      }
      log_r[k] = std::log(mix_.weights[k]) - 0.5 * d * std::log(2.0 * std::numbers::pi * s2) - 0.5 * sq / s2;
    }
    const double mx = *std::max_element(log_r.begin(), log_r.end());
    double norm = 0.0;
    for (double& v : log_r) norm += (v = std::exp(v - mx));
    std::vector<double> g(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k < k_count; ++k) {
      const double r = log_r[k] / norm;
      const double s2 = alpha_bar * mix_.variances[k] + (1.0 - alpha_bar);
      for (int i = 0; i < d; ++i) g[i] -= r * (z[i] - sa * mix_.means[k][i]) / s2;
    }
    return g;
  }

 private:
  GaussianMixture mix_;
};

}  // namespace rsc
