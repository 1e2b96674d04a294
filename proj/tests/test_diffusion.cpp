#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rsc/analytic_gmm.hpp"
#include "rsc/backend.hpp"
#include "rsc/diffusion.hpp"
#include "oracles.hpp"
#include "rsc/visual_prompt_editor.hpp"
#include "test_util.hpp"

using namespace rsc;
using namespace rsc::test;

namespace {

Tensor as_tensor(const std::vector<double>& v) {
  Tensor t(static_cast<int>(v.size()), 1, 1);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

}  // namespace

TEST(Schedule, CosineMatchesOracle) {
  for (int T : {1, 10, 50, 1000}) {
    const auto s = NoiseSchedule::cosine(T);
    ASSERT_EQ(s.steps(), T);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    double ab = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double f1 = std::pow(std::cos((1.0 * t / T + 0.008) / 1.008 * M_PI / 2), 2);
      const double f0 = std::pow(std::cos((1.0 * (t - 1) / T + 0.008) / 1.008 * M_PI / 2), 2);
      const double beta = std::min(1.0 - f1 / f0, 0.999);
      ab *= 1.0 - beta;
      EXPECT_NEAR(s.alpha_bar(t), ab, 1e-14 + 1e-12 * ab) << T << " " << t;
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      EXPECT_GT(s.alpha_bar(t), 0.0);
    }
  }
}

TEST(Schedule, RejectsBadTables) {
  EXPECT_EQ(test::error_kind_of([] { NoiseSchedule::cosine(0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(test::error_kind_of([] { NoiseSchedule::from_alpha_bar({0.9, 0.5}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(test::error_kind_of([] { NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(test::error_kind_of([] { NoiseSchedule::from_alpha_bar({1.0, 0.0}); }), ErrorKind::InvalidArgument);
  EXPECT_NO_THROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5}, false));
}

TEST(DdimTransfer, MatchesScalarFormula) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = test::random_tensor({2, 3, 4}, rng()), e = test::random_tensor({2, 3, 4}, rng());
    const double a = u(rng), b = u(rng);
    const Tensor out = ddim_transfer(z, e, a, b);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double x0 = (z[i] - std::sqrt(1 - a) * e[i]) / std::sqrt(a);
      EXPECT_NEAR(out[i], std::sqrt(b) * x0 + std::sqrt(1 - b) * e[i], 1e-12);
    }
  }
}

TEST(DdimTransfer, SameEpsilonRoundTripIsIdentity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = test::random_tensor({3, 2, 2}, rng()), e = test::random_tensor({3, 2, 2}, rng());
    const double a = u(rng), b = u(rng);
    EXPECT_LT(max_abs_diff(ddim_transfer(ddim_transfer(z, e, a, b), e, b, a), z), 1e-11);
  }
}

TEST(DdimTransfer, DyadicValuesAreExact) {
  // √ᾱ ∈ {1, 1/2, 1/4} and √(1−ᾱ) chosen so every product is exactly representable.
  Tensor z(1, 1, 2), e(1, 1, 2);
  z[0] = 0.75;
  z[1] = -1.5;
  e[0] = 0.5;
  e[1] = 0.25;
  const Tensor out = ddim_transfer(z, e, 0.25, 1.0);
  const double sb = std::sqrt(0.75);
  EXPECT_EQ(out[0], (0.75 - sb * 0.5) / 0.5);
  EXPECT_EQ(out[1], (-1.5 - sb * 0.25) / 0.5);
  EXPECT_EQ(ddim_transfer(z, e, 0.5, 0.5), z);
}

TEST(DdimSteps, ZeroDenoiserScalesBySqrtRatio) {
  const auto s = NoiseSchedule::cosine(50);
  const ZeroDenoiser zero;
  const Tensor z = test::random_tensor({3, 4, 4}, 3);
  const Tensor x0 = ddim_sample(z, zero, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(x0[i], z[i] / std::sqrt(s.alpha_bar(50)), 1e-9 * std::abs(x0[i]) + 1e-12);
  const auto anchors = invert_all(z, zero, s);
  for (int t = 0; t <= 50; ++t)
    for (std::size_t i = 0; i < z.size(); ++i)
      EXPECT_NEAR(anchors.at(t)[i], z[i] * std::sqrt(s.alpha_bar(t)), 1e-12);
}

TEST(DdimSteps, FrozenDenoiserRoundTripIsExact) {
  const auto s = NoiseSchedule::cosine(50);
  const FrozenDenoiser frozen(test::random_tensor({3, 4, 4}, 4));
  const Tensor z0 = test::random_tensor({3, 4, 4}, 5);
  const auto anchors = invert_all(z0, frozen, s);
  EXPECT_EQ(anchors.steps(), 50);
  EXPECT_EQ(anchors.at(0), z0);
  EXPECT_LT(max_abs_diff(ddim_sample(anchors.terminal(), frozen, s), z0), 1e-9);
}

TEST(DdimSteps, FlatSegmentLeavesLatentUnchanged) {
  const auto s = NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5, 0.1}, false);
  const FrozenDenoiser frozen(test::random_tensor({1, 2, 2}, 6));
  const Tensor z = test::random_tensor({1, 2, 2}, 7);
  EXPECT_EQ(ddim_forward_step(z, 2, frozen, s), z);
  EXPECT_EQ(ddim_inverse_step(z, 2, frozen, s), z);
}

TEST(DdimSteps, StepRangeChecked) {
  const auto s = NoiseSchedule::cosine(10);
  const ZeroDenoiser zero;
  const Tensor z(1, 1, 1);
  EXPECT_EQ(test::error_kind_of([&] { ddim_forward_step(z, 0, zero, s); }), ErrorKind::OutOfRange);
  EXPECT_EQ(test::error_kind_of([&] { ddim_forward_step(z, 11, zero, s); }), ErrorKind::OutOfRange);
  EXPECT_EQ(test::error_kind_of([&] { ddim_inverse_step(z, 0, zero, s); }), ErrorKind::OutOfRange);
}

TEST(DdimSteps, InversionEvaluatesEarlierLatentAtTargetStepUnconditioned) {
  struct Probe final : Denoiser {
    mutable std::vector<int> steps;
    mutable bool saw_conditions = false;
    std::string name() const override { return "probe"; }
    Tensor predict_noise(const Tensor& z, Timestep t, const ConditionBundle* c, InjectionTrace*) const override {
      steps.push_back(t.index);
      saw_conditions = saw_conditions || c != nullptr;
      return Tensor(z.shape());
    }
  } probe;
  const auto s = NoiseSchedule::cosine(5);
  invert_all(Tensor(1, 1, 1, 0.5), probe, s);
  EXPECT_EQ(probe.steps, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_FALSE(probe.saw_conditions);
}

TEST(AnalyticGmm, EpsilonMatchesFiniteDifferenceScore) {
  const auto mix = GaussianMixture::default_2d();
  const AnalyticGmmDenoiser gmm(mix);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0), coord(-3.0, 3.0);
  const auto s = NoiseSchedule::cosine(50);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 1 + static_cast<int>(u(rng) * 50) % 50;
    const double ab = s.alpha_bar(t);
    std::vector<double> z{coord(rng), coord(rng)};
    const Tensor eps = gmm.predict_noise(as_tensor(z), {t, ab});
    const double h = 1e-4;
    for (int i = 0; i < 2; ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd = static_cast<double>((log_density(mix, zp, ab) - log_density(mix, zm, ab)) / (2 * h));
      EXPECT_NEAR(eps[i], -std::sqrt(1 - ab) * fd, 1e-5) << "t=" << t;
    }
  }
}

TEST(AnalyticGmm, OneDimensionalTrajectoryMatchesReferenceIntegrator) {
  const GaussianMixture mix{{0.3, 0.7}, {{-1.0}, {1.5}}, {0.2, 0.5}};
  const AnalyticGmmDenoiser gmm(mix);
  const auto s = NoiseSchedule::cosine(50);
  // Reference: posterior responsibilities and Tweedie ε̂ written out for one coordinate.
  auto eps_ref = [&](double z, double ab) {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double v = ab * mix.variances[k] + 1 - ab, d = z - std::sqrt(ab) * mix.means[k][0];
      const double w = mix.weights[k] * std::exp(-0.5 * d * d / v) / std::sqrt(v);
      num += w * std::sqrt(1 - ab) * d / v;
      den += w;
    }
    return num / den;
  };
  for (double start : {-2.5, -0.3, 0.0, 0.8, 3.1}) {
    Tensor z = as_tensor({start});
    double ref = start;
    for (int t = 50; t >= 1; --t) {
      z = ddim_forward_step(z, t, gmm, s);
      const double a = s.alpha_bar(t), b = s.alpha_bar(t - 1), e = eps_ref(ref, a);
      ref = std::sqrt(b) * (ref - std::sqrt(1 - a) * e) / std::sqrt(a) + std::sqrt(1 - b) * e;
      ASSERT_NEAR(z[0], ref, 1e-10) << "start " << start << " t " << t;
    }
  }
}

TEST(AnalyticGmm, AnchorBlendedRoundTripMatchesClosedForm) {
  // Every step is reset to its anchor, so only the last pair matters. For one Gaussian
  // ε̂(z, ᾱ) = √(1−ᾱ)(z − √ᾱ μ)/(ᾱ v + 1 − ᾱ) is linear and the pair can be written out.
  const GaussianMixture single{{1.0}, {{0.7, -1.2}}, {0.3}};
  const AnalyticGmmDenoiser gmm(single);
  const auto s = NoiseSchedule::cosine(50);
  const double a1 = s.alpha_bar(1), d = a1 * 0.3 + 1 - a1;
  auto eps = [&](double z, double mu) { return std::sqrt(1 - a1) * (z - std::sqrt(a1) * mu) / d; };
  std::mt19937_64 rng(12);
  const Mask keep(1, 1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z0 = as_tensor(single.sample(rng));
    const auto anchors = invert_all(z0, gmm, s);
    Tensor z = as_tensor({9.0, -9.0});  // overwritten by the first fusion
    for (int t = s.steps(); t >= 1; --t)
      z = ddim_forward_step(fuse_step(anchors.at(t), z, blend_mask(t, keep, 0.0, s.steps())), t, gmm, s);
    for (int i = 0; i < 2; ++i) {
      const double mu = single.means[0][i];
      const double z1 = std::sqrt(a1) * z0[i] + std::sqrt(1 - a1) * eps(z0[i], mu);
      const double want = (z1 - std::sqrt(1 - a1) * eps(z1, mu)) / std::sqrt(a1);
      EXPECT_NEAR(z[i], want, 1e-12);
      EXPECT_LT(std::abs(z[i] - z0[i]), 1e-3);
    }
  }
}

TEST(AnalyticGmm, UnblendedRoundTripIsBounded) {
  // Without anchor blending the first-order inversion error accumulates; it stays finite and
  // shrinks with more steps.
  const auto mix = GaussianMixture::default_2d();
  const AnalyticGmmDenoiser gmm(mix);
  auto worst_for = [&](int T) {
    const auto s = NoiseSchedule::cosine(T);
    std::mt19937_64 rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor z0 = as_tensor(mix.sample(rng));
      worst = std::max(worst, max_abs_diff(ddim_sample(invert_all(z0, gmm, s).terminal(), gmm, s), z0));
    }
    return worst;
  };
  const double coarse = worst_for(50), fine = worst_for(500);
  EXPECT_TRUE(std::isfinite(coarse));
  EXPECT_LT(fine, coarse);
}

TEST(AnalyticGmm, SamplesMatchMixtureMoments) {
  const auto mix = GaussianMixture::default_2d();
  const AnalyticGmmDenoiser gmm(mix);
  const auto s = NoiseSchedule::cosine(50);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 4000;
  double mean[2] = {0, 0}, want[2] = {0, 0};
  for (int k = 0; k < mix.components(); ++k)
    for (int i = 0; i < 2; ++i) want[i] += mix.weights[k] * mix.means[k][i];
  for (int trial = 0; trial < n; ++trial) {
    const Tensor x = ddim_sample(as_tensor({normal(rng), normal(rng)}), gmm, s);
    for (int i = 0; i < 2; ++i) mean[i] += x[i] / n;
  }
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(mean[i], want[i], 0.1);
}

TEST(AnalyticGmm, RejectsBadMixtureAndShape) {
  EXPECT_EQ(test::error_kind_of([] { AnalyticGmmDenoiser({{0.5, 0.4}, {{0.0}, {1.0}}, {1.0, 1.0}}); }),
            ErrorKind::InvalidArgument);
  const AnalyticGmmDenoiser gmm(GaussianMixture::default_2d());
  EXPECT_EQ(test::error_kind_of([&] { gmm.predict_noise(Tensor(3, 1, 1), {1, 0.5}); }), ErrorKind::ShapeMismatch);
}

TEST(Backends, RegistryKnowsToyBackends) {
  EXPECT_EQ(make_toy_backend("analytic-gmm").denoiser->name(), "analytic-gmm");
  EXPECT_EQ(test::error_kind_of([] { BackendRegistry::instance().make("nope", {}); }), ErrorKind::UnknownName);
}

TEST(Backends, WeightsFileRoundTrip) {
  test::TempDir dir;
  toy::ToyConvConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.trained = true;
  const toy::ToyConvNet net(cfg, toy::ToyConvParams::seeded(cfg, 9));
  toy::save_weights(dir / "w.bin", net);
  const auto back = toy::load_weights(dir / "w.bin");
  EXPECT_EQ(back.config(), net.config());
  const Tensor z = test::random_tensor({3, 8, 8}, 3);
  const toy::TensorF zf = z.cast<float>();
  toy::NetInput in;
  in.latent = &zf;
  in.alpha_bar = 0.5;
  EXPECT_EQ(back.forward(in), net.forward(in));
  std::ofstream(dir / "bad.bin") << "garbage";
  EXPECT_EQ(test::error_kind_of([&] { toy::load_weights(dir / "bad.bin"); }), ErrorKind::DecodeFailure);
}
