#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "rsc/condition_generator.hpp"
#include "rsc/toy_scene.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace rsc;
using namespace rsc::test;

namespace {

FrameRecord toy_frame(ObjectShape shape = ObjectShape::Disk) {
  ToySceneSpec spec;
  spec.shape = shape;
  spec.label = "red " + to_string(shape);
  return make_toy_scene(spec, 1, 1).frames.front();
}

VisualPromptSpec auto_prompt(const std::string& source) {
  VisualPromptSpec p;
  p.prompt_image = render_prompt_image(ObjectShape::Bar, {0.2, 0.7, 0.25});
  p.text = "green bar";
  p.source_object_text = source;
  return p;
}

std::vector<InjectionSite> toy_sites() { return {{"mid", {16, 32, 32}}, {"dec", {16, 32, 32}}}; }

}  // namespace

TEST(FourierEncoding, MatchesDirectFormulaAndOrder) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const NormalizedBox b = random_box(rng);
    const int bands = 1 + trial % 9;
    const auto g = fourier_encode_box(b, bands);
    ASSERT_EQ(g.fourier_features.size(), static_cast<std::size_t>(8 * bands));
    const double coords[] = {b.x0, b.y0, b.x1, b.y1};
    for (int c = 0; c < 4; ++c)
      for (int k = 0; k < bands; ++k) {
        const double arg = std::pow(2.0, k) * M_PI * coords[c];
        EXPECT_NEAR(g.fourier_features[static_cast<std::size_t>((c * bands + k) * 2)], std::sin(arg), 1e-12);
        EXPECT_NEAR(g.fourier_features[static_cast<std::size_t>((c * bands + k) * 2 + 1)], std::cos(arg), 1e-12);
      }
  }
}

TEST(FourierEncoding, RejectsInvalidBoxes) {
  EXPECT_EQ(test::error_kind_of([] { fourier_encode_box({0.5, 0.1, 0.5, 0.9}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(test::error_kind_of([] { fourier_encode_box({-0.1, 0.1, 0.5, 0.9}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(test::error_kind_of([] { fourier_encode_box({0.1, 0.1, NAN, 0.9}); }), ErrorKind::InvalidArgument);
}

TEST(GroundingResampler, MatchesDenseOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n(1, 32), dim(1, 12), bands(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_q = n(rng), n_v = n(rng), d = dim(rng), L = bands(rng);
    const auto w = ResamplerWeights::seeded(n_q, d, rng(), L);
    const Tokens f_v = random_tokens(n_v, d, rng), f_t = random_tokens(1 + trial % 5, d, rng);
    const NormalizedBox box = random_box(rng);
    const auto got = grounding_resampler_full(f_v, f_t, fourier_encode_box(box, L), w);
    const auto want = dense_resampler_oracle(f_v, f_t, box, L, w);
    ASSERT_EQ(got.tokens.rows(), n_q);
    ASSERT_EQ(got.tokens.cols(), d);
    for (int i = 0; i < n_q; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n_v + n_q; ++j) {
        EXPECT_NEAR(got.attention(i, j), want.attention[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-9);
        sum += got.attention(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      for (int j = 0; j < d; ++j)
        EXPECT_NEAR(got.tokens(i, j), want.tokens[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-9);
    }
  }
}

TEST(GroundingResampler, InvariantToVisualTokenOrder) {
  std::mt19937_64 rng(7);
  const auto w = ResamplerWeights::seeded(4, 8, 3);
  const Tokens f_v = random_tokens(10, 8, rng), f_t = random_tokens(2, 8, rng);
  Tokens shuffled = f_v;
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < 10; ++i) shuffled.row(i) = f_v.row(perm[static_cast<std::size_t>(i)]);
  const auto g = fourier_encode_box({0.1, 0.2, 0.6, 0.7});
  EXPECT_LT((grounding_resampler(f_v, f_t, g, w) - grounding_resampler(shuffled, f_t, g, w)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(GroundingResampler, BoxChangesQueries) {
  const auto w = ResamplerWeights::seeded(4, 8, 3);
  std::mt19937_64 rng(8);
  const Tokens f_t = random_tokens(2, 8, rng);
  const auto a = initial_queries(f_t, fourier_encode_box({0.1, 0.1, 0.4, 0.4}), w);
  const auto b = initial_queries(f_t, fourier_encode_box({0.5, 0.5, 0.9, 0.9}), w);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(GroundingResampler, ShapeErrors) {
  std::mt19937_64 rng(9);
  const auto w = ResamplerWeights::seeded(4, 8, 3);
  const auto g = fourier_encode_box({0.1, 0.1, 0.4, 0.4});
  EXPECT_EQ(test::error_kind_of([&] { grounding_resampler(random_tokens(3, 7, rng), random_tokens(1, 8, rng), g, w); }),
            ErrorKind::ShapeMismatch);
  EXPECT_EQ(test::error_kind_of([&] { grounding_resampler(random_tokens(3, 8, rng), random_tokens(1, 8, rng),
                                                          fourier_encode_box({0.1, 0.1, 0.4, 0.4}, 3), w); }),
            ErrorKind::ShapeMismatch);
}

TEST(Layout, ExplicitBoxIntersectsSegmentationAndDilates) {
  const FrameRecord f = toy_frame();
  const Mask object = mask_from_rle(f.metadata["objects"][0]["mask_rle"]);
  VisualPromptSpec p = auto_prompt("");
  p.placement = NormalizedBox{0.0, 0.0, 1.0, 1.0};
  for (int dilation : {0, 1, 4}) {
    const auto r = make_layout_mask(f, p, make_synthetic_suite(), {dilation, {}});
    // Oracle: editable = object grown by a (2r+1)² square.
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        bool near = false;
        for (int yy = std::max(0, y - dilation); yy <= std::min(31, y + dilation); ++yy)
          for (int xx = std::max(0, x - dilation); xx <= std::min(31, x + dilation); ++xx) near = near || object(yy, xx);
        ASSERT_EQ(r.c_layout(y, x), near ? 0 : 1) << dilation << " " << y << "," << x;
      }
    EXPECT_TRUE(r.flags.empty());
  }
}

TEST(Layout, AutoPlacementUsesGroundingHit) {
  const FrameRecord f = toy_frame();
  const auto r = make_layout_mask(f, auto_prompt("red disk"), make_synthetic_suite());
  EXPECT_EQ(r.box, box_from_json(f.metadata["objects"][0]["box"]));
  EXPECT_FALSE(r.c_layout.all());
}

TEST(Layout, AutoPlacementComplementIsGroundTruthMask) {
  for (ObjectShape shape : {ObjectShape::Disk, ObjectShape::Square}) {
    const FrameRecord f = toy_frame(shape);
    const Mask object = mask_from_rle(f.metadata["objects"][0]["mask_rle"]);
    const auto r = make_layout_mask(f, auto_prompt("red " + to_string(shape)), make_synthetic_suite(), {0, {}});
    EXPECT_EQ(r.c_layout.inverted(), object) << to_string(shape);
  }
}

TEST(Layout, ObjectNotFound) {
  const FrameRecord f = toy_frame();
  EXPECT_EQ(test::error_kind_of([&] { make_layout_mask(f, auto_prompt("teapot"), make_synthetic_suite()); }),
            ErrorKind::ObjectNotFound);
}

TEST(Layout, EmptySegmentationFallsBackToBox) {
  const FrameRecord f = toy_frame();
  VisualPromptSpec p = auto_prompt("");
  p.placement = NormalizedBox{0.0, 0.0, 0.125, 0.125};  // far from the object
  const auto r = make_layout_mask(f, p, make_synthetic_suite(), {0, {}});
  EXPECT_EQ(r.flags, std::vector<std::string>{"segmentation_empty_box_fallback"});
  EXPECT_EQ(r.c_layout.inverted(), box_mask({0, 0, 4, 4}, 32, 32));
}

TEST(Layout, NegativeDilationRejected) {
  const FrameRecord f = toy_frame();
  EXPECT_EQ(test::error_kind_of([&] { make_layout_mask(f, auto_prompt("red disk"), make_synthetic_suite(), {-1, {}}); }),
            ErrorKind::InvalidArgument);
}

TEST(ControlAdapter, MatchesBoxAverageTimesGain) {
  std::mt19937_64 rng(4);
  const Tensor depth = test::random_tensor({1, 9, 7}, 5, 0.0, 1.0);
  const auto adapter = ControlAdapter::seeded({{"a", {3, 9, 7}}}, 17);
  const Tensor r = adapter.apply(depth).at("a");
  // Recover each channel gain from one interior cell, then check every cell against the oracle.
  for (int c = 0; c < 3; ++c) {
    auto avg = [&](int y, int x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < 9 && xx >= 0 && xx < 7) s += depth(0, yy, xx);
        }
      return s / 9.0;
    };
    const double gain = r(c, 4, 3) / avg(4, 3);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x) EXPECT_NEAR(r(c, y, x), gain * avg(y, x), 1e-12);
  }
}

TEST(PoseCondition, LinearInControlScaleExactly) {
  const FrameRecord f = toy_frame();
  const auto suite = make_synthetic_suite();
  const auto adapter = ControlAdapter::seeded(toy_sites(), 17);
  const auto one = make_pose_condition(f, suite, adapter, 1.0);
  for (double k : {0.0, 0.2, 0.5, 1.0, 2.0, 3.7}) {
    const auto scaled = make_pose_condition(f, suite, adapter, k);
    ASSERT_EQ(scaled.size(), one.size());
    for (const auto& [site, r] : one)
      for (std::size_t i = 0; i < r.size(); ++i) ASSERT_EQ(scaled.at(site)[i], k * r[i]) << site << " k=" << k;
  }
  for (const auto& [site, r] : make_pose_condition(f, suite, adapter, 0.0))
    for (double v : r.values()) ASSERT_EQ(v, 0.0);
}

TEST(PoseCondition, RejectsNegativeScaleAndBadDepth) {
  const FrameRecord f = toy_frame();
  auto suite = make_synthetic_suite();
  const auto adapter = ControlAdapter::seeded(toy_sites(), 17);
  EXPECT_EQ(test::error_kind_of([&] { make_pose_condition(f, suite, adapter, -0.1); }), ErrorKind::InvalidArgument);
  suite.depth = [](const FrameRecord&) { return Tensor(1, 8, 8); };
  EXPECT_EQ(test::error_kind_of([&] { make_pose_condition(f, suite, adapter, 1.0); }), ErrorKind::ProviderFailure);
}

TEST(SyntheticDepth, ObjectStandsOutFromTable) {
  const FrameRecord f = toy_frame(ObjectShape::Square);
  const Tensor d = make_synthetic_suite().depth(f);
  const Mask object = mask_from_rle(f.metadata["objects"][0]["mask_rle"]);
  double lo = 1.0, hi = 0.0;
  for (double v : d.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  // Just outside the object, on the table below it, depth differs.
  const PixelBox b = *bounding_box(object);
  const int cx = (b.x0 + b.x1) / 2;
  EXPECT_NE(d(0, b.y1 - 1, cx), d(0, b.y1 - 1, std::max(0, b.x0 - 2)));
}

TEST(Bundle, BuildsValidatedBundle) {
  const FrameRecord f = toy_frame();
  const auto models = default_condition_models(toy_sites());
  const auto b = build_condition_bundle(f, auto_prompt("red disk"), make_synthetic_suite(), models, 0.5);
  EXPECT_EQ(b.c_visual.rows(), 4);
  EXPECT_EQ(b.c_visual.cols(), 32);
  EXPECT_EQ(b.c_pose.size(), 2u);
  EXPECT_EQ(b.control_scale, 0.5);
  EXPECT_NO_THROW(b.validate(true));
}

TEST(Bundle, ErrorsNameTheFrame) {
  FrameRecord f = toy_frame();
  f.index = 7;
  const auto models = default_condition_models(toy_sites());
  try {
    build_condition_bundle(f, auto_prompt("teapot"), make_synthetic_suite(), models, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ObjectNotFound);
    EXPECT_NE(std::string(e.what()).find("frame 7: "), std::string::npos) << e.what();
  }
}

TEST(Bundle, ProviderExceptionsBecomeProviderFailure) {
  const FrameRecord f = toy_frame();
  auto suite = make_synthetic_suite();
  suite.depth = [](const FrameRecord&) -> Tensor { throw std::runtime_error("sensor offline"); };
  const auto models = default_condition_models(toy_sites());
  EXPECT_EQ(test::error_kind_of([&] { build_condition_bundle(f, auto_prompt("red disk"), suite, models, 1.0); }),
            ErrorKind::ProviderFailure);
}

TEST(Providers, ExclusiveSuiteCallsNeverOverlap) {
  ProviderSuite s = make_synthetic_suite();
  s.exclusive = true;
  auto inside = std::make_shared<std::atomic<int>>(0);
  auto overlap = std::make_shared<std::atomic<bool>>(false);
  s.text_embed = [inside, overlap](const std::string& t) {
    if (inside->fetch_add(1) != 0) overlap->store(true);
    std::this_thread::sleep_for(std::chrono::microseconds(200));
    inside->fetch_sub(1);
    return synthetic::word_embedding(t, 32);
  };
  const ProviderSuite wrapped = serialized(s);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&] {
      for (int k = 0; k < 20; ++k) wrapped.text_embed("red cup");
    });
  for (auto& t : threads) t.join();
  EXPECT_FALSE(overlap->load());
}

TEST(Providers, UnknownSuiteAndIncompletePlugin) {
  EXPECT_EQ(test::error_kind_of([] { ProviderRegistry::instance().make("nope"); }), ErrorKind::UnknownName);
  ProviderRegistry::instance().add("broken", [] { return ProviderSuite{}; });
  EXPECT_EQ(test::error_kind_of([] { ProviderRegistry::instance().make("broken"); }), ErrorKind::InvalidArgument);
}

TEST(Providers, EmbeddingsAreDeterministic) {
  const auto s = make_synthetic_suite();
  const Tensor img = render_prompt_image(ObjectShape::Disk, {0.2, 0.3, 0.8});
  EXPECT_EQ(s.image_embed(img), s.image_embed(img));
  EXPECT_EQ(s.text_embed("Blue  disk!"), s.text_embed("blue disk"));
  EXPECT_EQ(s.text_embed("blue disk").rows(), 2);
}
