#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rsc/eval_metrics.hpp"
#include "rsc/toy_scene.hpp"
#include "test_util.hpp"

using namespace rsc;

namespace {

Mask box_layout(const PixelBox& editable, int h, int w) { return box_mask(editable, h, w).inverted(); }

}  // namespace

TEST(RegionMetrics, KnownErrorGivesKnownPsnr) {
  const Tensor a(3, 8, 8, 0.5);
  Tensor b = a;
  for (double& v : b.values()) v += 0.1;
  const auto [psnr, mae] = region_psnr_mae(a, b, Mask(8, 8, 1));
  EXPECT_NEAR(psnr, 20.0, 1e-9);
  EXPECT_NEAR(mae, 0.1, 1e-12);
  EXPECT_EQ(region_psnr_mae(a, a, Mask(8, 8, 1)).first, kPsnrCap);
  EXPECT_EQ(region_psnr_mae(a, b, Mask(8, 8, 0)), (std::pair<double, double>{kPsnrCap, 0.0}));
}

TEST(RegionMetrics, NeverReadsOutsideRegion) {
  std::mt19937_64 rng(1);
  const Tensor a = test::random_tensor({3, 10, 10}, 1, 0, 1), b = test::random_tensor({3, 10, 10}, 2, 0, 1);
  Mask region(10, 10);
  for (int y = 2; y < 7; ++y)
    for (int x = 3; x < 9; ++x) region.set(y, x, true);
  Tensor poisoned = b;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x)
        if (!region(y, x)) poisoned(c, y, x) = NAN;
  EXPECT_EQ(region_psnr_mae(a, b, region), region_psnr_mae(a, poisoned, region));
}

TEST(RegionMetrics, SymmetricInArguments) {
  const Tensor a = test::random_tensor({3, 6, 6}, 3, 0, 1), b = test::random_tensor({3, 6, 6}, 4, 0, 1);
  EXPECT_EQ(region_psnr_mae(a, b, Mask(6, 6, 1)), region_psnr_mae(b, a, Mask(6, 6, 1)));
}

TEST(FrameFidelity, PreservedRegionExcludesMargin) {
  const Tensor a(3, 16, 16, 0.5);
  Tensor b = a;
  // Changes inside editable ∪ margin must not affect preserved metrics.
  for (int c = 0; c < 3; ++c)
    for (int y = 2; y < 12; ++y)
      for (int x = 2; x < 12; ++x) b(c, y, x) = 0.9;
  const auto f = frame_fidelity(a, b, box_layout({6, 6, 8, 8}, 16, 16), std::nullopt, {4, kChangeThreshold, 2});
  EXPECT_EQ(f.preserved_psnr, kPsnrCap);
  EXPECT_EQ(f.preserved_mae, 0.0);
  EXPECT_NEAR(f.change_magnitude, 0.4, 1e-12);
  EXPECT_EQ(f.flags, std::vector<std::string>{"no_requested_box"});
}

TEST(FrameFidelity, FlagsEmptyCases) {
  const Tensor a(3, 16, 16, 0.5);
  const auto same = frame_fidelity(a, a, box_layout({2, 2, 4, 4}, 16, 16), NormalizedBox{0.125, 0.125, 0.25, 0.25});
  EXPECT_EQ(same.flags, std::vector<std::string>{"no_change_support"});
  EXPECT_EQ(same.placement_iou, 0.0);
  const auto all = frame_fidelity(a, a, Mask(16, 16, 0), std::nullopt);
  EXPECT_EQ(all.flags.front(), "empty_preserved_region");
}

TEST(ChangeSupport, KeepsLargestComponent) {
  const Tensor a(3, 12, 12, 0.2);
  Tensor b = a;
  for (int y = 1; y < 3; ++y)
    for (int x = 1; x < 3; ++x) b(0, y, x) = 0.8;  // 4 px
  for (int y = 5; y < 10; ++y)
    for (int x = 5; x < 9; ++x) b(1, y, x) = 0.8;  // 20 px
  const Mask s = change_support(a, b);
  EXPECT_EQ(s.count(), 20u);
  EXPECT_TRUE(s(5, 5));
  EXPECT_FALSE(s(1, 1));
}

TEST(ChangeSupport, ThresholdIsStrict) {
  const Tensor a(3, 2, 2, 0.0);
  Tensor b = a;
  b(0, 0, 0) = kChangeThreshold;
  b(0, 1, 1) = 2 * kChangeThreshold;
  const Mask m = change_mask(a, b);
  EXPECT_FALSE(m(0, 0));
  EXPECT_TRUE(m(1, 1));
}

TEST(CompositingOracle, PastedBoxGivesHighIou) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Tensor base(3, 32, 32, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const double x0 = u(rng) * 0.7, y0 = u(rng) * 0.7;
    const NormalizedBox box{x0, y0, x0 + 0.1 + u(rng) * 0.2, y0 + 0.1 + u(rng) * 0.2};
    const Tensor edited = paste_box(base, box, {0.9, 0.1, 0.1});
    const auto f = frame_fidelity(base, edited, box_mask(to_pixels(box, 32, 32), 32, 32).inverted(), box);
    EXPECT_GE(f.placement_iou, 0.9);
  }
}

TEST(ToyScene, DiskAreaWithinFivePercent) {
  for (double r : {4.0, 6.0, 8.0, 10.0}) {
    const Mask m = render_shape_mask(ObjectShape::Disk, 16.0, 16.0, r, 32, 32);
    EXPECT_NEAR(static_cast<double>(m.count()), M_PI * r * r, 0.05 * M_PI * r * r) << r;
  }
  const Mask sq = render_shape_mask(ObjectShape::Square, 16.0, 16.0, 6.0, 32, 32);
  EXPECT_EQ(sq.count(), 144u);
}

TEST(ToyScene, RespectsBoundsAndDeterminism) {
  ToySceneSpec spec;
  spec.radius = 30;
  EXPECT_EQ(test::error_kind_of([&] { make_toy_scene(spec, 3, 1); }), ErrorKind::InvalidArgument);
  const auto a = make_toy_scene(ToySceneSpec{}, 4, 9), b = make_toy_scene(ToySceneSpec{}, 4, 9);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.frames[i].image, b.frames[i].image);
}

TEST(Report, AggregatesAndSerializes) {
  TrajectoryRecord o = make_toy_scene(ToySceneSpec{}, 3, 1), e = o;
  for (double& v : e.frames[1].image.values()) v = std::min(1.0, v + 0.2);
  const std::vector<Mask> layouts(3, box_layout({10, 10, 20, 20}, 32, 32));
  const auto r = fidelity_report(o, e, layouts, {});
  ASSERT_EQ(r.frames.size(), 3u);
  EXPECT_EQ(r.frames[0].preserved_psnr, kPsnrCap);
  EXPECT_LT(r.min_psnr, kPsnrCap);
  EXPECT_EQ(r.min_psnr, r.frames[1].preserved_psnr);
  const json j = to_json(r);
  EXPECT_EQ(j["frames"].size(), 3u);
  EXPECT_DOUBLE_EQ(j["aggregate"]["min_psnr"].get<double>(), r.min_psnr);
}

TEST(Report, FrameCountMismatch) {
  const TrajectoryRecord o = make_toy_scene(ToySceneSpec{}, 3, 1), e = make_toy_scene(ToySceneSpec{}, 2, 1);
  const std::vector<Mask> layouts(3, Mask(32, 32, 1));
  EXPECT_EQ(test::error_kind_of([&] { fidelity_report(o, e, layouts, {}); }), ErrorKind::InconsistentGeometry);
}

TEST(Grid, LaysOutCellsWithGutter) {
  const Tensor a(3, 4, 4, 1.0), b(3, 4, 4, 0.0);
  const Tensor g = image_grid({{a, b}});
  EXPECT_EQ(g.height(), 4 + 4);
  EXPECT_EQ(g.width(), 2 * 4 + 3 * 2);
  EXPECT_EQ(g(0, 2, 2), 1.0);
  EXPECT_EQ(g(0, 2, 8), 0.0);
  EXPECT_NEAR(g(0, 0, 0), 0.1, 1e-12);
}
