#include <gtest/gtest.h>

#include <fstream>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "posefer/features.hpp"
#include "posefer/synth.hpp"

using namespace posefer;

namespace {

constexpr double kPi = std::numbers::pi;

GrayImage random_image(Rng& rng, int w, int h) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y) = rng.uniform();
  }
  return img;
}

GrayImage smooth_image(Rng& rng, int size) {
  GrayImage img(size, size);
  double a[4], fx[4], fy[4], ph[4];
  for (int i = 0; i < 4; ++i) {
    a[i] = rng.uniform(0.05, 0.12);
    fx[i] = rng.uniform(-0.3, 0.3);
    fy[i] = rng.uniform(-0.3, 0.3);
    ph[i] = rng.uniform(0, 2 * kPi);
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = 0.5;
      for (int i = 0; i < 4; ++i) v += a[i] * std::sin(fx[i] * x + fy[i] * y + ph[i]);
      img.at(x, y) = v;
    }
  }
  return img;
}

// Summed squared difference between the w x w patch around (x+dx, y+dy) and
// the one around (x, y), for integer offsets.
double patch_distance(const GrayImage& img, int x, int y, int dx, int dy, int w) {
  const int h = w / 2;
  double d = 0;
  for (int v = -h; v <= h; ++v) {
    for (int u = -h; u <= h; ++u) {
      const double diff = img.at(x + dx + u, y + dy + v) - img.at(x + u, y + v);
      d += diff * diff;
    }
  }
  return d;
}

Shape synthetic_face(int size) {
  SynthConfig c = SynthConfig::noise_free();
  c.image_size = size;
  FaceParams f;
  f.yaw_deg = 10;
  f.expression = Expression::Happy;
  return synth_landmarks(f, c);
}

}  // namespace

TEST(ImageGradients, ConstantImageHasZeroMagnitude) {
  const auto g = image_gradients(GrayImage(9, 7, 0.4));
  EXPECT_EQ(g.magnitude.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ImageGradients, HorizontalRampPointsEast) {
  const int w = 20;
  GrayImage img(w, 10);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<double>(x) / w;
  }
  const auto g = image_gradients(img);
  for (int y = 1; y < 9; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      EXPECT_LT(oracle::angle_gap(g.orientation(y, x), 0.0), 1e-12);
      EXPECT_NEAR(g.magnitude(y, x), g.magnitude(1, 1), 1e-12);
    }
  }
}

TEST(ImageGradients, QuarterTurnRotatesOrientations) {
  Rng rng(1);
  const int n = 32;
  const GrayImage img = smooth_image(rng, n);
  // rot(x', y') = img(n-1-y', x')
  GrayImage rot(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) rot.at(x, y) = img.at(n - 1 - y, x);
  }
  const auto g = image_gradients(img);
  const auto gr = image_gradients(rot);
  int checked = 0;
  for (int y = 1; y < n - 1; ++y) {
    for (int x = 1; x < n - 1; ++x) {
      if (g.magnitude(y, x) < 1e-3) continue;
      const int xr = y;
      const int yr = n - 1 - x;
      EXPECT_LT(oracle::angle_gap(gr.orientation(yr, xr), g.orientation(y, x) - kPi / 2), 0.05);
      ++checked;
    }
  }
  EXPECT_GT(checked, 500);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      EXPECT_GE(g.orientation(y, x), 0.0);
      EXPECT_LT(g.orientation(y, x), 2 * kPi);
    }
  }
}

TEST(ImageGradients, TooSmallImageThrows) {
  try {
    (void)image_gradients(GrayImage(2, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ImageTooSmall);
  }
}

TEST(SiftDescriptor, FlatRegionGivesZeroVector) {
  const auto d = sift_descriptor_at(GrayImage(40, 40, 0.7), Point2(20, 20), SiftParams{});
  ASSERT_EQ(d.size(), 128);
  EXPECT_EQ(d.norm(), 0.0);
}

TEST(SiftDescriptor, AlwaysHas128Entries) {
  Rng rng(2);
  const auto img = random_image(rng, 30, 30);
  for (int t = 0; t < 10; ++t) {
    const Point2 p(rng.uniform(0, 29), rng.uniform(0, 29));
    const auto d = sift_descriptor_at(img, p, SiftParams{});
    EXPECT_EQ(d.size(), 128);
    EXPECT_NEAR(d.norm(), 1.0, 1e-12);
  }
}

TEST(SiftDescriptor, VerticalEdgeMassInHorizontalOrientationBins) {
  GrayImage img(41, 41, 0.2);
  for (int y = 0; y < 41; ++y) {
    for (int x = 21; x < 41; ++x) img.at(x, y) = 0.9;
  }
  SiftParams p;
  p.patch_radius = 10;
  const auto d = sift_descriptor_at(img, Point2(20.5, 20), p);
  // Accumulate orientation histograms directly from the gradient field: the
  // edge produces gradients pointing along +x only.
  const auto g = image_gradients(img);
  double along = 0, total = 0;
  for (int y = 10; y <= 30; ++y) {
    for (int x = 11; x <= 30; ++x) {
      total += g.magnitude(y, x);
      if (oracle::angle_gap(g.orientation(y, x), 0.0) < 1e-9 || oracle::angle_gap(g.orientation(y, x), kPi) < 1e-9) {
        along += g.magnitude(y, x);
      }
    }
  }
  ASSERT_NEAR(along, total, 1e-12);
  double in_bins = 0;
  for (int i = 0; i < 128; ++i) {
    if (i % 8 == 0 || i % 8 == 4) in_bins += d(i);
  }
  EXPECT_GE(in_bins / d.sum(), 0.8);
}

TEST(SiftDescriptor, KeypointOutsideImageThrows) {
  try {
    (void)sift_descriptor_at(GrayImage(10, 10), Point2(10.5, 3), SiftParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PointOutOfImage);
  }
}

TEST(SiftFaceFeature, DimensionIs8704) {
  Rng rng(3);
  const Shape lm = synthetic_face(64);
  const auto img = render_face(lm, 64, 0.02, rng);
  const auto f = sift_face_feature(img, lm, SiftParams{});
  EXPECT_EQ(f.dim(), 8704);
  EXPECT_EQ(f.family, FeatureFamily::Sift);
  EXPECT_EQ(kSiftFaceDim, 8704);
}

TEST(SiftFaceFeature, LandmarkOrderPermutesBlocksAndIsDeterministic) {
  Rng rng(4);
  const Shape lm = synthetic_face(64);
  const auto img = render_face(lm, 64, 0.02, rng);
  const auto& perm = default_flip_permutation();
  Shape permuted(68, 2);
  for (int j = 0; j < 68; ++j) permuted.row(j) = lm.row(perm[static_cast<std::size_t>(j)]);
  const auto a = sift_face_feature(img, lm, SiftParams{});
  const auto b = sift_face_feature(img, permuted, SiftParams{});
  for (int j = 0; j < 68; ++j) {
    EXPECT_EQ(b.values.segment(j * 128, 128), a.values.segment(perm[static_cast<std::size_t>(j)] * 128, 128));
  }
  EXPECT_EQ(sift_face_feature(img, lm, SiftParams{}).values, a.values);
}

TEST(SiftFaceFeature, DefaultPatchRadiusIsClamped) {
  Shape tight = Shape::Zero(68, 2);
  for (int i = 0; i < 68; ++i) tight(i, 0) = 0.1 * i;
  EXPECT_EQ(default_patch_radius(tight), 6.0);
  Shape wide = tight * 1000.0;
  EXPECT_EQ(default_patch_radius(wide), 24.0);
  Shape mid = tight * 40.0;  // spacing 4 -> 10
  EXPECT_NEAR(default_patch_radius(mid), 10.0, 1e-12);
}

TEST(LbpCode, ConstantPatchIsZero) { EXPECT_EQ(lbp_code(GrayImage(3, 3, 0.5), 1, 1, 1.0), 0); }

TEST(LbpCode, DarkCenterSetsEveryBit) {
  GrayImage img(5, 5, 0.8);
  img.at(2, 2) = 0.1;
  EXPECT_EQ(lbp_code(img, 2, 2, 1.0), 255);
  EXPECT_EQ(lbp_code(img, 2, 2, 1.5), 255);
}

TEST(LbpCode, EastAndNorthBrighterGivesFive) {
  GrayImage img(3, 3, 0.2);
  img.at(1, 1) = 0.6;
  img.at(2, 1) = 0.9;  // east, bit 0
  img.at(1, 0) = 0.9;  // north, bit 2
  // Bits are i = 0..7 at angles 0, 45, ..., 315 degrees counter-clockwise.
  // The north-east sample interpolates to about 0.52, below the center, so
  // only the east (0) and north (2) comparisons succeed.
  EXPECT_EQ(lbp_code(img, 1, 1, 1.0), 5);
}

TEST(LbpCode, RingOutsideImageThrows) {
  try {
    (void)lbp_code(GrayImage(3, 3), 0, 1, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RingOutOfImage);
  }
}

TEST(TplbpCode, ConstantImageIsZero) { EXPECT_EQ(tplbp_code(GrayImage(9, 9, 0.3), 4, 4, TplbpParams{}), 0); }

TEST(TplbpCode, HandBuiltPatchSetsBitZero) {
  GrayImage img(9, 9, 0.0);
  for (int y = 3; y <= 5; ++y) {
    img.at(6, y) = 1.0;
    img.at(7, y) = 1.0;
  }
  const TplbpParams p;
  // Ring patch 0 sits 2 px east, ring patch alpha = 2 sits 2 px north.
  const double d0 = patch_distance(img, 4, 4, 2, 0, 3);
  const double d2 = patch_distance(img, 4, 4, 0, -2, 3);
  ASSERT_EQ(d0, 6.0);
  ASSERT_EQ(d2, 0.0);
  const auto code = tplbp_code(img, 4, 4, p);
  EXPECT_TRUE(code & 1u);
  // Bit 6 compares patch 6 (2 px south) with patch 0: 0 - 6 < tau.
  EXPECT_FALSE(code & (1u << 6));
}

TEST(TplbpCode, CodesAreBytesAndPatchesMustFit) {
  Rng rng(5);
  const auto img = random_image(rng, 12, 12);
  for (int y = 3; y < 9; ++y) {
    for (int x = 3; x < 9; ++x) {
      const int c = tplbp_code(img, x, y, TplbpParams{});
      EXPECT_GE(c, 0);
      EXPECT_LE(c, 255);
    }
  }
  try {
    (void)tplbp_code(img, 2, 5, TplbpParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PatchOutOfImage);
  }
}

TEST(TplbpCode, CodeMapMatchesPointwiseCodes) {
  Rng rng(6);
  const auto img = random_image(rng, 20, 17);
  for (double r : {2.0, 1.5}) {
    TplbpParams p;
    p.ring_radius = r;
    const auto map = tplbp_code_map(img, p);
    for (int y = map.y0; y < map.y0 + map.height; ++y) {
      for (int x = map.x0; x < map.x0 + map.width; ++x) EXPECT_EQ(map.at(x, y), tplbp_code(img, x, y, p));
    }
  }
}

TEST(TplbpCode, OnePixelChangeStaysLocal) {
  Rng rng(7);
  auto img = random_image(rng, 24, 24);
  const TplbpParams p;
  const auto before = tplbp_code_map(img, p);
  img.at(11, 13) = 1.0 - img.at(11, 13);
  const auto after = tplbp_code_map(img, p);
  const int m = p.margin();
  for (int y = before.y0; y < before.y0 + before.height; ++y) {
    for (int x = before.x0; x < before.x0 + before.width; ++x) {
      if (std::abs(x - 11) > m || std::abs(y - 13) > m) EXPECT_EQ(before.at(x, y), after.at(x, y));
    }
  }
}

TEST(TplbpGrid, CellHistogramsCountCodedPixels) {
  Rng rng(8);
  const auto img = random_image(rng, 50, 45);
  const TplbpParams p;
  const auto f = tplbp_grid_feature(img, p);
  ASSERT_EQ(f.dim(), 16 * 256);
  const int m = p.margin();
  const int cw = 50 - 2 * m;
  const int ch = 45 - 2 * m;
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(16 * 256);
  for (int y = m; y < 45 - m; ++y) {
    for (int x = m; x < 50 - m; ++x) {
      const int cell = ((y - m) * 4 / ch) * 4 + (x - m) * 4 / cw;
      expected(cell * 256 + tplbp_code(img, x, y, p)) += 1;
    }
  }
  EXPECT_EQ(f.values, expected);
  EXPECT_EQ(f.values.sum(), cw * ch);
}

TEST(TplbpGrid, DefaultGridHas4096Bins) {
  Rng rng(9);
  EXPECT_EQ(tplbp_grid_feature(random_image(rng, 64, 64), TplbpParams{}).dim(), 4096);
}

TEST(TplbpGrid, ConstantImageIsPointMassAtZero) {
  const auto f = tplbp_grid_feature(GrayImage(40, 40, 0.5), TplbpParams{});
  for (int c = 0; c < 16; ++c) {
    const auto cell = f.values.segment(c * 256, 256);
    EXPECT_GT(cell(0), 0);
    EXPECT_EQ(cell.sum(), cell(0));
  }
}

TEST(TplbpGrid, TooSmallImageThrows) {
  try {
    (void)tplbp_grid_feature(GrayImage(20, 40), TplbpParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ImageTooSmall);
  }
}

TEST(TplbpRegion, WholeCodableAreaEqualsOneCellGrid) {
  Rng rng(10);
  const auto img = random_image(rng, 30, 30);
  TplbpParams p;
  const int m = p.margin();
  const std::vector<Rect> all{{m, m, 30 - 2 * m, 30 - 2 * m}};
  p.grid_rows = p.grid_cols = 1;
  EXPECT_EQ(tplbp_region_feature(img, all, p).values, tplbp_grid_feature(img, p).values);
}

TEST(TplbpRegion, PixelsOutsideSupportDoNotMatter) {
  Rng rng(11);
  auto img = random_image(rng, 40, 40);
  const TplbpParams p;
  const std::vector<Rect> regions{{5, 5, 6, 6}, {25, 20, 8, 5}};
  const auto before = tplbp_region_feature(img, regions, p);
  const int m = p.margin();
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 40; ++x) {
      bool near = false;
      for (const auto& r : regions) {
        near = near || (x >= r.x - m && x < r.x + r.width + m && y >= r.y - m && y < r.y + r.height + m);
      }
      if (!near) img.at(x, y) = rng.uniform();
    }
  }
  EXPECT_EQ(tplbp_region_feature(img, regions, p).values, before.values);
}

TEST(TplbpRegion, OverlapIsCountedTwice) {
  Rng rng(12);
  const auto img = random_image(rng, 30, 30);
  const TplbpParams p;
  const std::vector<Rect> regions{{5, 5, 10, 10}, {10, 10, 10, 10}};
  const auto f = tplbp_region_feature(img, regions, p);
  EXPECT_EQ(f.values.head(256).sum(), 100);
  EXPECT_EQ(f.values.tail(256).sum(), 100);
  const std::vector<Rect> overlap{{10, 10, 5, 5}};
  const auto o = tplbp_region_feature(img, overlap, p).values;
  // The shared 5 x 5 block appears in full inside both histograms.
  EXPECT_TRUE(((f.values.head(256) - o).array() >= 0).all());
  EXPECT_TRUE(((f.values.tail(256) - o).array() >= 0).all());
}

TEST(TplbpRegion, OutOfImageRegionThrows) {
  const std::vector<Rect> bad{{25, 25, 10, 10}};
  try {
    (void)tplbp_region_feature(GrayImage(30, 30), bad, TplbpParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RegionOutOfImage);
  }
}

TEST(TplbpRegion, DefaultFaceRegionsFitTheImage) {
  const Shape lm = synthetic_face(64);
  const auto regions = default_face_regions(lm, 64, 64, TplbpParams{});
  ASSERT_EQ(regions.size(), 6u);
  Rng rng(13);
  const auto img = render_face(lm, 64, 0.0, rng);
  const auto f = tplbp_region_feature(img, regions, TplbpParams{});
  EXPECT_EQ(f.dim(), 6 * 256);
  for (std::size_t k = 0; k < regions.size(); ++k) {
    EXPECT_EQ(f.values.segment(static_cast<Eigen::Index>(k) * 256, 256).sum(), regions[k].width * regions[k].height);
  }
}

TEST(GeometricFeature, LengthAndLayout) {
  Rng rng(14);
  const Shape s = oracle::random_shape(rng, 68);
  const auto f = geometric_feature(s);
  EXPECT_EQ(f.dim(), 136);
  EXPECT_EQ(f.family, FeatureFamily::Geom);
  EXPECT_EQ(f.values(0), s(0, 0));
  EXPECT_EQ(f.values(68), s(0, 1));
  EXPECT_EQ(unvectorize(f.values), s);
}

TEST(GeometricFeature, FlipPermutesAndNegatesX) {
  Rng rng(15);
  const Shape s = oracle::random_shape(rng, 68);
  const auto& perm = default_flip_permutation();
  const auto f = geometric_feature(flip_reorder(s, perm)).values;
  const auto g = geometric_feature(s).values;
  for (int j = 0; j < 68; ++j) {
    const int src = perm[static_cast<std::size_t>(j)];
    EXPECT_EQ(f(j), -g(src));
    EXPECT_EQ(f(68 + j), g(68 + src));
  }
}

TEST(GeometricFeature, WrongPointCountThrows) {
  try {
    (void)geometric_feature(Shape::Zero(67, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongPointCount);
  }
}

TEST(NormalizeFeature, Examples) {
  const Eigen::VectorXd a = normalize_feature((Eigen::VectorXd(2) << 1, -1).finished());
  EXPECT_NEAR(a(0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(a(1), -1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(normalize_feature(Eigen::VectorXd::Constant(3, 3.0)), Eigen::VectorXd::Zero(3));
  Rng rng(16);
  Eigen::VectorXd v(50);
  for (auto& x : v) x = rng.normal(3, 2);
  const auto once = normalize_feature(v);
  EXPECT_LT((normalize_feature(once) - once).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(once.norm(), 1.0, 1e-12);
  EXPECT_NEAR(once.mean(), 0.0, 1e-15);
}

TEST(PcaReducer, RankTwoDataKeepsTwoAxes) {
  Rng rng(17);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(10), w = Eigen::VectorXd::Zero(10);
  u(1) = 1;
  w(7) = 1;
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 30; ++i) samples.push_back(rng.normal(0, 3) * u + rng.normal(0, 2) * w);
  const auto r = pca_reduce_fit(samples, 0.95);
  EXPECT_EQ(r.out_dim(), 2);
}

TEST(PcaReducer, RetainsRequestedVarianceShare) {
  Rng rng(18);
  Eigen::MatrixXd x(20, 60);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = rng.normal(0, 1.0 + 0.5 * static_cast<double>(i));
  }
  const auto r = pca_reduce_fit(x, 0.95);
  const double total = oracle::covariance(x).trace();
  EXPECT_GE(r.kept_variances.sum() / total, 0.95);
  EXPECT_GE(r.retained_ratio, 0.95);
  // Minimality: one axis fewer would fall short.
  EXPECT_LT(r.kept_variances.head(r.out_dim() - 1).sum() / total, 0.95);
}

TEST(PcaReducer, ReconstructionErrorIsDiscardedVariance) {
  Rng rng(19);
  // 50 samples of dimension 20.
  Eigen::MatrixXd x(20, 50);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = rng.normal(0, 1.0 + 0.2 * static_cast<double>(i));
  }
  const auto r = pca_reduce_fit(x, 0.8);
  const auto ref = oracle::jacobi_eigen(oracle::covariance(x));
  const double discarded = ref.values.tail(20 - r.out_dim()).sum();
  double err = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::VectorXd z = pca_reduce_apply(r, x.col(j));
    const Eigen::VectorXd back = r.mean + r.projection * z;
    err += (x.col(j) - back).squaredNorm();
  }
  // Per-sample squared error with the same 1/(M-1) normalization as the variances.
  EXPECT_NEAR(err / 49.0, discarded, 1e-8);
  EXPECT_NEAR(r.discarded_variance, discarded, 1e-8);
}

TEST(PcaReducer, ApplyExamples) {
  Rng rng(20);
  Eigen::MatrixXd x(6, 25);
  for (auto& v : x.reshaped()) v = rng.normal();
  const auto r = pca_reduce_fit(x, 1.0);
  EXPECT_LT(pca_reduce_apply(r, r.mean).norm(), 1e-15);
  const auto e1 = pca_reduce_apply(r, Eigen::VectorXd(r.mean + r.projection.col(0)));
  EXPECT_NEAR(e1(0), 1.0, 1e-12);
  EXPECT_LT(e1.tail(e1.size() - 1).norm(), 1e-12);
  const auto r2 = pca_reduce_fit(x, 0.6);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd v(6), w(6);
    for (auto& c : v) c = rng.normal(0, 2);
    for (auto& c : w) c = rng.normal(0, 2);
    EXPECT_LE(pca_reduce_apply(r2, v).norm(), (v - r2.mean).norm() + 1e-12);
    const double full = (v - w).squaredNorm();
    const double reduced = (pca_reduce_apply(r2, v) - pca_reduce_apply(r2, w)).squaredNorm();
    EXPECT_LE(reduced, full + 1e-9);
  }
  try {
    (void)pca_reduce_apply(r, Eigen::VectorXd::Zero(5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  std::vector<Eigen::VectorXd> one{Eigen::VectorXd::Zero(3)};
  try {
    (void)pca_reduce_fit(one, 0.9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
  }
}

TEST(PcaReducer, TextRoundTripIsLossless) {
  Rng rng(21);
  Eigen::MatrixXd x(7, 15);
  for (auto& v : x.reshaped()) v = rng.normal();
  const auto r = pca_reduce_fit(x, 0.9);
  const auto back = deserialize_reducer(serialize_reducer(r));
  EXPECT_EQ(back.mean, r.mean);
  EXPECT_EQ(back.projection, r.projection);
  EXPECT_EQ(back.kept_variances, r.kept_variances);
  EXPECT_EQ(back.retained_ratio, r.retained_ratio);
}

TEST(CombineFeatures, ConcatenatesInOrder) {
  std::vector<FeatureVector> parts{{FeatureFamily::Sift, Eigen::VectorXd::Constant(3000, 1.0)},
                                   {FeatureFamily::TplbpGrid, Eigen::VectorXd::Constant(4096, 2.0)},
                                   {FeatureFamily::Geom, Eigen::VectorXd::Constant(136, 3.0)}};
  const auto c = combine_features(parts);
  EXPECT_EQ(c.dim(), 7232);
  EXPECT_EQ(c.family, FeatureFamily::Combined);
  EXPECT_EQ(c.values(2999), 1.0);
  EXPECT_EQ(c.values(3000), 2.0);
  EXPECT_EQ(c.values(7231), 3.0);
  std::vector<FeatureVector> one{parts[2]};
  EXPECT_EQ(combine_features(one).values, parts[2].values);
  std::vector<FeatureVector> swapped{parts[2], parts[0]};
  const auto s = combine_features(swapped);
  EXPECT_EQ(s.values.head(136), parts[2].values);
  EXPECT_EQ(s.values.tail(3000), parts[0].values);
}

TEST(FeatureMatrixFile, RoundTripAndValidation) {
  Rng rng(22);
  FeatureMatrix m;
  m.family = FeatureFamily::TplbpRegion;
  m.rows.resize(4, 9);
  for (auto& v : m.rows.reshaped()) v = rng.normal();
  const auto path = (std::filesystem::temp_directory_path() / "posefer_fm_test.bin").string();
  write_feature_matrix(m, path);
  const auto back = read_feature_matrix(path);
  EXPECT_EQ(back.family, m.family);
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 4 + 8 + 8 + 4 + 4 * 9 * 8);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  EXPECT_THROW((void)read_feature_matrix(path), Error);
  std::filesystem::remove(path);
}

TEST(FeatureFamilyNames, RoundTrip) {
  for (auto f : {FeatureFamily::Sift, FeatureFamily::TplbpGrid, FeatureFamily::TplbpRegion, FeatureFamily::Geom,
                 FeatureFamily::Combined}) {
    EXPECT_EQ(parse_family(family_name(f)), f);
  }
  EXPECT_THROW((void)parse_family("hog"), Error);
}
