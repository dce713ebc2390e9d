#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "conked/descriptors.hpp"
#include "conked/error.hpp"
#include "conked/evalkit.hpp"
#include "conked/synth.hpp"

using namespace conked;

namespace {

// Dense sampling of the curve, independent of the builder's polylines.
double curve_distance(const VesselCurve& c, Point2 p) {
  double best = 1e300;
  for (int i = 0; i <= 4000; ++i) best = std::min(best, distance(c.at(i / 4000.0), p));
  return best;
}

double corner_error(const Homography& a, const Homography& b, int w, int h) {
  double sum = 0;
  for (Point2 c : {Point2{0, 0}, Point2{double(w - 1), 0}, Point2{0, double(h - 1)}, Point2{double(w - 1), double(h - 1)}})
    sum += distance(apply_homography(a, c), apply_homography(b, c));
  return sum / 4;
}

}  // namespace

TEST(SynthTree, NoBranchesNoKeypoints) {
  VesselTreeSpec s;
  s.n_branches = 0;
  s.n_crossovers = 0;
  s.n_bifurcations = 0;
  const auto t = generate_tree(s);
  EXPECT_TRUE(t.keypoints.empty());
  EXPECT_TRUE(t.scene.curves.empty());
  // Only background: re-rendering the scene with its texture but no vessels
  // reproduces the image exactly.
  EXPECT_EQ(render_scene(t.scene, Homography::identity(), s.width, s.height), t.image);
}

TEST(SynthTree, KeypointsWithoutBranchesInfeasible) {
  VesselTreeSpec s;
  s.n_branches = 0;
  try {
    generate_tree(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::spec_infeasible);
  }
}

TEST(SynthTree, DeterministicPerSeed) {
  VesselTreeSpec s;
  s.seed = 17;
  const auto a = generate_tree(s), b = generate_tree(s);
  EXPECT_EQ(a.image, b.image);
  ASSERT_EQ(a.keypoints.size(), b.keypoints.size());
  s.seed = 18;
  EXPECT_FALSE(generate_tree(s).image == a.image);
}

TEST(SynthTree, ExactRequestedCounts) {
  VesselTreeSpec s;
  s.width = s.height = 128;
  s.n_branches = 3;
  s.n_crossovers = 10;
  s.n_bifurcations = 15;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    const auto t = generate_tree(s);
    EXPECT_EQ(t.keypoints.count(KeypointClass::crossover), 10u);
    EXPECT_EQ(t.keypoints.count(KeypointClass::bifurcation), 15u);
  }
}

TEST(SynthTree, KeypointsSitOnTheirVessels) {
  VesselTreeSpec s;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    s.seed = seed;
    const auto t = generate_tree(s);
    for (const auto& k : t.keypoints.points) {
      EXPECT_EQ(k.location.x, std::round(k.location.x));
      EXPECT_EQ(k.location.y, std::round(k.location.y));
      int near = 0, starts = 0;
      for (const auto& c : t.scene.curves) {
        if (curve_distance(c, k.location) <= 0.75) ++near;
        if (c.parent >= 0 && distance(c.p0, k.location) < 1e-9) ++starts;
      }
      if (k.cls == KeypointClass::crossover) {
        EXPECT_GE(near, 2) << "crossover off its vessels";
      } else {
        EXPECT_EQ(starts, 1) << "bifurcation without a child start";
        EXPECT_GE(near, 2);
      }
    }
    for (std::size_t a = 0; a < t.keypoints.size(); ++a)
      for (std::size_t b = a + 1; b < t.keypoints.size(); ++b)
        EXPECT_GE(distance(t.keypoints.points[a].location, t.keypoints.points[b].location), s.min_separation);
  }
}

TEST(SynthCase, ForcedIdentityReproducesFixedImage) {
  CaseOptions opt;
  opt.force_identity = true;
  const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::high_overlap, 3, opt);
  EXPECT_EQ(c.image_fixed, c.image_moving);
  RegistrationCase rc{"x", Category::S, c.control_points, {}};
  EXPECT_EQ(case_error(rc, Homography::identity()), 0.0);
}

TEST(SynthCase, GroundTruthIsSelfConsistent) {
  for (auto cat : {CategoryAnalog::high_overlap, CategoryAnalog::low_overlap, CategoryAnalog::appearance_change}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto c = generate_case(VesselTreeSpec{}, cat, seed);
      ASSERT_EQ(c.control_points.size(), 10u);
      RegistrationCase rc{"x", to_category(cat), c.control_points, {}};
      EXPECT_LT(case_error(rc, c.gt_homography), 1e-9);
      for (std::size_t i = 0; i < c.gt_keypoints_moving.size(); ++i) {
        const Point2 back = apply_homography(c.gt_homography, c.gt_keypoints_moving.points[i].location);
        EXPECT_LT(distance(back, c.gt_keypoints_fixed.points[c.moving_source[i]].location), 1e-9);
      }
    }
  }
}

TEST(SynthCase, MovingKeypointsAreTheWarpedFixedSet) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::high_overlap, seed);
    const auto warped = transform_keypoints(c.gt_keypoints_fixed, c.gt_homography.inverse(), 64, 64);
    ASSERT_EQ(warped.keypoints.size(), c.gt_keypoints_moving.size());
    EXPECT_EQ(warped.source_index, c.moving_source);
  }
}

TEST(SynthCase, LowOverlapSharesLessThanHalf) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::low_overlap, seed);
    // Content mask: only pixels that see the fixed canvas can be non-black.
    std::size_t lit = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (c.image_moving.at(x, y, 0) + c.image_moving.at(x, y, 1) + c.image_moving.at(x, y, 2) > 0) ++lit;
    EXPECT_LT(static_cast<double>(lit) / (64.0 * 64.0), 0.5);
    EXPECT_LT(shared_fraction(c.gt_homography, 64, 64), 0.5);
    EXPECT_GE(c.gt_keypoints_moving.size(), 4u);
  }
}

TEST(SynthCase, AppearanceChangeRemovesStructures) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::appearance_change, seed);
    const auto warped = transform_keypoints(c.gt_keypoints_fixed, c.gt_homography.inverse(), 64, 64);
    EXPECT_LT(c.gt_keypoints_moving.size(), warped.keypoints.size());
    const std::size_t removed = warped.keypoints.size() - c.gt_keypoints_moving.size();
    EXPECT_LE(removed, std::max<std::size_t>(1, warped.keypoints.size() / 5));
    for (std::size_t s : c.moving_source)
      EXPECT_NE(std::find(warped.source_index.begin(), warped.source_index.end(), s), warped.source_index.end());
  }
}

TEST(SynthCase, CategoryMix) {
  EXPECT_EQ(category_mix(134), (std::array<int, 3>{71, 49, 14}));
  EXPECT_EQ(category_mix(0), (std::array<int, 3>{0, 0, 0}));
  for (int n = 1; n < 200; ++n) {
    const auto m = category_mix(n);
    EXPECT_EQ(m[0] + m[1] + m[2], n);
    EXPECT_LE(std::abs(m[0] - n * 71.0 / 134.0), 1.0);
    EXPECT_LE(std::abs(m[1] - n * 49.0 / 134.0), 1.0);
    EXPECT_LE(std::abs(m[2] - n * 14.0 / 134.0), 1.0);
  }
}

TEST(SynthCase, SaveLoadRoundTrip) {
  auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::appearance_change, 5);
  c.id = "case_5";
  const auto dir = std::filesystem::temp_directory_path() / "conked_synth_case";
  std::filesystem::remove_all(dir);
  save_case(dir, c);
  const auto back = load_case(dir);
  EXPECT_EQ(back.id, "case_5");
  EXPECT_EQ(back.category, CategoryAnalog::appearance_change);
  EXPECT_EQ(back.moving_source, c.moving_source);
  EXPECT_EQ(back.gt_keypoints_moving.size(), c.gt_keypoints_moving.size());
  EXPECT_LT(corner_error(back.gt_homography, c.gt_homography, 64, 64), 1e-9);
  for (std::size_t i = 0; i < c.image_fixed.data.size(); ++i)
    EXPECT_NEAR(back.image_fixed.data[i], c.image_fixed.data[i], 0.5 / 255 + 1e-6);
  std::filesystem::remove_all(dir);
}

TEST(SynthCase, OraclePipelineRecoversHomography) {
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::high_overlap, 1000 + seed);
    auto detect = [](const KeypointSet& gt) {
      const auto [cross, bif] = rasterize_keypoints(gt, 64, 64);
      return extract_keypoints(make_target_heatmaps(cross, bif));
    };
    const auto kf = detect(c.gt_keypoints_fixed), km = detect(c.gt_keypoints_moving);
    // One-hot descriptors keyed by the fixed-set identity of each detection.
    const std::size_t dim = c.gt_keypoints_fixed.size();
    auto identity_of = [&](const Keypoint& k, bool moving) {
      const auto& set = moving ? c.gt_keypoints_moving : c.gt_keypoints_fixed;
      for (std::size_t i = 0; i < set.size(); ++i)
        if (distance(set.points[i].location, k.location) <= 0.75) return moving ? c.moving_source[i] : i;
      ADD_FAILURE() << "detection without ground truth";
      return std::size_t{0};
    };
    auto describe = [&](const KeypointSet& ks, bool moving) {
      DescriptorSet d;
      d.dim = static_cast<int>(dim);
      for (const auto& k : ks.points) {
        std::vector<float> v(dim, 0.0f);
        v[identity_of(k, moving)] = 1.0f;
        d.push_back(v, k.cls, k.location);
      }
      return d;
    };
    const auto df = describe(kf, false), dm = describe(km, true);
    const auto matches = mutual_match_classwise(df, dm);
    RansacConfig cfg;
    cfg.seed = seed;
    try {
      const auto fit = ransac_homography(to_correspondences(matches, df, dm), cfg);
      // Reprojection measured on the control points, which lie in the shared
      // retinal region; the canvas corners are outside the disc and amplify
      // the half-pixel detection rounding.
      const RegistrationCase rc{"x", Category::S, c.control_points, {}};
      if (case_error(rc, fit.model) < 1.0) ++recovered;
    } catch (const Error&) {
    }
  }
  EXPECT_GE(recovered, 48);
}
