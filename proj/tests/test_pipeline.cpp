#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "conked/config.hpp"
#include "conked/error.hpp"
#include "conked/io_util.hpp"
#include "conked/pipeline.hpp"
#include "conked/synth.hpp"

using namespace conked;

namespace {

Errc error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected conked::Error";
  return Errc::invalid_argument;
}

// One-hot block: pixels on a ground-truth keypoint carry the identity of the
// fixed keypoint they show; everything else gets the last axis.
DescriptorBlock identity_block(const KeypointSet& points, const std::vector<std::size_t>& identity, std::size_t dim,
                               int w, int h) {
  std::vector<float> v(static_cast<std::size_t>(w * h) * dim, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) v[(static_cast<std::size_t>(y * w + x)) * dim + dim - 1] = 1.0f;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int x = static_cast<int>(std::lround(points.points[i].location.x));
    const int y = static_cast<int>(std::lround(points.points[i].location.y));
    float* row = &v[static_cast<std::size_t>(y * w + x) * dim];
    std::fill(row, row + dim, 0.0f);
    row[identity[i]] = 1.0f;
  }
  return DescriptorBlock(w, h, static_cast<int>(dim), std::move(v));
}

double corner_error(const Homography& a, const Homography& b, int w, int h) {
  double sum = 0;
  for (Point2 c : {Point2{0, 0}, Point2{double(w - 1), 0}, Point2{0, double(h - 1)}, Point2{double(w - 1), double(h - 1)}})
    sum += distance(apply_homography(a, c), apply_homography(b, c));
  return sum / 4;
}

}  // namespace

TEST(RegisterPair, SameImageGivesIdentity) {
  const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::high_overlap, 3, {.force_identity = true});
  const Heatmap hm = oracle_heatmap(c.gt_keypoints_fixed, 64, 64);
  std::vector<std::size_t> ids(c.gt_keypoints_fixed.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const auto block = identity_block(c.gt_keypoints_fixed, ids, ids.size() + 1, 64, 64);
  const auto r = register_pair(c.image_fixed, c.image_fixed, hm, hm, [&](const Image&) { return block; }, PeakConfig{},
                               RansacConfig{});
  EXPECT_LT(corner_error(r.moving_to_fixed, Homography::identity(), 64, 64), 1.0);
  EXPECT_EQ(r.matches.size(), c.gt_keypoints_fixed.size());
}

TEST(RegisterPair, HighOverlapWithinTwoPixels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = generate_case(VesselTreeSpec{}, CategoryAnalog::high_overlap, 40 + seed);
    std::vector<std::size_t> ids(c.gt_keypoints_fixed.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const std::size_t dim = ids.size() + 1;
    const auto fixed_block = identity_block(c.gt_keypoints_fixed, ids, dim, 64, 64);
    const auto moving_block = identity_block(c.gt_keypoints_moving, c.moving_source, dim, 64, 64);
    const Describer describe = [&](const Image& img) { return &img == &c.image_fixed ? fixed_block : moving_block; };
    const auto r = register_pair(c.image_fixed, c.image_moving, oracle_heatmap(c.gt_keypoints_fixed, 64, 64),
                                 oracle_heatmap(c.gt_keypoints_moving, 64, 64), describe, PeakConfig{}, RansacConfig{});
    EXPECT_LT(case_error(RegistrationCase{"c", Category::S, c.control_points, {}}, r.moving_to_fixed), 2.0)
        << "seed " << seed;
    EXPECT_GE(r.timings.detect_ms, 0.0);
    EXPECT_GE(r.timings.describe_ms, 0.0);
    EXPECT_GE(r.timings.match_ms, 0.0);
    EXPECT_GE(r.timings.ransac_ms, 0.0);
  }
}

TEST(RegisterPair, FewMatchesIsNoConsensus) {
  KeypointSet three;
  three.points = {{{10, 10}, KeypointClass::crossover}, {{40, 12}, KeypointClass::crossover}, {{20, 45}, KeypointClass::bifurcation}};
  const Heatmap hm = oracle_heatmap(three, 64, 64);
  const Image img(64, 64, 3);
  const auto block = identity_block(three, {0, 1, 2}, 4, 64, 64);
  EXPECT_EQ(error_code([&] {
              register_pair(img, img, hm, hm, [&](const Image&) { return block; }, PeakConfig{}, RansacConfig{});
            }),
            Errc::no_consensus);
}

TEST(RegisterPair, TimingCsvHasFourStages) {
  const auto path = std::filesystem::temp_directory_path() / "conked_timings.csv";
  write_timings_csv(path, StageTimings{1.5, 2, 0.25, 3});
  const auto lines = split(read_file(path), '\n');
  ASSERT_GE(lines.size(), 5u);
  EXPECT_EQ(lines[0], "stage,milliseconds");
  EXPECT_EQ(lines[1].substr(0, 7), "detect,");
  EXPECT_EQ(lines[2].substr(0, 9), "describe,");
  EXPECT_EQ(lines[3].substr(0, 6), "match,");
  EXPECT_EQ(lines[4].substr(0, 7), "ransac,");
  std::filesystem::remove(path);
}

TEST(Config, DefaultsMatchLibraryDefaults) {
  const PipelineConfig c;
  EXPECT_EQ(get_config_value(c, "peak.threshold"), "0.35");
  EXPECT_EQ(get_config_value(c, "train.learning_rate"), "1e-04");
  EXPECT_EQ(get_config_value(c, "train.views"), "9");
  EXPECT_EQ(get_config_value(c, "train.loss"), "mp_infonce");
  EXPECT_EQ(get_config_value(c, "augment.rotation_deg"), "60");
  EXPECT_EQ(get_config_value(c, "train.margin"), "0.05");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesAssignmentsAndComments) {
  const auto c = parse_config(
      "# comment\n\n  train.loss = supcon  \ntrain.views=1 # trailing\nransac.exhaustive = true\nseed = 42\ndataset = data/x\n");
  EXPECT_EQ(c.train.loss, LossKind::supcon);
  EXPECT_EQ(c.train.n_views, 1);
  EXPECT_TRUE(c.ransac.exhaustive);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.dataset, "data/x");
}

TEST(Config, RejectsUnknownKeyWithLineNumber) {
  try {
    parse_config("seed = 1\ntrain.lossy = supcon\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.lossy"), std::string::npos);
  }
}

TEST(Config, RejectsMalformedLinesAndValues) {
  EXPECT_EQ(error_code([] { parse_config("seed 1\n"); }), Errc::invalid_argument);
  EXPECT_EQ(error_code([] { parse_config("seed = -3\n"); }), Errc::invalid_argument);
  EXPECT_EQ(error_code([] { parse_config("train.views = many\n"); }), Errc::invalid_argument);
  EXPECT_EQ(error_code([] { parse_config("ransac.exhaustive = perhaps\n"); }), Errc::invalid_argument);
  EXPECT_EQ(error_code([] { parse_config("train.loss = hinge\n"); }), Errc::invalid_argument);
}

TEST(Config, EchoRoundTrips) {
  PipelineConfig c;
  c.seed = 77;
  c.train.loss = LossKind::triplet;
  c.train.learning_rate = 3.25e-4;
  c.augmentation().shear_deg = 12.5;
  c.ransac.inlier_threshold_px = 2.0;
  c.output = "out dir";
  const std::string echo = echo_config(c);
  const PipelineConfig back = parse_config(echo);
  EXPECT_EQ(echo_config(back), echo);
  for (const auto& k : config_keys()) {
    EXPECT_NE(echo.find("\n" + k.name + " = "), std::string::npos) << k.name;
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
}
