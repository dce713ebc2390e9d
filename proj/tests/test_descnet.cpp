#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "conked/augment.hpp"
#include "conked/descnet.hpp"
#include "conked/error.hpp"
#include "conked/training.hpp"
#include "oracles.hpp"

using namespace conked;

namespace {

KeypointSet grid_keypoints(int cols, int rows, int spacing, int offset) {
  KeypointSet k;
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i)
      k.points.push_back({{static_cast<double>(offset + i * spacing), static_cast<double>(offset + j * spacing)},
                          (i + j) % 2 == 0 ? KeypointClass::crossover : KeypointClass::bifurcation,
                          1.0});
  return k;
}

ConvDescriptorNet seeded_default(int dim, std::uint64_t seed) {
  auto net = ConvDescriptorNet::make_default(3, dim);
  net.initialize(seed);
  return net;
}

AugmentationSpec mild_spec() {
  AugmentationSpec s;
  s.rotation_deg = 15.0;
  s.translation_frac = 0.05;
  s.scale_min = 0.9;
  s.scale_max = 1.1;
  s.shear_deg = 5.0;
  return s;
}

double norm_of(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST(DescNet, ParameterCountAndReceptiveField) {
  const auto net = ConvDescriptorNet::make_default(3, 16);
  // 9*3*16+16 + 9*16*16+16 + 9*16*16+16
  EXPECT_EQ(parameter_count(net.layers()), 448u + 2320u + 2320u);
  EXPECT_EQ(net.parameters().size(), 5088u);
  EXPECT_EQ(net.receptive_radius(), 1 + 2 + 4);
  const auto wide = ConvDescriptorNet::make(1, {4, 8, 8, 128}, {1, 1, 3, 2});
  EXPECT_EQ(wide.parameters().size(), (9u * 4 + 4) + (9u * 4 * 8 + 8) + (9u * 8 * 8 + 8) + (9u * 8 * 128 + 128));
  EXPECT_EQ(wide.receptive_radius(), 7);
  EXPECT_FALSE(wide.layers().back().relu);
  EXPECT_TRUE(wide.layers().front().relu);
}

TEST(DescNet, RejectsBrokenChains) {
  EXPECT_THROW(ConvDescriptorNet({{3, 8, 1, true}, {4, 8, 1, false}}), Error);
  EXPECT_THROW(ConvDescriptorNet({{3, 0, 1, false}}), Error);
  EXPECT_THROW(ConvDescriptorNet(std::vector<ConvLayerSpec>{}), Error);
}

TEST(DescNet, OutputIsUnitNormAndSameSize) {
  Rng rng(1);
  const auto img = oracle::random_image(rng, 23, 17, 3);
  const auto block = forward_dense(seeded_default(16, 3), img);
  ASSERT_EQ(block.width(), 23);
  ASSERT_EQ(block.height(), 17);
  ASSERT_EQ(block.dim(), 16);
  for (int y = 0; y < 17; ++y)
    for (int x = 0; x < 23; ++x) EXPECT_NEAR(norm_of(block.at(x, y)), 1.0, 1e-5);
}

TEST(DescNet, ChannelMismatchRejected) {
  const auto net = seeded_default(8, 1);
  try {
    forward_dense(net, Image(8, 8, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape_mismatch);
  }
}

TEST(DescNet, ZeroWeightsOutputNormalisedBias) {
  auto net = ConvDescriptorNet::make_default(3, 4);
  const std::vector<double> b = {3.0, -4.0, 0.0, 12.0};  // norm 13
  for (std::size_t c = 0; c < 4; ++c) net.parameters()[net.bias_offset(2) + c] = b[c];
  const auto block = forward_dense(net, Image(12, 9, 3, 0.4f));
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 12; ++x)
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(block.at(x, y)[static_cast<std::size_t>(c)], b[static_cast<std::size_t>(c)] / 13.0, 1e-7);
}

TEST(DescNet, ZeroVectorFallsBackToFirstAxis) {
  const auto net = ConvDescriptorNet::make_default(3, 4);  // all parameters zero
  const auto block = forward_dense(net, Image(5, 5, 3, 0.7f));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      EXPECT_EQ(block.at(x, y)[0], 1.0f);
      for (int c = 1; c < 4; ++c) EXPECT_EQ(block.at(x, y)[static_cast<std::size_t>(c)], 0.0f);
    }
  std::vector<double> z(4), g(4);
  const std::vector<double> tiny = {1e-14, 0, 0, 0}, gz = {1, 2, 3, 4};
  const double n = l2_normalize(tiny, z);
  l2_normalize_backward(z, n, gz, g);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(DescNet, NormalisationBackwardMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(6), gz(6);
    for (auto& x : v) x = normal(rng, 0, 1);
    for (auto& x : gz) x = normal(rng, 0, 1);
    auto f = [&](const std::vector<double>& u) {
      std::vector<double> z(6);
      l2_normalize(u, z);
      double s = 0;
      for (int i = 0; i < 6; ++i) s += z[static_cast<std::size_t>(i)] * gz[static_cast<std::size_t>(i)];
      return s;
    };
    std::vector<double> z(6), g(6);
    const double n = l2_normalize(v, z);
    l2_normalize_backward(z, n, gz, g);
    const auto fd = oracle::finite_difference_gradient(f, v, 1e-6);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(g[static_cast<std::size_t>(i)], fd[static_cast<std::size_t>(i)], 1e-7);
  }
}

TEST(DescNet, TranslationEquivariantAwayFromBorders) {
  Rng rng(4);
  const int w = 40, h = 36, dx = 5, dy = -3;
  const auto img = oracle::random_image(rng, w, h, 3);
  auto shifted = oracle::random_image(rng, w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (img.contains(x - dx, y - dy))
        for (int c = 0; c < 3; ++c) shifted.at(x, y, c) = img.at(x - dx, y - dy, c);
  const auto net = seeded_default(8, 5);
  const auto a = forward_dense(net, img);
  const auto b = forward_dense(net, shifted);
  const int r = net.receptive_radius();
  int compared = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx, sy = y - dy;
      // receptive field of (x, y) inside `shifted` and of (sx, sy) inside `img`
      const bool inside = sx - r >= 0 && sy - r >= 0 && sx + r < w && sy + r < h && x - r >= 0 && y - r >= 0 &&
                          x + r < w && y + r < h;
      if (!inside) continue;
      ++compared;
      for (int c = 0; c < 8; ++c) EXPECT_NEAR(a.at(sx, sy)[c], b.at(x, y)[c], 1e-6);
    }
  EXPECT_GT(compared, 200);
}

TEST(DescNet, PatchEvaluationEqualsDense) {
  Rng rng(6);
  const auto img = oracle::random_image(rng, 21, 19, 3);
  const auto net = seeded_default(16, 7);
  const auto dense = forward_dense(net, img);
  std::vector<PixelIndex> pixels = {{0, 0}, {20, 18}, {0, 18}, {20, 0}, {10, 9}, {3, 15}, {6, 2}};
  const PatchEvaluator patches(net, img, pixels);
  for (std::size_t k = 0; k < pixels.size(); ++k)
    for (int c = 0; c < 16; ++c)
      EXPECT_NEAR(patches.descriptors()[k * 16 + static_cast<std::size_t>(c)], dense.at(pixels[k].x, pixels[k].y)[c], 1e-6);
  EXPECT_THROW(PatchEvaluator(net, img, {{21, 0}}), Error);
}

TEST(DescNet, CheckpointRoundTrip) {
  const auto net = seeded_default(8, 9);
  const auto path = std::filesystem::temp_directory_path() / "conked_test_net.ckdn";
  save_checkpoint(path, net);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.layers(), net.layers());
  ASSERT_EQ(back.parameters().size(), net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    EXPECT_EQ(back.parameters()[i], static_cast<double>(static_cast<float>(net.parameters()[i])));
  const auto size = std::filesystem::file_size(path);
  EXPECT_EQ(size, 4u + 4u + 16u * 3u + 4u * net.parameters().size());
  std::filesystem::remove(path);
}

TEST(Augment, IdentitySpecGivesIdenticalRows) {
  Rng rng(10);
  const auto img = oracle::random_image(rng, 24, 24, 3);
  const auto kps = grid_keypoints(3, 3, 6, 5);
  const auto batch = build_multiview_batch(img, kps, AugmentationSpec::identity(), 1, seeded_default(8, 1), 42);
  ASSERT_EQ(batch.views(), 2u);
  ASSERT_EQ(batch.keypoints(), 9u);
  const auto& z = batch.values();
  for (std::size_t i = 0; i < 9 * 8; ++i) EXPECT_EQ(z[i], z[9 * 8 + i]);
}

TEST(Augment, SeededBatchIsReproducible) {
  Rng rng(11);
  const auto img = oracle::random_image(rng, 32, 32, 3);
  const auto kps = grid_keypoints(4, 4, 4, 10);
  const auto net = seeded_default(8, 1);
  const auto a = build_multiview_batch(img, kps, mild_spec(), 9, net, 5);
  const auto b = build_multiview_batch(img, kps, mild_spec(), 9, net, 5);
  ASSERT_EQ(a.values().size(), b.values().size());
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)), 0);
}

TEST(Augment, RotationViewMatchesIndependentRecomputation) {
  Rng rng(12);
  const int w = 33, h = 33;
  const auto img = oracle::random_image(rng, w, h, 3);
  const auto kps = grid_keypoints(3, 3, 4, 12);
  AugmentationParams p;
  p.transform.rotation_deg = 60.0;
  p.transform.center = {(w - 1) / 2.0, (h - 1) / 2.0};
  const auto sample = build_multiview_sample(img, kps, {p});
  const auto rotated = oracle::rotate_image(img, 60.0, p.transform.center);
  for (std::size_t i = 0; i < rotated.data.size(); ++i) ASSERT_NEAR(sample.views[1].data[i], rotated.data[i], 1e-5);

  const auto net = seeded_default(16, 2);
  const auto dense = forward_dense(net, rotated);
  const PatchEvaluator view(net, sample.views[1], sample.pixels[1]);
  ASSERT_EQ(sample.keypoints(), 9u);
  for (std::size_t k = 0; k < sample.keypoints(); ++k) {
    const auto& src = kps.points[sample.source_index[k]].location;
    const Point2 q = oracle::rotate_point(src, 60.0, p.transform.center);
    const int qx = static_cast<int>(std::lround(q.x)), qy = static_cast<int>(std::lround(q.y));
    EXPECT_EQ(sample.pixels[1][k], (PixelIndex{qx, qy}));
    for (int c = 0; c < 16; ++c) EXPECT_NEAR(view.descriptors()[k * 16 + static_cast<std::size_t>(c)], dense.at(qx, qy)[c], 1e-4);
  }
}

TEST(Augment, OutOfBoundsKeypointsDroppedFromEveryView) {
  Rng rng(13);
  const auto img = oracle::random_image(rng, 32, 32, 3);
  KeypointSet kps = grid_keypoints(2, 1, 4, 14);
  kps.points.push_back({{1.0, 1.0}, KeypointClass::crossover, 1.0});  // leaves the image under the shift
  AugmentationParams p;
  p.transform.translation_x = -0.1;
  p.transform.center = {15.5, 15.5};
  const auto s = build_multiview_sample(img, kps, {p, AugmentationParams{}});
  EXPECT_EQ(s.keypoints(), 2u);
  EXPECT_EQ(s.source_index, (std::vector<std::size_t>{0, 1}));
  for (const auto& row : s.pixels) EXPECT_EQ(row.size(), 2u);
  p.transform.translation_x = -0.9;
  try {
    build_multiview_sample(img, kps, {p});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::too_few_survivors);
  }
}

TEST(Augment, HsvRoundTrip) {
  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    const float r = static_cast<float>(uniform(rng, 0, 1)), g = static_cast<float>(uniform(rng, 0, 1)),
                b = static_cast<float>(uniform(rng, 0, 1));
    float h, s, v, r2, g2, b2;
    rgb_to_hsv(r, g, b, h, s, v);
    hsv_to_rgb(h, s, v, r2, g2, b2);
    EXPECT_NEAR(r, r2, 1e-5);
    EXPECT_NEAR(g, g2, 1e-5);
    EXPECT_NEAR(b, b2, 1e-5);
  }
}

TEST(Augment, SpecValidation) {
  AugmentationSpec s;
  s.noise_probability = 1.5;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.scale_min = 1.3;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_NO_THROW(AugmentationSpec{}.validate());
}

TEST(Training, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(20);
  const auto img = oracle::random_image(rng, 16, 16, 3);
  KeypointSet kps;
  kps.points = {{{5, 5}, KeypointClass::crossover, 1}, {{10, 6}, KeypointClass::bifurcation, 1},
                {{7, 11}, KeypointClass::crossover, 1}};
  auto net = ConvDescriptorNet::make(3, {6, 4}, {1, 1});
  net.initialize(21);
  for (std::size_t l = 0; l < 2; ++l)
    for (int c = 0; c < net.layers()[l].out_channels; ++c)
      net.parameters()[net.bias_offset(l) + static_cast<std::size_t>(c)] = 0.05 * (c + 1);
  AugmentationSpec spec = AugmentationSpec::identity();
  spec.rotation_deg = 20.0;
  const auto sample = build_multiview_sample(img, kps, spec, 1, 3);
  ASSERT_EQ(sample.keypoints(), 3u);
  for (LossKind kind : {LossKind::mp_infonce, LossKind::supcon, LossKind::triplet}) {
    TrainConfig cfg;
    cfg.loss = kind;
    cfg.loss_config.margin = 0.5;  // keeps the hinge active
    const auto analytic = loss_and_gradient(net, sample, cfg).grad;
    const auto fd = oracle::finite_difference_gradient(
        [&](const std::vector<double>& theta) {
          ConvDescriptorNet n = net;
          n.parameters() = theta;
          return loss_and_gradient(n, sample, cfg).value;
        },
        net.parameters(), 1e-6);
    double diff = 0, ref = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      diff += (analytic[i] - fd[i]) * (analytic[i] - fd[i]);
      ref += fd[i] * fd[i];
    }
    ASSERT_GT(ref, 0.0);
    EXPECT_LT(std::sqrt(diff / ref), 1e-3) << loss_name(kind);
  }
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  Rng rng(22);
  const auto img = oracle::random_image(rng, 24, 24, 3);
  auto net = seeded_default(8, 4);
  const auto before = net.parameters();
  const auto sample = build_multiview_sample(img, grid_keypoints(3, 3, 5, 6), mild_spec(), 3, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  OptimizerState state;
  const double loss = train_step(net, sample, cfg, state);
  EXPECT_GT(loss, 0.0);
  EXPECT_EQ(net.parameters(), before);
}

TEST(Training, NonFiniteLossAbortsWithoutUpdate) {
  Rng rng(23);
  const auto img = oracle::random_image(rng, 24, 24, 3);
  auto net = seeded_default(8, 4);
  net.parameters()[net.bias_offset(2)] = std::numeric_limits<double>::quiet_NaN();
  const auto before = net.parameters();
  const auto sample = build_multiview_sample(img, grid_keypoints(3, 3, 5, 6), mild_spec(), 3, 1);
  OptimizerState state;
  try {
    train_step(net, sample, TrainConfig{}, state);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite_loss);
  }
  EXPECT_EQ(std::memcmp(net.parameters().data(), before.data(), before.size() * sizeof(double)), 0);
  EXPECT_EQ(state.steps, 0u);
}

TEST(Training, TwoHundredStepsReduceLoss) {
  Rng rng(24);
  const auto img = oracle::random_image(rng, 16, 16, 3);
  auto net = seeded_default(16, 8);
  const auto sample = build_multiview_sample(img, grid_keypoints(3, 3, 4, 4), mild_spec(), 3, 2);
  TrainConfig cfg;
  cfg.loss = LossKind::mp_infonce;
  cfg.n_views = 3;
  OptimizerState state;
  double first = 0, last = 0;
  for (int step = 1; step <= 200; ++step) {
    const double loss = train_step(net, sample, cfg, state);
    if (step == 1) first = loss;
    if (step == 200) last = loss;
  }
  EXPECT_LT(last, first);
}

TEST(Training, BitwiseReproducible) {
  Rng rng(25);
  std::vector<TrainingImage> images;
  for (int i = 0; i < 3; ++i) images.push_back({oracle::random_image(rng, 24, 24, 3), grid_keypoints(3, 3, 5, 6)});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.n_views = 2;
  cfg.seed = 77;
  cfg.augmentation = mild_spec();
  cfg.loss = LossKind::triplet;
  cfg.mining = Mining::random;
  auto a = seeded_default(8, 1), b = seeded_default(8, 1);
  const auto ra = train(a, images, cfg);
  const auto rb = train(b, images, cfg);
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
  EXPECT_EQ(ra.steps, 6u);
  EXPECT_EQ(a.parameters(), b.parameters());
}

TEST(Precision, IdentityPairsArePerfect) {
  Rng rng(30);
  std::vector<PrecisionPair> pairs;
  for (int i = 0; i < 3; ++i) {
    const auto img = oracle::random_image(rng, 40, 40, 3);
    const auto k = grid_keypoints(4, 4, 8, 6);
    pairs.push_back({img, img, Homography::identity(), k, k});
  }
  const auto r = evaluate_matching_precision(seeded_default(16, 3), pairs, PeakConfig{}, 2.0);
  EXPECT_GT(r.matches, 0u);
  EXPECT_EQ(r.precision(), 1.0);
}

TEST(Precision, RandomDescriptorsSitAtChance) {
  Rng rng(31);
  // 4x4 grid with alternating classes: 8 keypoints per class.
  const auto k = grid_keypoints(4, 4, 8, 6);
  std::vector<PrecisionPair> pairs;
  for (int i = 0; i < 40; ++i) {
    const Image img(40, 40, 3, 0.5f);
    pairs.push_back({img, img, Homography::identity(), k, k});
  }
  Rng desc_rng(32);
  const Describer random_describer = [&](const Image& img) {
    return DescriptorBlock(img.width, img.height, 8,
                           oracle::random_unit_rows_f32(desc_rng, static_cast<std::size_t>(img.width * img.height), 8));
  };
  const auto r = evaluate_matching_precision(random_describer, pairs, PeakConfig{}, 2.0);
  const double chance = 1.0 / 8.0;
  const double sigma = std::sqrt(chance * (1 - chance) / static_cast<double>(r.matches));
  EXPECT_GT(r.matches, 100u);
  EXPECT_NEAR(r.precision(), chance, 4 * sigma);
}
