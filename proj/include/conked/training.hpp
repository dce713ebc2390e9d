#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "conked/augment.hpp"
#include "conked/contrastive.hpp"
#include "conked/descnet.hpp"
#include "conked/keypoints.hpp"

namespace conked {

enum class Optimizer { sgd, adam };

Optimizer parse_optimizer(std::string_view s);
std::string_view optimizer_name(Optimizer o);

struct TrainConfig {
  LossKind loss = LossKind::mp_infonce;
  LossConfig loss_config;
  Mining mining = Mining::hardest;  // triplet only
  int n_views = 9;
  double learning_rate = 1e-4;
  int epochs = 1;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  AugmentationSpec augmentation;

  // Throws invalid_argument for n_views < 1, learning_rate < 0, epochs < 0.
  // A zero rate is allowed so a step can be used as a pure evaluation.
  void validate() const;
};

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t steps = 0;
};

struct LossAndGradient {
  double value = 0.0;
  std::vector<double> grad;  // d value / d parameters
};

// Loss of the configured objective on the sample's descriptors and its
// gradient with respect to every network parameter. `mining_seed` feeds
// random triplet mining.
LossAndGradient loss_and_gradient(const ConvDescriptorNet& net, const MultiviewSample& sample, const TrainConfig& cfg,
                                  std::uint64_t mining_seed = 0);

// One optimiser update; returns the loss before the update. Throws
// non_finite_loss, leaving the parameters and state untouched, when the loss
// or its gradient is not finite.
double train_step(ConvDescriptorNet& net, const MultiviewSample& sample, const TrainConfig& cfg, OptimizerState& state,
                  std::uint64_t mining_seed = 0);

struct TrainingImage {
  Image image;
  KeypointSet keypoints;
};

// Keypoints are detected on both images (here: ground truth rendered as
// target heatmaps and re-extracted with the peak config).
struct PrecisionPair {
  Image fixed;
  Image moving;
  Homography moving_to_fixed;
  KeypointSet fixed_keypoints;
  KeypointSet moving_keypoints;
};

using Describer = std::function<DescriptorBlock(const Image&)>;

struct PrecisionResult {
  std::size_t matches = 0;
  std::size_t correct = 0;
  double precision() const { return matches == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(matches); }
};

// Mutual matches pooled over all pairs; a match is correct when the moving
// point mapped into the fixed image lands within tol_px of the fixed point.
PrecisionResult evaluate_matching_precision(const Describer& describe, const std::vector<PrecisionPair>& pairs,
                                            const PeakConfig& peak, double tol_px);
PrecisionResult evaluate_matching_precision(const ConvDescriptorNet& net, const std::vector<PrecisionPair>& pairs,
                                            const PeakConfig& peak, double tol_px);

struct TrainReport {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  std::size_t steps = 0;
  std::size_t skipped_samples = 0;  // too few keypoints survived augmentation
  double validation_precision = -1.0;  // -1 when no validation set was given
};

// Each epoch visits every image once in a seeded random order; each visit is
// one multiview batch and one optimiser step. `max_steps` (0 = unlimited)
// caps the total. `on_epoch` is called after every epoch.
TrainReport train(ConvDescriptorNet& net, const std::vector<TrainingImage>& images, const TrainConfig& cfg,
                  std::size_t max_steps = 0, const std::vector<PrecisionPair>* validation = nullptr,
                  const std::function<void(int epoch, double loss)>& on_epoch = {});

}  // namespace conked
