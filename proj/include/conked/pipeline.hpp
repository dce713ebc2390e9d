#pragma once

#include "conked/descnet.hpp"
#include "conked/descriptors.hpp"
#include "conked/geometry.hpp"
#include "conked/keypoints.hpp"
#include "conked/training.hpp"

namespace conked {

struct StageTimings {
  double detect_ms = 0.0;
  double describe_ms = 0.0;
  double match_ms = 0.0;
  double ransac_ms = 0.0;
};

struct PairRegistration {
  Homography moving_to_fixed;
  KeypointSet fixed_keypoints;
  KeypointSet moving_keypoints;
  DescriptorSet fixed_descriptors;
  DescriptorSet moving_descriptors;
  MatchSet matches;
  RansacResult ransac;
  StageTimings timings;
};

// Single pass: extract keypoints from both heatmaps, describe both images,
// match mutually per class, fit with RANSAC. Throws no_consensus when fewer
// than four matches survive or no model reaches the inlier minimum.
PairRegistration register_pair(const Image& fixed, const Image& moving, const Heatmap& fixed_heatmap,
                               const Heatmap& moving_heatmap, const Describer& describe, const PeakConfig& peak,
                               const RansacConfig& ransac);

// Target heatmaps of known keypoints, standing in for a trained detector.
Heatmap oracle_heatmap(const KeypointSet& keypoints, int width, int height);

// CSV stage,milliseconds with rows detect, describe, match, ransac.
void write_timings_csv(const std::filesystem::path& path, const StageTimings& t);

}  // namespace conked
