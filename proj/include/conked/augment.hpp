#pragma once

#include <cstdint>
#include <vector>

#include "conked/contrastive.hpp"
#include "conked/descnet.hpp"
#include "conked/geometry.hpp"
#include "conked/image.hpp"
#include "conked/keypoints.hpp"
#include "conked/rng.hpp"

namespace conked {

// Symmetric ranges are half-widths: rotation is drawn from
// [-rotation_deg, rotation_deg] and so on. Geometry acts about the image
// centre.
struct AugmentationSpec {
  double rotation_deg = 60.0;
  double translation_frac = 0.25;
  double scale_min = 0.75;
  double scale_max = 1.25;
  double shear_deg = 30.0;
  double hue_jitter = 0.02;
  double saturation_jitter = 0.1;
  double value_jitter = 0.1;
  double noise_mean = 0.0;
  double noise_std = 0.05;
  double noise_probability = 0.25;

  static AugmentationSpec identity();
  // Throws invalid_argument for negative ranges, scale_min > scale_max,
  // non-positive scales or a probability outside [0, 1].
  void validate() const;
};

struct AugmentationParams {
  AffineTransform2D transform;
  double hue_shift = 0.0;
  double saturation_shift = 0.0;
  double value_shift = 0.0;
  bool add_noise = false;
  double noise_mean = 0.0;
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

AugmentationParams sample_augmentation(const AugmentationSpec& spec, int width, int height, Rng& rng);

// Bilinear warp (black outside the source), HSV shift on 3-channel images,
// then optional Gaussian noise; values clamped to [0, 1].
Image apply_augmentation(const Image& image, const AugmentationParams& params);

// Hue in [0, 1) turns, saturation and value in [0, 1].
void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

// One original image and N augmented views with keypoints aligned by row:
// pixels[v][k] is keypoint k in view v, rounded to the nearest pixel.
struct MultiviewSample {
  std::vector<Image> views;
  std::vector<std::vector<PixelIndex>> pixels;
  std::vector<KeypointClass> classes;
  // Index of each surviving keypoint in the input set.
  std::vector<std::size_t> source_index;

  std::size_t keypoints() const { return classes.size(); }
};

// Draws N augmentations from the "augmentation" stream of `seed`. Keypoints
// that leave any view are dropped from every view. Throws too_few_survivors
// when fewer than two remain.
MultiviewSample build_multiview_sample(const Image& image, const KeypointSet& keypoints, const AugmentationSpec& spec,
                                       int n_views, std::uint64_t seed);
// Same, with one explicit parameter set per augmented view.
MultiviewSample build_multiview_sample(const Image& image, const KeypointSet& keypoints,
                                       const std::vector<AugmentationParams>& views);

// build_multiview_sample followed by forward_dense on every view and a
// gather at the aligned keypoint pixels.
MultiviewBatch build_multiview_batch(const Image& image, const KeypointSet& keypoints, const AugmentationSpec& spec,
                                     int n_views, const ConvDescriptorNet& net, std::uint64_t seed);

}  // namespace conked
