#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "conked/block_io.hpp"
#include "conked/geometry.hpp"
#include "conked/keypoints.hpp"

namespace conked {

inline constexpr double kUnitNormTolerance = 1e-5;

// Dense per-pixel descriptors; every D-vector has unit L2 norm (+-1e-5).
class DescriptorBlock {
 public:
  DescriptorBlock() = default;
  // Throws shape_mismatch / invalid_argument when the invariant does not hold.
  DescriptorBlock(int width, int height, int dim, std::vector<float> values);
  explicit DescriptorBlock(FloatBlock block);

  int width() const { return width_; }
  int height() const { return height_; }
  int dim() const { return dim_; }
  std::span<const float> at(int x, int y) const;
  const std::vector<float>& values() const { return values_; }

  FloatBlock to_block() const;

 private:
  int width_ = 0;
  int height_ = 0;
  int dim_ = 0;
  std::vector<float> values_;
};

struct DescriptorSet {
  int dim = 0;
  std::vector<float> vectors;  // K x dim, row-major
  std::vector<KeypointClass> classes;
  std::vector<Point2> locations;

  std::size_t size() const { return classes.size(); }
  std::span<const float> row(std::size_t i) const {
    return {vectors.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  void push_back(std::span<const float> v, KeypointClass c, Point2 loc);
};

struct Match {
  std::size_t fixed = 0;   // row in the first (fixed) set
  std::size_t moving = 0;  // row in the second (moving) set
  double similarity = 0.0;
  KeypointClass cls = KeypointClass::crossover;
};

struct MatchSet {
  std::vector<Match> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

// Instrumentation for the matching cost.
struct MatchStats {
  std::size_t similarity_evaluations = 0;
  std::array<std::size_t, kNumKeypointClasses> per_class{};
};

// Row i = block vector at the rounded pixel of keypoint i. Throws out_of_bounds.
DescriptorSet sample_descriptors(const DescriptorBlock& block, const KeypointSet& keypoints);

// Entry (i, j) = a_i . b_j, clamped to [-1, 1]. Throws dimension_mismatch.
SimilarityMatrix cosine_similarity_matrix(const DescriptorSet& a, const DescriptorSet& b);

// Within each class: (i, j) matched iff each is the other's most similar
// (ties to the smaller index). Sorted by similarity, descending.
MatchSet mutual_match_classwise(const DescriptorSet& fixed, const DescriptorSet& moving, MatchStats* stats = nullptr);

// Keeps the n_per_class most similar pairs of each class; classes with fewer
// pairs contribute all they have.
MatchSet top_n_matches(const MatchSet& m, std::size_t n_per_class);

// Correspondences (fixed point, moving point) for RANSAC.
CorrespondenceSet to_correspondences(const MatchSet& m, const DescriptorSet& fixed, const DescriptorSet& moving);

void write_descriptor_block(const std::filesystem::path& path, const DescriptorBlock& block);
DescriptorBlock read_descriptor_block(const std::filesystem::path& path);

// CSV: fixed_index,moving_index,class,similarity,x_fixed,y_fixed,x_moving,y_moving
void write_matches_csv(const std::filesystem::path& path, const MatchSet& m, const DescriptorSet& fixed,
                       const DescriptorSet& moving);

}  // namespace conked
