#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "conked/geometry.hpp"
#include "conked/image.hpp"

namespace conked {

enum class KeypointClass : std::uint8_t { crossover = 0, bifurcation = 1 };
inline constexpr int kNumKeypointClasses = 2;

std::string_view class_name(KeypointClass c);
KeypointClass parse_class(std::string_view s);

// Channel 0 crossovers, 1 bifurcations, 2 both. Planar storage.
class Heatmap {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kCombined = 2;

  Heatmap() = default;
  Heatmap(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  float at(int channel, int x, int y) const { return values_[index(channel, x, y)]; }
  // Throws invalid_argument for values outside [0, 1].
  void set(int channel, int x, int y, float v);

 private:
  std::size_t index(int channel, int x, int y) const {
    return (static_cast<std::size_t>(channel) * static_cast<std::size_t>(height_) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

struct Keypoint {
  Point2 location;
  KeypointClass cls = KeypointClass::crossover;
  double score = 1.0;
};

struct KeypointSet {
  std::vector<Keypoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::size_t count(KeypointClass c) const;
};

struct TransformedKeypoints {
  KeypointSet keypoints;
  // source_index[i] is the index in the input set of output keypoint i.
  std::vector<std::size_t> source_index;
};

struct BinaryMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // row-major, 0 or 1

  BinaryMap() = default;
  BinaryMap(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}
  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
};

struct TargetConfig {
  double sigma = 2.0;
  int kernel_radius = -1;  // negative: ceil(3 sigma)

  int effective_radius() const;
};

struct PeakConfig {
  double intensity_threshold = 0.35;
  int window_radius = 2;

  void validate() const;
};

// Gaussian target heatmaps. Overlapping bumps combine by pixelwise maximum,
// so every ground-truth pixel stays at exactly 1 and values never exceed 1.
// Throws dimension_mismatch when the maps differ in size.
Heatmap make_target_heatmaps(const BinaryMap& crossovers, const BinaryMap& bifurcations, const TargetConfig& cfg = {});

// Rasterises keypoints (rounded) into per-class binary maps.
std::pair<BinaryMap, BinaryMap> rasterize_keypoints(const KeypointSet& k, int width, int height);

// Keypoint of class c at p iff heatmap[c](p) >= threshold and p is the strict
// maximum of its (2r+1)^2 window; on exact plateaus the smallest (y, x) wins.
// Output ordered by class, then row, then column. Extracts from the two class
// channels only.
KeypointSet extract_keypoints(const Heatmap& h, const PeakConfig& cfg = {});

// Maps every location; drops points outside [0, w-1] x [0, h-1].
TransformedKeypoints transform_keypoints(const KeypointSet& k, const Homography& h, int width, int height);

// CSV with header x,y,class,score.
void write_keypoints_csv(const std::filesystem::path& path, const KeypointSet& k);
KeypointSet read_keypoints_csv(const std::filesystem::path& path);

// 8-bit RGB image (value round(255 v) per channel) or a CKDB block with 3 channels.
void write_heatmap_image(const std::filesystem::path& path, const Heatmap& h);
void write_heatmap_block(const std::filesystem::path& path, const Heatmap& h);
// Dispatches on the file contents (CKDB magic vs PNM).
Heatmap read_heatmap(const std::filesystem::path& path);

}  // namespace conked
