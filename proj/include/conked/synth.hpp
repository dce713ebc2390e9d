#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "conked/evalkit.hpp"
#include "conked/geometry.hpp"
#include "conked/image.hpp"
#include "conked/keypoints.hpp"

namespace conked {

struct VesselTreeSpec {
  int width = 64;
  int height = 64;
  // Root vessels running across the fundus disc.
  int n_branches = 3;
  double vessel_width_min = 1.2;
  double vessel_width_max = 2.4;
  std::array<float, 3> background = {0.78f, 0.36f, 0.18f};
  double radial_shading = 0.35;  // relative darkening at the disc rim
  // Exact targets. Every bifurcation is a child branch leaving a vessel.
  // Crossovers come from vessels passing over each other; -1 accepts
  // whatever the placed vessels produce. Extra short crossing vessels are
  // added when the roots and children fall short of the target.
  int n_crossovers = 5;
  int n_bifurcations = 7;
  double min_separation = 7.0;  // between any two keypoints, in pixels
  std::uint64_t seed = 0;

  // Throws invalid_argument (sizes < 32, negative counts, bad widths).
  void validate() const;
};

struct VesselCurve {
  Point2 p0, p1, p2;  // quadratic Bezier control points
  double width = 1.5;
  int parent = -1;  // index of the vessel this one branches off, or -1

  Point2 at(double t) const;
  Point2 tangent(double t) const;
};

// Vector description from which every view is rendered.
struct VesselScene {
  int width = 0;
  int height = 0;
  Point2 disc_center;
  double disc_radius = 0.0;
  std::array<float, 3> background{};
  double radial_shading = 0.0;
  std::vector<VesselCurve> curves;
  // Low-amplitude background texture: (cx, cy, radius, amplitude) blobs.
  std::vector<std::array<double, 4>> texture;
};

struct VesselTree {
  Image image;
  KeypointSet keypoints;  // score 1, exact integer pixels
  VesselScene scene;
};

// Throws spec_infeasible when the counts cannot be placed at the requested
// separation within the sampling budget.
VesselTree generate_tree(const VesselTreeSpec& spec);

struct Occlusion {
  Point2 center;  // scene coordinates
  double radius = 4.0;
};

struct Photometric {
  double gain = 1.0;
  double gamma = 1.0;
  std::array<double, 3> tint = {1.0, 1.0, 1.0};
};

// Renders the scene as seen through `view_to_scene` into a width x height
// canvas. Content exists only inside the scene canvas and disc; occlusions
// erase vessels locally and paint a pale lesion.
Image render_scene(const VesselScene& scene, const Homography& view_to_scene, int width, int height,
                   const std::vector<Occlusion>& occlusions = {}, const Photometric& photometric = {});

enum class CategoryAnalog { high_overlap, low_overlap, appearance_change };

std::string_view category_analog_name(CategoryAnalog c);
CategoryAnalog parse_category_analog(std::string_view s);
Category to_category(CategoryAnalog c);

struct CaseOptions {
  bool force_identity = false;
  int control_points = 10;
};

struct SyntheticCase {
  std::string id;
  CategoryAnalog category = CategoryAnalog::high_overlap;
  Image image_fixed;
  Image image_moving;
  // Maps moving-image coordinates to fixed-image coordinates.
  Homography gt_homography;
  KeypointSet gt_keypoints_fixed;
  KeypointSet gt_keypoints_moving;
  // moving_source[i] = index in gt_keypoints_fixed of moving keypoint i.
  std::vector<std::size_t> moving_source;
  std::vector<ControlPointPair> control_points;
};

// Samples a homography for the category, renders the moving view and
// carries the fixed keypoints across. Throws spec_infeasible.
SyntheticCase generate_case(const VesselTreeSpec& spec, CategoryAnalog category, std::uint64_t seed,
                            const CaseOptions& options = {});

// Fraction of moving-image pixels whose fixed-frame location lies inside
// the fixed canvas.
double shared_fraction(const Homography& moving_to_fixed, int width, int height);

// Case counts (S, P, A) proportional to 71/49/14, largest remainder rounding.
std::array<int, 3> category_mix(int total);

// Directory layout: fixed.ppm, moving.ppm, homography.txt,
// keypoints_fixed.csv, keypoints_moving.csv, control_points.txt, case.txt.
void save_case(const std::filesystem::path& dir, const SyntheticCase& c);
SyntheticCase load_case(const std::filesystem::path& dir);

}  // namespace conked
