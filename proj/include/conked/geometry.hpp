#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace conked {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(const Point2& a, const Point2& b);

// 3x3 projective transform, row-major. Construction enforces invertibility
// (|det| > 1e-12) and canonical scale.
class Homography {
 public:
  static constexpr double kSingularTolerance = 1e-12;

  Homography();  // identity
  explicit Homography(const std::array<double, 9>& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);
  static Homography scaling(double sx, double sy);

  const std::array<double, 9>& matrix() const { return m_; }
  double operator()(int row, int col) const { return m_[static_cast<std::size_t>(row * 3 + col)]; }

  double determinant() const;
  Homography inverse() const;

  // (a * b)(p) = a(b(p))
  friend Homography operator*(const Homography& a, const Homography& b);

 private:
  std::array<double, 9> m_;
};

// Divides by m[2][2] when |m[2][2]| > 1e-12, else by the Frobenius norm.
std::array<double, 9> canonicalize(const std::array<double, 9>& m);

// Throws Error(degenerate_point) when the homogeneous w is within 1e-12 of 0.
Point2 apply_homography(const Homography& h, const Point2& p);

struct AffineTransform2D {
  double rotation_deg = 0.0;
  // Fraction of image width/height.
  double translation_x = 0.0;
  double translation_y = 0.0;
  double scale = 1.0;
  double shear_deg = 0.0;
  Point2 center;

  // p' = C + t*size + R * Sh * S * (p - C), with Sh a shear along x.
  Homography expand(double width, double height) const;
  // Composed analytically from the inverse factors, not by matrix inversion.
  Homography expand_inverse(double width, double height) const;
};

struct Correspondence {
  Point2 fixed;
  Point2 moving;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  std::vector<double> scores;  // empty, or one per pair

  std::size_t size() const { return pairs.size(); }
};

struct RansacConfig {
  std::size_t max_iterations = 2000;
  double inlier_threshold_px = 3.0;
  std::size_t min_inliers = 4;
  std::uint64_t seed = 0;
  bool exhaustive = false;

  void validate() const;
};

struct RansacResult {
  Homography model;
  std::vector<bool> inlier_mask;
  std::size_t inlier_count = 0;
  double mean_inlier_error = 0.0;
  std::size_t hypotheses_evaluated = 0;
};

// Normalized DLT: estimated model maps each moving point onto its fixed point.
// Throws insufficient_points (< 4) or degenerate_configuration.
Homography estimate_homography(std::span<const Correspondence> pairs);
inline Homography estimate_homography(const CorrespondenceSet& c) { return estimate_homography(c.pairs); }

// Closed-form four-point solver. Returns nullopt when any three points of
// either quadruple are (numerically) collinear.
std::optional<Homography> homography_from_four(std::span<const Correspondence, 4> quad);

double reprojection_error(const Homography& h, const Correspondence& c);

// Maximises the inlier count (error < threshold), breaking ties by the lower
// mean inlier error (differences under 1e-9 px keep the earlier hypothesis,
// so exhaustive mode picks the first 4-subset in lexicographic order), then
// refits on the winning consensus set. The returned mask is the consensus
// set of the best hypothesis.
// Throws insufficient_points (< 4) or no_consensus (best count < min_inliers).
RansacResult ransac_homography(const CorrespondenceSet& c, const RansacConfig& cfg);

// Throws non_positive_scale unless sx, sy > 0.
std::vector<Point2> scale_points(std::span<const Point2> pts, double sx, double sy);

// Nine whitespace-separated decimals, row-major.
Homography read_homography(const std::filesystem::path& path);
void write_homography(const std::filesystem::path& path, const Homography& h);

}  // namespace conked
