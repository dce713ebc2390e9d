#include "conked/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"
#include "conked/rng.hpp"

namespace conked {

namespace {

using Mat3 = std::array<double, 9>;

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  }
  return r;
}

double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 adjugate(const Mat3& m) {
  return {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
          m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
          m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
}

// Shift to centroid, scale so the mean distance from it is sqrt(2).
struct Normalizer {
  double cx = 0.0, cy = 0.0, s = 1.0;

  static std::optional<Normalizer> fit(std::span<const Point2> pts) {
    Normalizer n;
    for (const auto& p : pts) {
      n.cx += p.x;
      n.cy += p.y;
    }
    n.cx /= static_cast<double>(pts.size());
    n.cy /= static_cast<double>(pts.size());
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += std::hypot(p.x - n.cx, p.y - n.cy);
    mean_dist /= static_cast<double>(pts.size());
    if (!(mean_dist > 1e-12)) return std::nullopt;
    n.s = std::numbers::sqrt2 / mean_dist;
    return n;
  }

  Point2 apply(const Point2& p) const { return {(p.x - cx) * s, (p.y - cy) * s}; }
  Mat3 matrix() const { return {s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1}; }
  Mat3 inverse_matrix() const { return {1 / s, 0, cx, 0, 1 / s, cy, 0, 0, 1}; }
};

// Basis matrix sending e1, e2, e3, (1,1,1) to the four points. Points are
// expected pre-normalised so the collinearity tolerance is scale-free.
std::optional<Mat3> basis_to_points(const std::array<Point2, 4>& p) {
  constexpr double kTol = 1e-10;
  const Mat3 cols{p[0].x, p[1].x, p[2].x, p[0].y, p[1].y, p[2].y, 1.0, 1.0, 1.0};
  const double d = det3(cols);
  if (std::abs(d) < kTol) return std::nullopt;
  // Cramer: lambda_i = det(cols with column i replaced by p4) / d
  std::array<double, 3> lambda{};
  for (int c = 0; c < 3; ++c) {
    Mat3 m = cols;
    m[0 * 3 + c] = p[3].x;
    m[1 * 3 + c] = p[3].y;
    m[2 * 3 + c] = 1.0;
    const double dc = det3(m);
    if (std::abs(dc) < kTol) return std::nullopt;
    lambda[static_cast<std::size_t>(c)] = dc / d;
  }
  Mat3 r = cols;
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 3; ++c) r[row * 3 + c] *= lambda[static_cast<std::size_t>(c)];
  }
  return r;
}

}  // namespace

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::array<double, 9> canonicalize(const std::array<double, 9>& m) {
  std::array<double, 9> r = m;
  double scale = m[8];
  if (std::abs(scale) <= 1e-12) {
    scale = 0.0;
    for (double v : m) scale += v * v;
    scale = std::sqrt(scale);
  }
  if (scale == 0.0) return r;
  for (double& v : r) v /= scale;
  return r;
}

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) {
  for (double v : m) {
    if (!std::isfinite(v)) throw Error(Errc::degenerate_configuration, "non-finite homography entry");
  }
  m_ = canonicalize(m);
  if (!(std::abs(det3(m_)) > kSingularTolerance)) {
    throw Error(Errc::degenerate_configuration, "homography is singular");
  }
}

Homography Homography::translation(double tx, double ty) {
  return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
}

Homography Homography::scaling(double sx, double sy) {
  return Homography({sx, 0, 0, 0, sy, 0, 0, 0, 1});
}

double Homography::determinant() const { return det3(m_); }

Homography Homography::inverse() const {
  // adj(M) = det(M) * M^-1; the scale is dropped by canonicalisation.
  return Homography(adjugate(m_));
}

Homography operator*(const Homography& a, const Homography& b) {
  return Homography(multiply(a.m_, b.m_));
}

Point2 apply_homography(const Homography& h, const Point2& p) {
  const auto& m = h.matrix();
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (!(std::abs(w) > 1e-12)) {
    throw Error(Errc::degenerate_point, "point maps to infinity");
  }
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography AffineTransform2D::expand(double width, double height) const {
  const double r = rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(shear_deg * std::numbers::pi / 180.0);
  const double c = std::cos(r), s = std::sin(r);
  // A = R * Sh * S
  const double a00 = c * scale, a01 = (c * sh - s) * scale;
  const double a10 = s * scale, a11 = (s * sh + c) * scale;
  const double tx = center.x + translation_x * width - (a00 * center.x + a01 * center.y);
  const double ty = center.y + translation_y * height - (a10 * center.x + a11 * center.y);
  return Homography({a00, a01, tx, a10, a11, ty, 0, 0, 1});
}

Homography AffineTransform2D::expand_inverse(double width, double height) const {
  const double r = rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(shear_deg * std::numbers::pi / 180.0);
  const double c = std::cos(r), s = std::sin(r);
  // A^-1 = S^-1 * Sh^-1 * R^T, with Sh^-1 = [[1, -sh], [0, 1]]
  const double inv = 1.0 / scale;
  const double b00 = inv * (c + sh * s), b01 = inv * (s - sh * c);
  const double b10 = inv * -s, b11 = inv * c;
  const double ox = center.x + translation_x * width;
  const double oy = center.y + translation_y * height;
  const double tx = center.x - (b00 * ox + b01 * oy);
  const double ty = center.y - (b10 * ox + b11 * oy);
  return Homography({b00, b01, tx, b10, b11, ty, 0, 0, 1});
}

void RansacConfig::validate() const {
  if (!(inlier_threshold_px > 0.0)) throw Error(Errc::invalid_argument, "inlier_threshold_px must be > 0");
  if (max_iterations < 1) throw Error(Errc::invalid_argument, "max_iterations must be >= 1");
}

Homography estimate_homography(std::span<const Correspondence> pairs) {
  const std::size_t n = pairs.size();
  if (n < 4) throw Error(Errc::insufficient_points, "need at least 4 correspondences, got " + std::to_string(n));

  std::vector<Point2> fixed(n), moving(n);
  for (std::size_t i = 0; i < n; ++i) {
    fixed[i] = pairs[i].fixed;
    moving[i] = pairs[i].moving;
  }
  const auto nf = Normalizer::fit(fixed);
  const auto nm = Normalizer::fit(moving);
  if (!nf || !nm) throw Error(Errc::degenerate_configuration, "coincident points");

  Eigen::MatrixXd a(static_cast<Eigen::Index>(2 * n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 m = nm->apply(moving[i]);
    const Point2 f = nf->apply(fixed[i]);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -m.x, -m.y, -1, 0, 0, 0, f.x * m.x, f.x * m.y, f.x;
    a.row(r + 1) << 0, 0, 0, -m.x, -m.y, -1, f.y * m.x, f.y * m.y, f.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A well-posed problem has a one-dimensional null space: rank 8.
  if (sv.size() < 8 || !(sv(7) > 1e-8 * sv(0))) {
    throw Error(Errc::degenerate_configuration, "design matrix is rank-deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn{};
  for (int i = 0; i < 9; ++i) hn[static_cast<std::size_t>(i)] = h(i);
  const Mat3 full = multiply(nf->inverse_matrix(), multiply(hn, nm->matrix()));
  const Mat3 canon = canonicalize(full);
  if (!(std::abs(det3(canon)) > Homography::kSingularTolerance)) {
    throw Error(Errc::degenerate_configuration, "estimated homography is singular");
  }
  return Homography(canon);
}

std::optional<Homography> homography_from_four(std::span<const Correspondence, 4> quad) {
  std::array<Point2, 4> f{}, m{};
  for (std::size_t i = 0; i < 4; ++i) {
    f[i] = quad[i].fixed;
    m[i] = quad[i].moving;
  }
  const auto nf = Normalizer::fit(f);
  const auto nm = Normalizer::fit(m);
  if (!nf || !nm) return std::nullopt;
  for (std::size_t i = 0; i < 4; ++i) {
    f[i] = nf->apply(f[i]);
    m[i] = nm->apply(m[i]);
  }
  const auto bf = basis_to_points(f);
  const auto bm = basis_to_points(m);
  if (!bf || !bm) return std::nullopt;
  // moving -> basis -> fixed, in normalised coordinates, then undo normalisation
  const Mat3 hn = multiply(*bf, adjugate(*bm));
  const Mat3 full = canonicalize(multiply(nf->inverse_matrix(), multiply(hn, nm->matrix())));
  if (!(std::abs(det3(full)) > Homography::kSingularTolerance)) return std::nullopt;
  for (double v : full) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return Homography(full);
}

double reprojection_error(const Homography& h, const Correspondence& c) {
  const auto& m = h.matrix();
  const double w = m[6] * c.moving.x + m[7] * c.moving.y + m[8];
  if (!(std::abs(w) > 1e-12)) return std::numeric_limits<double>::infinity();
  const double x = (m[0] * c.moving.x + m[1] * c.moving.y + m[2]) / w;
  const double y = (m[3] * c.moving.x + m[4] * c.moving.y + m[5]) / w;
  return std::hypot(x - c.fixed.x, y - c.fixed.y);
}

namespace {

struct Hypothesis {
  std::size_t count = 0;
  double mean_error = std::numeric_limits<double>::infinity();
};

Hypothesis score(const Homography& h, std::span<const Correspondence> pairs, double threshold,
                 std::vector<bool>& mask) {
  Hypothesis out;
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double e = reprojection_error(h, pairs[i]);
    mask[i] = e < threshold;
    if (mask[i]) {
      ++out.count;
      sum += e;
    }
  }
  out.mean_error = out.count > 0 ? sum / static_cast<double>(out.count) : std::numeric_limits<double>::infinity();
  return out;
}

// Mean errors closer than this are round-off (several exact four-point fits
// tie at ~1e-13 px); the earlier hypothesis is kept.
constexpr double kErrorTiePx = 1e-9;

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.count != b.count) return a.count > b.count;
  return a.mean_error < b.mean_error - kErrorTiePx;
}

}  // namespace

RansacResult ransac_homography(const CorrespondenceSet& c, const RansacConfig& cfg) {
  cfg.validate();
  const auto& pairs = c.pairs;
  const std::size_t n = pairs.size();
  if (n < 4) throw Error(Errc::insufficient_points, "RANSAC needs at least 4 correspondences, got " + std::to_string(n));

  RansacResult best;
  Hypothesis best_score;
  bool have_best = false;
  std::vector<bool> mask(n, false);

  auto consider = [&](const std::array<std::size_t, 4>& idx) {
    const std::array<Correspondence, 4> quad{pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
    const auto h = homography_from_four(std::span<const Correspondence, 4>(quad));
    ++best.hypotheses_evaluated;
    if (!h) return;
    const Hypothesis s = score(*h, pairs, cfg.inlier_threshold_px, mask);
    if (!have_best || better(s, best_score)) {
      have_best = true;
      best_score = s;
      best.model = *h;
      best.inlier_mask = mask;
    }
  };

  if (cfg.exhaustive) {
    std::array<std::size_t, 4> idx{};
    for (idx[0] = 0; idx[0] < n; ++idx[0])
      for (idx[1] = idx[0] + 1; idx[1] < n; ++idx[1])
        for (idx[2] = idx[1] + 1; idx[2] < n; ++idx[2])
          for (idx[3] = idx[2] + 1; idx[3] < n; ++idx[3]) consider(idx);
  } else {
    Rng rng = make_rng(cfg.seed, "ransac");
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      std::array<std::size_t, 4> idx{};
      for (std::size_t k = 0; k < 4; ++k) {
        bool fresh = false;
        while (!fresh) {
          idx[k] = static_cast<std::size_t>(uniform_index(rng, n));
          fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                  idx.begin() + static_cast<std::ptrdiff_t>(k);
        }
      }
      consider(idx);
      if (have_best && best_score.count == n) break;
    }
  }

  if (!have_best || best_score.count < cfg.min_inliers || best_score.count < 4) {
    throw Error(Errc::no_consensus, "best consensus has " + std::to_string(have_best ? best_score.count : 0) +
                                        " inliers, need " + std::to_string(std::max<std::size_t>(cfg.min_inliers, 4)));
  }

  std::vector<Correspondence> inliers;
  for (std::size_t i = 0; i < n; ++i) {
    if (best.inlier_mask[i]) inliers.push_back(pairs[i]);
  }
  try {
    best.model = estimate_homography(inliers);
  } catch (const Error&) {
    // keep the minimal-sample model
  }
  best.inlier_count = best_score.count;
  double sum = 0.0;
  for (const auto& p : inliers) sum += reprojection_error(best.model, p);
  best.mean_inlier_error = sum / static_cast<double>(inliers.size());
  return best;
}

std::vector<Point2> scale_points(std::span<const Point2> pts, double sx, double sy) {
  if (!(sx > 0.0) || !(sy > 0.0)) throw Error(Errc::non_positive_scale, "scale factors must be positive");
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back({p.x * sx, p.y * sy});
  return out;
}

Homography read_homography(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::array<double, 9> m{};
  std::string tok;
  for (std::size_t i = 0; i < 9; ++i) {
    if (!(in >> tok)) throw Error(Errc::format_error, path.string() + ": expected 9 values");
    m[i] = parse_double(tok);
  }
  if (in >> tok) throw Error(Errc::format_error, path.string() + ": trailing data after 9 values");
  return Homography(m);
}

void write_homography(const std::filesystem::path& path, const Homography& h) {
  std::ostringstream out;
  out << std::setprecision(17);
  const auto& m = h.matrix();
  for (int r = 0; r < 3; ++r) {
    out << m[r * 3] << ' ' << m[r * 3 + 1] << ' ' << m[r * 3 + 2] << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace conked
