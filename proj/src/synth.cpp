#include "conked/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"
#include "conked/rng.hpp"

namespace conked {

void VesselTreeSpec::validate() const {
  if (width < 32 || height < 32) throw Error(Errc::invalid_argument, "synthetic images must be at least 32x32");
  if (n_branches < 0 || n_bifurcations < 0 || n_crossovers < -1)
    throw Error(Errc::invalid_argument, "vessel and keypoint counts must be >= 0");
  if (!(vessel_width_min > 0.0) || !(vessel_width_max >= vessel_width_min))
    throw Error(Errc::invalid_argument, "vessel width range must satisfy 0 < min <= max");
  if (!(min_separation >= 0.0)) throw Error(Errc::invalid_argument, "min_separation must be >= 0");
}

Point2 VesselCurve::at(double t) const {
  const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
  return {a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y};
}

Point2 VesselCurve::tangent(double t) const {
  return {2 * (1 - t) * (p1.x - p0.x) + 2 * t * (p2.x - p1.x), 2 * (1 - t) * (p1.y - p0.y) + 2 * t * (p2.y - p1.y)};
}

namespace {

constexpr int kSegments = 48;

std::vector<Point2> polyline(const VesselCurve& c) {
  std::vector<Point2> pts(kSegments + 1);
  for (int i = 0; i <= kSegments; ++i) pts[static_cast<std::size_t>(i)] = c.at(static_cast<double>(i) / kSegments);
  return pts;
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, {a.x + t * dx, a.y + t * dy});
}

double polyline_distance(Point2 p, const std::vector<Point2>& line) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) best = std::min(best, segment_distance(p, line[i], line[i + 1]));
  return best;
}

double cross2(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

struct Intersection {
  double ta = 0.0;
  double tb = 0.0;
  Point2 point;
};

// Segment crossings of the two polylines, refined by Newton's method on
// a(t) - b(u) = 0.
std::vector<Intersection> intersect(const VesselCurve& a, const VesselCurve& b) {
  const auto la = polyline(a), lb = polyline(b);
  std::vector<Intersection> out;
  for (int i = 0; i < kSegments; ++i) {
    const Point2 p = la[static_cast<std::size_t>(i)], r{la[static_cast<std::size_t>(i) + 1].x - p.x,
                                                         la[static_cast<std::size_t>(i) + 1].y - p.y};
    for (int j = 0; j < kSegments; ++j) {
      const Point2 q = lb[static_cast<std::size_t>(j)], s{lb[static_cast<std::size_t>(j) + 1].x - q.x,
                                                           lb[static_cast<std::size_t>(j) + 1].y - q.y};
      const double denom = cross2(r, s);
      if (std::abs(denom) < 1e-12) continue;
      const Point2 qp{q.x - p.x, q.y - p.y};
      const double t = cross2(qp, s) / denom, u = cross2(qp, r) / denom;
      if (t < 0 || t >= 1 || u < 0 || u >= 1) continue;
      double ta = (i + t) / kSegments, tb = (j + u) / kSegments;
      for (int it = 0; it < 20; ++it) {
        const Point2 pa = a.at(ta), pb = b.at(tb);
        const Point2 da = a.tangent(ta), db = b.tangent(tb);
        const double fx = pa.x - pb.x, fy = pa.y - pb.y;
        // J = [da, -db]
        const double det = da.x * -db.y - (-db.x) * da.y;
        if (std::abs(det) < 1e-12) break;
        const double dta = (fx * -db.y - (-db.x) * fy) / det;
        const double dtb = (da.x * fy - da.y * fx) / det;
        ta -= dta;
        tb -= dtb;
        if (std::abs(dta) + std::abs(dtb) < 1e-13) break;
      }
      ta = std::clamp(ta, 0.0, 1.0);
      tb = std::clamp(tb, 0.0, 1.0);
      const Point2 x = a.at(ta);
      const bool duplicate = std::any_of(out.begin(), out.end(), [&](const Intersection& o) { return distance(o.point, x) < 1.0; });
      if (!duplicate) out.push_back({ta, tb, x});
    }
  }
  return out;
}

double angle_between(Point2 u, Point2 v) {
  const double c = (u.x * v.x + u.y * v.y) / (std::hypot(u.x, u.y) * std::hypot(v.x, v.y));
  const double a = std::acos(std::clamp(std::abs(c), 0.0, 1.0));
  return a * 180.0 / std::numbers::pi;
}

Point2 rounded(Point2 p) { return {std::round(p.x), std::round(p.y)}; }

Point2 rotate(Point2 v, double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  return {std::cos(r) * v.x - std::sin(r) * v.y, std::sin(r) * v.x + std::cos(r) * v.y};
}

Point2 unit(Point2 v) {
  const double n = std::hypot(v.x, v.y);
  return {v.x / n, v.y / n};
}

class TreeBuilder {
 public:
  TreeBuilder(const VesselTreeSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {
    scene_.width = spec.width;
    scene_.height = spec.height;
    scene_.disc_center = {(spec.width - 1) / 2.0, (spec.height - 1) / 2.0};
    scene_.disc_radius = 0.47 * std::min(spec.width, spec.height);
    scene_.background = spec.background;
    scene_.radial_shading = spec.radial_shading;
  }

  VesselTree build() {
    const int tb = spec_.n_bifurcations, tc = spec_.n_crossovers;
    if (spec_.n_branches == 0 && (tb > 0 || tc > 0))
      throw Error(Errc::spec_infeasible, "keypoints requested but no vessels to place them on");
    for (int i = 0; i < spec_.n_branches; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) placed = try_add(propose_root(), std::nullopt);
      if (!placed) throw Error(Errc::spec_infeasible, "could not place root vessel " + std::to_string(i));
    }
    int budget = 4000 + 400 * (tb + std::max(tc, 0));
    while (bifurcations_ < tb || (tc >= 0 && crossovers_ < tc)) {
      if (budget-- <= 0)
        throw Error(Errc::spec_infeasible, "placed " + std::to_string(crossovers_) + " crossovers and " +
                                               std::to_string(bifurcations_) + " bifurcations before giving up");
      if (bifurcations_ < tb) {
        const auto parent = static_cast<int>(uniform_index(rng_, scene_.curves.size()));
        if (auto child = propose_child(parent)) try_add(child->first, child->second);
      } else {
        if (auto crossing = propose_crossing()) try_add(*crossing, std::nullopt);
      }
    }
    add_texture();
    VesselTree tree;
    tree.scene = scene_;
    tree.keypoints = keypoints_;
    tree.image = render_scene(scene_, Homography::identity(), spec_.width, spec_.height);
    return tree;
  }

 private:
  double random_width() { return uniform(rng_, spec_.vessel_width_min, spec_.vessel_width_max); }

  bool in_margin(Point2 p, double margin) const {
    return p.x >= margin && p.y >= margin && p.x <= spec_.width - 1 - margin && p.y <= spec_.height - 1 - margin &&
           distance(p, scene_.disc_center) <= scene_.disc_radius - margin;
  }

  VesselCurve propose_root() {
    const Point2 c = scene_.disc_center;
    const double r = scene_.disc_radius * 1.08;
    const double theta = uniform(rng_, 0, 2 * std::numbers::pi);
    const double phi = theta + std::numbers::pi + uniform(rng_, -0.9, 0.9);
    VesselCurve v;
    v.p0 = {c.x + r * std::cos(theta), c.y + r * std::sin(theta)};
    v.p2 = {c.x + r * std::cos(phi), c.y + r * std::sin(phi)};
    const Point2 mid{(v.p0.x + v.p2.x) / 2, (v.p0.y + v.p2.y) / 2};
    const Point2 n = unit(rotate({v.p2.x - v.p0.x, v.p2.y - v.p0.y}, 90));
    const double off = uniform(rng_, -0.45, 0.45) * scene_.disc_radius;
    v.p1 = {mid.x + off * n.x, mid.y + off * n.y};
    v.width = random_width();
    return v;
  }

  // A child starting at an integer pixel of `parent`.
  std::optional<std::pair<VesselCurve, Point2>> propose_child(int parent) {
    const VesselCurve& p = scene_.curves[static_cast<std::size_t>(parent)];
    const double t = uniform(rng_, 0.12, 0.88);
    const Point2 s = rounded(p.at(t));
    if (!in_margin(s, 3.0)) return std::nullopt;
    if (distance(s, p.p0) < 6 || distance(s, p.p2) < 6) return std::nullopt;
    const double sign = uniform(rng_, 0, 1) < 0.5 ? -1.0 : 1.0;
    const Point2 forward = unit(p.tangent(t));
    const Point2 dir = rotate(forward, sign * uniform(rng_, 30, 70));
    const double len = uniform(rng_, 0.35, 0.8) * scene_.disc_radius;
    VesselCurve v;
    v.p0 = s;
    v.p2 = {s.x + len * dir.x, s.y + len * dir.y};
    const Point2 bend = rotate(dir, uniform(rng_, -20, 20));
    v.p1 = {s.x + 0.5 * len * bend.x, s.y + 0.5 * len * bend.y};
    v.width = std::max(spec_.vessel_width_min * 0.8, p.width * uniform(rng_, 0.65, 0.9));
    v.parent = parent;
    if (distance(v.p2, scene_.disc_center) > scene_.disc_radius * 1.08) return std::nullopt;
    return std::make_pair(v, s);
  }

  // A short vessel passing over an existing one.
  std::optional<VesselCurve> propose_crossing() {
    if (scene_.curves.empty()) return std::nullopt;
    const VesselCurve& e = scene_.curves[uniform_index(rng_, scene_.curves.size())];
    const double t = uniform(rng_, 0.12, 0.88);
    const Point2 x = e.at(t);
    if (!in_margin(x, 4.0)) return std::nullopt;
    const double sign = uniform(rng_, 0, 1) < 0.5 ? -1.0 : 1.0;
    const Point2 dir = rotate(unit(e.tangent(t)), sign * uniform(rng_, 45, 90));
    const double a = uniform(rng_, 0.25, 0.5) * scene_.disc_radius, b = uniform(rng_, 0.25, 0.5) * scene_.disc_radius;
    VesselCurve v;
    v.p0 = {x.x - a * dir.x, x.y - a * dir.y};
    v.p2 = {x.x + b * dir.x, x.y + b * dir.y};
    const Point2 n = rotate(dir, 90);
    const double off = uniform(rng_, -2, 2);
    v.p1 = {(v.p0.x + v.p2.x) / 2 + off * n.x, (v.p0.y + v.p2.y) / 2 + off * n.y};
    v.width = random_width() * 0.85;
    return v;
  }

  bool try_add(const VesselCurve& v, std::optional<Point2> start) {
    std::vector<Keypoint> fresh;
    if (start) fresh.push_back({*start, KeypointClass::bifurcation, 1.0});
    // Allowed contact zones per existing curve.
    std::vector<std::vector<Point2>> contacts(scene_.curves.size());
    if (start) contacts[static_cast<std::size_t>(v.parent)].push_back(*start);
    int new_crossings = 0;
    for (std::size_t i = 0; i < scene_.curves.size(); ++i) {
      const VesselCurve& e = scene_.curves[i];
      for (const auto& x : intersect(v, e)) {
        if (start && static_cast<int>(i) == v.parent) {
          if (distance(x.point, *start) < 3.0) continue;
          return false;  // a child may touch its parent only where it starts
        }
        if (angle_between(v.tangent(x.ta), e.tangent(x.tb)) < 35.0) return false;
        for (Point2 end : {v.p0, v.p2, e.p0, e.p2})
          if (distance(x.point, end) < 6.0) return false;
        const Point2 px = rounded(x.point);
        if (!in_margin(px, 3.0)) return false;
        fresh.push_back({px, KeypointClass::crossover, 1.0});
        contacts[i].push_back(x.point);
        ++new_crossings;
      }
    }
    if (spec_.n_crossovers >= 0 && crossovers_ + new_crossings > spec_.n_crossovers) return false;
    for (std::size_t a = 0; a < fresh.size(); ++a) {
      for (std::size_t b = a + 1; b < fresh.size(); ++b)
        if (distance(fresh[a].location, fresh[b].location) < spec_.min_separation) return false;
      for (const auto& k : keypoints_.points)
        if (distance(fresh[a].location, k.location) < spec_.min_separation) return false;
    }
    // Vessels may only come close to each other at their junctions.
    const auto line = polyline(v);
    const auto samples = dense_samples(v);
    for (std::size_t i = 0; i < scene_.curves.size(); ++i) {
      const VesselCurve& e = scene_.curves[i];
      const double clearance = (v.width + e.width) / 2 + 2.0;
      for (const Point2 s : samples) {
        if (polyline_distance(s, lines_[i]) >= clearance) continue;
        const bool near_contact =
            std::any_of(contacts[i].begin(), contacts[i].end(), [&](Point2 c) { return distance(s, c) < 6.0; });
        if (!near_contact) return false;
      }
    }
    // Existing junctions must not sit next to the new vessel either.
    for (const auto& k : keypoints_.points) {
      if (polyline_distance(k.location, line) < spec_.min_separation / 2) return false;
    }
    scene_.curves.push_back(v);
    lines_.push_back(line);
    for (const auto& k : fresh) {
      keypoints_.points.push_back(k);
      if (k.cls == KeypointClass::crossover) {
        ++crossovers_;
      } else {
        ++bifurcations_;
      }
    }
    return true;
  }

  std::vector<Point2> dense_samples(const VesselCurve& v) const {
    const auto line = polyline(v);
    double length = 0;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) length += distance(line[i], line[i + 1]);
    const int n = std::max(2, static_cast<int>(std::ceil(length / 0.5)));
    std::vector<Point2> out;
    for (int i = 0; i <= n; ++i) {
      const Point2 p = v.at(static_cast<double>(i) / n);
      if (p.x >= -2 && p.y >= -2 && p.x <= spec_.width + 1 && p.y <= spec_.height + 1) out.push_back(p);
    }
    return out;
  }

  void add_texture() {
    for (int i = 0; i < 14; ++i) {
      const double a = uniform(rng_, 0, 2 * std::numbers::pi), r = scene_.disc_radius * std::sqrt(uniform(rng_, 0, 1));
      scene_.texture.push_back({scene_.disc_center.x + r * std::cos(a), scene_.disc_center.y + r * std::sin(a),
                                uniform(rng_, 3.0, 10.0), uniform(rng_, -0.08, 0.08)});
    }
  }

  const VesselTreeSpec& spec_;
  Rng& rng_;
  VesselScene scene_;
  std::vector<std::vector<Point2>> lines_;
  KeypointSet keypoints_;
  int crossovers_ = 0;
  int bifurcations_ = 0;
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

}  // namespace

VesselTree generate_tree(const VesselTreeSpec& spec) {
  spec.validate();
  // Placement is incremental, so an unlucky early vessel can make the exact
  // counts unreachable; restart from fresh sub-streams a few times.
  constexpr int kRestarts = 8;
  VesselTree tree;
  for (int attempt = 0;; ++attempt) {
    Rng rng = make_rng(spec.seed, "synth-tree", static_cast<std::uint64_t>(attempt));
    TreeBuilder builder(spec, rng);
    try {
      tree = builder.build();
      break;
    } catch (const Error& e) {
      if (e.code() != Errc::spec_infeasible || attempt + 1 == kRestarts) throw;
    }
  }
  // Keypoints sorted by class, then row, then column, like extracted sets.
  std::stable_sort(tree.keypoints.points.begin(), tree.keypoints.points.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.cls != b.cls) return a.cls < b.cls;
    if (a.location.y != b.location.y) return a.location.y < b.location.y;
    return a.location.x < b.location.x;
  });
  return tree;
}

Image render_scene(const VesselScene& scene, const Homography& view_to_scene, int width, int height,
                   const std::vector<Occlusion>& occlusions, const Photometric& photometric) {
  Image out(width, height, 3);
  std::vector<std::vector<Point2>> lines;
  std::vector<std::array<double, 4>> boxes;
  for (const auto& c : scene.curves) {
    lines.push_back(polyline(c));
    std::array<double, 4> b = {1e300, 1e300, -1e300, -1e300};
    for (const auto& p : lines.back()) {
      b[0] = std::min(b[0], p.x), b[1] = std::min(b[1], p.y), b[2] = std::max(b[2], p.x), b[3] = std::max(b[3], p.y);
    }
    const double pad = c.width / 2 + 1;
    boxes.push_back({b[0] - pad, b[1] - pad, b[2] + pad, b[3] + pad});
  }
  const std::array<float, 3> lesion = {0.95f, 0.85f, 0.45f};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2 q = apply_homography(view_to_scene, {static_cast<double>(x), static_cast<double>(y)});
      if (!(q.x >= -0.5 && q.y >= -0.5 && q.x < scene.width - 0.5 && q.y < scene.height - 0.5)) continue;
      const double r = distance(q, scene.disc_center);
      const double inside = std::clamp(scene.disc_radius - r + 0.5, 0.0, 1.0);
      if (inside <= 0.0) continue;
      double shade = 1.0 - scene.radial_shading * (r / scene.disc_radius) * (r / scene.disc_radius);
      for (const auto& t : scene.texture) {
        const double d2 = (q.x - t[0]) * (q.x - t[0]) + (q.y - t[1]) * (q.y - t[1]);
        shade *= 1.0 + t[3] * std::exp(-d2 / (2 * t[2] * t[2]));
      }
      double alpha = 0.0;
      for (std::size_t i = 0; i < scene.curves.size(); ++i) {
        const auto& b = boxes[i];
        if (q.x < b[0] || q.y < b[1] || q.x > b[2] || q.y > b[3]) continue;
        const double d = polyline_distance(q, lines[i]);
        alpha = std::max(alpha, std::clamp(scene.curves[i].width / 2 + 0.5 - d, 0.0, 1.0));
      }
      double lesion_weight = 0.0;
      for (const auto& o : occlusions) {
        const double d = distance(q, o.center);
        alpha *= smoothstep(o.radius * 0.7, o.radius * 1.15, d);
        lesion_weight = std::max(lesion_weight, 0.65 * (1.0 - smoothstep(o.radius * 0.5, o.radius * 1.3, d)));
      }
      static constexpr std::array<double, 3> vessel_factor = {0.55, 0.38, 0.5};
      for (int c = 0; c < 3; ++c) {
        const double bg = scene.background[static_cast<std::size_t>(c)] * shade;
        double v = bg * (1.0 - alpha) + bg * vessel_factor[static_cast<std::size_t>(c)] * alpha;
        v = v * (1.0 - lesion_weight) + lesion[static_cast<std::size_t>(c)] * lesion_weight;
        v = photometric.gain * std::pow(std::max(v, 0.0), photometric.gamma) * photometric.tint[static_cast<std::size_t>(c)];
        out.at(x, y, c) = static_cast<float>(std::clamp(v * inside, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::string_view category_analog_name(CategoryAnalog c) {
  switch (c) {
    case CategoryAnalog::high_overlap: return "high_overlap";
    case CategoryAnalog::low_overlap: return "low_overlap";
    case CategoryAnalog::appearance_change: return "appearance_change";
  }
  return "?";
}

CategoryAnalog parse_category_analog(std::string_view s) {
  if (s == "high_overlap" || s == "S") return CategoryAnalog::high_overlap;
  if (s == "low_overlap" || s == "P") return CategoryAnalog::low_overlap;
  if (s == "appearance_change" || s == "A") return CategoryAnalog::appearance_change;
  throw Error(Errc::invalid_argument, "unknown category '" + std::string(s) + "'");
}

Category to_category(CategoryAnalog c) {
  switch (c) {
    case CategoryAnalog::high_overlap: return Category::S;
    case CategoryAnalog::low_overlap: return Category::P;
    case CategoryAnalog::appearance_change: return Category::A;
  }
  return Category::S;
}

double shared_fraction(const Homography& moving_to_fixed, int width, int height) {
  std::size_t shared = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2 f = apply_homography(moving_to_fixed, {static_cast<double>(x), static_cast<double>(y)});
      if (f.x >= -0.5 && f.y >= -0.5 && f.x < width - 0.5 && f.y < height - 0.5) ++shared;
    }
  }
  return static_cast<double>(shared) / (static_cast<double>(width) * static_cast<double>(height));
}

namespace {

// Moving -> fixed map: affine about the centre plus a mild perspective term.
Homography sample_homography(CategoryAnalog cat, int w, int h, Rng& rng) {
  const double size = std::max(w, h);
  AffineTransform2D a;
  a.center = {(w - 1) / 2.0, (h - 1) / 2.0};
  if (cat == CategoryAnalog::low_overlap) {
    a.rotation_deg = uniform(rng, -5, 5);
    a.scale = uniform(rng, 0.97, 1.03);
    const double sx = uniform(rng, 0, 1) < 0.5 ? -1 : 1, sy = uniform(rng, 0, 1) < 0.5 ? -1 : 1;
    a.translation_x = sx * uniform(rng, 0.32, 0.40);
    a.translation_y = sy * uniform(rng, 0.32, 0.40);
  } else {
    a.rotation_deg = uniform(rng, -8, 8);
    a.scale = uniform(rng, 0.93, 1.07);
    a.shear_deg = uniform(rng, -2, 2);
    a.translation_x = uniform(rng, -0.06, 0.06);
    a.translation_y = uniform(rng, -0.06, 0.06);
  }
  const Homography affine = a.expand(w, h);
  const double g = 0.01 / size;
  // Perspective applied about the centre so the centre stays put.
  const Homography persp = Homography::translation(a.center.x, a.center.y) *
                           Homography({1, 0, 0, 0, 1, 0, uniform(rng, -g, g), uniform(rng, -g, g), 1}) *
                           Homography::translation(-a.center.x, -a.center.y);
  return affine * persp;
}

}  // namespace

SyntheticCase generate_case(const VesselTreeSpec& spec, CategoryAnalog category, std::uint64_t seed,
                            const CaseOptions& options) {
  spec.validate();
  if (options.control_points < 1) throw Error(Errc::invalid_argument, "need at least one control point");
  Rng rng = make_rng(seed, "synth-case");
  VesselTreeSpec tree_spec = spec;
  tree_spec.seed = derive_seed(seed, "synth-tree-seed");
  const VesselTree tree = generate_tree(tree_spec);
  const int w = spec.width, h = spec.height;

  SyntheticCase c;
  c.category = category;
  c.image_fixed = tree.image;
  c.gt_keypoints_fixed = tree.keypoints;
  // Registration needs at least four shared structures; low overlap also
  // needs less than half of the moving frame shared.
  bool ok = false;
  for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
    c.gt_homography = options.force_identity ? Homography::identity() : sample_homography(category, w, h, rng);
    const auto moved = transform_keypoints(tree.keypoints, c.gt_homography.inverse(), w, h);
    c.gt_keypoints_moving = moved.keypoints;
    c.moving_source = moved.source_index;
    ok = moved.keypoints.size() >= 4 || options.force_identity;
    if (category == CategoryAnalog::low_overlap && !options.force_identity)
      ok = ok && shared_fraction(c.gt_homography, w, h) < 0.5;
  }
  if (!ok) throw Error(Errc::spec_infeasible, "could not sample a registrable view for this tree");

  std::vector<Occlusion> occlusions;
  Photometric photo;
  if (category == CategoryAnalog::appearance_change) {
    photo.gain = uniform(rng, 0.8, 1.15);
    photo.gamma = uniform(rng, 0.8, 1.25);
    for (auto& t : photo.tint) t = uniform(rng, 0.9, 1.1);
    const std::size_t n = c.gt_keypoints_moving.size();
    const std::size_t max_removed = std::max<std::size_t>(1, n / 5);
    const std::size_t removed = n == 0 ? 0 : 1 + uniform_index(rng, max_removed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    std::vector<bool> drop(n, false);
    for (std::size_t i = 0; i < removed; ++i) drop[order[i]] = true;
    KeypointSet kept;
    std::vector<std::size_t> kept_source;
    for (std::size_t i = 0; i < n; ++i) {
      if (drop[i]) {
        occlusions.push_back({tree.keypoints.points[c.moving_source[i]].location, 3.5});
      } else {
        kept.points.push_back(c.gt_keypoints_moving.points[i]);
        kept_source.push_back(c.moving_source[i]);
      }
    }
    c.gt_keypoints_moving = std::move(kept);
    c.moving_source = std::move(kept_source);
  }
  c.image_moving = render_scene(tree.scene, c.gt_homography, w, h, occlusions, photo);

  const Homography inv = c.gt_homography.inverse();
  const double disc_r = 0.47 * std::min(w, h) - 2.0;
  const Point2 centre{(w - 1) / 2.0, (h - 1) / 2.0};
  for (int tries = 0; static_cast<int>(c.control_points.size()) < options.control_points; ++tries) {
    if (tries > 100000) throw Error(Errc::spec_infeasible, "shared region too small for control points");
    const Point2 f{uniform(rng, 0, w - 1), uniform(rng, 0, h - 1)};
    if (distance(f, centre) > disc_r) continue;
    const Point2 m = apply_homography(inv, f);
    if (m.x < 0 || m.y < 0 || m.x > w - 1 || m.y > h - 1) continue;
    c.control_points.push_back({f, m});
  }
  return c;
}

std::array<int, 3> category_mix(int total) {
  if (total < 0) throw Error(Errc::invalid_argument, "case count must be >= 0");
  const std::array<int, 3> weights = {71, 49, 14};
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(total) * weights[i] / 134.0;
    counts[i] = static_cast<int>(std::floor(exact));
    remainder[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < total) {
    const auto i = static_cast<std::size_t>(std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
    ++counts[i];
    remainder[i] = -1.0;
    ++assigned;
  }
  return counts;
}

void save_case(const std::filesystem::path& dir, const SyntheticCase& c) {
  std::filesystem::create_directories(dir);
  write_pnm(dir / "fixed.ppm", c.image_fixed);
  write_pnm(dir / "moving.ppm", c.image_moving);
  write_homography(dir / "homography.txt", c.gt_homography);
  write_keypoints_csv(dir / "keypoints_fixed.csv", c.gt_keypoints_fixed);
  write_keypoints_csv(dir / "keypoints_moving.csv", c.gt_keypoints_moving);
  write_control_points(dir / "control_points.txt", c.control_points);
  std::ostringstream meta;
  meta << "id " << c.id << "\ncategory " << category_analog_name(c.category) << "\nmoving_source";
  for (std::size_t s : c.moving_source) meta << ' ' << s;
  meta << '\n';
  write_file_atomic(dir / "case.txt", meta.str());
}

SyntheticCase load_case(const std::filesystem::path& dir) {
  SyntheticCase c;
  c.image_fixed = read_pnm(dir / "fixed.ppm");
  c.image_moving = read_pnm(dir / "moving.ppm");
  c.gt_homography = read_homography(dir / "homography.txt");
  c.gt_keypoints_fixed = read_keypoints_csv(dir / "keypoints_fixed.csv");
  c.gt_keypoints_moving = read_keypoints_csv(dir / "keypoints_moving.csv");
  c.control_points = read_control_points(dir / "control_points.txt");
  std::istringstream meta(read_file(dir / "case.txt"));
  std::string line;
  while (std::getline(meta, line)) {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "id") {
      fields >> c.id;
    } else if (key == "category") {
      std::string v;
      fields >> v;
      c.category = parse_category_analog(v);
    } else if (key == "moving_source") {
      for (std::size_t s; fields >> s;) c.moving_source.push_back(s);
    }
  }
  return c;
}

}  // namespace conked
