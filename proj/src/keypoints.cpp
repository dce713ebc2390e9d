#include "conked/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "conked/block_io.hpp"
#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

std::string_view class_name(KeypointClass c) {
  return c == KeypointClass::crossover ? "crossover" : "bifurcation";
}

KeypointClass parse_class(std::string_view s) {
  s = trim(s);
  if (s == "crossover") return KeypointClass::crossover;
  if (s == "bifurcation") return KeypointClass::bifurcation;
  throw Error(Errc::format_error, "unknown keypoint class '" + std::string(s) + "'");
}

Heatmap::Heatmap(int width, int height)
    : width_(width), height_(height),
      values_(static_cast<std::size_t>(kChannels) * static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.0f) {
  if (width < 0 || height < 0) throw Error(Errc::invalid_argument, "negative heatmap size");
}

void Heatmap::set(int channel, int x, int y, float v) {
  if (!(v >= 0.0f && v <= 1.0f)) throw Error(Errc::invalid_argument, "heatmap values must lie in [0, 1]");
  values_[index(channel, x, y)] = v;
}

std::size_t KeypointSet::count(KeypointClass c) const {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [c](const Keypoint& k) { return k.cls == c; }));
}

int TargetConfig::effective_radius() const {
  if (!(sigma > 0.0)) throw Error(Errc::invalid_argument, "sigma must be > 0");
  return kernel_radius >= 0 ? kernel_radius : static_cast<int>(std::ceil(3.0 * sigma));
}

void PeakConfig::validate() const {
  if (!(intensity_threshold > 0.0 && intensity_threshold < 1.0)) {
    throw Error(Errc::invalid_argument, "intensity_threshold must lie in (0, 1)");
  }
  if (window_radius < 1) throw Error(Errc::invalid_argument, "window_radius must be >= 1");
}

Heatmap make_target_heatmaps(const BinaryMap& crossovers, const BinaryMap& bifurcations, const TargetConfig& cfg) {
  if (crossovers.width != bifurcations.width || crossovers.height != bifurcations.height) {
    throw Error(Errc::dimension_mismatch, "ground-truth maps differ in size");
  }
  const int w = crossovers.width, h = crossovers.height;
  const int r = cfg.effective_radius();
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  Heatmap out(w, h);
  const BinaryMap* maps[2] = {&crossovers, &bifurcations};
  for (int c = 0; c < 2; ++c) {
    std::vector<float> channel(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0f);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (maps[c]->at(x, y) == 0) continue;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int px = x + dx, py = y + dy;
            if (px < 0 || py < 0 || px >= w || py >= h) continue;
            const auto g = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2));
            float& v = channel[static_cast<std::size_t>(py) * static_cast<std::size_t>(w) + static_cast<std::size_t>(px)];
            v = std::max(v, g);
          }
        }
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.set(c, x, y, channel[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)]);
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.set(Heatmap::kCombined, x, y, std::max(out.at(0, x, y), out.at(1, x, y)));
  }
  return out;
}

std::pair<BinaryMap, BinaryMap> rasterize_keypoints(const KeypointSet& k, int width, int height) {
  std::pair<BinaryMap, BinaryMap> maps{BinaryMap(width, height), BinaryMap(width, height)};
  for (const auto& kp : k.points) {
    const auto x = static_cast<int>(std::lround(kp.location.x));
    const auto y = static_cast<int>(std::lround(kp.location.y));
    if (x < 0 || y < 0 || x >= width || y >= height) throw Error(Errc::out_of_bounds, "keypoint outside raster");
    (kp.cls == KeypointClass::crossover ? maps.first : maps.second).at(x, y) = 1;
  }
  return maps;
}

KeypointSet extract_keypoints(const Heatmap& h, const PeakConfig& cfg) {
  cfg.validate();
  const int r = cfg.window_radius;
  const auto threshold = static_cast<float>(cfg.intensity_threshold);
  KeypointSet out;
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < h.height(); ++y) {
      for (int x = 0; x < h.width(); ++x) {
        const float v = h.at(c, x, y);
        if (!(v >= threshold)) continue;
        bool is_peak = true;
        for (int qy = std::max(0, y - r); is_peak && qy <= std::min(h.height() - 1, y + r); ++qy) {
          for (int qx = std::max(0, x - r); qx <= std::min(h.width() - 1, x + r); ++qx) {
            if (qx == x && qy == y) continue;
            const float q = h.at(c, qx, qy);
            if (q > v || (q == v && (qy < y || (qy == y && qx < x)))) {
              is_peak = false;
              break;
            }
          }
        }
        if (is_peak) {
          out.points.push_back({{static_cast<double>(x), static_cast<double>(y)}, static_cast<KeypointClass>(c), v});
        }
      }
    }
  }
  return out;
}

TransformedKeypoints transform_keypoints(const KeypointSet& k, const Homography& h, int width, int height) {
  TransformedKeypoints out;
  for (std::size_t i = 0; i < k.points.size(); ++i) {
    const Point2 p = apply_homography(h, k.points[i].location);
    if (p.x < 0.0 || p.y < 0.0 || p.x > width - 1 || p.y > height - 1) continue;
    Keypoint kp = k.points[i];
    kp.location = p;
    out.keypoints.points.push_back(kp);
    out.source_index.push_back(i);
  }
  return out;
}

void write_keypoints_csv(const std::filesystem::path& path, const KeypointSet& k) {
  std::ostringstream out;
  out << std::setprecision(17) << "x,y,class,score\n";
  for (const auto& kp : k.points) {
    out << kp.location.x << ',' << kp.location.y << ',' << class_name(kp.cls) << ',' << kp.score << '\n';
  }
  write_file_atomic(path, out.str());
}

KeypointSet read_keypoints_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != "x,y,class,score") {
    throw Error(Errc::format_error, path.string() + ": expected header x,y,class,score");
  }
  KeypointSet k;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 4) throw Error(Errc::format_error, path.string() + ": bad row '" + line + "'");
    Keypoint kp;
    kp.location = {parse_double(f[0]), parse_double(f[1])};
    kp.cls = parse_class(f[2]);
    kp.score = parse_double(f[3]);
    if (!(kp.score >= 0.0 && kp.score <= 1.0)) throw Error(Errc::format_error, path.string() + ": score outside [0, 1]");
    k.points.push_back(kp);
  }
  return k;
}

void write_heatmap_image(const std::filesystem::path& path, const Heatmap& h) {
  Image img(h.width(), h.height(), 3);
  for (int y = 0; y < h.height(); ++y)
    for (int x = 0; x < h.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = h.at(c, x, y);
  write_pnm(path, img);
}

void write_heatmap_block(const std::filesystem::path& path, const Heatmap& h) {
  FloatBlock b;
  b.width = static_cast<std::uint32_t>(h.width());
  b.height = static_cast<std::uint32_t>(h.height());
  b.channels = 3;
  b.values.reserve(static_cast<std::size_t>(h.width()) * static_cast<std::size_t>(h.height()) * 3);
  for (int y = 0; y < h.height(); ++y)
    for (int x = 0; x < h.width(); ++x)
      for (int c = 0; c < 3; ++c) b.values.push_back(h.at(c, x, y));
  write_ckdb(path, b);
}

Heatmap read_heatmap(const std::filesystem::path& path) {
  const std::string head = read_file(path).substr(0, 4);
  if (head == "CKDB") {
    const FloatBlock b = read_ckdb(path);
    if (b.channels != 3) throw Error(Errc::shape_mismatch, path.string() + ": heatmap blocks need 3 channels");
    Heatmap h(static_cast<int>(b.width), static_cast<int>(b.height));
    std::size_t i = 0;
    for (int y = 0; y < h.height(); ++y)
      for (int x = 0; x < h.width(); ++x)
        for (int c = 0; c < 3; ++c) h.set(c, x, y, std::clamp(b.values[i++], 0.0f, 1.0f));
    return h;
  }
  const Image img = read_pnm(path);
  if (img.channels != 3) throw Error(Errc::shape_mismatch, path.string() + ": heatmap images need 3 channels");
  Heatmap h(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) h.set(c, x, y, img.at(x, y, c));
  return h;
}

}  // namespace conked
