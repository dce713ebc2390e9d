#include "conked/augment.hpp"

#include <algorithm>
#include <cmath>

#include "conked/error.hpp"
#include "conked/rng.hpp"

namespace conked {

AugmentationSpec AugmentationSpec::identity() {
  AugmentationSpec s;
  s.rotation_deg = 0.0;
  s.translation_frac = 0.0;
  s.scale_min = s.scale_max = 1.0;
  s.shear_deg = 0.0;
  s.hue_jitter = s.saturation_jitter = s.value_jitter = 0.0;
  s.noise_std = 0.0;
  s.noise_probability = 0.0;
  return s;
}

void AugmentationSpec::validate() const {
  const double ranges[] = {rotation_deg, translation_frac, shear_deg, hue_jitter, saturation_jitter, value_jitter,
                           noise_std};
  for (double r : ranges) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw Error(Errc::invalid_argument, "augmentation ranges must be >= 0");
  }
  if (!(scale_min > 0.0) || !(scale_max >= scale_min))
    throw Error(Errc::invalid_argument, "augmentation scale range must satisfy 0 < min <= max");
  if (shear_deg >= 90.0) throw Error(Errc::invalid_argument, "shear must be below 90 degrees");
  if (!(noise_probability >= 0.0 && noise_probability <= 1.0))
    throw Error(Errc::invalid_argument, "noise probability must be in [0, 1]");
}

AugmentationParams sample_augmentation(const AugmentationSpec& spec, int width, int height, Rng& rng) {
  spec.validate();
  AugmentationParams p;
  auto symmetric = [&](double r) { return r > 0.0 ? uniform(rng, -r, r) : 0.0; };
  p.transform.rotation_deg = symmetric(spec.rotation_deg);
  p.transform.translation_x = symmetric(spec.translation_frac);
  p.transform.translation_y = symmetric(spec.translation_frac);
  p.transform.scale = spec.scale_max > spec.scale_min ? uniform(rng, spec.scale_min, spec.scale_max) : spec.scale_min;
  p.transform.shear_deg = symmetric(spec.shear_deg);
  p.transform.center = {(width - 1) / 2.0, (height - 1) / 2.0};
  p.hue_shift = symmetric(spec.hue_jitter);
  p.saturation_shift = symmetric(spec.saturation_jitter);
  p.value_shift = symmetric(spec.value_jitter);
  p.add_noise = spec.noise_probability > 0.0 && spec.noise_std > 0.0 && uniform(rng, 0.0, 1.0) < spec.noise_probability;
  p.noise_mean = spec.noise_mean;
  p.noise_std = spec.noise_std;
  p.noise_seed = rng();
  return p;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float delta = mx - mn;
  v = mx;
  s = mx > 0.0f ? delta / mx : 0.0f;
  if (delta <= 0.0f) {
    h = 0.0f;
    return;
  }
  float hh;
  if (mx == r) {
    hh = (g - b) / delta;
  } else if (mx == g) {
    hh = 2.0f + (b - r) / delta;
  } else {
    hh = 4.0f + (r - g) / delta;
  }
  hh /= 6.0f;
  if (hh < 0.0f) hh += 1.0f;
  h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int sector = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1.0f - s), q = v * (1.0f - s * f), t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

Image apply_augmentation(const Image& image, const AugmentationParams& params) {
  const double w = image.width, h = image.height;
  const Homography inv = params.transform.expand_inverse(w, h);
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Point2 src = apply_homography(inv, {static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = sample_bilinear(image, src.x, src.y, c);
    }
  }
  const bool jitter = params.hue_shift != 0.0 || params.saturation_shift != 0.0 || params.value_shift != 0.0;
  if (image.channels == 3 && jitter) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        float hh, ss, vv;
        rgb_to_hsv(out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2), hh, ss, vv);
        hh += static_cast<float>(params.hue_shift);
        ss = std::clamp(ss + static_cast<float>(params.saturation_shift), 0.0f, 1.0f);
        vv = std::clamp(vv + static_cast<float>(params.value_shift), 0.0f, 1.0f);
        hsv_to_rgb(hh, ss, vv, out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2));
      }
    }
  }
  if (params.add_noise) {
    Rng rng(params.noise_seed);
    for (float& v : out.data) v += static_cast<float>(normal(rng, params.noise_mean, params.noise_std));
  }
  for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

MultiviewSample build_multiview_sample(const Image& image, const KeypointSet& keypoints,
                                       const std::vector<AugmentationParams>& views) {
  if (views.empty()) throw Error(Errc::invalid_argument, "need at least one augmented view");
  const std::size_t n = keypoints.size();
  MultiviewSample s;
  s.views.push_back(image);
  std::vector<std::vector<PixelIndex>> located(1);
  std::vector<bool> alive(n, true);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = keypoints.points[k].location;
    const PixelIndex px{static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))};
    located[0].push_back(px);
    if (!image.contains(px.x, px.y)) alive[k] = false;
  }
  for (const auto& params : views) {
    s.views.push_back(apply_augmentation(image, params));
    const Homography fwd = params.transform.expand(image.width, image.height);
    std::vector<PixelIndex> row(n);
    for (std::size_t k = 0; k < n; ++k) {
      // Rounded location of the original keypoint, mapped into this view.
      const Point2 base{static_cast<double>(located[0][k].x), static_cast<double>(located[0][k].y)};
      const Point2 q = apply_homography(fwd, base);
      if (!std::isfinite(q.x) || !std::isfinite(q.y)) {
        alive[k] = false;
        continue;
      }
      row[k] = {static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))};
      if (!image.contains(row[k].x, row[k].y)) alive[k] = false;
    }
    located.push_back(std::move(row));
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!alive[k]) continue;
    s.classes.push_back(keypoints.points[k].cls);
    s.source_index.push_back(k);
  }
  if (s.classes.size() < 2)
    throw Error(Errc::too_few_survivors, std::to_string(s.classes.size()) + " keypoints survive all " +
                                             std::to_string(views.size()) + " views");
  s.pixels.resize(located.size());
  for (std::size_t v = 0; v < located.size(); ++v) {
    for (std::size_t k : s.source_index) s.pixels[v].push_back(located[v][k]);
  }
  return s;
}

MultiviewSample build_multiview_sample(const Image& image, const KeypointSet& keypoints, const AugmentationSpec& spec,
                                       int n_views, std::uint64_t seed) {
  if (n_views < 1) throw Error(Errc::invalid_argument, "need at least one augmented view");
  spec.validate();
  Rng rng = make_rng(seed, "augmentation");
  std::vector<AugmentationParams> params;
  for (int v = 0; v < n_views; ++v) params.push_back(sample_augmentation(spec, image.width, image.height, rng));
  return build_multiview_sample(image, keypoints, params);
}

MultiviewBatch build_multiview_batch(const Image& image, const KeypointSet& keypoints, const AugmentationSpec& spec,
                                     int n_views, const ConvDescriptorNet& net, std::uint64_t seed) {
  const MultiviewSample s = build_multiview_sample(image, keypoints, spec, n_views, seed);
  const std::size_t d = static_cast<std::size_t>(net.output_dim());
  std::vector<double> z;
  z.reserve(s.views.size() * s.keypoints() * d);
  for (std::size_t v = 0; v < s.views.size(); ++v) {
    const DescriptorBlock block = forward_dense(net, s.views[v]);
    for (const auto& px : s.pixels[v]) {
      const auto row = block.at(px.x, px.y);
      z.insert(z.end(), row.begin(), row.end());
    }
  }
  return MultiviewBatch(s.views.size(), s.keypoints(), d, std::move(z));
}

}  // namespace conked
