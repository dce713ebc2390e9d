#include "conked/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(Errc::invalid_argument, "expected a boolean, got '" + s + "'");
}

template <typename Int>
Int parse_nonneg(const std::string& s) {
  const long long v = parse_int(s);
  if (v < 0) throw Error(Errc::invalid_argument, "expected a non-negative integer, got '" + s + "'");
  return static_cast<Int>(v);
}

struct Entry {
  ConfigKey key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

Entry text_field(std::string name, std::string help, std::string PipelineConfig::*m) {
  return {{std::move(name), std::move(help)},
          [m](PipelineConfig& c, const std::string& v) { c.*m = v; },
          [m](const PipelineConfig& c) { return c.*m; }};
}

template <typename Get>
Entry real_field(std::string name, std::string help, Get ref) {
  return {{std::move(name), std::move(help)},
          [ref](PipelineConfig& c, const std::string& v) { ref(c) = parse_double(v); },
          [ref](const PipelineConfig& c) { return format_double(ref(const_cast<PipelineConfig&>(c))); }};
}

template <typename Get>
Entry int_field(std::string name, std::string help, Get ref) {
  return {{std::move(name), std::move(help)},
          [ref](PipelineConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            if constexpr (std::is_unsigned_v<T>) {
              ref(c) = parse_nonneg<T>(v);
            } else {
              ref(c) = static_cast<T>(parse_int(v));
            }
          },
          [ref](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); }};
}

template <typename Get>
Entry bool_field(std::string name, std::string help, Get ref) {
  return {{std::move(name), std::move(help)},
          [ref](PipelineConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
          [ref](const PipelineConfig& c) {
            return std::string(ref(const_cast<PipelineConfig&>(c)) ? "true" : "false");
          }};
}

std::string_view mining_label(Mining m) { return m == Mining::hardest ? "hardest" : "random"; }

const std::vector<Entry>& entries() {
  using C = PipelineConfig;
  static const std::vector<Entry> table = {
      text_field("dataset", "dataset directory (synth output or training images)", &C::dataset),
      text_field("output", "output directory or file", &C::output),
      text_field("checkpoint", "descriptor network checkpoint (CKDN)", &C::checkpoint),
      {{"seed", "root seed for every random stream"},
       [](C& c, const std::string& v) { c.seed = parse_nonneg<std::uint64_t>(v); },
       [](const C& c) { return std::to_string(c.seed); }},

      real_field("peak.threshold", "minimum heatmap value of a keypoint",
                 [](C& c) -> double& { return c.peak.intensity_threshold; }),
      int_field("peak.window_radius", "half-width of the local maximum window",
                [](C& c) -> int& { return c.peak.window_radius; }),
      real_field("target.sigma", "Gaussian sigma of target heatmaps", [](C& c) -> double& { return c.target.sigma; }),

      int_field("net.descriptor_dim", "descriptor length D", [](C& c) -> int& { return c.descriptor_dim; }),
      int_field("net.hidden_channels", "channels of the two hidden layers",
                [](C& c) -> int& { return c.hidden_channels; }),

      {{"train.loss", "mp_infonce | supcon | triplet"},
       [](C& c, const std::string& v) { c.train.loss = parse_loss(v); },
       [](const C& c) { return std::string(loss_name(c.train.loss)); }},
      {{"train.mining", "triplet mining: hardest | random"},
       [](C& c, const std::string& v) { c.train.mining = parse_mining(v); },
       [](const C& c) { return std::string(mining_label(c.train.mining)); }},
      int_field("train.views", "augmented views N per batch (batch is 1+N)",
                [](C& c) -> int& { return c.train.n_views; }),
      real_field("train.temperature", "contrastive temperature",
                 [](C& c) -> double& { return c.train.loss_config.temperature; }),
      real_field("train.margin", "triplet margin", [](C& c) -> double& { return c.train.loss_config.margin; }),
      real_field("train.learning_rate", "optimizer step size", [](C& c) -> double& { return c.train.learning_rate; }),
      int_field("train.epochs", "passes over the training images", [](C& c) -> int& { return c.train.epochs; }),
      int_field("train.max_steps", "stop after this many updates (0: no limit)",
                [](C& c) -> std::size_t& { return c.max_steps; }),
      {{"train.optimizer", "adam | sgd"},
       [](C& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); },
       [](const C& c) { return std::string(optimizer_name(c.train.optimizer)); }},

      real_field("augment.rotation_deg", "rotation half-range in degrees",
                 [](C& c) -> double& { return c.augmentation().rotation_deg; }),
      real_field("augment.translation_frac", "translation half-range as a fraction of the size",
                 [](C& c) -> double& { return c.augmentation().translation_frac; }),
      real_field("augment.scale_min", "smallest scale factor", [](C& c) -> double& { return c.augmentation().scale_min; }),
      real_field("augment.scale_max", "largest scale factor", [](C& c) -> double& { return c.augmentation().scale_max; }),
      real_field("augment.shear_deg", "shear half-range in degrees",
                 [](C& c) -> double& { return c.augmentation().shear_deg; }),
      real_field("augment.hue", "hue shift half-range in turns", [](C& c) -> double& { return c.augmentation().hue_jitter; }),
      real_field("augment.saturation", "saturation shift half-range",
                 [](C& c) -> double& { return c.augmentation().saturation_jitter; }),
      real_field("augment.value", "value shift half-range", [](C& c) -> double& { return c.augmentation().value_jitter; }),
      real_field("augment.noise_mean", "mean of additive Gaussian noise",
                 [](C& c) -> double& { return c.augmentation().noise_mean; }),
      real_field("augment.noise_std", "std of additive Gaussian noise",
                 [](C& c) -> double& { return c.augmentation().noise_std; }),
      real_field("augment.noise_probability", "probability that a view gets noise",
                 [](C& c) -> double& { return c.augmentation().noise_probability; }),

      int_field("ransac.max_iterations", "random minimal samples drawn",
                [](C& c) -> std::size_t& { return c.ransac.max_iterations; }),
      real_field("ransac.threshold_px", "inlier reprojection threshold in pixels",
                 [](C& c) -> double& { return c.ransac.inlier_threshold_px; }),
      int_field("ransac.min_inliers", "smallest accepted consensus set",
                [](C& c) -> std::size_t& { return c.ransac.min_inliers; }),
      bool_field("ransac.exhaustive", "enumerate every 4-subset instead of sampling",
                 [](C& c) -> bool& { return c.ransac.exhaustive; }),

      real_field("eval.precision_tolerance_px", "match counted correct within this distance",
                 [](C& c) -> double& { return c.precision_tolerance_px; }),
      bool_field("eval.vtkrs", "also report the top-N keypoint score", [](C& c) -> bool& { return c.vtkrs; }),

      int_field("synth.cases", "number of cases to generate", [](C& c) -> int& { return c.cases; }),
      int_field("synth.width", "image width", [](C& c) -> int& { return c.synth.width; }),
      int_field("synth.height", "image height", [](C& c) -> int& { return c.synth.height; }),
      int_field("synth.branches", "root vessels", [](C& c) -> int& { return c.synth.n_branches; }),
      int_field("synth.crossovers", "crossovers per tree (-1: unconstrained)",
                [](C& c) -> int& { return c.synth.n_crossovers; }),
      int_field("synth.bifurcations", "bifurcations per tree", [](C& c) -> int& { return c.synth.n_bifurcations; }),
      real_field("synth.min_separation", "minimum keypoint distance in pixels",
                 [](C& c) -> double& { return c.synth.min_separation; }),
  };
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
}

}  // namespace

void PipelineConfig::validate() const {
  peak.validate();
  train.validate();
  ransac.validate();
  synth.validate();
  if (descriptor_dim < 1 || hidden_channels < 1)
    throw Error(Errc::invalid_argument, "network widths must be positive");
  if (!(target.sigma > 0.0)) throw Error(Errc::invalid_argument, "target.sigma must be positive");
  if (!(precision_tolerance_px >= 0.0)) throw Error(Errc::invalid_argument, "precision tolerance must be >= 0");
  if (cases < 0) throw Error(Errc::invalid_argument, "synth.cases must be >= 0");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = find_entry(key);
  try {
    e.set(cfg, value);
  } catch (const Error& err) {
    throw Error(Errc::invalid_argument, "bad value for '" + key + "': " + err.what());
  }
}

std::string get_config_value(const PipelineConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::invalid_argument, "config line " + std::to_string(number) + ": expected key = value");
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    try {
      set_config_value(base, key, value);
    } catch (const Error& err) {
      throw Error(Errc::invalid_argument, "config line " + std::to_string(number) + ": " + err.what());
    }
  }
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  return parse_config(read_file(path), std::move(base));
}

std::string echo_config(const PipelineConfig& cfg) {
  std::ostringstream out;
  for (const auto& e : entries()) out << "# " << e.key.help << '\n' << e.key.name << " = " << e.get(cfg) << '\n';
  return out.str();
}

}  // namespace conked
