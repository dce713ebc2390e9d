#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "conked/config.hpp"
#include "conked/descnet.hpp"
#include "conked/descriptors.hpp"
#include "conked/error.hpp"
#include "conked/evalkit.hpp"
#include "conked/io_util.hpp"
#include "conked/pipeline.hpp"
#include "conked/rng.hpp"
#include "conked/synth.hpp"
#include "conked/training.hpp"

namespace fs = std::filesystem;
using namespace conked;

namespace {

// Configuration layering shared by every subcommand: library defaults, then
// --config, then each --set, then the dedicated flags of the command.
class Layers {
 public:
  explicit Layers(CLI::App* app) : app_(app) {
    app->add_option("--config", file_, "key = value file applied over the defaults")->check(CLI::ExistingFile);
    app->add_option("--set", sets_, "override one key as key=value (repeatable)");
  }

  void flag(const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    CLI::Option* opt = app_->add_option(name, *value, help + " (" + key + ")");
    flags_.push_back({opt, key, value});
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!file_.empty()) cfg = load_config(file_, cfg);
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(Errc::invalid_argument, "--set expects key=value, got '" + s + "'");
      set_config_value(cfg, std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
    }
    for (const auto& f : flags_) {
      if (f.option->count() > 0) set_config_value(cfg, f.key, *f.value);
    }
    cfg.validate();
    return cfg;
  }

 private:
  struct Bound {
    CLI::Option* option;
    std::string key;
    std::shared_ptr<std::string> value;
  };
  CLI::App* app_;
  std::string file_;
  std::vector<std::string> sets_;
  std::vector<Bound> flags_;
};

void echo(const fs::path& path, const PipelineConfig& cfg) { write_file_atomic(path, echo_config(cfg)); }

void warn(const std::string& id, const std::string& message) { std::cerr << "[" << id << "] warning: " << message << '\n'; }

fs::path require_dataset(const PipelineConfig& cfg) {
  if (cfg.dataset.empty()) throw Error(Errc::invalid_argument, "no dataset given (--dataset)");
  const fs::path manifest = fs::path(cfg.dataset) / "manifest.csv";
  if (!fs::exists(manifest)) throw Error(Errc::io_error, "dataset manifest not found: " + manifest.string());
  return manifest;
}

fs::path require_output(const PipelineConfig& cfg) {
  if (cfg.output.empty()) throw Error(Errc::invalid_argument, "no output given (--out)");
  return cfg.output;
}

ConvDescriptorNet require_net(const PipelineConfig& cfg) {
  if (cfg.checkpoint.empty()) throw Error(Errc::invalid_argument, "no checkpoint given (--checkpoint)");
  return load_checkpoint(cfg.checkpoint);
}

// synth ---------------------------------------------------------------------

int run_synth(const PipelineConfig& cfg) {
  const fs::path out = require_output(cfg);
  fs::create_directories(out);
  const auto mix = category_mix(cfg.cases);
  const CategoryAnalog kinds[3] = {CategoryAnalog::high_overlap, CategoryAnalog::low_overlap,
                                   CategoryAnalog::appearance_change};
  std::vector<ManifestEntry> manifest;
  std::uint64_t index = 0;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < mix[static_cast<std::size_t>(k)]; ++i, ++index) {
      VesselTreeSpec spec = cfg.synth;
      spec.seed = derive_seed(cfg.seed, "synth-tree", index);
      SyntheticCase c = generate_case(spec, kinds[k], derive_seed(cfg.seed, "synth-case", index));
      char id[32];
      std::snprintf(id, sizeof id, "case_%04llu", static_cast<unsigned long long>(index));
      c.id = id;
      const fs::path dir = out / c.id;
      save_case(dir, c);
      write_heatmap_block(dir / "fixed_heatmap.ckdb", oracle_heatmap(c.gt_keypoints_fixed, spec.width, spec.height));
      write_heatmap_block(dir / "moving_heatmap.ckdb", oracle_heatmap(c.gt_keypoints_moving, spec.width, spec.height));
      manifest.push_back({c.id, to_category(kinds[k]), fs::path(c.id) / "control_points.txt", {}});
      std::cout << "[" << c.id << "] " << category_analog_name(kinds[k]) << ", " << c.gt_keypoints_moving.size()
                << " shared keypoints\n";
    }
  }
  write_manifest(out / "manifest.csv", manifest);
  echo(out / "config.txt", cfg);
  std::cout << "wrote " << manifest.size() << " cases (S " << mix[0] << ", P " << mix[1] << ", A " << mix[2] << ") to "
            << out.string() << '\n';
  return 0;
}

// train ---------------------------------------------------------------------

std::vector<PrecisionPair> precision_pairs(const fs::path& manifest) {
  std::vector<PrecisionPair> pairs;
  for (const auto& e : read_manifest(manifest)) {
    const SyntheticCase c = load_case(manifest.parent_path() / e.id);
    pairs.push_back({c.image_fixed, c.image_moving, c.gt_homography, c.gt_keypoints_fixed, c.gt_keypoints_moving});
  }
  return pairs;
}

int run_train(const PipelineConfig& cfg, bool validate) {
  const fs::path manifest = require_dataset(cfg);
  if (cfg.checkpoint.empty()) throw Error(Errc::invalid_argument, "no checkpoint path given (--checkpoint)");
  std::vector<TrainingImage> images;
  for (const auto& e : read_manifest(manifest)) {
    const fs::path dir = manifest.parent_path() / e.id;
    images.push_back({read_pnm(dir / "fixed.ppm"), read_keypoints_csv(dir / "keypoints_fixed.csv")});
  }
  if (images.empty()) throw Error(Errc::empty_input, "dataset has no cases");

  auto net = ConvDescriptorNet::make(images.front().image.channels, {cfg.hidden_channels, cfg.hidden_channels, cfg.descriptor_dim},
                                     {1, 2, 4});
  net.initialize(cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  std::vector<PrecisionPair> validation;
  if (validate) validation = precision_pairs(manifest);
  std::ostringstream csv;
  csv << "epoch,mean_loss\n";
  csv.precision(10);
  const TrainReport report = train(net, images, tc, cfg.max_steps, validate ? &validation : nullptr,
                                   [&](int epoch, double loss) {
                                     csv << epoch << ',' << loss << '\n';
                                     std::cout << "epoch " << epoch << " loss " << loss << '\n';
                                   });
  save_checkpoint(cfg.checkpoint, net);
  write_file_atomic(fs::path(cfg.checkpoint + ".loss.csv"), csv.str());
  echo(fs::path(cfg.checkpoint + ".config.txt"), cfg);
  std::cout << "steps " << report.steps << ", skipped samples " << report.skipped_samples;
  if (report.validation_precision >= 0.0) std::cout << ", matching precision " << report.validation_precision;
  std::cout << "\ncheckpoint " << cfg.checkpoint << '\n';
  return 0;
}

// detect / describe / match -------------------------------------------------

int run_detect(const PipelineConfig& cfg, const std::string& heatmap) {
  const KeypointSet k = extract_keypoints(read_heatmap(heatmap), cfg.peak);
  write_keypoints_csv(require_output(cfg), k);
  std::cout << k.count(KeypointClass::crossover) << " crossovers, " << k.count(KeypointClass::bifurcation)
            << " bifurcations\n";
  return 0;
}

int run_describe(const PipelineConfig& cfg, const std::string& image) {
  const ConvDescriptorNet net = require_net(cfg);
  const DescriptorBlock block = forward_dense(net, read_pnm(image));
  write_descriptor_block(require_output(cfg), block);
  std::cout << block.width() << "x" << block.height() << "x" << block.dim() << " descriptors\n";
  return 0;
}

int run_match(const PipelineConfig& cfg, const std::string& fixed_desc, const std::string& moving_desc,
              const std::string& fixed_kp, const std::string& moving_kp) {
  const DescriptorSet f = sample_descriptors(read_descriptor_block(fixed_desc), read_keypoints_csv(fixed_kp));
  const DescriptorSet m = sample_descriptors(read_descriptor_block(moving_desc), read_keypoints_csv(moving_kp));
  MatchStats stats;
  const MatchSet matches = mutual_match_classwise(f, m, &stats);
  write_matches_csv(require_output(cfg), matches, f, m);
  std::cout << matches.size() << " mutual matches, " << stats.similarity_evaluations << " similarity evaluations\n";
  return 0;
}

// register ------------------------------------------------------------------

struct PairInputs {
  Image fixed, moving;
  Heatmap fixed_heatmap, moving_heatmap;
};

void write_registration(const fs::path& dir, const PairRegistration& r) {
  fs::create_directories(dir);
  write_homography(dir / "homography.txt", r.moving_to_fixed);
  write_matches_csv(dir / "matches.csv", r.matches, r.fixed_descriptors, r.moving_descriptors);
  write_timings_csv(dir / "timings.csv", r.timings);
}

PairRegistration register_inputs(const PairInputs& in, const ConvDescriptorNet& net, const PipelineConfig& cfg) {
  const Describer describe = [&](const Image& img) { return forward_dense(net, img); };
  RansacConfig rc = cfg.ransac;
  rc.seed = derive_seed(cfg.seed, "ransac");
  return register_pair(in.fixed, in.moving, in.fixed_heatmap, in.moving_heatmap, describe, cfg.peak, rc);
}

struct RegisterArgs {
  std::string fixed, moving, fixed_heatmap, moving_heatmap, fixed_keypoints, moving_keypoints, heatmaps;
  bool oracle = false;
};

Heatmap heatmap_from_keypoints(const std::string& csv, const Image& img) {
  return oracle_heatmap(read_keypoints_csv(csv), img.width, img.height);
}

int run_register_pair(const PipelineConfig& cfg, const RegisterArgs& a) {
  const ConvDescriptorNet net = require_net(cfg);
  PairInputs in{read_pnm(a.fixed), read_pnm(a.moving), {}, {}};
  if (a.oracle) {
    if (a.fixed_keypoints.empty() || a.moving_keypoints.empty())
      throw Error(Errc::invalid_argument, "--oracle-keypoints needs --fixed-keypoints and --moving-keypoints");
    in.fixed_heatmap = heatmap_from_keypoints(a.fixed_keypoints, in.fixed);
    in.moving_heatmap = heatmap_from_keypoints(a.moving_keypoints, in.moving);
  } else {
    if (a.fixed_heatmap.empty() || a.moving_heatmap.empty())
      throw Error(Errc::invalid_argument, "need --fixed-heatmap/--moving-heatmap or --oracle-keypoints");
    in.fixed_heatmap = read_heatmap(a.fixed_heatmap);
    in.moving_heatmap = read_heatmap(a.moving_heatmap);
  }
  const fs::path out = require_output(cfg);
  const PairRegistration r = register_inputs(in, net, cfg);
  write_registration(out, r);
  echo(out / "config.txt", cfg);
  std::cout << r.matches.size() << " matches, " << r.ransac.inlier_count << " inliers; detect " << r.timings.detect_ms
            << " ms, describe " << r.timings.describe_ms << " ms, match " << r.timings.match_ms << " ms, ransac "
            << r.timings.ransac_ms << " ms\n";
  return 0;
}

int run_register_dataset(const PipelineConfig& cfg, const RegisterArgs& a) {
  const fs::path manifest = require_dataset(cfg);
  const ConvDescriptorNet net = require_net(cfg);
  const fs::path out = require_output(cfg);
  const fs::path heatmaps = a.heatmaps.empty() ? manifest.parent_path() : fs::path(a.heatmaps);
  std::size_t failed = 0, total = 0;
  for (const auto& e : read_manifest(manifest)) {
    ++total;
    const fs::path dir = manifest.parent_path() / e.id;
    PairInputs in{read_pnm(dir / "fixed.ppm"), read_pnm(dir / "moving.ppm"), {}, {}};
    if (a.oracle) {
      in.fixed_heatmap = heatmap_from_keypoints((dir / "keypoints_fixed.csv").string(), in.fixed);
      in.moving_heatmap = heatmap_from_keypoints((dir / "keypoints_moving.csv").string(), in.moving);
    } else {
      in.fixed_heatmap = read_heatmap(heatmaps / e.id / "fixed_heatmap.ckdb");
      in.moving_heatmap = read_heatmap(heatmaps / e.id / "moving_heatmap.ckdb");
    }
    try {
      const PairRegistration r = register_inputs(in, net, cfg);
      write_registration(out / e.id, r);
      std::cout << "[" << e.id << "] " << r.matches.size() << " matches, " << r.ransac.inlier_count << " inliers\n";
    } catch (const Error& err) {
      if (err.code() != Errc::no_consensus) throw;
      ++failed;
      warn(e.id, err.what());
    }
  }
  echo(out / "config.txt", cfg);
  std::cout << total - failed << "/" << total << " cases registered\n";
  return 0;
}

// eval / vtkrs --------------------------------------------------------------

fs::path manifest_of(const PipelineConfig& cfg, const std::string& manifest) {
  return manifest.empty() ? require_dataset(cfg) : fs::path(manifest);
}

MatchSet read_match_rows(const fs::path& path, std::vector<Point2>& fixed, std::vector<Point2>& moving) {
  std::istringstream in(read_file(path));
  std::string line;
  MatchSet m;
  bool header = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split(trim(line), ',');
    if (f.size() != 8) throw Error(Errc::format_error, path.string() + ": expected 8 fields per match");
    const std::size_t row = fixed.size();
    fixed.push_back({parse_double(f[4]), parse_double(f[5])});
    moving.push_back({parse_double(f[6]), parse_double(f[7])});
    m.pairs.push_back({row, row, parse_double(f[3]), parse_class(trim(f[2]))});
  }
  return m;
}

VtkrsResult vtkrs_of(const PipelineConfig& cfg, const std::vector<RegistrationCase>& cases, const fs::path& predictions) {
  std::vector<VtkrsCase> vc;
  for (const auto& c : cases) {
    VtkrsCase v{c, {}, {}, {}};
    const fs::path matches = predictions / c.id / "matches.csv";
    if (fs::exists(matches)) {
      v.matches = read_match_rows(matches, v.fixed_locations, v.moving_locations);
    } else {
      warn(c.id, "no matches.csv, case counted as failed");
    }
    vc.push_back(std::move(v));
  }
  RansacConfig rc = cfg.ransac;
  rc.seed = derive_seed(cfg.seed, "ransac");
  return vtkrs(vc, rc);
}

int run_eval(const PipelineConfig& cfg, const std::string& manifest_arg, const std::string& predictions) {
  const fs::path manifest = manifest_of(cfg, manifest_arg);
  const fs::path out = require_output(cfg);
  const auto cases = load_cases(manifest);
  std::vector<double> errors;
  for (const auto& c : cases) {
    const fs::path h = fs::path(predictions) / c.id / "homography.txt";
    if (!fs::exists(h)) {
      warn(c.id, "missing prediction, case counted as failed");
      errors.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    errors.push_back(case_error(c, read_homography(h)));
  }
  const auto ev = evaluate_categories(cases, errors);
  fs::create_directories(out);
  write_curve_csv(out / "curve_all.csv", ev.overall);
  for (Category k : {Category::S, Category::P, Category::A})
    write_curve_csv(out / ("curve_" + std::string(category_name(k)) + ".csv"), ev.per_category[static_cast<std::size_t>(k)]);
  write_summary_csv(out / "summary.csv", ev.report);
  if (cfg.vtkrs) {
    const auto r = vtkrs_of(cfg, cases, predictions);
    write_vtkrs_csv(out / "vtkrs.csv", r);
    std::cout << "VTKRS " << r.vtkrs << '\n';
  }
  echo(out / "config.txt", cfg);
  const auto& r = ev.report;
  std::cout << "AUC " << r.auc_overall << " (S " << r.auc_S << ", P " << r.auc_P << ", A " << r.auc_A << "), avg "
            << r.avg << ", weighted avg " << r.weighted_avg << '\n';
  return 0;
}

int run_vtkrs(const PipelineConfig& cfg, const std::string& manifest_arg, const std::string& predictions) {
  const fs::path manifest = manifest_of(cfg, manifest_arg);
  const auto r = vtkrs_of(cfg, load_cases(manifest), predictions);
  const fs::path out = require_output(cfg);
  write_vtkrs_csv(out, r);
  std::cout << "VTKRS " << r.vtkrs << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-based retinal image registration with contrastively trained descriptors"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Layers>> layers;
  auto layered = [&](CLI::App* sub) -> Layers& {
    layers.push_back(std::make_unique<Layers>(sub));
    return *layers.back();
  };

  auto* config = app.add_subcommand("config", "print every configuration key with its default");

  auto* synth = app.add_subcommand("synth", "generate a synthetic registration dataset");
  auto& synth_l = layered(synth);
  synth_l.flag("--out", "output", "dataset directory");
  synth_l.flag("--cases", "synth.cases", "number of cases, split 71/49/14 over S/P/A");
  synth_l.flag("--seed", "seed", "root seed");
  synth_l.flag("--width", "synth.width", "image width");
  synth_l.flag("--height", "synth.height", "image height");

  auto* trn = app.add_subcommand("train", "train a descriptor network on a synthetic dataset");
  auto& train_l = layered(trn);
  bool validate = false;
  train_l.flag("--dataset", "dataset", "dataset directory");
  train_l.flag("--checkpoint", "checkpoint", "checkpoint to write");
  train_l.flag("--loss", "train.loss", "loss");
  train_l.flag("--views", "train.views", "augmented views");
  train_l.flag("--epochs", "train.epochs", "epochs");
  train_l.flag("--lr", "train.learning_rate", "learning rate");
  train_l.flag("--max-steps", "train.max_steps", "step cap");
  train_l.flag("--seed", "seed", "root seed");
  train_l.flag("--dim", "net.descriptor_dim", "descriptor length");
  trn->add_flag("--validate", validate, "report matching precision on the dataset pairs after training");

  auto* det = app.add_subcommand("detect", "heatmap to keypoint CSV");
  auto& det_l = layered(det);
  std::string heatmap;
  det->add_option("--heatmap", heatmap, "heatmap file (CKDB block or PPM)")->required()->check(CLI::ExistingFile);
  det_l.flag("--out", "output", "keypoint CSV");
  det_l.flag("--threshold", "peak.threshold", "peak threshold");

  auto* desc = app.add_subcommand("describe", "image and checkpoint to a dense descriptor block");
  auto& desc_l = layered(desc);
  std::string image;
  desc->add_option("--image", image, "PPM image")->required()->check(CLI::ExistingFile);
  desc_l.flag("--checkpoint", "checkpoint", "network checkpoint");
  desc_l.flag("--out", "output", "CKDB file");

  auto* mat = app.add_subcommand("match", "mutual class-wise matching of two keypoint sets");
  auto& mat_l = layered(mat);
  std::string fixed_desc, moving_desc, fixed_kp, moving_kp;
  mat->add_option("--fixed-desc", fixed_desc, "fixed descriptor block")->required()->check(CLI::ExistingFile);
  mat->add_option("--moving-desc", moving_desc, "moving descriptor block")->required()->check(CLI::ExistingFile);
  mat->add_option("--fixed-keypoints", fixed_kp, "fixed keypoint CSV")->required()->check(CLI::ExistingFile);
  mat->add_option("--moving-keypoints", moving_kp, "moving keypoint CSV")->required()->check(CLI::ExistingFile);
  mat_l.flag("--out", "output", "matches CSV");

  auto* reg = app.add_subcommand("register", "register one pair, or every case of a dataset");
  auto& reg_l = layered(reg);
  RegisterArgs ra;
  reg->add_option("--fixed", ra.fixed, "fixed PPM image");
  reg->add_option("--moving", ra.moving, "moving PPM image");
  reg->add_option("--fixed-heatmap", ra.fixed_heatmap, "fixed detector heatmap");
  reg->add_option("--moving-heatmap", ra.moving_heatmap, "moving detector heatmap");
  reg->add_option("--fixed-keypoints", ra.fixed_keypoints, "fixed keypoint CSV (with --oracle-keypoints)");
  reg->add_option("--moving-keypoints", ra.moving_keypoints, "moving keypoint CSV (with --oracle-keypoints)");
  reg->add_option("--heatmaps", ra.heatmaps, "dataset mode: directory with <id>/{fixed,moving}_heatmap.ckdb");
  reg->add_flag("--oracle-keypoints", ra.oracle, "use ground-truth keypoints instead of heatmaps");
  reg_l.flag("--dataset", "dataset", "dataset mode: register every case");
  reg_l.flag("--checkpoint", "checkpoint", "network checkpoint");
  reg_l.flag("--out", "output", "output directory");
  reg_l.flag("--seed", "seed", "root seed");

  auto* ev = app.add_subcommand("eval", "score predicted homographies against ground truth");
  auto& ev_l = layered(ev);
  std::string manifest, predictions;
  ev->add_option("--manifest", manifest, "ground-truth manifest (default: <dataset>/manifest.csv)");
  ev->add_option("--predictions", predictions, "directory with <id>/homography.txt")->required();
  ev_l.flag("--dataset", "dataset", "dataset directory");
  ev_l.flag("--out", "output", "report directory");
  ev_l.flag("--vtkrs", "eval.vtkrs", "also compute the top-N keypoint score (true/false)");

  auto* vt = app.add_subcommand("vtkrs", "top-N keypoint registration score from predicted matches");
  auto& vt_l = layered(vt);
  vt->add_option("--manifest", manifest, "ground-truth manifest (default: <dataset>/manifest.csv)");
  vt->add_option("--predictions", predictions, "directory with <id>/matches.csv")->required();
  vt_l.flag("--dataset", "dataset", "dataset directory");
  vt_l.flag("--out", "output", "CSV file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*config) {
      std::cout << echo_config(PipelineConfig{});
      return 0;
    }
    if (*synth) {
      PipelineConfig cfg = synth_l.resolve();
      return run_synth(cfg);
    }
    if (*trn) return run_train(train_l.resolve(), validate);
    if (*det) return run_detect(det_l.resolve(), heatmap);
    if (*desc) return run_describe(desc_l.resolve(), image);
    if (*mat) return run_match(mat_l.resolve(), fixed_desc, moving_desc, fixed_kp, moving_kp);
    if (*reg) {
      const PipelineConfig cfg = reg_l.resolve();
      if (!cfg.dataset.empty()) return run_register_dataset(cfg, ra);
      if (ra.fixed.empty() || ra.moving.empty())
        throw Error(Errc::invalid_argument, "register needs --fixed and --moving, or --dataset");
      return run_register_pair(cfg, ra);
    }
    if (*ev) return run_eval(ev_l.resolve(), manifest, predictions);
    if (*vt) return run_vtkrs(vt_l.resolve(), manifest, predictions);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
