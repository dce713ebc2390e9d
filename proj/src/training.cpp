#include "conked/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "conked/error.hpp"
#include "conked/rng.hpp"

namespace conked {

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw Error(Errc::invalid_argument, "unknown optimizer '" + std::string(s) + "'");
}

std::string_view optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (n_views < 1) throw Error(Errc::invalid_argument, "n_views must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(Errc::invalid_argument, "learning_rate must be finite and >= 0");
  if (epochs < 0) throw Error(Errc::invalid_argument, "epochs must be >= 0");
  if (!(loss_config.temperature > 0.0)) throw Error(Errc::non_positive_temperature, "temperature must be > 0");
  augmentation.validate();
}

LossAndGradient loss_and_gradient(const ConvDescriptorNet& net, const MultiviewSample& sample, const TrainConfig& cfg,
                                  std::uint64_t mining_seed) {
  const std::size_t views = sample.views.size();
  const std::size_t k = sample.keypoints();
  const auto d = static_cast<std::size_t>(net.output_dim());
  std::vector<PatchEvaluator> evaluators;
  evaluators.reserve(views);
  std::vector<double> z;
  z.reserve(views * k * d);
  for (std::size_t v = 0; v < views; ++v) {
    evaluators.emplace_back(net, sample.views[v], sample.pixels[v]);
    const auto& rows = evaluators.back().descriptors();
    z.insert(z.end(), rows.begin(), rows.end());
  }
  if (!std::all_of(z.begin(), z.end(), [](double x) { return std::isfinite(x); }))
    throw Error(Errc::non_finite_loss, "network produced non-finite descriptors");
  const MultiviewBatch batch(views, k, d, std::move(z));
  const LossOutput loss = compute_loss(cfg.loss, batch.view(), cfg.loss_config, cfg.mining, mining_seed);
  LossAndGradient out;
  out.value = loss.value;
  out.grad.assign(net.parameters().size(), 0.0);
  for (std::size_t v = 0; v < views; ++v) {
    evaluators[v].backward(std::span(loss.grad).subspan(v * k * d, k * d), out.grad);
  }
  return out;
}

double train_step(ConvDescriptorNet& net, const MultiviewSample& sample, const TrainConfig& cfg, OptimizerState& state,
                  std::uint64_t mining_seed) {
  const LossAndGradient lg = loss_and_gradient(net, sample, cfg, mining_seed);
  const bool finite = std::isfinite(lg.value) &&
                      std::all_of(lg.grad.begin(), lg.grad.end(), [](double g) { return std::isfinite(g); });
  if (!finite) throw Error(Errc::non_finite_loss, "loss or gradient is not finite; parameters left unchanged");

  auto& p = net.parameters();
  const double lr = cfg.learning_rate;
  if (cfg.optimizer == Optimizer::sgd) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * lg.grad[i];
    ++state.steps;
    return lg.value;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.first_moment.size() != p.size()) {
    state.first_moment.assign(p.size(), 0.0);
    state.second_moment.assign(p.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = lg.grad[i];
    state.first_moment[i] = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
    state.second_moment[i] = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
    p[i] -= lr * (state.first_moment[i] / c1) / (std::sqrt(state.second_moment[i] / c2) + eps);
  }
  return lg.value;
}

namespace {

KeypointSet detect(const KeypointSet& truth, int width, int height, const PeakConfig& peak) {
  const auto [cross, bif] = rasterize_keypoints(truth, width, height);
  return extract_keypoints(make_target_heatmaps(cross, bif), peak);
}

}  // namespace

PrecisionResult evaluate_matching_precision(const Describer& describe, const std::vector<PrecisionPair>& pairs,
                                            const PeakConfig& peak, double tol_px) {
  PrecisionResult r;
  for (const auto& pair : pairs) {
    const KeypointSet kf = detect(pair.fixed_keypoints, pair.fixed.width, pair.fixed.height, peak);
    const KeypointSet km = detect(pair.moving_keypoints, pair.moving.width, pair.moving.height, peak);
    if (kf.empty() || km.empty()) continue;
    const DescriptorSet df = sample_descriptors(describe(pair.fixed), kf);
    const DescriptorSet dm = sample_descriptors(describe(pair.moving), km);
    const MatchSet matches = mutual_match_classwise(df, dm);
    for (const auto& m : matches.pairs) {
      const Point2 mapped = apply_homography(pair.moving_to_fixed, dm.locations[m.moving]);
      ++r.matches;
      if (distance(mapped, df.locations[m.fixed]) <= tol_px) ++r.correct;
    }
  }
  return r;
}

PrecisionResult evaluate_matching_precision(const ConvDescriptorNet& net, const std::vector<PrecisionPair>& pairs,
                                            const PeakConfig& peak, double tol_px) {
  return evaluate_matching_precision([&](const Image& img) { return forward_dense(net, img); }, pairs, peak, tol_px);
}

TrainReport train(ConvDescriptorNet& net, const std::vector<TrainingImage>& images, const TrainConfig& cfg,
                  std::size_t max_steps, const std::vector<PrecisionPair>* validation,
                  const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  if (images.empty()) throw Error(Errc::empty_input, "no training images");
  TrainReport report;
  OptimizerState state;
  std::vector<std::size_t> order(images.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (max_steps != 0 && report.steps >= max_steps) break;
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t idx : order) {
      if (max_steps != 0 && report.steps >= max_steps) break;
      const std::uint64_t visit = static_cast<std::uint64_t>(epoch) * images.size() + idx;
      MultiviewSample sample;
      try {
        sample = build_multiview_sample(images[idx].image, images[idx].keypoints, cfg.augmentation, cfg.n_views,
                                        derive_seed(cfg.seed, "sample", visit));
      } catch (const Error& e) {
        if (e.code() != Errc::too_few_survivors) throw;
        ++report.skipped_samples;
        continue;
      }
      sum += train_step(net, sample, cfg, state, derive_seed(cfg.seed, "mining", visit));
      ++count;
      ++report.steps;
    }
    const double mean = count == 0 ? 0.0 : sum / static_cast<double>(count);
    report.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (validation != nullptr && !validation->empty()) {
    report.validation_precision = evaluate_matching_precision(net, *validation, PeakConfig{}, 2.0).precision();
  }
  return report;
}

}  // namespace conked
