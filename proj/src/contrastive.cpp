#include "conked/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "conked/error.hpp"
#include "conked/rng.hpp"
#include "conked/simd/kernels.hpp"

namespace conked {

MultiviewBatch::MultiviewBatch(std::size_t views, std::size_t keypoints, std::size_t dim, std::vector<double> z)
    : views_(views), keypoints_(keypoints), dim_(dim), z_(std::move(z)) {
  if (dim == 0 || z_.size() != views * keypoints * dim) {
    throw Error(Errc::shape_mismatch, "batch values do not match (views, keypoints, dim)");
  }
  for (std::size_t r = 0; r < views * keypoints; ++r) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) sq += z_[r * dim + d] * z_[r * dim + d];
    if (!(std::abs(std::sqrt(sq) - 1.0) <= 1e-5)) throw Error(Errc::invalid_argument, "batch row is not unit-norm");
  }
}

std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::supcon: return "supcon";
    case LossKind::mp_infonce: return "mp_infonce";
    case LossKind::triplet: return "triplet";
  }
  return "unknown";
}

LossKind parse_loss(std::string_view s) {
  if (s == "supcon") return LossKind::supcon;
  if (s == "mp_infonce") return LossKind::mp_infonce;
  if (s == "triplet") return LossKind::triplet;
  throw Error(Errc::invalid_argument, "unknown loss '" + std::string(s) + "'");
}

Mining parse_mining(std::string_view s) {
  if (s == "random") return Mining::random;
  if (s == "hardest") return Mining::hardest;
  throw Error(Errc::invalid_argument, "unknown mining mode '" + std::string(s) + "'");
}

namespace {

void check(const BatchView& b, const LossConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error(Errc::non_positive_temperature, "temperature must be > 0");
  if (b.keypoints < 2) throw Error(Errc::degenerate_batch, "need K >= 2 keypoints so a negative exists");
  if (b.views < 2) throw Error(Errc::degenerate_batch, "need at least one augmented view");
  if (b.z.size() != b.views * b.keypoints * b.dim) throw Error(Errc::shape_mismatch, "batch view size mismatch");
}

struct Logit {
  std::size_t view;
  std::size_t key;
  double value;
};

double log_sum_exp(const std::vector<Logit>& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& l : logits) m = std::max(m, l.value);
  double s = 0.0;
  for (const auto& l : logits) s += std::exp(l.value - m);
  return m + std::log(s);
}

// Denominator logits for anchor (i, k): own-view negatives, then each view in
// `others` in full.
void denominator(const BatchView& b, std::size_t i, std::size_t k, std::span<const std::size_t> others, double inv_t,
                 std::vector<Logit>& out) {
  out.clear();
  const auto anchor = b.row(i, k);
  for (std::size_t c = 0; c < b.keypoints; ++c) {
    if (c != k) out.push_back({i, c, simd::dot(anchor, b.row(i, c)) * inv_t});
  }
  for (std::size_t l : others) {
    for (std::size_t c = 0; c < b.keypoints; ++c) out.push_back({l, c, simd::dot(anchor, b.row(l, c)) * inv_t});
  }
}

// d/dz of weight * (z_a . z_b) / t
void accumulate_pair(const BatchView& b, std::vector<double>& grad, std::size_t va, std::size_t ka, std::size_t vb,
                     std::size_t kb, double weight) {
  const std::size_t d = b.dim;
  std::span<double> ga(grad.data() + (va * b.keypoints + ka) * d, d);
  std::span<double> gb(grad.data() + (vb * b.keypoints + kb) * d, d);
  simd::axpy(weight, b.row(vb, kb), ga);
  simd::axpy(weight, b.row(va, ka), gb);
}

}  // namespace

LossOutput supcon_loss(const BatchView& b, const LossConfig& cfg) {
  check(b, cfg);
  const double inv_t = 1.0 / cfg.temperature;
  const auto n_aug = static_cast<double>(b.views - 1);
  LossOutput out;
  out.grad.assign(b.z.size(), 0.0);
  std::vector<Logit> logits;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < b.views; ++i) {
    others.clear();
    for (std::size_t l = 0; l < b.views; ++l)
      if (l != i) others.push_back(l);
    for (std::size_t k = 0; k < b.keypoints; ++k) {
      denominator(b, i, k, others, inv_t, logits);
      const double lse = log_sum_exp(logits);
      double positives = 0.0;
      for (const auto& l : logits) {
        const bool positive = l.view != i && l.key == k;
        if (positive) positives += l.value;
        // (1/N) * (N * softmax - [positive])
        const double g = std::exp(l.value - lse) - (positive ? 1.0 / n_aug : 0.0);
        accumulate_pair(b, out.grad, i, k, l.view, l.key, g * inv_t);
      }
      out.value += lse - positives / n_aug;
    }
  }
  return out;
}

LossOutput supcon_loss(const MultiviewBatch& b, const LossConfig& cfg) { return supcon_loss(b.view(), cfg); }

LossOutput mp_infonce_loss(const BatchView& b, const LossConfig& cfg) {
  check(b, cfg);
  const double inv_t = 1.0 / cfg.temperature;
  const double pairs = static_cast<double>(b.views * (b.views - 1)) / 2.0;
  const double norm = 1.0 / (pairs * static_cast<double>(b.keypoints));
  LossOutput out;
  out.grad.assign(b.z.size(), 0.0);
  std::vector<Logit> logits;
  for (std::size_t i = 0; i < b.views; ++i) {
    for (std::size_t j = i + 1; j < b.views; ++j) {
      const std::size_t other[1] = {j};
      for (std::size_t k = 0; k < b.keypoints; ++k) {
        denominator(b, i, k, other, inv_t, logits);
        const double lse = log_sum_exp(logits);
        double positive_logit = 0.0;
        for (const auto& l : logits) {
          const bool positive = l.view == j && l.key == k;
          if (positive) positive_logit = l.value;
          const double g = norm * (std::exp(l.value - lse) - (positive ? 1.0 : 0.0));
          accumulate_pair(b, out.grad, i, k, l.view, l.key, g * inv_t);
        }
        out.value += norm * (lse - positive_logit);
      }
    }
  }
  return out;
}

LossOutput mp_infonce_loss(const MultiviewBatch& b, const LossConfig& cfg) { return mp_infonce_loss(b.view(), cfg); }

LossOutput triplet_loss(const BatchView& b, const LossConfig& cfg, Mining mining, std::uint64_t seed) {
  if (b.keypoints < 2 || b.views < 2) throw Error(Errc::degenerate_batch, "triplets need K >= 2 and N >= 1");
  if (!(cfg.margin >= 0.0)) throw Error(Errc::invalid_argument, "margin must be >= 0");
  const std::size_t anchors = b.views * b.keypoints;
  const double scale = 1.0 / static_cast<double>(anchors);
  Rng rng = make_rng(seed, "triplet-mining");
  LossOutput out;
  out.grad.assign(b.z.size(), 0.0);
  for (std::size_t i = 0; i < b.views; ++i) {
    for (std::size_t k = 0; k < b.keypoints; ++k) {
      const auto a = b.row(i, k);
      std::size_t pos_view = 0, neg_view = 0, neg_key = 0;
      double s_ap = 0.0, s_an = 0.0;
      if (mining == Mining::hardest) {
        s_ap = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.views; ++j) {
          if (j == i) continue;
          const double s = simd::dot(a, b.row(j, k));
          if (s < s_ap) {
            s_ap = s;
            pos_view = j;
          }
        }
        s_an = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < b.views; ++l) {
          for (std::size_t c = 0; c < b.keypoints; ++c) {
            if (c == k) continue;
            const double s = simd::dot(a, b.row(l, c));
            if (s > s_an) {
              s_an = s;
              neg_view = l;
              neg_key = c;
            }
          }
        }
      } else {
        pos_view = static_cast<std::size_t>(uniform_index(rng, b.views - 1));
        if (pos_view >= i) ++pos_view;
        neg_view = static_cast<std::size_t>(uniform_index(rng, b.views));
        neg_key = static_cast<std::size_t>(uniform_index(rng, b.keypoints - 1));
        if (neg_key >= k) ++neg_key;
        s_ap = simd::dot(a, b.row(pos_view, k));
        s_an = simd::dot(a, b.row(neg_view, neg_key));
      }
      // (1 - s_ap) - (1 - s_an) + margin
      const double term = s_an - s_ap + cfg.margin;
      if (term <= 0.0) continue;
      out.value += scale * term;
      const std::size_t d = b.dim;
      std::span<double> ga(out.grad.data() + (i * b.keypoints + k) * d, d);
      std::span<double> gp(out.grad.data() + (pos_view * b.keypoints + k) * d, d);
      std::span<double> gn(out.grad.data() + (neg_view * b.keypoints + neg_key) * d, d);
      simd::axpy(scale, b.row(neg_view, neg_key), ga);
      simd::axpy(-scale, b.row(pos_view, k), ga);
      simd::axpy(-scale, a, gp);
      simd::axpy(scale, a, gn);
    }
  }
  return out;
}

LossOutput triplet_loss(const MultiviewBatch& b, const LossConfig& cfg, Mining mining, std::uint64_t seed) {
  return triplet_loss(b.view(), cfg, mining, seed);
}

LossOutput compute_loss(LossKind kind, const BatchView& b, const LossConfig& cfg, Mining mining, std::uint64_t seed) {
  switch (kind) {
    case LossKind::supcon: return supcon_loss(b, cfg);
    case LossKind::mp_infonce: return mp_infonce_loss(b, cfg);
    case LossKind::triplet: return triplet_loss(b, cfg, mining, seed);
  }
  throw Error(Errc::invalid_argument, "unknown loss kind");
}

namespace {

double summand(const BatchView& b, std::size_t i, std::size_t j, std::size_t k, double t, bool all_other_views) {
  auto sim = [&](std::size_t v, std::size_t c) { return simd::dot(b.row(i, k), b.row(v, c)) / t; };
  std::vector<double> terms;
  for (std::size_t c = 0; c < b.keypoints; ++c)
    if (c != k) terms.push_back(sim(i, c));
  for (std::size_t l = 0; l < b.views; ++l) {
    if (l == i || (!all_other_views && l != j)) continue;
    for (std::size_t c = 0; c < b.keypoints; ++c) terms.push_back(sim(l, c));
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += std::exp(v - m);
  return m + std::log(s) - sim(j, k);
}

}  // namespace

double supcon_summand(const BatchView& b, std::size_t i, std::size_t j, std::size_t k, double temperature) {
  return summand(b, i, j, k, temperature, true);
}

double mp_infonce_summand(const BatchView& b, std::size_t i, std::size_t j, std::size_t k, double temperature) {
  return summand(b, i, j, k, temperature, false);
}

}  // namespace conked
