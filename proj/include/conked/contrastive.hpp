#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace conked {

// Read-only view of (views x keypoints x dim) descriptors, row k of every
// view being the same source keypoint. No norm requirement: the gradient
// checks perturb entries freely.
struct BatchView {
  std::size_t views = 0;
  std::size_t keypoints = 0;
  std::size_t dim = 0;
  std::span<const double> z;

  std::span<const double> row(std::size_t view, std::size_t k) const {
    return z.subspan((view * keypoints + k) * dim, dim);
  }
};

// One original view plus N augmentations. Rows are unit-norm (+-1e-5).
class MultiviewBatch {
 public:
  // Throws shape_mismatch on inconsistent sizes, invalid_argument on
  // non-unit rows.
  MultiviewBatch(std::size_t views, std::size_t keypoints, std::size_t dim, std::vector<double> z);

  std::size_t views() const { return views_; }
  std::size_t augmentations() const { return views_ - 1; }
  std::size_t keypoints() const { return keypoints_; }
  std::size_t dim() const { return dim_; }
  const std::vector<double>& values() const { return z_; }
  BatchView view() const { return {views_, keypoints_, dim_, z_}; }

 private:
  std::size_t views_;
  std::size_t keypoints_;
  std::size_t dim_;
  std::vector<double> z_;
};

struct LossConfig {
  double temperature = 0.1;
  double margin = 0.05;  // triplet only
};

struct LossOutput {
  double value = 0.0;
  std::vector<double> grad;  // d value / d z, same layout as the batch
};

enum class LossKind { supcon, mp_infonce, triplet };
enum class Mining { random, hardest };

std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view s);
Mining parse_mining(std::string_view s);

// (1/N) sum_i sum_{j!=i} sum_k -log( e^{z_ik.z_jk/t} /
//     ( sum_{c!=k} e^{z_ik.z_ic/t} + sum_{l!=i} sum_c e^{z_ik.z_lc/t} ) )
// The other-view sum includes the positives.
LossOutput supcon_loss(const BatchView& b, const LossConfig& cfg);
LossOutput supcon_loss(const MultiviewBatch& b, const LossConfig& cfg);

// 1/(C(N+1,2) K) sum_{i<j} sum_k -log( e^{z_ik.z_jk/t} /
//     ( sum_{c!=k} e^{z_ik.z_ic/t} + sum_c e^{z_ik.z_jc/t} ) )
LossOutput mp_infonce_loss(const BatchView& b, const LossConfig& cfg);
LossOutput mp_infonce_loss(const MultiviewBatch& b, const LossConfig& cfg);

// Per anchor (i, k): max(0, d(a, p) - d(a, n) + margin), d = 1 - cosine,
// averaged over all (N+1)K anchors. Hardest mining takes the least similar
// positive and the most similar negative; random mining draws both from
// `seed`.
LossOutput triplet_loss(const BatchView& b, const LossConfig& cfg, Mining mining, std::uint64_t seed = 0);
LossOutput triplet_loss(const MultiviewBatch& b, const LossConfig& cfg, Mining mining, std::uint64_t seed = 0);

LossOutput compute_loss(LossKind kind, const BatchView& b, const LossConfig& cfg, Mining mining = Mining::hardest,
                        std::uint64_t seed = 0);

// Single -log(...) terms, evaluated directly (no gradient); used to compare
// the two objectives term by term.
double supcon_summand(const BatchView& b, std::size_t i, std::size_t j, std::size_t k, double temperature);
double mp_infonce_summand(const BatchView& b, std::size_t i, std::size_t j, std::size_t k, double temperature);

}  // namespace conked
