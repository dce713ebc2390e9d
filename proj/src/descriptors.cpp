#include "conked/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"
#include "conked/simd/kernels.hpp"

namespace conked {

DescriptorBlock::DescriptorBlock(int width, int height, int dim, std::vector<float> values)
    : width_(width), height_(height), dim_(dim), values_(std::move(values)) {
  if (width < 0 || height < 0 || dim <= 0) throw Error(Errc::shape_mismatch, "invalid descriptor block shape");
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(dim);
  if (values_.size() != n) throw Error(Errc::shape_mismatch, "descriptor block value count does not match shape");
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      double sq = 0.0;
      for (float v : at(x, y)) sq += static_cast<double>(v) * v;
      if (!(std::abs(std::sqrt(sq) - 1.0) <= kUnitNormTolerance)) {
        throw Error(Errc::invalid_argument, "descriptor at (" + std::to_string(x) + "," + std::to_string(y) +
                                                ") is not unit-norm");
      }
    }
  }
}

DescriptorBlock::DescriptorBlock(FloatBlock block)
    : DescriptorBlock(static_cast<int>(block.width), static_cast<int>(block.height), static_cast<int>(block.channels),
                      std::move(block.values)) {}

std::span<const float> DescriptorBlock::at(int x, int y) const {
  const std::size_t off =
      (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * static_cast<std::size_t>(dim_);
  return {values_.data() + off, static_cast<std::size_t>(dim_)};
}

FloatBlock DescriptorBlock::to_block() const {
  return {static_cast<std::uint32_t>(width_), static_cast<std::uint32_t>(height_), static_cast<std::uint32_t>(dim_), values_};
}

void DescriptorSet::push_back(std::span<const float> v, KeypointClass c, Point2 loc) {
  if (dim == 0 && classes.empty()) dim = static_cast<int>(v.size());
  if (v.size() != static_cast<std::size_t>(dim)) throw Error(Errc::dimension_mismatch, "descriptor dimension mismatch");
  vectors.insert(vectors.end(), v.begin(), v.end());
  classes.push_back(c);
  locations.push_back(loc);
}

DescriptorSet sample_descriptors(const DescriptorBlock& block, const KeypointSet& keypoints) {
  DescriptorSet out;
  out.dim = block.dim();
  for (const auto& kp : keypoints.points) {
    const auto x = static_cast<long>(std::lround(kp.location.x));
    const auto y = static_cast<long>(std::lround(kp.location.y));
    if (x < 0 || y < 0 || x >= block.width() || y >= block.height()) {
      throw Error(Errc::out_of_bounds, "keypoint (" + std::to_string(kp.location.x) + ", " +
                                           std::to_string(kp.location.y) + ") outside descriptor block");
    }
    out.push_back(block.at(static_cast<int>(x), static_cast<int>(y)), kp.cls, kp.location);
  }
  return out;
}

namespace {

double similarity(std::span<const float> a, std::span<const float> b) {
  return std::clamp(static_cast<double>(simd::dot(a, b)), -1.0, 1.0);
}

void check_dims(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.size() > 0 && b.size() > 0 && a.dim != b.dim) {
    throw Error(Errc::dimension_mismatch, "descriptor dimensions differ: " + std::to_string(a.dim) + " vs " +
                                              std::to_string(b.dim));
  }
}

}  // namespace

SimilarityMatrix cosine_similarity_matrix(const DescriptorSet& a, const DescriptorSet& b) {
  check_dims(a, b);
  SimilarityMatrix s{a.size(), b.size(), std::vector<double>(a.size() * b.size())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) s.values[i * s.cols + j] = similarity(a.row(i), b.row(j));
  }
  return s;
}

MatchSet mutual_match_classwise(const DescriptorSet& fixed, const DescriptorSet& moving, MatchStats* stats) {
  check_dims(fixed, moving);
  MatchSet out;
  for (int c = 0; c < kNumKeypointClasses; ++c) {
    const auto cls = static_cast<KeypointClass>(c);
    std::vector<std::size_t> ia, ib;
    for (std::size_t i = 0; i < fixed.size(); ++i)
      if (fixed.classes[i] == cls) ia.push_back(i);
    for (std::size_t j = 0; j < moving.size(); ++j)
      if (moving.classes[j] == cls) ib.push_back(j);
    if (ia.empty() || ib.empty()) continue;

    std::vector<double> sim(ia.size() * ib.size());
    for (std::size_t r = 0; r < ia.size(); ++r)
      for (std::size_t q = 0; q < ib.size(); ++q) sim[r * ib.size() + q] = similarity(fixed.row(ia[r]), moving.row(ib[q]));
    if (stats) {
      stats->similarity_evaluations += sim.size();
      stats->per_class[static_cast<std::size_t>(c)] += sim.size();
    }

    // Strict '>' keeps the smallest index on ties.
    std::vector<std::size_t> best_col(ia.size(), 0), best_row(ib.size(), 0);
    for (std::size_t r = 0; r < ia.size(); ++r)
      for (std::size_t q = 1; q < ib.size(); ++q)
        if (sim[r * ib.size() + q] > sim[r * ib.size() + best_col[r]]) best_col[r] = q;
    for (std::size_t q = 0; q < ib.size(); ++q)
      for (std::size_t r = 1; r < ia.size(); ++r)
        if (sim[r * ib.size() + q] > sim[best_row[q] * ib.size() + q]) best_row[q] = r;

    for (std::size_t r = 0; r < ia.size(); ++r) {
      const std::size_t q = best_col[r];
      if (best_row[q] == r) out.pairs.push_back({ia[r], ib[q], sim[r * ib.size() + q], cls});
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const Match& x, const Match& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    if (x.fixed != y.fixed) return x.fixed < y.fixed;
    return x.moving < y.moving;
  });
  return out;
}

MatchSet top_n_matches(const MatchSet& m, std::size_t n_per_class) {
  if (n_per_class < 1) throw Error(Errc::invalid_argument, "n_per_class must be >= 1");
  std::vector<Match> sorted = m.pairs;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Match& x, const Match& y) { return x.similarity > y.similarity; });
  std::array<std::size_t, kNumKeypointClasses> taken{};
  MatchSet out;
  for (const auto& p : sorted) {
    auto& t = taken[static_cast<std::size_t>(p.cls)];
    if (t < n_per_class) {
      ++t;
      out.pairs.push_back(p);
    }
  }
  return out;
}

CorrespondenceSet to_correspondences(const MatchSet& m, const DescriptorSet& fixed, const DescriptorSet& moving) {
  CorrespondenceSet c;
  for (const auto& p : m.pairs) {
    c.pairs.push_back({fixed.locations.at(p.fixed), moving.locations.at(p.moving)});
    c.scores.push_back(p.similarity);
  }
  return c;
}

void write_descriptor_block(const std::filesystem::path& path, const DescriptorBlock& block) {
  write_ckdb(path, block.to_block());
}

DescriptorBlock read_descriptor_block(const std::filesystem::path& path) { return DescriptorBlock(read_ckdb(path)); }

void write_matches_csv(const std::filesystem::path& path, const MatchSet& m, const DescriptorSet& fixed,
                       const DescriptorSet& moving) {
  std::ostringstream out;
  out << std::setprecision(17) << "fixed_index,moving_index,class,similarity,x_fixed,y_fixed,x_moving,y_moving\n";
  for (const auto& p : m.pairs) {
    const auto& f = fixed.locations.at(p.fixed);
    const auto& g = moving.locations.at(p.moving);
    out << p.fixed << ',' << p.moving << ',' << class_name(p.cls) << ',' << p.similarity << ',' << f.x << ',' << f.y
        << ',' << g.x << ',' << g.y << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace conked
