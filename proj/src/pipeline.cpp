#include "conked/pipeline.hpp"

#include <chrono>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

Heatmap oracle_heatmap(const KeypointSet& keypoints, int width, int height) {
  const auto [cross, bif] = rasterize_keypoints(keypoints, width, height);
  return make_target_heatmaps(cross, bif);
}

PairRegistration register_pair(const Image& fixed, const Image& moving, const Heatmap& fixed_heatmap,
                               const Heatmap& moving_heatmap, const Describer& describe, const PeakConfig& peak,
                               const RansacConfig& ransac) {
  PairRegistration r;
  auto t = Clock::now();
  r.fixed_keypoints = extract_keypoints(fixed_heatmap, peak);
  r.moving_keypoints = extract_keypoints(moving_heatmap, peak);
  r.timings.detect_ms = elapsed_ms(t);

  t = Clock::now();
  r.fixed_descriptors = sample_descriptors(describe(fixed), r.fixed_keypoints);
  r.moving_descriptors = sample_descriptors(describe(moving), r.moving_keypoints);
  r.timings.describe_ms = elapsed_ms(t);

  t = Clock::now();
  r.matches = mutual_match_classwise(r.fixed_descriptors, r.moving_descriptors);
  r.timings.match_ms = elapsed_ms(t);

  if (r.matches.size() < 4)
    throw Error(Errc::no_consensus, "only " + std::to_string(r.matches.size()) + " mutual matches, need 4");
  t = Clock::now();
  try {
    r.ransac = ransac_homography(to_correspondences(r.matches, r.fixed_descriptors, r.moving_descriptors), ransac);
  } catch (const Error& e) {
    if (e.code() == Errc::insufficient_points || e.code() == Errc::degenerate_configuration)
      throw Error(Errc::no_consensus, e.what());
    throw;
  }
  r.timings.ransac_ms = elapsed_ms(t);
  r.moving_to_fixed = r.ransac.model;
  return r;
}

void write_timings_csv(const std::filesystem::path& path, const StageTimings& t) {
  std::ostringstream out;
  out.precision(6);
  out << "stage,milliseconds\n"
      << "detect," << t.detect_ms << "\ndescribe," << t.describe_ms << "\nmatch," << t.match_ms << "\nransac,"
      << t.ransac_ms << '\n';
  write_file_atomic(path, out.str());
}

}  // namespace conked
