#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conked/descriptors.hpp"
#include "conked/geometry.hpp"

namespace conked {

// S: high overlap, P: low overlap, A: appearance change.
enum class Category { S, P, A };

std::string_view category_name(Category c);
Category parse_category(std::string_view s);

struct ControlPointPair {
  Point2 fixed;
  Point2 moving;
};

struct RegistrationCase {
  std::string id;
  Category category = Category::S;
  std::vector<ControlPointPair> control_points;
  std::vector<std::size_t> excluded_indices;

  // Throws invalid_argument unless at least one finite pair remains.
  void validate() const;
};

// Mean over non-excluded pairs of |H(moving) - fixed|.
double case_error(const RegistrationCase& c, const Homography& h);

inline constexpr int kMinThresholdPx = 1;
inline constexpr int kMaxThresholdPx = 25;

struct ScoreCurve {
  std::vector<int> thresholds;         // 1..25
  std::vector<double> success_ratio;  // fraction of cases with error <= t
  double auc = 0.0;                    // mean of success_ratio
};

// Failed cases may be passed as +infinity. Throws empty_input.
ScoreCurve registration_score(std::span<const double> errors);

struct CategoryReport {
  double auc_overall = 0.0;
  double auc_S = 0.0;
  double auc_P = 0.0;
  double auc_A = 0.0;
  double avg = 0.0;
  double weighted_avg = 0.0;
  std::size_t n_S = 0;
  std::size_t n_P = 0;
  std::size_t n_A = 0;
};

// counts = (nA, nP, nS), all positive (invalid_argument otherwise). Because
// the AUC is linear in the cases, the weighted average equals the AUC over
// the pooled cases, which is what auc_overall is set to.
CategoryReport aggregate(double auc_A, double auc_P, double auc_S, std::array<std::size_t, 3> counts);

struct CategoryEvaluation {
  CategoryReport report;
  ScoreCurve overall;
  std::array<ScoreCurve, 3> per_category;  // indexed by Category
};

// errors[i] belongs to cases[i]. Categories without cases get AUC 0 and are
// left out of avg and weighted_avg.
CategoryEvaluation evaluate_categories(std::span<const RegistrationCase> cases, std::span<const double> errors);

// A case together with its ranked matches; the locations are indexed by
// Match::fixed / Match::moving.
struct VtkrsCase {
  RegistrationCase registration;
  MatchSet matches;
  std::vector<Point2> fixed_locations;
  std::vector<Point2> moving_locations;
};

inline constexpr int kVtkrsMinTop = 3;
inline constexpr int kVtkrsMaxTop = 25;

struct VtkrsResult {
  std::vector<int> top_n;            // 3..25 per class
  std::vector<double> auc;           // registration AUC at each n
  std::vector<std::size_t> skipped;  // cases with < 4 pairs at each n
  double vtkrs = 0.0;                // mean of auc
};

// For each n: keep the top-n matches per class, fit with exhaustive RANSAC,
// score the case errors. Cases with fewer than 4 pairs or no consensus
// count as failures. The exhaustive flag of `ransac` is forced on.
VtkrsResult vtkrs(std::span<const VtkrsCase> cases, RansacConfig ransac);

// Error of a registration from ranked matches at a given n (infinity when it
// fails); exposed for tools that report per-case numbers.
double case_error_from_matches(const VtkrsCase& c, std::size_t n_per_class, const RansacConfig& ransac);

// One line per pair: x_fixed y_fixed x_moving y_moving.
std::vector<ControlPointPair> read_control_points(const std::filesystem::path& path);
void write_control_points(const std::filesystem::path& path, std::span<const ControlPointPair> pairs);

struct ManifestEntry {
  std::string id;
  Category category = Category::S;
  std::filesystem::path control_points;
  std::vector<std::size_t> excluded_indices;
};

// CSV id,category,control_points_path[,excluded_indices] with a header row;
// excluded indices are separated by ';'. Relative paths resolve against the
// manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<RegistrationCase> load_cases(const std::filesystem::path& manifest);

// threshold,success_ratio
void write_curve_csv(const std::filesystem::path& path, const ScoreCurve& curve);
// auc_overall,auc_S,auc_P,auc_A,avg,weighted_avg,n_S,n_P,n_A
void write_summary_csv(const std::filesystem::path& path, const CategoryReport& report);
// top_n,auc,skipped then a final row vtkrs,<value>,
void write_vtkrs_csv(const std::filesystem::path& path, const VtkrsResult& result);

}  // namespace conked
