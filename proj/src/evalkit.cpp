#include "conked/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::S: return "S";
    case Category::P: return "P";
    case Category::A: return "A";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  if (s == "S" || s == "high_overlap") return Category::S;
  if (s == "P" || s == "low_overlap") return Category::P;
  if (s == "A" || s == "appearance_change") return Category::A;
  throw Error(Errc::format_error, "unknown category '" + std::string(s) + "'");
}

void RegistrationCase::validate() const {
  std::size_t active = 0;
  for (std::size_t i = 0; i < control_points.size(); ++i) {
    const auto& p = control_points[i];
    if (!std::isfinite(p.fixed.x) || !std::isfinite(p.fixed.y) || !std::isfinite(p.moving.x) ||
        !std::isfinite(p.moving.y))
      throw Error(Errc::invalid_argument, "case " + id + ": non-finite control point");
    if (std::find(excluded_indices.begin(), excluded_indices.end(), i) == excluded_indices.end()) ++active;
  }
  for (std::size_t e : excluded_indices)
    if (e >= control_points.size()) throw Error(Errc::invalid_argument, "case " + id + ": excluded index out of range");
  if (active == 0) throw Error(Errc::invalid_argument, "case " + id + ": no control points left");
}

double case_error(const RegistrationCase& c, const Homography& h) {
  c.validate();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < c.control_points.size(); ++i) {
    if (std::find(c.excluded_indices.begin(), c.excluded_indices.end(), i) != c.excluded_indices.end()) continue;
    sum += distance(apply_homography(h, c.control_points[i].moving), c.control_points[i].fixed);
    ++n;
  }
  return sum / static_cast<double>(n);
}

ScoreCurve registration_score(std::span<const double> errors) {
  if (errors.empty()) throw Error(Errc::empty_input, "no case errors to score");
  ScoreCurve curve;
  double total = 0.0;
  for (int t = kMinThresholdPx; t <= kMaxThresholdPx; ++t) {
    // NaN compares false, so it counts as a failure.
    const auto ok = std::count_if(errors.begin(), errors.end(), [t](double e) { return e <= t; });
    const double ratio = static_cast<double>(ok) / static_cast<double>(errors.size());
    curve.thresholds.push_back(t);
    curve.success_ratio.push_back(ratio);
    total += ratio;
  }
  curve.auc = total / static_cast<double>(curve.thresholds.size());
  return curve;
}

CategoryReport aggregate(double auc_A, double auc_P, double auc_S, std::array<std::size_t, 3> counts) {
  const auto [na, np, ns] = counts;
  if (na == 0 || np == 0 || ns == 0) throw Error(Errc::invalid_argument, "every category needs a positive count");
  CategoryReport r;
  r.auc_A = auc_A;
  r.auc_P = auc_P;
  r.auc_S = auc_S;
  r.n_A = na;
  r.n_P = np;
  r.n_S = ns;
  r.avg = (auc_A + auc_P + auc_S) / 3.0;
  r.weighted_avg = (static_cast<double>(na) * auc_A + static_cast<double>(np) * auc_P + static_cast<double>(ns) * auc_S) /
                   static_cast<double>(na + np + ns);
  r.auc_overall = r.weighted_avg;
  return r;
}

CategoryEvaluation evaluate_categories(std::span<const RegistrationCase> cases, std::span<const double> errors) {
  if (cases.size() != errors.size()) throw Error(Errc::dimension_mismatch, "one error per case required");
  CategoryEvaluation out;
  out.overall = registration_score(errors);
  std::array<std::vector<double>, 3> split;
  for (std::size_t i = 0; i < cases.size(); ++i) split[static_cast<std::size_t>(cases[i].category)].push_back(errors[i]);
  CategoryReport& r = out.report;
  double avg = 0.0, weighted = 0.0;
  std::size_t present = 0, total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    double auc = 0.0;
    if (!split[c].empty()) {
      out.per_category[c] = registration_score(split[c]);
      auc = out.per_category[c].auc;
      avg += auc;
      weighted += auc * static_cast<double>(split[c].size());
      ++present;
      total += split[c].size();
    }
    switch (static_cast<Category>(c)) {
      case Category::S: r.auc_S = auc, r.n_S = split[c].size(); break;
      case Category::P: r.auc_P = auc, r.n_P = split[c].size(); break;
      case Category::A: r.auc_A = auc, r.n_A = split[c].size(); break;
    }
  }
  r.avg = avg / static_cast<double>(present);
  r.weighted_avg = weighted / static_cast<double>(total);
  r.auc_overall = out.overall.auc;
  return out;
}

double case_error_from_matches(const VtkrsCase& c, std::size_t n_per_class, const RansacConfig& ransac) {
  const MatchSet top = top_n_matches(c.matches, n_per_class);
  if (top.size() < 4) return std::numeric_limits<double>::infinity();
  CorrespondenceSet set;
  for (const auto& m : top.pairs) {
    set.pairs.push_back({c.fixed_locations.at(m.fixed), c.moving_locations.at(m.moving)});
    set.scores.push_back(m.similarity);
  }
  try {
    const RansacResult fit = ransac_homography(set, ransac);
    return case_error(c.registration, fit.model);
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_argument) throw;
    return std::numeric_limits<double>::infinity();
  }
}

VtkrsResult vtkrs(std::span<const VtkrsCase> cases, RansacConfig ransac) {
  if (cases.empty()) throw Error(Errc::empty_input, "no cases for VTKRS");
  ransac.exhaustive = true;
  ransac.validate();
  VtkrsResult r;
  std::vector<double> errors(cases.size());
  for (int n = kVtkrsMinTop; n <= kVtkrsMaxTop; ++n) {
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (top_n_matches(cases[i].matches, static_cast<std::size_t>(n)).size() < 4) ++skipped;
      errors[i] = case_error_from_matches(cases[i], static_cast<std::size_t>(n), ransac);
    }
    r.top_n.push_back(n);
    r.auc.push_back(registration_score(errors).auc);
    r.skipped.push_back(skipped);
  }
  double sum = 0.0;
  for (double a : r.auc) sum += a;
  r.vtkrs = sum / static_cast<double>(r.auc.size());
  return r;
}

std::vector<ControlPointPair> read_control_points(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ControlPointPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream fields{std::string(t)};
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (parts.size() != 4)
      throw Error(Errc::format_error, path.string() + ":" + std::to_string(line_no) + ": expected 4 numbers");
    out.push_back({{parse_double(parts[0]), parse_double(parts[1])}, {parse_double(parts[2]), parse_double(parts[3])}});
  }
  return out;
}

void write_control_points(const std::filesystem::path& path, std::span<const ControlPointPair> pairs) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : pairs) out << p.fixed.x << ' ' << p.fixed.y << ' ' << p.moving.x << ' ' << p.moving.y << '\n';
  write_file_atomic(path, out.str());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (line_no == 1 && t.rfind("id,", 0) == 0) continue;
    const auto f = split(t, ',');
    if (f.size() < 3 || f.size() > 4)
      throw Error(Errc::format_error, path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 fields");
    ManifestEntry e;
    e.id = std::string(trim(f[0]));
    e.category = parse_category(trim(f[1]));
    e.control_points = std::filesystem::path(std::string(trim(f[2])));
    if (e.control_points.is_relative()) e.control_points = path.parent_path() / e.control_points;
    if (f.size() == 4 && !trim(f[3]).empty()) {
      for (const auto& idx : split(trim(f[3]), ';')) e.excluded_indices.push_back(static_cast<std::size_t>(parse_int(trim(idx))));
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ostringstream out;
  out << "id,category,control_points_path,excluded_indices\n";
  for (const auto& e : entries) {
    out << e.id << ',' << category_name(e.category) << ',' << e.control_points.generic_string() << ',';
    for (std::size_t i = 0; i < e.excluded_indices.size(); ++i) out << (i ? ";" : "") << e.excluded_indices[i];
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<RegistrationCase> load_cases(const std::filesystem::path& manifest) {
  std::vector<RegistrationCase> cases;
  for (const auto& e : read_manifest(manifest)) {
    RegistrationCase c{e.id, e.category, read_control_points(e.control_points), e.excluded_indices};
    c.validate();
    cases.push_back(std::move(c));
  }
  return cases;
}

void write_curve_csv(const std::filesystem::path& path, const ScoreCurve& curve) {
  std::ostringstream out;
  out.precision(10);
  out << "threshold,success_ratio\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) out << curve.thresholds[i] << ',' << curve.success_ratio[i] << '\n';
  write_file_atomic(path, out.str());
}

void write_summary_csv(const std::filesystem::path& path, const CategoryReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "auc_overall,auc_S,auc_P,auc_A,avg,weighted_avg,n_S,n_P,n_A\n";
  out << r.auc_overall << ',' << r.auc_S << ',' << r.auc_P << ',' << r.auc_A << ',' << r.avg << ',' << r.weighted_avg
      << ',' << r.n_S << ',' << r.n_P << ',' << r.n_A << '\n';
  write_file_atomic(path, out.str());
}

void write_vtkrs_csv(const std::filesystem::path& path, const VtkrsResult& result) {
  std::ostringstream out;
  out.precision(10);
  out << "top_n,auc,skipped\n";
  for (std::size_t i = 0; i < result.top_n.size(); ++i)
    out << result.top_n[i] << ',' << result.auc[i] << ',' << result.skipped[i] << '\n';
  out << "vtkrs," << result.vtkrs << ",\n";
  write_file_atomic(path, out.str());
}

}  // namespace conked
