#include "basnet/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "basnet/image_ops.hpp"

namespace basnet::metrics {

namespace {

// Matches MATLAB's eps, which the reference evaluation code uses as guard.
constexpr double kEps = DBL_EPSILON;
constexpr double kGtThreshold = 0.5;

void require_same_size(const Mask& s, const Mask& g, const char* what) {
  if (s.size() != g.size()) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(s.size()) + " vs ground truth " +
                     to_string(g.size()));
  }
  if (s.empty()) {
    throw ShapeError(std::string(what) + ": empty maps");
  }
}

// Mean / sample-std object score used by the structure measure.
double object_score(const std::vector<double>& values, double lambda) {
  if (values.empty()) {
    return 0.0;
  }
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sigma = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - mean) * (v - mean);
    }
    sigma = std::sqrt(ss / (n - 1.0));
  }
  return 2.0 * mean / (mean * mean + 1.0 + 2.0 * lambda * sigma + kEps);
}

struct Region {
  int row0, row1, col0, col1;  // half-open
  std::size_t area() const {
    return static_cast<std::size_t>(std::max(0, row1 - row0)) * static_cast<std::size_t>(std::max(0, col1 - col0));
  }
};

// Global SSIM of one quadrant, as defined for the region-aware structure score.
double region_ssim(const Mask& s, const detail::BinaryMap& g, int width, const Region& region) {
  const std::size_t count = region.area();
  if (count == 0) {
    return 0.0;
  }
  const double n = static_cast<double>(count);
  double sx = 0.0;
  double sy = 0.0;
  for (int r = region.row0; r < region.row1; ++r) {
    for (int c = region.col0; c < region.col1; ++c) {
      sx += s(r, c);
      sy += g[static_cast<std::size_t>(r) * width + c];
    }
  }
  const double x = sx / n;
  const double y = sy / n;
  double vx = 0.0;
  double vy = 0.0;
  double cxy = 0.0;
  for (int r = region.row0; r < region.row1; ++r) {
    for (int c = region.col0; c < region.col1; ++c) {
      const double dx = s(r, c) - x;
      const double dy = g[static_cast<std::size_t>(r) * width + c] - y;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  vx /= (n - 1.0 + kEps);
  vy /= (n - 1.0 + kEps);
  cxy /= (n - 1.0 + kEps);
  const double alpha = 4.0 * x * y * cxy;
  const double beta = (x * x + y * y) * (vx + vy);
  if (alpha != 0.0) {
    return alpha / (beta + kEps);
  }
  return beta == 0.0 ? 1.0 : 0.0;
}

double enhanced(double sc, double gc) {
  const double align = 2.0 * gc * sc / (gc * gc + sc * sc + kEps);
  return (align + 1.0) * (align + 1.0) / 4.0;
}

// E(t) from the four (prediction, truth) pixel-category counts.
double enhanced_from_counts(double on_fg, double on_bg, double off_fg, double off_bg) {
  const double n = on_fg + on_bg + off_fg + off_bg;
  const double fg = on_fg + off_fg;
  const double on = on_fg + on_bg;
  if (fg == 0.0) {
    return (off_fg + off_bg) / n;
  }
  if (fg == n) {
    return on / n;
  }
  const double mu_s = on / n;
  const double mu_g = fg / n;
  const double total = on_fg * enhanced(1.0 - mu_s, 1.0 - mu_g) + on_bg * enhanced(1.0 - mu_s, -mu_g) +
                       off_fg * enhanced(-mu_s, 1.0 - mu_g) + off_bg * enhanced(-mu_s, -mu_g);
  return total / n;
}

// Largest k in [-1, 255] with k/255 <= v.
int last_passed_threshold(double v) {
  int k = std::clamp(static_cast<int>(std::floor(v * 255.0)), -1, 255);
  while (k < 255 && static_cast<double>(k + 1) / 255.0 <= v) {
    ++k;
  }
  while (k >= 0 && static_cast<double>(k) / 255.0 > v) {
    --k;
  }
  return k;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

}  // namespace

namespace detail {

BinaryMap binarize(const Mask& map, double threshold) {
  BinaryMap out(map.pixel_count());
  const auto values = map.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = values[i] >= threshold ? 1 : 0;
  }
  return out;
}

BinaryMap boundary(const BinaryMap& fg, Size size) {
  BinaryMap out(fg.size(), 0);
  const int h = size.height;
  const int w = size.width;
  auto at = [&](int r, int c) { return fg[static_cast<std::size_t>(r) * w + c]; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!at(r, c)) {
        continue;
      }
      const bool edge = (r > 0 && !at(r - 1, c)) || (r + 1 < h && !at(r + 1, c)) || (c > 0 && !at(r, c - 1)) ||
                        (c + 1 < w && !at(r, c + 1));
      out[static_cast<std::size_t>(r) * w + c] = edge ? 1 : 0;
    }
  }
  return out;
}

NearestForeground nearest_foreground(const BinaryMap& fg, Size size) {
  const int h = size.height;
  const int w = size.width;
  const std::size_t n = size.area();
  constexpr std::int64_t kNone = -1;

  // Column pass: nearest foreground row within each column, preferring the
  // upper one on ties (smaller row wins the lexicographic tie-break).
  std::vector<std::int64_t> column_row(n, kNone);
  std::vector<int> above(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    int last = -1;
    for (int r = 0; r < h; ++r) {
      if (fg[static_cast<std::size_t>(r) * w + c]) {
        last = r;
      }
      above[static_cast<std::size_t>(r)] = last;
    }
    int next = -1;
    for (int r = h - 1; r >= 0; --r) {
      if (fg[static_cast<std::size_t>(r) * w + c]) {
        next = r;
      }
      const int up = above[static_cast<std::size_t>(r)];
      int best = -1;
      if (up >= 0 && (next < 0 || r - up <= next - r)) {
        best = up;
      } else if (next >= 0) {
        best = next;
      }
      column_row[static_cast<std::size_t>(r) * w + c] = best;
    }
  }

  // Row pass: scan columns outward, stopping once the horizontal offset alone
  // exceeds the best squared distance found so far.
  NearestForeground out{std::vector<std::int64_t>(n, kNone), std::vector<std::int64_t>(n, kNone)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::int64_t best_d = -1;
      std::int64_t best_row = 0;
      std::int64_t best_col = 0;
      for (int off = 0; off < w; ++off) {
        const std::int64_t off_sq = static_cast<std::int64_t>(off) * off;
        if (best_d >= 0 && off_sq > best_d) {
          break;
        }
        for (int cc : {c - off, c + off}) {
          if (cc < 0 || cc >= w) {
            continue;
          }
          const std::int64_t rr = column_row[static_cast<std::size_t>(r) * w + cc];
          if (rr < 0) {
            continue;
          }
          const std::int64_t d = off_sq + (rr - r) * (rr - r);
          if (best_d < 0 || d < best_d || (d == best_d && (rr < best_row || (rr == best_row && cc < best_col)))) {
            best_d = d;
            best_row = rr;
            best_col = cc;
          }
        }
      }
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      out.distance_sq[i] = best_d;
      out.index[i] = best_d < 0 ? kNone : best_row * w + best_col;
    }
  }
  return out;
}

std::vector<double> gaussian_filter_zero_pad(std::span<const double> values, Size size, int kernel_size,
                                             double sigma) {
  // The 2-D Gaussian is the outer product of two normalized 1-D kernels.
  const auto taps = gaussian_kernel_1d(kernel_size, sigma);
  const int half = kernel_size / 2;
  const int h = size.height;
  const int w = size.width;
  std::vector<double> tmp(values.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        const int cc = c + k;
        if (cc >= 0 && cc < w) {
          acc += taps[static_cast<std::size_t>(k + half)] * values[static_cast<std::size_t>(r) * w + cc];
        }
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  std::vector<double> out(values.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        const int rr = r + k;
        if (rr >= 0 && rr < h) {
          acc += taps[static_cast<std::size_t>(k + half)] * tmp[static_cast<std::size_t>(rr) * w + c];
        }
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

}  // namespace detail

double mae(const Mask& s, const Mask& g) {
  require_same_size(s, g, "mae");
  const auto sv = s.values();
  const auto gv = g.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    acc += std::abs(sv[i] - gv[i]);
  }
  return acc / static_cast<double>(sv.size());
}

std::optional<double> weighted_fbeta(const Mask& s, const Mask& g) {
  require_same_size(s, g, "weighted_fbeta");
  const auto gt = detail::binarize(g, kGtThreshold);
  const std::size_t n = gt.size();
  const std::size_t fg_count = static_cast<std::size_t>(std::count(gt.begin(), gt.end(), 1));
  if (fg_count == 0) {
    return std::nullopt;
  }
  const auto sv = s.values();

  std::vector<double> error(n);
  for (std::size_t i = 0; i < n; ++i) {
    error[i] = std::abs(sv[i] - static_cast<double>(gt[i]));
  }

  // Background errors borrow the error of their nearest foreground pixel so
  // the smoothing below does not leak background error into object edges.
  const auto nearest = detail::nearest_foreground(gt, s.size());
  std::vector<double> borrowed = error;
  for (std::size_t i = 0; i < n; ++i) {
    if (!gt[i]) {
      borrowed[i] = error[static_cast<std::size_t>(nearest.index[i])];
    }
  }
  const auto smoothed = detail::gaussian_filter_zero_pad(borrowed, s.size(), 7, 5.0);

  const double decay = std::log(0.5) / 5.0;
  double fg_weighted_error = 0.0;
  double bg_weighted_error = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i]) {
      fg_weighted_error += std::min(error[i], smoothed[i]);
    } else {
      const double dist = std::sqrt(static_cast<double>(nearest.distance_sq[i]));
      bg_weighted_error += error[i] * (2.0 - std::exp(decay * dist));
    }
  }

  const double tp = static_cast<double>(fg_count) - fg_weighted_error;
  const double fp = bg_weighted_error;
  const double recall = 1.0 - fg_weighted_error / static_cast<double>(fg_count);
  const double precision = tp / (kEps + tp + fp);
  return 2.0 * recall * precision / (kEps + recall + precision);
}

double relaxed_boundary_fbeta(const Mask& s, const Mask& g, const BoundaryParams& params) {
  require_same_size(s, g, "relaxed_boundary_fbeta");
  if (params.rho < 0) {
    throw ConfigError("relaxed_boundary_fbeta: rho must be >= 0");
  }
  if (!(params.threshold > 0.0 && params.threshold < 1.0)) {
    throw ConfigError("relaxed_boundary_fbeta: threshold must lie in (0,1)");
  }
  const Size size = s.size();
  const auto pred_edge = detail::boundary(detail::binarize(s, params.threshold), size);
  const auto gt_edge = detail::boundary(detail::binarize(g, kGtThreshold), size);
  const auto pred_count = std::count(pred_edge.begin(), pred_edge.end(), 1);
  const auto gt_count = std::count(gt_edge.begin(), gt_edge.end(), 1);
  if (pred_count == 0 && gt_count == 0) {
    return 1.0;
  }
  if (pred_count == 0 || gt_count == 0) {
    return 0.0;
  }
  const std::int64_t rho_sq = static_cast<std::int64_t>(params.rho) * params.rho;
  auto matched = [&](const detail::BinaryMap& from, const detail::BinaryMap& to) {
    const auto nearest = detail::nearest_foreground(to, size);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (from[i] && nearest.distance_sq[i] <= rho_sq) {
        ++hits;
      }
    }
    return static_cast<double>(hits);
  };
  const double precision = matched(pred_edge, gt_edge) / static_cast<double>(pred_count);
  const double recall = matched(gt_edge, pred_edge) / static_cast<double>(gt_count);
  if (precision + recall == 0.0) {
    return 0.0;
  }
  return 2.0 * precision * recall / (precision + recall);
}

double s_measure(const Mask& s, const Mask& g, const StructureParams& params) {
  require_same_size(s, g, "s_measure");
  const auto gt = detail::binarize(g, kGtThreshold);
  const int h = s.height();
  const int w = s.width();
  const double n = static_cast<double>(gt.size());
  const double fg_total = static_cast<double>(std::count(gt.begin(), gt.end(), 1));
  const double fg_ratio = fg_total / n;

  if (fg_total == 0.0) {
    return 1.0 - s.mean();
  }
  if (fg_total == n) {
    return s.mean();
  }

  // Object-aware part.
  std::vector<double> fg_values;
  std::vector<double> bg_values;
  const auto sv = s.values();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) {
      fg_values.push_back(sv[i]);
    } else {
      bg_values.push_back(1.0 - sv[i]);
    }
  }
  const double object = fg_ratio * object_score(fg_values, params.lambda) +
                        (1.0 - fg_ratio) * object_score(bg_values, params.lambda);

  // Region-aware part: quadrants split at the (1-based, rounded) centroid.
  double row_moment = 0.0;
  double col_moment = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (gt[static_cast<std::size_t>(r) * w + c]) {
        row_moment += r + 1;
        col_moment += c + 1;
      }
    }
  }
  const int cx = static_cast<int>(std::round(col_moment / fg_total));
  const int cy = static_cast<int>(std::round(row_moment / fg_total));
  const double area = n;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(w - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (h - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const Region quadrants[4] = {{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}};
  const double weights[4] = {w1, w2, w3, w4};
  double region = 0.0;
  for (int q = 0; q < 4; ++q) {
    if (quadrants[q].area() > 0) {
      region += weights[q] * region_ssim(s, gt, w, quadrants[q]);
    }
  }

  const double score = params.alpha * object + (1.0 - params.alpha) * region;
  return std::max(score, 0.0);
}

double e_measure_at(const Mask& s, const Mask& g, double threshold) {
  require_same_size(s, g, "e_measure_at");
  const auto gt = detail::binarize(g, kGtThreshold);
  const auto sv = s.values();
  double counts[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // [prediction on][truth fg]
  for (std::size_t i = 0; i < gt.size(); ++i) {
    counts[sv[i] >= threshold ? 1 : 0][gt[i]] += 1.0;
  }
  return enhanced_from_counts(counts[1][1], counts[1][0], counts[0][1], counts[0][0]);
}

double e_measure_mean(const Mask& s, const Mask& g) {
  require_same_size(s, g, "e_measure_mean");
  const auto gt = detail::binarize(g, kGtThreshold);
  const auto sv = s.values();

  // Histogram of "highest threshold passed" per truth class; a suffix sum
  // then gives the on-counts for every threshold at once.
  std::vector<double> hist_fg(kEMeasureThresholds, 0.0);
  std::vector<double> hist_bg(kEMeasureThresholds, 0.0);
  double fg_total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    fg_total += gt[i];
    const int k = last_passed_threshold(sv[i]);
    if (k >= 0) {
      (gt[i] ? hist_fg : hist_bg)[static_cast<std::size_t>(k)] += 1.0;
    }
  }
  const double bg_total = static_cast<double>(gt.size()) - fg_total;

  double on_fg = 0.0;
  double on_bg = 0.0;
  double sum = 0.0;
  for (int k = kEMeasureThresholds - 1; k >= 0; --k) {
    on_fg += hist_fg[static_cast<std::size_t>(k)];
    on_bg += hist_bg[static_cast<std::size_t>(k)];
    sum += enhanced_from_counts(on_fg, on_bg, fg_total - on_fg, bg_total - on_bg);
  }
  return sum / kEMeasureThresholds;
}

MetricReport evaluate_pair(const Mask& s, const Mask& g, const EvalParams& params) {
  MetricReport report;
  report.fw_beta = weighted_fbeta(s, g);
  report.fb_beta = relaxed_boundary_fbeta(s, g, params.boundary);
  report.mae = mae(s, g);
  report.s_alpha = s_measure(s, g, params.structure);
  report.e_phi = e_measure_mean(s, g);
  return report;
}

DatasetReport aggregate(std::span<const MetricReport> reports) {
  if (reports.empty()) {
    throw Error("aggregate: no reports");
  }
  DatasetReport out;
  out.count = reports.size();
  double fw = 0.0;
  for (const auto& r : reports) {
    if (r.fw_beta) {
      fw += *r.fw_beta;
      ++out.fw_count;
    }
    out.mean.fb_beta += r.fb_beta;
    out.mean.mae += r.mae;
    out.mean.s_alpha += r.s_alpha;
    out.mean.e_phi += r.e_phi;
  }
  const double n = static_cast<double>(reports.size());
  if (out.fw_count > 0) {
    out.mean.fw_beta = fw / static_cast<double>(out.fw_count);
  }
  out.mean.fb_beta /= n;
  out.mean.mae /= n;
  out.mean.s_alpha /= n;
  out.mean.e_phi /= n;
  return out;
}

GroupedReport evaluate_dataset(std::span<const std::pair<Mask, Mask>> pairs, const Grouping& grouping,
                               const EvalParams& params) {
  if (pairs.empty()) {
    throw Error("evaluate_dataset: empty pair list");
  }
  std::vector<MetricReport> reports;
  reports.reserve(pairs.size());
  for (const auto& [s, g] : pairs) {
    reports.push_back(evaluate_pair(s, g, params));
  }
  GroupedReport out;
  out.overall = aggregate(reports);
  if (grouping.empty()) {
    return out;
  }
  std::vector<MetricReport> group_means;
  for (const auto& [name, indices] : grouping) {
    std::vector<MetricReport> members;
    for (std::size_t i : indices) {
      if (i >= reports.size()) {
        throw Error("evaluate_dataset: group '" + name + "' references pair " + std::to_string(i) + " of " +
                    std::to_string(reports.size()));
      }
      members.push_back(reports[i]);
    }
    if (members.empty()) {
      continue;
    }
    auto group = aggregate(members);
    group_means.push_back(group.mean);
    out.groups.emplace_back(name, group);
  }
  if (!group_means.empty()) {
    out.group_average = aggregate(group_means).mean;
  }
  return out;
}

void write_report_header(std::ostream& out) { out << "dataset,n,fw_beta,fb_beta,mae,s_alpha,e_phi\n"; }

void write_report_row(std::ostream& out, const std::string& dataset, std::size_t n, const MetricReport& report) {
  out << dataset << ',' << n << ',' << (report.fw_beta ? fmt(*report.fw_beta) : std::string("nan")) << ','
      << fmt(report.fb_beta) << ',' << fmt(report.mae) << ',' << fmt(report.s_alpha) << ',' << fmt(report.e_phi)
      << '\n';
}

void write_report_row(std::ostream& out, const std::string& dataset, const DatasetReport& report) {
  write_report_row(out, dataset, report.count, report.mean);
}

}  // namespace basnet::metrics
