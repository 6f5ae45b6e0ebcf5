#pragma once

// Brute-force reference implementations written straight from the metric and
// loss definitions. Deliberately naive (quadratic searches, direct 2-D
// windows, per-threshold loops) and independent of the library code paths.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "basnet/core.hpp"

namespace oracle {

using basnet::Mask;

inline constexpr double kEps = DBL_EPSILON;

inline bool gt_on(const Mask& g, int r, int c) { return g(r, c) >= 0.5; }

inline double mae(const Mask& s, const Mask& g) {
  double acc = 0.0;
  for (int r = 0; r < s.height(); ++r)
    for (int c = 0; c < s.width(); ++c) acc += std::fabs(s(r, c) - g(r, c));
  return acc / (s.height() * s.width());
}

// ---- weighted F-measure ---------------------------------------------------------

struct Nearest {
  long d2 = -1;
  int row = 0;
  int col = 0;
};

/// Nearest foreground pixel by exhaustive search; ties go to the smaller
/// (row, col).
inline Nearest nearest_fg(const std::vector<std::vector<bool>>& fg, int r, int c) {
  Nearest best;
  for (int rr = 0; rr < static_cast<int>(fg.size()); ++rr) {
    for (int cc = 0; cc < static_cast<int>(fg[0].size()); ++cc) {
      if (!fg[rr][cc]) continue;
      const long d2 = static_cast<long>(rr - r) * (rr - r) + static_cast<long>(cc - c) * (cc - c);
      if (best.d2 < 0 || d2 < best.d2) best = {d2, rr, cc};
      // Row-major iteration already visits ties in (row, col) order.
    }
  }
  return best;
}

inline double weighted_fbeta(const Mask& s, const Mask& g) {
  const int h = s.height();
  const int w = s.width();
  std::vector<std::vector<bool>> fg(h, std::vector<bool>(w));
  int fg_count = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) fg_count += (fg[r][c] = gt_on(g, r, c));

  std::vector<std::vector<double>> e(h, std::vector<double>(w)), et(h, std::vector<double>(w));
  std::vector<std::vector<double>> dist(h, std::vector<double>(w, 0.0));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) e[r][c] = std::fabs(s(r, c) - (fg[r][c] ? 1.0 : 0.0));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (fg[r][c]) {
        et[r][c] = e[r][c];
      } else {
        const auto n = nearest_fg(fg, r, c);
        et[r][c] = e[n.row][n.col];
        dist[r][c] = std::sqrt(static_cast<double>(n.d2));
      }
    }
  }

  // 7x7 Gaussian, sigma 5, normalized over the full 2-D support; zero outside.
  double k[7][7];
  double ksum = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) ksum += (k[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / (2.0 * 25.0)));
  for (auto& row : k)
    for (double& v : row) v /= ksum;

  double fg_err = 0.0;
  double bg_err = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (fg[r][c]) {
        double blur = 0.0;
        for (int i = 0; i < 7; ++i)
          for (int j = 0; j < 7; ++j) {
            const int rr = r + i - 3;
            const int cc = c + j - 3;
            if (rr >= 0 && rr < h && cc >= 0 && cc < w) blur += k[i][j] * et[rr][cc];
          }
        fg_err += std::min(e[r][c], blur);
      } else {
        const double b = 2.0 - std::exp(std::log(0.5) / 5.0 * dist[r][c]);
        bg_err += e[r][c] * b;
      }
    }
  }
  const double tp = fg_count - fg_err;
  const double fp = bg_err;
  const double recall = 1.0 - fg_err / fg_count;
  const double precision = tp / (kEps + tp + fp);
  return 2.0 * recall * precision / (kEps + recall + precision);
}

// ---- relaxed boundary F-measure ---------------------------------------------------

inline std::vector<std::pair<int, int>> boundary_pixels(const Mask& m, double threshold) {
  const int h = m.height();
  const int w = m.width();
  auto on = [&](int r, int c) { return m(r, c) >= threshold; };
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!on(r, c)) continue;
      const int dr[] = {-1, 1, 0, 0};
      const int dc[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k];
        const int cc = c + dc[k];
        if (rr >= 0 && rr < h && cc >= 0 && cc < w && !on(rr, cc)) {
          out.emplace_back(r, c);
          break;
        }
      }
    }
  }
  return out;
}

inline double relaxed_boundary_fbeta(const Mask& s, const Mask& g, int rho = 3, double threshold = 0.5) {
  const auto bs = boundary_pixels(s, threshold);
  const auto bg = boundary_pixels(g, 0.5);
  if (bs.empty() && bg.empty()) return 1.0;
  if (bs.empty() || bg.empty()) return 0.0;
  auto hits = [rho](const auto& from, const auto& to) {
    int n = 0;
    for (auto [r, c] : from) {
      for (auto [rr, cc] : to) {
        if ((r - rr) * (r - rr) + (c - cc) * (c - cc) <= rho * rho) {
          ++n;
          break;
        }
      }
    }
    return static_cast<double>(n);
  };
  const double p = hits(bs, bg) / bs.size();
  const double rec = hits(bg, bs) / bg.size();
  return p + rec == 0.0 ? 0.0 : 2.0 * p * rec / (p + rec);
}

// ---- structure measure -----------------------------------------------------------

inline double s_measure(const Mask& s, const Mask& g, double alpha = 0.5, double lambda = 1.0) {
  const int h = s.height();
  const int w = s.width();
  const double n = h * w;
  double fg = 0.0;
  double smean = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      fg += gt_on(g, r, c);
      smean += s(r, c);
    }
  smean /= n;
  if (fg == 0.0) return 1.0 - smean;
  if (fg == n) return smean;

  auto score = [lambda](const std::vector<double>& x) {
    const double m = [&] {
      double a = 0.0;
      for (double v : x) a += v;
      return a / x.size();
    }();
    double var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    const double sd = x.size() > 1 ? std::sqrt(var / (x.size() - 1)) : 0.0;
    return 2.0 * m / (m * m + 1.0 + 2.0 * lambda * sd + kEps);
  };
  std::vector<double> in_fg, in_bg;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) (gt_on(g, r, c) ? in_fg : in_bg).push_back(gt_on(g, r, c) ? s(r, c) : 1.0 - s(r, c));
  const double u = fg / n;
  const double object = u * score(in_fg) + (1.0 - u) * score(in_bg);

  double sr = 0.0;
  double sc = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (gt_on(g, r, c)) {
        sr += r + 1;
        sc += c + 1;
      }
  const int cy = static_cast<int>(std::round(sr / fg));
  const int cx = static_cast<int>(std::round(sc / fg));

  auto quadrant_ssim = [&](int r0, int r1, int c0, int c1) {
    const double m = static_cast<double>(r1 - r0) * (c1 - c0);
    double x = 0.0, y = 0.0;
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        x += s(r, c);
        y += gt_on(g, r, c);
      }
    x /= m;
    y /= m;
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        const double a = s(r, c) - x;
        const double b = gt_on(g, r, c) - y;
        vx += a * a;
        vy += b * b;
        cxy += a * b;
      }
    vx /= (m - 1 + kEps);
    vy /= (m - 1 + kEps);
    cxy /= (m - 1 + kEps);
    const double num = 4.0 * x * y * cxy;
    const double den = (x * x + y * y) * (vx + vy);
    if (num != 0.0) return num / (den + kEps);
    return den == 0.0 ? 1.0 : 0.0;
  };
  double region = 0.0;
  const int rows[3] = {0, cy, h};
  const int cols[3] = {0, cx, w};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double area = static_cast<double>(rows[i + 1] - rows[i]) * (cols[j + 1] - cols[j]);
      if (area > 0) region += area / n * quadrant_ssim(rows[i], rows[i + 1], cols[j], cols[j + 1]);
    }
  return std::max(0.0, alpha * object + (1.0 - alpha) * region);
}

// ---- enhanced-alignment measure ------------------------------------------------------

inline double e_measure_at(const Mask& s, const Mask& g, double t) {
  const int h = s.height();
  const int w = s.width();
  const double n = h * w;
  double fg = 0.0;
  double on = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      fg += gt_on(g, r, c);
      on += s(r, c) >= t;
    }
  if (fg == 0.0) return (n - on) / n;
  if (fg == n) return on / n;
  const double ms = on / n;
  const double mg = fg / n;
  double acc = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double a = (s(r, c) >= t ? 1.0 : 0.0) - ms;
      const double b = (gt_on(g, r, c) ? 1.0 : 0.0) - mg;
      const double xi = 2.0 * a * b / (a * a + b * b + kEps);
      acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  return acc / n;
}

inline double e_measure_mean(const Mask& s, const Mask& g) {
  double acc = 0.0;
  for (int k = 0; k < 256; ++k) acc += e_measure_at(s, g, k / 255.0);
  return acc / 256.0;
}

// ---- losses ----------------------------------------------------------------------------

inline double bce(const Mask& s, const Mask& g) {
  double acc = 0.0;
  for (int r = 0; r < s.height(); ++r)
    for (int c = 0; c < s.width(); ++c) {
      const double p = std::clamp(s(r, c), 1e-7, 1.0 - 1e-7);
      acc -= g(r, c) * std::log(p) + (1.0 - g(r, c)) * std::log(1.0 - p);
    }
  return acc / (s.height() * s.width());
}

/// 1 - mean SSIM over every valid window position, Gaussian-weighted
/// moments computed directly per window.
inline double ssim_loss(const Mask& x, const Mask& y, int n = 11, double sigma = 1.5, double c1 = 1e-4,
                        double c2 = 9e-4) {
  std::vector<double> wgt(static_cast<std::size_t>(n) * n);
  double total = 0.0;
  const int half = n / 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      total += (wgt[i * n + j] = std::exp(-((i - half) * (i - half) + (j - half) * (j - half)) / (2 * sigma * sigma)));
  for (double& v : wgt) v /= total;

  double acc = 0.0;
  int count = 0;
  for (int r = 0; r + n <= x.height(); ++r) {
    for (int c = 0; c + n <= x.width(); ++c) {
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          mx += wgt[i * n + j] * x(r + i, c + j);
          my += wgt[i * n + j] * y(r + i, c + j);
        }
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double a = x(r + i, c + j) - mx;
          const double b = y(r + i, c + j) - my;
          vx += wgt[i * n + j] * a * a;
          vy += wgt[i * n + j] * b * b;
          cxy += wgt[i * n + j] * a * b;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return 1.0 - acc / count;
}

inline double iou(const Mask& s, const Mask& g) {
  double inter = 0.0, uni = 0.0;
  for (int r = 0; r < s.height(); ++r)
    for (int c = 0; c < s.width(); ++c) {
      inter += s(r, c) * g(r, c);
      uni += s(r, c) + g(r, c) - s(r, c) * g(r, c);
    }
  return uni == 0.0 ? 0.0 : 1.0 - inter / uni;
}

// ---- test data ------------------------------------------------------------------------

/// Deterministic LCG so suites do not depend on library RNG details.
class Lcg {
 public:
  explicit Lcg(std::uint64_t seed) : state_(seed * 6364136223846793005ULL + 1442695040888963407ULL) {}
  double uniform() {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state_ >> 11) * (1.0 / 9007199254740992.0);
  }

 private:
  std::uint64_t state_;
};

/// The 510 binary 3x3 ground truths that contain both classes.
inline std::vector<Mask> all_binary_3x3() {
  std::vector<Mask> out;
  for (int bits = 1; bits < 511; ++bits) {
    std::vector<double> v(9);
    for (int i = 0; i < 9; ++i) v[i] = (bits >> i) & 1;
    out.emplace_back(3, 3, v);
  }
  return out;
}

/// 20 predictions mixing smooth random values, exact threshold values and
/// binary maps, so threshold ties are exercised.
inline std::vector<Mask> prediction_suite_3x3(std::uint64_t seed = 20) {
  Lcg rng(seed);
  std::vector<Mask> out;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> v(9);
    for (double& x : v) {
      const double u = rng.uniform();
      switch (k % 4) {
        case 0:
          x = u;
          break;
        case 1:
          x = std::round(u * 255.0) / 255.0;  // lands exactly on thresholds
          break;
        case 2:
          x = u < 0.5 ? 0.0 : 1.0;
          break;
        default:
          x = u < 0.3 ? 0.5 : u;  // the binarization level itself
          break;
      }
    }
    out.emplace_back(3, 3, v);
  }
  return out;
}

}  // namespace oracle
