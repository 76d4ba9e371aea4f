#pragma once

/// Minimum lp-distance from the origin to the complement of
/// U = B1(eps1) ∪ B∞(epsinf) and of its convex hull C, in closed form and by
/// a sampling oracle that shares no code with the closed forms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mnlab/error.hpp"

namespace mnlab::geometry {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct GeometryQuery {
  double eps1 = 0.0;
  double epsinf = 0.0;
  int d = 2;

  /// True iff neither ball contains the other: epsinf < eps1 < d * epsinf.
  [[nodiscard]] bool nontrivial() const {
    return d >= 2 && eps1 > 0.0 && epsinf > 0.0 && epsinf < eps1 &&
           eps1 < static_cast<double>(d) * epsinf;
  }
};

struct OpenInterval {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] bool contains(double x) const { return lo < x && x < hi; }
};

struct HullRadiusParts {
  double ratio = 0.0;  ///< eps1 / epsinf
  double alpha = 0.0;  ///< fractional part of ratio
  double q = 0.0;      ///< Hölder conjugate of p
  double radius = 0.0;
};

enum class RegionKind { Union, ConvexHull };

/// Hölder conjugate: 1/p + 1/q = 1.
inline double dual_exponent(double p) {
  if (p == 1.0) return kInf;
  if (std::isinf(p)) return 1.0;
  return p / (p - 1.0);
}

inline double lp_norm(std::span<const double> x, double p) {
  if (std::isinf(p)) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
  }
  if (p == 1.0) {
    double s = 0.0;
    for (double v : x) s += std::abs(v);
    return s;
  }
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (double v : x) s += std::pow(std::abs(v) / m, p);
  return m * std::pow(s, 1.0 / p);
}

namespace detail {

inline void check_p(double p) {
  if (!(p >= 1.0)) throw DomainError("p must lie in [1, inf], got " + std::to_string(p));
}

inline void check_query(const GeometryQuery& q) {
  if (q.d < 2) throw InvalidDimension("dimension must be >= 2, got " + std::to_string(q.d));
  if (!q.nontrivial()) {
    throw DomainError("query is degenerate: need epsinf < eps1 < d*epsinf (eps1=" +
                      std::to_string(q.eps1) + ", epsinf=" + std::to_string(q.epsinf) +
                      ", d=" + std::to_string(q.d) + ")");
  }
}

}  // namespace detail

inline OpenInterval nontrivial_range(double epsinf, int d) {
  if (d < 2) throw InvalidDimension("dimension must be >= 2, got " + std::to_string(d));
  if (!(epsinf > 0.0)) throw DomainError("epsinf must be positive");
  return {epsinf, static_cast<double>(d) * epsinf};
}

/// min ‖x‖_p over x outside B1(eps1) ∪ B∞(epsinf).
inline double min_lp_outside_union(const GeometryQuery& q, double p) {
  detail::check_query(q);
  detail::check_p(p);
  if (p == 1.0) return q.eps1;
  if (std::isinf(p)) return q.epsinf;
  // (a^p + (d-1) b^p)^(1/p) with b = (eps1 - epsinf) / (d - 1), scaled by
  // max(a, b) so large p neither overflows nor underflows.
  const double a = q.epsinf;
  const double b = (q.eps1 - q.epsinf) / static_cast<double>(q.d - 1);
  const double m = std::max(a, b);
  const double s = std::pow(a / m, p) + static_cast<double>(q.d - 1) * std::pow(b / m, p);
  return m * std::pow(s, 1.0 / p);
}

inline double l2_union_upper_bound(const GeometryQuery& q) {
  detail::check_query(q);
  return std::sqrt(q.epsinf * q.epsinf + q.eps1 * q.eps1 / static_cast<double>(q.d - 1));
}

/// min ‖x‖_p over x outside conv(B1(eps1) ∪ B∞(epsinf)).
inline HullRadiusParts min_lp_outside_hull(const GeometryQuery& q, double p) {
  detail::check_query(q);
  detail::check_p(p);
  HullRadiusParts out;
  out.ratio = q.eps1 / q.epsinf;
  out.alpha = out.ratio - std::floor(out.ratio);
  out.q = dual_exponent(p);
  if (p == 1.0) {
    out.radius = q.eps1;
  } else if (std::isinf(p)) {
    out.radius = q.epsinf;
  } else {
    const double base = out.ratio - out.alpha + std::pow(out.alpha, out.q);
    out.radius = q.eps1 / std::pow(base, 1.0 / out.q);
  }
  return out;
}

/// Membership in C = conv(B1(eps1) ∪ B∞(epsinf)).
///
/// y ∈ C iff y = u + v with ‖u‖1 ≤ λ eps1 and ‖v‖∞ ≤ (1-λ) epsinf for some
/// λ ∈ [0,1]. For fixed λ the cheapest u is the soft-threshold residual of y
/// at level (1-λ) epsinf, so the test is min_λ g(λ) ≤ 0 with
///   g(λ) = Σ max(|y_i| - (1-λ) epsinf, 0) - λ eps1.
/// g is convex and piecewise linear with kinks at λ_i = 1 - |y_i|/epsinf,
/// so a uniform λ-grid plus the kinks and endpoints finds its minimum exactly.
inline bool hull_membership(std::span<const double> point, const GeometryQuery& q,
                            int grid = 1024) {
  if (static_cast<int>(point.size()) != q.d) {
    throw ShapeMismatch("hull_membership: point has dimension " +
                        std::to_string(point.size()) + ", query expects " +
                        std::to_string(q.d));
  }
  const auto g = [&](double lambda) {
    const double level = (1.0 - lambda) * q.epsinf;
    double s = 0.0;
    for (double v : point) s += std::max(std::abs(v) - level, 0.0);
    return s - lambda * q.eps1;
  };
  const double slack = 1e-12 * std::max(q.eps1, q.epsinf);
  double best = std::min(g(0.0), g(1.0));
  for (double v : point) {
    const double kink = 1.0 - std::abs(v) / q.epsinf;
    if (kink > 0.0 && kink < 1.0) best = std::min(best, g(kink));
  }
  for (int k = 1; k < grid && best > slack; ++k) {
    best = std::min(best, g(static_cast<double>(k) / grid));
  }
  return best <= slack;
}

namespace detail {

// Scale t at which the ray t*u leaves the region (u need not be normalized).
inline double exit_scale(std::span<const double> u, const GeometryQuery& q,
                         RegionKind region, std::vector<double>& scratch) {
  double n1 = 0.0;
  double ninf = 0.0;
  for (double v : u) {
    n1 += std::abs(v);
    ninf = std::max(ninf, std::abs(v));
  }
  const double t_union = std::max(q.eps1 / n1, q.epsinf / ninf);
  if (region == RegionKind::Union) return t_union;
  // C lies inside B∞(max(eps1, epsinf)) and contains U.
  double lo = t_union;
  double hi = std::max(q.eps1, q.epsinf) / ninf;
  scratch.resize(u.size());
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    for (std::size_t i = 0; i < u.size(); ++i) scratch[i] = mid * u[i];
    if (hull_membership(scratch, q, 0)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double boundary_norm(std::span<const double> u, const GeometryQuery& q, double p,
                            RegionKind region, std::vector<double>& scratch) {
  return exit_scale(u, q, region, scratch) * lp_norm(u, p);
}

}  // namespace detail

/// Sampling oracle for the closed forms: min over sampled directions u of the
/// lp-norm of the point where the ray along u leaves the region, followed by a
/// derivative-free local search (golden-section line searches along each
/// coordinate and along seeded random directions) from the best samples.
///
/// Both regions are invariant under coordinate sign flips, so directions are
/// drawn in the nonnegative orthant.
inline double oracle_min_norm(const GeometryQuery& q, double p, RegionKind region,
                              int n_dirs = 10000, int refine_steps = 100,
                              std::uint64_t seed = 0x5eed) {
  detail::check_query(q);
  detail::check_p(p);
  if (q.d > 6) throw DomainError("oracle_min_norm is limited to d <= 6");
  if (n_dirs < 1) throw DomainError("oracle_min_norm needs at least one direction");

  const auto d = static_cast<std::size_t>(q.d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> dirs(static_cast<std::size_t>(n_dirs) * d);
  for (double& v : dirs) v = std::abs(normal(rng));

  std::vector<double> scratch;
  std::vector<std::pair<double, std::size_t>> scored(static_cast<std::size_t>(n_dirs));
  for (std::size_t k = 0; k < scored.size(); ++k) {
    std::span<const double> u(dirs.data() + k * d, d);
    scored[k] = {detail::boundary_norm(u, q, p, region, scratch), k};
  }
  constexpr std::size_t kStarts = 4;
  const std::size_t n_starts = std::min(kStarts, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n_starts),
                    scored.end());

  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  double best = scored.front().first;
  std::vector<double> u(d);
  std::vector<double> trial(d);
  std::vector<double> line(d);

  for (std::size_t s = 0; s < n_starts; ++s) {
    const std::size_t k = scored[s].second;
    std::copy_n(dirs.begin() + static_cast<std::ptrdiff_t>(k * d), d, u.begin());
    double norm2 = 0.0;
    for (double v : u) norm2 += v * v;
    for (double& v : u) v /= std::sqrt(norm2);
    double f_u = scored[s].first;
    double h = 0.25;

    // Minimize f(u + t*line) over t in [-h, h] and move if it improves.
    auto line_search = [&] {
      auto f_at = [&](double t) {
        for (std::size_t i = 0; i < d; ++i) trial[i] = std::abs(u[i] + t * line[i]);
        double mx = 0.0;
        for (double v : trial) mx = std::max(mx, v);
        if (mx == 0.0) return kInf;
        return detail::boundary_norm(trial, q, p, region, scratch);
      };
      double a = -h;
      double b = h;
      double c = b - golden * (b - a);
      double e = a + golden * (b - a);
      double fc = f_at(c);
      double fe = f_at(e);
      for (int it = 0; it < 40; ++it) {
        if (fc < fe) {
          b = e;
          e = c;
          fe = fc;
          c = b - golden * (b - a);
          fc = f_at(c);
        } else {
          a = c;
          c = e;
          fc = fe;
          e = a + golden * (b - a);
          fe = f_at(e);
        }
      }
      const double t = fc < fe ? c : e;
      const double ft = std::min(fc, fe);
      if (ft < f_u) {
        for (std::size_t i = 0; i < d; ++i) u[i] = std::abs(u[i] + t * line[i]);
        double n2 = 0.0;
        for (double v : u) n2 += v * v;
        for (double& v : u) v /= std::sqrt(n2);
        f_u = ft;
      }
    };

    for (int step = 0; step < refine_steps; ++step) {
      for (std::size_t i = 0; i < d; ++i) {
        std::fill(line.begin(), line.end(), 0.0);
        line[i] = 1.0;
        line_search();
      }
      for (int r = 0; r < static_cast<int>(d); ++r) {
        for (double& v : line) v = normal(rng);
        line_search();
      }
      h = std::max(h * 0.85, 1e-9);
    }
    best = std::min(best, f_u);
  }
  return best;
}

}  // namespace mnlab::geometry
