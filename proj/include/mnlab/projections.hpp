#pragma once

/// Euclidean projections onto lp-balls (optionally intersected with the
/// [0,1] box around a clean input) and per-norm steepest-ascent directions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mnlab/error.hpp"

namespace mnlab {

/// Threat-model norm. The declaration order is the tie-break order used by
/// the multi-norm schemes.
enum class Norm { Linf = 0, L2 = 1, L1 = 2 };

inline constexpr Norm kAllNorms[] = {Norm::Linf, Norm::L2, Norm::L1};

inline std::string to_string(Norm p) {
  switch (p) {
    case Norm::Linf: return "linf";
    case Norm::L2: return "l2";
    case Norm::L1: return "l1";
  }
  return "?";
}

inline Norm parse_norm(const std::string& s) {
  if (s == "linf" || s == "inf" || s == "Linf") return Norm::Linf;
  if (s == "l2" || s == "2" || s == "L2") return Norm::L2;
  if (s == "l1" || s == "1" || s == "L1") return Norm::L1;
  throw InvalidConfig("unknown norm '" + s + "' (expected linf, l2 or l1)");
}

inline double norm_of(std::span<const double> v, Norm p) {
  double s = 0.0;
  switch (p) {
    case Norm::Linf:
      for (double x : v) s = std::max(s, std::abs(x));
      return s;
    case Norm::L2:
      for (double x : v) s += x * x;
      return std::sqrt(s);
    case Norm::L1:
      for (double x : v) s += std::abs(x);
      return s;
  }
  return s;
}

/// Dual norm of a weight vector (for linear-model margins).
inline double dual_norm_of(std::span<const double> w, Norm p) {
  switch (p) {
    case Norm::Linf: return norm_of(w, Norm::L1);
    case Norm::L2: return norm_of(w, Norm::L2);
    case Norm::L1: return norm_of(w, Norm::Linf);
  }
  return 0.0;
}

inline void project_linf_inplace(std::span<double> delta, double eps) {
  for (double& v : delta) v = std::clamp(v, -eps, eps);
}

inline void project_l2_inplace(std::span<double> delta, double eps) {
  const double n = norm_of(delta, Norm::L2);
  if (n <= eps) return;
  // Shrink the factor until rounding leaves the result inside the ball, so
  // that projecting twice changes nothing.
  const std::vector<double> orig(delta.begin(), delta.end());
  for (double s = eps / n;; s = std::nextafter(s, 0.0)) {
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = orig[i] * s;
    if (norm_of(delta, Norm::L2) <= eps) return;
  }
}

/// Sort-based soft-threshold projection onto B1(eps).
inline void project_l1_inplace(std::span<double> delta, double eps) {
  if (norm_of(delta, Norm::L1) <= eps) return;
  std::vector<double> mags(delta.size());
  std::transform(delta.begin(), delta.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < mags.size(); ++j) {
    cumsum += mags[j];
    const double t = (cumsum - eps) / static_cast<double>(j + 1);
    if (mags[j] - t > 0.0) tau = t;
  }
  for (double& v : delta) {
    const double m = std::max(std::abs(v) - tau, 0.0);
    v = std::copysign(m, v);
  }
}

inline std::vector<double> project_linf(std::span<const double> delta, double eps) {
  std::vector<double> out(delta.begin(), delta.end());
  project_linf_inplace(out, eps);
  return out;
}

inline std::vector<double> project_l2(std::span<const double> delta, double eps) {
  std::vector<double> out(delta.begin(), delta.end());
  project_l2_inplace(out, eps);
  return out;
}

inline std::vector<double> project_l1(std::span<const double> delta, double eps) {
  std::vector<double> out(delta.begin(), delta.end());
  project_l1_inplace(out, eps);
  return out;
}

/// Euclidean projection onto {d : ‖d‖1 ≤ eps, x_clean + d ∈ [0,1]^n}.
///
/// For a threshold τ the minimizer is the soft-threshold of delta clipped to
/// [-x_i, 1 - x_i]. Coordinate i contributes clamp(|delta_i| - τ, 0, cap_i)
/// to the l1 mass, which is piecewise linear in τ with kinks at
/// |delta_i| - cap_i and |delta_i|; τ is found exactly by walking the sorted
/// kinks.
inline void project_l1_box_inplace(std::span<const double> x_clean, std::span<double> delta,
                                   double eps) {
  if (x_clean.size() != delta.size()) {
    throw ShapeMismatch("project_l1_box: clean input and perturbation differ in size");
  }
  const std::size_t n = delta.size();
  auto cap = [&](std::size_t i) { return delta[i] >= 0.0 ? 1.0 - x_clean[i] : x_clean[i]; };
  auto apply = [&](double tau) {
    for (std::size_t i = 0; i < n; ++i) {
      const double m = std::max(std::abs(delta[i]) - tau, 0.0);
      delta[i] = std::clamp(std::copysign(m, delta[i]), -x_clean[i], 1.0 - x_clean[i]);
    }
  };

  // Mass and slope just above τ = 0; kinks at positive τ change the slope.
  thread_local std::vector<std::pair<double, int>> kinks;
  kinks.clear();
  double mass = 0.0;
  int active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::abs(delta[i]);
    const double c = std::max(cap(i), 0.0);
    mass += std::min(a, c);
    if (a <= 0.0) continue;
    if (a - c > 0.0) {
      kinks.emplace_back(a - c, +1);
    } else {
      ++active;
    }
    kinks.emplace_back(a, -1);
  }
  if (mass <= eps) {
    apply(0.0);
    return;
  }
  std::sort(kinks.begin(), kinks.end());
  double tau = 0.0;
  for (const auto& [at, change] : kinks) {
    const double next = mass - static_cast<double>(active) * (at - tau);
    if (active > 0 && next <= eps) break;
    mass = next;
    tau = at;
    active += change;
  }
  if (active > 0) tau += (mass - eps) / static_cast<double>(active);
  apply(tau);
  // Rounding can leave the mass a few ulps above eps.
  const double over = norm_of(delta, Norm::L1) - eps;
  if (over > 0.0) {
    for (double& v : delta) {
      if (v != 0.0) v = std::copysign(std::max(std::abs(v) - over, 0.0), v);
    }
  }
}

inline std::vector<double> project_l1_box(std::span<const double> x_clean,
                                          std::span<const double> delta, double eps) {
  std::vector<double> out(delta.begin(), delta.end());
  project_l1_box_inplace(x_clean, out, eps);
  return out;
}

/// Projection onto B_p(eps) ∩ ([0,1]^n - x_clean). Exact for l∞ and for l1;
/// for l2 the ball projection is followed by box clipping, which keeps the
/// point inside the ball.
inline void project_ball_box_inplace(Norm p, std::span<const double> x_clean,
                                     std::span<double> delta, double eps) {
  switch (p) {
    case Norm::Linf:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = std::clamp(std::clamp(delta[i], -eps, eps), -x_clean[i], 1.0 - x_clean[i]);
      }
      return;
    case Norm::L2:
      project_l2_inplace(delta, eps);
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = std::clamp(delta[i], -x_clean[i], 1.0 - x_clean[i]);
      }
      return;
    case Norm::L1:
      project_l1_box_inplace(x_clean, delta, eps);
      return;
  }
}

/// Number of coordinates moved by a sparse l1 step.
inline std::size_t sparse_step_count(double k_fraction, std::size_t d) {
  const double raw = std::ceil(k_fraction * static_cast<double>(d) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(d, 1));
}

/// Steepest-ascent direction with unit budget in the given norm:
/// l∞ sign(g); l2 g/‖g‖2; l1 sign(g) on the top-k coordinates by |g|, each
/// 1/k. A zero gradient yields the zero vector.
inline void ascent_step_into(Norm p, std::span<const double> grad, double k_fraction,
                             std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  switch (p) {
    case Norm::Linf:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        out[i] = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      }
      return;
    case Norm::L2: {
      const double n = norm_of(grad, Norm::L2);
      if (n == 0.0) return;
      for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] / n;
      return;
    }
    case Norm::L1: {
      if (norm_of(grad, Norm::Linf) == 0.0) return;
      const std::size_t k = sparse_step_count(k_fraction, grad.size());
      thread_local std::vector<std::size_t> idx;
      idx.resize(grad.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          const double ga = std::abs(grad[a]);
                          const double gb = std::abs(grad[b]);
                          return ga > gb || (ga == gb && a < b);
                        });
      const double w = 1.0 / static_cast<double>(k);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = idx[j];
        out[i] = grad[i] > 0.0 ? w : (grad[i] < 0.0 ? -w : 0.0);
      }
      return;
    }
  }
}

inline std::vector<double> ascent_step(Norm p, std::span<const double> grad,
                                       double k_fraction = 0.05) {
  std::vector<double> out(grad.size());
  ascent_step_into(p, grad, k_fraction, out);
  return out;
}

}  // namespace mnlab
