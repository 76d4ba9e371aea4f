#pragma once

/// Seeded synthetic datasets (Gaussian blobs, concentric rings) with a
/// 90/10 train/test split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mnlab/error.hpp"
#include "mnlab/parallel.hpp"
#include "mnlab/tensor.hpp"

namespace mnlab {

struct Dataset {
  Batch train;
  Batch test;
};

/// Isotropic blobs with standard deviation `sigma` around the cube centre.
/// With two classes the means sit at ±separation·sigma along a seeded random
/// unit direction; with more, class k sits at +separation·sigma (k even) or
/// -separation·sigma (k odd) along axis k/2.
struct GaussiansSpec {
  int n_classes = 2;
  std::size_t d = 2;
  double separation = 4.0;  ///< in units of sigma, per mean
  std::size_t n_per_class = 500;
  double sigma = 0.05;
};

/// Class 0 on circles of radius 0.12 and 0.42 (half each), class 1 on the
/// circle of radius 0.27, centred at (0.5, 0.5) with radial noise; lifted to
/// `lift_dim` dimensions by a seeded embedding with unit-norm rows around the
/// cube centre.
struct RingsSpec {
  std::size_t n_per_class = 500;
  std::size_t lift_dim = 20;
  double radial_noise = 0.015;
};

namespace detail {

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = g(rng);
  return v;
}

inline void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
}

/// Moves the last 10% of a seeded permutation into the test split.
inline Dataset split_90_10(const Batch& all, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5b117));
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>((rng() >> 11) * 0x1.0p-53 * i)]);
  }
  const std::size_t n_test = all.size() / 10;
  const std::size_t n_train = all.size() - n_test;
  return {all.subset(std::span(idx).first(n_train)), all.subset(std::span(idx).subspan(n_train))};
}

}  // namespace detail

/// Every sample of a synthetic spec, in generation order (class-major).
inline Batch generate_all(const GaussiansSpec& s, std::uint64_t seed) {
  if (s.n_classes < 2) throw InvalidConfig("data.classes must be >= 2");
  if (s.d < 1) throw InvalidConfig("data.dim must be >= 1");
  if (s.n_per_class < 1) throw InvalidConfig("data.n_per_class must be >= 1");
  if (!(s.sigma > 0.0) || !(s.separation >= 0.0)) throw InvalidConfig("bad Gaussian parameters");
  if (s.n_classes > 2 && static_cast<std::size_t>(s.n_classes) > 2 * s.d) {
    throw InvalidConfig("more than 2*dim Gaussian classes");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x6a55));
  const auto k = static_cast<std::size_t>(s.n_classes);
  std::vector<std::vector<double>> means(k, std::vector<double>(s.d, 0.5));
  const double off = s.separation * s.sigma;
  if (k == 2) {
    auto u = detail::gaussian_vector(rng, s.d);
    detail::normalize(u);
    for (std::size_t j = 0; j < s.d; ++j) {
      means[0][j] += off * u[j];
      means[1][j] -= off * u[j];
    }
  } else {
    for (std::size_t c = 0; c < k; ++c) means[c][c / 2] += (c % 2 == 0 ? off : -off);
  }
  std::normal_distribution<double> noise(0.0, s.sigma);
  Batch out{Tensor::matrix(k * s.n_per_class, s.d), {}};
  std::size_t r = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < s.n_per_class; ++i, ++r) {
      auto row = out.inputs.row(r);
      for (std::size_t j = 0; j < s.d; ++j) row[j] = std::clamp(means[c][j] + noise(rng), 0.0, 1.0);
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

inline Batch generate_all(const RingsSpec& s, std::uint64_t seed) {
  if (s.n_per_class < 1) throw InvalidConfig("data.n_per_class must be >= 1");
  if (s.lift_dim < 2) throw InvalidConfig("data.dim must be >= 2 for rings");
  std::mt19937_64 rng(mix_seed(seed, 0x7195));
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, s.radial_noise);

  // Coordinate j reads the planar offset along a random unit direction, so
  // every lifted coordinate spans the full ring radius.
  std::vector<double> cx(s.lift_dim, 0.0);
  std::vector<double> cy(s.lift_dim, 0.0);
  if (s.lift_dim == 2) {
    cx[0] = 1.0;
    cy[1] = 1.0;
  } else {
    for (std::size_t j = 0; j < s.lift_dim; ++j) {
      const double phi = angle(rng);
      cx[j] = std::cos(phi);
      cy[j] = std::sin(phi);
    }
  }

  Batch out{Tensor::matrix(2 * s.n_per_class, s.lift_dim), {}};
  std::size_t r = 0;
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < s.n_per_class; ++i, ++r) {
      const double base = c == 1 ? 0.27 : (i % 2 == 0 ? 0.12 : 0.42);
      const double rad = base + noise(rng);
      const double a = angle(rng);
      const double u = rad * std::cos(a);
      const double v = rad * std::sin(a);
      auto row = out.inputs.row(r);
      for (std::size_t j = 0; j < s.lift_dim; ++j) {
        row[j] = std::clamp(0.5 + u * cx[j] + v * cy[j], 0.0, 1.0);
      }
      out.labels.push_back(c);
    }
  }
  return out;
}

inline Dataset generate(const GaussiansSpec& s, std::uint64_t seed) {
  return detail::split_90_10(generate_all(s, seed), seed);
}

inline Dataset generate(const RingsSpec& s, std::uint64_t seed) {
  return detail::split_90_10(generate_all(s, seed), seed);
}

/// FNV-1a over labels and the raw bytes of the inputs; used to pin
/// generated datasets.
inline std::uint64_t fingerprint(const Batch& b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int y : b.labels) mix(&y, sizeof y);
  for (double x : b.inputs.data()) mix(&x, sizeof x);
  return h;
}

}  // namespace mnlab
