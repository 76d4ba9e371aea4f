#pragma once

/// MNIST-style IDX image/label files (big-endian headers, unsigned bytes).

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mnlab/error.hpp"
#include "mnlab/parallel.hpp"
#include "mnlab/tensor.hpp"

namespace mnlab {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size()) throw Truncated("'" + path + "' ends inside its header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

/// Loads an image/label pair; pixels are scaled by 1/255. With `subset`,
/// keeps the first N examples of a seeded shuffle.
inline Batch load_idx(const std::string& images_path, const std::string& labels_path,
                      std::optional<std::size_t> subset = std::nullopt, std::uint64_t seed = 0) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  const std::uint32_t im = detail::be32(img, 0, images_path);
  if (im != kIdxImageMagic) {
    throw BadMagic("'" + images_path + "': image magic " + detail::hex32(im) + ", expected " +
                   detail::hex32(kIdxImageMagic));
  }
  const std::uint32_t lm = detail::be32(lab, 0, labels_path);
  if (lm != kIdxLabelMagic) {
    throw BadMagic("'" + labels_path + "': label magic " + detail::hex32(lm) + ", expected " +
                   detail::hex32(kIdxLabelMagic));
  }
  const std::size_t n = detail::be32(img, 4, images_path);
  const std::size_t rows = detail::be32(img, 8, images_path);
  const std::size_t cols = detail::be32(img, 12, images_path);
  const std::size_t n_labels = detail::be32(lab, 4, labels_path);
  const std::size_t d = rows * cols;
  if (d == 0) throw InvalidDimension("'" + images_path + "' has zero-sized images");
  if (img.size() < 16 + n * d) {
    throw Truncated("'" + images_path + "' holds " + std::to_string(img.size() - 16) +
                    " pixel bytes, header promises " + std::to_string(n * d));
  }
  if (lab.size() < 8 + n_labels) {
    throw Truncated("'" + labels_path + "' holds " + std::to_string(lab.size() - 8) +
                    " labels, header promises " + std::to_string(n_labels));
  }
  if (n_labels != n) {
    throw CountMismatch(std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (subset) {
    if (*subset > n) {
      throw InvalidConfig("subset of " + std::to_string(*subset) + " from " + std::to_string(n) +
                          " examples");
    }
    std::mt19937_64 rng(mix_seed(seed, 0x1d8));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>((rng() >> 11) * 0x1.0p-53 * i)]);
    }
    order.resize(*subset);
  }

  Batch out{Tensor::matrix(order.size(), d), {}};
  out.labels.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t src = order[r];
    auto row = out.inputs.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = img[16 + src * d + j] / 255.0;
    out.labels.push_back(static_cast<int>(lab[8 + src]));
  }
  return out;
}

}  // namespace mnlab
