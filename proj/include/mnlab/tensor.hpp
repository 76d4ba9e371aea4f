#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mnlab/error.hpp"

namespace mnlab {

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string());
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
  [[nodiscard]] std::size_t ndim() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  [[nodiscard]] std::size_t cols() const {
    return std::accumulate(shape_.begin() + std::min<std::size_t>(shape_.size(), 1),
                           shape_.end(), std::size_t{1}, std::multiplies<>());
  }

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  [[nodiscard]] std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  [[nodiscard]] bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  [[nodiscard]] std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool operator==(const Tensor&) const = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Inputs in [0,1]^d (one row per example) with integer class labels.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] std::size_t dim() const { return inputs.cols(); }

  void validate(int num_classes) const {
    if (inputs.ndim() != 2 || inputs.rows() != labels.size()) {
      throw ShapeMismatch("batch inputs " + inputs.shape_string() + " vs " +
                          std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
      if (y < 0 || y >= num_classes) {
        throw ShapeMismatch("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
      }
    }
    for (double v : inputs.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ShapeMismatch("batch input outside [0,1]");
    }
  }

  /// Rows selected by index, in the given order.
  [[nodiscard]] Batch subset(std::span<const std::size_t> idx) const {
    Batch out{Tensor::matrix(idx.size(), dim()), {}};
    out.labels.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto src = inputs.row(idx[k]);
      std::copy(src.begin(), src.end(), out.inputs.row(k).begin());
      out.labels.push_back(labels[idx[k]]);
    }
    return out;
  }
};

}  // namespace mnlab
