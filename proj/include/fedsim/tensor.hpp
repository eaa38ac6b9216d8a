#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/error.hpp"

namespace fedsim {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, "Matrix: data size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    detail::require(values.size() == cols_, "Matrix::append_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  // Rows picked by index, in the given order.
  Matrix gather(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = row(idx[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Inputs with their multi-label binary targets.
struct LabeledBatch {
  Matrix inputs;   // [batch x input_dim]
  Matrix targets;  // [batch x num_classes], entries in {0, 1}

  std::size_t size() const noexcept { return inputs.rows(); }

  void validate() const {
    detail::require(inputs.rows() == targets.rows(), "LabeledBatch: row counts differ");
    for (double t : targets.data())
      detail::require(t == 0.0 || t == 1.0, "LabeledBatch: targets must be 0 or 1");
  }

  LabeledBatch gather(std::span<const std::size_t> idx) const {
    return {inputs.gather(idx), targets.gather(idx)};
  }

  friend bool operator==(const LabeledBatch&, const LabeledBatch&) = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  friend bool operator==(const TensorInfo&, const TensorInfo&) = default;
};

using Manifest = std::vector<TensorInfo>;

inline std::size_t manifest_size(const Manifest& m) {
  std::size_t n = 0;
  for (const auto& t : m) n += t.numel();
  return n;
}

// Flat model parameters plus the layout of the tensors packed into them.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(Manifest manifest)
      : manifest_(std::move(manifest)), values_(manifest_size(manifest_), 0.0) {}
  ParameterVector(Manifest manifest, std::vector<double> values)
      : manifest_(std::move(manifest)), values_(std::move(values)) {
    detail::require(values_.size() == manifest_size(manifest_),
                    "ParameterVector: value count does not match manifest");
  }

  const Manifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  // Offset of a named tensor inside values().
  std::size_t offset_of(std::string_view name) const {
    std::size_t off = 0;
    for (const auto& t : manifest_) {
      if (t.name == name) return off;
      off += t.numel();
    }
    throw ValidationError("ParameterVector: no tensor named " + std::string(name));
  }

  std::span<double> tensor(std::string_view name) {
    const std::size_t off = offset_of(name);
    return {values_.data() + off, find(name).numel()};
  }
  std::span<const double> tensor(std::string_view name) const {
    const std::size_t off = offset_of(name);
    return {values_.data() + off, find(name).numel()};
  }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_layout(const ParameterVector& other) const noexcept {
    return manifest_ == other.manifest_;
  }

  // Bitwise equality of values and equal manifests.
  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  const TensorInfo& find(std::string_view name) const {
    for (const auto& t : manifest_)
      if (t.name == name) return t;
    throw ValidationError("ParameterVector: no tensor named " + std::string(name));
  }

  Manifest manifest_;
  std::vector<double> values_;
};

inline void require_same_layout(const ParameterVector& a, const ParameterVector& b,
                                const char* where) {
  if (!a.same_layout(b)) throw ValidationError(std::string(where) + ": manifest mismatch");
}

}  // namespace fedsim
