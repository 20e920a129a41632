#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ssl2/core/errors.hpp"

namespace ssl2 {

using index_t = std::int64_t;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatMap = Eigen::Map<MatrixX<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const MatrixX<Scalar>>;
template <typename Scalar>
using VecMap = Eigen::Map<VectorX<Scalar>>;
template <typename Scalar>
using ConstVecMap = Eigen::Map<const VectorX<Scalar>>;

// Dense row-major N-d array. Thin owner over contiguous storage; all math is
// done through Eigen maps of the flattened data.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<index_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), Scalar(0));
  }
  Tensor(std::vector<index_t> shape, Scalar fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), fill);
  }

  static index_t count(const std::vector<index_t>& shape) {
    index_t n = 1;
    for (index_t d : shape) n *= d;
    return n;
  }

  const std::vector<index_t>& shape() const { return shape_; }
  index_t dim(std::size_t i) const { return shape_.at(i); }
  index_t rank() const { return static_cast<index_t>(shape_.size()); }
  index_t size() const { return static_cast<index_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](index_t i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](index_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::vector<index_t> shape) {
    if (count(shape) != size()) throw ShapeMismatch("tensor reshape changes element count");
    shape_ = std::move(shape);
  }

  MatMap<Scalar> mat(index_t rows, index_t cols) {
    if (rows * cols != size()) throw ShapeMismatch("tensor mat view size mismatch");
    return MatMap<Scalar>(data(), rows, cols);
  }
  ConstMatMap<Scalar> mat(index_t rows, index_t cols) const {
    if (rows * cols != size()) throw ShapeMismatch("tensor mat view size mismatch");
    return ConstMatMap<Scalar>(data(), rows, cols);
  }
  VecMap<Scalar> vec() { return VecMap<Scalar>(data(), size()); }
  ConstVecMap<Scalar> vec() const { return ConstVecMap<Scalar>(data(), size()); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<index_t> shape_;
  std::vector<Scalar> data_;
};

// FNV-1a over the raw byte representation; used for weight checksums.
inline std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
std::uint64_t hash_values(const Scalar* p, index_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return hash_bytes(p, static_cast<std::size_t>(n) * sizeof(Scalar), h);
}

}  // namespace ssl2
