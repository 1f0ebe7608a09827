#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mlnlu/errors.hpp"
#include "mlnlu/rng.hpp"

namespace mlnlu {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of arbitrary rank backed by a flat Eigen array.
/// Rank 1 and 2 expose Eigen map views so all heavy math stays in Eigen.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(count(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> vals) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(vals.size()) != t.size())
      throw DimensionError("Tensor::from: " + std::to_string(vals.size()) +
                           " values for shape " + shape_str(t.shape_));
    Index i = 0;
    for (Scalar v : vals) t.data_[i++] = v;
    return t;
  }

  static Tensor from(Shape shape, const std::vector<Scalar>& vals) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(vals.size()) != t.size())
      throw DimensionError("Tensor::from: " + std::to_string(vals.size()) +
                           " values for shape " + shape_str(t.shape_));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = vals[static_cast<std::size_t>(i)];
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * dim(1) + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * dim(1) + j]; }

  Scalar& operator()(Index i, Index j, Index k) {
    return data_[(i * dim(1) + j) * dim(2) + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[(i * dim(1) + j) * dim(2) + k];
  }

  /// Rank-2 Eigen view. Rank-1 tensors map to a 1x n row.
  auto mat() {
    check_rank_le2();
    Index r = rank() == 2 ? dim(0) : 1;
    Index c = rank() == 2 ? dim(1) : (rank() == 1 ? dim(0) : 0);
    return Eigen::Map<MatrixX<Scalar>>(data_.data(), r, c);
  }
  auto mat() const {
    check_rank_le2();
    Index r = rank() == 2 ? dim(0) : 1;
    Index c = rank() == 2 ? dim(1) : (rank() == 1 ? dim(0) : 0);
    return Eigen::Map<const MatrixX<Scalar>>(data_.data(), r, c);
  }

  /// Flat elementwise view regardless of rank.
  auto array() { return Eigen::Map<ArrayX<Scalar>>(data_.data(), data_.size()); }
  auto array() const {
    return Eigen::Map<const ArrayX<Scalar>>(data_.data(), data_.size());
  }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != size())
      throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void set_zero() { data_.setZero(); }

  void fill_uniform(Rng& rng, Scalar lo, Scalar hi) {
    for (Index i = 0; i < size(); ++i)
      data_[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  }

  void fill_normal(Rng& rng, Scalar mean, Scalar stddev) {
    for (Index i = 0; i < size(); ++i)
      data_[i] = static_cast<Scalar>(rng.normal(mean, stddev));
  }

  /// Xavier-uniform over the trailing two dimensions (rank-1 treated as fan_in).
  void fill_xavier(Rng& rng) {
    Index fan_in = rank() >= 2 ? dim(rank() - 1) : dim(0);
    Index fan_out = rank() >= 2 ? dim(rank() - 2) : 1;
    Scalar bound = static_cast<Scalar>(
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    fill_uniform(rng, -bound, bound);
  }

  bool allclose(const Tensor& o, double atol) const {
    if (!same_shape(o)) return false;
    for (Index i = 0; i < size(); ++i)
      if (std::abs(static_cast<double>(data_[i] - o.data_[i])) > atol) return false;
    return true;
  }

  bool bitwise_equal(const Tensor& o) const {
    if (!same_shape(o)) return false;
    return std::memcmp(data_.data(), o.data_.data(),
                       sizeof(Scalar) * static_cast<std::size_t>(size())) == 0;
  }

  std::uint64_t digest() const {
    std::uint64_t h = fnv1a64(data_.data(), sizeof(Scalar) * static_cast<std::size_t>(size()));
    for (Index d : shape_) h = fnv1a64(&d, sizeof(d), h);
    return h;
  }

  static Index count(const Shape& s) {
    Index n = 1;
    for (Index d : s) {
      if (d <= 0) throw DimensionError("nonpositive dimension in " + shape_str(s));
      n *= d;
    }
    return n;
  }

 private:
  void check_rank_le2() const {
    if (rank() > 2)
      throw DimensionError("matrix view of rank-" + std::to_string(rank()) +
                           " tensor " + shape_str(shape_));
  }

  Shape shape_;
  ArrayX<Scalar> data_;
};

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

/// C = A x B with the usual mx k by kx n contract. Rank-1 b is treated as a
/// column, yielding a rank-1 result.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() < 1 || b.rank() > 2)
    throw DimensionError("matmul ranks " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const Index k = a.dim(1);
  const Index bk = b.rank() == 2 ? b.dim(0) : b.dim(0);
  if (k != bk)
    throw DimensionError("matmul inner dimensions disagree: " +
                         shape_str(a.shape()) + " by " + shape_str(b.shape()));
  if (b.rank() == 2) {
    Tensor<Scalar> c({a.dim(0), b.dim(1)});
    c.mat().noalias() = a.mat() * b.mat();
    return c;
  }
  Tensor<Scalar> c({a.dim(0)});
  c.mat().transpose().noalias() = a.mat() * b.mat().transpose();
  return c;
}

}  // namespace mlnlu
