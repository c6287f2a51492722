#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ledetr/error.hpp"

namespace ledetr {

using Index = std::int64_t;

/// Row-major dynamic matrix. Token-major data (tokens x channels) lives here.
template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MapR = Eigen::Map<MatrixR<Scalar>>;

template <typename Scalar>
using ConstMapR = Eigen::Map<const MatrixR<Scalar>>;

/// Four extents in (N, C, H, W) order. Channel-last token maps reuse the same
/// container with extents read as (N, H, W, C).
struct Shape4 {
  Index n = 1;
  Index c = 1;
  Index h = 1;
  Index w = 1;

  Index size() const { return n * c * h * w; }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense rank-4 tensor, contiguous and row-major in (N, C, H, W).
template <typename Scalar_>
class Tensor4 {
 public:
  using Scalar = Scalar_;

  Tensor4() : shape_{}, data_(1, Scalar(0)) {}

  explicit Tensor4(const Shape4& shape, Scalar fill = Scalar(0)) : shape_(shape) {
    check_shape(shape);
    data_.assign(static_cast<std::size_t>(shape.size()), fill);
  }

  Tensor4(const Shape4& shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (static_cast<Index>(data_.size()) != shape.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape.str());
    }
  }

  Tensor4(Index n, Index c, Index h, Index w, Scalar fill = Scalar(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return static_cast<Index>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return data_; }
  std::span<const Scalar> span() const { return data_; }

  Index index(Index n, Index c, Index h, Index w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  std::array<Index, 4> unflatten(Index flat) const {
    std::array<Index, 4> idx{};
    idx[3] = flat % shape_.w;
    flat /= shape_.w;
    idx[2] = flat % shape_.h;
    flat /= shape_.h;
    idx[1] = flat % shape_.c;
    idx[0] = flat / shape_.c;
    return idx;
  }

  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[index(n, c, h, w)]; }
  Scalar operator()(Index n, Index c, Index h, Index w) const { return data_[index(n, c, h, w)]; }
  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Pointer to the (n, c) plane of H*W values.
  Scalar* plane(Index n, Index c) { return data() + (n * shape_.c + c) * shape_.h * shape_.w; }
  const Scalar* plane(Index n, Index c) const {
    return data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }

  /// The n-th item viewed as a (C, H*W) matrix.
  MapR<Scalar> item_matrix(Index n) {
    return MapR<Scalar>(plane(n, 0), shape_.c, shape_.h * shape_.w);
  }
  ConstMapR<Scalar> item_matrix(Index n) const {
    return ConstMapR<Scalar>(plane(n, 0), shape_.c, shape_.h * shape_.w);
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

  template <typename Other>
  Tensor4<Other> cast() const {
    std::vector<Other> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](Scalar v) { return static_cast<Other>(v); });
    return Tensor4<Other>(shape_, std::move(out));
  }

 private:
  static void check_shape(const Shape4& s) {
    if (!s.valid()) throw DimensionError("tensor extents must be >= 1, got " + s.str());
  }

  Shape4 shape_;
  std::vector<Scalar> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename Scalar>
bool bitwise_equal(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) ==
             0;
}

template <typename Scalar>
bool bitwise_equal(const MatrixR<Scalar>& a, const MatrixR<Scalar>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) ==
             0;
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  Scalar m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Per-channel parameter vector stored as a 1xCx1x1 tensor.
template <typename Scalar>
Tensor4<Scalar> channel_vector(Index channels, Scalar fill = Scalar(0)) {
  return Tensor4<Scalar>(Shape4{1, channels, 1, 1}, fill);
}

}  // namespace ledetr
