#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seadet/common.hpp"

namespace seadet {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    check(e > 0, "tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. Feature maps follow the H x W x C convention, so the
// per-pixel channel vector is contiguous and the (H*W) x C matrix view is free.
template <class S>
class TensorT {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixView = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixView =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(shape_numel(shape_));
  }
  TensorT(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
          "tensor data length must equal the product of the shape extents");
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, S v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static TensorT scalar(S v) { return full({1}, v); }
  static TensorT from(Shape shape, std::initializer_list<S> vals) {
    TensorT t(std::move(shape));
    check(static_cast<std::int64_t>(vals.size()) == t.numel(), "initializer length mismatch");
    std::int64_t i = 0;
    for (S v : vals) t.data_[i++] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return data_.size(); }
  bool is_scalar() const { return numel() == 1; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  S& operator[](std::int64_t i) { return data_[i]; }
  S operator[](std::int64_t i) const { return data_[i]; }

  // rank-3 H x W x C accessors
  S& at(int h, int w, int c) {
    return data_[(static_cast<std::int64_t>(h) * shape_[1] + w) * shape_[2] + c];
  }
  const S& at(int h, int w, int c) const {
    return data_[(static_cast<std::int64_t>(h) * shape_[1] + w) * shape_[2] + c];
  }

  // rows x cols matrix view over the flat storage (row-major)
  MatrixView as_matrix(std::int64_t rows, std::int64_t cols) {
    check(rows * cols == numel(), "matrix view extents must cover the tensor");
    return MatrixView(data_.data(), rows, cols);
  }
  ConstMatrixView as_matrix(std::int64_t rows, std::int64_t cols) const {
    check(rows * cols == numel(), "matrix view extents must cover the tensor");
    return ConstMatrixView(data_.data(), rows, cols);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  Storage data_;
};

template <class S>
TensorT<S> zeros_like(const TensorT<S>& t) {
  return TensorT<S>(t.shape());
}

template <class S>
TensorT<S> random_normal(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
  TensorT<S> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>(mean + stddev * rng.normal());
  return t;
}

template <class S>
TensorT<S> random_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  TensorT<S> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

using Tensor = TensorT<Real>;

}  // namespace seadet
