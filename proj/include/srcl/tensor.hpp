#pragma once

#include <Eigen/Core>

#include <array>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace srcl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Index numel_of(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense n-d array in raster order (last axis fastest), rank <= 5.
/// The flat storage is an Eigen array so elementwise expressions stay
/// in Eigen land; anything matrix-shaped is viewed through Eigen::Map.
template <typename Scalar>
class TensorT {
 public:
  using ArrayType = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_)) {
    data_.setZero();
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT constant(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static TensorT from_array(Shape shape, ArrayType values) {
    if (values.size() != numel_of(shape))
      throw config_error("tensor data size does not match shape " + shape_str(shape));
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  ArrayType& array() { return data_; }
  const ArrayType& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // rank-3 (z, y, x)
  Scalar& at(Index z, Index y, Index x) {
    return data_[(z * shape_[1] + y) * shape_[2] + x];
  }
  Scalar at(Index z, Index y, Index x) const {
    return data_[(z * shape_[1] + y) * shape_[2] + x];
  }

  // rank-4 (c, z, y, x)
  Scalar& at(Index c, Index z, Index y, Index x) {
    return data_[((c * shape_[1] + z) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar at(Index c, Index z, Index y, Index x) const {
    return data_[((c * shape_[1] + z) * shape_[2] + y) * shape_[3] + x];
  }

  // rank-5 (n, c, z, y, x)
  Scalar& at(Index n, Index c, Index z, Index y, Index x) {
    return data_[(((n * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x];
  }
  Scalar at(Index n, Index c, Index z, Index y, Index x) const {
    return data_[(((n * shape_[1] + c) * shape_[2] + z) * shape_[3] + y) * shape_[4] + x];
  }

  TensorT reshaped(Shape shape) const {
    if (numel_of(shape) != numel())
      throw config_error("reshape from " + shape_str(shape_) + " to " + shape_str(shape) +
                         " changes element count");
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  Scalar min() const { return data_.minCoeff(); }
  Scalar max() const { return data_.maxCoeff(); }
  Scalar sum() const { return data_.sum(); }
  Scalar mean() const { return numel() ? data_.mean() : Scalar(0); }

 private:
  Shape shape_;
  ArrayType data_;
};

using Tensor = TensorT<double>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw config_error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
}

}  // namespace srcl
