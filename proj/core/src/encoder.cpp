#include "lcm/encoder.hpp"

#include <Eigen/LU>

#include <cmath>

#include "lcm/errors.hpp"

namespace lcm {

namespace {
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Encoder Encoder::identity(std::size_t dim) {
  if (dim == 0) throw InvalidArgument("encoder dimension must be positive");
  Encoder e;
  e.identity_ = true;
  e.dim_ = dim;
  e.offset_.assign(dim, 0.0);
  return e;
}

Encoder Encoder::affine(Tensor matrix, std::vector<double> offset) {
  if (matrix.ndim() != 2 || matrix.rows() != matrix.cols()) {
    throw DimensionError("affine encoder needs a square matrix, got " + shape_string(matrix.shape()));
  }
  const std::size_t d = matrix.rows();
  if (offset.size() != d) throw DimensionError("affine encoder offset has wrong length");
  Mat m(d, d);
  for (std::size_t i = 0; i < d * d; ++i) m.data()[i] = matrix.data()[i];
  Eigen::FullPivLU<Mat> lu(m);
  if (!lu.isInvertible()) throw InvalidArgument("affine encoder matrix is singular");
  const Mat inv = lu.inverse();
  std::vector<Scalar> inv_values(d * d);
  for (std::size_t i = 0; i < d * d; ++i) inv_values[i] = static_cast<Scalar>(inv.data()[i]);

  Encoder e;
  e.identity_ = false;
  e.dim_ = d;
  e.matrix_ = std::move(matrix);
  e.inverse_ = Tensor(Shape{d, d}, std::move(inv_values));
  e.offset_ = std::move(offset);
  return e;
}

Tensor Encoder::encode(const Tensor& x) const {
  if (x.ndim() != 2 || x.cols() != dim_) throw DimensionError("encode: wrong data width");
  if (identity_) return x.clone();
  const std::size_t n = x.rows();
  std::vector<Scalar> out(n * dim_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < dim_; ++i) {
      double acc = offset_[i];
      for (std::size_t j = 0; j < dim_; ++j) acc += matrix_.at(i, j) * x.at(r, j);
      out[r * dim_ + i] = static_cast<Scalar>(acc);
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor Encoder::decode(const Tensor& z) const {
  if (z.ndim() != 2 || z.cols() != dim_) throw DimensionError("decode: wrong latent width");
  if (identity_) return z.clone();
  const std::size_t n = z.rows();
  std::vector<Scalar> out(n * dim_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < dim_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) acc += inverse_.at(i, j) * (z.at(r, j) - offset_[j]);
      out[r * dim_ + i] = static_cast<Scalar>(acc);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

}  // namespace lcm
