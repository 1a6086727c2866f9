#pragma once

#include <cstddef>
#include <vector>

#include "lcm/tensor.hpp"

namespace lcm {

// Maps data rows into the latent space the model is trained in.
// Identity by default; a fixed invertible affine map is the other option.
class Encoder {
 public:
  static Encoder identity(std::size_t dim);
  // z = M·x + offset. Throws InvalidArgument if M is singular.
  static Encoder affine(Tensor matrix, std::vector<double> offset);

  bool is_identity() const { return identity_; }
  std::size_t dim() const { return dim_; }
  const Tensor& matrix() const { return matrix_; }
  const std::vector<double>& offset() const { return offset_; }

  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

 private:
  Encoder() = default;

  bool identity_ = true;
  std::size_t dim_ = 0;
  Tensor matrix_;
  Tensor inverse_;
  std::vector<double> offset_;
};

}  // namespace lcm
