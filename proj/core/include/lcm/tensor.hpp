#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lcm {

#if defined(LCM_FLOAT32) && LCM_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

/// Dense row-major array with optional gradient accumulator.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape route gradients back to parameters. Use clone() for an
/// independent copy. Values are fixed after construction except through
/// data_mut(), which optimizers and finite-difference probes use on leaves.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value);
  static Tensor vector(std::vector<Scalar> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const Scalar> data() const;
  std::span<Scalar> data_mut();
  Scalar at(std::size_t i) const { return data()[i]; }
  Scalar at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  Scalar item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Gradient accumulator; all zeros when nothing was ever accumulated.
  std::vector<Scalar> grad() const;
  std::span<const Scalar> grad_view() const;  // empty when !has_grad()
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

  // Internal: used by the op layer.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Throws NumericError naming `what` if any element is NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);

namespace detail {
struct TapeNode;
}

/// Ordered record of executed primitives. Ops record onto the tape that is
/// active on the current thread (see TapeScope) whenever one of their inputs
/// requires a gradient; replay visits nodes in reverse recording order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grad on every tensor reachable from `loss`. Leaves touched by
  // the tape are reset first, so their grad is exactly dLoss/dLeaf. A tape
  // can be replayed once.
  void backward(const Tensor& loss);

  std::size_t size() const;
  bool consumed() const { return consumed_; }

  void record(detail::TapeNode node);

 private:
  std::vector<detail::TapeNode> nodes_;
  bool consumed_ = false;
};

// Makes `tape` the recording target for this thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for this thread until destruction.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- primitives ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[B×in] · wᵀ + b, with w[out×in] and optional bias b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

enum class ElementwiseOp { kAdd, kSub, kMul, kSilu, kSquare };
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = Tensor());

// Binary ops require equal shapes; a scalar operand (shape {}) broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor silu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor add_scalar(const Tensor& a, Scalar s);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // [B×d] -> [B]

// Column-wise concatenation of 2-D tensors with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);
// Row lookup table[ids[i], :]; gradients scatter-add back into table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

// Value copy that never propagates gradient to `a`.
Tensor stop_gradient(const Tensor& a);

}  // namespace lcm
