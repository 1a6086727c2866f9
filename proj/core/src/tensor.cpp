#include "lcm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lcm/errors.hpp"

namespace lcm {

namespace detail {

// Buffers start on Eigen's packet boundary. With malloc's 16-byte alignment the
// vectorized kernels peel a varying number of leading scalars, so the rounding
// of a reduction would depend on where the heap put the buffer.
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

struct TapeNode {
  std::vector<ImplPtr> inputs;
  ImplPtr output;
  std::function<void(const TapeNode&)> backward;
};

}  // namespace detail

using detail::Buffer;
using detail::ImplPtr;
using detail::TensorImpl;
using detail::TapeNode;

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local Tape* g_active_tape = nullptr;

ConstMatMap as_mat(const TensorImpl& t) {
  return ConstMatMap(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                     static_cast<Eigen::Index>(t.shape[1]));
}

MatMap grad_mat(TensorImpl& t) {
  t.ensure_grad();
  return MatMap(t.grad.data(), static_cast<Eigen::Index>(t.shape[0]),
                static_cast<Eigen::Index>(t.shape[1]));
}

ConstMatMap out_grad_mat(const TensorImpl& t) {
  return ConstMatMap(t.grad.data(), static_cast<Eigen::Index>(t.shape[0]),
                     static_cast<Eigen::Index>(t.shape[1]));
}

ImplPtr make_impl(Shape shape, Buffer data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

const TensorImpl& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw InvalidArgument(std::string(op) + ": undefined tensor operand");
  return *t.impl();
}

void require_2d(const TensorImpl& t, const char* op) {
  if (t.shape.size() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape));
  }
}

bool is_scalar_shape(const Shape& s) { return s.empty(); }

// Attaches `backward` to the active tape when any input needs a gradient.
Tensor finish(ImplPtr out, std::vector<ImplPtr> inputs,
              std::function<void(const TapeNode&)> backward) {
  Tape* tape = g_active_tape;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const ImplPtr& p) { return p && p->requires_grad; });
  if (tape != nullptr && needs) {
    out->requires_grad = true;
    out->leaf = false;
    TapeNode node;
    node.inputs = std::move(inputs);
    node.output = out;
    node.backward = std::move(backward);
    tape->record(std::move(node));
  }
  return Tensor(std::move(out));
}

bool wants_grad(const ImplPtr& p) { return p && p->requires_grad; }

}  // namespace

// ---- shape helpers ------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  const auto n = shape_numel(shape);
  impl_ = make_impl(std::move(shape), Buffer(n, Scalar(0)));
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  impl_ = make_impl(std::move(shape), Buffer(values.begin(), values.end()));
  require_finite(*this, "tensor construction");
}

Tensor Tensor::full(Shape shape, Scalar value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value));
}

Tensor Tensor::scalar(Scalar value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<Scalar> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<Scalar> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel").data.size(); }

std::size_t Tensor::rows() const {
  require_2d(checked(*this, "rows"), "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d(checked(*this, "cols"), "cols");
  return impl_->shape[1];
}

std::span<const Scalar> Tensor::data() const { return checked(*this, "data").data; }

std::span<Scalar> Tensor::data_mut() {
  checked(*this, "data_mut");
  return impl_->data;
}

Scalar Tensor::item() const {
  const auto& t = checked(*this, "item");
  if (t.data.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(t.shape));
  return t.data[0];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  auto& t = const_cast<TensorImpl&>(checked(*this, "set_requires_grad"));
  if (!t.leaf) throw TapeError("requires_grad can only be toggled on leaf tensors");
  t.requires_grad = on;
}

bool Tensor::has_grad() const { return defined() && impl_->grad.size() == impl_->data.size(); }

std::vector<Scalar> Tensor::grad() const {
  if (has_grad()) return {impl_->grad.begin(), impl_->grad.end()};
  return std::vector<Scalar>(numel(), Scalar(0));
}

std::span<const Scalar> Tensor::grad_view() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (defined()) std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar(0));
}

Tensor Tensor::clone() const {
  const auto& t = checked(*this, "clone");
  return Tensor(make_impl(t.shape, t.data));
}

bool Tensor::all_finite() const {
  const auto d = data();
  return std::all_of(d.begin(), d.end(), [](Scalar v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const std::string& what) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// ---- Tape ---------------------------------------------------------------

Tape::Tape() = default;
Tape::~Tape() = default;

std::size_t Tape::size() const { return nodes_.size(); }

void Tape::record(TapeNode node) {
  if (consumed_) throw TapeError("cannot record onto a consumed tape");
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward on consumed tape");
  const auto& l = checked(loss, "backward");
  if (l.data.size() != 1) {
    throw TapeError("backward requires a scalar loss, got shape " + shape_string(l.shape));
  }
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (wants_grad(in)) {
        in->ensure_grad();
        std::fill(in->grad.begin(), in->grad.end(), Scalar(0));
      }
    }
    node.output->ensure_grad();
    std::fill(node.output->grad.begin(), node.output->grad.end(), Scalar(0));
  }
  consumed_ = true;
  if (!l.requires_grad) {
    nodes_.clear();
    return;
  }
  loss.impl()->grad.assign(1, Scalar(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(*it);
  nodes_.clear();
  nodes_.shrink_to_fit();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

// ---- primitives ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& ta = checked(a, "matmul");
  const auto& tb = checked(b, "matmul");
  require_2d(ta, "matmul");
  require_2d(tb, "matmul");
  if (ta.shape[1] != tb.shape[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(ta.shape) +
                         " and " + shape_string(tb.shape));
  }
  auto out = make_impl({ta.shape[0], tb.shape[1]},
                       Buffer(ta.shape[0] * tb.shape[1]));
  MatMap(out->data.data(), ta.shape[0], tb.shape[1]).noalias() = as_mat(ta) * as_mat(tb);
  return finish(out, {a.impl(), b.impl()}, [](const TapeNode& n) {
    const auto g = out_grad_mat(*n.output);
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    if (A.requires_grad) grad_mat(A).noalias() += g * as_mat(B).transpose();
    if (B.requires_grad) grad_mat(B).noalias() += as_mat(A).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  const auto& ta = checked(a, "transpose");
  require_2d(ta, "transpose");
  auto out = make_impl({ta.shape[1], ta.shape[0]}, Buffer(ta.data.size()));
  MatMap(out->data.data(), ta.shape[1], ta.shape[0]) = as_mat(ta).transpose();
  return finish(out, {a.impl()}, [](const TapeNode& n) {
    grad_mat(*n.inputs[0]) += out_grad_mat(*n.output).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const auto& tx = checked(x, "linear");
  const auto& tw = checked(w, "linear");
  require_2d(tx, "linear");
  require_2d(tw, "linear");
  if (tx.shape[1] != tw.shape[1]) {
    throw DimensionError("linear: input " + shape_string(tx.shape) + " incompatible with weight " +
                         shape_string(tw.shape));
  }
  const std::size_t batch = tx.shape[0];
  const std::size_t out_dim = tw.shape[0];
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " incompatible with weight " +
                         shape_string(tw.shape));
  }
  auto out = make_impl({batch, out_dim}, Buffer(batch * out_dim));
  MatMap o(out->data.data(), batch, out_dim);
  o.noalias() = as_mat(tx) * as_mat(tw).transpose();
  if (bias.defined()) {
    const Eigen::Map<const RowVec> bv(bias.data().data(), out_dim);
    o.rowwise() += bv;
  }
  std::vector<ImplPtr> inputs{x.impl(), w.impl()};
  if (bias.defined()) inputs.push_back(bias.impl());
  return finish(out, std::move(inputs), [](const TapeNode& n) {
    const auto g = out_grad_mat(*n.output);
    auto& X = *n.inputs[0];
    auto& W = *n.inputs[1];
    if (X.requires_grad) grad_mat(X).noalias() += g * as_mat(W);
    if (W.requires_grad) grad_mat(W).noalias() += g.transpose() * as_mat(X);
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      auto& Bias = *n.inputs[2];
      Bias.ensure_grad();
      Eigen::Map<RowVec>(Bias.grad.data(), Bias.grad.size()) += g.colwise().sum();
    }
  });
}

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast check_binary(const TensorImpl& a, const TensorImpl& b, const char* op) {
  if (a.shape == b.shape) return Broadcast::kNone;
  if (is_scalar_shape(a.shape)) return Broadcast::kLeftScalar;
  if (is_scalar_shape(b.shape)) return Broadcast::kRightScalar;
  if (a.data.size() == b.data.size()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                         shape_string(b.shape));
  }
  throw DimensionError(std::string(op) + ": non-scalar broadcast attempt " + shape_string(a.shape) +
                       " vs " + shape_string(b.shape));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const auto& ta = checked(a, name);
  const auto& tb = checked(b, name);
  const Broadcast bc = check_binary(ta, tb, name);
  const Shape out_shape = bc == Broadcast::kLeftScalar ? tb.shape : ta.shape;
  const std::size_t n = shape_numel(out_shape);
  const std::size_t sa = bc == Broadcast::kLeftScalar ? 0 : 1;
  const std::size_t sb = bc == Broadcast::kRightScalar ? 0 : 1;
  Buffer values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = fwd(ta.data[i * sa], tb.data[i * sb]);
  auto out = make_impl(out_shape, std::move(values));
  return finish(out, {a.impl(), b.impl()}, [sa, sb, da, db](const TapeNode& node) {
    auto& A = *node.inputs[0];
    auto& B = *node.inputs[1];
    const auto& g = node.output->grad;
    const std::size_t count = g.size();
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        A.grad[i * sa] += g[i] * da(A.data[i * sa], B.data[i * sb]);
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        B.grad[i * sb] += g[i] * db(A.data[i * sa], B.data[i * sb]);
      }
    }
  });
}

template <typename Fwd, typename D>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, D deriv) {
  const auto& ta = checked(a, name);
  Buffer values(ta.data.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = fwd(ta.data[i]);
  auto out = make_impl(ta.shape, std::move(values));
  return finish(out, {a.impl()}, [deriv](const TapeNode& node) {
    auto& A = *node.inputs[0];
    const auto& g = node.output->grad;
    A.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * deriv(A.data[i]);
  });
}

Scalar sigmoid(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y) { return y; },
      [](Scalar x, Scalar) { return x; });
}

Tensor scale(const Tensor& a, Scalar s) {
  return unary(
      a, "scale", [s](Scalar x) { return s * x; }, [s](Scalar) { return s; });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  return unary(
      a, "add_scalar", [s](Scalar x) { return x + s; }, [](Scalar) { return Scalar(1); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](Scalar x) { return x * sigmoid(x); },
      [](Scalar x) {
        const Scalar s = sigmoid(x);
        return s * (Scalar(1) + x * (Scalar(1) - s));
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](Scalar x) { return x * x; }, [](Scalar x) { return Scalar(2) * x; });
}

Tensor sqrt(const Tensor& a) {
  for (Scalar v : checked(a, "sqrt").data) {
    if (v < 0) throw NumericError("sqrt of negative value");
  }
  return unary(
      a, "sqrt", [](Scalar x) { return std::sqrt(x); },
      [](Scalar x) { return Scalar(0.5) / std::sqrt(x); });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::kAdd: return add(a, b);
    case ElementwiseOp::kSub: return sub(a, b);
    case ElementwiseOp::kMul: return mul(a, b);
    case ElementwiseOp::kSilu: return silu(a);
    case ElementwiseOp::kSquare: return square(a);
  }
  throw InvalidArgument("unknown elementwise op");
}

Tensor sum(const Tensor& a) {
  const auto& ta = checked(a, "sum");
  Scalar total = 0;
  for (Scalar v : ta.data) total += v;
  auto out = make_impl({}, {total});
  return finish(out, {a.impl()}, [](const TapeNode& node) {
    auto& A = *node.inputs[0];
    const Scalar g = node.output->grad[0];
    A.ensure_grad();
    for (auto& v : A.grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(checked(a, "mean").data.size()));
}

Tensor sum_rows(const Tensor& a) {
  const auto& ta = checked(a, "sum_rows");
  require_2d(ta, "sum_rows");
  const std::size_t r = ta.shape[0], c = ta.shape[1];
  Buffer values(r, Scalar(0));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) values[i] += ta.data[i * c + j];
  }
  auto out = make_impl({r}, std::move(values));
  return finish(out, {a.impl()}, [r, c](const TapeNode& node) {
    auto& A = *node.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += node.output->grad[i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  const std::size_t r = checked(parts[0], "concat_cols").shape.at(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<ImplPtr> inputs;
  for (const auto& p : parts) {
    const auto& tp = checked(p, "concat_cols");
    require_2d(tp, "concat_cols");
    if (tp.shape[0] != r) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(tp.shape));
    }
    widths.push_back(tp.shape[1]);
    total += tp.shape[1];
    inputs.push_back(p.impl());
  }
  Buffer values(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].impl()->data;
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  values.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    }
    offset += widths[k];
  }
  auto out = make_impl({r, total}, std::move(values));
  return finish(out, std::move(inputs), [r, total, widths](const TapeNode& node) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      auto& in = *node.inputs[k];
      if (in.requires_grad) {
        in.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            in.grad[i * widths[k] + j] += node.output->grad[i * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const auto& tt = checked(table, "gather_rows");
  require_2d(tt, "gather_rows");
  const std::size_t c = tt.shape[1];
  if (ids.empty()) throw InvalidArgument("gather_rows: empty id list");
  Buffer values(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tt.shape[0]) {
      throw InvalidArgument("gather_rows: row id " + std::to_string(ids[i]) + " outside table " +
                            shape_string(tt.shape));
    }
    std::copy_n(tt.data.begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c,
                values.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  auto out = make_impl({ids.size(), c}, std::move(values));
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return finish(out, {table.impl()}, [rows = std::move(rows), c](const TapeNode& node) {
    auto& T = *node.inputs[0];
    T.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) T.grad[rows[i] * c + j] += node.output->grad[i * c + j];
    }
  });
}

Tensor stop_gradient(const Tensor& a) {
  checked(a, "stop_gradient");
  return a.clone();
}

}  // namespace lcm
