#pragma once

// ndgrad: dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Every op that consumes a gradient-tracked operand records a node holding its
// inputs and a local backward rule. Nodes carry a creation sequence number, so
// sorting reachable nodes by that number recovers the execution order; backward
// walks it once in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmat::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct Impl {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Impl>> parents;
  // Propagates this->grad into parents' grad buffers.
  std::function<void(Impl&)> backward_fn;
};

}  // namespace detail

// Handle type: copies share storage and history. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor();  // scalar zero
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // 2-D from nested rows; all rows must have equal length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return impl_->shape; }
  std::size_t rank() const noexcept { return impl_->shape.size(); }
  std::size_t size() const noexcept { return impl_->data->size(); }
  std::size_t rows() const;  // shape[0] of a 2-D tensor
  std::size_t cols() const;  // shape[1] of a 2-D tensor

  std::span<const double> data() const noexcept { return *impl_->data; }
  // Writes bypass the graph; only use on tensors not yet consumed by an op.
  std::span<double> mutable_data() noexcept { return *impl_->data; }
  double operator[](std::size_t i) const { return (*impl_->data)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*impl_->data)[r * cols() + c]; }
  double item() const;

  bool requires_grad() const noexcept { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const noexcept { return impl_->is_leaf; }

  bool has_grad() const noexcept { return !impl_->grad.empty(); }
  std::span<const double> grad() const noexcept { return impl_->grad; }
  Tensor grad_tensor() const;
  void zero_grad() noexcept;

  // Reverse pass from this scalar. Leaf gradients accumulate across calls;
  // intermediate gradients are recomputed each call.
  void backward() const;

  // Shares storage, drops history and gradient tracking.
  Tensor detach() const;
  // Independent copy of the values, no history.
  Tensor clone() const;
  // Row slice [begin, end) of a 2-D tensor, copied, no history.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  Tensor reshape(Shape shape) const;

  // Internal: op construction.
  static Tensor from_op(Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::Impl&)> backward_fn);
  const std::shared_ptr<detail::Impl>& impl() const noexcept { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::Impl> impl_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise; either operand may be a single-element tensor (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// a[m×n] + b[n] broadcast over rows.
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);  // relu'(0) = 0
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError on entries <= 0
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
// max(a, floor); gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& a, double floor);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor sum_rows(const Tensor& a);  // [m×n] -> [m]

// Row-wise softmax with max subtraction. NumericError on NaN input.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
// out[i] = a[i, cols[i]]
Tensor pick(const Tensor& a, std::span<const std::size_t> cols);

// Scalar function of a tensor, used by finite_diff_check.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12).
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace mmat::grad
