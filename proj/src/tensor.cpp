#include "mmat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mmat/errors.hpp"

namespace mmat::grad {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_seq = 1;

using detail::Impl;

std::vector<double>& ensure_grad(Impl& t) {
  if (t.grad.empty()) t.grad.assign(t.data->size(), 0.0);
  return t.grad;
}

bool is_scalar_like(const Tensor& t) { return t.size() == 1; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() && !is_scalar_like(a) && !is_scalar_like(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
  }
}

// Result shape of a broadcasting binary op.
Shape broadcast_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  return is_scalar_like(a) ? b.shape() : a.shape();
}

// Sums a gradient down to `target` when the operand was broadcast from one element.
void accumulate_broadcast(Impl& target, std::span<const double> g, double factor_scalar,
                          std::span<const double> factor) {
  auto& tg = ensure_grad(target);
  if (tg.size() == g.size()) {
    if (factor.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i] * factor_scalar;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i] * factor[i % factor.size()];
    }
    return;
  }
  double acc = 0.0;
  if (factor.empty()) {
    for (double v : g) acc += v * factor_scalar;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * factor[i % factor.size()];
  }
  tg[0] += acc;
}

template <typename F>
Tensor unary(const Tensor& a, F&& forward, std::function<void(Impl&)> backward) {
  std::vector<double> out(a.size());
  const auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(src[i]);
  return Tensor::from_op(a.shape(), std::move(out), {a}, std::move(backward));
}

}  // namespace

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<std::vector<double>>(std::move(values));
  impl_->seq = t_next_seq++;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.front().size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("matrix: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " values");
  return (*impl_->data)[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_->is_leaf) throw ContractError("set_requires_grad: only leaves can be flagged");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape());
  return Tensor(shape(), impl_->grad);
}

void Tensor::zero_grad() noexcept {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (rank() != 0) {
    throw ContractError("backward: root must be a scalar of shape [], got " +
                        shape_string(shape()));
  }
  if (!impl_->requires_grad) return;

  // Collect every tracked node reachable from the root.
  std::vector<Impl*> nodes;
  std::vector<Impl*> stack{impl_.get()};
  std::unordered_set<const Impl*> seen;
  while (!stack.empty()) {
    Impl* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !seen.contains(p.get())) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Impl* a, const Impl* b) { return a->seq > b->seq; });

  for (Impl* n : nodes) {
    if (!n->is_leaf) n->grad.assign(n->data->size(), 0.0);
  }
  ensure_grad(*impl_)[0] += 1.0;
  for (Impl* n : nodes) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->seq = t_next_seq++;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return Tensor(shape(), *impl_->data); }

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  require_rank2(*this, "slice_rows");
  if (begin > end || end > rows()) throw ContractError("slice_rows: range out of bounds");
  const std::size_t c = cols();
  std::vector<double> out(impl_->data->begin() + static_cast<std::ptrdiff_t>(begin * c),
                          impl_->data->begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor(Shape{end - begin, c}, std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  require_rank2(*this, "gather_rows");
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (auto i : indices) {
    if (i >= rows()) throw ContractError("gather_rows: index out of range");
    const auto first = impl_->data->begin() + static_cast<std::ptrdiff_t>(i * c);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(c));
  }
  return Tensor(Shape{indices.size(), c}, std::move(out));
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw DimensionError("reshape: " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), *impl_->data);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       std::function<void(Impl&)> backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!track) return out;
  out.impl_->requires_grad = true;
  out.impl_->is_leaf = false;
  out.impl_->parents.reserve(inputs.size());
  for (auto& t : inputs) out.impl_->parents.push_back(t.impl_);
  out.impl_->backward_fn = std::move(backward_fn);
  return out;
}

NoGradGuard::NoGradGuard() noexcept : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::from_op({m, n}, std::move(out), {a, b}, [m, k, n](Impl& self) {
    const auto& g = self.grad;
    Impl& pa = *self.parents[0];
    Impl& pb = *self.parents[1];
    if (pa.requires_grad) {
      // dA = G · Bᵀ
      auto& ga = ensure_grad(pa);
      const auto& Bd = *pb.data;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * Bd[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = Aᵀ · G
      auto& gb = ensure_grad(pb);
      const auto& Ad = *pa.data;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Ad[i * k + p];
          double* dst = gb.data() + p * n;
          const double* src = g.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += av * src[j];
        }
      }
    }
  });
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  require_same_shape(a, b, name);
  const Shape shape = broadcast_shape(a, b);
  const std::size_t n = shape_size(shape);
  const auto A = a.data();
  const auto B = b.data();
  const bool a1 = A.size() == 1 && n != 1;
  const bool b1 = B.size() == 1 && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a1 ? A[0] : A[i];
    const double y = b1 ? B[0] : B[i];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return Tensor::from_op(shape, std::move(out), {a, b}, [kind](Impl& self) {
    Impl& pa = *self.parents[0];
    Impl& pb = *self.parents[1];
    const std::span<const double> g = self.grad;
    switch (kind) {
      case BinaryKind::kAdd:
        if (pa.requires_grad) accumulate_broadcast(pa, g, 1.0, {});
        if (pb.requires_grad) accumulate_broadcast(pb, g, 1.0, {});
        break;
      case BinaryKind::kSub:
        if (pa.requires_grad) accumulate_broadcast(pa, g, 1.0, {});
        if (pb.requires_grad) accumulate_broadcast(pb, g, -1.0, {});
        break;
      case BinaryKind::kMul:
        if (pa.requires_grad) accumulate_broadcast(pa, g, 1.0, *pb.data);
        if (pb.requires_grad) accumulate_broadcast(pb, g, 1.0, *pa.data);
        break;
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  require_rank2(a, "add_rowvec");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (b.size() != n) {
    throw DimensionError("add_rowvec: cannot add " + shape_string(b.shape()) + " to rows of " +
                         shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [m, n](Impl& self) {
    Impl& pa = *self.parents[0];
    Impl& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = ensure_grad(pa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& gb = ensure_grad(pb);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](Impl& self) {
    Impl& p = *self.parents[0];
    auto& g = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*p.data)[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double v) { return std::exp(v); }, [](Impl& self) {
    Impl& p = *self.parents[0];
    auto& g = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*self.data)[i];
  });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: nonpositive argument " + std::to_string(v));
  }
  return unary(a, [](double v) { return std::log(v); }, [](Impl& self) {
    Impl& p = *self.parents[0];
    auto& g = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (*p.data)[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double v) { return v * v; }, [](Impl& self) {
    Impl& p = *self.parents[0];
    auto& g = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0 * (*p.data)[i];
  });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(a, [floor](double v) { return v > floor ? v : floor; }, [floor](Impl& self) {
    Impl& p = *self.parents[0];
    auto& g = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*p.data)[i] > floor) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::from_op({}, {acc}, {a}, [](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    const double s = self.grad[0];
    for (double& v : g) v += s;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m, 0.0);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += A[i * n + j];
  return Tensor::from_op({m}, std::move(out), {a}, [m, n](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto A = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = A.data() + i * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax: NaN logit");
      hi = std::max(hi, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (out[i * n + j] = std::exp(row[j] - hi));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [m, n](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    const auto& p = *self.data;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * p[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += p[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2(a, "log_softmax_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto A = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = A.data() + i * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("log_softmax: NaN logit");
      hi = std::max(hi, row[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - hi);
    const double lse = hi + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [m, n](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    const auto& ls = *self.data;
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += self.grad[i * n + j] - std::exp(ls[i * n + j]) * gsum;
    }
  });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> cols) {
  require_rank2(a, "pick");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (cols.size() != m) throw DimensionError("pick: need one column index per row");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw ContractError("pick: column index out of range");
    out[i] = a.data()[i * n + idx[i]];
  }
  return Tensor::from_op({m}, std::move(out), {a}, [idx = std::move(idx), n](Impl& self) {
    auto& g = ensure_grad(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
  });
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tensor out = f(probe);
  out.backward();
  const std::vector<double> analytic = probe.has_grad()
                                           ? std::vector<double>(probe.grad().begin(), probe.grad().end())
                                           : std::vector<double>(probe.size(), 0.0);
  double worst = 0.0;
  NoGradGuard no_grad;
  Tensor shifted = x.clone();
  auto buf = shifted.mutable_data();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + h;
    const double up = f(shifted).item();
    buf[i] = orig - h;
    const double down = f(shifted).item();
    buf[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-12));
  }
  return worst;
}

}  // namespace mmat::grad
