#include "dictmlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace dictmlm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_finite_checks = false;
thread_local bool g_grad_enabled = true;

void check_finite(const std::vector<Real>& v, const char* op, const char* what) {
  if (!g_finite_checks) return;
  for (Real x : v) {
    if (!std::isfinite(x)) fail_data(op, ": non-finite value in ", what);
  }
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->value.assign(shape_size(shape), Real(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, Real v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<Real> v, bool requires_grad) {
  if (v.size() != shape_size(shape)) {
    fail_usage("tensor data length ", v.size(), " does not match shape ", shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(v);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real v) { return from_vector({1}, {v}); }

Real Tensor::item() const {
  if (!impl_ || impl_->value.size() != 1) {
    fail_usage("item() requires a scalar tensor, got ", impl_ ? shape_str(impl_->shape) : "null");
  }
  return impl_->value[0];
}

const std::vector<Real>& Tensor::grad() const {
  if (!has_grad()) fail_usage("tensor has no gradient buffer");
  return impl_->grad;
}

std::vector<Real>& Tensor::mutable_grad() {
  if (!impl_) fail_usage("tensor has no gradient buffer");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), Real(0));
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
}

void Tensor::backward() {
  if (!impl_) fail_usage("backward on an undefined tensor");
  if (impl_->value.size() != 1) {
    fail_usage("backward requires a scalar root, got ", shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) fail_usage("backward root has no gradient path");

  // Postorder over input edges: every node lands after all of its inputs,
  // so the reversed list runs consumers before producers.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited{impl_.get()};
  std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
  while (!stack.empty()) {
    Impl* node = stack.back().first;
    std::size_t i = stack.back().second;
    if (i < node->parents.size()) {
      ++stack.back().second;
      Impl* input = node->parents[i].impl().get();
      if (input->requires_grad && visited.insert(input).second) stack.push_back({input, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch and reset every pass; leaf gradients
  // persist and accumulate across backward calls.
  for (Impl* n : order) {
    if (n->leaf) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), Real(0));
    } else {
      n->grad.assign(n->value.size(), Real(0));
    }
  }
  impl_->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->leaf && (*it)->backward_fn) (*it)->backward_fn();
  }
  if (g_finite_checks) {
    for (Impl* n : order) check_finite(n->grad, n->op_name, "backward gradient");
  }
}

Tensor make_op(Shape shape, std::vector<Real> value, std::vector<Tensor> parents,
               const char* op_name) {
  check_finite(value, op_name, "forward output");
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    impl->requires_grad = true;
    impl->leaf = false;
    impl->op_name = op_name;
    impl->parents = std::move(parents);
  }
  return Tensor(std::move(impl));
}

namespace {

bool tracked(const Tensor& t) { return t.requires_grad() && !t.impl()->leaf; }

// Accumulating GEMM kernels, fixed reduction order for bitwise
// reproducibility. c += a.b / a.b^T / a^T.b respectively.
void mm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      Real av = a[i * k + p];
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  // a [m,k], b [n,k]
  for (std::size_t i = 0; i < m; ++i) {
    const Real* __restrict arow = a + i * k;
    Real* __restrict crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* __restrict brow = b + j * k;
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

void mm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  // a [k,m], b [k,n]
  for (std::size_t p = 0; p < k; ++p) {
    const Real* __restrict arow = a + p * m;
    const Real* __restrict brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      Real av = arow[i];
      Real* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) fail_usage(op, ": expected rank-", r, " tensor, got ", shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool suffix = sb.size() <= sa.size() &&
                std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()));
  if (!suffix) fail_usage("add: shape ", shape_str(sb), " is not a trailing suffix of ", shape_str(sa));
  std::size_t bn = b.size();
  std::size_t reps = a.size() / bn;
  std::vector<Real> val(a.size());
  const Real* av = a.value().data();
  const Real* bv = b.value().data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < bn; ++i) val[r * bn + i] = av[r * bn + i] + bv[i];
  }
  Tensor out = make_op(sa, std::move(val), {a, b}, "add");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, reps, bn] {
      const Real* g = self->grad.data();
      if (a.requires_grad()) {
        Real* da = a.impl()->grad.data();
        for (std::size_t i = 0; i < self->grad.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        Real* db = b.impl()->grad.data();
        for (std::size_t r = 0; r < reps; ++r) {
          for (std::size_t i = 0; i < bn; ++i) db[i] += g[r * bn + i];
        }
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail_usage("mul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  }
  std::vector<Real> val(a.size());
  for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.value()[i] * b.value()[i];
  Tensor out = make_op(a.shape(), std::move(val), {a, b}, "mul");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b] {
      const Real* g = self->grad.data();
      if (a.requires_grad()) {
        Real* da = a.impl()->grad.data();
        const Real* bv = b.value().data();
        for (std::size_t i = 0; i < self->grad.size(); ++i) da[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        Real* db = b.impl()->grad.data();
        const Real* av = a.value().data();
        for (std::size_t i = 0; i < self->grad.size(); ++i) db[i] += g[i] * av[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, Real c) {
  std::vector<Real> val(a.size());
  for (std::size_t i = 0; i < val.size(); ++i) val[i] = a.value()[i] * c;
  Tensor out = make_op(a.shape(), std::move(val), {a}, "scale");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, c] {
      if (!a.requires_grad()) return;
      Real* da = a.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) da[i] += g[i] * c;
    };
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    fail_usage("matmul: incompatible shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> val(m * n, Real(0));
  mm_nn(a.value().data(), b.value().data(), val.data(), m, k, n);
  Tensor out = make_op({m, n}, std::move(val), {a, b}, "matmul");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, m, k, n] {
      if (a.requires_grad()) mm_nt(self->grad.data(), b.value().data(), a.impl()->grad.data(), m, n, k);
      if (b.requires_grad()) mm_tn(a.value().data(), self->grad.data(), b.impl()->grad.data(), k, m, n);
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    fail_usage("matmul_nt: incompatible shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<Real> val(m * n, Real(0));
  mm_nt(a.value().data(), b.value().data(), val.data(), m, k, n);
  Tensor out = make_op({m, n}, std::move(val), {a, b}, "matmul_nt");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, m, k, n] {
      if (a.requires_grad()) mm_nn(self->grad.data(), b.value().data(), a.impl()->grad.data(), m, n, k);
      if (b.requires_grad()) mm_tn(self->grad.data(), a.value().data(), b.impl()->grad.data(), n, m, k);
    };
  }
  return out;
}

namespace {

void check_batched(const Tensor& a, const Tensor& b, std::size_t b_inner, const char* op) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b_inner) {
    fail_usage(op, ": incompatible shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()));
  }
}

}  // namespace

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  check_batched(a, b, b.rank() == 3 ? b.dim(1) : 0, "batched_matmul");
  std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<Real> val(bs * m * n, Real(0));
  for (std::size_t i = 0; i < bs; ++i) {
    mm_nn(a.value().data() + i * m * k, b.value().data() + i * k * n, val.data() + i * m * n, m, k, n);
  }
  Tensor out = make_op({bs, m, n}, std::move(val), {a, b}, "batched_matmul");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, bs, m, k, n] {
      for (std::size_t i = 0; i < bs; ++i) {
        const Real* g = self->grad.data() + i * m * n;
        if (a.requires_grad()) {
          mm_nt(g, b.value().data() + i * k * n, a.impl()->grad.data() + i * m * k, m, n, k);
        }
        if (b.requires_grad()) {
          mm_tn(a.value().data() + i * m * k, g, b.impl()->grad.data() + i * k * n, k, m, n);
        }
      }
    };
  }
  return out;
}

Tensor batched_matmul_nt(const Tensor& a, const Tensor& b) {
  check_batched(a, b, b.rank() == 3 ? b.dim(2) : 0, "batched_matmul_nt");
  std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<Real> val(bs * m * n, Real(0));
  for (std::size_t i = 0; i < bs; ++i) {
    mm_nt(a.value().data() + i * m * k, b.value().data() + i * n * k, val.data() + i * m * n, m, k, n);
  }
  Tensor out = make_op({bs, m, n}, std::move(val), {a, b}, "batched_matmul_nt");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, bs, m, k, n] {
      for (std::size_t i = 0; i < bs; ++i) {
        const Real* g = self->grad.data() + i * m * n;
        if (a.requires_grad()) {
          mm_nn(g, b.value().data() + i * n * k, a.impl()->grad.data() + i * m * k, m, n, k);
        }
        if (b.requires_grad()) {
          mm_tn(g, a.value().data() + i * m * k, b.impl()->grad.data() + i * n * k, n, m, k);
        }
      }
    };
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<Real> val(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) val[j * m + i] = a.value()[i * n + j];
  }
  Tensor out = make_op({n, m}, std::move(val), {a}, "transpose");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, m, n] {
      if (!a.requires_grad()) return;
      Real* da = a.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
      }
    };
  }
  return out;
}

Tensor rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_rank(table, 2, "rows");
  std::size_t v = table.dim(0), h = table.dim(1);
  std::vector<Real> val(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) fail_usage("rows: id ", ids[i], " out of range for table ", shape_str(table.shape()));
    std::copy_n(table.value().data() + ids[i] * h, h, val.data() + i * h);
  }
  Tensor out = make_op({ids.size(), h}, std::move(val), {table}, "rows");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, table, ids, h] {
      if (!table.requires_grad()) return;
      Real* dt = table.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Real* drow = dt + ids[i] * h;
        const Real* grow = g + i * h;
        for (std::size_t j = 0; j < h; ++j) drow[j] += grow[j];
      }
    };
  }
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sa.size() == sb.size() && !sa.empty() &&
            std::equal(sa.begin(), sa.end() - 1, sb.begin());
  if (!ok) fail_usage("concat_last: incompatible shapes ", shape_str(sa), " and ", shape_str(sb));
  std::size_t da = sa.back(), db = sb.back();
  std::size_t nrows = a.size() / da;
  Shape out_shape = sa;
  out_shape.back() = da + db;
  std::vector<Real> val(nrows * (da + db));
  for (std::size_t r = 0; r < nrows; ++r) {
    std::copy_n(a.value().data() + r * da, da, val.data() + r * (da + db));
    std::copy_n(b.value().data() + r * db, db, val.data() + r * (da + db) + da);
  }
  Tensor out = make_op(std::move(out_shape), std::move(val), {a, b}, "concat_last");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, b, nrows, da, db] {
      const Real* g = self->grad.data();
      for (std::size_t r = 0; r < nrows; ++r) {
        if (a.requires_grad()) {
          Real* ga = a.impl()->grad.data() + r * da;
          for (std::size_t j = 0; j < da; ++j) ga[j] += g[r * (da + db) + j];
        }
        if (b.requires_grad()) {
          Real* gb = b.impl()->grad.data() + r * db;
          for (std::size_t j = 0; j < db; ++j) gb[j] += g[r * (da + db) + da + j];
        }
      }
    };
  }
  return out;
}

Tensor slice_last(const Tensor& a, std::size_t lo, std::size_t hi) {
  if (a.rank() == 0 || lo >= hi || hi > a.shape().back()) {
    fail_usage("slice_last: range [", lo, ", ", hi, ") invalid for ", shape_str(a.shape()));
  }
  std::size_t d = a.shape().back();
  std::size_t w = hi - lo;
  std::size_t nrows = a.size() / d;
  Shape out_shape = a.shape();
  out_shape.back() = w;
  std::vector<Real> val(nrows * w);
  for (std::size_t r = 0; r < nrows; ++r) {
    std::copy_n(a.value().data() + r * d + lo, w, val.data() + r * w);
  }
  Tensor out = make_op(std::move(out_shape), std::move(val), {a}, "slice_last");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, nrows, d, w, lo] {
      if (!a.requires_grad()) return;
      Real* da = a.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t r = 0; r < nrows; ++r) {
        for (std::size_t j = 0; j < w; ++j) da[r * d + lo + j] += g[r * w + j];
      }
    };
  }
  return out;
}

Tensor softmax_last(const Tensor& a) {
  if (a.rank() == 0) fail_usage("softmax_last: scalar input");
  std::size_t d = a.shape().back();
  std::size_t nrows = a.size() / d;
  std::vector<Real> val(a.size());
  for (std::size_t r = 0; r < nrows; ++r) {
    const Real* x = a.value().data() + r * d;
    Real* y = val.data() + r * d;
    Real mx = x[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
  }
  Tensor out = make_op(a.shape(), std::move(val), {a}, "softmax_last");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, a, nrows, d] {
      if (!a.requires_grad()) return;
      Real* da = a.impl()->grad.data();
      const Real* y = self->value.data();
      const Real* g = self->grad.data();
      for (std::size_t r = 0; r < nrows; ++r) {
        Real dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          da[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
        }
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (x.rank() == 0 || gain.shape() != Shape{x.shape().back()} || bias.shape() != gain.shape()) {
    fail_usage("layer_norm: shapes ", shape_str(x.shape()), ", ", shape_str(gain.shape()), ", ",
               shape_str(bias.shape()), " disagree");
  }
  std::size_t d = x.shape().back();
  std::size_t nrows = x.size() / d;
  std::vector<Real> val(x.size());
  auto xhat = std::make_shared<std::vector<Real>>(x.size());
  auto inv_std = std::make_shared<std::vector<Real>>(nrows);
  for (std::size_t r = 0; r < nrows; ++r) {
    const Real* xin = x.value().data() + r * d;
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xin[j];
    mean /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xin[j] - mean) * (xin[j] - mean);
    var /= Real(d);
    Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      Real xh = (xin[j] - mean) * is;
      (*xhat)[r * d + j] = xh;
      val[r * d + j] = gain.value()[j] * xh + bias.value()[j];
    }
  }
  Tensor out = make_op(x.shape(), std::move(val), {x, gain, bias}, "layer_norm");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x, gain, bias, xhat, inv_std, nrows, d] {
      const Real* g = self->grad.data();
      for (std::size_t r = 0; r < nrows; ++r) {
        const Real* gr = g + r * d;
        const Real* xh = xhat->data() + r * d;
        if (x.requires_grad()) {
          // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          Real m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < d; ++j) {
            Real dxh = gr[j] * gain.value()[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= Real(d);
          m2 /= Real(d);
          Real* dx = x.impl()->grad.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            Real dxh = gr[j] * gain.value()[j];
            dx[j] += (*inv_std)[r] * (dxh - m1 - xh[j] * m2);
          }
        }
        if (gain.requires_grad()) {
          Real* dg = gain.impl()->grad.data();
          for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * xh[j];
        }
        if (bias.requires_grad()) {
          Real* db = bias.impl()->grad.data();
          for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
        }
      }
    };
  }
  return out;
}

namespace {

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
constexpr Real kGeluA = Real(0.044715);

}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<Real> val(x.size());
  auto tanh_u = std::make_shared<std::vector<Real>>(x.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    Real v = x.value()[i];
    Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    (*tanh_u)[i] = t;
    val[i] = Real(0.5) * v * (Real(1) + t);
  }
  Tensor out = make_op(x.shape(), std::move(val), {x}, "gelu");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x, tanh_u] {
      if (!x.requires_grad()) return;
      Real* dx = x.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        Real v = x.value()[i];
        Real t = (*tanh_u)[i];
        Real du = kGeluC * (Real(1) + Real(3) * kGeluA * v * v);
        Real d = Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
        dx[i] += g[i] * d;
      }
    };
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) fail_usage("dropout: p must be in [0, 1), got ", p);
  if (p == 0.0) return x;
  Real keep_scale = Real(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(x.size());
  std::vector<Real> val(x.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    Real m = rng.uniform() < p ? Real(0) : keep_scale;
    (*mask)[i] = m;
    val[i] = x.value()[i] * m;
  }
  Tensor out = make_op(x.shape(), std::move(val), {x}, "dropout");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x, mask] {
      if (!x.requires_grad()) return;
      Real* dx = x.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) dx[i] += g[i] * (*mask)[i];
    };
  }
  return out;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<std::size_t>& targets) {
  require_rank(logits, 2, "cross_entropy");
  std::size_t m = logits.dim(0), v = logits.dim(1);
  if (targets.size() != m || m == 0) {
    fail_usage("cross_entropy: ", targets.size(), " targets for ", m, " logit rows");
  }
  auto probs = std::make_shared<std::vector<Real>>(m * v);
  Real total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= v) fail_usage("cross_entropy: target ", targets[r], " out of range ", v);
    const Real* x = logits.value().data() + r * v;
    Real* pr = probs->data() + r * v;
    Real mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < v; ++j) {
      pr[j] = std::exp(x[j] - mx);
      sum += pr[j];
    }
    for (std::size_t j = 0; j < v; ++j) pr[j] /= sum;
    total += std::log(sum) + mx - x[targets[r]];
  }
  Tensor out = make_op({1}, {total / Real(m)}, {logits}, "cross_entropy");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, logits, targets, probs, m, v] {
      if (!logits.requires_grad()) return;
      Real g = self->grad[0] / Real(m);
      Real* dl = logits.impl()->grad.data();
      for (std::size_t r = 0; r < m; ++r) {
        const Real* pr = probs->data() + r * v;
        Real* drow = dl + r * v;
        for (std::size_t j = 0; j < v; ++j) drow[j] += g * pr[j];
        drow[targets[r]] -= g;
      }
    };
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Real s = 0;
  for (Real v : x.value()) s += v;
  Tensor out = make_op({1}, {s}, {x}, "sum_all");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x] {
      if (!x.requires_grad()) return;
      Real g = self->grad[0];
      Real* dx = x.impl()->grad.data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
    };
  }
  return out;
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  require_rank(x, 2, "split_heads");
  std::size_t h = x.dim(1);
  if (x.dim(0) != batch * seq || heads == 0 || h % heads != 0) {
    fail_usage("split_heads: shape ", shape_str(x.shape()), " does not factor as ", batch, "x", seq,
               " rows with ", heads, " heads");
  }
  std::size_t dh = h / heads;
  std::vector<Real> val(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t a = 0; a < heads; ++a) {
      for (std::size_t s = 0; s < seq; ++s) {
        std::copy_n(x.value().data() + (b * seq + s) * h + a * dh, dh,
                    val.data() + (((b * heads + a) * seq) + s) * dh);
      }
    }
  }
  Tensor out = make_op({batch * heads, seq, dh}, std::move(val), {x}, "split_heads");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x, batch, seq, heads, h, dh] {
      if (!x.requires_grad()) return;
      Real* dx = x.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t a = 0; a < heads; ++a) {
          for (std::size_t s = 0; s < seq; ++s) {
            const Real* grow = g + (((b * heads + a) * seq) + s) * dh;
            Real* drow = dx + (b * seq + s) * h + a * dh;
            for (std::size_t j = 0; j < dh; ++j) drow[j] += grow[j];
          }
        }
      }
    };
  }
  return out;
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  std::size_t dh = x.dim(2);
  if (x.dim(0) != batch * heads || x.dim(1) != seq) {
    fail_usage("merge_heads: shape ", shape_str(x.shape()), " does not factor as ", batch, "x", heads,
               " batches of ", seq, " rows");
  }
  std::size_t h = heads * dh;
  std::vector<Real> val(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t a = 0; a < heads; ++a) {
      for (std::size_t s = 0; s < seq; ++s) {
        std::copy_n(x.value().data() + (((b * heads + a) * seq) + s) * dh, dh,
                    val.data() + (b * seq + s) * h + a * dh);
      }
    }
  }
  Tensor out = make_op({batch * seq, h}, std::move(val), {x}, "merge_heads");
  if (tracked(out)) {
    Tensor::Impl* self = out.impl().get();
    out.impl()->backward_fn = [self, x, batch, seq, heads, h, dh] {
      if (!x.requires_grad()) return;
      Real* dx = x.impl()->grad.data();
      const Real* g = self->grad.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t a = 0; a < heads; ++a) {
          for (std::size_t s = 0; s < seq; ++s) {
            const Real* grow = g + (b * seq + s) * h + a * dh;
            Real* drow = dx + (((b * heads + a) * seq) + s) * dh;
            for (std::size_t j = 0; j < dh; ++j) drow[j] += grow[j];
          }
        }
      }
    };
  }
  return out;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double h, std::uint64_t seed, std::size_t sample_limit) {
  for (Tensor p : params) p.zero_grad();
  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<Real>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<Real>(p.size(), Real(0)));
  }

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<Real>& vals = p.mutable_value();
    std::vector<std::size_t> idx;
    if (vals.size() <= sample_limit) {
      idx.resize(vals.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    } else {
      Rng rng(derive_seed(seed, 0x67636bULL, pi));
      idx = rng.sample_without_replacement(vals.size(), sample_limit);
    }
    for (std::size_t i : idx) {
      Real orig = vals[i];
      vals[i] = orig + Real(h);
      double f_plus = f().item();
      vals[i] = orig - Real(h);
      double f_minus = f().item();
      vals[i] = orig;
      double numeric = (f_plus - f_minus) / (2.0 * h);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      res.max_rel_error = std::max(res.max_rel_error, rel);
      res.checked += 1;
    }
  }
  return res;
}

}  // namespace dictmlm
