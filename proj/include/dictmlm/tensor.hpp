#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dictmlm/common.hpp"
#include "dictmlm/rng.hpp"

namespace dictmlm {

#ifdef DICTMLM_F32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// When enabled, every op forward scans its output for NaN/Inf and throws.
// Both mode flags are per-thread.
void set_finite_checks(bool on);
bool finite_checks_enabled();

// Gradient tracking is on unless a NoGradGuard is live (evaluation paths).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Shared-handle dense tensor with optional reverse-mode autodiff record.
// Ops build a graph when any input requires gradients; backward() from a
// scalar zeroes interior gradients and accumulates into leaves, so two
// backward calls double leaf gradients.
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated lazily
    bool requires_grad = false;
    bool leaf = true;
    const char* op_name = "leaf";
    std::vector<Tensor> parents;
    std::function<void()> backward_fn;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real v);
  static Tensor from_vector(Shape shape, std::vector<Real> v, bool requires_grad = false);
  static Tensor scalar(Real v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->value.size(); }

  const std::vector<Real>& value() const { return impl_->value; }
  std::vector<Real>& mutable_value() { return impl_->value; }
  Real item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<Real>& grad() const;
  std::vector<Real>& mutable_grad();
  void zero_grad();

  void backward();

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_op(Shape shape, std::vector<Real> value, std::vector<Tensor> parents,
                        const char* op_name);
  std::shared_ptr<Impl> impl_;
};

// Elementwise sum; the second operand may have a shape that is a trailing
// suffix of the first (broadcast over the leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape
Tensor scale(const Tensor& a, Real c);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
Tensor batched_matmul(const Tensor& a, const Tensor& b);     // [B,m,k]x[B,k,n]
Tensor batched_matmul_nt(const Tensor& a, const Tensor& b);  // [B,m,k]x[B,n,k]^T
Tensor transpose(const Tensor& a);                   // 2-D

// Row gather with scatter-add backward; doubles as embedding lookup.
Tensor rows(const Tensor& table, const std::vector<std::size_t>& ids);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, std::size_t lo, std::size_t hi);

Tensor softmax_last(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-12));
Tensor gelu(const Tensor& x);
Tensor dropout(const Tensor& x, double p, Rng& rng);
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<std::size_t>& targets);
Tensor sum_all(const Tensor& x);

// Head reshapes for attention: [B*S, H] <-> [B*A, S, H/A].
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads);

// Analytic-vs-central-difference comparison over every element of every
// parameter (a seeded subsample above sample_limit elements per tensor).
// Relative error is |a - n| / max(|a| + |n|, 1e-6).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double h = 1e-5, std::uint64_t seed = 0,
                           std::size_t sample_limit = 10000);

}  // namespace dictmlm
