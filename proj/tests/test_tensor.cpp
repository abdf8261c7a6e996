#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dictmlm/rng.hpp"
#include "dictmlm/tensor.hpp"

using namespace dictmlm;

namespace {

// Deterministic test values in [-2, 2], distinct enough to make gradient
// routing mistakes visible.
std::vector<Real> ramp(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x74657374ULL));
  std::vector<Real> v(n);
  for (auto& x : v) x = Real(rng.uniform() * 4.0 - 2.0);
  return v;
}

// Scalar loss sum(y * w) with a fixed non-grad weight tensor, so every
// element of y sees a distinct upstream gradient.
Tensor weighted_sum(const Tensor& y, const std::vector<Real>& w) {
  return sum_all(mul(y, Tensor::from_vector(y.shape(), w)));
}

std::vector<Real> weights_for(const Tensor& y, std::uint64_t seed) {
  return ramp(y.size(), seed);
}

bool message_mentions(const std::exception& e, std::initializer_list<std::string> parts) {
  std::string what = e.what();
  for (const auto& p : parts) {
    if (what.find(p) == std::string::npos) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("softmax rows sum to one") {
  std::vector<Real> v = ramp(4 * 7, 11);
  v[3] = 900;   // large magnitudes must not overflow the normalizer
  v[20] = -900;
  Tensor x = Tensor::from_vector({4, 7}, v);
  Tensor p = softmax_last(x);
  for (std::size_t r = 0; r < 4; ++r) {
    Real s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      Real pv = p.value()[r * 7 + c];
      CHECK(pv >= 0);
      s += pv;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  // Shifting a row by a constant leaves its softmax unchanged.
  std::vector<Real> shifted = v;
  for (std::size_t c = 0; c < 7; ++c) shifted[7 + c] += 123.5;
  Tensor q = softmax_last(Tensor::from_vector({4, 7}, shifted));
  for (std::size_t c = 0; c < 7; ++c) {
    CHECK(q.value()[7 + c] == doctest::Approx(p.value()[7 + c]).epsilon(1e-12));
  }
}

TEST_CASE("gelu fixes zero and matches its tanh form") {
  Tensor y = gelu(Tensor::from_vector({3}, {Real(0), Real(1), Real(-1)}));
  CHECK(y.value()[0] == 0.0);
  auto ref = [](double v) {
    double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
    return 0.5 * v * (1.0 + std::tanh(u));
  };
  CHECK(y.value()[1] == doctest::Approx(ref(1.0)).epsilon(1e-12));
  CHECK(y.value()[2] == doctest::Approx(ref(-1.0)).epsilon(1e-12));
}

TEST_CASE("layer norm of a constant row returns the bias") {
  Tensor gain = Tensor::from_vector({4}, {Real(1.5), Real(-2), Real(0.25), Real(3)});
  Tensor bias = Tensor::from_vector({4}, {Real(0.5), Real(-1), Real(2), Real(0)});
  Tensor x = Tensor::full({2, 4}, Real(7));  // zero variance rows
  Tensor y = layer_norm(x, gain, bias);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(y.value()[r * 4 + c] == doctest::Approx(bias.value()[c]).epsilon(1e-9));
    }
  }
}

TEST_CASE("matmul backward matches independent central differences") {
  const std::size_t m = 4, k = 5, n = 3;
  std::vector<Real> av = ramp(m * k, 21);
  std::vector<Real> bv = ramp(k * n, 22);
  std::vector<Real> w = ramp(m * n, 23);

  // Plain triple-loop evaluation, written without the tensor library.
  auto loss_at = [&](const std::vector<Real>& a, const std::vector<Real>& b) {
    double loss = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t x = 0; x < k; ++x) acc += double(a[i * k + x]) * double(b[x * n + j]);
        loss += acc * double(w[i * n + j]);
      }
    }
    return loss;
  };

  Tensor a = Tensor::from_vector({m, k}, av, true);
  Tensor b = Tensor::from_vector({k, n}, bv, true);
  weighted_sum(matmul(a, b), w).backward();

  const double h = 1e-5;
  double max_rel = 0;
  auto probe = [&](std::vector<Real> base, std::size_t idx, bool first, Real analytic) {
    std::vector<Real> lo = base, hi = base;
    lo[idx] -= Real(h);
    hi[idx] += Real(h);
    double numeric = first ? (loss_at(hi, bv) - loss_at(lo, bv)) / (2 * h)
                           : (loss_at(av, hi) - loss_at(av, lo)) / (2 * h);
    double rel = std::abs(double(analytic) - numeric) /
                 std::max(std::abs(double(analytic)) + std::abs(numeric), 1e-6);
    max_rel = std::max(max_rel, rel);
  };
  for (std::size_t i = 0; i < av.size(); ++i) probe(av, i, true, a.grad()[i]);
  for (std::size_t i = 0; i < bv.size(); ++i) probe(bv, i, false, b.grad()[i]);
  CHECK(max_rel < 1e-6);

  // The built-in checker must agree on the same function.
  auto f = [&] { return weighted_sum(matmul(a, b), w); };
  GradCheckResult r = grad_check(f, {a, b}, 1e-5);
  CHECK(r.checked == av.size() + bv.size());
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad check confirms the exact gradient of sum of squares") {
  Tensor x = Tensor::from_vector({6}, ramp(6, 31), true);
  sum_all(mul(x, x)).backward();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(x.grad()[i] == 2 * x.value()[i]);  // x + x is exact in IEEE
  }
  auto f = [&] { return sum_all(mul(x, x)); };
  CHECK(grad_check(f, {x}, 1e-5).max_rel_error < 1e-9);
}

TEST_CASE("broadcast add accumulates the suffix gradient over leading axes") {
  std::vector<Real> av = ramp(2 * 3 * 4, 41);
  std::vector<Real> bv = ramp(4, 42);
  std::vector<Real> w = ramp(2 * 3 * 4, 43);

  Tensor a = Tensor::from_vector({2, 3, 4}, av, true);
  Tensor b = Tensor::from_vector({4}, bv, true);
  weighted_sum(add(a, b), w).backward();

  // Reference: materialize the broadcast by tiling b and add same-shape.
  std::vector<Real> tiled(2 * 3 * 4);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 4; ++c) tiled[r * 4 + c] = bv[c];
  }
  Tensor a2 = Tensor::from_vector({2, 3, 4}, av, true);
  Tensor bt = Tensor::from_vector({2, 3, 4}, tiled, true);
  weighted_sum(add(a2, bt), w).backward();

  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.grad()[i] == a2.grad()[i]);
  for (std::size_t c = 0; c < 4; ++c) {
    double folded = 0;
    for (std::size_t r = 0; r < 6; ++r) folded += bt.grad()[r * 4 + c];
    CHECK(b.grad()[c] == doctest::Approx(folded).epsilon(1e-12));
  }
}

TEST_CASE("concat and slice route gradients to the right columns") {
  std::vector<Real> w = ramp(2 * 5, 51);
  Tensor a = Tensor::from_vector({2, 3}, ramp(6, 52), true);
  Tensor b = Tensor::from_vector({2, 2}, ramp(4, 53), true);
  Tensor y = concat_last(a, b);
  REQUIRE((y.shape() == Shape{2, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.value()[r * 5 + c] == a.value()[r * 3 + c]);
    for (std::size_t c = 0; c < 2; ++c) CHECK(y.value()[r * 5 + 3 + c] == b.value()[r * 2 + c]);
  }
  weighted_sum(y, w).backward();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(a.grad()[r * 3 + c] == w[r * 5 + c]);
    for (std::size_t c = 0; c < 2; ++c) CHECK(b.grad()[r * 2 + c] == w[r * 5 + 3 + c]);
  }

  Tensor x = Tensor::from_vector({2, 5}, ramp(10, 54), true);
  Tensor s = slice_last(x, 1, 4);
  REQUIRE((s.shape() == Shape{2, 3}));
  std::vector<Real> sw = ramp(6, 55);
  weighted_sum(s, sw).backward();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      Real expected = (c >= 1 && c < 4) ? sw[r * 3 + (c - 1)] : Real(0);
      CHECK(x.grad()[r * 5 + c] == expected);
    }
  }
}

TEST_CASE("a second backward pass doubles leaf gradients only") {
  Tensor x = Tensor::from_vector({3}, ramp(3, 61), true);
  Tensor loss = sum_all(mul(x, x));
  loss.backward();
  std::vector<Real> once = x.grad();
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2 * once[i]);
}

TEST_CASE("shape mismatches name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS((void)matmul(a, b), UsageError);
  try {
    (void)matmul(a, b);
    FAIL("matmul accepted incompatible shapes");
  } catch (const UsageError& e) {
    CHECK(message_mentions(e, {"matmul", shape_str(a.shape()), shape_str(b.shape())}));
  }

  Tensor c = Tensor::zeros({3});
  try {
    (void)mul(a, c);
    FAIL("mul accepted mismatched shapes");
  } catch (const UsageError& e) {
    CHECK(message_mentions(e, {"mul", shape_str(a.shape()), shape_str(c.shape())}));
  }

  try {
    (void)add(c, a);  // [2,3] is not a trailing suffix of [3]
    FAIL("add accepted a non-suffix operand");
  } catch (const UsageError& e) {
    CHECK(message_mentions(e, {"add", shape_str(a.shape()), shape_str(c.shape())}));
  }
}

TEST_CASE("cross entropy matches hand-computed values") {
  // Uniform logits over V classes cost exactly ln V.
  Tensor uniform = Tensor::zeros({4, 7});
  Real ce = cross_entropy_mean(uniform, {0, 3, 6, 2}).item();
  CHECK(std::abs(ce - std::log(7.0)) <= 1e-12);

  // Two rows, V = 3, worked by hand from the definition.
  Tensor logits = Tensor::from_vector({2, 3}, {1, 2, 3, 0, 0, 5}, true);
  std::vector<std::size_t> targets = {2, 0};
  double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  double z1 = std::exp(0.0) + std::exp(0.0) + std::exp(5.0);
  double expected = 0.5 * ((std::log(z0) - 3.0) + (std::log(z1) - 0.0));
  Tensor loss = cross_entropy_mean(logits, targets);
  CHECK(std::abs(loss.item() - expected) <= 1e-12);

  // Gradient is (softmax - onehot) / rows.
  loss.backward();
  std::vector<double> z = {z0, z1};
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double p = std::exp(double(logits.value()[r * 3 + c])) / z[r];
      double g = (p - (targets[r] == c ? 1.0 : 0.0)) / 2.0;
      CHECK(logits.grad()[r * 3 + c] == doctest::Approx(g).epsilon(1e-12));
    }
  }
}

TEST_CASE("dropout at p zero is the identity and draws nothing") {
  std::vector<Real> v = ramp(8, 71);
  Tensor x = Tensor::from_vector({8}, v);
  Rng used(99), fresh(99);
  Tensor y = dropout(x, 0.0, used);
  CHECK(y.impl() == x.impl());
  CHECK(used.uniform() == fresh.uniform());  // the stream was not consumed
}

TEST_CASE("dropout masks deterministically and scales kept values") {
  std::vector<Real> v = ramp(64, 72);
  std::vector<Real> w = ramp(64, 73);
  Tensor x = Tensor::from_vector({64}, v, true);
  Rng r1(7), r2(7);
  Tensor y1 = dropout(x, 0.5, r1);
  Tensor y2 = dropout(Tensor::from_vector({64}, v), 0.5, r2);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(y1.value()[i] == y2.value()[i]);  // same seed, same mask
    if (y1.value()[i] != 0) {
      CHECK(y1.value()[i] == doctest::Approx(2 * v[i]).epsilon(1e-12));
      ++kept;
    }
  }
  CHECK(kept > 8);       // p = .5 on 64 draws cannot plausibly wipe
  CHECK(kept < 56);      // or keep nearly everything
  weighted_sum(y1, w).backward();
  for (std::size_t i = 0; i < 64; ++i) {
    Real expected = y1.value()[i] != 0 ? 2 * w[i] : Real(0);
    CHECK(x.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("rows gathers by id and scatter-adds duplicate gradients") {
  Tensor table = Tensor::from_vector({5, 3}, ramp(15, 81), true);
  std::vector<std::size_t> ids = {1, 3, 1};
  Tensor picked = rows(table, ids);
  REQUIRE((picked.shape() == Shape{3, 3}));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(picked.value()[r * 3 + c] == table.value()[ids[r] * 3 + c]);
    }
  }
  std::vector<Real> w = ramp(9, 82);
  weighted_sum(picked, w).backward();
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(table.grad()[1 * 3 + c] == w[0 * 3 + c] + w[2 * 3 + c]);  // id 1 twice
    CHECK(table.grad()[3 * 3 + c] == w[1 * 3 + c]);
    CHECK(table.grad()[0 * 3 + c] == 0);
    CHECK(table.grad()[2 * 3 + c] == 0);
    CHECK(table.grad()[4 * 3 + c] == 0);
  }
}

TEST_CASE("split heads and merge heads are inverse layouts") {
  const std::size_t batch = 2, seq = 3, heads = 2, h = 6, dh = h / heads;
  std::vector<Real> v = ramp(batch * seq * h, 91);
  Tensor x = Tensor::from_vector({batch * seq, h}, v, true);
  Tensor s = split_heads(x, batch, seq, heads);
  REQUIRE((s.shape() == Shape{batch * heads, seq, dh}));
  // Element (b, s, a*dh + j) must land at ((b*heads + a), s, j).
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq; ++t) {
      for (std::size_t a = 0; a < heads; ++a) {
        for (std::size_t j = 0; j < dh; ++j) {
          CHECK(s.value()[((b * heads + a) * seq + t) * dh + j] ==
                v[(b * seq + t) * h + a * dh + j]);
        }
      }
    }
  }
  Tensor back = merge_heads(s, batch, seq, heads);
  REQUIRE(back.shape() == x.shape());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.value()[i] == v[i]);

  std::vector<Real> w = ramp(v.size(), 92);
  weighted_sum(back, w).backward();
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(x.grad()[i] == w[i]);
}

TEST_CASE("batched matmul agrees with per-slice matmul") {
  const std::size_t B = 3, m = 2, k = 4, n = 3;
  std::vector<Real> av = ramp(B * m * k, 101);
  std::vector<Real> bv = ramp(B * k * n, 102);
  Tensor a = Tensor::from_vector({B, m, k}, av, true);
  Tensor b = Tensor::from_vector({B, k, n}, bv, true);
  Tensor y = batched_matmul(a, b);
  REQUIRE((y.shape() == Shape{B, m, n}));
  for (std::size_t s = 0; s < B; ++s) {
    Tensor as = Tensor::from_vector(
        {m, k}, std::vector<Real>(av.begin() + s * m * k, av.begin() + (s + 1) * m * k));
    Tensor bs = Tensor::from_vector(
        {k, n}, std::vector<Real>(bv.begin() + s * k * n, bv.begin() + (s + 1) * k * n));
    Tensor ys = matmul(as, bs);
    for (std::size_t i = 0; i < m * n; ++i) {
      CHECK(y.value()[s * m * n + i] == doctest::Approx(ys.value()[i]).epsilon(1e-12));
    }
  }
  auto f = [&] { return weighted_sum(batched_matmul(a, b), weights_for(y, 103)); };
  CHECK(grad_check(f, {a, b}, 1e-5).max_rel_error < 1e-6);

  // The transposed variant contracts against rows of b.
  Tensor bt = Tensor::from_vector({B, n, k}, ramp(B * n * k, 104), true);
  Tensor ynt = batched_matmul_nt(a, bt);
  REQUIRE((ynt.shape() == Shape{B, m, n}));
  auto fnt = [&] { return weighted_sum(batched_matmul_nt(a, bt), weights_for(ynt, 105)); };
  CHECK(grad_check(fnt, {a, bt}, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("transpose swaps axes and routes gradients back") {
  Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor t = transpose(a);
  REQUIRE((t.shape() == Shape{3, 2}));
  CHECK((t.value() == std::vector<Real>{1, 4, 2, 5, 3, 6}));
  std::vector<Real> w = ramp(6, 111);
  weighted_sum(t, w).backward();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.grad()[i * 3 + j] == w[j * 2 + i]);
  }
}

TEST_CASE("smooth ops pass finite-difference spot checks") {
  Tensor x = Tensor::from_vector({3, 4}, ramp(12, 121), true);
  Tensor gain = Tensor::from_vector({4}, ramp(4, 122), true);
  Tensor bias = Tensor::from_vector({4}, ramp(4, 123), true);
  auto f = [&] {
    Tensor y = layer_norm(gelu(x), gain, bias);
    return weighted_sum(softmax_last(y), weights_for(y, 124));
  };
  CHECK(grad_check(f, {x, gain, bias}, 1e-5).max_rel_error < 1e-5);

  Tensor a = Tensor::from_vector({3, 4}, ramp(12, 125), true);
  Tensor b = Tensor::from_vector({5, 4}, ramp(20, 126), true);
  auto fnt = [&] {
    Tensor y = matmul_nt(a, b);
    return weighted_sum(y, weights_for(y, 127));
  };
  CHECK(grad_check(fnt, {a, b}, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("no-grad mode records no graph") {
  Tensor x = Tensor::from_vector({3}, {1, 2, 3}, true);
  NoGradGuard guard;
  Tensor y = sum_all(mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(y.backward(), UsageError);
}

TEST_CASE("scale and sum_all compose") {
  Tensor x = Tensor::from_vector({4}, {1, 2, 3, 4}, true);
  Tensor y = sum_all(scale(x, Real(0.5)));
  CHECK(y.item() == doctest::Approx(5.0).epsilon(1e-12));
  y.backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == Real(0.5));
}
