// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0

// Every differentiable op gets its gradient checked against central
// differences; forwards are checked against hand-worked arithmetic or an
// independent re-computation in long double.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mms/autodiff.hpp"
#include "mms/tensor.hpp"

using namespace mms;

namespace {
constexpr double kTol = 1e-4;

// Reduce any op output to a scalar through fixed pseudo-random weights so
// the finite-difference probe exercises every output coordinate.
Tensor weighted_sum(const Tensor& t, Tape* tape, std::uint64_t seed = 77) {
  const Tensor w = Tensor::uniform(t.shape(), 0.25, 1.75, seed);
  return sum_all(mul(t, w, tape), tape);
}
}  // namespace

TEST_CASE("matmul forward matches hand arithmetic", "[autodiff]") {
  // [1 2 3; 4 5 6] * [7 8; 9 10; 11 12] = [58 64; 139 154]
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == std::vector<int>({2, 2}));
  REQUIRE(c.at(0, 0) == 58.0);
  REQUIRE(c.at(0, 1) == 64.0);
  REQUIRE(c.at(1, 0) == 139.0);
  REQUIRE(c.at(1, 1) == 154.0);

  REQUIRE_THROWS_AS(matmul(a, a), mms::ShapeError);
  REQUIRE_THROWS_AS(matmul(a, Tensor({2}, {1, 2})), mms::ShapeError);
}

TEST_CASE("matmul gradients pass finite differences", "[autodiff]") {
  const Tensor a = Tensor::uniform({3, 4}, -1, 1, 1);
  const Tensor b = Tensor::uniform({4, 5}, -1, 1, 2);
  // d/dA of sum(w .* (A*B))
  REQUIRE(finite_diff_check(
              [&](const Tensor& x, Tape* t) {
                return weighted_sum(matmul(x, b, t), t);
              },
              a) < kTol);
  // d/dB
  REQUIRE(finite_diff_check(
              [&](const Tensor& x, Tape* t) {
                return weighted_sum(matmul(a, x, t), t);
              },
              b) < kTol);
}

TEST_CASE("elementwise forwards are exact", "[autodiff]") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 2}, {10, 20, 30, 40});
  const Tensor s = add(a, b);
  const Tensor d = sub(a, b);
  const Tensor m = mul(a, b);
  const Tensor k = scale(a, -2.0);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(s.at(i) == a.at(i) + b.at(i));
    REQUIRE(d.at(i) == a.at(i) - b.at(i));
    REQUIRE(m.at(i) == a.at(i) * b.at(i));
    REQUIRE(k.at(i) == -2.0 * a.at(i));
  }
  REQUIRE_THROWS_AS(add(a, Tensor({4}, {1, 2, 3, 4})), mms::ShapeError);
}

TEST_CASE("elementwise gradients pass finite differences", "[autodiff]") {
  const Tensor a = Tensor::uniform({3, 3}, -2, 2, 3);
  const Tensor b = Tensor::uniform({3, 3}, -2, 2, 4);
  for (auto kind : {0, 1, 2, 3}) {
    auto apply = [&](const Tensor& x, Tape* t) {
      switch (kind) {
        case 0: return add(x, b, t);
        case 1: return sub(x, b, t);
        case 2: return mul(x, b, t);
        default: return scale(x, 1.7, t);
      }
    };
    REQUIRE(finite_diff_check(
                [&](const Tensor& x, Tape* t) {
                  return weighted_sum(apply(x, t), t);
                },
                a) < kTol);
  }
  // second operand of mul
  REQUIRE(finite_diff_check(
              [&](const Tensor& x, Tape* t) {
                return weighted_sum(mul(a, x, t), t);
              },
              b) < kTol);
}

TEST_CASE("x+x+x equals 3*x bitwise", "[autodiff]") {
  const Tensor x = Tensor::uniform({64}, -5, 5, 12);
  const Tensor lhs = add(add(x, x), x);
  const Tensor rhs = scale(x, 3.0);
  for (int i = 0; i < 64; ++i) REQUIRE(lhs.at(i) == rhs.at(i));
}

TEST_CASE("add_row_bias forward and gradients", "[autodiff]") {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3}, {10, 20, 30});
  const Tensor y = add_row_bias(x, b);
  REQUIRE(y.at(0, 0) == 11.0);
  REQUIRE(y.at(1, 2) == 36.0);
  REQUIRE_THROWS_AS(add_row_bias(x, Tensor({2}, {1, 2})), mms::ShapeError);

  const Tensor xr = Tensor::uniform({4, 3}, -1, 1, 5);
  const Tensor br = Tensor::uniform({3}, -1, 1, 6);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(add_row_bias(v, br, t), t);
              },
              xr) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(add_row_bias(xr, v, t), t);
              },
              br) < kTol);
  // bias gradient of plain sum is the row count, exactly
  Tape tape;
  Tensor bw = tape.watch(br);
  Tensor loss = sum_all(add_row_bias(xr, bw, &tape), &tape);
  const auto g = tape.backward(loss).at(bw);
  for (double v : g) REQUIRE(v == 4.0);
}

TEST_CASE("layer_norm normalizes rows and passes finite differences",
          "[autodiff]") {
  const int d = 8;
  const Tensor x = Tensor::uniform({3, d}, -4, 4, 7);
  const Tensor gamma = Tensor::constant({d}, 1.0);
  const Tensor beta = Tensor::zeros({d});
  const Tensor y = layer_norm(x, gamma, beta, 1e-5);
  for (int r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < d; ++c) mean += y.at(r, c);
    mean /= d;
    for (int c = 0; c < d; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= d;
    REQUIRE(std::abs(mean) < 1e-12);
    REQUIRE(std::abs(var - 1.0) < 1e-3);  // eps slightly shrinks it
  }
  REQUIRE_THROWS_AS(layer_norm(x, gamma, beta, 0.0), mms::RangeError);
  REQUIRE_THROWS_AS(layer_norm(x, Tensor({2}, {1, 1}), beta), mms::ShapeError);

  const Tensor g2 = Tensor::uniform({d}, 0.5, 1.5, 8);
  const Tensor b2 = Tensor::uniform({d}, -0.5, 0.5, 9);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(layer_norm(v, g2, b2, 1e-5, t), t);
              },
              x) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(layer_norm(x, v, b2, 1e-5, t), t);
              },
              g2) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(layer_norm(x, g2, v, 1e-5, t), t);
              },
              b2) < kTol);
}

TEST_CASE("gelu matches its asymptotes and passes finite differences",
          "[autodiff]") {
  const Tensor x({5}, {-10.0, -1.0, 0.0, 1.0, 10.0});
  const Tensor y = gelu(x);
  REQUIRE(y.at(2) == 0.0);
  REQUIRE(std::abs(y.at(4) - 10.0) < 1e-6);
  REQUIRE(std::abs(y.at(0)) < 1e-6);
  // gelu(1) with the tanh approximation, recomputed independently
  const double u = 0.7978845608 * (1.0 + 0.044715);
  const double expect = 0.5 * (1.0 + std::tanh(u));
  REQUIRE(std::abs(y.at(3) - expect) < 1e-15);

  const Tensor xr = Tensor::uniform({4, 4}, -3, 3, 10);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(gelu(v, t), t);
              },
              xr) < kTol);
}

TEST_CASE("softmax_rows: rows sum to one, shift invariant, finite diff",
          "[autodiff]") {
  const Tensor x = Tensor::uniform({3, 6}, -5, 5, 11);
  const Tensor y = softmax_rows(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) {
      REQUIRE(y.at(r, c) > 0.0);
      s += y.at(r, c);
    }
    REQUIRE(std::abs(s - 1.0) < 1e-12);
  }
  // adding a constant per row must not change anything beyond roundoff
  std::vector<double> shifted(x.vec());
  for (auto& v : shifted) v += 123.0;
  const Tensor y2 = softmax_rows(Tensor({3, 6}, shifted));
  for (int i = 0; i < 18; ++i) REQUIRE(std::abs(y.at(i) - y2.at(i)) < 1e-12);

  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(softmax_rows(v, t), t);
              },
              x) < kTol);
}

TEST_CASE("gather, scatter: forward semantics and gradients", "[autodiff]") {
  const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor g = gather_rows(x, {2, 0, 2});
  REQUIRE(g.shape() == std::vector<int>({3, 2}));
  REQUIRE(g.at(0, 0) == 5.0);
  REQUIRE(g.at(1, 1) == 2.0);
  REQUIRE(g.at(2, 0) == 5.0);
  REQUIRE_THROWS_AS(gather_rows(x, {3}), mms::IndexError);
  REQUIRE_THROWS_AS(gather_rows(x, {}), mms::ShapeError);

  const Tensor s = scatter_rows(x, {4, 1, 0}, 5);
  REQUIRE(s.shape() == std::vector<int>({5, 2}));
  REQUIRE(s.at(4, 0) == 1.0);
  REQUIRE(s.at(1, 0) == 3.0);
  REQUIRE(s.at(0, 1) == 6.0);
  REQUIRE(s.at(2, 0) == 0.0);
  REQUIRE(s.at(3, 1) == 0.0);
  // duplicate targets accumulate
  const Tensor dup = scatter_rows(x, {1, 1, 1}, 2);
  REQUIRE(dup.at(1, 0) == 9.0);
  REQUIRE(dup.at(0, 0) == 0.0);
  REQUIRE_THROWS_AS(scatter_rows(x, {0, 1}, 5), mms::ShapeError);
  REQUIRE_THROWS_AS(scatter_rows(x, {0, 1, 5}, 5), mms::IndexError);

  // scatter then gather with unique indices is the identity
  const std::vector<int> idx{3, 0, 2};
  const Tensor rt = gather_rows(scatter_rows(x, idx, 4), idx);
  for (int i = 0; i < 6; ++i) REQUIRE(rt.at(i) == x.at(i));

  const Tensor xr = Tensor::uniform({4, 3}, -1, 1, 13);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(gather_rows(v, {1, 3, 1, 0}, t), t);
              },
              xr) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return weighted_sum(scatter_rows(v, {5, 0, 2, 2}, 6, t), t);
              },
              xr) < kTol);
}

TEST_CASE("transpose, slice_cols, concat_rows", "[autodiff]") {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor xt = transpose(x);
  REQUIRE(xt.shape() == std::vector<int>({3, 2}));
  REQUIRE(xt.at(0, 1) == 4.0);
  REQUIRE(xt.at(2, 0) == 3.0);

  const Tensor sl = slice_cols(x, 1, 3);
  REQUIRE(sl.shape() == std::vector<int>({2, 2}));
  REQUIRE(sl.at(0, 0) == 2.0);
  REQUIRE(sl.at(1, 1) == 6.0);
  REQUIRE_THROWS_AS(slice_cols(x, 2, 2), mms::IndexError);
  REQUIRE_THROWS_AS(slice_cols(x, 0, 4), mms::IndexError);

  const Tensor v({4}, {9, 8, 7, 6});
  const Tensor vs = slice_cols(v, 1, 3);
  REQUIRE(vs.rank() == 1);
  REQUIRE(vs.at(0) == 8.0);

  const Tensor c = concat_rows(x, Tensor({1, 3}, {7, 8, 9}));
  REQUIRE(c.shape() == std::vector<int>({3, 3}));
  REQUIRE(c.at(2, 2) == 9.0);
  REQUIRE_THROWS_AS(concat_rows(x, Tensor({1, 2}, {1, 2})), mms::ShapeError);

  const Tensor xr = Tensor::uniform({3, 5}, -1, 1, 14);
  const Tensor yr = Tensor::uniform({2, 5}, -1, 1, 15);
  REQUIRE(finite_diff_check(
              [&](const Tensor& t2, Tape* t) {
                return weighted_sum(transpose(t2, t), t);
              },
              xr) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& t2, Tape* t) {
                return weighted_sum(slice_cols(t2, 1, 4, t), t);
              },
              xr) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& t2, Tape* t) {
                return weighted_sum(concat_rows(t2, yr, t), t);
              },
              xr) < kTol);
  REQUIRE(finite_diff_check(
              [&](const Tensor& t2, Tape* t) {
                return weighted_sum(concat_rows(xr, t2, t), t);
              },
              yr) < kTol);
}

TEST_CASE("sum_all and its gradient", "[autodiff]") {
  const Tensor x({2, 2}, {1, 2, 3, 4});
  REQUIRE(sum_all(x).at(0) == 10.0);
  Tape tape;
  Tensor xw = tape.watch(x);
  const auto g = tape.backward(sum_all(xw, &tape)).at(xw);
  for (double v : g) REQUIRE(v == 1.0);
}

TEST_CASE("softmax_xent_rows against an independent oracle", "[autodiff]") {
  const Tensor logits = Tensor::uniform({4, 7}, -3, 3, 16);
  const std::vector<int> targets{2, 0, 6, 3};
  const Tensor loss = softmax_xent_rows(logits, targets);

  long double total = 0;
  for (int r = 0; r < 4; ++r) {
    long double m = logits.at(r, 0);
    for (int c = 1; c < 7; ++c) m = std::max<long double>(m, logits.at(r, c));
    long double z = 0;
    for (int c = 0; c < 7; ++c) z += expl(logits.at(r, c) - m);
    total += (m + logl(z)) - logits.at(r, targets[std::size_t(r)]);
  }
  REQUIRE(std::abs(loss.at(0) - double(total / 4)) < 1e-12);

  // uniform logits cost log(C)
  const Tensor flat = Tensor::constant({3, 5}, 0.42);
  REQUIRE(std::abs(softmax_xent_rows(flat, {0, 4, 2}).at(0) - std::log(5.0)) <
          1e-12);

  // a hugely confident correct prediction costs ~0
  Tensor conf({1, 3}, {50.0, 0.0, 0.0});
  REQUIRE(softmax_xent_rows(conf, {0}).at(0) < 1e-12);

  REQUIRE_THROWS_AS(softmax_xent_rows(logits, {0, 1}), mms::ShapeError);
  REQUIRE_THROWS_AS(softmax_xent_rows(logits, {0, 1, 2, 7}), mms::IndexError);

  REQUIRE(finite_diff_check(
              [&](const Tensor& v, Tape* t) {
                return softmax_xent_rows(v, targets, t);
              },
              logits) < kTol);
}

TEST_CASE("weight sharing accumulates into one leaf", "[autodiff]") {
  // y = x.x + 3x => dy/dx = 2x + 3
  const Tensor x = Tensor::uniform({6}, -2, 2, 17);
  Tape tape;
  Tensor xw = tape.watch(x);
  Tensor y = sum_all(add(mul(xw, xw, &tape), scale(xw, 3.0, &tape), &tape), &tape);
  const auto g = tape.backward(y).at(xw);
  for (int i = 0; i < 6; ++i)
    REQUIRE(std::abs(g[std::size_t(i)] - (2 * x.at(i) + 3)) < 1e-12);
}

TEST_CASE("a shared subexpression is visited once, not once per use",
          "[autodiff]") {
  // z = y + y with y = x.x gives dz/dx = 4x; a tape that re-walked y per
  // use would produce 8x.
  const Tensor x = Tensor::uniform({5}, 0.5, 2, 18);
  Tape tape;
  Tensor xw = tape.watch(x);
  Tensor y = mul(xw, xw, &tape);
  Tensor z = sum_all(add(y, y, &tape), &tape);
  const auto g = tape.backward(z).at(xw);
  for (int i = 0; i < 5; ++i)
    REQUIRE(std::abs(g[std::size_t(i)] - 4 * x.at(i)) < 1e-12);
}

TEST_CASE("backward rejects bad losses", "[autodiff]") {
  Tape tape;
  Tensor x = tape.watch(Tensor::uniform({3}, -1, 1, 19));
  Tensor vec = scale(x, 2.0, &tape);
  REQUIRE_THROWS_AS(tape.backward(vec), mms::InvalidLoss);
  const Tensor constant = Tensor::scalar(1.0);
  REQUIRE_THROWS_AS(tape.backward(constant), mms::InvalidLoss);
}

TEST_CASE("tensors from an old tape act as constants on a new one",
          "[autodiff]") {
  Tensor leftover;
  {
    Tape old;
    leftover = scale(old.watch(Tensor::scalar(2.0)), 3.0, &old);
  }
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(5.0));
  Tensor y = sum_all(mul(x, leftover, &tape), &tape);
  const auto grads = tape.backward(y);
  REQUIRE(grads.at(x)[0] == 6.0);
  REQUIRE_FALSE(grads.contains(leftover));
}

TEST_CASE("untouched leaves read back as zeros", "[autodiff]") {
  Tape tape;
  Tensor a = tape.watch(Tensor::scalar(1.0));
  Tensor b = tape.watch(Tensor::constant({3}, 2.0));
  Tensor y = scale(a, 4.0, &tape);
  const auto g = tape.backward(y);
  REQUIRE(g.at(a)[0] == 4.0);
  REQUIRE_FALSE(g.contains(b));
  const auto zb = g.at_or_zeros(b);
  REQUIRE(zb.size() == 3);
  for (double v : zb) REQUIRE(v == 0.0);
  REQUIRE_THROWS_AS(g.at(b), mms::IndexError);
}

TEST_CASE("finite_diff_check validates eps", "[autodiff]") {
  const Tensor x = Tensor::scalar(1.0);
  auto f = [](const Tensor& v, Tape* t) { return sum_all(v, t); };
  REQUIRE_THROWS_AS(finite_diff_check(f, x, 0.0), mms::InvalidEps);
  REQUIRE_THROWS_AS(finite_diff_check(f, x, 1e-2), mms::InvalidEps);
  REQUIRE_THROWS_AS(finite_diff_check(f, x, 1e-8), mms::InvalidEps);
  REQUIRE_NOTHROW(finite_diff_check(f, x, 1e-5));
}

TEST_CASE("finite_diff_check_sampled agrees with the full check",
          "[autodiff]") {
  const Tensor x = Tensor::uniform({4, 4}, -1, 1, 20);
  auto f = [](const Tensor& v, Tape* t) {
    return sum_all(gelu(mul(v, v, t), t), t);
  };
  const double full = finite_diff_check(f, x);
  std::vector<std::size_t> all(16);
  for (std::size_t i = 0; i < 16; ++i) all[i] = i;
  REQUIRE(finite_diff_check_sampled(f, x, all) == full);
  REQUIRE(finite_diff_check_sampled(f, x, {0, 5, 15}) <= full);
  REQUIRE_THROWS_AS(finite_diff_check_sampled(f, x, {16}), mms::IndexError);
  REQUIRE_THROWS_AS(finite_diff_check_sampled(f, x, {}), mms::RangeError);
}

TEST_CASE("a composite expression differentiates end to end", "[autodiff]") {
  // small transformer-ish pipeline: LN -> matmul -> gelu -> softmax -> xent
  const int n = 5, d = 6, c = 4;
  const Tensor x = Tensor::uniform({n, d}, -1, 1, 21);
  const Tensor w = Tensor::uniform({d, c}, -0.5, 0.5, 22);
  const Tensor gma = Tensor::constant({d}, 1.0);
  const Tensor bta = Tensor::zeros({d});
  const std::vector<int> targets{0, 1, 2, 3, 0};
  auto net = [&](const Tensor& ww) {
    return [&, ww](const Tensor& v, Tape* t) {
      Tensor h = layer_norm(v, gma, bta, 1e-5, t);
      Tensor z = gelu(matmul(h, ww, t), t);
      return softmax_xent_rows(z, targets, t);
    };
  };
  REQUIRE(finite_diff_check(net(w), x) < kTol);
  // and with respect to the weights
  auto byw = [&](const Tensor& v, Tape* t) {
    Tensor h = layer_norm(x, gma, bta, 1e-5, t);
    Tensor z = gelu(matmul(h, v, t), t);
    return softmax_xent_rows(z, targets, t);
  };
  REQUIRE(finite_diff_check(byw, w) < kTol);
}
