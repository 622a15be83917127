// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "ssp/errors.hpp"
#include "ssp/grad_check.hpp"
#include "ssp/ops.hpp"
#include "ssp/serialize.hpp"
#include "ssp/tape.hpp"

using namespace ssp;
using ssp::test::random_tensor;

namespace {

Tensor t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);

  t.zero_grad();
  CHECK_FALSE(t.has_grad());  // frozen tensors never hold a grad
  CHECK_THROWS_AS(t.accumulate_grad(std::vector<double>(6, 1.0)), ContractError);

  t.set_requires_grad(true);
  t.zero_grad();
  REQUIRE(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  t.set_requires_grad(false);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul examples") {
  Tape tape;
  Var eye = tape.constant(t2(2, 2, {1, 0, 0, 1}));
  Var m = tape.constant(t2(2, 2, {1, 2, 3, 4}));
  CHECK(ops::matmul(eye, m).value().bitwise_equal(m.value()));
  Var z = ops::matmul(eye, tape.constant(Tensor({2, 3})));
  CHECK(z.shape() == Shape{2, 3});
  for (double x : z.value().data()) CHECK(x == 0.0);

  try {
    ops::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }

  const Tensor b = random_tensor({4, 2}, 11);
  const double err = grad_check(
      [&](Tape& t, Var a) { return ops::sum(ops::matmul(a, t.constant(b))); }, random_tensor({3, 4}, 10), 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise examples") {
  Tape tape;
  Var a = tape.constant(Tensor({3}, {1, 2, 3}));
  Var zero = tape.constant(Tensor({3}, 0.0));
  for (double x : ops::mul(a, zero).value().data()) CHECK(x == 0.0);
  CHECK(ops::silu(tape.constant(Tensor::scalar(0.0))).value()[0] == 0.0);
  CHECK(ops::softplus(tape.constant(Tensor::scalar(0.0))).value()[0] == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // Right-aligned trailing-1 broadcast.
  Var m = tape.constant(t2(2, 3, {1, 2, 3, 4, 5, 6}));
  Var col = tape.constant(t2(2, 1, {10, 20}));
  const Tensor s = ops::add(m, col).value();
  CHECK(s.at(0, 2) == 13.0);
  CHECK(s.at(1, 0) == 24.0);
  Var row = tape.constant(Tensor({3}, {1, 1, 1}));
  CHECK(ops::add(m, row).value().at(1, 2) == 7.0);
  CHECK_THROWS_AS(ops::add(m, tape.constant(Tensor({2}, 0.0))), DimensionError);
  CHECK_THROWS_AS(ops::add(m, tape.constant(t2(3, 1, {0, 0, 0}))), DimensionError);
}

TEST_CASE("softmax examples and normalization") {
  Tape tape;
  auto sm = [&](std::vector<double> v) { return ops::softmax(tape.constant(Tensor({v.size()}, v)), 0).value(); };
  const Tensor a = sm({0, 0});
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  const Tensor b = sm({1, 0});
  CHECK(b[0] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(b[1] == doctest::Approx(0.268941).epsilon(1e-6));
  const Tensor c = sm({1000, 0});
  CHECK(std::isfinite(c[0]));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(ops::softmax(tape.constant(Tensor({3}, 0.0)), 1), DimensionError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({4, 7, 5}, seed, 30.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor y = ops::softmax(tape.constant(x), axis).value();
      const Tensor s = ops::sum_axis(tape.constant(y), axis).value();
      for (double v : y.data()) CHECK(v >= 0.0);
      for (double v : s.data()) CHECK(std::abs(v - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d_depthwise examples") {
  Tape tape;
  const Tensor x = random_tensor({3, 3, 2}, 5);
  Tensor center({3, 3, 2});
  center.data()[(1 * 3 + 1) * 2 + 0] = 1.0;
  center.data()[(1 * 3 + 1) * 2 + 1] = 1.0;
  CHECK(ops::conv2d_depthwise(tape.constant(x), tape.constant(center)).value().bitwise_equal(x));
  for (double v : ops::conv2d_depthwise(tape.constant(x), tape.constant(Tensor({3, 3, 2}))).value().data())
    CHECK(v == 0.0);

  const Tensor ones = ops::conv2d_depthwise(tape.constant(Tensor({2, 2, 1}, 1.0)), tape.constant(Tensor({3, 3, 1}, 1.0)))
                          .value();
  for (double v : ones.data()) CHECK(v == 4.0);

  // Channels do not mix.
  Tensor k({3, 3, 2}, 1.0);
  Tensor one_hot({3, 3, 2});
  one_hot.data()[(1 * 3 + 1) * 2 + 0] = 1.0;
  const Tensor y = ops::conv2d_depthwise(tape.constant(one_hot), tape.constant(k)).value();
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i * 2 + 1] == 0.0);

  CHECK_THROWS_AS(ops::conv2d_depthwise(tape.constant(x), tape.constant(Tensor({5, 5, 2}))), ConfigError);
}

TEST_CASE("grad_check examples") {
  CHECK(grad_check([](Tape&, Var x) { return ops::sum(x); }, random_tensor({3, 2}, 1), 1e-5) < 1e-9);

  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Var v = tape.param(x);
  tape.backward(ops::sum(ops::mul(v, v)));
  const auto g = tape.grad(v.id);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(grad_check([](Tape&, Var a) { return ops::sum(ops::mul(a, a)); }, Tensor({2}, {1, 2}), 1e-5) < 1e-7);

  CHECK_THROWS_AS(grad_check([](Tape&, Var a) { return a; }, Tensor({2}, {1, 2}), 1e-5), ContractError);
  CHECK_THROWS_AS(grad_check([](Tape&, Var a) { return ops::sum(a); }, Tensor({2}, {1, 2}), 1e-2), ContractError);
}

TEST_CASE("fourth-order stencil is exact on quartics") {
  Tensor x({1}, {0.7});
  auto f = [&] { return std::pow(x[0], 4); };
  const auto g = numeric_gradient(f, x, 1e-3, Stencil::kFourthOrder);
  CHECK(g[0] == doctest::Approx(4 * std::pow(0.7, 3)).epsilon(1e-10));
  CHECK(x[0] == 0.7);
}

TEST_CASE("every differentiable op passes grad_check over 5 seeds") {
  using Fn = std::function<Var(Tape&, Var, std::uint64_t)>;
  struct Case {
    const char* name;
    Shape shape;
    Fn fn;
  };
  // A random weighting keeps gradients non-uniform.
  auto wsum = [](Tape& t, Var y, std::uint64_t seed) {
    return ops::sum(ops::mul(y, t.constant(random_tensor(y.shape(), seed + 100))));
  };
  const std::vector<Case> cases = {
      {"matmul_a", {3, 5}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::matmul(a, t.constant(random_tensor({5, 4}, s + 1))), s);
       }},
      {"matmul_b", {5, 4}, [&](Tape& t, Var b, std::uint64_t s) {
         return wsum(t, ops::matmul(t.constant(random_tensor({3, 5}, s + 1)), b), s);
       }},
      {"add_broadcast", {4, 1}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::add(t.constant(random_tensor({4, 6}, s + 1)), a), s);
       }},
      {"sub", {3, 4}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::sub(t.constant(random_tensor({3, 4}, s + 1)), a), s);
       }},
      {"mul", {3, 4}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::mul(a, a), s); }},
      {"div", {3, 4}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::div(a, ops::add_scalar(ops::exp(a), 1.0)), s);
       }},
      {"silu", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::silu(a), s); }},
      {"softplus", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::softplus(a), s); }},
      {"exp", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::exp(a), s); }},
      {"log", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::log(ops::add_scalar(ops::mul(a, a), 0.5)), s); }},
      {"neg", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::neg(a), s); }},
      {"sigmoid", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::sigmoid(a), s); }},
      {"scale", {8}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::scale(a, -2.5), s); }},
      {"softmax", {3, 5}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::softmax(a, s % 2), s); }},
      {"sum_axis", {3, 5}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::sum_axis(a, s % 2), s); }},
      {"mean_axis", {2, 3, 4}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::mean_axis(a, s % 3), s); }},
      {"max_axis", {4, 5}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::max_axis(a, s % 2), s); }},
      {"reshape", {2, 6}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::reshape(a, {3, 4}), s); }},
      {"transpose", {3, 5}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::transpose(a), s); }},
      {"broadcast_to", {1, 4}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::broadcast_to(a, {3, 4}), s); }},
      {"gather_rows", {4, 3}, [&](Tape& t, Var a, std::uint64_t s) {
         Var other = t.constant(random_tensor({2, 3}, s + 1));
         return wsum(t, ops::gather_rows({a, other}, {{0, 3}, {1, 0}, {0, 0}, {0, 3}, {1, 1}}), s);
       }},
      {"reverse_rows", {5, 3}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::reverse_rows(a), s); }},
      {"slice_cols", {3, 6}, [&](Tape& t, Var a, std::uint64_t s) { return wsum(t, ops::slice_cols(a, 2, 3), s); }},
      {"rmsnorm_x", {4, 6}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::rmsnorm(a, t.constant(random_tensor({6}, s + 1))), s);
       }},
      {"rmsnorm_gain", {6}, [&](Tape& t, Var g, std::uint64_t s) {
         return wsum(t, ops::rmsnorm(t.constant(random_tensor({4, 6}, s + 1)), g), s);
       }},
      {"conv2d_x", {3, 3, 2}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::conv2d_depthwise(a, t.constant(random_tensor({3, 3, 2}, s + 1))), s);
       }},
      {"conv2d_kernel", {3, 3, 2}, [&](Tape& t, Var k, std::uint64_t s) {
         return wsum(t, ops::conv2d_depthwise(t.constant(random_tensor({2, 4, 4, 2}, s + 1)), k), s);
       }},
      {"causal_conv1d_x", {6, 3}, [&](Tape& t, Var a, std::uint64_t s) {
         return wsum(t, ops::causal_conv1d(a, t.constant(random_tensor({4, 3}, s + 1)), t.constant(random_tensor({3}, s + 2))), s);
       }},
      {"causal_conv1d_kernel", {4, 3}, [&](Tape& t, Var k, std::uint64_t s) {
         return wsum(t, ops::causal_conv1d(t.constant(random_tensor({6, 3}, s + 1)), k, t.constant(random_tensor({3}, s + 2))), s);
       }},
      {"causal_conv1d_bias", {3}, [&](Tape& t, Var b, std::uint64_t s) {
         return wsum(t, ops::causal_conv1d(t.constant(random_tensor({6, 3}, s + 1)), t.constant(random_tensor({4, 3}, s + 2)), b), s);
       }},
      {"cross_entropy", {6}, [&](Tape&, Var a, std::uint64_t s) { return ops::cross_entropy(a, s % 6); }},
  };
  for (const Case& c : cases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // max_axis needs a unique maximum; random normals provide one almost surely.
      const double err = grad_check([&](Tape& t, Var x) { return c.fn(t, x, seed); }, random_tensor(c.shape, seed), 1e-5);
      INFO(c.name << " seed " << seed);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("clamp_min gradient passes only above the floor") {
  Tensor x({3}, {-1.0, 0.5, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  Var v = tape.param(x);
  Var y = ops::clamp_min(v, 0.0);
  CHECK(y.value()[0] == 0.0);
  tape.backward(ops::sum(y));
  const auto g = tape.grad(v.id);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 1.0);
}

TEST_CASE("tape backward order, replay and determinism") {
  const Tensor x0 = random_tensor({4, 5}, 3);
  const Tensor w0 = random_tensor({5, 5}, 4);
  auto build = [&](Tape& tape) {
    Var x = tape.constant(x0);
    Var h = ops::silu(ops::matmul(x, tape.constant(w0)));
    return ops::sum(ops::softmax(ops::mul(h, h), 1));
  };
  Tape a, b;
  Var ya = build(a);
  Var yb = build(b);
  CHECK(ya.value().bitwise_equal(yb.value()));
  CHECK(a.replay_matches());

  // Each node's inputs were appended before it.
  for (std::size_t id = 0; id < a.size(); ++id)
    for (std::size_t in : a.inputs(id)) CHECK(in < id);

  Tape other;
  Var foreign = other.constant(Tensor({1}, 1.0));
  CHECK_THROWS_AS(a.backward(foreign), ContractError);
}

TEST_CASE("frozen parameters receive no gradient") {
  Tensor w = random_tensor({3, 3}, 1);
  Tensor frozen = random_tensor({3, 3}, 2);
  w.set_requires_grad(true);
  Tape tape;
  Var y = ops::sum(ops::matmul(tape.param(w), tape.param(frozen)));
  tape.backward(y);
  const auto grads = tape.param_grads();
  REQUIRE(grads.size() == 1);
  CHECK(grads[0].first == &w);
}

TEST_CASE("tensor serialization round trip and corruption") {
  const Tensor t = random_tensor({2, 3, 4}, 9);
  const std::string bytes = encode_tensor(t);
  CHECK(bytes.substr(0, 8) == "SSPTENS1");
  CHECK(bytes.size() == 8 + 4 + 3 * 4 + 24 * 8);
  CHECK(decode_tensor(bytes).bitwise_equal(t));
  // Little-endian rank field.
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);
  CHECK(bytes[9] == 0);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bad, "bad.sspt"), FormatError);
  CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 1)), FormatError);
  try {
    decode_tensor(bad, "sample_7.sspt");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("sample_7.sspt") != std::string::npos);
  }

  Tensor special({3}, {std::numeric_limits<double>::infinity(), -0.0, 1e-310});
  CHECK(decode_tensor(encode_tensor(special)).bitwise_equal(special));
}
