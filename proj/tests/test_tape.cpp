#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vpseg/tape.hpp"

using namespace vpseg;

TEST_CASE("grad_check on sum is exact") {
  SplitMix64 rng(1);
  const Tensor x = oracle::random_tensor({3, 4}, rng);
  auto f = [](Tape&, Var v) { return ad::sum_all(v); };
  CHECK(grad_check(f, x, 1e-3f) < 1e-6);

  Tape tape;
  Var xv = ad::leaf(tape, x, true);
  Var y = ad::sum_all(xv);
  tape.backward(y.id);
  const Tensor& g = tape.grad(xv.id);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 1.0f);
}

TEST_CASE("grad_check on sum of softmax rows is near zero") {
  SplitMix64 rng(2);
  const Tensor x = oracle::random_tensor({3, 5}, rng);
  auto f = [](Tape&, Var v) { return ad::sum_all(ad::softmax_rows(v)); };
  // The function is exactly constant, so the largest allowed step gives the
  // cleanest difference against the f32 output quantization.
  CHECK(grad_check(f, x, 1e-2f) < 1e-5);

  Tape tape;
  Var xv = ad::leaf(tape, x, true);
  tape.backward(ad::sum_all(ad::softmax_rows(xv)).id);
  const Tensor& g = tape.grad(xv.id);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g.data()[i]) < 1e-5f);
}

TEST_CASE("grad_check on cross attention") {
  SplitMix64 rng(3);
  const Tensor k = oracle::random_tensor({3, 4}, rng);
  const Tensor v = oracle::random_tensor({3, 4}, rng);
  const Tensor q = oracle::random_tensor({3, 4}, rng);

  auto wrt_q = [&](Tape& tape, Var var) {
    Var kv = ad::constant(tape, k);
    Var vv = ad::constant(tape, v);
    return ad::sum_all(ad::cross_attention(var, kv, vv, nullptr, true));
  };
  CHECK(grad_check(wrt_q, q, 1e-3f) < 1e-3);

  auto wrt_k = [&](Tape& tape, Var var) {
    Var qv = ad::constant(tape, q);
    Var vv = ad::constant(tape, v);
    return ad::sum_all(ad::cross_attention(qv, var, vv, nullptr, false));
  };
  CHECK(grad_check(wrt_k, k, 1e-3f) < 1e-3);

  auto wrt_v = [&](Tape& tape, Var var) {
    Var qv = ad::constant(tape, q);
    Var kv = ad::constant(tape, k);
    return ad::sum_all(ad::cross_attention(qv, kv, var, nullptr, false));
  };
  CHECK(grad_check(wrt_v, v, 1e-3f) < 1e-3);
}

TEST_CASE("every differentiable op passes grad_check on 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SplitMix64 rng(100 + seed);
    const Tensor a = oracle::random_tensor({3, 4}, rng);
    const Tensor b = oracle::random_tensor({3, 4}, rng);
    const Tensor m = oracle::random_tensor({4, 2}, rng);
    const Tensor bias_row = oracle::random_tensor({4}, rng);
    const Tensor bias_col = oracle::random_tensor({3}, rng);
    const Tensor cube = oracle::random_tensor({2, 3, 3}, rng);

    auto check = [&](const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
      CHECK(grad_check(f, x, 1e-3f) < 1e-3);
    };
    check([&](Tape& t, Var v) { return ad::sum_all(ad::matmul(v, ad::constant(t, m))); }, a);
    check([&](Tape& t, Var v) { return ad::sum_all(ad::matmul(ad::constant(t, a), v)); }, m);
    check([&](Tape&, Var v) { return ad::sum_all(ad::transpose(v)); }, a);
    check([&](Tape& t, Var v) {
      return ad::sum_all(ad::mul(v, ad::constant(t, b)));
    }, a);
    check([&](Tape&, Var v) {
      return ad::sum_all(ad::mul(v, v));  // quadratic, both slots
    }, a);
    check([&](Tape& t, Var v) { return ad::sum_all(ad::sub(ad::constant(t, b), v)); }, a);
    check([&](Tape&, Var v) { return ad::sum_all(ad::affine(v, -2.5f, 1.0f)); }, a);
    check([&](Tape& t, Var v) {
      return ad::sum_all(ad::add_row_broadcast(ad::constant(t, a), v));
    }, bias_row);
    check([&](Tape& t, Var v) {
      return ad::sum_all(ad::add_col_broadcast(ad::constant(t, a), v));
    }, bias_col);
    check([&](Tape&, Var v) { return ad::sum_all(ad::logistic(v)); }, a);
    check([&](Tape& t, Var v) {
      return ad::sum_all(ad::mul(ad::softmax_rows(v), ad::constant(t, b)));
    }, a);
    check([&](Tape&, Var v) { return ad::sum_all(ad::bilinear_resize(v, 5, 7)); }, cube);
    check([&](Tape&, Var v) { return ad::sum_all(ad::bilinear_resize(v, 2, 2)); }, cube);
    check([&](Tape&, Var v) {
      return ad::sum_all(ad::gather_cols(v, {0, 2, 2, 1}));  // repeats scatter-add
    }, a);
    check([&](Tape& t, Var v) {
      return ad::sum_all(ad::concat_cols({v, ad::constant(t, b), v}));
    }, a);
    check([&](Tape&, Var v) { return ad::sum_all(ad::reshape(v, {12})); }, a);
  }
}

TEST_CASE("cross entropy matches a scalar hand-loop oracle and its gradient") {
  SplitMix64 rng(55);
  const Tensor logits = oracle::random_tensor({3, 4, 4}, rng);
  LabelMap labels(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      labels.at(y, x) = static_cast<std::uint16_t>(rng.next_below(3));
    }
  }
  labels.at(2, 2) = kIgnoreLabel;

  // Hand loop over pixels.
  double want = 0.0;
  int valid = 0;
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      if (labels.at(y, x) == kIgnoreLabel) continue;
      double denom = 0.0;
      for (int c = 0; c < 3; ++c) denom += std::exp(logits.at(c, y, x));
      want += std::log(denom) - logits.at(labels.at(y, x), y, x);
      ++valid;
    }
  }
  want /= valid;

  Tape tape;
  Var lv = ad::leaf(tape, logits, true);
  Var loss = ad::cross_entropy_mean(lv, labels, kIgnoreLabel);
  CHECK(tape.value(loss.id).at(0) == doctest::Approx(want).epsilon(1e-6));

  tape.backward(loss.id);
  const Tensor& g = tape.grad(lv.id);
  // Ignored pixel receives no gradient.
  for (int c = 0; c < 3; ++c) CHECK(g.at(c, 2, 2) == 0.0f);

  auto f = [&labels](Tape&, Var v) {
    return ad::cross_entropy_mean(v, labels, kIgnoreLabel);
  };
  CHECK(grad_check(f, logits, 1e-3f) < 1e-3);
}

TEST_CASE("taped forward equals the pure forward for attention") {
  SplitMix64 rng(77);
  const Tensor q = oracle::random_tensor({4, 3}, rng);
  const Tensor k = oracle::random_tensor({4, 6}, rng);
  const Tensor v = oracle::random_tensor({4, 6}, rng);
  const Tensor bias = oracle::random_tensor({6}, rng);

  Tape tape;
  Var qv = ad::leaf(tape, q, false);
  Var kv = ad::leaf(tape, k, false);
  Var vv = ad::leaf(tape, v, false);
  Var bv = ad::leaf(tape, bias, false);
  const Var out = ad::cross_attention(qv, kv, vv, &bv, true);
  const Tensor pure = cross_attention(q, k, v, &bias, true);
  const Tensor& taped = tape.value(out.id);
  REQUIRE(taped.same_shape(pure));
  for (std::size_t i = 0; i < pure.size(); ++i) CHECK(taped.data()[i] == pure.data()[i]);
}

TEST_CASE("backward visits each node once: repeated use accumulates correctly") {
  // y = sum(x + x): dy/dx = 2 exactly.
  const Tensor x = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tape tape;
  Var xv = ad::leaf(tape, x, true);
  Var y = ad::sum_all(ad::add(xv, xv));
  tape.backward(y.id);
  const Tensor& g = tape.grad(xv.id);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 2.0f);
}

TEST_CASE("grad_check rejects non-scalar outputs") {
  const Tensor x({2, 2});
  auto f = [](Tape&, Var v) { return v; };
  CHECK_THROWS_AS(grad_check(f, x, 1e-3f), std::invalid_argument);
}
