#include <cmath>
#include <thread>
#include <vector>

#include "doctest.h"
#include "tcr/params.hpp"
#include "tcr/prng.hpp"
#include "tcr/tensor.hpp"

using namespace tcr;

TEST_CASE("matmul against hand arithmetic") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value_at(0) == doctest::Approx(2.0));
  CHECK(c.value_at(1) == doctest::Approx(4.0));

  // identity(3) * X == X
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0);
  Tensor ix = matmul(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ix.value_at(i) == x.value_at(i));

  // zeros(2x3) * any(3x4) == zeros(2x4)
  Tensor z = Tensor::zeros({2, 3});
  Tensor any = Tensor::randn({3, 4}, rng, 2.0);
  Tensor zr = matmul(z, any);
  CHECK(zr.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < zr.size(); ++i) CHECK(zr.value_at(i) == 0.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("matmul gradients flow to both sides") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8}, true);
  Tensor loss = sum_all(matmul(a, b));
  backward(loss);
  // d/dA sum(AB) = ones * B^T ; rows of dA are column sums of B
  CHECK(a.grad()[0] == doctest::Approx(11.0));
  CHECK(a.grad()[1] == doctest::Approx(15.0));
  CHECK(a.grad()[2] == doctest::Approx(11.0));
  CHECK(a.grad()[3] == doctest::Approx(15.0));
  CHECK(b.grad()[0] == doctest::Approx(4.0));
  CHECK(b.grad()[1] == doctest::Approx(4.0));
  CHECK(b.grad()[2] == doctest::Approx(6.0));
  CHECK(b.grad()[3] == doctest::Approx(6.0));
}

TEST_CASE("masked softmax basics") {
  Tensor uni = Tensor::zeros({1, 4});
  Tensor p = softmax(uni);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.value_at(i) == doctest::Approx(0.25));

  Tensor l = Tensor::from({1, 3}, {0, 0, 0});
  Tensor pm = masked_softmax(l, {1, 1, 0});
  CHECK(pm.value_at(0) == doctest::Approx(0.5));
  CHECK(pm.value_at(1) == doctest::Approx(0.5));
  CHECK(pm.value_at(2) == 0.0);  // exactly zero

  Tensor l2 = Tensor::from({1, 3}, {1, 2, 3});
  Tensor p2 = softmax(l2);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p2.value_at(i) == doctest::Approx(std::exp(1.0 + i) / z).epsilon(1e-12));

  double sum = p2.value_at(0) + p2.value_at(1) + p2.value_at(2);
  CHECK(std::abs(sum - 1.0) < 1e-12);

  CHECK_THROWS_AS(masked_softmax(l2, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("layer norm oracle cases") {
  Tensor g = Tensor::from({2}, {1, 1});
  Tensor b = Tensor::from({2}, {0, 0});

  Tensor constant = Tensor::from({1, 2}, {3, 3});
  Tensor yc = layer_norm(constant, g, b);
  CHECK(yc.value_at(0) == doctest::Approx(0.0));
  CHECK(yc.value_at(1) == doctest::Approx(0.0));

  Tensor row = Tensor::from({1, 2}, {1, -1});
  Tensor yr = layer_norm(row, g, b);
  // oracle: (x - mean) / sqrt(var + eps)
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(yr.value_at(0) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(yr.value_at(1) == doctest::Approx(-expect).epsilon(1e-12));

  Tensor g0 = Tensor::from({2}, {0, 0});
  Tensor bias = Tensor::from({2}, {0.5, -0.25});
  Rng rng(3);
  Tensor any = Tensor::randn({4, 2}, rng, 2.0);
  Tensor yb = layer_norm(any, g0, bias);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(yb.value_at(r * 2 + 0) == doctest::Approx(0.5));
    CHECK(yb.value_at(r * 2 + 1) == doctest::Approx(-0.25));
  }
}

TEST_CASE("cross entropy oracle cases") {
  // one-hot-correct with large margin -> ~0
  Tensor big = Tensor::from({1, 4}, {50, 0, 0, 0});
  Tensor l0 = cross_entropy(big, {0});
  CHECK(l0.scalar_value() == doctest::Approx(0.0).epsilon(1e-9));

  // uniform logits, V=8 -> ln 8
  Tensor uni = Tensor::zeros({3, 8});
  Tensor l1 = cross_entropy(uni, {0, 3, 7});
  CHECK(l1.scalar_value() == doctest::Approx(std::log(8.0)));

  // random case against direct per-token -log p oracle
  Rng rng(11);
  Tensor logits = Tensor::randn({5, 6}, rng, 1.5);
  std::vector<std::size_t> tgt = {1, 0, 5, 2, 2};
  std::vector<std::uint8_t> ignore = {0, 1, 0, 0, 1};
  Tensor l2 = cross_entropy(logits, tgt, ignore);
  double expect = 0.0;
  int kept = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (ignore[i]) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < 6; ++j) z += std::exp(logits.value_at(i * 6 + j));
    expect += -std::log(std::exp(logits.value_at(i * 6 + tgt[i])) / z);
    ++kept;
  }
  expect /= kept;
  CHECK(l2.scalar_value() == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(uni, {0, 0, 0}, {1, 1, 1}), std::invalid_argument);
}

TEST_CASE("backward on simple forms") {
  ParameterStore store;
  Rng rng(5);
  Tensor& w = store.create("w", Tensor::from({3}, {1.0, 2.0, 3.0}, true));
  backward(sum_all(w));
  CHECK(w.grad()[0] == 1.0);
  CHECK(w.grad()[1] == 1.0);
  CHECK(w.grad()[2] == 1.0);

  ParameterStore s2;
  Tensor& v = s2.create("v", Tensor::from({2}, {1.0, 2.0}, true));
  backward(dot(v, v));
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));

  CHECK_THROWS_AS(backward(Tensor::zeros({2})), std::invalid_argument);
}

TEST_CASE("frozen parameters never accumulate gradient") {
  ParameterStore store;
  store.create("frozen", Tensor::from({2}, {1.0, 1.0}), true);
  store.create("free", Tensor::from({2}, {1.0, 1.0}));
  Tensor loss = sum_all(mul(store.get("frozen"), store.get("free")));
  backward(loss);
  CHECK_FALSE(store.get("frozen").has_grad());
  CHECK(store.get("free").has_grad());
}

TEST_CASE("finite differences on quadratic and constant") {
  ParameterStore store;
  Rng rng(17);
  store.create("w", Tensor::randn({4}, rng, 1.0, true));
  auto quad = [&]() {
    const Tensor& w = store.get("w");
    return dot(w, w);
  };
  auto rep = finite_diff_check(store, quad, 4, 99);
  CHECK(rep.coords_checked == 4);
  CHECK(rep.max_rel_err < 1e-7);

  ParameterStore s2;
  s2.create("w", Tensor::randn({3}, rng, 1.0, true));
  auto constant = [&]() { return Tensor::scalar(2.5); };
  // constant loss: no gradient anywhere, numeric zero too
  auto rep2 = finite_diff_check(s2, constant, 3, 99);
  CHECK(rep2.max_rel_err == 0.0);
}

TEST_CASE("finite differences across composite ops") {
  ParameterStore store;
  Rng rng(23);
  store.create("a", Tensor::randn({3, 4}, rng, 0.7, true));
  store.create("b", Tensor::randn({4, 2}, rng, 0.7, true));
  store.create("g", Tensor::randn({2}, rng, 0.1, true));
  store.create("bias", Tensor::randn({2}, rng, 0.1, true));
  auto f = [&]() {
    Tensor h = matmul(store.get("a"), store.get("b"));
    Tensor n = layer_norm(h, store.get("g"), store.get("bias"));
    Tensor act = gelu(n);
    Tensor s = sigmoid(slice_cols(act, 0, 1));
    return mean_all(add(sum_all(s), mean_all(softmax(h))));
  };
  auto rep = finite_diff_check(store, f, 24, 4242);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gather, concat and slice round trips gradients") {
  ParameterStore store;
  Rng rng(31);
  store.create("t", Tensor::randn({5, 3}, rng, 1.0, true));
  auto f = [&]() {
    Tensor rows = gather_rows(store.get("t"), {0, 2, 2, 4});
    Tensor top = slice_rows(rows, 0, 2);
    Tensor bot = slice_rows(rows, 2, 4);
    Tensor cat = concat_rows({top, bot, top});
    Tensor wide = concat_cols({cat, cat});
    return mean_all(mul(wide, wide));
  };
  auto rep = finite_diff_check(store, f, 15, 77);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("two runs with identical seeds are bit-identical") {
  auto run = [](std::uint64_t seed) {
    ParameterStore store;
    Rng rng(seed);
    store.create("w", Tensor::randn({6, 6}, rng, 0.5, true));
    Tensor x = Tensor::randn({2, 6}, rng, 1.0);
    Tensor loss = mean_all(gelu(matmul(x, store.get("w"))));
    backward(loss);
    std::vector<double> out = store.get("w").grad();
    out.push_back(loss.scalar_value());
    return out;
  };
  auto a = run(123), b = run(123);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("concurrent forwards match serial results bit for bit") {
  ParameterStore store;
  Rng rng(41);
  store.create("w", Tensor::randn({8, 8}, rng, 0.3, true));
  Tensor x1 = Tensor::randn({4, 8}, rng, 1.0);
  Tensor x2 = Tensor::randn({4, 8}, rng, 1.0);
  auto fwd = [&](const Tensor& x) {
    return softmax(matmul(x, store.get("w"))).values();
  };
  auto serial1 = fwd(x1);
  auto serial2 = fwd(x2);
  std::vector<double> out1, out2;
  std::thread t1([&] { out1 = fwd(x1); });
  std::thread t2([&] { out2 = fwd(x2); });
  t1.join();
  t2.join();
  CHECK(out1 == serial1);
  CHECK(out2 == serial2);
}

TEST_CASE("adamw updates trainable and clips by global norm") {
  ParameterStore store;
  store.create("w", Tensor::from({2}, {1.0, 1.0}));
  store.create("f", Tensor::from({2}, {5.0, 5.0}), true);
  AdamW opt({.lr = 0.1, .weight_decay = 0.0, .clip_norm = 1.0});

  Tensor loss = scale(sum_all(mul(store.get("w"), store.get("w"))), 1000.0);
  store.zero_grad();
  backward(loss);
  double norm = opt.step(store);
  CHECK(norm == doctest::Approx(1000.0 * std::sqrt(8.0)));
  CHECK(store.get("w").values()[0] < 1.0);
  CHECK(store.get("f").values()[0] == 5.0);
}

TEST_CASE("checkpoint round trip preserves bits") {
  ParameterStore store;
  Rng rng(53);
  store.create("alpha/w", Tensor::randn({3, 2}, rng, 1.0));
  store.create("beta/b", Tensor::randn({4}, rng, 0.01), true);
  const std::string path = "ckpt_test.tcr1";
  store.save(path);

  ParameterStore other;
  other.load(path);
  CHECK(other.count() == 2);
  CHECK(other.get("alpha/w").values() == store.get("alpha/w").values());
  CHECK(other.get("beta/b").values() == store.get("beta/b").values());
  CHECK(other.get("alpha/w").shape() == Shape{3, 2});
  std::remove(path.c_str());
}

TEST_CASE("op meter counts matmul flops") {
  op_meter().matmul_flops = 0;
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4, 5});
  (void)matmul(a, b);
  CHECK(op_meter().matmul_flops == 2 * 3 * 4 * 5);
}
