#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "headsel/rng.h"
#include "headsel/tensor.h"
#include "test_utils.h"

using namespace headsel;
using namespace headsel::testutil;

TEST_CASE("matmul identity and projector") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, a);
  CHECK(out.value() == std::vector<double>{1, 2, 3, 4});

  Tensor proj({2, 2}, {1, 0, 0, 0});
  Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(proj, b).value() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, 1.0);
  Tensor b({2, 3}, 1.0);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor b = random_tensor({4, 2}, rng);
  double err = grad_check([&](Tensor& x) { return sum(matmul(x, b)); }, a, 1e-5);
  CHECK(err < 1e-6);

  Tensor a2 = random_tensor({3, 4}, rng);
  Tensor b2 = random_tensor({4, 2}, rng, -1, 1, true);
  double err_b = grad_check([&](Tensor& x) { return sum(matmul(a2, x)); }, b2, 1e-5);
  CHECK(err_b < 1e-6);
}

TEST_CASE("matmul against brute-force reference") {
  Rng rng(11);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({7, 3}, rng);
  auto ref = naive_matmul(a.value(), b.value(), 5, 7, 3);
  CHECK(max_abs_diff(matmul(a, b).value(), ref) < 1e-12);
}

TEST_CASE("softmax basics") {
  Tensor x({2}, {0.0, 0.0});
  auto v = softmax(x).value();
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(v[1] == doctest::Approx(0.5));

  Tensor big({2}, {1000.0, 0.0});
  auto vb = softmax(big).value();
  CHECK(std::isfinite(vb[0]));
  CHECK(vb[0] == doctest::Approx(1.0));
  CHECK(vb[1] == doctest::Approx(0.0));

  Tensor t({3}, {1.0, 2.0, 3.0});
  auto vt = softmax(t).value();
  CHECK(vt[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(vt[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(vt[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one on any axis") {
  Rng rng(3);
  Tensor x = random_tensor({4, 5}, rng, -3, 3);
  auto v = softmax(x, -1).value();
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += v[static_cast<std::size_t>(i) * 5 + j];
    CHECK(s == doctest::Approx(1.0));
  }
  auto v0 = softmax(x, 0).value();
  for (int j = 0; j < 5; ++j) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += v0[static_cast<std::size_t>(i) * 5 + j];
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(5);
  Tensor x = random_tensor({2, 4}, rng, -2, 2, true);
  Tensor weights = random_tensor({2, 4}, rng);
  double err =
      grad_check([&](Tensor& t) { return sum(mul(softmax(t), weights)); }, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm constant row collapses to bias") {
  Tensor x({1, 3}, {4.2, 4.2, 4.2});
  Tensor gain({3}, 1.0);
  Tensor bias({3}, {0.3, -0.1, 0.8});
  auto v = layer_norm(x, gain, bias).value();
  CHECK(v[0] == doctest::Approx(0.3));
  CHECK(v[1] == doctest::Approx(-0.1));
  CHECK(v[2] == doctest::Approx(0.8));
}

TEST_CASE("layer_norm hand value with epsilon") {
  Tensor x({1, 2}, {1.0, 3.0});
  Tensor gain({2}, 1.0);
  Tensor bias({2}, 0.0);
  auto v = layer_norm(x, gain, bias).value();
  CHECK(v[0] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("layer_norm gradient") {
  Rng rng(9);
  Tensor x = random_tensor({2, 4}, rng, -2, 2, true);
  Tensor gain = random_tensor({4}, rng, 0.5, 1.5, true);
  Tensor bias = random_tensor({4}, rng, -0.5, 0.5, true);
  Tensor weights = random_tensor({2, 4}, rng);
  auto f = [&](Tensor& t) { return sum(mul(layer_norm(t, gain, bias), weights)); };
  CHECK(grad_check(f, x, 1e-5) < 1e-5);
  auto fg = [&](Tensor& g) { return sum(mul(layer_norm(x, g, bias), weights)); };
  CHECK(grad_check(fg, gain, 1e-5) < 1e-5);
}

TEST_CASE("concat layout and gradient split") {
  Tensor a({1, 2}, {1, 2});
  Tensor b({1, 1}, {3});
  CHECK(concat({a, b}).value() == std::vector<double>{1, 2, 3});

  // H=4 heads of width 2 concatenate to width 8
  std::vector<Tensor> heads;
  for (int h = 0; h < 4; ++h) heads.push_back(Tensor({3, 2}, static_cast<double>(h)));
  Tensor wide = concat(heads);
  CHECK(wide.shape() == std::vector<int>{3, 8});

  // reordering permutes blocks
  Tensor ab = concat({a, Tensor({1, 2}, {9, 9})});
  Tensor ba = concat({Tensor({1, 2}, {9, 9}), a});
  CHECK(ab.value() != ba.value());

  Rng rng(2);
  Tensor x = random_tensor({2, 3}, rng, -1, 1, true);
  Tensor y = random_tensor({2, 2}, rng);
  Tensor w = random_tensor({2, 5}, rng);
  double err = grad_check([&](Tensor& t) { return sum(mul(concat({t, y}), w)); }, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("concat rejects mismatched leading dims") {
  CHECK_THROWS_AS(concat({Tensor({2, 2}, 0.0), Tensor({3, 2}, 0.0)}), std::invalid_argument);
}

TEST_CASE("grad_check basics") {
  Tensor x({2}, {1.0, 2.0}, true);
  // f(x) = sum(x^2): analytic [2, 4]
  auto f = [](Tensor& t) { return sum(mul(t, t)); };
  double err = grad_check(f, x, 1e-6);
  CHECK(err < 1e-8);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  // constant f: zero gradient, zero error
  auto fc = [](Tensor&) { return Tensor::scalar(3.0); };
  CHECK(grad_check(fc, x, 1e-4) == 0.0);
}

TEST_CASE("grad_check rejects non-scalar f") {
  Tensor x({2}, {1.0, 2.0}, true);
  auto f = [](Tensor& t) { return affine(t, 2.0, 0.0); };
  CHECK_THROWS_AS(grad_check(f, x, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(grad_check([](Tensor& t) { return sum(t); }, x, 0.0), std::invalid_argument);
}

TEST_CASE("backward twice accumulates exactly twice the gradient") {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  Graph g;
  Tensor loss;
  {
    Recording rec(g);
    loss = sum(mul(x, x));
  }
  g.backward(loss);
  std::vector<double> once = x.grad();
  g.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("forward is deterministic") {
  Rng rng(42);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor b = random_tensor({4, 4}, rng);
  auto v1 = matmul(softmax(a), sigmoid(b)).value();
  auto v2 = matmul(softmax(a), sigmoid(b)).value();
  CHECK(bitwise_equal(v1, v2));
}

TEST_CASE("elementwise op gradients") {
  Rng rng(13);
  Tensor w = random_tensor({3, 3}, rng);
  auto weighted_sum = [&](Tensor& t, auto op) { return sum(mul(op(t), w)); };

  Tensor x1 = random_tensor({3, 3}, rng, -2, 2, true);
  CHECK(grad_check([&](Tensor& t) { return weighted_sum(t, [](const Tensor& u) {
                     return sigmoid(u);
                   }); }, x1, 1e-5) < 1e-6);

  Tensor x2 = random_tensor({3, 3}, rng, 0.1, 3.0, true);
  CHECK(grad_check([&](Tensor& t) { return weighted_sum(t, [](const Tensor& u) {
                     return log_elem(u);
                   }); }, x2, 1e-6) < 1e-5);

  Tensor x3 = random_tensor({3, 3}, rng, -2, 2, true);
  CHECK(grad_check([&](Tensor& t) { return weighted_sum(t, [](const Tensor& u) {
                     return affine(u, -1.5, 0.25);
                   }); }, x3, 1e-5) < 1e-6);

  Tensor x4 = random_tensor({3, 3}, rng, -2, 2, true);
  CHECK(grad_check([&](Tensor& t) { return weighted_sum(t, [](const Tensor& u) {
                     return transpose(u);
                   }); }, x4, 1e-5) < 1e-6);
}

TEST_CASE("broadcast add over leading axes only") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  CHECK(add(x, row).value() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(row, x).value() == std::vector<double>{11, 22, 33, 14, 25, 36});

  Tensor col({2, 1}, {10, 20});
  CHECK_THROWS_AS(add(x, col), std::invalid_argument);

  Rng rng(21);
  Tensor b = random_tensor({3}, rng, -1, 1, true);
  Tensor w = random_tensor({2, 3}, rng);
  CHECK(grad_check([&](Tensor& t) { return sum(mul(add(x, t), w)); }, b, 1e-5) < 1e-6);
}

TEST_CASE("rows gathers and scatters") {
  Tensor table({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  Tensor out = rows(table, {2, 0, 2});
  CHECK(out.value() == std::vector<double>{20, 21, 0, 1, 20, 21});
  CHECK_THROWS_AS(rows(table, {3}), std::invalid_argument);

  Graph g;
  Tensor loss;
  {
    Recording rec(g);
    loss = sum(rows(table, {2, 0, 2}));
  }
  table.zero_grad();
  g.backward(loss);
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("cross_entropy_sum matches log-softmax and its gradient") {
  Tensor logits({2, 3}, {0.0, 0.0, 0.0, 1.0, 2.0, 3.0}, true);
  double expected = std::log(3.0) +
                    (std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 2.0);
  CHECK(cross_entropy_sum(logits, {0, 1}).item() == doctest::Approx(expected));

  Rng rng(17);
  Tensor l = random_tensor({4, 5}, rng, -2, 2, true);
  auto f = [&](Tensor& t) { return cross_entropy_sum(t, {1, 0, 4, 2}); };
  CHECK(grad_check(f, l, 1e-5) < 1e-6);
}

TEST_CASE("straight_through forwards hard and backs through soft") {
  Tensor soft({2}, {0.7, 0.3}, true);
  Tensor hard({2}, {1.0, 0.0});
  Tensor gate = straight_through(hard, soft);
  CHECK(gate.value() == std::vector<double>{1.0, 0.0});

  Graph g;
  Tensor loss;
  {
    Recording rec(g);
    Tensor gate2 = straight_through(hard, soft);
    loss = sum(mul(gate2, Tensor({2}, {2.0, 5.0})));
  }
  soft.zero_grad();
  g.backward(loss);
  CHECK(soft.grad() == std::vector<double>{2.0, 5.0});
}

TEST_CASE("dropout is identity at rate 0 and rescales kept entries") {
  Rng rng(31);
  Tensor x({4, 4}, 1.0);
  Tensor same = dropout(x, 0.0, rng);
  CHECK(bitwise_equal(same.value(), x.value()));

  Tensor dropped = dropout(x, 0.5, rng);
  for (double v : dropped.value()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
  CHECK_THROWS_AS(dropout(x, 1.0, rng), std::invalid_argument);
}

TEST_CASE("clamp01 clips and passes gradient inside the range") {
  Tensor x({3}, {-0.5, 0.5, 1.5}, true);
  Tensor y = clamp01(x, 1e-6);
  CHECK(y.value()[0] == doctest::Approx(1e-6));
  CHECK(y.value()[1] == doctest::Approx(0.5));
  CHECK(y.value()[2] == doctest::Approx(1.0 - 1e-6));

  Graph g;
  Tensor loss;
  {
    Recording rec(g);
    loss = sum(clamp01(x, 1e-6));
  }
  x.zero_grad();
  g.backward(loss);
  CHECK(x.grad() == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("grad_check over random composed graphs") {
  Rng rng(1234);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({3, 4}, rng, -1.5, 1.5, true);
    Tensor w1 = random_tensor({4, 6}, rng);
    Tensor w2 = random_tensor({6, 2}, rng);
    Tensor gain = random_tensor({2}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({2}, rng, -0.2, 0.2);
    auto f = [&](Tensor& t) {
      Tensor h = relu(matmul(t, w1));
      Tensor o = layer_norm(matmul(h, w2), gain, bias);
      return sum(mul(softmax(o), o));
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-4);
  }
}
