#include <doctest.h>

#include <cmath>

#include "aod/gradcheck.hpp"
#include "aod/ops.hpp"

using aod::OpAttrs;
using aod::OpKind;
using aod::Parameter;
using aod::Tensor;

namespace {

Tensor ones_like(const Tensor& t) {
  Tensor o(t.shape);
  o.fill(1.0);
  return o;
}

// Scalar wrapper sum(op(x)) with x as the probed input; other inputs fixed.
double fd_check_single_input(OpKind kind, const Tensor& x, OpAttrs attrs = {},
                             double eps = 1e-5) {
  auto f = [&](const Tensor& probe) {
    auto [out, rec] = aod::forward(kind, {&probe}, attrs);
    double s = 0.0;
    for (double v : out.v) s += v;
    return s;
  };
  auto analytic = [&](const Tensor& probe) {
    auto [out, rec] = aod::forward(kind, {&probe}, attrs);
    return aod::backward(rec, ones_like(out))[0];
  };
  return aod::grad_check(f, analytic, x, eps).max_rel_error;
}

}  // namespace

TEST_SUITE("diffcore") {

TEST_CASE("relu forward and backward") {
  Tensor x({2}, {-1.0, 2.0});
  auto [y, rec] = aod::forward(OpKind::relu, {&x});
  CHECK(y.v == std::vector<double>{0.0, 2.0});
  Tensor up({2}, {1.0, 1.0});
  auto g = aod::backward(rec, up);
  CHECK(g[0].v == std::vector<double>{0.0, 1.0});
}

TEST_CASE("eltwise_max forward, argmax routing, lowest-index ties") {
  Tensor a({2}, {1.0, 3.0});
  Tensor b({2}, {2.0, 2.0});
  Tensor c({2}, {0.0, 0.0});
  auto [y, rec] = aod::forward(OpKind::eltwise_max, {&a, &b, &c});
  CHECK(y.v == std::vector<double>{2.0, 3.0});

  Tensor a2({2}, {1.0, 3.0});
  Tensor b2({2}, {2.0, 2.0});
  auto [y2, rec2] = aod::forward(OpKind::eltwise_max, {&a2, &b2});
  Tensor up({2}, {1.0, 1.0});
  auto g = aod::backward(rec2, up);
  CHECK(g[0].v == std::vector<double>{0.0, 1.0});
  CHECK(g[1].v == std::vector<double>{1.0, 0.0});

  // equal values route to input 0
  Tensor t1({1}, {5.0});
  Tensor t2({1}, {5.0});
  auto [y3, rec3] = aod::forward(OpKind::eltwise_max, {&t1, &t2});
  auto g3 = aod::backward(rec3, Tensor({1}, {1.0}));
  CHECK(g3[0][0] == 1.0);
  CHECK(g3[1][0] == 0.0);
}

TEST_CASE("softmax_xent equal logits give ln(n)") {
  Tensor logits({2}, {0.0, 0.0});
  OpAttrs attrs;
  attrs.target = 0;
  auto [loss, rec] = aod::forward(OpKind::softmax_xent, {&logits}, attrs);
  CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor l6({6});
  l6.fill(0.7);
  attrs.target = 3;
  auto [loss6, rec6] = aod::forward(OpKind::softmax_xent, {&l6}, attrs);
  CHECK(loss6[0] == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("smooth_l1 piecewise values") {
  Tensor x({3}, {0.5, -2.0, 1.0});
  auto [y, rec] = aod::forward(OpKind::smooth_l1, {&x});
  CHECK(y[0] == doctest::Approx(0.5 * 0.25 + 1.5 + 0.5));
}

TEST_CASE("concat backward reconstructs input gradients exactly") {
  Tensor a({2}, {1.0, 2.0});
  Tensor b({3}, {3.0, 4.0, 5.0});
  auto [y, rec] = aod::forward(OpKind::concat, {&a, &b});
  CHECK(y.v == std::vector<double>{1, 2, 3, 4, 5});
  Tensor up({5}, {10, 20, 30, 40, 50});
  auto g = aod::backward(rec, up);
  CHECK(g[0].v == std::vector<double>{10, 20});
  CHECK(g[1].v == std::vector<double>{30, 40, 50});
}

TEST_CASE("dropout eval is identity, train scales survivors") {
  Tensor x({1000});
  x.fill(1.0);
  OpAttrs attrs;
  attrs.rate = 0.5;
  attrs.train = false;
  auto [y_eval, rec_eval] = aod::forward(OpKind::dropout, {&x}, attrs);
  CHECK(y_eval.v == x.v);

  attrs.train = true;
  aod::Rng rng(42);
  auto [y, rec] = aod::forward(OpKind::dropout, {&x}, attrs, &rng);
  int zeros = 0;
  for (double v : y.v) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(2.0));
    }
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);

  // same seed, same mask
  aod::Rng rng2(42);
  auto [y2, rec2] = aod::forward(OpKind::dropout, {&x}, attrs, &rng2);
  CHECK(y2.v == y.v);

  CHECK_THROWS_AS(aod::forward(OpKind::dropout, {&x}, attrs, nullptr), aod::ContractError);
}

TEST_CASE("maxpool2d forward and routing") {
  Tensor x({1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = i + 1;
  OpAttrs attrs;
  attrs.kernel = 2;
  attrs.stride = 2;
  auto [y, rec] = aod::forward(OpKind::maxpool2d, {&x}, attrs);
  CHECK(y.v == std::vector<double>{6, 8, 14, 16});
  Tensor up({1, 2, 2}, {1, 1, 1, 1});
  auto g = aod::backward(rec, up);
  CHECK(g[0].v[5] == 1.0);
  CHECK(g[0].v[7] == 1.0);
  CHECK(g[0].v[13] == 1.0);
  CHECK(g[0].v[15] == 1.0);
  double total = 0.0;
  for (double v : g[0].v) total += v;
  CHECK(total == 4.0);
}

TEST_CASE("affine forward with two terms and bias") {
  Tensor x({2}, {1.0, 2.0});
  Tensor w({1, 2}, {3.0, 4.0});
  Tensor x2({1}, {5.0});
  Tensor w2({1, 1}, {0.5});
  Tensor b({1}, {0.25});
  OpAttrs attrs;
  attrs.terms = 2;
  auto [y, rec] = aod::forward(OpKind::affine, {&x, &w, &x2, &w2, &b}, attrs);
  CHECK(y[0] == doctest::Approx(3.0 + 8.0 + 2.5 + 0.25));
}

TEST_CASE("finite differences confirm every op backward") {
  aod::Rng rng(123);

  SUBCASE("relu away from the kink") {
    Tensor x({12});
    for (double& v : x.v) {
      v = rng.uniform(-2.0, 2.0);
      if (std::abs(v) < 0.05) v = 0.3;
    }
    CHECK(fd_check_single_input(OpKind::relu, x) < 1e-8);
  }

  SUBCASE("smooth_l1 away from |x|=1") {
    Tensor x({12});
    for (double& v : x.v) {
      v = rng.uniform(-3.0, 3.0);
      if (std::abs(std::abs(v) - 1.0) < 0.05) v = 0.5;
      if (std::abs(v) < 0.05) v = -0.4;
    }
    CHECK(fd_check_single_input(OpKind::smooth_l1, x) < 1e-8);
  }

  SUBCASE("softmax_xent") {
    Tensor logits({7});
    for (double& v : logits.v) v = rng.uniform(-2.0, 2.0);
    OpAttrs attrs;
    attrs.target = 4;
    CHECK(fd_check_single_input(OpKind::softmax_xent, logits, attrs) < 1e-8);
  }

  SUBCASE("maxpool2d with distinct values") {
    Tensor x({2, 4, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i % 17) + 0.13 * i;
    OpAttrs attrs;
    attrs.kernel = 2;
    attrs.stride = 2;
    CHECK(fd_check_single_input(OpKind::maxpool2d, x, attrs) < 1e-8);
  }

  SUBCASE("affine wrt x, W and bias") {
    Tensor x({5});
    Tensor w({3, 5});
    Tensor b({3});
    for (double& v : x.v) v = rng.uniform(-1, 1);
    for (double& v : w.v) v = rng.uniform(-1, 1);
    for (double& v : b.v) v = rng.uniform(-1, 1);

    auto run = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
      return aod::forward(OpKind::affine, {&xx, &ww, &bb});
    };
    auto sum_of = [](const Tensor& t) {
      double s = 0;
      for (double v : t.v) s += v;
      return s;
    };

    auto fx = [&](const Tensor& p) { return sum_of(run(p, w, b).first); };
    auto gx = [&](const Tensor& p) {
      auto [out, rec] = run(p, w, b);
      return aod::backward(rec, ones_like(out))[0];
    };
    CHECK(aod::grad_check(fx, gx, x, 1e-5).max_rel_error < 1e-8);

    auto fw = [&](const Tensor& p) { return sum_of(run(x, p, b).first); };
    auto gw = [&](const Tensor& p) {
      auto [out, rec] = run(x, p, b);
      return aod::backward(rec, ones_like(out))[1];
    };
    CHECK(aod::grad_check(fw, gw, w, 1e-5).max_rel_error < 1e-8);

    auto fb = [&](const Tensor& p) { return sum_of(run(x, w, p).first); };
    auto gb = [&](const Tensor& p) {
      auto [out, rec] = run(x, w, p);
      return aod::backward(rec, ones_like(out))[2];
    };
    CHECK(aod::grad_check(fb, gb, b, 1e-5).max_rel_error < 1e-8);
  }

  SUBCASE("conv2d wrt x and w") {
    Tensor x({2, 5, 5});
    Tensor w({3, 2, 3, 3});
    Tensor b({3});
    for (double& v : x.v) v = rng.uniform(-1, 1);
    for (double& v : w.v) v = rng.uniform(-1, 1);
    for (double& v : b.v) v = rng.uniform(-1, 1);
    OpAttrs attrs;
    attrs.pad = 1;

    auto sum_of = [](const Tensor& t) {
      double s = 0;
      for (double v : t.v) s += v;
      return s;
    };
    auto fx = [&](const Tensor& p) {
      return sum_of(aod::forward(OpKind::conv2d, {&p, &w, &b}, attrs).first);
    };
    auto gx = [&](const Tensor& p) {
      auto [out, rec] = aod::forward(OpKind::conv2d, {&p, &w, &b}, attrs);
      return aod::backward(rec, ones_like(out))[0];
    };
    CHECK(aod::grad_check(fx, gx, x, 1e-5).max_rel_error < 1e-8);

    auto fw = [&](const Tensor& p) {
      return sum_of(aod::forward(OpKind::conv2d, {&x, &p, &b}, attrs).first);
    };
    auto gw = [&](const Tensor& p) {
      auto [out, rec] = aod::forward(OpKind::conv2d, {&x, &p, &b}, attrs);
      return aod::backward(rec, ones_like(out))[1];
    };
    CHECK(aod::grad_check(fw, gw, w, 1e-5).max_rel_error < 1e-8);
  }

  SUBCASE("eltwise_max with distinct values") {
    Tensor a({6}, {0.1, 1.2, -0.4, 2.0, 0.9, -1.5});
    Tensor b2({6}, {0.7, 0.2, -1.1, 2.5, 0.3, -0.5});
    auto f = [&](const Tensor& p) {
      auto [out, rec] = aod::forward(OpKind::eltwise_max, {&p, &b2});
      double s = 0;
      for (double v : out.v) s += v;
      return s;
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = aod::forward(OpKind::eltwise_max, {&p, &b2});
      return aod::backward(rec, ones_like(out))[0];
    };
    CHECK(aod::grad_check(f, g, a, 1e-5).max_rel_error < 1e-8);
  }

  SUBCASE("dropout with frozen mask") {
    Tensor x({10});
    for (double& v : x.v) v = rng.uniform(0.5, 2.0);
    OpAttrs attrs;
    attrs.train = true;
    attrs.rate = 0.5;
    auto f = [&](const Tensor& p) {
      aod::Rng r(7);
      auto [out, rec] = aod::forward(OpKind::dropout, {&p}, attrs, &r);
      double s = 0;
      for (double v : out.v) s += v;
      return s;
    };
    auto g = [&](const Tensor& p) {
      aod::Rng r(7);
      auto [out, rec] = aod::forward(OpKind::dropout, {&p}, attrs, &r);
      return aod::backward(rec, ones_like(out))[0];
    };
    CHECK(aod::grad_check(f, g, x, 1e-5).max_rel_error < 1e-10);
  }
}

TEST_CASE("grad_check on linear sum is exact") {
  Tensor x({8});
  aod::Rng rng(5);
  for (double& v : x.v) v = rng.uniform(-1, 1);
  auto f = [](const Tensor& p) {
    double s = 0;
    for (double v : p.v) s += v;
    return s;
  };
  auto g = [](const Tensor& p) {
    Tensor o(p.shape);
    o.fill(1.0);
    return o;
  };
  CHECK(aod::grad_check(f, g, x, 1e-5).max_rel_error < 1e-10);
}

TEST_CASE("shape and contract errors") {
  Tensor x({2}, {1.0, 2.0});
  Tensor y({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(aod::forward(OpKind::eltwise_max, {&x, &y}), aod::ShapeError);

  Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(aod::forward(OpKind::affine, {&x, &w, &x}), aod::ShapeError);

  OpAttrs attrs;
  attrs.target = 9;
  CHECK_THROWS_AS(aod::forward(OpKind::softmax_xent, {&x}, attrs), aod::ContractError);
}

TEST_CASE("sgd_step arithmetic") {
  SUBCASE("zero gradient leaves values unchanged") {
    Parameter p("p", Tensor({2}, {1.0, -2.0}));
    aod::sgd_step({&p}, 0.1, 0.0);
    CHECK(p.value.v == std::vector<double>{1.0, -2.0});
  }

  SUBCASE("plain step") {
    Parameter p("p", Tensor({1}, {1.0}));
    p.grad[0] = 0.5;
    aod::sgd_step({&p}, 0.1, 0.0);
    CHECK(p.value[0] == doctest::Approx(0.95));
    CHECK(p.grad[0] == 0.0);
  }

  SUBCASE("momentum recurrence") {
    Parameter p("p", Tensor({1}, {0.0}));
    p.grad[0] = 1.0;
    aod::sgd_step({&p}, 0.1, 0.9);
    CHECK(p.value[0] == doctest::Approx(-0.1));
    p.grad[0] = 1.0;
    aod::sgd_step({&p}, 0.1, 0.9);
    CHECK(p.value[0] == doctest::Approx(-0.29));
  }

  SUBCASE("global-norm clipping rescales the step") {
    Parameter p("p", Tensor({2}, {0.0, 0.0}));
    p.grad.v = {3.0, 4.0};  // norm 5
    aod::sgd_step({&p}, 1.0, 0.0, 2.5);
    CHECK(p.value[0] == doctest::Approx(-1.5));
    CHECK(p.value[1] == doctest::Approx(-2.0));
  }

  SUBCASE("non-finite gradient aborts with the parameter name") {
    Parameter p("broken_layer", Tensor({1}, {0.0}));
    p.grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(aod::sgd_step({&p}, 0.1, 0.0),
                         doctest::Contains("broken_layer"), aod::NumericalError);
  }
}

}  // TEST_SUITE
