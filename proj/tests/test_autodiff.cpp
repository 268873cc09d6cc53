#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "autodiff.hpp"
#include "rng.hpp"

using namespace spacap;

namespace {

std::function<double()> xavier(Rng& rng, double limit) {
  return [&rng, limit] { return rng.uniform(-limit, limit); };
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  Graph g;
  Graph::Id a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Graph::Id b = g.constant(Tensor::matrix(2, 2, {5, 6, 7, 8}));
  CHECK(g.value(g.add(a, b)).v == std::vector<double>{6, 8, 10, 12});
  CHECK(g.value(g.sub(a, b)).v == std::vector<double>{-4, -4, -4, -4});
  CHECK(g.value(g.mul(a, b)).v == std::vector<double>{5, 12, 21, 32});
  CHECK(g.value(g.matmul(a, b)).v == std::vector<double>{19, 22, 43, 50});
  CHECK(g.value(g.matmul(a, b, true, false)).v == std::vector<double>{26, 30, 38, 44});
  CHECK(g.value(g.matmul(a, b, false, true)).v == std::vector<double>{17, 23, 39, 53});
  CHECK(g.value(g.relu(g.sub(a, b))).v == std::vector<double>{0, 0, 0, 0});
  CHECK(g.value(g.sum(a)).v[0] == 10);
  CHECK(g.value(g.mean(a)).v[0] == 2.5);
}

TEST_CASE("layer_norm worked rows") {
  Graph g;
  Graph::Id gamma = g.constant(Tensor::row({1, 1}));
  Graph::Id beta = g.constant(Tensor::row({0, 0}));
  // constant row -> zeros
  Graph::Id c = g.layer_norm(g.constant(Tensor::matrix(1, 2, {3, 3})), gamma, beta);
  CHECK(g.value(c).v[0] == doctest::Approx(0).epsilon(1e-9));
  // (1,-1) already zero mean / unit variance (up to the epsilon)
  Graph::Id n = g.layer_norm(g.constant(Tensor::matrix(1, 2, {1, -1})), gamma, beta);
  CHECK(g.value(n).v[0] == doctest::Approx(1).epsilon(1e-4));
  CHECK(g.value(n).v[1] == doctest::Approx(-1).epsilon(1e-4));
}

TEST_CASE("masked softmax rows sum to one, masked entries are zero") {
  Graph g;
  Graph::Id x = g.constant(Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 1}));
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1};
  const Tensor& s = g.value(g.softmax_masked(x, mask));
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(0, 0) + s.at(0, 2) == doctest::Approx(1.0));
  CHECK(s.at(1, 0) + s.at(1, 1) + s.at(1, 2) == doctest::Approx(1.0));

  std::vector<std::uint8_t> dead{0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(g.softmax_masked(x, dead), std::invalid_argument);
}

TEST_CASE("cross entropy of uniform logits is log num_classes") {
  Graph g;
  Graph::Id z = g.constant(Tensor({4, 3}, 0.0));
  Graph::Id ce = g.cross_entropy_logits(z, {0, 1, 2, 0});
  CHECK(g.value(ce).v[0] == doctest::Approx(std::log(3.0)));
  // row masking: only two rows used, same value
  Graph::Id ce2 = g.cross_entropy_logits(z, {0, 1, 2, 0}, {1, 0, 0, 1});
  CHECK(g.value(ce2).v[0] == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(g.cross_entropy_logits(z, {0, 1, 2, 0}, {0, 0, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("smooth_l1 worked value") {
  Graph g;
  // |d| = 0.5 everywhere -> 0.5 * 0.25 = 0.125
  Graph::Id a = g.constant(Tensor::row({0.5, 1.5}));
  Graph::Id b = g.constant(Tensor::row({0.0, 1.0}));
  CHECK(g.value(g.smooth_l1(a, b)).v[0] == doctest::Approx(0.125));
  // |d| = 2 -> 2 - 0.5 = 1.5 (linear branch)
  Graph::Id c = g.constant(Tensor::row({2.0}));
  Graph::Id d = g.constant(Tensor::row({0.0}));
  CHECK(g.value(g.smooth_l1(c, d)).v[0] == doctest::Approx(1.5));
}

TEST_CASE("gradient accumulation: y = x + x") {
  ParamStore ps;
  Rng rng(0);
  ps.create("x", {1, 1}, [] { return 3.0; });
  Graph g;
  Graph::Id x = g.param(ps, "x");
  Graph::Id y = g.sum(g.add(x, x));
  g.backward(y);
  CHECK(ps.entry("x").grad.v[0] == doctest::Approx(2.0));
}

TEST_CASE("param gradients flow through shared leaves") {
  ParamStore ps;
  ps.create("w", {1, 1}, [] { return 2.0; });
  Graph g;
  Graph::Id w = g.param(ps, "w");
  Graph::Id y = g.sum(g.mul(w, w));  // y = w^2, dy/dw = 2w = 4
  g.backward(y);
  CHECK(ps.entry("w").grad.v[0] == doctest::Approx(4.0));
}

TEST_CASE("grad_check passes on a composite network") {
  ParamStore ps;
  Rng rng(7);
  ps.create("w1", {4, 8}, xavier(rng, 0.5));
  ps.create("b1", {1, 8}, xavier(rng, 0.1));
  ps.create("w2", {8, 3}, xavier(rng, 0.5));
  ps.create("g", {1, 8}, [] { return 1.0; });
  ps.create("be", {1, 8}, [] { return 0.0; });
  Tensor x({5, 4});
  {
    Rng xr(9);
    for (auto& v : x.v) v = xr.uniform(-1, 1);
  }
  auto loss_fn = [&] {
    Graph g;
    Graph::Id h = g.add_rowvec(g.matmul(g.constant(x), g.param(ps, "w1")), g.param(ps, "b1"));
    h = g.layer_norm(h, g.param(ps, "g"), g.param(ps, "be"));
    h = g.relu(h);
    Graph::Id z = g.matmul(h, g.param(ps, "w2"));
    Graph::Id sm = g.softmax_masked(z, {});
    Graph::Id loss = g.cross_entropy_logits(z, {0, 1, 2, 1, 0});
    loss = g.add(loss, g.scale(g.mean(sm), 0.5));
    ps.zero_grad();
    g.backward(loss);
    return g.value(loss).v[0];
  };
  CHECK(grad_check(ps, loss_fn, 1e-5, 6, 123) < 1e-6);
}

TEST_CASE("grad_check per structured op") {
  Rng rng(21);
  auto check_op = [&](auto build) {
    ParamStore ps;
    ps.create("a", {3, 4}, xavier(rng, 0.8));
    ps.create("b", {3, 4}, xavier(rng, 0.8));
    auto loss_fn = [&] {
      Graph g;
      Graph::Id loss = build(g, g.param(ps, "a"), g.param(ps, "b"));
      ps.zero_grad();
      g.backward(loss);
      return g.value(loss).v[0];
    };
    return grad_check(ps, loss_fn, 1e-5, 6, 5);
  };
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.sum(g.slice_cols(g.mul(a, b), 1, 2));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.sum(g.slice_rows(g.add(a, b), 1, 2));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.sum(g.concat_cols({a, b}));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.sum(g.concat_rows({a, b}));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.sum(g.gather_rows(g.mul(a, b), {2, 0, 2}));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          return g.smooth_l1(a, g.scale(b, 0.3));
        }) < 1e-6);
  CHECK(check_op([](Graph& g, Graph::Id a, Graph::Id b) {
          // pair_scale wants square weights: build 3x3 from a slice
          Graph::Id w = g.slice_cols(a, 0, 3);
          return g.sum(g.pair_scale(w, b));
        }) < 1e-6);
}

TEST_CASE("grad_check negative control detects corrupted gradients") {
  ParamStore ps;
  Rng rng(3);
  ps.create("w", {2, 2}, xavier(rng, 1.0));
  auto bad_loss_fn = [&] {
    Graph g;
    Graph::Id w = g.param(ps, "w");
    Graph::Id loss = g.sum(g.mul(w, w));
    ps.zero_grad();
    g.backward(loss);
    for (auto& v : ps.entry("w").grad.v) v += 0.5;  // sabotage
    return g.value(loss).v[0];
  };
  CHECK(grad_check(ps, bad_loss_fn, 1e-5, 4, 1) > 1e-2);
}

TEST_CASE("batch_norm training normalizes columns and tracks running stats") {
  ParamStore ps;
  ps.create("gamma", {1, 2}, [] { return 1.0; });
  ps.create("beta", {1, 2}, [] { return 0.0; });
  BatchNormState st;
  Tensor x = Tensor::matrix(4, 2, {1, 10, 2, 20, 3, 30, 4, 40});
  {
    Graph g;
    Graph::Id y = g.batch_norm(g.constant(x), g.param(ps, "gamma"), g.param(ps, "beta"), st,
                               true);
    const Tensor& v = g.value(y);
    for (int c = 0; c < 2; ++c) {
      double mean = 0, var = 0;
      for (int r = 0; r < 4; ++r) mean += v.at(r, c);
      mean /= 4;
      for (int r = 0; r < 4; ++r) var += (v.at(r, c) - mean) * (v.at(r, c) - mean);
      CHECK(mean == doctest::Approx(0).epsilon(1e-9));
      CHECK(var / 4 == doctest::Approx(1).epsilon(1e-3));
    }
    CHECK(st.initialized);
    CHECK(st.running_mean.v[0] != 0.0);
  }
  {
    // eval mode must use the running statistics, not the batch ones
    Graph g;
    Tensor single = Tensor::matrix(1, 2, {2.5, 25});
    Graph::Id y = g.batch_norm(g.constant(single), g.param(ps, "gamma"), g.param(ps, "beta"),
                               st, false);
    CHECK(std::isfinite(g.value(y).v[0]));
  }
}

TEST_CASE("batch_norm gradient check") {
  ParamStore ps;
  Rng rng(5);
  ps.create("x", {6, 3}, xavier(rng, 1.0));
  ps.create("gamma", {1, 3}, [] { return 1.2; });
  ps.create("beta", {1, 3}, [] { return -0.3; });
  BatchNormState st;
  auto loss_fn = [&] {
    Graph g;
    BatchNormState local = st;  // keep running stats fixed across fd probes
    Graph::Id y = g.batch_norm(g.param(ps, "x"), g.param(ps, "gamma"), g.param(ps, "beta"),
                               local, true);
    Graph::Id loss = g.sum(g.mul(y, y));
    ps.zero_grad();
    g.backward(loss);
    return g.value(loss).v[0];
  };
  CHECK(grad_check(ps, loss_fn, 1e-5, 6, 77) < 1e-5);
}

TEST_CASE("adam first step algebra") {
  ParamStore ps;
  ps.create("w", {1, 2}, [] { return 1.0; });
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  ps.entry("w").grad = Tensor::row({0.5, -2.0});
  ps.adam_step(cfg);
  // decoupled decay then bias-corrected update: mhat = g, vhat = g^2
  for (int i = 0; i < 2; ++i) {
    double grad = i == 0 ? 0.5 : -2.0;
    double expect = 1.0 * (1.0 - cfg.lr * cfg.weight_decay) -
                    cfg.lr * grad / (std::abs(grad) + cfg.eps);
    CHECK(ps.entry("w").value.v[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(ps.step == 1);
}

TEST_CASE("deterministic rng streams") {
  Rng a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal(0, 1) == b.normal(0, 1));
  }
}
