#include "doctest.h"

#include "lcrank/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

using namespace lcrank;

namespace {

// Reference implementations kept deliberately naive and separate from the
// graph code paths.

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk)
        acc += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
      out[static_cast<std::size_t>(i) * n + j] = acc;
    }
  return out;
}

std::vector<double> naive_conv1d(const std::vector<double>& sig, const std::vector<double>& ker,
                                 const std::vector<double>& bias, int l, int cin, int k, int cout) {
  const int lo = l - k + 1;
  std::vector<double> out(static_cast<std::size_t>(lo) * cout, 0.0);
  for (int t = 0; t < lo; ++t)
    for (int o = 0; o < cout; ++o) {
      double acc = bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < k; ++i)
        for (int c = 0; c < cin; ++c)
          acc += sig[static_cast<std::size_t>(t + i) * cin + c] *
                 ker[(static_cast<std::size_t>(i) * cin + c) * cout + o];
      out[static_cast<std::size_t>(t) * cout + o] = acc;
    }
  return out;
}

double eval_loss(const std::function<Var(Graph&)>& build) {
  Graph g;
  return g.value(build(g)).values[0];
}

// Central-difference check of every coordinate of every listed parameter.
// Builders bind their own leaves so repeated bindings are exercised too.
double fd_max_rel_err(const std::vector<Tensor*>& params, const std::function<Var(Graph&)>& build,
                      double step = 1e-5) {
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Graph g;
    g.backward(build(g));
  }
  double worst = 0.0;
  for (Tensor* p : params) {
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      const double keep = p->values[i];
      p->values[i] = keep + step;
      const double up = eval_loss(build);
      p->values[i] = keep - step;
      const double dn = eval_loss(build);
      p->values[i] = keep;
      const double fd = (up - dn) / (2.0 * step);
      const double an = p->grad[i];
      const double err = std::fabs(an - fd) / std::max({1e-6, std::fabs(an), std::fabs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("rng is deterministic and respects ranges") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = r.uniform(-2.0, 5.0);
    CHECK(v >= -2.0);
    CHECK(v < 5.0);
    const auto n = r.uniform_int(17);
    CHECK(n >= 0);
    CHECK(n < 17);
    const double lg = r.log_uniform(1e-4, 1e-1);
    CHECK(lg >= 1e-4);
    CHECK(lg <= 1e-1);
  }
  CHECK_THROWS_AS(r.uniform_int(0), std::invalid_argument);
  CHECK_THROWS_AS(r.log_uniform(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("rng gaussian has roughly standard moments") {
  Rng r(99);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.gaussian();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.05);
  CHECK(std::fabs(var - 1.0) < 0.08);
}

TEST_CASE("mix_seed separates by salt") {
  CHECK(mix_seed(42, 0) != mix_seed(42, 1));
  CHECK(mix_seed(42, 1) == mix_seed(42, 1));
  CHECK(mix_seed(42, 1) != mix_seed(43, 1));
}

TEST_CASE("tensor construction validates shape against value count") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({-1}), std::invalid_argument);
  const Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.numel() == 4);
  CHECK(shape_str(t.shape) == "[2x2]");
}

TEST_CASE("elementwise ops support equal shapes and scalar broadcast") {
  Graph g;
  Var a = g.constant(Tensor::row({1.0, 2.0, 3.0}));
  Var b = g.constant(Tensor::row({10.0, 20.0, 30.0}));
  Var s = g.constant(Tensor::scalar(2.0));

  CHECK(g.value(g.add(a, b)).values == std::vector<double>{11.0, 22.0, 33.0});
  CHECK(g.value(g.sub(a, b)).values == std::vector<double>{-9.0, -18.0, -27.0});
  CHECK(g.value(g.mul(a, b)).values == std::vector<double>{10.0, 40.0, 90.0});
  CHECK(g.value(g.add(a, s)).values == std::vector<double>{3.0, 4.0, 5.0});
  CHECK(g.value(g.mul(s, a)).values == std::vector<double>{2.0, 4.0, 6.0});
  CHECK(g.value(g.sub(s, a)).values == std::vector<double>{1.0, 0.0, -1.0});
  CHECK(g.value(g.scale(a, -1.5)).values == std::vector<double>{-1.5, -3.0, -4.5});

  Var bad = g.constant(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(g.add(a, bad), std::invalid_argument);
}

TEST_CASE("matmul matches the naive oracle") {
  Rng r(5);
  const int m = 3, k = 4, n = 5;
  Tensor a = uniform_init({m, k}, -1.0, 1.0, r);
  Tensor b = uniform_init({k, n}, -1.0, 1.0, r);
  const auto expect = naive_matmul(a.values, b.values, m, k, n);

  Graph g;
  const Tensor& got = g.value(g.matmul(g.constant(a), g.constant(b)));
  REQUIRE(got.shape == Shape{m, n});
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(got.values[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  CHECK_THROWS_AS(g.matmul(g.constant(a), g.constant(a)), std::invalid_argument);
}

TEST_CASE("conv1d_valid matches the nested-loop oracle") {
  Rng r(11);
  const int l = 7, cin = 2, k = 3, cout = 4;
  Tensor sig = uniform_init({l, cin}, -1.0, 1.0, r);
  Tensor ker = uniform_init({k, cin, cout}, -1.0, 1.0, r);
  Tensor bias = uniform_init({cout}, -0.5, 0.5, r);
  const auto expect = naive_conv1d(sig.values, ker.values, bias.values, l, cin, k, cout);

  Graph g;
  const Tensor& got = g.value(g.conv1d_valid(g.constant(sig), g.constant(ker), g.constant(bias)));
  REQUIRE(got.shape == Shape{l - k + 1, cout});
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(got.values[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  Tensor long_ker = Tensor::zeros({l + 1, cin, cout});
  CHECK_THROWS_AS(g.conv1d_valid(g.constant(sig), g.constant(long_ker), g.constant(bias)),
                  std::invalid_argument);
}

TEST_CASE("global_max_pool takes per-channel max and routes ties to the first row") {
  Graph g;
  Tensor sig = Tensor::matrix(3, 2, {1.0, 5.0, 4.0, 5.0, 4.0, 2.0});
  Tensor leafed = sig;
  leafed.set_requires_grad(true);
  Var v = g.global_max_pool(g.leaf(leafed));
  CHECK(g.value(v).values == std::vector<double>{4.0, 5.0});
  g.backward(g.reduce_sum(v));
  CHECK(leafed.grad == std::vector<double>{0.0, 1.0, 1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("segment_max_pool pools blockwise and matches global_max_pool on one segment") {
  Rng r(14);
  Tensor x = uniform_init({6, 3}, -1.0, 1.0, r);

  Graph g;
  Var lx = g.constant(x);
  const Tensor& whole = g.value(g.segment_max_pool(lx, 6));
  const Tensor& global = g.value(g.global_max_pool(lx));
  CHECK(whole.values == global.values);

  const Tensor& blocks = g.value(g.segment_max_pool(lx, 3));
  REQUIRE(blocks.shape == Shape{2, 3});
  for (int b = 0; b < 2; ++b)
    for (int j = 0; j < 3; ++j)
      CHECK(blocks.at(b, j) == std::max(std::max(x.at(3 * b, j), x.at(3 * b + 1, j)), x.at(3 * b + 2, j)));

  CHECK_THROWS_AS(g.segment_max_pool(lx, 4), std::invalid_argument);

  const double err = fd_max_rel_err({&x}, [&](Graph& gg) {
    return gg.mean(gg.tanh(gg.segment_max_pool(gg.leaf(x), 2)));
  });
  CHECK(err < 1e-4);

  Tensor tie = Tensor::matrix(4, 1, {1.0, 1.0, 0.5, 2.0});
  tie.set_requires_grad(true);
  Graph g2;
  g2.backward(g2.reduce_sum(g2.segment_max_pool(g2.leaf(tie), 2)));
  CHECK(tie.grad == std::vector<double>{1.0, 0.0, 0.0, 1.0});
}

TEST_CASE("reduce_max routes gradient to the first maximal element") {
  Graph g;
  Tensor x = Tensor::row({2.0, 5.0, 5.0});
  x.set_requires_grad(true);
  Var v = g.reduce_max(g.leaf(x));
  CHECK(g.value(v).values[0] == 5.0);
  g.backward(v);
  CHECK(x.grad == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Graph g;
  Tensor x = Tensor::matrix(2, 3, {0.1, 0.9, -0.3, 100.0, 101.0, 99.0});
  const Tensor& y = g.value(g.softmax(g.constant(x)));
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += y.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor shifted = x;
  for (int j = 0; j < 3; ++j) shifted.at(0, j) += 7.5;
  const Tensor& y2 = g.value(g.softmax(g.constant(shifted)));
  for (int j = 0; j < 3; ++j) CHECK(y2.at(0, j) == doctest::Approx(y.at(0, j)).epsilon(1e-12));

  const Tensor& v1 = g.value(g.softmax(g.constant(Tensor::row({3.0, 3.0, 3.0}))));
  for (double p : v1.values) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("log rejects non-positive input") {
  Graph g;
  CHECK_THROWS_AS(g.log(g.constant(Tensor::row({1.0, 0.0}))), std::domain_error);
  CHECK_THROWS_AS(g.log(g.constant(Tensor::row({-2.0}))), std::domain_error);
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Var v = g.constant(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(v), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls and across repeated bindings") {
  Tensor x = Tensor::row({0.5, -1.0});
  x.set_requires_grad(true);

  {
    Graph g;
    Var lx = g.leaf(x);
    // y = sum(x*x + x), dy/dx = 2x + 1
    g.backward(g.reduce_sum(g.add(g.mul(lx, lx), lx)));
  }
  CHECK(x.grad == std::vector<double>{2.0, -1.0});

  {
    Graph g;
    // Bind the same tensor twice; contributions must add.
    Var a = g.leaf(x);
    Var b = g.leaf(x);
    g.backward(g.reduce_sum(g.add(a, b)));
  }
  CHECK(x.grad == std::vector<double>{4.0, 1.0});

  x.zero_grad();
  CHECK(x.grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("finite differences confirm gradients of the elementwise chain") {
  Rng r(21);
  Tensor x = uniform_init({3, 4}, -1.0, 1.0, r);
  const double err = fd_max_rel_err({&x}, [&](Graph& g) {
    Var lx = g.leaf(x);
    return g.reduce_sum(g.mul(g.sigmoid(lx), g.exp(g.scale(lx, 0.5))));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences confirm gradients through matmul, tanh and mean") {
  Rng r(22);
  Tensor a = uniform_init({3, 4}, -1.0, 1.0, r);
  Tensor b = uniform_init({4, 2}, -1.0, 1.0, r);
  const double err = fd_max_rel_err({&a, &b}, [&](Graph& g) {
    return g.mean(g.tanh(g.matmul(g.leaf(a), g.leaf(b))));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences confirm gradients through clamp and log") {
  Rng r(23);
  Tensor x = uniform_init({2, 5}, 0.2, 0.8, r);
  const double err = fd_max_rel_err({&x}, [&](Graph& g) {
    return g.reduce_sum(g.log(g.clamp(g.leaf(x), 0.1, 0.9)));
  });
  CHECK(err < 1e-4);

  // Out-of-range coordinates get zero gradient.
  Tensor y = Tensor::row({0.05, 0.5, 0.95});
  y.set_requires_grad(true);
  Graph g;
  g.backward(g.reduce_sum(g.clamp(g.leaf(y), 0.1, 0.9)));
  CHECK(y.grad == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("finite differences confirm gradients through conv and pooling") {
  Rng r(24);
  Tensor sig = uniform_init({8, 2}, -1.0, 1.0, r);
  Tensor ker = uniform_init({3, 2, 4}, -1.0, 1.0, r);
  Tensor bias = uniform_init({4}, -0.5, 0.5, r);
  const double err = fd_max_rel_err({&sig, &ker, &bias}, [&](Graph& g) {
    Var c = g.conv1d_valid(g.leaf(sig), g.leaf(ker), g.leaf(bias));
    return g.mean(g.tanh(c));
  });
  CHECK(err < 1e-4);

  const double perr = fd_max_rel_err({&sig, &ker, &bias}, [&](Graph& g) {
    Var c = g.conv1d_valid(g.leaf(sig), g.leaf(ker), g.leaf(bias));
    return g.reduce_sum(g.global_max_pool(c));
  });
  CHECK(perr < 1e-4);
}

TEST_CASE("finite differences confirm gradients through concat, slice, reshape and add_rows") {
  Rng r(25);
  Tensor p = uniform_init({2, 3}, -1.0, 1.0, r);
  Tensor q = uniform_init({2, 2}, -1.0, 1.0, r);
  Tensor row = uniform_init({1, 5}, -1.0, 1.0, r);
  const double err = fd_max_rel_err({&p, &q, &row}, [&](Graph& g) {
    Var cat = g.concat({g.leaf(p), g.leaf(q)}, 1);           // [2 x 5]
    Var shifted = g.add_rows(cat, g.leaf(row));
    Var sl = g.slice(shifted, 1, 1, 3);                      // [2 x 3]
    Var stacked = g.concat({sl, g.leaf(p)}, 0);              // [4 x 3]
    return g.mean(g.tanh(g.reshape(stacked, {3, 4})));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("concat and slice produce the expected layouts") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = g.constant(Tensor::matrix(2, 1, {5, 6}));
  const Tensor& cat1 = g.value(g.concat({a, b}, 1));
  CHECK(cat1.values == std::vector<double>{1, 2, 5, 3, 4, 6});
  Var cat0 = g.concat({a, a}, 0);
  CHECK(g.value(cat0).shape == Shape{4, 2});
  const Tensor& sl = g.value(g.slice(cat0, 0, 1, 2));
  CHECK(sl.values == std::vector<double>{3, 4, 1, 2});
  const Tensor& slc = g.value(g.slice(a, 1, 1, 1));
  CHECK(slc.values == std::vector<double>{2, 4});
  CHECK_THROWS_AS(g.slice(a, 0, 1, 5), std::out_of_range);
  CHECK_THROWS_AS(g.reshape(a, {3, 3}), std::invalid_argument);
}

TEST_CASE("finite differences confirm gradients through table lookups") {
  Rng r(26);
  Tensor table = uniform_init({5, 3}, -1.0, 1.0, r);
  const double err = fd_max_rel_err({&table}, [&](Graph& g) {
    Var rows = g.rows_lookup(g.leaf(table), {0, 2, 1, 2});
    Var one = g.embedding_lookup(g.leaf(table), 4);
    return g.add(g.mean(g.tanh(rows)), g.mean(one));
  });
  CHECK(err < 1e-4);

  Graph g;
  CHECK_THROWS_AS(g.rows_lookup(g.constant(table), {0, 5}), std::out_of_range);
  CHECK_THROWS_AS(g.embedding_lookup(g.constant(table), -1), std::out_of_range);
}

TEST_CASE("finite differences confirm gradients through softmax") {
  Rng r(27);
  Tensor x = uniform_init({3, 4}, -1.0, 1.0, r);
  Tensor w = uniform_init({3, 4}, -1.0, 1.0, r);
  const double err = fd_max_rel_err({&x, &w}, [&](Graph& g) {
    return g.reduce_sum(g.mul(g.softmax(g.leaf(x)), g.leaf(w)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences confirm gradients through reduce_max") {
  Tensor x = Tensor::row({0.1, 0.9, 0.4, -0.6});
  const double err = fd_max_rel_err({&x}, [&](Graph& g) {
    return g.reduce_max(g.mul(g.leaf(x), g.leaf(x)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("lstm cell matches the direct recurrence arithmetic") {
  LstmParams p;
  p.wi = Tensor::matrix(1, 1, {0.5});
  p.wf = Tensor::matrix(1, 1, {-0.4});
  p.wg = Tensor::matrix(1, 1, {0.9});
  p.wo = Tensor::matrix(1, 1, {0.2});
  p.ui = Tensor::matrix(1, 1, {0.25});
  p.uf = Tensor::matrix(1, 1, {0.35});
  p.ug = Tensor::matrix(1, 1, {-0.15});
  p.uo = Tensor::matrix(1, 1, {0.45});
  p.bi = Tensor::matrix(1, 1, {0.1});
  p.bf = Tensor::matrix(1, 1, {-0.2});
  p.bg = Tensor::matrix(1, 1, {0.3});
  p.bo = Tensor::matrix(1, 1, {0.05});

  const double x = 0.3, h0 = 0.6, c0 = -0.25;
  auto sg = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sg(x * 0.5 + h0 * 0.25 + 0.1);
  const double f = sg(x * -0.4 + h0 * 0.35 - 0.2);
  const double cand = std::tanh(x * 0.9 + h0 * -0.15 + 0.3);
  const double o = sg(x * 0.2 + h0 * 0.45 + 0.05);
  const double c1 = f * c0 + i * cand;
  const double h1 = o * std::tanh(c1);

  Graph g;
  LstmStepState st{g.constant(Tensor::matrix(1, 1, {h0})), g.constant(Tensor::matrix(1, 1, {c0}))};
  auto out = lstm_cell(g, g.constant(Tensor::matrix(1, 1, {x})), st, p);
  CHECK(g.value(out.h).values[0] == doctest::Approx(h1).epsilon(1e-14));
  CHECK(g.value(out.c).values[0] == doctest::Approx(c1).epsilon(1e-14));
}

TEST_CASE("lstm forward emits one output per step and validates input") {
  Rng r(31);
  LstmParams p = LstmParams::init(2, 3, r);
  Graph g;
  std::vector<Var> xs;
  for (int t = 0; t < 4; ++t) xs.push_back(g.constant(uniform_init({2, 2}, -1.0, 1.0, r)));
  auto trace = lstm_forward(g, xs, p, 2);
  CHECK(trace.outputs.size() == 4);
  CHECK(g.value(trace.final_state.h).shape == Shape{2, 3});
  CHECK(g.value(trace.outputs.back()).values == g.value(trace.final_state.h).values);

  CHECK_THROWS_AS(lstm_forward(g, {}, p, 2), std::invalid_argument);
  std::vector<Var> bad{g.constant(Tensor::zeros({3, 2}))};
  CHECK_THROWS_AS(lstm_forward(g, bad, p, 2), std::invalid_argument);
}

TEST_CASE("finite differences confirm lstm parameter gradients") {
  Rng r(32);
  LstmParams p = LstmParams::init(2, 3, r);
  std::vector<Tensor> inputs;
  for (int t = 0; t < 3; ++t) inputs.push_back(uniform_init({2, 2}, -1.0, 1.0, r));

  std::vector<Tensor*> params = p.tensors();
  const double err = fd_max_rel_err(params, [&](Graph& g) {
    std::vector<Var> xs;
    for (const Tensor& t : inputs) xs.push_back(g.constant(t));
    auto trace = lstm_forward(g, xs, p, 2);
    return g.mean(trace.final_state.h);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("adam first step matches hand computation and skips zero-gradient coordinates") {
  Tensor p0 = Tensor::row({1.0, -2.0});
  p0.set_requires_grad(true);
  p0.grad = {0.5, 0.0};
  AdamState st({&p0}, 0.1);
  adam_step({&p0}, st);

  const double m = 0.1 * 0.5;                   // (1-beta1)*g
  const double v = 0.001 * 0.25;                // (1-beta2)*g^2
  const double mh = m / (1.0 - 0.9);
  const double vh = v / (1.0 - 0.999);
  const double expected = 1.0 - 0.1 * mh / (std::sqrt(vh) + 1e-8);
  CHECK(st.step_count == 1);
  CHECK(p0.values[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(p0.values[1] == -2.0);

  Tensor q = Tensor::row({3.0});
  q.set_requires_grad(true);
  AdamState st2({&q});
  adam_step({&q}, st2);
  CHECK(q.values[0] == 3.0);

  CHECK_THROWS_AS(adam_step({&p0, &q}, st), std::invalid_argument);
}

TEST_CASE("glorot bounds follow the fan sizes") {
  Rng r(41);
  Tensor w = glorot_uniform({10, 20}, 10, 20, r);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : w.values) {
    CHECK(v >= -bound);
    CHECK(v <= bound);
  }
  CHECK(w.requires_grad);
}
