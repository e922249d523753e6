#include <doctest.h>

#include <cmath>

#include "facetpath/adam.hpp"
#include "facetpath/errors.hpp"
#include "facetpath/tape.hpp"
#include "test_support.hpp"

using namespace facetpath;
using testsupport::fd_gradient;
using testsupport::max_rel_err;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double span = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = (2.0 * rng.uniform() - 1.0) * span;
  }
  return t;
}

}  // namespace

TEST_CASE("matmul identity and shape errors") {
  Tape t;
  Tensor eye(3, 3, 0.0);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(7);
  Tensor x = random_tensor(3, 4, rng);
  VarId a = t.constant(eye);
  VarId b = t.constant(x);
  VarId c = t.matmul(a, b);
  CHECK(t.value(c) == x);
  CHECK_THROWS_AS(t.matmul(b, b), ShapeError);
}

TEST_CASE("row_mean of identical rows returns the row") {
  Tape t;
  Tensor x(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    x.at(i, 0) = 1.5;
    x.at(i, 1) = -2.0;
    x.at(i, 2) = 0.25;
  }
  VarId m = t.row_mean(t.constant(x));
  CHECK(t.value(m).at(0, 0) == doctest::Approx(1.5));
  CHECK(t.value(m).at(0, 1) == doctest::Approx(-2.0));
  CHECK(t.value(m).at(0, 2) == doctest::Approx(0.25));
}

TEST_CASE("scatter_add then gather round-trips a permutation") {
  Tape t;
  Rng rng(3);
  Tensor x = random_tensor(4, 2, rng);
  std::vector<int> perm = {2, 0, 3, 1};
  VarId a = t.constant(x);
  VarId scattered = t.scatter_add_rows(a, perm, 4);
  VarId back = t.gather_rows(scattered, perm);
  CHECK(t.value(back) == x);
}

TEST_CASE("product rule: d(x*y)/dx = y") {
  Tape t;
  VarId x = t.leaf(Tensor::scalar(3.25), true);
  VarId y = t.leaf(Tensor::scalar(-1.75), true);
  VarId p = t.hadamard(x, y);
  t.backward(p);
  CHECK(t.grad(x)[0] == doctest::Approx(-1.75));
  CHECK(t.grad(y)[0] == doctest::Approx(3.25));
}

TEST_CASE("parameter not on the loss path gets a zero gradient") {
  Tape t;
  VarId x = t.leaf(Tensor::scalar(2.0), true);
  VarId unused = t.leaf(Tensor::scalar(5.0), true);
  VarId loss = t.hadamard(x, x);
  t.backward(loss);
  CHECK(t.grad(unused)[0] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  VarId x = t.leaf(Tensor(2, 2, 1.0), true);
  CHECK_THROWS_AS(t.backward(x), ContractError);
}

TEST_CASE("diamond reuse accumulates gradients") {
  // z = x*x + x*x -> dz/dx = 4x
  Tape t;
  VarId x = t.leaf(Tensor::scalar(1.5), true);
  VarId sq = t.hadamard(x, x);
  VarId z = t.add(sq, sq);
  t.backward(z);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("elu and sigmoid point values") {
  Tape t;
  VarId x = t.constant(Tensor::from_rows({{0.0, 1.0, -1.0}}));
  const Tensor& e = t.value(t.elu(x));
  CHECK(e[0] == doctest::Approx(0.0));
  CHECK(e[1] == doctest::Approx(1.0));
  CHECK(e[2] == doctest::Approx(std::exp(-1.0) - 1.0));
  const Tensor& s = t.value(t.sigmoid(t.constant(Tensor::scalar(0.0))));
  CHECK(s[0] == doctest::Approx(0.5));
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape t;
  const Tensor& y = t.value(t.softmax(t.constant(Tensor(1, 3, 0.0))));
  for (int j = 0; j < 3; ++j) CHECK(y[j] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("finite differences: every primitive in isolation") {
  Rng rng(11);
  Tensor a0 = random_tensor(4, 3, rng);
  Tensor b0 = random_tensor(3, 5, rng);
  Tensor c0 = random_tensor(4, 3, rng);
  Tensor w0 = random_tensor(4, 1, rng);
  Tensor bias0 = random_tensor(1, 3, rng);

  // matmul + sum
  {
    auto f = [&]() {
      Tape t;
      VarId v = t.sum_all(t.matmul(t.constant(a0), t.constant(b0)));
      return t.value(v)[0];
    };
    Tensor fd_a = fd_gradient(a0, f);
    Tensor fd_b = fd_gradient(b0, f);
    Tape t;
    VarId a = t.leaf(a0, true);
    VarId b = t.leaf(b0, true);
    t.backward(t.sum_all(t.matmul(a, b)));
    CHECK(max_rel_err(t.grad(a), fd_a) < 1e-4);
    CHECK(max_rel_err(t.grad(b), fd_b) < 1e-4);
  }

  // hadamard, elu, sigmoid, log_sigmoid chain
  {
    auto f = [&]() {
      Tape t;
      VarId x = t.constant(a0);
      VarId y = t.constant(c0);
      VarId v = t.sum_all(t.log_sigmoid(t.elu(t.hadamard(x, y))));
      return t.value(v)[0];
    };
    Tensor fd_a = fd_gradient(a0, f);
    Tape t;
    VarId x = t.leaf(a0, true);
    VarId y = t.constant(c0);
    t.backward(t.sum_all(t.log_sigmoid(t.elu(t.hadamard(x, y)))));
    CHECK(max_rel_err(t.grad(x), fd_a) < 1e-4);
  }

  // softmax + take_per_row + log + concat + slice
  {
    std::vector<int> labels = {0, 2, 1, 2};
    auto f = [&]() {
      Tape t;
      VarId x = t.constant(a0);
      VarId sm = t.softmax(x);
      VarId picked = t.take_per_row(sm, labels);
      VarId v = t.scale(t.sum_all(t.log_clamped(picked)), -1.0);
      return t.value(v)[0];
    };
    Tensor fd_a = fd_gradient(a0, f);
    Tape t;
    VarId x = t.leaf(a0, true);
    VarId sm = t.softmax(x);
    t.backward(t.scale(t.sum_all(t.log_clamped(t.take_per_row(sm, labels))), -1.0));
    CHECK(max_rel_err(t.grad(x), fd_a) < 1e-4);
  }

  // gather/scatter/rowwise_scale/row_mean/row_sum/transpose/broadcast
  {
    std::vector<int> idx = {3, 1, 1, 0, 2};
    auto f = [&]() {
      Tape t;
      VarId x = t.constant(a0);
      VarId w = t.constant(w0);
      VarId g = t.gather_rows(t.rowwise_scale(x, w), idx);
      VarId s = t.scatter_add_rows(g, {0, 1, 0, 2, 1}, 3);
      VarId b = t.add_row_broadcast(s, t.constant(bias0));
      VarId v = t.sum_all(t.hadamard(t.row_sum(b), t.row_sum(b)));
      return t.value(v)[0];
    };
    Tensor fd_a = fd_gradient(a0, f);
    Tensor fd_w = fd_gradient(w0, f);
    Tensor fd_bias = fd_gradient(bias0, f);
    Tape t;
    VarId x = t.leaf(a0, true);
    VarId w = t.leaf(w0, true);
    VarId bias = t.leaf(bias0, true);
    VarId g = t.gather_rows(t.rowwise_scale(x, w), idx);
    VarId s = t.scatter_add_rows(g, {0, 1, 0, 2, 1}, 3);
    VarId b = t.add_row_broadcast(s, bias);
    t.backward(t.sum_all(t.hadamard(t.row_sum(b), t.row_sum(b))));
    CHECK(max_rel_err(t.grad(x), fd_a) < 1e-4);
    CHECK(max_rel_err(t.grad(w), fd_w) < 1e-4);
    CHECK(max_rel_err(t.grad(bias), fd_bias) < 1e-4);
  }

  // concat_rows/concat_cols/slice_cols/row_mean/transpose
  {
    auto f = [&]() {
      Tape t;
      VarId x = t.constant(a0);
      VarId y = t.constant(c0);
      VarId cat = t.concat_rows({x, y});             // 8 x 3
      VarId cols = t.concat_cols({cat, cat});        // 8 x 6
      VarId sl = t.slice_cols(cols, 1, 4);           // 8 x 3
      VarId v = t.sum_all(t.row_mean(t.transpose(sl)));
      return t.value(v)[0];
    };
    Tensor fd_a = fd_gradient(a0, f);
    Tape t;
    VarId x = t.leaf(a0, true);
    VarId y = t.constant(c0);
    VarId cat = t.concat_rows({x, y});
    VarId cols = t.concat_cols({cat, cat});
    t.backward(t.sum_all(t.row_mean(t.transpose(t.slice_cols(cols, 1, 4)))));
    CHECK(max_rel_err(t.grad(x), fd_a) < 1e-4);
  }
}

TEST_CASE("gumbel softmax contract") {
  Rng rng(5);

  SUBCASE("noise off, tau 1 equals plain softmax exactly") {
    Tensor logits = random_tensor(4, 5, rng, 2.0);
    Tape t;
    VarId l = t.constant(logits);
    VarId gs = t.gumbel_softmax(l, 1.0, nullptr, false, false);
    VarId sm = t.softmax(l);
    CHECK(t.value(gs) == t.value(sm));
  }

  SUBCASE("weights sum to one under noise") {
    Tape t;
    Tensor logits = random_tensor(200, 7, rng, 3.0);
    VarId gs = t.gumbel_softmax(t.constant(logits), 0.5, &rng, true, false);
    const Tensor& y = t.value(gs);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        s += y.at(i, j);
        CHECK(y.at(i, j) >= 0.0);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }

  SUBCASE("noise off preserves argmax for every tau") {
    Tensor logits = Tensor::from_rows({{1.0, 0.0, 0.0}});
    for (double tau : {0.01, 0.5, 1.0, 10.0}) {
      Tape t;
      const Tensor& y = t.value(
          t.gumbel_softmax(t.constant(logits), tau, nullptr, false, false));
      CHECK(y[0] > y[1]);
      CHECK(y[0] > y[2]);
    }
  }

  SUBCASE("low temperature concentrates mass") {
    Tensor logits = Tensor::from_rows({{1.0, 0.0, 0.0}});
    Tape t;
    const Tensor& y = t.value(
        t.gumbel_softmax(t.constant(logits), 0.01, nullptr, false, false));
    CHECK(y[0] >= 0.99);
  }

  SUBCASE("hard mode is one-hot forward with soft backward") {
    Tensor logits = random_tensor(3, 4, rng, 1.0);
    Tape t;
    VarId l = t.leaf(logits, true);
    VarId gs = t.gumbel_softmax(l, 0.5, nullptr, false, true);
    const Tensor& y = t.value(gs);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      int ones = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        s += y.at(i, j);
        if (y.at(i, j) == 1.0) ++ones;
      }
      CHECK(s == 1.0);
      CHECK(ones == 1);
    }
    t.backward(t.sum_all(t.hadamard(gs, gs)));
    // Straight-through: gradient flows even though the forward is piecewise
    // constant.
    double norm = 0.0;
    for (std::size_t i = 0; i < t.grad(l).size(); ++i) {
      norm += std::abs(t.grad(l)[i]);
    }
    CHECK(norm > 0.0);
  }

  SUBCASE("tau <= 0 is rejected") {
    Tape t;
    VarId l = t.constant(Tensor(1, 3, 0.0));
    CHECK_THROWS_AS(t.gumbel_softmax(l, 0.0, nullptr, false, false), ConfigError);
  }

  SUBCASE("noise-off gradient matches finite differences") {
    Tensor logits = random_tensor(3, 4, rng, 1.0);
    auto f = [&]() {
      Tape t;
      VarId gs = t.gumbel_softmax(t.constant(logits), 0.5, nullptr, false, false);
      return t.value(t.sum_all(t.hadamard(gs, gs)))[0];
    };
    Tensor fd = fd_gradient(logits, f);
    Tape t;
    VarId l = t.leaf(logits, true);
    VarId gs = t.gumbel_softmax(l, 0.5, nullptr, false, false);
    t.backward(t.sum_all(t.hadamard(gs, gs)));
    CHECK(max_rel_err(t.grad(l), fd) < 1e-4);
  }
}

TEST_CASE("batch norm") {
  SUBCASE("two-row +-1 batch normalizes to +-1/sqrt(1+eps)") {
    Tape t;
    BatchNormState st(2);
    VarId x = t.constant(Tensor::from_rows({{-1.0, -1.0}, {1.0, 1.0}}));
    VarId gamma = t.constant(Tensor(1, 2, 1.0));
    VarId beta = t.constant(Tensor(1, 2, 0.0));
    const Tensor& y = t.value(t.batch_norm(x, gamma, beta, st, Mode::Train));
    const double expect = 1.0 / std::sqrt(1.0 + st.eps);
    CHECK(y.at(0, 0) == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(y.at(1, 0) == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("gamma 0 gives beta everywhere") {
    Tape t;
    BatchNormState st(2);
    Rng rng(1);
    VarId x = t.constant(random_tensor(4, 2, rng));
    VarId gamma = t.constant(Tensor(1, 2, 0.0));
    VarId beta = t.constant(Tensor(1, 2, 0.7));
    const Tensor& y = t.value(t.batch_norm(x, gamma, beta, st, Mode::Train));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.7));
  }

  SUBCASE("eval with fresh running stats is near-identity") {
    Tape t;
    BatchNormState st(3);
    Rng rng(2);
    Tensor x0 = random_tensor(4, 3, rng);
    VarId x = t.constant(x0);
    VarId gamma = t.constant(Tensor(1, 3, 1.0));
    VarId beta = t.constant(Tensor(1, 3, 0.0));
    const Tensor& y = t.value(t.batch_norm(x, gamma, beta, st, Mode::Eval));
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] == doctest::Approx(x0[i]).epsilon(1e-4));
    }
  }

  SUBCASE("single-row train batch is rejected") {
    Tape t;
    BatchNormState st(2);
    VarId x = t.constant(Tensor(1, 2, 1.0));
    VarId gamma = t.constant(Tensor(1, 2, 1.0));
    VarId beta = t.constant(Tensor(1, 2, 0.0));
    CHECK_THROWS_AS(t.batch_norm(x, gamma, beta, st, Mode::Train), NumericsError);
  }

  SUBCASE("pre-affine train output has mean 0 and variance 1") {
    Rng rng(3);
    Tensor x0 = random_tensor(64, 4, rng, 20.0);  // high variance vs eps
    Tape t;
    BatchNormState st(4);
    VarId y = t.batch_norm(t.constant(x0), t.constant(Tensor(1, 4, 1.0)),
                           t.constant(Tensor(1, 4, 0.0)), st, Mode::Train);
    const Tensor& v = t.value(y);
    for (std::size_t j = 0; j < 4; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < v.rows(); ++i) mean += v.at(i, j);
      mean /= static_cast<double>(v.rows());
      for (std::size_t i = 0; i < v.rows(); ++i) {
        var += (v.at(i, j) - mean) * (v.at(i, j) - mean);
      }
      var /= static_cast<double>(v.rows());
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }

  SUBCASE("train-mode gradient matches finite differences") {
    Rng rng(4);
    Tensor x0 = random_tensor(6, 3, rng);
    Tensor g0 = random_tensor(1, 3, rng);
    Tensor b0 = random_tensor(1, 3, rng);
    auto f = [&]() {
      Tape t;
      BatchNormState st(3);
      VarId y = t.batch_norm(t.constant(x0), t.constant(g0), t.constant(b0),
                             st, Mode::Train);
      return t.value(t.sum_all(t.hadamard(y, y)))[0];
    };
    Tensor fd_x = fd_gradient(x0, f);
    Tensor fd_g = fd_gradient(g0, f);
    Tensor fd_b = fd_gradient(b0, f);
    Tape t;
    BatchNormState st(3);
    VarId x = t.leaf(x0, true);
    VarId gamma = t.leaf(g0, true);
    VarId beta = t.leaf(b0, true);
    VarId y = t.batch_norm(x, gamma, beta, st, Mode::Train);
    t.backward(t.sum_all(t.hadamard(y, y)));
    CHECK(max_rel_err(t.grad(x), fd_x) < 1e-4);
    CHECK(max_rel_err(t.grad(gamma), fd_g) < 1e-4);
    CHECK(max_rel_err(t.grad(beta), fd_b) < 1e-4);
  }
}

TEST_CASE("dropout") {
  SUBCASE("rate 0 is exact identity") {
    Rng rng(5);
    Tensor x0 = random_tensor(3, 3, rng);
    Tape t;
    VarId y = t.dropout(t.constant(x0), 0.0, Mode::Train, &rng);
    CHECK(t.value(y) == x0);
  }
  SUBCASE("eval mode is identity") {
    Rng rng(6);
    Tensor x0 = random_tensor(3, 3, rng);
    Tape t;
    VarId y = t.dropout(t.constant(x0), 0.5, Mode::Eval, nullptr);
    CHECK(t.value(y) == x0);
  }
  SUBCASE("fixed-mask gradient matches finite differences") {
    Tensor x0(4, 4, 0.5);
    const std::uint64_t seed = 99;
    auto f = [&]() {
      Rng rng(seed);
      Tape t;
      VarId y = t.dropout(t.constant(x0), 0.5, Mode::Train, &rng);
      return t.value(t.sum_all(t.hadamard(y, y)))[0];
    };
    Tensor fd = fd_gradient(x0, f);
    Rng rng(seed);
    Tape t;
    VarId x = t.leaf(x0, true);
    VarId y = t.dropout(x, 0.5, Mode::Train, &rng);
    t.backward(t.sum_all(t.hadamard(y, y)));
    CHECK(max_rel_err(t.grad(x), fd) < 1e-4);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient and zero decay leaves params unchanged") {
    AdamState adam(AdamConfig{1e-3, 0.0, 0.9, 0.999, 1e-8});
    Tensor p(2, 2, 1.0);
    Tensor g(2, 2, 0.0);
    adam.begin_step();
    adam.update("p", p, g);
    CHECK(p == Tensor(2, 2, 1.0));
  }

  SUBCASE("first step with unit gradient moves by ~lr") {
    AdamState adam(AdamConfig{1e-3, 0.0, 0.9, 0.999, 1e-8});
    Tensor p(1, 1, 0.0);
    Tensor g(1, 1, 1.0);
    adam.begin_step();
    adam.update("p", p, g);
    // mhat = 1, vhat = 1 after bias correction, so the step is lr/(1+eps).
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  }

  SUBCASE("weight decay shrinks params toward zero") {
    AdamState adam(AdamConfig{1e-3, 1e-2, 0.9, 0.999, 1e-8});
    Tensor p(1, 1, 2.0);
    Tensor g(1, 1, 0.0);
    for (int s = 0; s < 10; ++s) {
      adam.begin_step();
      adam.update("p", p, g);
    }
    CHECK(p[0] < 2.0);
    CHECK(p[0] > 0.0);
  }

  SUBCASE("shape mismatch is rejected") {
    AdamState adam;
    Tensor p(2, 2, 1.0);
    Tensor g(2, 1, 0.0);
    adam.begin_step();
    CHECK_THROWS_AS(adam.update("p", p, g), ShapeError);
  }
}

TEST_CASE("determinism: identical seeds give bit-identical results") {
  auto run = [&]() {
    Rng rng(123);
    Tape t;
    Tensor x0 = random_tensor(8, 4, rng);
    VarId x = t.leaf(x0, true);
    VarId gs = t.gumbel_softmax(x, 0.5, &rng, true, false);
    VarId dp = t.dropout(gs, 0.5, Mode::Train, &rng);
    t.backward(t.sum_all(t.hadamard(dp, dp)));
    return std::make_pair(t.value(dp), t.grad(x));
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}
