#include "stf/tensor.hpp"

#include <cmath>

#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "test_util.hpp"

using namespace stf;
using namespace stf::testutil;

namespace {

// Naive triple loop, the independent matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul identity") {
  Tape tape;
  Rng rng(7);
  auto bvals = random_values(12, rng);
  Tensor eye = tape.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = tape.constant({3, 4}, bvals);
  Tensor c = tape.matmul(eye, b);
  CHECK(c.values() == bvals);
}

TEST_CASE("matmul matches the triple loop oracle") {
  Rng rng(11);
  auto av = random_values(6, rng);
  auto bv = random_values(6, rng);
  Tape tape;
  Tensor c = tape.matmul(tape.constant({2, 3}, av), tape.constant({3, 2}, bv));
  const auto oracle = naive_matmul(av, bv, 2, 3, 2);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(c.values()[i] - oracle[i]) < 1e-12);
}

TEST_CASE("matmul rejects shape mismatch naming both shapes") {
  Tape tape;
  Tensor a = tape.constant({2, 3}, std::vector<double>(6, 0.0));
  Tensor b = tape.constant({2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul_nt agrees with matmul against explicit transpose") {
  Rng rng(13);
  auto av = random_values(8, rng);
  auto bv = random_values(12, rng);  // b is [3 x 4]
  std::vector<double> bt(12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) bt[j * 3 + i] = bv[i * 4 + j];
  Tape tape;
  Tensor lhs = tape.matmul_nt(tape.constant({2, 4}, av), tape.constant({3, 4}, bv));
  Tensor rhs = tape.matmul(tape.constant({2, 4}, av), tape.constant({4, 3}, bt));
  CHECK(max_rel_err(lhs.values(), rhs.values()) < 1e-15);
}

TEST_CASE("softmax basics") {
  Tape tape;
  Tensor u = tape.softmax(tape.constant({3}, {0, 0, 0}), 1.0);
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // Shift invariance.
  Rng rng(3);
  auto x = random_values(5, rng, 3.0);
  auto shifted = x;
  for (double& v : shifted) v += 17.25;
  Tape t2;
  auto a = t2.softmax(t2.constant({5}, x), 1.0).values();
  auto b = t2.softmax(t2.constant({5}, shifted), 1.0).values();
  CHECK(max_rel_err(a, b) < 1e-12);

  // Direct evaluation oracle for [1,2,3] via long double.
  Tape t3;
  auto got = t3.softmax(t3.constant({3}, {1, 2, 3}), 1.0).values();
  long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  long double z = e1 + e2 + e3;
  CHECK(std::abs(got[0] - static_cast<double>(e1 / z)) < 1e-15);
  CHECK(std::abs(got[1] - static_cast<double>(e2 / z)) < 1e-15);
  CHECK(std::abs(got[2] - static_cast<double>(e3 / z)) < 1e-15);
}

TEST_CASE("softmax slices sum to one for all tested temperatures") {
  Rng rng(21);
  for (double temp : {0.5, 1.0, 2.0}) {
    auto vals = random_values(6 * 9, rng, 8.0);
    Tape tape;
    auto out = tape.softmax(tape.constant({6, 9}, vals), temp).values();
    for (int r = 0; r < 6; ++r) {
      double s = 0.0;
      for (int j = 0; j < 9; ++j) s += out[r * 9 + j];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax rejects bad temperature and non-finite input") {
  Tape tape;
  Tensor x = tape.constant({2}, {0.0, 1.0});
  CHECK_THROWS_AS(tape.softmax(x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(tape.softmax(x, -1.0), std::invalid_argument);
  Tensor bad = tape.constant({2}, {0.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(tape.softmax(bad, 1.0), std::invalid_argument);
}

TEST_CASE("cross entropy endpoints") {
  // Probability ~1 on each target.
  Tape tape;
  std::vector<double> logits = {100, 0, 0, 0, 0, 100, 0, 0};
  Tensor ce = tape.cross_entropy(tape.constant({2, 4}, logits), {0, 1});
  CHECK(ce.scalar() == doctest::Approx(0.0).epsilon(1e-12));

  // Uniform logits over V=8.
  Tape t2;
  Tensor u = t2.cross_entropy(t2.constant({1, 8}, std::vector<double>(8, 0.37)), {5});
  CHECK(u.scalar() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy matches enumeration oracle") {
  Rng rng(5);
  auto logits = random_values(15, rng, 2.0);
  const std::vector<int> targets = {4, 0, 2};
  Tape tape;
  Tensor ce = tape.cross_entropy(tape.constant({3, 5}, logits), targets);
  double oracle = 0.0;
  for (int r = 0; r < 3; ++r) {
    long double z = 0.0L;
    for (int j = 0; j < 5; ++j) z += expl(static_cast<long double>(logits[r * 5 + j]));
    oracle += static_cast<double>(-logl(expl(logits[r * 5 + targets[r]]) / z));
  }
  oracle /= 3.0;
  CHECK(std::abs(ce.scalar() - oracle) < 1e-12);
}

TEST_CASE("cross entropy rejects out-of-range targets") {
  Tape tape;
  Tensor l = tape.constant({2, 4}, std::vector<double>(8, 0.0));
  CHECK_THROWS_AS(tape.cross_entropy(l, {0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(tape.cross_entropy(l, {0}), std::invalid_argument);
}

TEST_CASE("layer norm of a constant row is zero before affine") {
  Tape tape;
  Tensor gain = tape.constant({4}, {1, 1, 1, 1});
  Tensor bias = tape.constant({4}, {0, 0, 0, 0});
  Tensor out = tape.layer_norm(tape.constant({1, 4}, {3.7, 3.7, 3.7, 3.7}), gain, bias);
  for (double v : out.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("dropout") {
  Rng rng(17);
  auto vals = random_values(64, rng);
  Tape tape;
  Tensor x = tape.constant({8, 8}, vals);
  CHECK(tape.dropout(x, 0.0, 123).values() == vals);  // rate 0 is the identity
  CHECK_THROWS_AS(tape.dropout(x, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(tape.dropout(x, -0.1, 1), std::invalid_argument);

  auto a = tape.dropout(x, 0.5, 99).values();
  auto b = tape.dropout(x, 0.5, 99).values();
  CHECK(a == b);  // deterministic under a fixed seed
  int zeros = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) ++zeros;
    else CHECK(a[i] == doctest::Approx(vals[i] * 2.0));
  }
  CHECK(zeros > 8);
  CHECK(zeros < 56);
}

TEST_CASE("embedding_mix one-hot equals lookup row, uniform equals column mean") {
  Rng rng(29);
  const int v = 6, d = 4;
  auto table_vals = random_values(v * d, rng);
  Tape tape;
  Tensor table = tape.constant({v, d}, table_vals);

  std::vector<double> onehot(v, 0.0);
  onehot[3] = 1.0;
  auto row = tape.embedding_mix(tape.constant({1, v}, onehot), table).values();
  for (int j = 0; j < d; ++j) CHECK(row[j] == table_vals[3 * d + j]);  // bitwise

  std::vector<double> uniform(v, 1.0 / v);
  auto mean = tape.embedding_mix(tape.constant({1, v}, uniform), table).values();
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int i = 0; i < v; ++i) s += table_vals[i * d + j];
    CHECK(mean[j] == doctest::Approx(s / v).epsilon(1e-12));
  }
}

TEST_CASE("embedding_mix matches weighted-sum oracle and rejects unnormalized rows") {
  Rng rng(31);
  const int L = 3, v = 5, d = 4;
  auto table_vals = random_values(v * d, rng);
  std::vector<double> dist(L * v);
  for (int i = 0; i < L; ++i) {
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      dist[i * v + j] = rng.uniform() + 0.05;
      s += dist[i * v + j];
    }
    for (int j = 0; j < v; ++j) dist[i * v + j] /= s;
  }
  Tape tape;
  auto out =
      tape.embedding_mix(tape.constant({L, v}, dist), tape.constant({v, d}, table_vals)).values();
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < v; ++k) s += dist[i * v + k] * table_vals[k * d + j];
      CHECK(std::abs(out[i * d + j] - s) < 1e-12);
    }

  dist[0] += 0.1;  // break normalization
  Tape t2;
  CHECK_THROWS_AS(
      t2.embedding_mix(t2.constant({L, v}, dist), t2.constant({v, d}, table_vals)),
      std::invalid_argument);
}

TEST_CASE("backward on sum gives ones and accumulates additively") {
  Rng rng(37);
  auto vals = random_values(10, rng);
  Tape tape;
  Tensor x = tape.leaf({10}, vals, /*requires_grad=*/true);
  Tensor loss = tape.sum_all(x);
  tape.backward(loss);
  for (double g : tape.grad(x)) CHECK(g == 1.0);
  tape.backward(loss);
  for (double g : tape.grad(x)) CHECK(g == 2.0);  // exactly doubled
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Tensor x = tape.leaf({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("composite gradient matches central finite differences") {
  Rng rng(41);
  const int m = 2, k = 3, v = 4;
  auto a_vals = random_values(m * k, rng);
  auto b_vals = random_values(k * v, rng);
  const std::vector<int> targets = {1, 3};

  Tape tape;
  Tensor a = tape.leaf({m, k}, a_vals, true);
  Tensor b = tape.leaf({k, v}, b_vals, true);
  Tensor loss = tape.cross_entropy(tape.matmul(a, b), targets);
  tape.backward(loss);
  auto ga = tape.grad(a);
  auto gb = tape.grad(b);

  auto eval = [&]() {
    Tape t(false);
    return t.cross_entropy(t.matmul(t.constant({m, k}, a_vals), t.constant({k, v}, b_vals)),
                           targets)
        .scalar();
  };
  CHECK(max_rel_err(ga, finite_difference(a_vals, eval)) < 1e-4);
  CHECK(max_rel_err(gb, finite_difference(b_vals, eval)) < 1e-4);
}

TEST_CASE("gelu gradient matches finite differences to 1e-6") {
  std::vector<double> xs = {-2.5, -1.0, -0.3, 0.0, 0.4, 1.2, 2.9};
  Tape tape;
  Tensor x = tape.leaf({static_cast<int>(xs.size())}, xs, true);
  tape.backward(tape.sum_all(tape.gelu(x)));
  auto g = tape.grad(x);
  auto eval = [&]() {
    Tape t(false);
    return t.sum_all(t.gelu(t.constant({static_cast<int>(xs.size())}, xs))).scalar();
  };
  auto fd = finite_difference(xs, eval, 1e-6);
  for (size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(g[i] - fd[i]) < 1e-6);
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
  Rng rng(43);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.bounded(3));
    const int k = 1 + static_cast<int>(rng.bounded(3));
    const int n = 2 + static_cast<int>(rng.bounded(3));
    auto a_vals = random_values(m * k, rng);
    auto b_vals = random_values(k * n, rng);
    auto g_vals = random_values(n, rng, 0.5);
    auto bias_vals = random_values(n, rng, 0.5);
    for (double& x : g_vals) x += 1.0;
    const double temp = 0.5 + rng.uniform() * 1.5;
    const uint64_t seed = rng.u64();

    auto b2_vals = random_values(n * k, rng);
    auto full = [&]() {
      Tape t(false);
      Tensor a = t.constant({m, k}, a_vals);
      Tensor b = t.constant({k, n}, b_vals);
      Tensor gain = t.constant({n}, g_vals);
      Tensor bias = t.constant({n}, bias_vals);
      Tensor b2 = t.constant({n, k}, b2_vals);
      Tensor h = t.softmax(t.gelu(t.layer_norm(t.matmul(a, b), gain, bias)), temp);
      h = t.dropout(h, 0.25, seed);
      h = t.softmax(h, 1.0);
      Tensor mixed = t.embedding_mix(h, b2);
      Tensor s = t.matmul_nt(mixed, t.slice_rows(t.concat_rows({a, a}), 0, m));
      return t.sum_all(t.add_rowvec(s, t.constant({m}, std::vector<double>(m, 0.25)))).scalar();
    };

    Tape t;
    Tensor a = t.leaf({m, k}, a_vals, true);
    Tensor b = t.leaf({k, n}, b_vals, true);
    Tensor b2 = t.leaf({n, k}, b2_vals, true);
    Tensor gain = t.leaf({n}, g_vals, true);
    Tensor bias = t.leaf({n}, bias_vals, true);
    Tensor h = t.softmax(t.gelu(t.layer_norm(t.matmul(a, b), gain, bias)), temp);
    h = t.dropout(h, 0.25, seed);
    h = t.softmax(h, 1.0);
    Tensor mixed = t.embedding_mix(h, b2);
    Tensor s = t.matmul_nt(mixed, t.slice_rows(t.concat_rows({a, a}), 0, m));
    Tensor loss = t.sum_all(t.add_rowvec(s, t.constant({m}, std::vector<double>(m, 0.25))));
    t.backward(loss);

    CHECK(max_rel_err(t.grad(a), finite_difference(a_vals, full)) < 1e-4);
    CHECK(max_rel_err(t.grad(b), finite_difference(b_vals, full)) < 1e-4);
    CHECK(max_rel_err(t.grad(b2), finite_difference(b2_vals, full)) < 1e-4);
    CHECK(max_rel_err(t.grad(gain), finite_difference(g_vals, full)) < 1e-4);
    CHECK(max_rel_err(t.grad(bias), finite_difference(bias_vals, full)) < 1e-4);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("parameter gradients accumulate until zeroed") {
  Rng rng(47);
  ParamStore store;
  Parameter& p = store.create("w", {2, 2}, 2, rng);
  {
    Tape tape;
    Tensor w = tape.param(p);
    tape.backward(tape.sum_all(w));
  }
  for (double g : p.grad) CHECK(g == 1.0);
  {
    Tape tape;  // a second tape accumulates on top
    Tensor w = tape.param(p);
    tape.backward(tape.sum_all(tape.scale(w, 2.0)));
  }
  for (double g : p.grad) CHECK(g == 3.0);
  store.zero_grad();
  for (double g : p.grad) CHECK(g == 0.0);
}

TEST_CASE("tape determinism: identical inputs give identical values and gradients") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto vals = random_values(12, rng);
    Tape tape;
    Tensor x = tape.leaf({3, 4}, vals, true);
    Tensor loss = tape.cross_entropy(tape.gelu(x), {0, 1, 2});
    tape.backward(loss);
    return std::make_pair(loss.scalar(), tape.grad(x));
  };
  auto a = run(123);
  auto b = run(123);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
