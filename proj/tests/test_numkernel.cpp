#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "evuda/errors.hpp"
#include "evuda/grad_check.hpp"
#include "evuda/ops.hpp"
#include "evuda/special.hpp"

using namespace evuda;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Reference values from a 40-digit arbitrary precision evaluation.
struct SpecialOracle {
  double x, lgamma, digamma, trigamma;
};
constexpr SpecialOracle kOracle[] = {
    {0.001, 6.9071788853838536825, -1000.5755719318103005, 1000001.642533195869},
    {0.5, 0.57236494292470008707, -1.9635100260214234794, 4.9348022005446793094},
    {1.0, 0.0, -0.57721566490153286061, 1.6449340668482264365},
    {2.0, 0.0, 0.42278433509846713939, 0.64493406684822643647},
    {5.0, 3.1780538303479456196, 1.5061176684318004727, 0.22132295573711532536},
    {7.3, 7.1478925230222490328, 1.9178203356379860984, 0.14679576813142709816},
    {33.25, 82.429238345909042294, 3.4889418035209386936, 0.030531979535421604308},
    {1000.0, 5905.2204232091812118, 6.9072551956488120521, 0.0010005001666666333334},
    {1e6, 12815504.56914761166, 13.815510057964190771, 1.0000005000001666667e-6},
};

}  // namespace

TEST_CASE("lgamma matches high-precision reference") {
  CHECK(std::abs(evuda::lgamma(1.0)) <= 1e-12);
  CHECK(std::abs(evuda::lgamma(2.0)) <= 1e-12);
  CHECK(std::abs(evuda::lgamma(5.0) - std::log(24.0)) <= 1e-12);
  for (const auto& o : kOracle) {
    // Absolute 1e-12 is below one ulp once |lgamma| exceeds ~4500; use ulp-scaled bound there.
    const double tol = std::max(1e-12, 4.0 * std::abs(o.lgamma) * 2.2e-16);
    INFO("x = " << o.x);
    CHECK(std::abs(evuda::lgamma(o.x) - o.lgamma) <= tol);
  }
}

TEST_CASE("digamma and trigamma match high-precision reference") {
  CHECK(std::abs(evuda::digamma(1.0) + 0.5772156649015329) <= 1e-10);
  CHECK(std::abs(evuda::digamma(2.0) - 0.4227843350984671) <= 1e-10);
  CHECK(std::abs(evuda::digamma(3.0) - evuda::digamma(2.0) - 0.5) <= 1e-12);
  for (const auto& o : kOracle) {
    INFO("x = " << o.x);
    CHECK(std::abs(evuda::digamma(o.x) - o.digamma) <= 1e-10);
    CHECK(std::abs(evuda::trigamma(o.x) - o.trigamma) <= 1e-9 * std::max(1.0, o.trigamma));
  }
}

TEST_CASE("gamma-family recurrences hold on [0.1, 100]") {
  for (double x = 0.1; x <= 100.0; x += 0.37) {
    CHECK(std::abs(evuda::lgamma(x + 1) - evuda::lgamma(x) - std::log(x)) <= 1e-10);
    CHECK(std::abs(evuda::digamma(x + 1) - evuda::digamma(x) - 1.0 / x) <= 1e-10);
    CHECK(std::abs(evuda::trigamma(x) - evuda::trigamma(x + 1) - 1.0 / (x * x)) <= 1e-9);
  }
}

TEST_CASE("special functions reject non-positive arguments") {
  CHECK_THROWS_AS(evuda::lgamma(0.0), DomainError);
  CHECK_THROWS_AS(evuda::lgamma(-1.5), DomainError);
  CHECK_THROWS_AS(evuda::digamma(0.0), DomainError);
  CHECK_THROWS_AS(evuda::digamma(-2.0), DomainError);
}

TEST_CASE("conv1d examples") {
  const Tensor x(Shape{1, 1, 4}, {1, 2, 3, 4});
  SUBCASE("identity kernel") {
    const Tensor y = conv1d(x, Tensor(Shape{1, 1, 1}, {1}), 1, 0);
    CHECK(y == x);
  }
  SUBCASE("stride 2 pair sums") {
    const Tensor y = conv1d(x, Tensor(Shape{1, 1, 2}, {1, 1}), 2, 0);
    CHECK(y == Tensor(Shape{1, 1, 2}, {3, 7}));
  }
  SUBCASE("zero input") {
    const Tensor y = conv1d(Tensor(Shape{1, 1, 3}), Tensor(Shape{1, 1, 2}, {0.3, -2}), 1, 1);
    CHECK(y.shape() == Shape{1, 1, 4});
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("padding and output length") {
    // [0,1,2,3,4,0] correlated with [1,0,-1], stride 2 -> positions 0,2: (0-2), (2-4)
    const Tensor y = conv1d(x, Tensor(Shape{1, 1, 3}, {1, 0, -1}), 2, 1);
    CHECK(y == Tensor(Shape{1, 1, 2}, {-2, -2}));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv1d(x, Tensor(Shape{1, 2, 1}), 1, 0), ShapeError);
    CHECK_THROWS_AS(conv1d(x, Tensor(Shape{1, 1, 5}), 1, 0), ShapeError);
  }
}

TEST_CASE("conv1d is linear in its input") {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({2, 3, 11}, rng), b = random_tensor({2, 3, 11}, rng);
  const Tensor w = random_tensor({4, 3, 3}, rng);
  Tensor mix(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 0.7 * a[i] - 1.3 * b[i];
  const Tensor ya = conv1d(a, w, 2, 1), yb = conv1d(b, w, 2, 1), ym = conv1d(mix, w, 2, 1);
  for (std::size_t i = 0; i < ym.size(); ++i) CHECK(ym[i] == doctest::Approx(0.7 * ya[i] - 1.3 * yb[i]).epsilon(1e-12));
}

TEST_CASE("pool1d examples") {
  const Tensor x(Shape{1, 1, 8}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(pool1d(x, PoolKind::avg, 2, 2) == Tensor(Shape{1, 1, 4}, {1.5, 3.5, 5.5, 7.5}));
  CHECK(pool1d(x, PoolKind::max, 2, 2) == Tensor(Shape{1, 1, 4}, {2, 4, 6, 8}));
  CHECK_THROWS_AS(pool1d(x, PoolKind::random, 2, 2), ConfigError);
  CHECK_THROWS_AS(pool1d(Tensor(Shape{1, 1, 1}), PoolKind::max, 2, 2), ShapeError);

  const Tensor c(Shape{2, 2, 9}, 3.25);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor pooled = pool1d(c, PoolKind::random, 2, 2, &rng);
    for (double v : pooled.data()) CHECK(v == 3.25);
  }
}

TEST_CASE("random pooling is reproducible per seed and picks from each window") {
  std::mt19937_64 gen(3);
  const Tensor x = random_tensor({3, 2, 16}, gen);
  Rng r1(42), r2(42);
  const Tensor a = pool1d(x, PoolKind::random, 2, 2, &r1);
  const Tensor b = pool1d(x, PoolKind::random, 2, 2, &r2);
  CHECK(a == b);
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t t = 0; t < 8; ++t) {
      const double v = a[row * 8 + t];
      CHECK((v == x[row * 16 + 2 * t] || v == x[row * 16 + 2 * t + 1]));
    }
}

TEST_CASE("avg pool then sum equals scaled window sum") {
  std::mt19937_64 gen(11);
  const Tensor x = random_tensor({1, 1, 12}, gen);
  const Tensor y = pool1d(x, PoolKind::avg, 3, 3);
  double sy = 0, sx = 0;
  for (double v : y.data()) sy += v;
  for (double v : x.data()) sx += v;
  CHECK(sy == doctest::Approx(sx / 3.0).epsilon(1e-13));
}

TEST_CASE("backward examples") {
  SUBCASE("sum") {
    Tape tape;
    Var x = tape.input(Tensor::vector({0.5, -1, 2}));
    auto g = backward(tape, ops::sum(x));
    CHECK(g[0] == Tensor::vector({1, 1, 1}));
  }
  SUBCASE("sum of squares") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1, 2}));
    auto g = backward(tape, ops::sum(ops::square(x)));
    CHECK(g[0] == Tensor::vector({2, 4}));
  }
  SUBCASE("non-scalar output") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(backward(tape, ops::square(x)), ContractError);
  }
  SUBCASE("unsupported primitive") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1, 2}));
    Var opaque = tape.record("argsort", Tensor::vector({0, 1}), {x}, nullptr);
    CHECK_THROWS_AS(backward(tape, ops::sum(ops::mul(opaque, x))), UnsupportedOpError);
  }
  SUBCASE("unreached input gets zero gradient") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1, 2}));
    Var y = tape.input(Tensor::vector({3}));
    auto g = backward(tape, ops::sum(x));
    CHECK(g.size() == 2);
    CHECK(g[1] == Tensor::vector({0}));
  }
}

TEST_CASE("grad_check of a linear function is exact") {
  std::mt19937_64 gen(5);
  // Central differences are exact for linear functions at any step; a coarse
  // step keeps the rounding of the two sums out of the quotient.
  const double err = grad_check([](Tape&, Var x) { return ops::sum(x); }, random_tensor({4, 3}, gen), 0.25);
  CHECK(err <= 1e-12);
}

namespace {

// One random composite graph over a [N,K] input and a [K,K] weight.
Var random_graph(Tape& tape, std::span<const Var> in, std::uint64_t seed) {
  std::mt19937_64 pick(seed);
  Var x = in[0];
  Var w = in[1];
  Var h = ops::matmul(x, w);
  for (int step = 0; step < 3; ++step) {
    switch (pick() % 9) {
      case 0: h = ops::softplus(h); break;
      case 1: h = ops::square(h); break;
      case 2: h = ops::log(ops::add_scalar(ops::softplus(h), 0.5)); break;
      case 3: h = ops::lgamma(ops::add_scalar(ops::softplus(h), 1.0)); break;
      case 4: h = ops::digamma(ops::add_scalar(ops::softplus(h), 1.0)); break;
      case 5: h = ops::softmax(h); break;
      case 6: h = ops::div_col(h, ops::add_scalar(ops::sum_axis1(ops::square(h)), 1.0)); break;
      case 7: h = ops::exp(ops::scale(h, 0.3)); break;
      default: h = ops::sub_row(h, ops::mean_axis0(h)); break;
    }
  }
  switch (pick() % 3) {
    case 0: return ops::sum(h);
    case 1: {
      const int labels[] = {0, 2, 1, 2};
      return ops::mean(ops::softmax_cross_entropy(h, labels));
    }
    default: return ops::sum(ops::sqrt(ops::add_scalar(ops::sum_axis1(ops::square(h)), 1e-3)));
  }
  (void)tape;
}

}  // namespace

TEST_CASE("backward matches finite differences on 100 random composite graphs") {
  std::mt19937_64 gen(2024);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor({4, 3}, gen);
    const Tensor w = random_tensor({3, 3}, gen);
    const double err = grad_check(
        [trial](Tape& t, std::span<const Var> in) { return random_graph(t, in, trial); }, {x, w}, 1e-5);
    worst = std::max(worst, err);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("convolution, pooling, normalization and concatenation gradients") {
  std::mt19937_64 gen(99);
  const Tensor x = random_tensor({3, 2, 10}, gen);
  const Tensor k1 = random_tensor({3, 2, 4}, gen);
  const Tensor gamma = random_tensor({3}, gen, 0.5, 1.5);
  const Tensor beta = random_tensor({3}, gen);
  const Tensor k2 = random_tensor({2, 2, 3}, gen);
  const Tensor proj = random_tensor({5, 2}, gen);

  for (const bool training : {true, false}) {
    for (const PoolKind kind : {PoolKind::avg, PoolKind::max, PoolKind::random}) {
      auto graph = [&](Tape& t, std::span<const Var> in) {
        Tensor rm(Shape{3}, 0.1), rv(Shape{3}, 1.3);
        Rng rng(17);
        Var h = ops::conv1d(in[0], in[1], 1, 2);
        h = ops::batch_norm(h, in[2], in[3], rm, rv, training);
        h = ops::relu(h);
        h = ops::pool1d(h, kind, 2, 2, kind == PoolKind::random ? &rng : nullptr);
        Var feat = ops::global_avg_pool(h);
        Var low = ops::global_avg_pool(ops::crop_time(ops::conv1d(in[0], in[4], 2, 1), 4));
        const Var parts[] = {feat, low};
        Var mixed = ops::concat_cols(parts);
        return ops::sum(ops::square(ops::matmul(mixed, in[5])));
      };
      INFO("training=" << training << " kind=" << static_cast<int>(kind));
      CHECK(grad_check(graph, {x, k1, gamma, beta, k2, proj}) <= 1e-4);
    }
  }
}

TEST_CASE("batch norm running statistics use momentum 0.9") {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{2, 1}, {1.0, 3.0}));
  Var g = tape.constant(Tensor::vector({1}));
  Var b = tape.constant(Tensor::vector({0}));
  Tensor rm(Shape{1}, 0.0), rv(Shape{1}, 1.0);
  Var y = ops::batch_norm(x, g, b, rm, rv, true);
  CHECK(rm[0] == doctest::Approx(0.2));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased variance of {1,3} is 2
  CHECK(y.value()[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)));
}

TEST_CASE("moment tensor gradient and size guard") {
  std::mt19937_64 gen(8);
  const Tensor x = random_tensor({5, 3}, gen);
  for (int p = 1; p <= 3; ++p) {
    CHECK(grad_check([p](Tape&, Var v) { return ops::sum(ops::square(ops::moment_tensor(v, p))); }, x) <= 1e-4);
  }
  Tape tape;
  CHECK_THROWS_AS(ops::moment_tensor(tape.constant(Tensor(Shape{2, 17})), 4), ResourceError);
  CHECK_NOTHROW(ops::moment_tensor(tape.constant(Tensor(Shape{2, 16})), 4));
}

TEST_CASE("softmax cross entropy of uniform logits is log K") {
  Tape tape;
  Var logits = tape.constant(Tensor(Shape{2, 4}, 0.25));
  const int labels[] = {1, 3};
  Var ce = ops::softmax_cross_entropy(logits, labels);
  CHECK(ce.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(ce.value()[1] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}
