#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dcc/gradcheck.hpp"
#include "dcc/ops.hpp"
#include "oracles.hpp"

using namespace dcc;

namespace {

template <typename T>
Tensor<T> run1(const Tensor<T>& x, const std::function<Var<T>(Var<T>)>& f) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  return f(tape.constant(x)).value();
}

void expect_gradients(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double tol = kLayerTolerance) {
  const auto res = check_function(f, inputs);
  for (std::size_t i = 0; i < res.size(); ++i) {
    INFO("input " << i);
    CHECK(res[i].max_rel_error < tol);
  }
}

// Weighted sum, so every output element gets a distinct upstream gradient.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = oracle::random_tensor<double>(y.shape(), rng);
  return ops::sum(ops::mul(y, y.tape->constant(std::move(w))));
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Rng rng(1);
  auto x = oracle::random_tensor<double>({1, 1, 4, 4}, rng);
  Tape<double> tape;
  auto y = ops::conv2d(tape.constant(x), tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)), std::nullopt, {1, 0});
  CHECK(y.value() == x);
}

TEST_CASE("conv2d stem shape arithmetic") {
  Tape<float> tape;
  auto y = ops::conv2d(tape.constant(Tensor<float>({1, 3, 32, 32})), tape.constant(Tensor<float>({64, 3, 7, 7})),
                       std::nullopt, {2, 3});
  CHECK(y.shape() == Shape{1, 64, 16, 16});
}

TEST_CASE("conv2d matches direct loops") {
  Rng rng(2);
  auto x = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
  auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
  auto b = oracle::random_tensor<double>({4}, rng);
  Tape<double> tape;
  auto y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), {1, 1});
  CHECK(oracle::max_rel_diff(y.value(), oracle::conv2d(x, w, &b, 1, 1)) < 1e-6);
}

TEST_CASE("conv2d errors") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 3, 5, 5}));
  CHECK_THROWS_AS(ops::conv2d(x, tape.constant(Tensor<double>({2, 4, 3, 3})), std::nullopt, {1, 0}), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, tape.constant(Tensor<double>({2, 3, 3, 3})), std::nullopt, {0, 0}),
                  HyperparameterError);
  CHECK_THROWS_AS(ops::conv2d(x, tape.constant(Tensor<double>({2, 3, 3, 3})), std::nullopt, {1, -1}),
                  HyperparameterError);
  CHECK_THROWS_AS(ops::conv2d(x, tape.constant(Tensor<double>({2, 3, 9, 9})), std::nullopt, {1, 1}), ShapeError);
}

TEST_CASE("oracle agreement on random shapes up to [2,4,9,9]") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t N = 1 + rng.below(2), C = 1 + rng.below(4), H = 3 + rng.below(7), W = 3 + rng.below(7);
    const int k = 1 + static_cast<int>(rng.below(3));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    auto x = oracle::random_tensor<double>({N, C, H, W}, rng);
    auto w = oracle::random_tensor<double>({1 + rng.below(4), C, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
    Tape<double> tape;
    auto xv = tape.constant(x);
    CHECK(oracle::max_rel_diff(ops::conv2d(xv, tape.constant(w), std::nullopt, {stride, pad}).value(),
                               oracle::conv2d<double>(x, w, nullptr, stride, pad)) < 1e-6);
    CHECK(ops::maxpool2d(xv, k, stride, pad).value() == oracle::maxpool2d(x, k, stride, pad));
    CHECK(oracle::max_rel_diff(ops::avgpool2d(xv, k, stride).value(), oracle::avgpool2d(x, k, stride)) < 1e-12);
  }
}

TEST_CASE("maxpool examples") {
  Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(run1<float>(x, [](Var<float> v) { return ops::maxpool2d(v, 2, 2, 0); })[0] == 4.0f);
  Tensor<float> c({1, 2, 5, 5}, 0.25f);
  const auto pooled = run1<float>(c, [](Var<float> v) { return ops::maxpool2d(v, 3, 2, 1); });
  for (float v : pooled.values()) CHECK(v == 0.25f);
  Rng rng(4);
  auto r = oracle::random_tensor<double>({1, 2, 7, 7}, rng);
  CHECK(run1<double>(r, [](Var<double> v) { return ops::maxpool2d(v, 3, 2, 1); }) == oracle::maxpool2d(r, 3, 2, 1));
}

TEST_CASE("maxpool ties route gradient to the first element") {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>({1, 1, 2, 2}, 1.0));
  tape.backward(ops::sum(ops::maxpool2d(x, 2, 2, 0)));
  CHECK(tape.grad(x) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("avgpool and global pool examples") {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(run1<double>(x, [](Var<double> v) { return ops::avgpool2d(v, 2, 2); })[0] == 2.5);
  CHECK(run1<double>(x, [](Var<double> v) { return ops::avgpool2d(v, 1, 1); }) == x);
  Tensor<double> g({1, 1, 2, 2}, std::vector<double>{0, 2, 4, 6});
  CHECK(run1<double>(g, [](Var<double> v) { return ops::global_avg_pool(v); })[0] == 3.0);
  Tensor<double> c({2, 3, 4, 4}, -1.25);
  const auto gap = run1<double>(c, [](Var<double> v) { return ops::global_avg_pool(v); });
  for (double v : gap.values()) CHECK(v == -1.25);
  Rng rng(5);
  auto r = oracle::random_tensor<double>({2, 3, 5, 4}, rng);
  CHECK(oracle::max_rel_diff(run1<double>(r, [](Var<double> v) { return ops::global_avg_pool(v); }),
                             oracle::global_avg_pool(r)) < 1e-12);
}

TEST_CASE("batchnorm eval with unit statistics is near identity") {
  Rng rng(6);
  auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  Tape<double> tape;
  Tensor<double> rm({3}, 0.0), rv({3}, 1.0);
  auto y = ops::batchnorm2d_eval(tape.constant(x), tape.constant(Tensor<double>({3}, 1.0)),
                                 tape.constant(Tensor<double>({3}, 0.0)), rm, rv);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)));
}

TEST_CASE("batchnorm train normalizes and updates running statistics") {
  Rng rng(7);
  auto x = oracle::random_tensor<double>({4, 2, 3, 3}, rng, 2.0, 5.0);
  Tape<double> tape;
  Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
  auto y = ops::batchnorm2d_train(tape.constant(x), tape.constant(Tensor<double>({2}, 1.0)),
                                  tape.constant(Tensor<double>({2}, 0.0)), rm, rv);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0;
    std::vector<double> vals, raw;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        vals.push_back(y.value()[(n * 2 + c) * 9 + p]);
        raw.push_back(x[(n * 2 + c) * 9 + p]);
      }
    for (double a : vals) m += a;
    m /= vals.size();
    for (double a : vals) v += (a - m) * (a - m);
    v /= vals.size();
    CHECK(std::abs(m) < 1e-9);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    for (double a : raw) xm += a;
    xm /= raw.size();
    CHECK(rm[c] == doctest::Approx(0.1 * xm));
    double var_unbiased = 0;
    for (double a : raw) var_unbiased += (a - xm) * (a - xm);
    var_unbiased /= raw.size() - 1;
    CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var_unbiased));
  }
}

TEST_CASE("batchnorm rejects non-finite variance") {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1e308, -1e308});
  Tape<double> tape;
  Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
  CHECK_THROWS_AS(ops::batchnorm2d_train(tape.constant(x), tape.constant(Tensor<double>({1}, 1.0)),
                                         tape.constant(Tensor<double>({1}, 0.0)), rm, rv),
                  NumericError);
}

TEST_CASE("relu, concat, slice, dropout basics") {
  Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
  CHECK(run1<double>(x, [](Var<double> v) { return ops::relu(v); }).values() == std::vector<double>{0, 0, 2});

  Rng rng(8);
  auto a = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  auto b = oracle::random_tensor<double>({2, 3, 3, 3}, rng);
  Tape<double> tape;
  std::vector<Var<double>> parts{tape.constant(a), tape.constant(b)};
  auto cat = ops::concat_channels<double>(parts);
  CHECK(cat.shape() == Shape{2, 5, 3, 3});
  CHECK(ops::slice_channels(cat, 0, 2).value() == a);
  CHECK(ops::slice_channels(cat, 2, 3).value() == b);
  std::vector<Var<double>> bad{tape.constant(a), tape.constant(Tensor<double>({2, 1, 4, 3}))};
  CHECK_THROWS_AS(ops::concat_channels<double>(bad), ShapeError);

  Rng drng(9);
  auto xv = tape.constant(a);
  CHECK(ops::dropout(xv, 0.0, Mode::kTrain, drng).id == xv.id);
  CHECK(ops::dropout(xv, 0.5, Mode::kEval, drng).id == xv.id);
  CHECK_THROWS_AS(ops::dropout(xv, 1.0, Mode::kTrain, drng), HyperparameterError);
  CHECK_THROWS_AS(ops::dropout(xv, -0.1, Mode::kTrain, drng), HyperparameterError);
}

TEST_CASE("dropout zeroes at the configured rate and rescales survivors") {
  Tape<double> tape;
  Rng rng(10);
  auto y = ops::dropout(tape.constant(Tensor<double>({20000}, 1.0)), 0.2, Mode::kTrain, rng);
  std::size_t zeros = 0;
  for (double v : y.value().values()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.25));
  }
  CHECK(static_cast<double>(zeros) / 20000 == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("softmax cross-entropy values") {
  Tape<double> tape;
  std::vector<int> labels{3};
  auto uniform = ops::softmax_cross_entropy(tape.constant(Tensor<double>({1, 10}, 0.7)), labels);
  CHECK(uniform.value()[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  Tensor<double> hot({1, 10}, 0.0);
  hot[3] = 50.0;
  CHECK(ops::softmax_cross_entropy(tape.constant(hot), labels).value()[0] < 1e-20);
  std::vector<int> bad{10};
  CHECK_THROWS(ops::softmax_cross_entropy(tape.constant(hot), bad));

  Rng rng(11);
  auto l = oracle::random_tensor<double>({3, 4}, rng, -3, 3);
  auto shifted = l;
  for (std::size_t j = 0; j < 4; ++j) shifted[4 + j] += 123.0;
  std::vector<int> y{0, 1, 3};
  const double a = ops::softmax_cross_entropy(tape.constant(l), y).value()[0];
  const double b = ops::softmax_cross_entropy(tape.constant(shifted), y).value()[0];
  CHECK(std::abs(a - b) < 1e-6);
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  Rng rng(12);
  auto l = oracle::random_tensor<double>({2, 5}, rng, -2, 2);
  std::vector<int> y{4, 1};
  Tape<double> tape;
  auto lv = tape.input(l);
  tape.backward(ops::softmax_cross_entropy(lv, y));
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> row(l.values().begin() + n * 5, l.values().begin() + n * 5 + 5);
    const auto p = ops::softmax(row);
    for (std::size_t k = 0; k < 5; ++k) {
      const double expected = (p[k] - (static_cast<int>(k) == y[n] ? 1.0 : 0.0)) / 2.0;
      CHECK(tape.grad(lv)[n * 5 + k] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  expect_gradients([&](Tape<double>&, std::span<const Var<double>> v) { return ops::softmax_cross_entropy(v[0], y); },
                   {l});
}

TEST_CASE("finite differences: every differentiable op") {
  Rng rng(13);
  auto x = oracle::random_tensor<double>({2, 3, 6, 6}, rng);
  auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
  auto b = oracle::random_tensor<double>({4}, rng);
  SUBCASE("conv2d") {
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      return weighted_sum(ops::conv2d(v[0], v[1], v[2], {2, 1}), 1);
    }, {x, w, b});
  }
  SUBCASE("maxpool2d") {
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      return weighted_sum(ops::maxpool2d(v[0], 3, 2, 1), 2);
    }, {x});
  }
  SUBCASE("avgpool2d and global_avg_pool") {
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      return ops::add(weighted_sum(ops::avgpool2d(v[0], 2, 2), 3), weighted_sum(ops::global_avg_pool(v[0]), 4));
    }, {x});
  }
  SUBCASE("batchnorm train") {
    auto g = oracle::random_tensor<double>({3}, rng, 0.5, 1.5);
    auto be = oracle::random_tensor<double>({3}, rng);
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      Tensor<double> rm({3}, 0.0), rv({3}, 1.0);
      return weighted_sum(ops::batchnorm2d_train(v[0], v[1], v[2], rm, rv), 5);
    }, {x, g, be});
  }
  SUBCASE("batchnorm eval") {
    auto g = oracle::random_tensor<double>({3}, rng, 0.5, 1.5);
    auto be = oracle::random_tensor<double>({3}, rng);
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      Tensor<double> rm({3}, std::vector<double>{0.1, -0.2, 0.3}), rv({3}, std::vector<double>{0.5, 1.5, 2.0});
      return weighted_sum(ops::batchnorm2d_eval(v[0], v[1], v[2], rm, rv), 6);
    }, {x, g, be});
  }
  SUBCASE("relu, concat, slice") {
    auto x2 = oracle::random_tensor<double>({2, 2, 6, 6}, rng);
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      std::vector<Var<double>> parts{ops::relu(v[0]), v[1]};
      auto cat = ops::concat_channels<double>(parts);
      return ops::add(weighted_sum(cat, 7), weighted_sum(ops::slice_channels(cat, 1, 3), 8));
    }, {x, x2});
  }
  SUBCASE("linear") {
    auto in = oracle::random_tensor<double>({3, 5}, rng);
    auto lw = oracle::random_tensor<double>({4, 5}, rng);
    auto lb = oracle::random_tensor<double>({4}, rng);
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      return weighted_sum(ops::linear(v[0], v[1], v[2]), 9);
    }, {in, lw, lb});
  }
  SUBCASE("dropout with a fixed mask") {
    expect_gradients([](Tape<double>&, std::span<const Var<double>> v) {
      Rng r(77);
      return weighted_sum(ops::dropout(v[0], 0.3, Mode::kTrain, r), 10);
    }, {x});
  }
  SUBCASE("normalize, ensemble fusions") {
    auto l1 = oracle::random_tensor<double>({2, 3}, rng, -2, 2);
    auto l2 = oracle::random_tensor<double>({2, 3}, rng, -2, 2);
    const std::vector<double> mean{0.1, 0.2, 0.3}, sd{0.5, 1.0, 2.0};
    expect_gradients([&](Tape<double>&, std::span<const Var<double>> v) {
      std::vector<Var<double>> m{v[1], v[2]};
      return ops::add(weighted_sum(ops::normalize_channels<double>(v[0], mean, sd), 11),
                      ops::add(weighted_sum(ops::log_mean_softmax<double>(m), 12), weighted_sum(ops::mean_of<double>(m), 13)));
    }, {x, l1, l2});
  }
}

TEST_CASE("log_mean_softmax of identical members equals log_softmax of one") {
  Rng rng(14);
  auto l = oracle::random_tensor<double>({2, 4}, rng);
  Tape<double> tape;
  auto a = tape.constant(l);
  std::vector<Var<double>> one{a}, three{a, a, a};
  CHECK(oracle::max_rel_diff(ops::log_mean_softmax<double>(one).value(), ops::log_mean_softmax<double>(three).value()) <
        1e-12);
}
