#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "aqdet/tensor.hpp"
#include "oracles.hpp"

using namespace aqdet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, T lo = T(-1), T hi = T(1)) {
  return Tensor<T>::uniform(std::move(shape), rng, lo, hi);
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("matmul identity") {
  std::mt19937_64 rng(7);
  auto b = random_tensor<double>({3, 4}, rng);
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  auto i3 = TensorD::from({3, 3}, eye);
  auto c = matmul(i3, b);
  CHECK(max_abs_diff(c.data(), std::vector<double>(b.data().begin(), b.data().end())) == 0.0);
}

TEST_CASE("matmul 1x1") {
  auto a = TensorD::from({1, 1}, {2.0});
  auto b = TensorD::from({1, 1}, {3.0});
  CHECK(matmul(a, b).item() == 6.0);
}

TEST_CASE("matmul vs triple-loop oracle") {
  std::mt19937_64 rng(11);
  auto a = random_tensor<double>({4, 5}, rng);
  auto b = random_tensor<double>({5, 3}, rng);
  auto c = matmul(a, b);
  const auto ref = oracle::matmul(std::vector<double>(a.data().begin(), a.data().end()),
                                  std::vector<double>(b.data().begin(), b.data().end()), 4, 5, 3);
  CHECK(max_abs_diff(c.data(), ref) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = TensorD::zeros({2, 3});
  auto b = TensorD::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul scalar associativity") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 2}, rng);
    const double c = 2.718;
    auto lhs = matmul(mul_scalar(a, c), b);
    auto rhs = mul_scalar(matmul(a, b), c);
    CHECK(max_abs_diff(lhs.data(),
                       std::vector<double>(rhs.data().begin(), rhs.data().end())) < 1e-10);
  }
}

TEST_CASE("softmax closed forms") {
  auto equal = softmax(TensorD::full({4}, 3.5), 0);
  for (double v : equal.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  auto two = softmax(TensorD::from({2}, {0.0, std::log(2.0)}), 0);
  CHECK(two.data()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(two.data()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  auto big = softmax(TensorD::from({2}, {1000.0, 1000.0}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(big.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax slices sum to one") {
  std::mt19937_64 rng(17);
  auto x64 = random_tensor<double>({5, 7}, rng, -50.0, 50.0);
  auto s64 = softmax(x64, 1);
  for (int64_t i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < 7; ++j) acc += s64.data()[i * 7 + j];
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
  auto x32 = Tensor<float>::uniform({4, 6}, rng, -50.0f, 50.0f);
  auto s32 = softmax(x32, 0);
  for (int64_t j = 0; j < 6; ++j) {
    float acc = 0.0f;
    for (int64_t i = 0; i < 4; ++i) acc += s32.data()[i * 6 + j];
    CHECK(std::abs(acc - 1.0f) < 1e-6f);
  }
}

TEST_CASE("softmax invalid axis") {
  CHECK_THROWS_AS(softmax(TensorD::zeros({2, 2}), 2), ShapeError);
}

TEST_CASE("mean_pool constant and H=1") {
  auto c = mean_pool(TensorD::full({3, 4, 2}, 1.25), PoolAxis::H);
  CHECK(c.shape() == Shape{4, 2});
  for (double v : c.data()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));

  std::mt19937_64 rng(19);
  auto x = random_tensor<double>({1, 5, 3}, rng);
  auto p = mean_pool(x, PoolAxis::H);
  CHECK(p.shape() == Shape{5, 3});
  CHECK(max_abs_diff(p.data(), std::vector<double>(x.data().begin(), x.data().end())) == 0.0);
}

TEST_CASE("mean_pool vs loop oracle") {
  std::mt19937_64 rng(23);
  auto x = random_tensor<double>({3, 4, 2}, rng);
  const std::vector<double> raw(x.data().begin(), x.data().end());
  CHECK(max_abs_diff(mean_pool(x, PoolAxis::H).data(), oracle::mean_over_h(raw, 3, 4, 2)) < 1e-12);
  CHECK(max_abs_diff(mean_pool(x, PoolAxis::W).data(), oracle::mean_over_w(raw, 3, 4, 2)) < 1e-12);
}

TEST_CASE("mean_pool rank check") {
  CHECK_THROWS_AS(mean_pool(TensorD::zeros({2, 2}), PoolAxis::H), ShapeError);
}

TEST_CASE("sigmoid and inverse_sigmoid") {
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(inverse_sigmoid(TensorD::scalar(0.5)).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sigmoid(inverse_sigmoid(TensorD::scalar(0.73))).item() ==
        doctest::Approx(0.73).epsilon(1e-9));

  // round trip across a safe range
  std::mt19937_64 rng(29);
  auto x = TensorD::uniform({32}, rng, -6.0, 6.0);
  auto rt = inverse_sigmoid(sigmoid(x));
  CHECK(max_abs_diff(rt.data(), std::vector<double>(x.data().begin(), x.data().end())) < 1e-8);
}

TEST_CASE("backward of sum and sum of squares") {
  std::mt19937_64 rng(31);
  auto x = random_tensor<double>({3, 2}, rng);
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  sum(mul(x, x)).backward();
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward requires scalar") {
  auto x = TensorD::zeros({2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(add(x, x).backward(), std::invalid_argument);
}

TEST_CASE("backward twice with reset is deterministic") {
  std::mt19937_64 rng(37);
  auto x = random_tensor<double>({4, 3}, rng);
  x.set_requires_grad(true);
  auto loss = sum(mul(softmax(x, 1), x));
  loss.backward();
  std::vector<double> first(x.grad().begin(), x.grad().end());
  x.zero_grad();
  loss.backward();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == first[i]);
}

TEST_CASE("composed attention-style graph matches finite differences") {
  std::mt19937_64 rng(41);
  auto k = random_tensor<double>({4, 6}, rng);
  auto v = random_tensor<double>({4, 6}, rng);
  auto f = [&](const TensorD& q) {
    auto a = mha_weights(q, k, 2);
    return sum(mul(attention_combine(a, v), attention_combine(a, v)));
  };
  CHECK(grad_check(f, random_tensor<double>({3, 6}, rng)) < 1e-4);
}

TEST_CASE("grad_check on sum is exact at zero input") {
  auto f = [](const TensorD& x) { return sum(x); };
  CHECK(grad_check(f, TensorD::zeros({3, 3})) == 0.0);
}

TEST_CASE("grad_check softmax then sum of squares") {
  std::mt19937_64 rng(43);
  auto f = [](const TensorD& x) {
    auto s = softmax(x, 1);
    return sum(mul(s, s));
  };
  CHECK(grad_check(f, random_tensor<double>({2, 3}, rng)) < 1e-4);
}

TEST_CASE("non-finite results are surfaced") {
  CHECK_THROWS_AS(log(TensorD::scalar(0.0)), NumericsError);
  CHECK_THROWS_AS(div(TensorD::scalar(1.0), TensorD::scalar(0.0)), NumericsError);
  CHECK_THROWS_AS(exp(TensorD::scalar(1e6)), NumericsError);
}

TEST_CASE("every differentiable op passes grad_check") {
  std::mt19937_64 rng(47);
  // inputs kept away from kinks (relu/abs/min/max at 0, clamp edges)
  auto positive = [&](Shape s) { return TensorD::uniform(s, rng, 0.2, 1.5); };
  auto signed_off = [&](Shape s) {
    auto t = TensorD::uniform(s, rng, 0.1, 1.0);
    std::vector<double> d(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < d.size(); ++i)
      if (rng() % 2) d[i] = -d[i];
    return TensorD::from(s, d);
  };

  std::mt19937_64 wr(101);
  auto other = TensorD::uniform({3, 4}, wr, 0.3, 1.2);
  auto weight = TensorD::uniform({5, 4}, wr, -0.5, 0.5);
  auto bias = TensorD::uniform({5}, wr, -0.5, 0.5);
  auto gamma = TensorD::uniform({4}, wr, 0.5, 1.5);
  auto beta = TensorD::uniform({4}, wr, -0.5, 0.5);
  auto rand34 = TensorD::uniform({3, 4}, wr, -1.0, 1.0);
  auto rand43 = TensorD::uniform({4, 3}, wr, -1.0, 1.0);
  auto v3d = TensorD::uniform({2, 3, 4}, wr, -1.0, 1.0);
  auto a_w = softmax(TensorD::uniform({2, 3, 3}, wr, -1.0, 1.0), 2);
  auto z3d = TensorD::uniform({3, 2, 4}, wr, -1.0, 1.0);
  auto a_h = softmax(TensorD::uniform({2, 3, 2}, wr, -1.0, 1.0), 2);
  auto rand44 = TensorD::uniform({4, 4}, wr, -1.0, 1.0);
  auto rand233 = TensorD::uniform({2, 3, 3}, wr, -1.0, 1.0);

  struct Case {
    const char* name;
    std::function<TensorD(const TensorD&)> f;
    TensorD input;
  };
  const std::vector<Case> cases = {
      {"add", [&](const TensorD& x) { return sum(mul(add(x, other), rand34)); }, signed_off({3, 4})},
      {"sub", [&](const TensorD& x) { return sum(mul(sub(x, other), rand34)); }, signed_off({3, 4})},
      {"mul", [&](const TensorD& x) { return sum(mul(mul(x, other), rand34)); }, signed_off({3, 4})},
      {"div", [&](const TensorD& x) { return sum(mul(div(x, other), rand34)); }, signed_off({3, 4})},
      {"emin", [&](const TensorD& x) { return sum(mul(emin(x, other), rand34)); }, positive({3, 4})},
      {"emax", [&](const TensorD& x) { return sum(mul(emax(x, other), rand34)); }, positive({3, 4})},
      {"relu", [&](const TensorD& x) { return sum(mul(relu(x), rand34)); }, signed_off({3, 4})},
      {"abs", [&](const TensorD& x) { return sum(mul(abs(x), rand34)); }, signed_off({3, 4})},
      {"sigmoid", [&](const TensorD& x) { return sum(mul(sigmoid(x), rand34)); }, signed_off({3, 4})},
      {"inverse_sigmoid",
       [&](const TensorD& x) { return sum(mul(inverse_sigmoid(x), rand34)); },
       TensorD::uniform({3, 4}, rng, 0.15, 0.85)},
      {"log", [&](const TensorD& x) { return sum(mul(log(x), rand34)); }, positive({3, 4})},
      {"exp", [&](const TensorD& x) { return sum(mul(exp(x), rand34)); }, signed_off({3, 4})},
      {"softplus", [&](const TensorD& x) { return sum(mul(softplus(x), rand34)); }, signed_off({3, 4})},
      {"pow_scalar", [&](const TensorD& x) { return sum(mul(pow_scalar(x, 2.0), rand34)); },
       positive({3, 4})},
      {"add_scalar", [&](const TensorD& x) { return sum(mul(add_scalar(x, 0.7), rand34)); },
       signed_off({3, 4})},
      {"mul_scalar", [&](const TensorD& x) { return sum(mul(mul_scalar(x, -1.3), rand34)); },
       signed_off({3, 4})},
      {"softmax0", [&](const TensorD& x) { return sum(mul(softmax(x, 0), rand34)); }, signed_off({3, 4})},
      {"softmax1", [&](const TensorD& x) { return sum(mul(softmax(x, 1), rand34)); }, signed_off({3, 4})},
      {"matmul_lhs", [&](const TensorD& x) { return sum(matmul(x, rand43)); }, signed_off({3, 4})},
      {"matmul_rhs", [&](const TensorD& x) { return sum(matmul(rand34, x)); }, signed_off({4, 3})},
      {"linear_x", [&](const TensorD& x) { return sum(linear(x, weight, bias)); }, signed_off({3, 4})},
      {"linear_w", [&](const TensorD& w) { return sum(linear(rand34, w, bias)); }, signed_off({5, 4})},
      {"linear_b", [&](const TensorD& b) { return sum(linear(rand34, weight, b)); }, signed_off({5})},
      {"layer_norm_x", [&](const TensorD& x) { return sum(mul(layer_norm(x, gamma, beta), rand34)); },
       signed_off({3, 4})},
      {"layer_norm_g", [&](const TensorD& g) { return sum(mul(layer_norm(rand34, g, beta), rand34)); },
       positive({4})},
      {"mean_pool_h",
       [&](const TensorD& x) { return sum(mul(mean_pool(x, PoolAxis::H), rand34)); },
       signed_off({2, 3, 4})},
      {"mean_pool_w",
       [&](const TensorD& x) { return sum(mul(mean_pool(x, PoolAxis::W), rand34)); },
       signed_off({3, 2, 4})},
      {"reshape", [&](const TensorD& x) { return sum(mul(reshape(x, {4, 3}), rand43)); },
       signed_off({3, 4})},
      {"transpose2d", [&](const TensorD& x) { return sum(mul(transpose2d(x), rand43)); },
       signed_off({3, 4})},
      {"transpose_hw", [&](const TensorD& x) { return sum(transpose_hw(x)); }, signed_off({2, 3, 4})},
      {"slice_cols", [&](const TensorD& x) { return sum(slice_cols(x, 1, 2)); }, signed_off({3, 4})},
      {"concat_cols", [&](const TensorD& x) { return sum(mul(concat_cols(x, x), concat_cols(rand34, rand34))); },
       signed_off({3, 4})},
      {"tile_rows", [&](const TensorD& x) { return sum(mul(tile_rows(x, 2), rand44)); },
       signed_off({2, 4})},
      {"repeat_rows", [&](const TensorD& x) { return sum(mul(repeat_rows(x, 2), rand44)); },
       signed_off({2, 4})},
      {"select_rows", [&](const TensorD& x) { return sum(select_rows(x, {0, 2, 2})); },
       signed_off({3, 4})},
      {"sum", [&](const TensorD& x) { return sum(x); }, signed_off({3, 4})},
      {"mean", [&](const TensorD& x) { return mean(x); }, signed_off({3, 4})},
      {"mha_weights_q", [&](const TensorD& q) { return sum(mul(mha_weights(q, rand34, 2), rand233)); },
       signed_off({3, 4})},
      {"mha_weights_k", [&](const TensorD& k) { return sum(mul(mha_weights(rand34, k, 2), rand233)); },
       signed_off({3, 4})},
      {"attention_combine_a",
       [&](const TensorD& a) { return sum(mul(attention_combine(a, rand34), rand34)); },
       TensorD::uniform({2, 3, 3}, rng, 0.1, 1.0)},
      {"attention_combine_v",
       [&](const TensorD& v) { return sum(mul(attention_combine(a_w, v), rand34)); },
       signed_off({3, 4})},
      {"weighted_sum_w_a",
       [&](const TensorD& a) { return sum(weighted_sum_w(a, v3d)); },
       TensorD::uniform({2, 3, 3}, rng, 0.1, 1.0)},
      {"weighted_sum_w_v", [&](const TensorD& v) { return sum(weighted_sum_w(a_w, v)); },
       signed_off({2, 3, 4})},
      {"weighted_sum_h_a",
       [&](const TensorD& a) { return sum(weighted_sum_h(a, z3d)); },
       TensorD::uniform({2, 3, 2}, rng, 0.1, 1.0)},
      {"weighted_sum_h_z", [&](const TensorD& z) { return sum(weighted_sum_h(a_h, z)); },
       signed_off({3, 2, 4})},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(grad_check(c.f, c.input) < 1e-4);
  }
}
