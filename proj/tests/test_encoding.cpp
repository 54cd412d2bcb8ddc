#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "aqdet/encoding.hpp"
#include "oracles.hpp"

using namespace aqdet;

namespace {

// Direct per-channel evaluation of the interleaved sine expansion.
std::vector<double> sine_formula(double coord, int64_t C, double temperature, double scale) {
  std::vector<double> out(static_cast<std::size_t>(C));
  for (int64_t i = 0; i < C / 2; ++i) {
    const double angle = coord * scale / std::pow(temperature, 2.0 * double(i) / double(C));
    out[static_cast<std::size_t>(2 * i)] = std::sin(angle);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
  }
  return out;
}

}  // namespace

TEST_CASE("g_sin_2d at the origin alternates 0,1") {
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  auto enc = g_sin_2d(TensorD::from({1, 2}, {0.0, 0.0}), cfg);
  for (int64_t c = 0; c < 8; ++c) CHECK(enc.data()[c] == (c % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("g_sin_2d determinism") {
  SineEncoderConfig cfg{16, 10000.0, 2.0 * std::numbers::pi};
  auto pos = TensorD::from({2, 2}, {0.3, 0.9, 0.11, 0.47});
  auto a = g_sin_2d(pos, cfg);
  auto b = g_sin_2d(pos, cfg);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("g_sin_2d matches per-channel formula") {
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  auto enc = g_sin_2d(TensorD::from({1, 2}, {0.5, 0.25}), cfg);
  const auto fx = sine_formula(0.5, 4, cfg.temperature, cfg.scale);
  const auto fy = sine_formula(0.25, 4, cfg.temperature, cfg.scale);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(enc.data()[c] == doctest::Approx(fx[static_cast<std::size_t>(c)]).epsilon(1e-12));
    CHECK(enc.data()[4 + c] == doctest::Approx(fy[static_cast<std::size_t>(c)]).epsilon(1e-12));
  }
}

TEST_CASE("g_sin_2d channel divisibility") {
  SineEncoderConfig cfg{6, 10000.0, 1.0};
  CHECK_THROWS_AS(g_sin_2d(TensorD::zeros({1, 2}), cfg), ShapeError);
}

TEST_CASE("g_sin_2d outputs bounded and row independent") {
  std::mt19937_64 rng(5);
  SineEncoderConfig cfg{12, 10000.0, 2.0 * std::numbers::pi};
  auto pos = TensorD::uniform({6, 2}, rng);
  auto enc = g_sin_2d(pos, cfg);
  for (double v : enc.data()) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
  // permuting rows permutes outputs identically
  std::vector<double> pd(pos.data().begin(), pos.data().end());
  std::vector<double> perm(pd.size());
  const std::vector<int64_t> order = {3, 0, 5, 1, 4, 2};
  for (std::size_t k = 0; k < order.size(); ++k) {
    perm[2 * k] = pd[static_cast<std::size_t>(2 * order[k])];
    perm[2 * k + 1] = pd[static_cast<std::size_t>(2 * order[k] + 1)];
  }
  auto enc_perm = g_sin_2d(TensorD::from({6, 2}, perm), cfg);
  for (std::size_t k = 0; k < order.size(); ++k)
    for (int64_t c = 0; c < 12; ++c)
      CHECK(enc_perm.data()[static_cast<int64_t>(k) * 12 + c] ==
            enc.data()[order[k] * 12 + c]);
}

TEST_CASE("g_1d at zero and odd channels") {
  SineEncoderConfig cfg{6, 10000.0, 2.0 * std::numbers::pi};
  auto enc = g_1d(TensorD::from({1}, {0.0}), cfg);
  for (int64_t c = 0; c < 6; ++c) CHECK(enc.data()[c] == (c % 2 == 0 ? 0.0 : 1.0));
  SineEncoderConfig bad{5, 10000.0, 1.0};
  CHECK_THROWS_AS(g_1d(TensorD::zeros({1}), bad), ShapeError);
}

TEST_CASE("g_1d consistent with the x half of g_sin_2d at doubled width") {
  SineEncoderConfig cfg1{8, 10000.0, 2.0 * std::numbers::pi};
  SineEncoderConfig cfg2{16, 10000.0, 2.0 * std::numbers::pi};
  const double x = 0.37;
  auto e1 = g_1d(TensorD::from({1}, {x}), cfg1);
  auto e2 = g_sin_2d(TensorD::from({1, 2}, {x, 0.9}), cfg2);
  for (int64_t c = 0; c < 8; ++c) CHECK(e1.data()[c] == e2.data()[c]);
}

TEST_CASE("g_1d matches formula") {
  SineEncoderConfig cfg{6, 10000.0, 2.0 * std::numbers::pi};
  auto enc = g_1d(TensorD::from({1}, {0.7}), cfg);
  const auto ref = sine_formula(0.7, 6, cfg.temperature, cfg.scale);
  for (int64_t c = 0; c < 6; ++c)
    CHECK(enc.data()[c] == doctest::Approx(ref[static_cast<std::size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("encode_anchor_queries zero MLP") {
  std::mt19937_64 rng(7);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  AnchorEncoderMLP<double> mlp;
  mlp.layer1 = LinearLayer<double>::zero(8, 8);
  mlp.layer2 = LinearLayer<double>::zero(8, 8);
  auto out = encode_anchor_queries(TensorD::uniform({3, 2}, rng), mlp, cfg);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("encode_anchor_queries identity linear path") {
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  AnchorEncoderMLP<double> mlp;
  mlp.layer1 = LinearLayer<double>::identity(8);
  mlp.layer2 = LinearLayer<double>::identity(8);
  mlp.activation = Activation::None;
  auto pos = TensorD::from({2, 2}, {0.2, 0.8, 0.6, 0.4});
  auto out = encode_anchor_queries(pos, mlp, cfg);
  auto ref = g_sin_2d(pos, cfg);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == ref.data()[i]);
}

TEST_CASE("encode_anchor_queries matches manual composition") {
  std::mt19937_64 rng(11);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto pos = TensorD::from({1, 2}, {0.5, 0.5});
  auto out = encode_anchor_queries(pos, mlp, cfg);

  const auto enc = g_sin_2d(pos, cfg);
  auto h = oracle::linear(std::vector<double>(enc.data().begin(), enc.data().end()),
                          std::vector<double>(mlp.layer1.weight.data().begin(),
                                              mlp.layer1.weight.data().end()),
                          std::vector<double>(mlp.layer1.bias.data().begin(),
                                              mlp.layer1.bias.data().end()),
                          1, 8, 8);
  for (double& v : h) v = std::max(v, 0.0);
  const auto ref = oracle::linear(h,
                                  std::vector<double>(mlp.layer2.weight.data().begin(),
                                                      mlp.layer2.weight.data().end()),
                                  std::vector<double>(mlp.layer2.bias.data().begin(),
                                                      mlp.layer2.bias.data().end()),
                                  1, 8, 8);
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("gradient reaches anchor coordinates") {
  std::mt19937_64 rng(13);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * std::numbers::pi};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto f = [&](const TensorD& pos) { return sum(encode_anchor_queries(pos, mlp, cfg)); };
  CHECK(grad_check(f, TensorD::uniform({3, 2}, rng, 0.1, 0.9)) < 1e-4);
}
