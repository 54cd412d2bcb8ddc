#pragma once

// Position encoders: 2-D sine-cosine for key grids, 1-D for the decoupled
// row/column attention, and the two-layer MLP adapter applied to anchor
// query encodings. The sine encoders are graph ops so gradients reach
// learned anchor coordinates.

#include <cmath>
#include <numbers>

#include "aqdet/tensor.hpp"

namespace aqdet {

struct SineEncoderConfig {
  int64_t channels = 256;
  double temperature = 10000.0;
  double scale = 2.0 * std::numbers::pi;
};

namespace detail {

// Writes the sin/cos interleaved expansion of one coordinate into out[0..C),
// frequency pair i at channels 2i (sin) and 2i+1 (cos).
template <typename T>
void sine_expand(double coord, int64_t C, double temperature, double scale, T* out) {
  for (int64_t i = 0; i < C / 2; ++i) {
    const double freq = scale / std::pow(temperature, 2.0 * static_cast<double>(i) /
                                                          static_cast<double>(C));
    out[2 * i] = static_cast<T>(std::sin(coord * freq));
    out[2 * i + 1] = static_cast<T>(std::cos(coord * freq));
  }
}

template <typename T>
void sine_expand_grad(double coord, int64_t C, double temperature, double scale, const T* g,
                      T* dcoord) {
  double acc = 0.0;
  for (int64_t i = 0; i < C / 2; ++i) {
    const double freq = scale / std::pow(temperature, 2.0 * static_cast<double>(i) /
                                                          static_cast<double>(C));
    acc += std::cos(coord * freq) * freq * static_cast<double>(g[2 * i]);
    acc -= std::sin(coord * freq) * freq * static_cast<double>(g[2 * i + 1]);
  }
  *dcoord += static_cast<T>(acc);
}

}  // namespace detail

// 2-D sine-cosine encoding of normalized (x, y) pairs: the first C/2
// channels expand x, the last C/2 expand y.
template <typename T>
Tensor<T> g_sin_2d(const Tensor<T>& pos, const SineEncoderConfig& cfg) {
  if (pos.rank() != 2 || pos.dim(1) != 2)
    throw ShapeError("g_sin_2d: expected [N,2] positions, got " + shape_str(pos.shape()));
  if (cfg.channels < 4 || cfg.channels % 4 != 0)
    throw ShapeError("g_sin_2d: channels must be divisible by 4, got " +
                     std::to_string(cfg.channels));
  const int64_t N = pos.dim(0), C = cfg.channels, half = C / 2;
  std::vector<T> out(static_cast<std::size_t>(N * C));
  const auto pd = pos.data();
  for (int64_t n = 0; n < N; ++n) {
    detail::sine_expand(static_cast<double>(pd[n * 2 + 0]), half, cfg.temperature, cfg.scale,
                        out.data() + n * C);
    detail::sine_expand(static_cast<double>(pd[n * 2 + 1]), half, cfg.temperature, cfg.scale,
                        out.data() + n * C + half);
  }
  auto* pn = pos.node();
  const double temp = cfg.temperature, scale = cfg.scale;
  return detail::make_op<T>("g_sin_2d", {N, C}, std::move(out), {pos},
                            [pn, N, C, half, temp, scale](detail::Node<T>& node) {
                              for (int64_t n = 0; n < N; ++n) {
                                detail::sine_expand_grad(
                                    static_cast<double>(pn->value[n * 2 + 0]), half, temp, scale,
                                    node.grad.data() + n * C, &pn->grad[n * 2 + 0]);
                                detail::sine_expand_grad(
                                    static_cast<double>(pn->value[n * 2 + 1]), half, temp, scale,
                                    node.grad.data() + n * C + half, &pn->grad[n * 2 + 1]);
                              }
                            });
}

// 1-D variant: all C channels expand the single coordinate. Accepts [N] or
// [N,1] input.
template <typename T>
Tensor<T> g_1d(const Tensor<T>& pos, const SineEncoderConfig& cfg) {
  if (!(pos.rank() == 1 || (pos.rank() == 2 && pos.dim(1) == 1)))
    throw ShapeError("g_1d: expected [N] or [N,1] positions, got " + shape_str(pos.shape()));
  if (cfg.channels < 2 || cfg.channels % 2 != 0)
    throw ShapeError("g_1d: channels must be even, got " + std::to_string(cfg.channels));
  const int64_t N = pos.dim(0), C = cfg.channels;
  std::vector<T> out(static_cast<std::size_t>(N * C));
  const auto pd = pos.data();
  for (int64_t n = 0; n < N; ++n)
    detail::sine_expand(static_cast<double>(pd[n]), C, cfg.temperature, cfg.scale,
                        out.data() + n * C);
  auto* pn = pos.node();
  const double temp = cfg.temperature, scale = cfg.scale;
  return detail::make_op<T>("g_1d", {N, C}, std::move(out), {pos},
                            [pn, N, C, temp, scale](detail::Node<T>& node) {
                              for (int64_t n = 0; n < N; ++n)
                                detail::sine_expand_grad(static_cast<double>(pn->value[n]), C,
                                                         temp, scale, node.grad.data() + n * C,
                                                         &pn->grad[n]);
                            });
}

enum class Activation { Relu, None };

// Two linear layers adapting the heuristic sine encoding of anchor points.
template <typename T>
struct AnchorEncoderMLP {
  LinearLayer<T> layer1;  // [C -> C]
  LinearLayer<T> layer2;  // [C -> C]
  Activation activation = Activation::Relu;

  static AnchorEncoderMLP init(int64_t channels, std::mt19937_64& rng,
                               Activation act = Activation::Relu) {
    AnchorEncoderMLP mlp;
    mlp.layer1 = LinearLayer<T>::kaiming(channels, channels, rng);
    mlp.layer2 = LinearLayer<T>::kaiming(channels, channels, rng);
    mlp.activation = act;
    return mlp;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = layer1.forward(x);
    if (activation == Activation::Relu) h = relu(h);
    return layer2.forward(h);
  }
};

// Anchor points to query position embeddings: MLP(g_sin_2d(pos)).
// Differentiable through the MLP parameters and, for learned anchors,
// through the coordinates themselves.
template <typename T>
Tensor<T> encode_anchor_queries(const Tensor<T>& pos_q, const AnchorEncoderMLP<T>& mlp,
                                const SineEncoderConfig& cfg) {
  return mlp.forward(g_sin_2d(pos_q, cfg));
}

}  // namespace aqdet
