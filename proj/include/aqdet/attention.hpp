#pragma once

// Attention variants over a 2-D feature map: the standard multi-head
// formulation, the row-column decoupled variant that pools keys per axis and
// attends along the wider axis first, the linear-complexity efficient
// baseline, and the analytic/measured memory accounting for their
// intermediate buffers.

#include <functional>

#include "aqdet/encoding.hpp"
#include "aqdet/memtrack.hpp"
#include "aqdet/tensor.hpp"

namespace aqdet {

struct AttentionConfig {
  int64_t channels = 256;
  int64_t heads = 8;
  double enc_temperature = 10000.0;
  double enc_scale = 2.0 * std::numbers::pi;

  int64_t head_dim() const {
    if (heads < 1 || channels % heads != 0)
      throw ShapeError("AttentionConfig: channels " + std::to_string(channels) +
                       " not divisible by heads " + std::to_string(heads));
    return channels / heads;
  }
  SineEncoderConfig sine_config() const { return {channels, enc_temperature, enc_scale}; }
};

// The four projections of Eq.-style attention; position embeddings are added
// at full width before these apply.
template <typename T>
struct MHAWeights {
  LinearLayer<T> w_q, w_k, w_v, w_o;

  static MHAWeights init(int64_t channels, std::mt19937_64& rng) {
    MHAWeights w;
    w.w_q = LinearLayer<T>::kaiming(channels, channels, rng);
    w.w_k = LinearLayer<T>::kaiming(channels, channels, rng);
    w.w_v = LinearLayer<T>::kaiming(channels, channels, rng);
    w.w_o = LinearLayer<T>::kaiming(channels, channels, rng);
    return w;
  }
  static MHAWeights identity(int64_t channels) {
    MHAWeights w;
    w.w_q = LinearLayer<T>::identity(channels);
    w.w_k = LinearLayer<T>::identity(channels);
    w.w_v = LinearLayer<T>::identity(channels);
    w.w_o = LinearLayer<T>::identity(channels);
    return w;
  }
};

// Encoder memory: the feature map plus per-axis normalized key coordinates.
template <typename T>
struct FeatureMap {
  Tensor<T> k_f;   // [H, W, C]
  Tensor<T> v_f;   // [H, W, C]
  Tensor<T> pos_x; // [W] monotone in [0,1]
  Tensor<T> pos_y; // [H] monotone in [0,1]

  int64_t height() const { return k_f.dim(0); }
  int64_t width() const { return k_f.dim(1); }
  int64_t channels() const { return k_f.dim(2); }
};

template <typename T>
Tensor<T> cell_center_positions(int64_t n) {
  std::vector<T> pos(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    pos[static_cast<std::size_t>(i)] =
        static_cast<T>((static_cast<double>(i) + 0.5) / static_cast<double>(n));
  return Tensor<T>::from({n}, std::move(pos));
}

template <typename T>
FeatureMap<T> make_feature_map(Tensor<T> k_f, Tensor<T> v_f) {
  if (k_f.rank() != 3 || v_f.rank() != 3 || k_f.shape() != v_f.shape())
    throw ShapeError("make_feature_map: key/value maps must share a [H,W,C] shape");
  FeatureMap<T> fmap;
  fmap.pos_x = cell_center_positions<T>(k_f.dim(1));
  fmap.pos_y = cell_center_positions<T>(k_f.dim(0));
  fmap.k_f = std::move(k_f);
  fmap.v_f = std::move(v_f);
  return fmap;
}

// Standard multi-head attention with flattened keys: Q = proj(q_f + q_p),
// K = proj(k_f + k_p), V = proj(v_f); softmax(QK^T / sqrt(d_k)) V per head,
// heads concatenated and output-projected.
template <typename T>
Tensor<T> standard_attention(const Tensor<T>& q_f, const Tensor<T>& q_p, const Tensor<T>& k_f,
                             const Tensor<T>& k_p, const Tensor<T>& v_f,
                             const MHAWeights<T>& weights, const AttentionConfig& cfg) {
  const int64_t dk = cfg.head_dim();
  (void)dk;
  if (q_f.rank() != 2 || q_f.dim(1) != cfg.channels)
    throw ShapeError("standard_attention: queries must be [N_q," + std::to_string(cfg.channels) +
                     "], got " + shape_str(q_f.shape()));
  Tensor<T> q = weights.w_q.forward(add(q_f, q_p));
  Tensor<T> k = weights.w_k.forward(add(k_f, k_p));
  Tensor<T> v = weights.w_v.forward(v_f);
  return weights.w_o.forward(attention_combine(mha_weights(q, k, cfg.heads), v));
}

// Flattened-map convenience: keys come from the [H,W,C] memory, key position
// embeddings from the 2-D sine encoding of the cell-center grid.
template <typename T>
Tensor<T> standard_attention(const Tensor<T>& q_f, const Tensor<T>& q_p,
                             const FeatureMap<T>& fmap, const Tensor<T>& k_p,
                             const MHAWeights<T>& weights, const AttentionConfig& cfg) {
  const int64_t L = fmap.height() * fmap.width();
  return standard_attention(q_f, q_p, reshape(fmap.k_f, {L, fmap.channels()}), k_p,
                            reshape(fmap.v_f, {L, fmap.channels()}), weights, cfg);
}

// [HW,2] cell-center coordinates of the key grid, row-major over (y, x).
template <typename T>
Tensor<T> key_grid_positions(const FeatureMap<T>& fmap) {
  const int64_t H = fmap.height(), W = fmap.width();
  std::vector<T> pos(static_cast<std::size_t>(H * W * 2));
  const auto px = fmap.pos_x.data();
  const auto py = fmap.pos_y.data();
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      pos[static_cast<std::size_t>((i * W + j) * 2 + 0)] = px[j];
      pos[static_cast<std::size_t>((i * W + j) * 2 + 1)] = py[i];
    }
  return Tensor<T>::from({H * W, 2}, std::move(pos));
}

// Decoupled attention core with explicit position embeddings. Requires the
// map to already be oriented so W >= H: row attention first (A_x over W),
// partial sum Z, then column attention (A_y over H).
template <typename T>
Tensor<T> rcda_core(const Tensor<T>& q_f, const Tensor<T>& q_p_x, const Tensor<T>& q_p_y,
                    const FeatureMap<T>& fmap, const Tensor<T>& k_p_x, const Tensor<T>& k_p_y,
                    const MHAWeights<T>& weights, const AttentionConfig& cfg) {
  const int64_t H = fmap.height(), W = fmap.width(), C = fmap.channels();
  if (C != cfg.channels)
    throw ShapeError("rcda: feature channels " + std::to_string(C) + " != config channels " +
                     std::to_string(cfg.channels));
  if (k_p_x.dim(0) != W || k_p_y.dim(0) != H)
    throw ShapeError("rcda: key position embeddings " + shape_str(k_p_x.shape()) + "/" +
                     shape_str(k_p_y.shape()) + " do not match map " + shape_str(fmap.k_f.shape()));
  Tensor<T> k_fx = mean_pool(fmap.k_f, PoolAxis::H);  // [W,C] row feature
  Tensor<T> k_fy = mean_pool(fmap.k_f, PoolAxis::W);  // [H,C] column feature
  Tensor<T> qx = weights.w_q.forward(add(q_f, q_p_x));
  Tensor<T> qy = weights.w_q.forward(add(q_f, q_p_y));
  Tensor<T> kx = weights.w_k.forward(add(k_fx, k_p_x));
  Tensor<T> ky = weights.w_k.forward(add(k_fy, k_p_y));
  Tensor<T> v = weights.w_v.forward(fmap.v_f);  // [H,W,C], unpooled
  Tensor<T> z = weighted_sum_w(mha_weights(qx, kx, cfg.heads), v);  // [N_q,H,C]
  return weights.w_o.forward(weighted_sum_h(mha_weights(qy, ky, cfg.heads), z));
}

// Row-column decoupled attention from raw query coordinates. When the map is
// taller than wide the axis roles swap so the temporary always carries the
// smaller side.
template <typename T>
Tensor<T> rcda(const Tensor<T>& q_f, const Tensor<T>& pos_q, const FeatureMap<T>& fmap,
               const MHAWeights<T>& weights, const AttentionConfig& cfg) {
  if (pos_q.rank() != 2 || pos_q.dim(1) != 2 || pos_q.dim(0) != q_f.dim(0))
    throw ShapeError("rcda: query positions " + shape_str(pos_q.shape()) +
                     " do not align with queries " + shape_str(q_f.shape()));
  const SineEncoderConfig enc = cfg.sine_config();
  Tensor<T> qpx = g_1d(slice_cols(pos_q, 0, 1), enc);
  Tensor<T> qpy = g_1d(slice_cols(pos_q, 1, 1), enc);
  Tensor<T> kpx = g_1d(fmap.pos_x, enc);
  Tensor<T> kpy = g_1d(fmap.pos_y, enc);
  if (fmap.height() <= fmap.width())
    return rcda_core(q_f, qpx, qpy, fmap, kpx, kpy, weights, cfg);
  FeatureMap<T> swapped;
  swapped.k_f = transpose_hw(fmap.k_f);
  swapped.v_f = transpose_hw(fmap.v_f);
  swapped.pos_x = fmap.pos_y;
  swapped.pos_y = fmap.pos_x;
  return rcda_core(q_f, qpy, qpx, swapped, kpy, kpx, weights, cfg);
}

// Decoupled attention fed with learned per-axis query position embeddings
// instead of encoded coordinates (the learned-embedding query baseline needs
// this to pair with the decoupled cross-attention).
template <typename T>
Tensor<T> rcda_learned_qpos(const Tensor<T>& q_f, const Tensor<T>& q_p_x, const Tensor<T>& q_p_y,
                            const FeatureMap<T>& fmap, const MHAWeights<T>& weights,
                            const AttentionConfig& cfg) {
  const SineEncoderConfig enc = cfg.sine_config();
  Tensor<T> kpx = g_1d(fmap.pos_x, enc);
  Tensor<T> kpy = g_1d(fmap.pos_y, enc);
  if (fmap.height() <= fmap.width())
    return rcda_core(q_f, q_p_x, q_p_y, fmap, kpx, kpy, weights, cfg);
  FeatureMap<T> swapped;
  swapped.k_f = transpose_hw(fmap.k_f);
  swapped.v_f = transpose_hw(fmap.v_f);
  swapped.pos_x = fmap.pos_y;
  swapped.pos_y = fmap.pos_x;
  return rcda_core(q_f, q_p_y, q_p_x, swapped, kpy, kpx, weights, cfg);
}

// Efficient attention baseline: softmax over channels per query row, softmax
// over key positions per channel, contracted through a per-head [d_k,d_k]
// context so cost is linear in the number of keys.
template <typename T>
Tensor<T> efficient_attention(const Tensor<T>& q_in, const Tensor<T>& k_in,
                              const Tensor<T>& v_in, const MHAWeights<T>& weights,
                              const AttentionConfig& cfg) {
  const int64_t dk = cfg.head_dim();
  Tensor<T> q = weights.w_q.forward(q_in);
  Tensor<T> k = weights.w_k.forward(k_in);
  Tensor<T> v = weights.w_v.forward(v_in);
  Tensor<T> out;
  for (int64_t h = 0; h < cfg.heads; ++h) {
    Tensor<T> sq = softmax(slice_cols(q, h * dk, dk), 1);
    Tensor<T> sk = softmax(slice_cols(k, h * dk, dk), 0);
    Tensor<T> ctx = matmul(transpose2d(sk), slice_cols(v, h * dk, dk));  // [d_k,d_k]
    Tensor<T> head = matmul(sq, ctx);
    out = h == 0 ? head : concat_cols(out, head);
  }
  return weights.w_o.forward(out);
}

// Analytic element counts of the dominant attention intermediates.
struct MemoryReport {
  int64_t std_weight_elems = 0;  // N_q * H * W * M
  int64_t rcda_ax_elems = 0;     // N_q * W * M
  int64_t rcda_z_elems = 0;      // N_q * H * C
  int64_t rcda_ay_elems = 0;     // N_q * H * M
  double ratio = 0.0;            // std / max(rcda buffers)
};

inline MemoryReport memory_model(int64_t n_q, int64_t h, int64_t w, int64_t heads, int64_t c) {
  if (n_q < 1 || h < 1 || w < 1 || heads < 1 || c < 1)
    throw ShapeError("memory_model: dims must be positive");
  if (w < h) throw ShapeError("memory_model: expects the wide side first (W >= H)");
  MemoryReport r;
  r.std_weight_elems = n_q * h * w * heads;
  r.rcda_ax_elems = n_q * w * heads;
  r.rcda_z_elems = n_q * h * c;
  r.rcda_ay_elems = n_q * h * heads;
  const int64_t dominant = std::max({r.rcda_ax_elems, r.rcda_z_elems, r.rcda_ay_elems});
  r.ratio = static_cast<double>(r.std_weight_elems) / static_cast<double>(dominant);
  return r;
}

// Peak live tensor bytes allocated while `run` executes. Inputs built before
// the call are not counted; everything the run allocates (values and grads)
// is. Exclusive: one measurement at a time.
inline std::size_t measure_peak_buffers(const std::function<void()>& run) {
  memtrack::Scope scope;
  run();
  return scope.finish().peak_bytes;
}

}  // namespace aqdet
