#pragma once

// Toy end-to-end detector: input projection standing in for a backbone,
// encoder layers whose self-attention is row-column decoupled, decoder
// layers with standard self-attention and decoupled cross-attention, and
// shared box/class heads emitting one detection set per decoder layer.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aqdet/attention.hpp"
#include "aqdet/encoding.hpp"
#include "aqdet/losses.hpp"
#include "aqdet/queries.hpp"
#include "aqdet/scenes.hpp"
#include "aqdet/tensor.hpp"

namespace aqdet {

enum class QueryDesign { AnchorPoints, LearnedEmbedding };
enum class AttentionVariant { RCDA, Standard };

struct DetectorConfig {
  int64_t channels = 256;
  int64_t heads = 8;
  int64_t ffn_hidden = 1024;
  int64_t encoder_layers = 6;
  int64_t decoder_layers = 6;
  int64_t num_anchors = 300;  // grid kind derives this from grid_rows * grid_cols
  int64_t num_patterns = 3;
  AnchorKind anchor_kind = AnchorKind::Learned;
  int64_t grid_rows = 17;
  int64_t grid_cols = 17;
  QueryDesign query_design = QueryDesign::AnchorPoints;
  AttentionVariant attention_variant = AttentionVariant::RCDA;
  int64_t num_classes = 3;
  int64_t scene_height = 16;
  int64_t scene_width = 16;
  int64_t max_objects = 3;

  SetLossWeights loss;
  double enc_temperature = 10000.0;
  double enc_scale = 2.0 * std::numbers::pi;

  // training schedule (single learning rate; linear warmup, one decay step)
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.1;
  double lr_decay_at = 0.8;  // fraction of total steps
  int64_t lr_warmup_steps = 0;
  double grad_clip = 0.1;

  static DetectorConfig defaults() { return {}; }

  // Small profile sized so the full suite runs in minutes.
  static DetectorConfig toy() {
    DetectorConfig c;
    c.channels = 32;
    c.heads = 4;
    c.ffn_hidden = 64;
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    c.num_anchors = 9;
    c.grid_rows = 3;
    c.grid_cols = 3;
    c.num_patterns = 2;
    c.num_classes = 3;
    c.scene_height = 16;
    c.scene_width = 16;
    c.lr = 3e-3;
    c.lr_warmup_steps = 100;
    return c;
  }

  int64_t input_channels() const { return num_classes + 2; }
  int64_t effective_anchors() const {
    return anchor_kind == AnchorKind::Grid ? grid_rows * grid_cols : num_anchors;
  }
  int64_t num_queries() const { return effective_anchors() * num_patterns; }
  AttentionConfig attention() const { return {channels, heads, enc_temperature, enc_scale}; }
  SineEncoderConfig sine() const { return {channels, enc_temperature, enc_scale}; }
};

template <typename T>
struct EncoderLayer {
  MHAWeights<T> attn;
  LinearLayer<T> ffn1, ffn2;
  Tensor<T> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
};

template <typename T>
struct DecoderLayer {
  MHAWeights<T> self_attn;
  MHAWeights<T> cross_attn;
  LinearLayer<T> ffn1, ffn2;
  Tensor<T> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta, norm3_gamma, norm3_beta;
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class Detector {
 public:
  Detector(DetectorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    std::mt19937_64 rng(seed);
    const int64_t C = cfg_.channels;
    input_proj_ = LinearLayer<T>::kaiming(cfg_.input_channels(), C, rng);
    for (int64_t i = 0; i < cfg_.encoder_layers; ++i) {
      EncoderLayer<T> l;
      l.attn = MHAWeights<T>::init(C, rng);
      l.ffn1 = LinearLayer<T>::kaiming(C, cfg_.ffn_hidden, rng);
      l.ffn2 = LinearLayer<T>::kaiming(cfg_.ffn_hidden, C, rng);
      l.norm1_gamma = Tensor<T>::full({C}, T(1)).set_requires_grad(true);
      l.norm1_beta = Tensor<T>::zeros({C}).set_requires_grad(true);
      l.norm2_gamma = Tensor<T>::full({C}, T(1)).set_requires_grad(true);
      l.norm2_beta = Tensor<T>::zeros({C}).set_requires_grad(true);
      encoder_.push_back(std::move(l));
    }
    for (int64_t i = 0; i < cfg_.decoder_layers; ++i) {
      DecoderLayer<T> l;
      l.self_attn = MHAWeights<T>::init(C, rng);
      l.cross_attn = MHAWeights<T>::init(C, rng);
      l.ffn1 = LinearLayer<T>::kaiming(C, cfg_.ffn_hidden, rng);
      l.ffn2 = LinearLayer<T>::kaiming(cfg_.ffn_hidden, C, rng);
      l.norm1_gamma = Tensor<T>::full({C}, T(1)).set_requires_grad(true);
      l.norm1_beta = Tensor<T>::zeros({C}).set_requires_grad(true);
      l.norm2_gamma = Tensor<T>::full({C}, T(1)).set_requires_grad(true);
      l.norm2_beta = Tensor<T>::zeros({C}).set_requires_grad(true);
      l.norm3_gamma = Tensor<T>::full({C}, T(1)).set_requires_grad(true);
      l.norm3_beta = Tensor<T>::zeros({C}).set_requires_grad(true);
      decoder_.push_back(std::move(l));
    }
    if (cfg_.anchor_kind == AnchorKind::Grid) {
      anchors_ = grid_anchors<T>(cfg_.grid_rows, cfg_.grid_cols);
    } else {
      anchors_ = learned_anchors<T>(cfg_.num_anchors, rng());
    }
    patterns_ = PatternBank<T>::init(cfg_.num_patterns, C, rng);
    anchor_mlp_ = AnchorEncoderMLP<T>::init(C, rng);
    if (cfg_.query_design == QueryDesign::LearnedEmbedding) {
      const int64_t n_a = cfg_.effective_anchors();
      qp_embed_ = Tensor<T>::normal({n_a, C}, rng, T(0), T(0.1)).set_requires_grad(true);
      qp_embed_x_ = Tensor<T>::normal({n_a, C}, rng, T(0), T(0.1)).set_requires_grad(true);
      qp_embed_y_ = Tensor<T>::normal({n_a, C}, rng, T(0), T(0.1)).set_requires_grad(true);
    }
    box_head1_ = LinearLayer<T>::kaiming(C, C, rng);
    box_head2_ = LinearLayer<T>::kaiming(C, C, rng);
    box_head3_ = LinearLayer<T>::kaiming(C, 4, rng);
    class_head_ = LinearLayer<T>::kaiming(C, cfg_.num_classes, rng);
    // bias the class head toward background so early focal loss stays calm
    const T prior = T(0.05);
    for (auto& b : class_head_.bias.mutable_data())
      b = std::log(prior / (T(1) - prior));
  }

  const DetectorConfig& config() const { return cfg_; }
  const AnchorSet<T>& anchors() const { return anchors_; }
  AnchorSet<T>& anchors() { return anchors_; }
  const PatternBank<T>& patterns() const { return patterns_; }

  // One encoder layer: self-attention where every pixel queries (decoupled
  // by default, standard in the ablation variant), then the feed-forward
  // block; residual + layer norm after each sublayer.
  Tensor<T> encoder_layer_forward(const EncoderLayer<T>& l, const Tensor<T>& x_map,
                                  const Tensor<T>& grid_pos) const {
    const AttentionConfig att = cfg_.attention();
    const int64_t H = x_map.dim(0), W = x_map.dim(1), C = x_map.dim(2);
    Tensor<T> x = reshape(x_map, {H * W, C});
    Tensor<T> attn;
    if (cfg_.attention_variant == AttentionVariant::RCDA) {
      FeatureMap<T> fmap;
      fmap.k_f = x_map;
      fmap.v_f = x_map;
      fmap.pos_x = cell_center_positions<T>(W);
      fmap.pos_y = cell_center_positions<T>(H);
      attn = rcda(x, grid_pos, fmap, l.attn, att);
    } else {
      Tensor<T> pe = g_sin_2d(grid_pos, cfg_.sine());
      attn = standard_attention(x, pe, x, pe, x, l.attn, att);
    }
    Tensor<T> x1 = layer_norm(add(x, attn), l.norm1_gamma, l.norm1_beta);
    Tensor<T> ffn = l.ffn2.forward(relu(l.ffn1.forward(x1)));
    return reshape(layer_norm(add(x1, ffn), l.norm2_gamma, l.norm2_beta), {H, W, C});
  }

  // One decoder layer: standard self-attention with K_p = Q_p, decoupled
  // cross-attention into the memory, feed-forward block.
  Tensor<T> decoder_layer_forward(const DecoderLayer<T>& l, const Tensor<T>& q,
                                  const Tensor<T>& q_p, const FeatureMap<T>& memory,
                                  const Tensor<T>& pos_rows, const Tensor<T>& qp_x,
                                  const Tensor<T>& qp_y) const {
    const AttentionConfig att = cfg_.attention();
    Tensor<T> sa = standard_attention(q, q_p, q, q_p, q, l.self_attn, att);
    Tensor<T> x1 = layer_norm(add(q, sa), l.norm1_gamma, l.norm1_beta);
    Tensor<T> ca;
    if (cfg_.attention_variant == AttentionVariant::Standard) {
      Tensor<T> k_p = g_sin_2d(key_grid_positions(memory), cfg_.sine());
      ca = standard_attention(x1, q_p, memory, k_p, l.cross_attn, att);
    } else if (cfg_.query_design == QueryDesign::AnchorPoints) {
      ca = rcda(x1, pos_rows, memory, l.cross_attn, att);
    } else {
      ca = rcda_learned_qpos(x1, qp_x, qp_y, memory, l.cross_attn, att);
    }
    Tensor<T> x2 = layer_norm(add(x1, ca), l.norm2_gamma, l.norm2_beta);
    Tensor<T> ffn = l.ffn2.forward(relu(l.ffn1.forward(x2)));
    return layer_norm(add(x2, ffn), l.norm3_gamma, l.norm3_beta);
  }

  // Full pass over one rasterized scene: one detection set per decoder layer
  // (the last entry is the final prediction).
  std::vector<DetectionSet<T>> forward(const Tensor<T>& scene_feature) const {
    if (scene_feature.rank() != 3 || scene_feature.dim(2) != cfg_.input_channels())
      throw ShapeError("Detector::forward: expected [H,W," +
                       std::to_string(cfg_.input_channels()) + "] features, got " +
                       shape_str(scene_feature.shape()));
    const int64_t H = scene_feature.dim(0), W = scene_feature.dim(1), C = cfg_.channels;

    Tensor<T> x = input_proj_.forward(scene_feature);  // [H,W,C]
    FeatureMap<T> probe;
    probe.k_f = x;
    probe.v_f = x;
    probe.pos_x = cell_center_positions<T>(W);
    probe.pos_y = cell_center_positions<T>(H);
    Tensor<T> grid_pos = key_grid_positions(probe);
    for (const EncoderLayer<T>& l : encoder_) x = encoder_layer_forward(l, x, grid_pos);

    FeatureMap<T> memory;
    memory.k_f = x;
    memory.v_f = x;
    memory.pos_x = probe.pos_x;
    memory.pos_y = probe.pos_y;

    // initial queries
    Tensor<T> q, q_p, pos_rows, qp_x, qp_y;
    if (cfg_.query_design == QueryDesign::AnchorPoints) {
      QueryBundle<T> bundle = compose_queries(anchors_, patterns_, anchor_mlp_, cfg_.sine());
      q = bundle.q_f_init;
      q_p = bundle.q_p;
      pos_rows = bundle.pos_rows;
    } else {
      q = tile_rows_anchor_major(patterns_.embeddings, cfg_.effective_anchors());
      q_p = repeat_rows(qp_embed_, cfg_.num_patterns);
      qp_x = repeat_rows(qp_embed_x_, cfg_.num_patterns);
      qp_y = repeat_rows(qp_embed_y_, cfg_.num_patterns);
    }

    std::vector<DetectionSet<T>> outputs;
    outputs.reserve(static_cast<std::size_t>(cfg_.decoder_layers));
    for (const DecoderLayer<T>& l : decoder_) {
      q = decoder_layer_forward(l, q, q_p, memory, pos_rows, qp_x, qp_y);
      Tensor<T> raw =
          box_head3_.forward(relu(box_head2_.forward(relu(box_head1_.forward(q)))));
      DetectionSet<T> det;
      det.boxes = cfg_.query_design == QueryDesign::AnchorPoints
                      ? decode_boxes(raw, pos_rows)
                      : decode_boxes_absolute(raw);
      det.class_logits = class_head_.forward(q);
      outputs.push_back(std::move(det));
    }
    (void)C;
    return outputs;
  }

  std::vector<int64_t> pattern_of_row() const {
    std::vector<int64_t> out(static_cast<std::size_t>(cfg_.num_queries()));
    for (int64_t k = 0; k < cfg_.num_queries(); ++k)
      out[static_cast<std::size_t>(k)] = k % cfg_.num_patterns;
    return out;
  }
  std::vector<int64_t> anchor_of_row() const {
    std::vector<int64_t> out(static_cast<std::size_t>(cfg_.num_queries()));
    for (int64_t k = 0; k < cfg_.num_queries(); ++k)
      out[static_cast<std::size_t>(k)] = k / cfg_.num_patterns;
    return out;
  }

  // Every trainable tensor, stable order, stable names.
  NamedParams<T> parameters() {
    NamedParams<T> out;
    auto lin = [&](const std::string& name, LinearLayer<T>& l) {
      out.emplace_back(name + ".weight", l.weight);
      out.emplace_back(name + ".bias", l.bias);
    };
    auto mha = [&](const std::string& name, MHAWeights<T>& w) {
      lin(name + ".w_q", w.w_q);
      lin(name + ".w_k", w.w_k);
      lin(name + ".w_v", w.w_v);
      lin(name + ".w_o", w.w_o);
    };
    lin("input_proj", input_proj_);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      mha(p + ".attn", encoder_[i].attn);
      lin(p + ".ffn1", encoder_[i].ffn1);
      lin(p + ".ffn2", encoder_[i].ffn2);
      out.emplace_back(p + ".norm1.gamma", encoder_[i].norm1_gamma);
      out.emplace_back(p + ".norm1.beta", encoder_[i].norm1_beta);
      out.emplace_back(p + ".norm2.gamma", encoder_[i].norm2_gamma);
      out.emplace_back(p + ".norm2.beta", encoder_[i].norm2_beta);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      mha(p + ".self_attn", decoder_[i].self_attn);
      mha(p + ".cross_attn", decoder_[i].cross_attn);
      lin(p + ".ffn1", decoder_[i].ffn1);
      lin(p + ".ffn2", decoder_[i].ffn2);
      out.emplace_back(p + ".norm1.gamma", decoder_[i].norm1_gamma);
      out.emplace_back(p + ".norm1.beta", decoder_[i].norm1_beta);
      out.emplace_back(p + ".norm2.gamma", decoder_[i].norm2_gamma);
      out.emplace_back(p + ".norm2.beta", decoder_[i].norm2_beta);
      out.emplace_back(p + ".norm3.gamma", decoder_[i].norm3_gamma);
      out.emplace_back(p + ".norm3.beta", decoder_[i].norm3_beta);
    }
    lin("anchor_mlp.layer1", anchor_mlp_.layer1);
    lin("anchor_mlp.layer2", anchor_mlp_.layer2);
    out.emplace_back("patterns.embeddings", patterns_.embeddings);
    if (anchors_.trainable) out.emplace_back("anchors.positions", anchors_.positions);
    if (cfg_.query_design == QueryDesign::LearnedEmbedding) {
      out.emplace_back("query_pos.embed", qp_embed_);
      out.emplace_back("query_pos.embed_x", qp_embed_x_);
      out.emplace_back("query_pos.embed_y", qp_embed_y_);
    }
    lin("box_head.1", box_head1_);
    lin("box_head.2", box_head2_);
    lin("box_head.3", box_head3_);
    lin("class_head", class_head_);
    return out;
  }

  // Fixed (non-trainable) tensors that still belong in a checkpoint.
  NamedParams<T> buffers() {
    NamedParams<T> out;
    if (!anchors_.trainable) out.emplace_back("anchors.positions", anchors_.positions);
    return out;
  }

  EncoderLayer<T>& encoder_layer(int64_t i) { return encoder_[static_cast<std::size_t>(i)]; }
  DecoderLayer<T>& decoder_layer(int64_t i) { return decoder_[static_cast<std::size_t>(i)]; }

 private:
  DetectorConfig cfg_;
  LinearLayer<T> input_proj_;
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<DecoderLayer<T>> decoder_;
  AnchorSet<T> anchors_;
  PatternBank<T> patterns_;
  AnchorEncoderMLP<T> anchor_mlp_;
  Tensor<T> qp_embed_, qp_embed_x_, qp_embed_y_;
  LinearLayer<T> box_head1_, box_head2_, box_head3_;
  LinearLayer<T> class_head_;
};

}  // namespace aqdet
