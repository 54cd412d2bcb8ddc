#pragma once

// Anchor-point generation, shared pattern embeddings, query composition and
// anchor-relative box decoding. Rows are anchor-major: anchor i owns rows
// i*N_p .. i*N_p + N_p - 1, pattern p = row mod N_p.

#include <random>

#include "aqdet/encoding.hpp"
#include "aqdet/tensor.hpp"

namespace aqdet {

enum class AnchorKind { Grid, Learned };

template <typename T>
struct AnchorSet {
  Tensor<T> positions;  // [N_A, 2] in [0,1]^2
  AnchorKind kind = AnchorKind::Grid;
  bool trainable = false;

  int64_t count() const { return positions.dim(0); }
};

// Cell-center points of a rows x cols lattice, row-major.
template <typename T>
AnchorSet<T> grid_anchors(int64_t rows, int64_t cols) {
  if (rows < 1 || cols < 1)
    throw ShapeError("grid_anchors: grid dims must be positive, got " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  std::vector<T> pos(static_cast<std::size_t>(rows * cols * 2));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) {
      pos[static_cast<std::size_t>((i * cols + j) * 2 + 0)] =
          static_cast<T>((static_cast<double>(j) + 0.5) / static_cast<double>(cols));
      pos[static_cast<std::size_t>((i * cols + j) * 2 + 1)] =
          static_cast<T>((static_cast<double>(i) + 0.5) / static_cast<double>(rows));
    }
  AnchorSet<T> set;
  set.positions = Tensor<T>::from({rows * cols, 2}, std::move(pos));
  set.kind = AnchorKind::Grid;
  set.trainable = false;
  return set;
}

// Uniformly random points, registered as trainable parameters.
template <typename T>
AnchorSet<T> learned_anchors(int64_t n, uint64_t seed) {
  if (n < 1) throw ShapeError("learned_anchors: need at least one anchor");
  std::mt19937_64 rng(seed);
  AnchorSet<T> set;
  set.positions = Tensor<T>::uniform({n, 2}, rng);
  set.positions.set_requires_grad(true);
  set.kind = AnchorKind::Learned;
  set.trainable = true;
  return set;
}

template <typename T>
struct PatternBank {
  Tensor<T> embeddings;  // [N_p, C], shared across all anchors

  static PatternBank init(int64_t n_patterns, int64_t channels, std::mt19937_64& rng) {
    if (n_patterns < 1) throw ShapeError("PatternBank: need at least one pattern");
    PatternBank bank;
    bank.embeddings = Tensor<T>::normal({n_patterns, channels}, rng, T(0), T(0.1));
    bank.embeddings.set_requires_grad(true);
    return bank;
  }
  int64_t count() const { return embeddings.dim(0); }
  int64_t channels() const { return embeddings.dim(1); }
};

template <typename T>
struct QueryBundle {
  Tensor<T> q_f_init;  // [N_q, C] initial query features (tiled patterns)
  Tensor<T> q_p;       // [N_q, C] query position embeddings (encoded anchors)
  Tensor<T> pos_rows;  // [N_q, 2] anchor coordinates per row
  std::vector<int64_t> anchor_of_row;
  std::vector<int64_t> pattern_of_row;

  int64_t num_queries() const { return q_f_init.dim(0); }
};

// Tiles the [N_p, C] bank so row k equals pattern (k mod N_p); anchor-major
// row order means this is a plain block repeat.
template <typename T>
Tensor<T> tile_rows_anchor_major(const Tensor<T>& patterns, int64_t n_anchors) {
  return tile_rows(patterns, n_anchors);
}

// Pattern-position composition: N_q = N_p * N_A rows, each pairing one
// shared pattern embedding with one encoded anchor.
template <typename T>
QueryBundle<T> compose_queries(const AnchorSet<T>& anchors, const PatternBank<T>& patterns,
                               const AnchorEncoderMLP<T>& encoder, const SineEncoderConfig& cfg) {
  if (cfg.channels != patterns.channels())
    throw ShapeError("compose_queries: pattern width " + std::to_string(patterns.channels()) +
                     " != encoder channels " + std::to_string(cfg.channels));
  const int64_t n_a = anchors.count();
  const int64_t n_p = patterns.count();
  QueryBundle<T> bundle;
  bundle.q_p = repeat_rows(encode_anchor_queries(anchors.positions, encoder, cfg), n_p);
  bundle.q_f_init = tile_rows_anchor_major(patterns.embeddings, n_a);
  bundle.pos_rows = repeat_rows(anchors.positions, n_p);
  bundle.anchor_of_row.resize(static_cast<std::size_t>(n_a * n_p));
  bundle.pattern_of_row.resize(static_cast<std::size_t>(n_a * n_p));
  for (int64_t k = 0; k < n_a * n_p; ++k) {
    bundle.anchor_of_row[static_cast<std::size_t>(k)] = k / n_p;
    bundle.pattern_of_row[static_cast<std::size_t>(k)] = k % n_p;
  }
  return bundle;
}

// Anchor-relative box decoding: centers shift the anchor in logit space,
// sizes are plain sigmoids. Every output lands in (0,1).
template <typename T>
Tensor<T> decode_boxes(const Tensor<T>& raw, const Tensor<T>& anchors_of_rows) {
  if (raw.rank() != 2 || raw.dim(1) != 4)
    throw ShapeError("decode_boxes: expected [N,4] raw boxes, got " + shape_str(raw.shape()));
  if (anchors_of_rows.rank() != 2 || anchors_of_rows.dim(1) != 2 ||
      anchors_of_rows.dim(0) != raw.dim(0))
    throw ShapeError("decode_boxes: anchors " + shape_str(anchors_of_rows.shape()) +
                     " do not align with raw " + shape_str(raw.shape()));
  Tensor<T> xy = slice_cols(raw, 0, 2);
  Tensor<T> wh = slice_cols(raw, 2, 2);
  Tensor<T> centers = sigmoid(add(xy, inverse_sigmoid(anchors_of_rows)));
  return concat_cols(centers, sigmoid(wh));
}

// Absolute decoding used by the learned-embedding query baseline: all four
// components are plain sigmoids, no anchor involved.
template <typename T>
Tensor<T> decode_boxes_absolute(const Tensor<T>& raw) {
  if (raw.rank() != 2 || raw.dim(1) != 4)
    throw ShapeError("decode_boxes_absolute: expected [N,4] raw boxes, got " +
                     shape_str(raw.shape()));
  return sigmoid(raw);
}

}  // namespace aqdet
