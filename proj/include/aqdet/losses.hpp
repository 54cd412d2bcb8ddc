#pragma once

// Set-prediction losses: sigmoid focal classification, L1 and generalized
// IoU box regression, matched per decoder layer through the assignment
// solver. Scalar box helpers double as the evaluation metrics' primitives.

#include <cstdint>
#include <string>
#include <vector>

#include "aqdet/matching.hpp"
#include "aqdet/tensor.hpp"

namespace aqdet {

struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
};

inline double box_iou(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// IoU minus the hull penalty; in (-1, 1], 1 iff identical boxes.
inline double giou(const Box& a, const Box& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0)
    throw std::invalid_argument("giou: degenerate box with non-positive extent");
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double hull =
      (std::max(ax2, bx2) - std::min(ax1, bx1)) * (std::max(ay2, by2) - std::min(ay1, by1));
  return inter / uni - (hull - uni) / hull;
}

// Focal term for a single probability.
inline double focal_loss(double prob, bool positive, double alpha = 0.25, double gamma = 2.0) {
  if (!(prob > 0.0 && prob < 1.0))
    throw std::invalid_argument("focal_loss: probability must lie in (0,1)");
  if (positive) return -alpha * std::pow(1.0 - prob, gamma) * std::log(prob);
  return -(1.0 - alpha) * std::pow(prob, gamma) * std::log(1.0 - prob);
}

// Differentiable GIoU of row-aligned box pairs, both [K,4] as (cx,cy,w,h)
// with positive extents. Returns [K,1].
template <typename T>
Tensor<T> giou_pairs(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.dim(1) != 4)
    throw ShapeError("giou_pairs: expected matching [K,4] boxes, got " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  auto half = [](const Tensor<T>& t) { return mul_scalar(t, T(0.5)); };
  Tensor<T> aw = slice_cols(a, 2, 1), ah = slice_cols(a, 3, 1);
  Tensor<T> bw = slice_cols(b, 2, 1), bh = slice_cols(b, 3, 1);
  Tensor<T> ax1 = sub(slice_cols(a, 0, 1), half(aw)), ax2 = add(slice_cols(a, 0, 1), half(aw));
  Tensor<T> ay1 = sub(slice_cols(a, 1, 1), half(ah)), ay2 = add(slice_cols(a, 1, 1), half(ah));
  Tensor<T> bx1 = sub(slice_cols(b, 0, 1), half(bw)), bx2 = add(slice_cols(b, 0, 1), half(bw));
  Tensor<T> by1 = sub(slice_cols(b, 1, 1), half(bh)), by2 = add(slice_cols(b, 1, 1), half(bh));

  Tensor<T> iw = relu(sub(emin(ax2, bx2), emax(ax1, bx1)));
  Tensor<T> ih = relu(sub(emin(ay2, by2), emax(ay1, by1)));
  Tensor<T> inter = mul(iw, ih);
  Tensor<T> uni = sub(add(mul(aw, ah), mul(bw, bh)), inter);
  Tensor<T> hull = mul(sub(emax(ax2, bx2), emin(ax1, bx1)), sub(emax(ay2, by2), emin(ay1, by1)));
  return sub(div(inter, uni), div(sub(hull, uni), hull));
}

struct TargetBox {
  int64_t cls = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  Box box() const { return {cx, cy, w, h}; }
};

template <typename T>
struct DetectionSet {
  Tensor<T> boxes;         // [N_q, 4] decoded (cx, cy, w, h) in (0,1)
  Tensor<T> class_logits;  // [N_q, classes], per-class sigmoid scores
};

struct SetLossWeights {
  double w_cls = 2.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

template <typename T>
struct SetLossResult {
  Tensor<T> total;  // scalar, differentiable
  double focal = 0, l1 = 0, giou_term = 0;
  std::vector<int64_t> last_assignment;  // gt -> pred rows of the last layer
};

namespace detail {

// Matching cost: focal-style class cost plus L1 plus (1 - GIoU), evaluated
// on detached values.
template <typename T>
std::vector<double> matching_cost(const DetectionSet<T>& preds,
                                  const std::vector<TargetBox>& targets,
                                  const SetLossWeights& w) {
  const int64_t n_pred = preds.boxes.dim(0);
  const int64_t n_gt = static_cast<int64_t>(targets.size());
  const int64_t classes = preds.class_logits.dim(1);
  std::vector<double> cost(static_cast<std::size_t>(n_pred * n_gt));
  const auto logits = preds.class_logits.data();
  const auto boxes = preds.boxes.data();
  for (int64_t p = 0; p < n_pred; ++p) {
    for (int64_t g = 0; g < n_gt; ++g) {
      const TargetBox& t = targets[static_cast<std::size_t>(g)];
      if (t.cls < 0 || t.cls >= classes)
        throw ShapeError("set_loss: target class " + std::to_string(t.cls) + " out of range");
      const double x = static_cast<double>(logits[p * classes + t.cls]);
      const double prob = 1.0 / (1.0 + std::exp(-x));
      const double pos_cost =
          w.focal_alpha * std::pow(1.0 - prob, w.focal_gamma) * (-std::log(prob + 1e-8));
      const double neg_cost = (1.0 - w.focal_alpha) * std::pow(prob, w.focal_gamma) *
                              (-std::log(1.0 - prob + 1e-8));
      const double cls_cost = pos_cost - neg_cost;
      Box pb{static_cast<double>(boxes[p * 4 + 0]), static_cast<double>(boxes[p * 4 + 1]),
             static_cast<double>(boxes[p * 4 + 2]), static_cast<double>(boxes[p * 4 + 3])};
      double l1 = std::abs(pb.cx - t.cx) + std::abs(pb.cy - t.cy) + std::abs(pb.w - t.w) +
                  std::abs(pb.h - t.h);
      cost[static_cast<std::size_t>(p * n_gt + g)] =
          w.w_cls * cls_cost + w.w_l1 * l1 + w.w_giou * (1.0 - aqdet::giou(pb, t.box()));
    }
  }
  return cost;
}

}  // namespace detail

// Loss of one decoder layer's predictions against the targets; matching is
// recomputed per layer. All predictions receive the focal background term
// except their matched class entry.
template <typename T>
SetLossResult<T> set_loss_layer(const DetectionSet<T>& preds,
                                const std::vector<TargetBox>& targets,
                                const SetLossWeights& w) {
  const int64_t n_pred = preds.boxes.dim(0);
  const int64_t n_gt = static_cast<int64_t>(targets.size());
  const int64_t classes = preds.class_logits.dim(1);
  const double norm = std::max<double>(1.0, static_cast<double>(n_gt));

  std::vector<int64_t> assignment;
  if (n_gt > 0)
    assignment = hungarian_match(detail::matching_cost(preds, targets, w), n_pred, n_gt);

  // focal classification over the full logit matrix: positives are the
  // matched (row, class) entries, everything else is background
  std::vector<T> mask(static_cast<std::size_t>(n_pred * classes), T(0));
  for (int64_t g = 0; g < n_gt; ++g)
    mask[static_cast<std::size_t>(assignment[static_cast<std::size_t>(g)] * classes +
                                  targets[static_cast<std::size_t>(g)].cls)] = T(1);
  Tensor<T> m = Tensor<T>::from({n_pred, classes}, std::move(mask));
  const Tensor<T>& x = preds.class_logits;
  Tensor<T> p = sigmoid(x);
  Tensor<T> one_minus_p = add_scalar(mul_scalar(p, T(-1)), T(1));
  // -log p = softplus(-x), -log(1-p) = softplus(x)
  Tensor<T> pos = mul(pow_scalar(one_minus_p, static_cast<T>(w.focal_gamma)),
                      softplus(mul_scalar(x, T(-1))));
  Tensor<T> neg = mul(pow_scalar(p, static_cast<T>(w.focal_gamma)), softplus(x));
  Tensor<T> focal_mat =
      add(mul_scalar(mul(m, pos), static_cast<T>(w.focal_alpha)),
          mul_scalar(mul(add_scalar(mul_scalar(m, T(-1)), T(1)), neg),
                     static_cast<T>(1.0 - w.focal_alpha)));
  Tensor<T> focal_sum = mul_scalar(sum(focal_mat), static_cast<T>(1.0 / norm));

  SetLossResult<T> out;
  out.focal = static_cast<double>(focal_sum.item());
  out.last_assignment = assignment;
  Tensor<T> total = mul_scalar(focal_sum, static_cast<T>(w.w_cls));

  if (n_gt > 0) {
    std::vector<T> gt(static_cast<std::size_t>(n_gt * 4));
    for (int64_t g = 0; g < n_gt; ++g) {
      const TargetBox& t = targets[static_cast<std::size_t>(g)];
      gt[static_cast<std::size_t>(g * 4 + 0)] = static_cast<T>(t.cx);
      gt[static_cast<std::size_t>(g * 4 + 1)] = static_cast<T>(t.cy);
      gt[static_cast<std::size_t>(g * 4 + 2)] = static_cast<T>(t.w);
      gt[static_cast<std::size_t>(g * 4 + 3)] = static_cast<T>(t.h);
    }
    Tensor<T> gt_boxes = Tensor<T>::from({n_gt, 4}, std::move(gt));
    Tensor<T> matched = select_rows(preds.boxes, assignment);
    Tensor<T> l1_sum = mul_scalar(sum(abs(sub(matched, gt_boxes))), static_cast<T>(1.0 / norm));
    Tensor<T> giou_sum = mul_scalar(
        sum(add_scalar(mul_scalar(giou_pairs(matched, gt_boxes), T(-1)), T(1))),
        static_cast<T>(1.0 / norm));
    out.l1 = static_cast<double>(l1_sum.item());
    out.giou_term = static_cast<double>(giou_sum.item());
    total = add(total, add(mul_scalar(l1_sum, static_cast<T>(w.w_l1)),
                           mul_scalar(giou_sum, static_cast<T>(w.w_giou))));
  }
  out.total = total;
  return out;
}

// Auxiliary supervision: the per-layer losses simply sum.
template <typename T>
SetLossResult<T> set_loss(const std::vector<DetectionSet<T>>& layers,
                          const std::vector<TargetBox>& targets, const SetLossWeights& w) {
  if (layers.empty()) throw ShapeError("set_loss: no prediction layers");
  SetLossResult<T> acc;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    SetLossResult<T> one = set_loss_layer(layers[i], targets, w);
    acc.focal += one.focal;
    acc.l1 += one.l1;
    acc.giou_term += one.giou_term;
    acc.total = i == 0 ? one.total : add(acc.total, one.total);
    acc.last_assignment = std::move(one.last_assignment);
  }
  return acc;
}

}  // namespace aqdet
