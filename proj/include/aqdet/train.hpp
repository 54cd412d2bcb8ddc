#pragma once

// Deterministic single-threaded training loop with decoupled weight decay
// (AdamW) and greedy-matching evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aqdet/detector.hpp"
#include "aqdet/losses.hpp"
#include "aqdet/scenes.hpp"

namespace aqdet {

template <typename T>
class AdamW {
 public:
  AdamW(NamedParams<T> params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    for (auto& [name, p] : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      auto values = p.mutable_data();
      const auto grads = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double x = static_cast<double>(values[i]);
        x -= lr_ * weight_decay_ * x;  // decoupled decay
        x -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        values[i] = static_cast<T>(x);
      }
    }
  }

  // Global-norm clip applied to all parameter grads before stepping.
  void clip_grad_norm(double max_norm) {
    if (max_norm <= 0) return;
    double sq = 0.0;
    for (auto& [name, p] : params_)
      for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double scale = max_norm / (norm + 1e-12);
    for (auto& [name, p] : params_)
      for (T& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * scale);
  }

 private:
  NamedParams<T> params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepMetrics {
  int64_t step = 0;
  double total = 0, focal = 0, l1 = 0, giou = 0, lr = 0;
};

struct TrainOptions {
  int64_t steps = 2000;
  int64_t log_every = 1;
};

template <typename T>
struct TrainResult {
  std::vector<StepMetrics> log;
  double initial_loss = 0;
  double final_loss = 0;
};

// Round-robin over the scene list; loss summed across decoder layers;
// anchors projected back into the unit square after each step.
template <typename T>
TrainResult<T> train(Detector<T>& det, const std::vector<Scene>& scenes,
                     const TrainOptions& opts) {
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  const DetectorConfig& cfg = det.config();
  AdamW<T> opt(det.parameters(), cfg.lr, cfg.weight_decay);
  const int64_t decay_step = static_cast<int64_t>(cfg.lr_decay_at * static_cast<double>(opts.steps));

  std::vector<Tensor<T>> features;
  features.reserve(scenes.size());
  for (const Scene& s : scenes) features.push_back(rasterize_scene<T>(s, cfg.num_classes));

  TrainResult<T> result;
  for (int64_t step = 0; step < opts.steps; ++step) {
    double lr = step >= decay_step && decay_step > 0 ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
    if (cfg.lr_warmup_steps > 0 && step < cfg.lr_warmup_steps)
      lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.lr_warmup_steps);
    opt.set_lr(lr);
    const std::size_t idx = static_cast<std::size_t>(step) % scenes.size();
    auto outputs = det.forward(features[idx]);
    SetLossResult<T> loss = set_loss(outputs, scenes[idx].targets, cfg.loss);
    opt.zero_grad();
    loss.total.backward();
    opt.clip_grad_norm(cfg.grad_clip);
    opt.step();
    // keep anchor coordinates inside the unit square
    if (det.anchors().trainable)
      for (T& c : det.anchors().positions.mutable_data()) c = std::clamp(c, T(0), T(1));

    const double total = static_cast<double>(loss.total.item());
    if (step == 0) result.initial_loss = total;
    result.final_loss = total;
    if (step % opts.log_every == 0 || step + 1 == opts.steps)
      result.log.push_back({step, total, loss.focal, loss.l1, loss.giou_term, opt.lr()});
  }
  return result;
}

struct EvalOptions {
  double iou_thresh = 0.5;
  double score_thresh = 0.5;
};

struct PatternStat {
  int64_t pattern = 0;
  int64_t count = 0;
  double mean_sqrt_area = 0;
};

struct EvalResult {
  double recall = 0;
  double precision = 0;
  int64_t matched = 0;
  int64_t total_gt = 0;
  int64_t total_pred = 0;
  std::vector<PatternStat> per_pattern;
};

// One scored prediction row.
struct ScoredBox {
  int64_t row = 0;
  int64_t cls = 0;
  double score = 0;
  Box box;
};

template <typename T>
std::vector<ScoredBox> confident_predictions(const DetectionSet<T>& det, double score_thresh) {
  const int64_t n = det.boxes.dim(0), classes = det.class_logits.dim(1);
  std::vector<ScoredBox> out;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best_c = 0;
    double best = -1e30;
    for (int64_t c = 0; c < classes; ++c) {
      const double s = static_cast<double>(det.class_logits.data()[i * classes + c]);
      if (s > best) {
        best = s;
        best_c = c;
      }
    }
    const double prob = 1.0 / (1.0 + std::exp(-best));
    if (prob < score_thresh) continue;
    ScoredBox sb;
    sb.row = i;
    sb.cls = best_c;
    sb.score = prob;
    sb.box = {static_cast<double>(det.boxes.data()[i * 4 + 0]),
              static_cast<double>(det.boxes.data()[i * 4 + 1]),
              static_cast<double>(det.boxes.data()[i * 4 + 2]),
              static_cast<double>(det.boxes.data()[i * 4 + 3])};
    out.push_back(sb);
  }
  // score-descending, ties toward lower rows
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  return out;
}

// Greedy class-aware matching at the IoU threshold: per scene, confident
// predictions in score order each claim the best still-unmatched same-class
// ground truth.
inline EvalResult evaluate_predictions(const std::vector<Scene>& scenes,
                                       const std::vector<std::vector<ScoredBox>>& preds_per_scene,
                                       const std::vector<int64_t>& pattern_of_row,
                                       int64_t num_patterns, const EvalOptions& opts) {
  if (preds_per_scene.size() != scenes.size())
    throw std::invalid_argument("evaluate_predictions: one prediction list per scene required");
  EvalResult res;
  std::vector<double> pattern_area_sum(static_cast<std::size_t>(num_patterns), 0.0);
  std::vector<int64_t> pattern_count(static_cast<std::size_t>(num_patterns), 0);

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& scene = scenes[s];
    const auto& preds = preds_per_scene[s];
    res.total_pred += static_cast<int64_t>(preds.size());
    res.total_gt += static_cast<int64_t>(scene.targets.size());
    std::vector<bool> taken(scene.targets.size(), false);
    for (const ScoredBox& p : preds) {
      int64_t best_g = -1;
      double best_iou = opts.iou_thresh;
      for (std::size_t g = 0; g < scene.targets.size(); ++g) {
        if (taken[g] || scene.targets[g].cls != p.cls) continue;
        const double i = box_iou(p.box, scene.targets[g].box());
        if (i >= best_iou) {
          best_iou = i;
          best_g = static_cast<int64_t>(g);
        }
      }
      if (best_g >= 0) {
        taken[static_cast<std::size_t>(best_g)] = true;
        ++res.matched;
      }
      const std::size_t pat =
          static_cast<std::size_t>(pattern_of_row[static_cast<std::size_t>(p.row)]);
      pattern_area_sum[pat] += std::sqrt(p.box.w * p.box.h);
      pattern_count[pat] += 1;
    }
  }
  res.recall = res.total_gt == 0
                   ? 1.0
                   : static_cast<double>(res.matched) / static_cast<double>(res.total_gt);
  res.precision = res.total_pred == 0
                      ? 1.0
                      : static_cast<double>(res.matched) / static_cast<double>(res.total_pred);
  for (int64_t p = 0; p < num_patterns; ++p) {
    PatternStat st;
    st.pattern = p;
    st.count = pattern_count[static_cast<std::size_t>(p)];
    st.mean_sqrt_area = st.count == 0 ? 0.0
                                      : pattern_area_sum[static_cast<std::size_t>(p)] /
                                            static_cast<double>(st.count);
    res.per_pattern.push_back(st);
  }
  return res;
}

template <typename T>
EvalResult evaluate(const Detector<T>& det, const std::vector<Scene>& scenes,
                    const EvalOptions& opts) {
  const DetectorConfig& cfg = det.config();
  std::vector<std::vector<ScoredBox>> preds;
  preds.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    auto outputs = det.forward(rasterize_scene<T>(scene, cfg.num_classes));
    preds.push_back(confident_predictions(outputs.back(), opts.score_thresh));
  }
  return evaluate_predictions(scenes, preds, det.pattern_of_row(), cfg.num_patterns, opts);
}

}  // namespace aqdet
