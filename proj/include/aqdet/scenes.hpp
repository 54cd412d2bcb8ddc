#pragma once

// Synthetic rectangle scenes: ground truth boxes rasterized into a small
// multi-channel grid (one intensity channel per class plus two coordinate
// channels). Features are regenerated from the stored targets, never saved.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aqdet/losses.hpp"
#include "aqdet/tensor.hpp"

namespace aqdet {

struct Scene {
  int64_t height = 16;
  int64_t width = 16;
  uint64_t seed = 0;  // generator provenance
  std::vector<TargetBox> targets;
};

struct SceneGenOptions {
  int64_t height = 16;
  int64_t width = 16;
  int64_t max_objects = 3;
  int64_t classes = 3;
  double min_size = 0.15;
  double max_size = 0.5;
  int64_t min_objects = 0;
  // when set, object sizes are drawn from two separated bands instead of one
  bool bimodal_sizes = false;
};

std::vector<Scene> generate_scenes(uint64_t seed, int64_t count, const SceneGenOptions& opts);

// JSON-lines persistence: one scene per line, targets plus provenance seed.
void save_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes_jsonl(const std::string& path);

// Rasterizes targets into [H, W, classes + 2]: per-class channels carry 1.0
// inside each box (clamped on overlap), the last two channels carry the cell
// center coordinates. A box smaller than a cell still marks the cell that
// holds its center.
template <typename T>
Tensor<T> rasterize_scene(const Scene& scene, int64_t classes) {
  const int64_t H = scene.height, W = scene.width, C = classes + 2;
  std::vector<T> data(static_cast<std::size_t>(H * W * C), T(0));
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      data[static_cast<std::size_t>((i * W + j) * C + classes + 0)] =
          static_cast<T>((static_cast<double>(j) + 0.5) / static_cast<double>(W));
      data[static_cast<std::size_t>((i * W + j) * C + classes + 1)] =
          static_cast<T>((static_cast<double>(i) + 0.5) / static_cast<double>(H));
    }
  for (const TargetBox& t : scene.targets) {
    if (t.cls < 0 || t.cls >= classes)
      throw ShapeError("rasterize_scene: class " + std::to_string(t.cls) + " out of range");
    bool any = false;
    for (int64_t i = 0; i < H; ++i) {
      const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(H);
      if (cy < t.cy - t.h / 2 || cy > t.cy + t.h / 2) continue;
      for (int64_t j = 0; j < W; ++j) {
        const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(W);
        if (cx < t.cx - t.w / 2 || cx > t.cx + t.w / 2) continue;
        data[static_cast<std::size_t>((i * W + j) * C + t.cls)] = T(1);
        any = true;
      }
    }
    if (!any) {
      const int64_t j = std::min<int64_t>(W - 1, static_cast<int64_t>(t.cx * static_cast<double>(W)));
      const int64_t i = std::min<int64_t>(H - 1, static_cast<int64_t>(t.cy * static_cast<double>(H)));
      data[static_cast<std::size_t>((i * W + j) * C + t.cls)] = T(1);
    }
  }
  return Tensor<T>::from({H, W, C}, std::move(data));
}

}  // namespace aqdet
