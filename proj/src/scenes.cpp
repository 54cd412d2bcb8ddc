#include "aqdet/scenes.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace aqdet {

std::vector<Scene> generate_scenes(uint64_t seed, int64_t count, const SceneGenOptions& opts) {
  if (count < 1) throw std::invalid_argument("generate_scenes: count must be >= 1");
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int64_t s = 0; s < count; ++s) {
    Scene scene;
    scene.height = opts.height;
    scene.width = opts.width;
    scene.seed = seed;
    if (opts.min_objects > opts.max_objects)
      throw std::invalid_argument("generate_scenes: min_objects exceeds max_objects");
    const int64_t span = opts.max_objects - opts.min_objects + 1;
    const int64_t n =
        opts.min_objects + static_cast<int64_t>(rng() % static_cast<uint64_t>(span));
    for (int64_t k = 0; k < n; ++k) {
      TargetBox t;
      t.cls = static_cast<int64_t>(rng() % static_cast<uint64_t>(opts.classes));
      auto draw_size = [&]() {
        if (!opts.bimodal_sizes)
          return opts.min_size + unit(rng) * (opts.max_size - opts.min_size);
        // two bands at the extremes of the configured range
        const double band = 0.25 * (opts.max_size - opts.min_size);
        return rng() % 2 == 0 ? opts.min_size + unit(rng) * band
                              : opts.max_size - band + unit(rng) * band;
      };
      // same-class boxes that overlap heavily merge in the rasterization and
      // become unrecoverable; resample a few times to keep them apart
      for (int attempt = 0; attempt < 20; ++attempt) {
        t.w = draw_size();
        t.h = draw_size();
        t.cx = t.w / 2 + unit(rng) * (1.0 - t.w);
        t.cy = t.h / 2 + unit(rng) * (1.0 - t.h);
        bool clashes = false;
        for (const TargetBox& other : scene.targets)
          if (other.cls == t.cls && box_iou(other.box(), t.box()) > 0.25) clashes = true;
        if (!clashes) break;
      }
      scene.targets.push_back(t);
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void save_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scenes_jsonl: cannot open " + path);
  for (const Scene& s : scenes) {
    nlohmann::ordered_json j;
    j["h"] = s.height;
    j["w"] = s.width;
    j["seed"] = s.seed;
    auto& targets = j["targets"] = nlohmann::ordered_json::array();
    for (const TargetBox& t : s.targets) {
      nlohmann::ordered_json tj;
      tj["cls"] = t.cls;
      tj["cx"] = t.cx;
      tj["cy"] = t.cy;
      tj["w"] = t.w;
      tj["h"] = t.h;
      targets.push_back(std::move(tj));
    }
    out << j.dump() << "\n";
  }
}

std::vector<Scene> load_scenes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scenes_jsonl: cannot open " + path);
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Scene s;
    s.height = j.at("h").get<int64_t>();
    s.width = j.at("w").get<int64_t>();
    s.seed = j.at("seed").get<uint64_t>();
    for (const auto& tj : j.at("targets")) {
      TargetBox t;
      t.cls = tj.at("cls").get<int64_t>();
      t.cx = tj.at("cx").get<double>();
      t.cy = tj.at("cy").get<double>();
      t.w = tj.at("w").get<double>();
      t.h = tj.at("h").get<double>();
      if (t.w <= 0 || t.h <= 0 || t.cx - t.w / 2 < 0 || t.cx + t.w / 2 > 1 ||
          t.cy - t.h / 2 < 0 || t.cy + t.h / 2 > 1)
        throw std::runtime_error("load_scenes_jsonl: box extents leave the unit square");
      s.targets.push_back(t);
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace aqdet
