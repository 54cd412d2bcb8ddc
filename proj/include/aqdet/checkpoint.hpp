#pragma once

// Versioned single-file JSON checkpoints: config plus a name -> {shape, data}
// parameter map. Writes are byte-stable: ordered keys, round-trip float
// printing, parameters in registry order.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aqdet/detector.hpp"
#include "aqdet/train.hpp"

namespace aqdet {

struct ParamBlob {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline constexpr int64_t kCheckpointVersion = 1;

void save_checkpoint_file(const std::string& path, const DetectorConfig& cfg,
                          const std::vector<ParamBlob>& params);
std::pair<DetectorConfig, std::vector<ParamBlob>> load_checkpoint_file(const std::string& path);

// Config file support for the CLI: unknown keys are rejected, absent keys
// keep the base value.
DetectorConfig config_from_json_file(const std::string& path, DetectorConfig base);

// Training-log CSV: step,total,focal,l1,giou,lr
void save_train_log_csv(const std::string& path, const std::vector<StepMetrics>& log);

template <typename T>
std::vector<ParamBlob> collect_blobs(Detector<T>& det) {
  std::vector<ParamBlob> blobs;
  auto push = [&](const std::string& name, const Tensor<T>& t) {
    ParamBlob b;
    b.name = name;
    b.shape = t.shape();
    b.data.assign(t.data().begin(), t.data().end());
    blobs.push_back(std::move(b));
  };
  for (auto& [name, t] : det.parameters()) push(name, t);
  for (auto& [name, t] : det.buffers()) push(name, t);
  return blobs;
}

template <typename T>
void save_checkpoint(const std::string& path, Detector<T>& det) {
  save_checkpoint_file(path, det.config(), collect_blobs(det));
}

template <typename T>
void restore_params(Detector<T>& det, const std::vector<ParamBlob>& blobs) {
  auto apply = [&](NamedParams<T> named) {
    for (auto& [name, t] : named) {
      const ParamBlob* found = nullptr;
      for (const ParamBlob& b : blobs)
        if (b.name == name) {
          found = &b;
          break;
        }
      if (!found) throw std::runtime_error("checkpoint: missing parameter " + name);
      if (found->shape != t.shape())
        throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                                 shape_str(found->shape) + " vs model " + shape_str(t.shape()));
      auto dst = t.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->data[i]);
    }
  };
  apply(det.parameters());
  apply(det.buffers());
}

template <typename T>
Detector<T> load_checkpoint(const std::string& path) {
  auto [cfg, blobs] = load_checkpoint_file(path);
  Detector<T> det(cfg, 0);
  restore_params(det, blobs);
  return det;
}

}  // namespace aqdet
