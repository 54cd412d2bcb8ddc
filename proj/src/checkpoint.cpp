#include "aqdet/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace aqdet {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string anchor_kind_str(AnchorKind k) { return k == AnchorKind::Grid ? "grid" : "learned"; }
AnchorKind anchor_kind_parse(const std::string& s) {
  if (s == "grid") return AnchorKind::Grid;
  if (s == "learned") return AnchorKind::Learned;
  throw std::runtime_error("config: unknown anchor_kind '" + s + "'");
}
std::string query_design_str(QueryDesign q) {
  return q == QueryDesign::AnchorPoints ? "anchor" : "learned_embedding";
}
QueryDesign query_design_parse(const std::string& s) {
  if (s == "anchor") return QueryDesign::AnchorPoints;
  if (s == "learned_embedding") return QueryDesign::LearnedEmbedding;
  throw std::runtime_error("config: unknown query_design '" + s + "'");
}
std::string attention_variant_str(AttentionVariant a) {
  return a == AttentionVariant::RCDA ? "rcda" : "standard";
}
AttentionVariant attention_variant_parse(const std::string& s) {
  if (s == "rcda") return AttentionVariant::RCDA;
  if (s == "standard") return AttentionVariant::Standard;
  throw std::runtime_error("config: unknown attention_variant '" + s + "'");
}

ojson config_to_json(const DetectorConfig& c) {
  ojson j;
  j["channels"] = c.channels;
  j["heads"] = c.heads;
  j["ffn_hidden"] = c.ffn_hidden;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["num_anchors"] = c.num_anchors;
  j["num_patterns"] = c.num_patterns;
  j["anchor_kind"] = anchor_kind_str(c.anchor_kind);
  j["grid_rows"] = c.grid_rows;
  j["grid_cols"] = c.grid_cols;
  j["query_design"] = query_design_str(c.query_design);
  j["attention_variant"] = attention_variant_str(c.attention_variant);
  j["num_classes"] = c.num_classes;
  j["scene_height"] = c.scene_height;
  j["scene_width"] = c.scene_width;
  j["max_objects"] = c.max_objects;
  j["w_cls"] = c.loss.w_cls;
  j["w_l1"] = c.loss.w_l1;
  j["w_giou"] = c.loss.w_giou;
  j["focal_alpha"] = c.loss.focal_alpha;
  j["focal_gamma"] = c.loss.focal_gamma;
  j["enc_temperature"] = c.enc_temperature;
  j["enc_scale"] = c.enc_scale;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["lr_decay_at"] = c.lr_decay_at;
  j["grad_clip"] = c.grad_clip;
  return j;
}

DetectorConfig config_from_json(const json& j, DetectorConfig c) {
  for (const auto& [key, val] : j.items()) {
    if (key == "channels") c.channels = val.get<int64_t>();
    else if (key == "heads") c.heads = val.get<int64_t>();
    else if (key == "ffn_hidden") c.ffn_hidden = val.get<int64_t>();
    else if (key == "encoder_layers") c.encoder_layers = val.get<int64_t>();
    else if (key == "decoder_layers") c.decoder_layers = val.get<int64_t>();
    else if (key == "num_anchors") c.num_anchors = val.get<int64_t>();
    else if (key == "num_patterns") c.num_patterns = val.get<int64_t>();
    else if (key == "anchor_kind") c.anchor_kind = anchor_kind_parse(val.get<std::string>());
    else if (key == "grid_rows") c.grid_rows = val.get<int64_t>();
    else if (key == "grid_cols") c.grid_cols = val.get<int64_t>();
    else if (key == "query_design") c.query_design = query_design_parse(val.get<std::string>());
    else if (key == "attention_variant") c.attention_variant = attention_variant_parse(val.get<std::string>());
    else if (key == "num_classes") c.num_classes = val.get<int64_t>();
    else if (key == "scene_height") c.scene_height = val.get<int64_t>();
    else if (key == "scene_width") c.scene_width = val.get<int64_t>();
    else if (key == "max_objects") c.max_objects = val.get<int64_t>();
    else if (key == "w_cls") c.loss.w_cls = val.get<double>();
    else if (key == "w_l1") c.loss.w_l1 = val.get<double>();
    else if (key == "w_giou") c.loss.w_giou = val.get<double>();
    else if (key == "focal_alpha") c.loss.focal_alpha = val.get<double>();
    else if (key == "focal_gamma") c.loss.focal_gamma = val.get<double>();
    else if (key == "enc_temperature") c.enc_temperature = val.get<double>();
    else if (key == "enc_scale") c.enc_scale = val.get<double>();
    else if (key == "lr") c.lr = val.get<double>();
    else if (key == "weight_decay") c.weight_decay = val.get<double>();
    else if (key == "lr_decay_factor") c.lr_decay_factor = val.get<double>();
    else if (key == "lr_decay_at") c.lr_decay_at = val.get<double>();
    else if (key == "grad_clip") c.grad_clip = val.get<double>();
    else throw std::runtime_error("config: unknown key '" + key + "'");
  }
  return c;
}

}  // namespace

void save_checkpoint_file(const std::string& path, const DetectorConfig& cfg,
                          const std::vector<ParamBlob>& params) {
  ojson j;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(cfg);
  auto& pj = j["params"] = ojson::object();
  for (const ParamBlob& b : params) {
    ojson e;
    e["shape"] = b.shape;
    e["data"] = b.data;
    pj[b.name] = std::move(e);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

std::pair<DetectorConfig, std::vector<ParamBlob>> load_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  in >> j;
  if (j.at("version").get<int64_t>() != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version");
  DetectorConfig cfg = config_from_json(j.at("config"), DetectorConfig{});
  std::vector<ParamBlob> blobs;
  for (const auto& [name, e] : j.at("params").items()) {
    ParamBlob b;
    b.name = name;
    b.shape = e.at("shape").get<Shape>();
    b.data = e.at("data").get<std::vector<double>>();
    if (static_cast<int64_t>(b.data.size()) != numel(b.shape))
      throw std::runtime_error("load_checkpoint: data length mismatch for " + name);
    blobs.push_back(std::move(b));
  }
  return {cfg, blobs};
}

DetectorConfig config_from_json_file(const std::string& path, DetectorConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  in >> j;
  return config_from_json(j, std::move(base));
}

void save_train_log_csv(const std::string& path, const std::vector<StepMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_train_log_csv: cannot open " + path);
  out << "step,total,focal,l1,giou,lr\n";
  char buf[256];
  for (const StepMetrics& m : log) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(m.step), m.total, m.focal, m.l1, m.giou, m.lr);
    out << buf;
  }
}

}  // namespace aqdet
