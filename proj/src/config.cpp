#include "qgface/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace qgface {

using nlohmann::json;

void TrainConfig::validate() const {
  if (mode != "qgface" && mode != "classification" && mode != "baseline")
    throw ConfigError("train.mode must be qgface|classification|baseline");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (lr <= 0) throw ConfigError("train.lr must be positive");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  for (size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] >= epochs && epochs > 0)
      throw ConfigError("train.lr_drop_epochs must be < epochs");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
      throw ConfigError("train.lr_drop_epochs must be strictly increasing");
  }
  if (queue_capacity < 0) throw ConfigError("queue.capacity must be >= 0");
  augment.validate();
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key: " + scope + "." + it.key());
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  reject_unknown(root, {"train", "quality", "loss", "contrastive", "queue",
                        "augment", "encoder"}, "");
  TrainConfig cfg;

  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t, {"mode", "batch_size", "lr", "momentum", "weight_decay",
                       "epochs", "lr_drop_epochs", "seed", "checkpoint_every"},
                   "train");
    maybe(t, "mode", cfg.mode);
    maybe(t, "batch_size", cfg.batch_size);
    maybe(t, "lr", cfg.lr);
    maybe(t, "momentum", cfg.momentum);
    maybe(t, "weight_decay", cfg.weight_decay);
    maybe(t, "epochs", cfg.epochs);
    maybe(t, "lr_drop_epochs", cfg.lr_drop_epochs);
    maybe(t, "seed", cfg.seed);
    maybe(t, "checkpoint_every", cfg.checkpoint_every);
  }
  if (root.contains("quality")) {
    const json& q = root["quality"];
    reject_unknown(q, {"momentum", "c", "b"}, "quality");
    maybe(q, "momentum", cfg.quality.momentum);
    maybe(q, "c", cfg.quality.c);
    maybe(q, "b", cfg.quality.b);
  }
  if (root.contains("loss")) {
    const json& l = root["loss"];
    reject_unknown(l, {"m", "s"}, "loss");
    maybe(l, "m", cfg.loss_m);
    maybe(l, "s", cfg.loss_s);
  }
  if (root.contains("contrastive")) {
    const json& c = root["contrastive"];
    reject_unknown(c, {"s", "include_positive_in_denominator"}, "contrastive");
    maybe(c, "s", cfg.contrastive.s);
    maybe(c, "include_positive_in_denominator",
          cfg.contrastive.include_positive_in_denominator);
  }
  if (root.contains("queue")) {
    const json& q = root["queue"];
    reject_unknown(q, {"capacity"}, "queue");
    maybe(q, "capacity", cfg.queue_capacity);
  }
  if (root.contains("augment")) {
    const json& a = root["augment"];
    reject_unknown(a, {"p_per_transform", "scale_min", "scale_max",
                       "min_crop_area", "max_rotation_deg",
                       "color_jitter_strength", "jpeg_quality_min",
                       "jpeg_quality_max"},
                   "augment");
    maybe(a, "p_per_transform", cfg.augment.p_per_transform);
    maybe(a, "scale_min", cfg.augment.scale_min);
    maybe(a, "scale_max", cfg.augment.scale_max);
    maybe(a, "min_crop_area", cfg.augment.min_crop_area);
    maybe(a, "max_rotation_deg", cfg.augment.max_rotation_deg);
    maybe(a, "color_jitter_strength", cfg.augment.color_jitter_strength);
    maybe(a, "jpeg_quality_min", cfg.augment.jpeg_quality_min);
    maybe(a, "jpeg_quality_max", cfg.augment.jpeg_quality_max);
  }
  if (root.contains("encoder")) {
    const json& e = root["encoder"];
    reject_unknown(e, {"input_size", "embedding_dim", "architecture"}, "encoder");
    int64_t input_size = cfg.encoder.input_height;
    maybe(e, "input_size", input_size);
    cfg.encoder.input_height = cfg.encoder.input_width = input_size;
    maybe(e, "embedding_dim", cfg.encoder.embedding_dim);
    maybe(e, "architecture", cfg.encoder.architecture);
  }
  cfg.augment.input_size = static_cast<int>(cfg.encoder.input_height);
  cfg.encoder.param_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json root;
  root["train"] = {{"mode", cfg.mode},
                   {"batch_size", cfg.batch_size},
                   {"lr", cfg.lr},
                   {"momentum", cfg.momentum},
                   {"weight_decay", cfg.weight_decay},
                   {"epochs", cfg.epochs},
                   {"lr_drop_epochs", cfg.lr_drop_epochs},
                   {"seed", cfg.seed},
                   {"checkpoint_every", cfg.checkpoint_every}};
  root["quality"] = {{"momentum", cfg.quality.momentum},
                     {"c", cfg.quality.c},
                     {"b", cfg.quality.b}};
  root["loss"] = {{"m", cfg.loss_m}, {"s", cfg.loss_s}};
  root["contrastive"] = {{"s", cfg.contrastive.s},
                         {"include_positive_in_denominator",
                          cfg.contrastive.include_positive_in_denominator}};
  root["queue"] = {{"capacity", cfg.queue_capacity}};
  root["augment"] = {{"p_per_transform", cfg.augment.p_per_transform},
                     {"scale_min", cfg.augment.scale_min},
                     {"scale_max", cfg.augment.scale_max},
                     {"min_crop_area", cfg.augment.min_crop_area},
                     {"max_rotation_deg", cfg.augment.max_rotation_deg},
                     {"color_jitter_strength", cfg.augment.color_jitter_strength},
                     {"jpeg_quality_min", cfg.augment.jpeg_quality_min},
                     {"jpeg_quality_max", cfg.augment.jpeg_quality_max}};
  root["encoder"] = {{"input_size", cfg.encoder.input_height},
                     {"embedding_dim", cfg.encoder.embedding_dim},
                     {"architecture", cfg.encoder.architecture}};
  return root.dump(2);
}

}  // namespace qgface
