#pragma once

#include <string>
#include <vector>

#include "qgface/augment.hpp"
#include "qgface/contrastive.hpp"
#include "qgface/encoder.hpp"
#include "qgface/quality.hpp"

namespace qgface {

struct QualityConfig {
  double momentum = 0.01;
  double c = 0.33;
  double b = 0.2;
};

struct TrainConfig {
  // Training modes:
  //   qgface          — full pipeline (partition + both losses)
  //   classification  — same two-stream pipeline, contrastive branch off
  //   baseline        — single flip-only stream, no partitioning, no
  //                     contrastive (plain classification training)
  std::string mode = "qgface";

  int64_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 12;
  std::vector<int> lr_drop_epochs = {6, 9};
  uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs; 0 = final only

  QualityConfig quality;
  double loss_m = 0.4;
  double loss_s = 64.0;
  ContrastiveConfig contrastive;
  int64_t queue_capacity = 0;  // 0 = identity count
  AugmentConfig augment;
  EncoderSpec encoder;

  void validate() const;
};

// Single JSON config file mirroring the per-module key names
// (quality.momentum, loss.m, contrastive.s, queue.capacity, train.*,
// augment.*, encoder.*). Missing keys keep their defaults; unknown keys are
// rejected.
TrainConfig load_train_config(const std::string& path);
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace qgface
