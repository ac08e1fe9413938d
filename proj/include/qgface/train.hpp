#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qgface/config.hpp"
#include "qgface/data.hpp"
#include "qgface/image.hpp"

namespace qgface {

struct StepMetrics {
  int64_t step = 0;
  double total_loss = 0, class_loss = 0, contra_loss = 0;
  double frac_lq_pairs = 0;
  double mu_z = 0, sigma_z = 0;
  double lr = 0;
  double mean_pos_sim = 0, mean_neg_sim = 0;
  int64_t num_class_used = 0, num_contra_used = 0;
};

// Joint training loop: pair batch -> embed both streams -> update norm
// statistics -> quality partition -> gated classification + contrastive
// losses -> SGD on their sum -> enqueue the step's detached features. The
// queue mutation happens after the loss (and before the SGD update, so the
// stored proxy snapshots are the ones the features were computed against);
// a feature therefore never competes against itself within its own step.
class Trainer {
 public:
  Trainer(TrainConfig cfg, DatasetIndex dataset);

  // One optimization step over the given dataset records.
  StepMetrics train_step(const std::vector<int64_t>& record_indices);

  // Full schedule with metrics CSVs and checkpoints under out_dir.
  void fit(const std::string& out_dir);

  double lr_for_epoch(int epoch) const;

  // Eval-mode embeddings for a set of images (resized to the encoder input).
  Tensor embed_images(const std::vector<cv::Mat>& images);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  const TrainConfig& config() const { return cfg_; }
  const DatasetIndex& dataset() const { return dataset_; }
  Encoder& encoder() { return *encoder_; }
  ClassifierProxies& proxies() { return proxies_; }
  ProxyQueue& queue() { return *queue_; }
  QualityState& quality() { return quality_; }
  SgdOptimizer& optimizer() { return *optimizer_; }
  int64_t step_count() const { return step_; }
  int epoch() const { return epoch_; }

  // Stable digest of all trainable parameters (trajectory comparisons).
  std::string parameter_digest() const;

  // Record indices in epoch order (seeded shuffle), split into batches.
  std::vector<std::vector<int64_t>> epoch_batches(int epoch) const;

 private:
  cv::Mat load_input(int64_t record_index) const;

  TrainConfig cfg_;
  DatasetIndex dataset_;
  std::unique_ptr<Encoder> encoder_;
  ClassifierProxies proxies_;
  std::unique_ptr<ProxyQueue> queue_;
  QualityState quality_;
  std::unique_ptr<SgdOptimizer> optimizer_;
  int64_t step_ = 0;
  int epoch_ = 0;
};

// Encoder + config restored from a checkpoint, enough to embed images.
struct EncoderBundle {
  TrainConfig cfg;
  std::unique_ptr<Encoder> encoder;
  Tensor embed(const std::vector<cv::Mat>& images);
};

EncoderBundle load_encoder_bundle(const std::string& checkpoint_path);

// Config embedded in a checkpoint (self-describing resume/eval).
TrainConfig checkpoint_config(const std::string& checkpoint_path);

}  // namespace qgface
