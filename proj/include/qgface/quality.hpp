#pragma once

#include <vector>

#include "qgface/common.hpp"

namespace qgface {

// Feature-norm quality statistics and partitioning. The indicator is
//   z_hat = clip((z - mu_z) / (sigma_z / c), -1, 1)
// computed on plain doubles, so it is constant with respect to the
// optimization graph by construction (norms are read off detached values).
class QualityState {
 public:
  QualityState(double momentum = 0.01, double c = 0.33, double b = 0.2);

  // First call initializes mu/sigma from the batch; later calls apply the
  // exponential update new = (1 - momentum) * old + momentum * batch_stat.
  // Batch std is the unbiased sample deviation; sigma is floored at 1e-6.
  void update_stats(const std::vector<double>& norms);

  std::vector<double> quality_indicator(const std::vector<double>& norms) const;

  static std::vector<double> to_unit(const std::vector<double>& z_hat);

  double mu_z() const { return mu_z_; }
  double sigma_z() const { return sigma_z_; }
  double momentum() const { return momentum_; }
  double c() const { return c_; }
  double b() const { return b_; }
  bool initialized() const { return initialized_; }

  // Checkpoint support.
  void restore(double mu, double sigma, bool initialized);

 private:
  double mu_z_ = 0.0;
  double sigma_z_ = 1.0;
  double momentum_;
  double c_;
  double b_;
  bool initialized_ = false;
};

struct PartitionResult {
  std::vector<double> z_unit;        // both streams, originals first (2B)
  std::vector<bool> class_mask;      // per feature (2B): z_unit > b
  std::vector<double> pair_quality;  // per pair (B): min of the two members
  std::vector<bool> contra_mask;     // per pair (B): pair_quality <= b
};

// z_unit vectors must have equal length B; boundary ties (== b) route to
// contrastive.
PartitionResult partition(const std::vector<double>& z_unit_orig,
                          const std::vector<double>& z_unit_aug, double b);

}  // namespace qgface
