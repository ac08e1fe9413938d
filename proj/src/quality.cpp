#include "qgface/quality.hpp"

#include <algorithm>
#include <cmath>

namespace qgface {

namespace {
constexpr double kSigmaFloor = 1e-6;

void check_norms(const std::vector<double>& norms) {
  if (norms.empty()) throw InvalidInputError("feature norms: empty batch");
  for (double z : norms)
    if (!std::isfinite(z) || z < 0.0)
      throw InvalidInputError("feature norms: non-finite or negative value");
}
}  // namespace

QualityState::QualityState(double momentum, double c, double b)
    : momentum_(momentum), c_(c), b_(b) {
  if (momentum <= 0.0 || momentum > 1.0)
    throw InvalidInputError("quality momentum must be in (0,1]");
  if (b <= 0.0 || b >= 1.0)
    throw InvalidInputError("quality threshold b must be in (0,1)");
  if (c <= 0.0) throw InvalidInputError("quality scale c must be positive");
}

void QualityState::update_stats(const std::vector<double>& norms) {
  check_norms(norms);
  const double n = static_cast<double>(norms.size());
  double mean = 0.0;
  for (double z : norms) mean += z;
  mean /= n;
  double var = 0.0;
  for (double z : norms) var += (z - mean) * (z - mean);
  const double stddev = norms.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;

  if (!initialized_) {
    mu_z_ = mean;
    sigma_z_ = stddev;
    initialized_ = true;
  } else {
    mu_z_ = (1.0 - momentum_) * mu_z_ + momentum_ * mean;
    sigma_z_ = (1.0 - momentum_) * sigma_z_ + momentum_ * stddev;
  }
  sigma_z_ = std::max(sigma_z_, kSigmaFloor);
}

std::vector<double> QualityState::quality_indicator(
    const std::vector<double>& norms) const {
  if (!initialized_)
    throw StateError("quality statistics not initialized; call update_stats first");
  check_norms(norms);
  std::vector<double> z_hat(norms.size());
  for (size_t i = 0; i < norms.size(); ++i) {
    const double v = (norms[i] - mu_z_) / (sigma_z_ / c_);
    z_hat[i] = std::clamp(v, -1.0, 1.0);
  }
  return z_hat;
}

std::vector<double> QualityState::to_unit(const std::vector<double>& z_hat) {
  std::vector<double> out(z_hat.size());
  for (size_t i = 0; i < z_hat.size(); ++i) out[i] = (z_hat[i] + 1.0) / 2.0;
  return out;
}

void QualityState::restore(double mu, double sigma, bool initialized) {
  mu_z_ = mu;
  sigma_z_ = std::max(sigma, kSigmaFloor);
  initialized_ = initialized;
}

PartitionResult partition(const std::vector<double>& z_unit_orig,
                          const std::vector<double>& z_unit_aug, double b) {
  if (z_unit_orig.size() != z_unit_aug.size())
    throw InvalidInputError("partition: stream length mismatch");
  const size_t batch = z_unit_orig.size();
  PartitionResult res;
  res.z_unit.reserve(2 * batch);
  res.z_unit.insert(res.z_unit.end(), z_unit_orig.begin(), z_unit_orig.end());
  res.z_unit.insert(res.z_unit.end(), z_unit_aug.begin(), z_unit_aug.end());
  res.class_mask.resize(2 * batch);
  for (size_t i = 0; i < res.z_unit.size(); ++i)
    res.class_mask[i] = res.z_unit[i] > b;
  res.pair_quality.resize(batch);
  res.contra_mask.resize(batch);
  for (size_t p = 0; p < batch; ++p) {
    res.pair_quality[p] = std::min(z_unit_orig[p], z_unit_aug[p]);
    res.contra_mask[p] = res.pair_quality[p] <= b;
  }
  return res;
}

}  // namespace qgface
