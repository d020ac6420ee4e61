#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

namespace pfv2 {

/// A pose is J*3 values, joint-major.
using Pose = std::vector<double>;

/// (1/J) * sum_j |pred_j - gt_j|. Throws std::invalid_argument on J mismatch.
double mpjpe(std::span<const double> pred, std::span<const double> gt);

struct ProcrustesResult {
  double error = 0.0;
  /// Set when the cross-covariance was rank deficient and only the
  /// translation was aligned.
  bool rank_deficient = false;
  double scale = 1.0;
  double rotation[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
};

/// MPJPE after similarity alignment (rotation, translation, uniform scale) of
/// pred onto gt. Requires J >= 3.
ProcrustesResult procrustes_align(std::span<const double> pred, std::span<const double> gt);
double p_mpjpe(std::span<const double> pred, std::span<const double> gt);

/// 5, 10, ..., 150.
std::vector<double> default_auc_thresholds();

struct PckAuc {
  double pck150 = 0.0;
  double auc = 0.0;
};

/// PCK counts joints with error strictly below the threshold. Throws on an
/// empty batch or mismatched sizes.
PckAuc pck_auc(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
               const std::vector<double>& thresholds = default_auc_thresholds());

/// Fraction of joints over the batch with error < threshold.
double pck(const std::vector<Pose>& preds, const std::vector<Pose>& gts, double threshold);

struct MetricReport {
  double mpjpe = 0.0;
  double pmpjpe = 0.0;
  double pck150 = 0.0;
  double auc = 0.0;
  std::size_t count = 0;
};

/// Batch means of every metric.
MetricReport compute_metrics(const std::vector<Pose>& preds, const std::vector<Pose>& gts);

/// CSV with header `metric,value`.
void write_metric_csv(const MetricReport& report, std::ostream& out);

}  // namespace pfv2
