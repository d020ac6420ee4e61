#include "pfv2/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pfv2 {

namespace {

std::size_t joint_count(std::span<const double> pred, std::span<const double> gt, const char* who) {
  if (pred.size() != gt.size() || pred.size() % 3 != 0 || pred.empty()) {
    throw std::invalid_argument(std::string(who) + ": joint count mismatch (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(gt.size()) + " values)");
  }
  return pred.size() / 3;
}

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Points as_points(std::span<const double> p) {
  return Eigen::Map<const Points>(p.data(), static_cast<Eigen::Index>(p.size() / 3), 3);
}

double joint_error(const Pose& p, const Pose& g, std::size_t j) {
  const double dx = p[3 * j] - g[3 * j], dy = p[3 * j + 1] - g[3 * j + 1], dz = p[3 * j + 2] - g[3 * j + 2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_batch(const std::vector<Pose>& preds, const std::vector<Pose>& gts, const char* who) {
  if (preds.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
  if (preds.size() != gts.size()) throw std::invalid_argument(std::string(who) + ": batch size mismatch");
  for (std::size_t i = 0; i < preds.size(); ++i) joint_count(preds[i], gts[i], who);
}

}  // namespace

double mpjpe(std::span<const double> pred, std::span<const double> gt) {
  const std::size_t J = joint_count(pred, gt, "mpjpe");
  double acc = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const double dx = pred[3 * j] - gt[3 * j], dy = pred[3 * j + 1] - gt[3 * j + 1], dz = pred[3 * j + 2] - gt[3 * j + 2];
    acc += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return acc / static_cast<double>(J);
}

ProcrustesResult procrustes_align(std::span<const double> pred, std::span<const double> gt) {
  const std::size_t J = joint_count(pred, gt, "p_mpjpe");
  if (J < 3) throw std::invalid_argument("p_mpjpe: needs at least 3 joints, got " + std::to_string(J));
  const Points X = as_points(pred), Y = as_points(gt);
  const Eigen::RowVector3d mx = X.colwise().mean(), my = Y.colwise().mean();
  const Points X0 = X.rowwise() - mx, Y0 = Y.rowwise() - my;

  ProcrustesResult res;
  Points aligned;
  const Eigen::Matrix3d H = X0.transpose() * Y0;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  const double x_norm = X0.squaredNorm();
  if (x_norm <= 0.0 || s(0) <= 0.0 || s(1) <= 1e-12 * s(0)) {
    res.rank_deficient = true;
    aligned = X0.rowwise() + my;
  } else {
    const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    const Eigen::Matrix3d R = V * d.asDiagonal() * U.transpose();
    res.scale = d.dot(s) / x_norm;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) res.rotation[r][c] = R(r, c);
    aligned = ((res.scale * (X0 * R.transpose())).rowwise() + my).eval();
  }
  res.error = mpjpe(std::span<const double>(aligned.data(), J * 3), gt);
  return res;
}

double p_mpjpe(std::span<const double> pred, std::span<const double> gt) { return procrustes_align(pred, gt).error; }

std::vector<double> default_auc_thresholds() {
  std::vector<double> t;
  for (int v = 5; v <= 150; v += 5) t.push_back(v);
  return t;
}

double pck(const std::vector<Pose>& preds, const std::vector<Pose>& gts, double threshold) {
  check_batch(preds, gts, "pck");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < preds[i].size() / 3; ++j) {
      hit += joint_error(preds[i], gts[i], j) < threshold ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

PckAuc pck_auc(const std::vector<Pose>& preds, const std::vector<Pose>& gts, const std::vector<double>& thresholds) {
  check_batch(preds, gts, "pck_auc");
  if (thresholds.empty()) throw std::invalid_argument("pck_auc: empty threshold grid");
  PckAuc out;
  out.pck150 = pck(preds, gts, 150.0);
  double acc = 0.0;
  for (double t : thresholds) acc += pck(preds, gts, t);
  out.auc = acc / static_cast<double>(thresholds.size());
  return out;
}

MetricReport compute_metrics(const std::vector<Pose>& preds, const std::vector<Pose>& gts) {
  check_batch(preds, gts, "compute_metrics");
  MetricReport r;
  r.count = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.mpjpe += mpjpe(preds[i], gts[i]);
    r.pmpjpe += preds[i].size() >= 9 ? p_mpjpe(preds[i], gts[i]) : mpjpe(preds[i], gts[i]);
  }
  r.mpjpe /= static_cast<double>(r.count);
  r.pmpjpe /= static_cast<double>(r.count);
  const PckAuc pa = pck_auc(preds, gts);
  r.pck150 = pa.pck150;
  r.auc = pa.auc;
  return r;
}

void write_metric_csv(const MetricReport& report, std::ostream& out) {
  out << "metric,value\n" << std::setprecision(17);
  out << "mpjpe," << report.mpjpe << '\n';
  out << "pmpjpe," << report.pmpjpe << '\n';
  out << "pck150," << report.pck150 << '\n';
  out << "auc," << report.auc << '\n';
  out << "count," << report.count << '\n';
}

}  // namespace pfv2
