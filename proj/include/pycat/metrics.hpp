#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace pycat {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Mean per-joint Euclidean distance; inputs in metres, result in mm.
double mpjpe(const Points3& pred, const Points3& gt);

/// Mean per-vertex Euclidean distance in mm.
double pve(const Points3& pred, const Points3& gt);

double sum_squared_error(const Points3& a, const Points3& b);

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Points3 apply(const Points3& p) const;
};

/// Least-squares similarity mapping pred onto gt, det(R) = +1. Throws
/// ContractError for fewer than 3 points or a collinear configuration.
Similarity procrustes_align(const Points3& pred, const Points3& gt);

/// MPJPE after Procrustes alignment, mm.
double pa_mpjpe(const Points3& pred, const Points3& gt);

/// Mean over visible keypoints of exp(-d^2 / (2 area (2 sigma)^2)).
double oks(const Points2& pred, const Points2& gt, const std::vector<uint8_t>& visible, double area,
           const std::vector<double>& sigmas);

struct KeypointTruth {
  Points2 keypoints;
  std::vector<uint8_t> visible;
  double area = 1.0;
};

struct KeypointDetection {
  Points2 keypoints;
  double score = 0.0;
};

struct ImageKeypoints {
  std::vector<KeypointTruth> truths;
  std::vector<KeypointDetection> detections;
};

struct ApArResult {
  std::vector<double> thresholds;
  std::vector<double> ap;  // per threshold
  std::vector<double> ar;  // per threshold
  double ap_mean = 0.0;
  double ar_mean = 0.0;

  double ap_at(double threshold) const;
  double ar_at(double threshold) const;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

/// Per image, detections in descending score claim the unmatched truth of
/// highest OKS at or above the threshold. AP is the 101-point interpolated
/// area under the pooled precision-recall curve; AR is the final recall.
/// Throws ContractError when there are no truths.
ApArResult ap_ar(const std::vector<ImageKeypoints>& images, const std::vector<double>& thresholds,
                 const std::vector<double>& sigmas);

/// (value - baseline) / baseline * 100.
double percent_improvement(double value, double baseline);

struct Metrics3d {
  double pve = 0.0;
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
};

struct Metrics2d {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar = 0.0;
  double ar50 = 0.0;
  double ar75 = 0.0;
};

struct MetricsReport {
  std::string model;
  std::optional<Metrics3d> m3d;
  std::optional<Metrics2d> m2d;
};

Metrics2d summarize_2d(const ApArResult& r);

enum class ReportFormat { text, csv };

/// Reports ordered Baseline, CA, CA_Transformer, CA_FPN_Transformer, PyCAT4;
/// other names follow in input order. The first row is the baseline.
std::vector<MetricsReport> order_reports(std::vector<MetricsReport> reports);

/// Rows: Model, PVE, MPJPE, Recon. Error, PVE Improv. (%). The improvement
/// column is omitted for a single report.
std::string format_table_3d(const std::vector<MetricsReport>& reports, ReportFormat fmt);

/// Rows: Model plus six AP/AR columns, with an improvement row comparing the
/// last report against the first when there are several.
std::string format_table_2d(const std::vector<MetricsReport>& reports, ReportFormat fmt);

/// Both tables for the reports that carry each block.
std::string format_report(const std::vector<MetricsReport>& reports, ReportFormat fmt);

}  // namespace pycat
