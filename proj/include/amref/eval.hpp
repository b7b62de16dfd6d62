#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "amref/data.hpp"
#include "amref/model.hpp"

namespace amref {

struct FindingMetrics {
  double auc = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  double dice_at_05 = 0.0;
  double max_dice = 0.0;
  double best_threshold = 0.0;
  double iou_at_best = 0.0;
  double hit_rate = 0.0;
  int n_positive = 0;
};

struct MetricReport {
  std::map<std::string, FindingMetrics> per_finding;
  FindingMetrics macro;  // unweighted mean over findings with >= 1 positive
  int n_samples = 0;
  std::string config_hash;

  std::string to_json_string() const;
  std::string to_table() const;  // method/dataset/AUC/F1/MCC/Max Dice layout
  std::string method = "amref";
  std::string dataset = "synthetic";
};

// Hard Dice of (pred >= threshold) against a binary mask; empty vs empty = 1.
double dice_at(const Matrix& pred_map, const Matrix& mask, double threshold);
double iou_at(const Matrix& pred_map, const Matrix& mask, double threshold);

// Sweeps thresholds 0.05, 0.10, ..., 0.95 and returns the best mean Dice over
// positive samples plus the (lowest) threshold achieving it.
std::pair<double, double> max_dice(const std::vector<Matrix>& pred_maps,
                                   const std::vector<Matrix>& masks);

// Pointing game: fraction of positive samples whose argmax pixel (row-major
// tie-break) falls inside the mask.
double hit_rate(const std::vector<Matrix>& pred_maps,
                const std::vector<Matrix>& masks);

// Rank-based (Mann-Whitney) AUC; ties contribute 0.5.
double auc(const std::vector<double>& scores, const std::vector<double>& labels);

// F1 and MCC of the thresholded confusion table; zero denominators yield 0.
std::pair<double, double> confusion_metrics(const std::vector<double>& scores,
                                            const std::vector<double>& labels,
                                            double threshold = 0.5);

// Nearest-neighbour upsampling of a patch-grid map to image resolution.
Matrix upsample_nearest(const Matrix& map, int height, int width);

MetricReport evaluate(const ModelParams& params, const Dataset& ds,
                      const std::string& config_hash = "");

}  // namespace amref
