#include "amref/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace amref {

namespace {

void check_shapes(const Matrix& pred, const Matrix& mask) {
  if (pred.rows() != mask.rows() || pred.cols() != mask.cols()) {
    throw std::invalid_argument("metric: pred and mask shapes disagree");
  }
}

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion count_hard(const Matrix& pred, const Matrix& mask, double threshold) {
  Confusion c;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      bool p = pred(i, j) >= threshold;
      bool t = mask(i, j) > 0.5;
      if (p && t) c.tp += 1;
      else if (p && !t) c.fp += 1;
      else if (!p && t) c.fn += 1;
      else c.tn += 1;
    }
  }
  return c;
}

}  // namespace

double dice_at(const Matrix& pred_map, const Matrix& mask, double threshold) {
  check_shapes(pred_map, mask);
  Confusion c = count_hard(pred_map, mask, threshold);
  double denom = 2.0 * c.tp + c.fp + c.fn;
  if (denom == 0.0) return 1.0;  // empty vs empty
  return 2.0 * c.tp / denom;
}

double iou_at(const Matrix& pred_map, const Matrix& mask, double threshold) {
  check_shapes(pred_map, mask);
  Confusion c = count_hard(pred_map, mask, threshold);
  double denom = c.tp + c.fp + c.fn;
  if (denom == 0.0) return 1.0;
  return c.tp / denom;
}

std::pair<double, double> max_dice(const std::vector<Matrix>& pred_maps,
                                   const std::vector<Matrix>& masks) {
  if (pred_maps.empty() || pred_maps.size() != masks.size()) {
    throw std::invalid_argument("max_dice: needs >= 1 positive sample");
  }
  double best = -1.0, best_t = 0.0;
  for (int step = 1; step <= 19; ++step) {
    double t = 0.05 * step;
    double mean = 0.0;
    for (std::size_t i = 0; i < pred_maps.size(); ++i) {
      mean += dice_at(pred_maps[i], masks[i], t);
    }
    mean /= static_cast<double>(pred_maps.size());
    if (mean > best) {  // strict: ties keep the lowest threshold
      best = mean;
      best_t = t;
    }
  }
  return {best, best_t};
}

double hit_rate(const std::vector<Matrix>& pred_maps,
                const std::vector<Matrix>& masks) {
  if (pred_maps.empty() || pred_maps.size() != masks.size()) {
    throw std::invalid_argument("hit_rate: needs >= 1 positive sample");
  }
  int hits = 0;
  for (std::size_t i = 0; i < pred_maps.size(); ++i) {
    check_shapes(pred_maps[i], masks[i]);
    const Matrix& p = pred_maps[i];
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index br = 0, bc = 0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        if (p(r, c) > best) {  // row-major tie-break: first max wins
          best = p(r, c);
          br = r;
          bc = c;
        }
      }
    }
    if (masks[i](br, bc) > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred_maps.size());
}

double auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auc: bad input lengths");
  }
  double n_pos = 0, n_neg = 0;
  for (double y : labels) (y > 0.5 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }
  // average ranks with tie handling
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (labels[k] > 0.5) rank_sum_pos += rank[k];
  }
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::pair<double, double> confusion_metrics(const std::vector<double>& scores,
                                            const std::vector<double>& labels,
                                            double threshold) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("confusion_metrics: bad input lengths");
  }
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    bool p = scores[k] >= threshold;
    bool t = labels[k] > 0.5;
    if (p && t) tp += 1;
    else if (p && !t) fp += 1;
    else if (!p && t) fn += 1;
    else tn += 1;
  }
  double f1_den = 2.0 * tp + fp + fn;
  double f1 = f1_den == 0.0 ? 0.0 : 2.0 * tp / f1_den;
  double mcc_den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  double mcc = mcc_den == 0.0 ? 0.0 : (tp * tn - fp * fn) / mcc_den;
  return {f1, mcc};
}

Matrix upsample_nearest(const Matrix& map, int height, int width) {
  Matrix out(height, width);
  int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  for (int r = 0; r < height; ++r) {
    int sr = std::min(r * h / height, h - 1);
    for (int c = 0; c < width; ++c) {
      int sc = std::min(c * w / width, w - 1);
      out(r, c) = map(sr, sc);
    }
  }
  return out;
}

MetricReport evaluate(const ModelParams& params, const Dataset& ds,
                      const std::string& config_hash) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (!(params.catalog == ds.catalog)) {
    throw std::invalid_argument("evaluate: model/dataset catalog mismatch");
  }
  MetricReport report;
  report.n_samples = static_cast<int>(ds.samples.size());
  report.config_hash = config_hash;

  int K = params.catalog.size();
  int n_macro = 0;
  FindingMetrics macro;
  for (int f = 0; f < K; ++f) {
    const std::string& name = params.catalog.names()[f];
    std::vector<double> scores, labels;
    std::vector<Matrix> pos_maps, pos_masks;
    for (const auto& s : ds.samples) {
      PromptOutput out = forward_prompt(params, s.image, name);
      scores.push_back(1.0 / (1.0 + std::exp(-out.logit)));
      labels.push_back(s.labels[f]);
      if (s.labels[f] != 0.0) {
        pos_maps.push_back(upsample_nearest(out.refined.map, s.image.height(),
                                            s.image.width()));
        pos_masks.push_back(s.masks.at(name));
      }
    }
    FindingMetrics m;
    m.n_positive = static_cast<int>(pos_maps.size());
    bool both_classes = m.n_positive > 0 &&
                        m.n_positive < static_cast<int>(ds.samples.size());
    if (both_classes) {
      m.auc = auc(scores, labels);
      std::tie(m.f1, m.mcc) = confusion_metrics(scores, labels, 0.5);
    }
    if (m.n_positive > 0) {
      double dice_sum = 0.0;
      for (std::size_t i = 0; i < pos_maps.size(); ++i) {
        dice_sum += dice_at(pos_maps[i], pos_masks[i], 0.5);
      }
      m.dice_at_05 = dice_sum / static_cast<double>(pos_maps.size());
      std::tie(m.max_dice, m.best_threshold) = max_dice(pos_maps, pos_masks);
      double iou_sum = 0.0;
      for (std::size_t i = 0; i < pos_maps.size(); ++i) {
        iou_sum += iou_at(pos_maps[i], pos_masks[i], m.best_threshold);
      }
      m.iou_at_best = iou_sum / static_cast<double>(pos_maps.size());
      m.hit_rate = hit_rate(pos_maps, pos_masks);

      macro.auc += m.auc;
      macro.f1 += m.f1;
      macro.mcc += m.mcc;
      macro.dice_at_05 += m.dice_at_05;
      macro.max_dice += m.max_dice;
      macro.best_threshold += m.best_threshold;
      macro.iou_at_best += m.iou_at_best;
      macro.hit_rate += m.hit_rate;
      ++n_macro;
    }
    report.per_finding.emplace(name, m);
  }
  if (n_macro > 0) {
    macro.auc /= n_macro;
    macro.f1 /= n_macro;
    macro.mcc /= n_macro;
    macro.dice_at_05 /= n_macro;
    macro.max_dice /= n_macro;
    macro.best_threshold /= n_macro;
    macro.iou_at_best /= n_macro;
    macro.hit_rate /= n_macro;
    macro.n_positive = n_macro;
  }
  report.macro = macro;
  return report;
}

namespace {

nlohmann::json metrics_to_json(const FindingMetrics& m) {
  return nlohmann::json{{"auc", m.auc},
                        {"f1", m.f1},
                        {"mcc", m.mcc},
                        {"dice_at_05", m.dice_at_05},
                        {"max_dice", m.max_dice},
                        {"best_threshold", m.best_threshold},
                        {"iou_at_best", m.iou_at_best},
                        {"hit_rate", m.hit_rate},
                        {"n_positive", m.n_positive}};
}

}  // namespace

std::string MetricReport::to_json_string() const {
  nlohmann::json j;
  j["method"] = method;
  j["dataset"] = dataset;
  j["n_samples"] = n_samples;
  j["config_hash"] = config_hash;
  for (const auto& [name, m] : per_finding) {
    j["per_finding"][name] = metrics_to_json(m);
  }
  j["macro"] = metrics_to_json(macro);
  return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
  std::ostringstream ss;
  ss << "Method  Dataset  AUC (%)  F1 Score (%)  MCC (%)  Max Dice (%)\n";
  auto row = [&](const std::string& label, const FindingMetrics& m) {
    ss << label << "  " << dataset << "  " << std::fixed << std::setprecision(2)
       << 100.0 * m.auc << "  " << 100.0 * m.f1 << "  " << 100.0 * m.mcc << "  "
       << 100.0 * m.max_dice << "\n";
  };
  row(method, macro);
  for (const auto& [name, m] : per_finding) {
    row(method + "/" + name, m);
  }
  return ss.str();
}

}  // namespace amref
