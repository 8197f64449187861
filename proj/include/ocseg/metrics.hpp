// Confusion-matrix accumulation and the IoU / pixel-accuracy summary.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ocseg/common.hpp"

namespace ocseg {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // rows = ground truth, cols = prediction

  explicit ConfusionMatrix(int k) : num_classes(k) {
    if (k < 1) throw ContractError("confusion matrix needs at least one class");
    counts.assign(static_cast<size_t>(k) * k, 0);
  }

  int64_t& at(int truth, int pred) {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }
  int64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }

  void add(int truth, int pred, int64_t n = 1) {
    if (truth < 0 || truth >= num_classes || pred < 0 || pred >= num_classes)
      throw ContractError("class id outside confusion matrix");
    at(truth, pred) += n;
  }

  // Scores every pixel whose label is not ignore_label.
  void accumulate(const std::vector<int>& truth, const std::vector<int>& pred,
                  int ignore_label) {
    if (truth.size() != pred.size())
      throw ContractError("confusion accumulate: size mismatch");
    for (size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == ignore_label) continue;
      add(truth[i], pred[i]);
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes)
      throw ContractError("cannot merge confusion matrices of different sizes");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
  }
};

struct MiouReport {
  std::vector<double> per_class_iou;  // NaN for classes absent from truth and prediction
  double mean_iou = 0.0;              // averaged over present classes only
  double pixel_accuracy = 0.0;
};

inline MiouReport miou(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw ContractError("mIoU of an empty confusion matrix");
  const int k = cm.num_classes;
  MiouReport r;
  r.per_class_iou.assign(static_cast<size_t>(k),
                         std::numeric_limits<double>::quiet_NaN());
  int64_t trace = 0;
  double iou_sum = 0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    const int64_t tp = cm.at(c, c);
    trace += tp;
    int64_t fn = 0, fp = 0;
    for (int o = 0; o < k; ++o)
      if (o != c) {
        fn += cm.at(c, o);
        fp += cm.at(o, c);
      }
    const int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // never seen in truth or prediction
    r.per_class_iou[static_cast<size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(denom);
    iou_sum += r.per_class_iou[static_cast<size_t>(c)];
    ++present;
  }
  r.mean_iou = iou_sum / present;  // present >= 1 whenever total > 0
  r.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

}  // namespace ocseg
