#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpseg/image.hpp"
#include "vpseg/tensor.hpp"

namespace vpseg {

using InvalidMask = Image<std::uint8_t>;  // 1 marks ambiguous pixels
using InstanceMap = Image<std::uint16_t>; // 0 = no instance

// K x K confusion counts indexed [gt][pred]; ignore pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::int64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * k_ + pred];
  }
  std::int64_t& at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * k_ + pred];
  }
  std::int64_t total() const;

  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  int k_ = 0;
  std::vector<std::int64_t> counts_;
};

void confusion_accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionMatrix& acc,
                          std::uint16_t ignore_label = kIgnoreLabel);

// Per-class IoU = TP / (TP + FN + FP); classes with zero denominator have no
// value and are excluded from the mean.
struct PerClassMetric {
  std::vector<std::optional<double>> per_class;
  std::optional<double> mean;
};

PerClassMetric miou(const ConfusionMatrix& acc);

// Instance-weighted IoU: gt pixels weigh class-average-instance-size /
// instance-size (weight 1 outside instances); FP stays unweighted.
PerClassMetric iiou(const LabelMap& pred, const LabelMap& gt, const InstanceMap& instances,
                    int num_classes, std::uint16_t ignore_label = kIgnoreLabel);

// Dataset-level IoU restricted to invalid-mask pixels: intersections and
// unions are summed over all images before the ratio.
PerClassMetric ia_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                      const std::vector<InvalidMask>& masks, int num_classes,
                      std::uint16_t ignore_label = kIgnoreLabel);

struct MetricsReport {
  int num_classes = 0;
  PerClassMetric iou;
  std::optional<PerClassMetric> iiou;
  std::optional<PerClassMetric> ia_iou;
  std::int64_t pixels_evaluated = 0;

  std::string to_json() const;
};

// Argmax over the class axis of K x H x W logits.
LabelMap argmax_labels(const Tensor& logits);

}  // namespace vpseg
