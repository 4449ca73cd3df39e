#include "vpseg/metrics.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vpseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need >= 1 class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : counts_) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void confusion_accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionMatrix& acc,
                          std::uint16_t ignore_label) {
  if (!pred.same_size(gt)) {
    throw std::invalid_argument("confusion_accumulate: pred " + std::to_string(pred.height()) +
                                "x" + std::to_string(pred.width()) + " vs gt " +
                                std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  }
  const int k = acc.num_classes();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint16_t g = gt.data()[i];
    if (g == ignore_label) continue;
    const std::uint16_t p = pred.data()[i];
    if (g >= k || p >= k) {
      throw std::invalid_argument("confusion_accumulate: label out of range for " +
                                  std::to_string(k) + " classes");
    }
    ++acc.at(g, p);
  }
}

PerClassMetric miou(const ConfusionMatrix& acc) {
  const int k = acc.num_classes();
  PerClassMetric out;
  out.per_class.resize(static_cast<std::size_t>(k));
  double sum = 0.0;
  int defined = 0;
  for (int z = 0; z < k; ++z) {
    const std::int64_t tp = acc.at(z, z);
    std::int64_t fn = 0, fp = 0;
    for (int j = 0; j < k; ++j) {
      if (j != z) {
        fn += acc.at(z, j);
        fp += acc.at(j, z);
      }
    }
    const std::int64_t denom = tp + fn + fp;
    if (denom > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(denom);
      out.per_class[static_cast<std::size_t>(z)] = iou;
      sum += iou;
      ++defined;
    }
  }
  if (defined > 0) out.mean = sum / defined;
  return out;
}

PerClassMetric iiou(const LabelMap& pred, const LabelMap& gt, const InstanceMap& instances,
                    int num_classes, std::uint16_t ignore_label) {
  if (!pred.same_size(gt) || !instances.same_size(gt)) {
    throw std::invalid_argument("iiou: map dimensions differ");
  }
  // Instance inventory: size and class per id, consistency enforced.
  std::map<std::uint16_t, std::int64_t> instance_size;
  std::map<std::uint16_t, std::uint16_t> instance_class;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint16_t inst = instances.data()[i];
    if (inst == 0) continue;
    const std::uint16_t g = gt.data()[i];
    if (g == ignore_label) continue;
    auto [it, inserted] = instance_class.try_emplace(inst, g);
    if (!inserted && it->second != g) {
      throw std::invalid_argument("iiou: instance " + std::to_string(inst) +
                                  " spans classes " + std::to_string(it->second) + " and " +
                                  std::to_string(g));
    }
    ++instance_size[inst];
  }
  // Class-average instance size.
  std::vector<double> class_total(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> class_instances(static_cast<std::size_t>(num_classes), 0);
  for (const auto& [inst, size] : instance_size) {
    const std::uint16_t z = instance_class[inst];
    if (z < num_classes) {
      class_total[z] += static_cast<double>(size);
      ++class_instances[z];
    }
  }
  auto pixel_weight = [&](std::size_t i, std::uint16_t g) -> double {
    const std::uint16_t inst = instances.data()[i];
    if (inst == 0) return 1.0;
    const double avg = class_total[g] / class_instances[g];
    return avg / static_cast<double>(instance_size[inst]);
  };

  std::vector<double> itp(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> ifn(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<std::int64_t> fp(static_cast<std::size_t>(num_classes), 0);
  bool any = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint16_t g = gt.data()[i];
    if (g == ignore_label) continue;
    const std::uint16_t p = pred.data()[i];
    if (g >= num_classes || p >= num_classes) {
      throw std::invalid_argument("iiou: label out of range");
    }
    any = true;
    if (p == g) {
      itp[g] += pixel_weight(i, g);
    } else {
      ifn[g] += pixel_weight(i, g);
      ++fp[p];
    }
  }
  (void)any;

  PerClassMetric out;
  out.per_class.resize(static_cast<std::size_t>(num_classes));
  double sum = 0.0;
  int defined = 0;
  for (int z = 0; z < num_classes; ++z) {
    const double denom = itp[z] + ifn[z] + static_cast<double>(fp[z]);
    if (denom > 0.0) {
      const double v = itp[z] / denom;
      out.per_class[static_cast<std::size_t>(z)] = v;
      sum += v;
      ++defined;
    }
  }
  if (defined > 0) out.mean = sum / defined;
  return out;
}

PerClassMetric ia_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                      const std::vector<InvalidMask>& masks, int num_classes,
                      std::uint16_t ignore_label) {
  if (preds.size() != gts.size() || masks.size() != gts.size()) {
    throw std::invalid_argument("ia_iou: image set sizes differ");
  }
  std::vector<std::int64_t> inter(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> uni(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t n = 0; n < gts.size(); ++n) {
    const LabelMap& pred = preds[n];
    const LabelMap& gt = gts[n];
    const InvalidMask& mask = masks[n];
    if (!pred.same_size(gt) || !mask.same_size(gt)) {
      throw std::invalid_argument("ia_iou: misaligned maps in image " + std::to_string(n));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!mask.data()[i]) continue;
      const std::uint16_t g = gt.data()[i];
      if (g == ignore_label) continue;
      const std::uint16_t p = pred.data()[i];
      if (g >= num_classes || p >= num_classes) {
        throw std::invalid_argument("ia_iou: label out of range");
      }
      if (p == g) {
        ++inter[g];
        ++uni[g];
      } else {
        ++uni[g];
        ++uni[p];
      }
    }
  }
  PerClassMetric out;
  out.per_class.resize(static_cast<std::size_t>(num_classes));
  double sum = 0.0;
  int defined = 0;
  for (int z = 0; z < num_classes; ++z) {
    if (uni[z] > 0) {
      const double v = static_cast<double>(inter[z]) / static_cast<double>(uni[z]);
      out.per_class[static_cast<std::size_t>(z)] = v;
      sum += v;
      ++defined;
    }
  }
  if (defined > 0) out.mean = sum / defined;
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (int z = 0; z < num_classes; ++z) {
    nlohmann::ordered_json entry = nlohmann::ordered_json::object();
    const std::size_t zi = static_cast<std::size_t>(z);
    if (zi < iou.per_class.size() && iou.per_class[zi]) entry["iou"] = *iou.per_class[zi];
    if (iiou && zi < iiou->per_class.size() && iiou->per_class[zi]) {
      entry["iiou"] = *iiou->per_class[zi];
    }
    if (ia_iou && zi < ia_iou->per_class.size() && ia_iou->per_class[zi]) {
      entry["ia_iou"] = *ia_iou->per_class[zi];
    }
    per_class["class_" + std::to_string(z)] = entry;
  }
  j["per_class"] = per_class;
  if (iou.mean) j["miou"] = *iou.mean;
  if (iiou && iiou->mean) j["miiou"] = *iiou->mean;
  if (ia_iou && ia_iou->mean) j["mia_iou"] = *ia_iou->mean;
  j["pixels_evaluated"] = pixels_evaluated;
  return j.dump(2) + "\n";
}

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 3) {
    throw std::invalid_argument("argmax_labels: expected K x H x W logits, got " +
                                logits.shape_string());
  }
  const int k = logits.extent(0), h = logits.extent(1), w = logits.extent(2);
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      float best_v = logits.at(0, y, x);
      for (int z = 1; z < k; ++z) {
        const float v = logits.at(z, y, x);
        if (v > best_v) {
          best_v = v;
          best = z;
        }
      }
      out.at(y, x) = static_cast<std::uint16_t>(best);
    }
  }
  return out;
}

}  // namespace vpseg
