#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "haris/tensor.hpp"

namespace haris {

struct BinaryMask {
  int height = 0, width = 0;
  std::vector<std::uint8_t> v;  // 0 or 1, row-major

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), v(std::size_t(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return v[std::size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return v[std::size_t(y) * width + x]; }
  int count() const;
  bool same_shape(const BinaryMask& o) const {
    return height == o.height && width == o.width;
  }
};

// Focal loss, mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t), with
// alpha on positives and (1 - alpha) on negatives; log clamped at 1e-12.
Tensor focal_loss(Tape& t, const Tensor& logits, const BinaryMask& target,
                  double gamma, double alpha);

// 1 - (2 sum(p*t) + eps) / (sum(p) + sum(t) + eps), eps = 1.
Tensor dice_loss(Tape& t, const Tensor& logits, const BinaryMask& target);

struct LossBreakdown {
  double focal = 0, dice = 0, total = 0;
  Tensor total_node;  // scalar on the tape, drives backward()
};

LossBreakdown segmentation_loss(Tape& t, const Tensor& logits,
                                const BinaryMask& target, double gamma,
                                double alpha);

// |a & b| / |a | b|; both masks empty counts as 1.
double iou(const BinaryMask& a, const BinaryMask& b);

// Threshold at logit 0 (probability one half); exact zero is positive.
BinaryMask binarize(const Tensor& logits, int height, int width);

struct MetricsReport {
  int n_samples = 0;
  double mean_iou = 0, cumulative_iou = 0;
  double pr70 = 0, pr80 = 0, pr90 = 0;
};

// mean of per-sample IoUs, ratio of summed intersections/unions, and the
// fraction of samples with IoU strictly above each threshold.
MetricsReport aggregate_metrics(
    const std::vector<std::pair<BinaryMask, BinaryMask>>& samples);

inline constexpr const char* kMetricsCsvColumns =
    "n_samples,mean_iou,cumulative_iou,pr70,pr80,pr90";

// fixed column order, 6-decimal fixed point
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace haris
