#include "haris/loss_metrics.hpp"

#include <cstdio>

namespace haris {

namespace {

constexpr double kDiceEps = 1.0;
constexpr double kLogFloor = 1e-12;

void require_target(const Tensor& logits, const BinaryMask& target,
                    const char* op) {
  if (logits.numel() != std::int64_t(target.height) * target.width)
    throw DimensionError(std::string(op) + ": logits " + logits.shape_str() +
                         " do not match mask " + std::to_string(target.height) +
                         "x" + std::to_string(target.width));
  for (std::uint8_t b : target.v)
    if (b > 1) throw ContractError(std::string(op) + ": target is not binary");
}

// positives as an N-by-1 constant aligned with flattened logits
Tensor target_column(const BinaryMask& target) {
  Tensor t({int(target.v.size()), 1});
  for (std::size_t i = 0; i < target.v.size(); ++i) t.data[i] = target.v[i];
  return t;
}

}  // namespace

int BinaryMask::count() const {
  int n = 0;
  for (std::uint8_t b : v) n += b;
  return n;
}

Tensor focal_loss(Tape& t, const Tensor& logits, const BinaryMask& target,
                  double gamma, double alpha) {
  require_target(logits, target, "focal_loss");
  Tensor flat = logits.shape == std::vector<int>{int(logits.numel()), 1}
                    ? logits
                    : t.reshape(logits, {int(logits.numel()), 1});
  Tensor pos = target_column(target);
  Tensor neg({pos.shape});
  for (std::size_t i = 0; i < neg.data.size(); ++i)
    neg.data[i] = 1.0 - pos.data[i];

  Tensor p = t.sigmoid(flat);
  Tensor one_m_p = t.rsub_scalar(1.0, p);
  Tensor pos_term = t.mul(pos, t.mul(t.pow_scalar(one_m_p, gamma),
                                     t.log_clamped(p, kLogFloor)));
  Tensor neg_term = t.mul(neg, t.mul(t.pow_scalar(p, gamma),
                                     t.log_clamped(one_m_p, kLogFloor)));
  Tensor combined =
      t.add(t.scale(pos_term, -alpha), t.scale(neg_term, -(1.0 - alpha)));
  return t.mean_all(combined);
}

Tensor dice_loss(Tape& t, const Tensor& logits, const BinaryMask& target) {
  require_target(logits, target, "dice_loss");
  Tensor flat = logits.shape == std::vector<int>{int(logits.numel()), 1}
                    ? logits
                    : t.reshape(logits, {int(logits.numel()), 1});
  Tensor pos = target_column(target);
  Tensor p = t.sigmoid(flat);
  Tensor inter = t.sum_all(t.mul(p, pos));
  Tensor sum_p = t.sum_all(p);
  const double sum_t = double(target.count());
  Tensor num = t.add_scalar(t.scale(inter, 2.0), kDiceEps);
  Tensor den = t.add_scalar(sum_p, sum_t + kDiceEps);
  return t.rsub_scalar(1.0, t.mul(num, t.pow_scalar(den, -1.0)));
}

LossBreakdown segmentation_loss(Tape& t, const Tensor& logits,
                                const BinaryMask& target, double gamma,
                                double alpha) {
  LossBreakdown out;
  Tensor f = focal_loss(t, logits, target, gamma, alpha);
  Tensor d = dice_loss(t, logits, target);
  out.total_node = t.add(f, d);
  out.focal = f.value();
  out.dice = d.value();
  out.total = out.total_node.value();
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b))
    throw DimensionError("iou: mask shapes disagree " +
                         std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" +
                         std::to_string(b.width));
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    inter += a.v[i] & b.v[i];
    uni += a.v[i] | b.v[i];
  }
  if (uni == 0) return 1.0;  // both empty
  return double(inter) / double(uni);
}

BinaryMask binarize(const Tensor& logits, int height, int width) {
  if (logits.numel() != std::int64_t(height) * width)
    throw DimensionError("binarize: logits " + logits.shape_str() +
                         " do not fill " + std::to_string(height) + "x" +
                         std::to_string(width));
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = logits.data[i] >= 0.0 ? 1 : 0;
  return m;
}

MetricsReport aggregate_metrics(
    const std::vector<std::pair<BinaryMask, BinaryMask>>& samples) {
  if (samples.empty())
    throw ContractError("aggregate_metrics: empty sample list");
  MetricsReport r;
  r.n_samples = int(samples.size());
  long long total_inter = 0, total_union = 0;
  int n70 = 0, n80 = 0, n90 = 0;
  double iou_sum = 0.0;
  for (const auto& [pred, gt] : samples) {
    const double v = iou(pred, gt);
    iou_sum += v;
    if (v > 0.70) ++n70;
    if (v > 0.80) ++n80;
    if (v > 0.90) ++n90;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      total_inter += pred.v[i] & gt.v[i];
      total_union += pred.v[i] | gt.v[i];
    }
  }
  r.mean_iou = iou_sum / double(r.n_samples);
  r.cumulative_iou =
      total_union == 0 ? 1.0 : double(total_inter) / double(total_union);
  r.pr70 = double(n70) / double(r.n_samples);
  r.pr80 = double(n80) / double(r.n_samples);
  r.pr90 = double(n90) / double(r.n_samples);
  return r;
}

std::string metrics_csv_row(const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f", r.n_samples,
                r.mean_iou, r.cumulative_iou, r.pr70, r.pr80, r.pr90);
  return buf;
}

}  // namespace haris
