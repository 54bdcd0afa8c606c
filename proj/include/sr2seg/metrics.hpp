#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/image.hpp"

namespace sr2seg {

/// PSNR in dB, or the "identical" marker when MSE is zero.
struct Psnr {
  bool identical = false;
  double db = 0.0;

  std::string str() const;
  friend bool operator==(const Psnr&, const Psnr&) = default;
};

inline std::string Psnr::str() const {
  if (identical) return "identical";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", db);
  return buf;
}

/// 10 log10(max^2 / MSE), MSE taken jointly over every pixel of every band.
inline Psnr psnr(const Tensor<double>& pred, const Tensor<double>& target, double max_value = 255.0) {
  pred.require_same_shape(target, "psnr");
  if (pred.numel() == 0) throw std::invalid_argument("psnr: empty images");
  double se = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
  }
  if (se == 0.0) return {true, 0.0};
  const double mse = se / static_cast<double>(pred.numel());
  return {false, 10.0 * std::log10(max_value * max_value / mse)};
}

inline Psnr psnr(const RasterImage& pred, const RasterImage& target, double max_value = 255.0) {
  return psnr(pred.tensor(), target.tensor(), max_value);
}

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {
    if (k == 0) throw std::invalid_argument("confusion matrix needs K >= 1");
  }

  std::size_t num_classes() const { return k_; }
  std::uint64_t& at(std::size_t t, std::size_t p) { return counts_[t * k_ + p]; }
  std::uint64_t at(std::size_t t, std::size_t p) const { return counts_[t * k_ + p]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t row_sum(std::size_t t) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(t, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t p) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += at(t, p);
    return s;
  }

  /// Tallies one (pred, truth) pair of label rasters. Pixels whose true id
  /// is excluded are skipped; any other id outside [0, K) is rejected.
  void accumulate(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth,
                  const std::set<std::int32_t>& excluded) {
    if (pred.size() != truth.size())
      throw std::invalid_argument("accumulate_confusion: prediction and truth sizes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const std::int32_t t = truth[i];
      if (excluded.count(t)) continue;
      const std::int32_t p = pred[i];
      if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k_ || static_cast<std::size_t>(p) >= k_)
        throw std::invalid_argument("accumulate_confusion: label id outside [0, " + std::to_string(k_) + ")");
      ++at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw std::invalid_argument("confusion matrix merge: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  ConfusionMatrix transposed() const {
    ConfusionMatrix t(k_);
    for (std::size_t i = 0; i < k_; ++i)
      for (std::size_t j = 0; j < k_; ++j) t.at(j, i) = at(i, j);
    return t;
  }

  const std::vector<std::uint64_t>& counts() const { return counts_; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix accumulate_confusion(ConfusionMatrix cm, const std::vector<std::int32_t>& pred,
                                            const std::vector<std::int32_t>& truth,
                                            const std::set<std::int32_t>& excluded) {
  cm.accumulate(pred, truth, excluded);
  return cm;
}

struct SegMetrics {
  double acc = 0;
  double norm_acc = 0;  // macro-averaged recall over classes present in truth
  double miou = 0;
  std::optional<double> kappa;  // undefined when chance agreement is 1
  std::vector<std::optional<double>> recall;
  std::vector<std::optional<double>> iou;
};

inline SegMetrics compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
  const double n = static_cast<double>(total);
  SegMetrics m;
  m.recall.resize(k);
  m.iou.resize(k);
  double trace = 0, pe = 0, recall_sum = 0, iou_sum = 0;
  std::size_t recall_n = 0, iou_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double rs = static_cast<double>(cm.row_sum(c)), cs = static_cast<double>(cm.col_sum(c));
    trace += tp;
    pe += rs * cs;
    if (rs > 0) {
      m.recall[c] = tp / rs;
      recall_sum += *m.recall[c];
      ++recall_n;
    }
    const double denom = rs + cs - tp;
    if (denom > 0) {
      m.iou[c] = tp / denom;
      iou_sum += *m.iou[c];
      ++iou_n;
    }
  }
  m.acc = trace / n;
  m.norm_acc = recall_n ? recall_sum / static_cast<double>(recall_n) : 0.0;
  m.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  pe /= n * n;
  if (pe < 1.0) m.kappa = (m.acc - pe) / (1.0 - pe);
  return m;
}

/// Everything one evaluation produces.
struct MetricsReport {
  std::string dataset;
  int degradation = 4;
  std::string method;             // "LR", "End-to-end" or "HR"
  std::optional<Psnr> psnr;       // absent when not applicable (HR input)
  SegMetrics seg;
  ConfusionMatrix confusion;
  std::vector<std::string> class_names;
  std::set<std::int32_t> excluded_classes;
  std::map<std::string, std::string> metadata;
};

}  // namespace sr2seg
