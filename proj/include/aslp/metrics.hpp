#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aslp/errors.hpp"
#include "aslp/grid.hpp"

namespace aslp {

/// Winning-class probability of one pixel and whether the winning class is right.
struct ConfidenceRecord {
  double confidence = 0.5;
  bool correct = false;

  friend bool operator==(const ConfidenceRecord&, const ConfidenceRecord&) = default;
};

struct BinStats {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
  /// Boundaries are meaningful for equal-width bins only.
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr std::size_t kDefaultBins = 10;
inline constexpr std::size_t kSweepMaxBins = 100;
inline constexpr std::size_t kThresholdCount = 256;
inline constexpr double kFBetaSquared = 0.3;

inline bool predicted_foreground(double f) { return f > 0.5; }

inline LabelMap predict_label(const ProbabilityMap& pred) {
  LabelMap out(pred.height(), pred.width());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = predicted_foreground(pred[i]) ? 1.0 : 0.0;
  return out;
}

inline ConfidenceRecord winning_class(double f, double y) {
  const bool fg = predicted_foreground(f);
  return {std::abs(f - 0.5) + 0.5, fg == (y > 0.5)};
}

inline void append_records(const ProbabilityMap& pred, const LabelMap& gt,
                           std::vector<ConfidenceRecord>& out) {
  require_same_shape(pred, gt, "winning_class");
  out.reserve(out.size() + pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.push_back(winning_class(pred[i], gt[i]));
}

inline std::vector<ConfidenceRecord> winning_class(const ProbabilityMap& pred, const LabelMap& gt) {
  std::vector<ConfidenceRecord> out;
  append_records(pred, gt, out);
  return out;
}

namespace detail {

inline void finish_bin(BinStats& b, double conf_sum, std::size_t correct) {
  if (b.count == 0) return;
  b.mean_confidence = conf_sum / static_cast<double>(b.count);
  b.mean_accuracy = static_cast<double>(correct) / static_cast<double>(b.count);
}

/// Index i with i/B <= x < (i+1)/B, the last bin closed at 1.
inline std::size_t equal_width_index(double x, std::size_t bins) {
  const auto b = static_cast<double>(bins);
  if (!(x > 0.0)) return 0;
  if (x >= 1.0) return bins - 1;
  auto i = static_cast<std::size_t>(std::floor(x * b));
  if (i >= bins) i = bins - 1;
  if (i > 0 && x < static_cast<double>(i) / b) --i;
  if (i + 1 < bins && x >= static_cast<double>(i + 1) / b) ++i;
  return i;
}

/// Stable ascending order of records by confidence.
inline std::vector<std::size_t> confidence_order(std::span<const ConfidenceRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].confidence < records[b].confidence;
  });
  return order;
}

/// Prefix sums over records in confidence order, so that any contiguous
/// equal-mass bin can be summarised in O(1).
struct SortedPrefix {
  std::vector<double> conf;
  std::vector<std::size_t> correct;

  explicit SortedPrefix(std::span<const ConfidenceRecord> records) {
    const auto order = confidence_order(records);
    conf.assign(records.size() + 1, 0.0);
    correct.assign(records.size() + 1, 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& r = records[order[k]];
      conf[k + 1] = conf[k] + r.confidence;
      correct[k + 1] = correct[k] + (r.correct ? 1 : 0);
    }
  }

  std::size_t size() const { return conf.size() - 1; }

  std::vector<BinStats> bins(std::size_t count) const {
    const std::size_t n = size();
    std::vector<BinStats> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t begin = i * n / count;
      const std::size_t end = (i + 1) * n / count;
      out[i].count = end - begin;
      detail::finish_bin(out[i], conf[end] - conf[begin], correct[end] - correct[begin]);
    }
    return out;
  }
};

}  // namespace detail

/// Bins [i/B, (i+1)/B) over [0,1], the top bin closed.
inline std::vector<BinStats> bin_equal_width(std::span<const ConfidenceRecord> records,
                                             std::size_t bins) {
  if (bins == 0) throw DomainError("bin_equal_width: need at least one bin");
  std::vector<BinStats> out(bins);
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<std::size_t> correct(bins, 0);
  for (const auto& r : records) {
    const std::size_t i = detail::equal_width_index(r.confidence, bins);
    out[i].count += 1;
    conf_sum[i] += r.confidence;
    correct[i] += r.correct ? 1 : 0;
  }
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lo = static_cast<double>(i) / static_cast<double>(bins);
    out[i].hi = static_cast<double>(i + 1) / static_cast<double>(bins);
    detail::finish_bin(out[i], conf_sum[i], correct[i]);
  }
  return out;
}

/// Sorts by confidence (ties by record index) and gives bin i the sorted
/// positions [floor(iN/B), floor((i+1)N/B)).
inline std::vector<BinStats> bin_equal_mass(std::span<const ConfidenceRecord> records,
                                            std::size_t bins) {
  if (bins == 0) throw DomainError("bin_equal_mass: need at least one bin");
  if (bins > records.size()) {
    throw DomainError("bin_equal_mass: " + std::to_string(bins) + " bins for " +
                      std::to_string(records.size()) + " records");
  }
  return detail::SortedPrefix(records).bins(bins);
}

inline std::size_t total_count(std::span<const BinStats> bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

/// Count-weighted mean |C_i - A_i|.
inline double ece(std::span<const BinStats> bins) {
  const std::size_t n = total_count(bins);
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    sum += static_cast<double>(b.count) * std::abs(b.mean_confidence - b.mean_accuracy);
  }
  return sum / static_cast<double>(n);
}

/// ece restricted to bins where confidence exceeds accuracy.
inline double oe(std::span<const BinStats> bins) {
  const std::size_t n = total_count(bins);
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0 || !(b.mean_confidence > b.mean_accuracy)) continue;
    sum += static_cast<double>(b.count) * (b.mean_confidence - b.mean_accuracy);
  }
  return sum / static_cast<double>(n);
}

/// Bias-corrected squared calibration error over equal-width bins.
/// Bins holding fewer than two records are skipped and excluded from the
/// normaliser. The result may be negative.
inline double ece_debias(std::span<const BinStats> bins) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& b : bins) {
    if (b.count < 2) continue;
    const double gap = b.mean_confidence - b.mean_accuracy;
    const double a = b.mean_accuracy;
    const auto c = static_cast<double>(b.count);
    sum += c * (gap * gap - a * (1.0 - a) / (c - 1.0));
    n += b.count;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

struct SweepResult {
  double value = 0.0;
  std::size_t bins = 1;
  /// Over-confidence error at the selected bin count.
  double oe = 0.0;
};

/// Largest equal-mass bin count b* <= min(n_max, N) such that every count up
/// to b* yields non-decreasing bin accuracy; returns the L^p calibration
/// error at b*.
inline SweepResult ece_sweep(std::span<const ConfidenceRecord> records,
                             std::size_t n_max = kSweepMaxBins, double p = 1.0) {
  if (records.empty()) throw DomainError("ece_sweep: no records");
  if (n_max == 0) throw DomainError("ece_sweep: n_max must be at least 1");
  if (!(p > 0.0)) throw DomainError("ece_sweep: p must be positive");
  const detail::SortedPrefix prefix(records);
  const std::size_t limit = std::min(n_max, records.size());
  std::size_t best = 1;
  for (std::size_t b = 2; b <= limit; ++b) {
    const auto bins = prefix.bins(b);
    bool monotone = true;
    for (std::size_t i = 1; i < bins.size() && monotone; ++i) {
      monotone = bins[i - 1].mean_accuracy <= bins[i].mean_accuracy;
    }
    if (!monotone) break;
    best = b;
  }
  const auto bins = prefix.bins(best);
  const auto n = static_cast<double>(records.size());
  double sum = 0.0;
  for (const auto& b : bins) {
    sum += static_cast<double>(b.count) / n * std::pow(std::abs(b.mean_confidence - b.mean_accuracy), p);
  }
  return {std::pow(sum, 1.0 / p), best, oe(bins)};
}

/// Fraction of pixels whose predicted label matches the ground truth.
inline double accuracy(std::span<const ConfidenceRecord> records) {
  if (records.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : records) correct += r.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

inline double accuracy(std::span<const ProbabilityMap> preds, std::span<const LabelMap> gts) {
  if (preds.size() != gts.size()) throw ShapeError("accuracy: map count mismatch");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    require_same_shape(preds[k], gts[k], "accuracy");
    for (std::size_t i = 0; i < preds[k].size(); ++i) {
      correct += predicted_foreground(preds[k][i]) == (gts[k][i] > 0.5) ? 1 : 0;
    }
    total += preds[k].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Threshold k of the binarisation sweep, k / (count - 1).
inline double threshold_value(std::size_t k, std::size_t count = kThresholdCount) {
  return static_cast<double>(k) / static_cast<double>(count - 1);
}

namespace detail {

/// Number of thresholds t_k with t_k <= f.
inline std::size_t thresholds_at_or_below(double f, std::size_t count) {
  if (f < 0.0) return 0;
  const double scale = static_cast<double>(count - 1);
  auto k = static_cast<std::size_t>(std::min(std::floor(f * scale), scale));
  while (k > 0 && threshold_value(k, count) > f) --k;
  while (k + 1 < count && threshold_value(k + 1, count) <= f) ++k;
  return k + 1;
}

}  // namespace detail

/// Pooled maximum F-measure over thresholds; a pixel is foreground at
/// threshold t when f >= t. Thresholds with no predicted foreground are
/// skipped.
inline double f_measure_max(std::span<const ProbabilityMap> preds, std::span<const LabelMap> gts,
                            std::size_t thresholds = kThresholdCount) {
  if (preds.size() != gts.size()) throw ShapeError("f_measure_max: map count mismatch");
  if (thresholds < 2) throw DomainError("f_measure_max: need at least two thresholds");
  // Histograms indexed by how many thresholds a pixel's prediction clears.
  std::vector<std::uint64_t> fg_hist(thresholds + 1, 0), bg_hist(thresholds + 1, 0);
  std::uint64_t positives = 0;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    require_same_shape(preds[m], gts[m], "f_measure_max");
    for (std::size_t i = 0; i < preds[m].size(); ++i) {
      const std::size_t cleared = detail::thresholds_at_or_below(preds[m][i], thresholds);
      if (gts[m][i] > 0.5) {
        ++fg_hist[cleared];
        ++positives;
      } else {
        ++bg_hist[cleared];
      }
    }
  }
  if (positives == 0) throw DomainError("f_measure_max: ground truth has no foreground, recall undefined");
  double best = 0.0;
  std::uint64_t tp = 0, fp = 0;
  // Walk thresholds from the highest down; pixels clearing more than k
  // thresholds are predicted foreground at threshold index k.
  for (std::size_t k = thresholds; k-- > 0;) {
    tp += fg_hist[k + 1];
    fp += bg_hist[k + 1];
    if (tp + fp == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double denom = kFBetaSquared * precision + recall;
    if (denom <= 0.0) continue;
    best = std::max(best, (1.0 + kFBetaSquared) * precision * recall / denom);
  }
  return best;
}

/// Enhanced-alignment score of one binary prediction against binary ground
/// truth. Pixels where both bias-removed maps vanish get alignment 0.
inline double e_measure(std::span<const double> fm, std::span<const double> gt) {
  if (fm.size() != gt.size()) throw ShapeError("e_measure: size mismatch");
  if (fm.empty()) return 0.0;
  const auto n = static_cast<double>(fm.size());
  const double mu_fm = std::accumulate(fm.begin(), fm.end(), 0.0) / n;
  const double mu_gt = std::accumulate(gt.begin(), gt.end(), 0.0) / n;
  double sum = 0.0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    const double a = gt[i] - mu_gt;
    const double b = fm[i] - mu_fm;
    const double denom = a * a + b * b;
    const double align = denom > 0.0 ? 2.0 * a * b / denom : 0.0;
    sum += 0.25 * (1.0 + align) * (1.0 + align);
  }
  return sum / n;
}

/// Per threshold, mean E-measure over images; returns the best threshold's value.
inline double e_measure_max(std::span<const ProbabilityMap> preds, std::span<const LabelMap> gts,
                            std::size_t thresholds = kThresholdCount) {
  if (preds.size() != gts.size()) throw ShapeError("e_measure_max: map count mismatch");
  if (thresholds < 2) throw DomainError("e_measure_max: need at least two thresholds");
  if (preds.empty()) return 0.0;
  std::vector<double> per_threshold(thresholds, 0.0);
  std::vector<double> binary, gt_bin;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    require_same_shape(preds[m], gts[m], "e_measure_max");
    const auto& pred = preds[m];
    gt_bin.resize(pred.size());
    binary.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) gt_bin[i] = gts[m][i] > 0.5 ? 1.0 : 0.0;
    for (std::size_t k = 0; k < thresholds; ++k) {
      const double t = threshold_value(k, thresholds);
      for (std::size_t i = 0; i < pred.size(); ++i) binary[i] = pred[i] >= t ? 1.0 : 0.0;
      per_threshold[k] += e_measure(binary, gt_bin);
    }
  }
  double best = 0.0;
  for (double v : per_threshold) best = std::max(best, v / static_cast<double>(preds.size()));
  return best;
}

/// Formats a real with nine significant digits.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline constexpr const char* kReliabilityHeader = "bin_lo,bin_hi,count,mean_conf,mean_acc,gap";

/// One CSV row per bin; empty bins leave the confidence, accuracy and gap
/// fields blank.
inline std::vector<std::string> reliability_export(std::span<const BinStats> bins) {
  std::vector<std::string> rows;
  rows.reserve(bins.size());
  for (const auto& b : bins) {
    std::string row = format_real(b.lo) + "," + format_real(b.hi) + "," + std::to_string(b.count) + ",";
    if (b.count > 0) {
      row += format_real(b.mean_confidence) + "," + format_real(b.mean_accuracy) + "," +
             format_real(b.mean_confidence - b.mean_accuracy);
    } else {
      row += ",,";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Count grid over (mean confidence, mean accuracy) of per-image bins;
/// rows index confidence cells over [0.5,1], columns accuracy cells over [0,1].
struct JointHistogram {
  std::size_t conf_bins = 0;
  std::size_t acc_bins = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t conf, std::size_t acc) const { return counts[conf * acc_bins + acc]; }

  std::uint64_t total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }

  std::vector<std::string> csv_rows() const {
    std::vector<std::string> rows;
    for (std::size_t c = 0; c < conf_bins; ++c) {
      for (std::size_t a = 0; a < acc_bins; ++a) {
        rows.push_back(std::to_string(c) + "," + std::to_string(a) + "," + std::to_string(at(c, a)));
      }
    }
    return rows;
  }
};

inline constexpr const char* kJointHeader = "conf_bin,acc_bin,count";

/// For every image, bins its records into conf_bins equal-width bins over
/// [0.5,1] and adds each non-empty bin's count at its (C, A) cell.
inline JointHistogram joint_histogram(std::span<const std::vector<ConfidenceRecord>> per_image,
                                      std::size_t conf_bins, std::size_t acc_bins) {
  if (conf_bins == 0 || acc_bins == 0) throw DomainError("joint_histogram: need at least one bin");
  JointHistogram h{conf_bins, acc_bins, std::vector<std::uint64_t>(conf_bins * acc_bins, 0)};
  auto conf_cell = [&](double c) {
    return detail::equal_width_index(std::clamp((c - 0.5) * 2.0, 0.0, 1.0), conf_bins);
  };
  for (const auto& records : per_image) {
    std::vector<std::size_t> count(conf_bins, 0), correct(conf_bins, 0);
    std::vector<double> conf_sum(conf_bins, 0.0);
    for (const auto& r : records) {
      const std::size_t i = conf_cell(r.confidence);
      ++count[i];
      correct[i] += r.correct ? 1 : 0;
      conf_sum[i] += r.confidence;
    }
    for (std::size_t i = 0; i < conf_bins; ++i) {
      if (count[i] == 0) continue;
      const double c = conf_sum[i] / static_cast<double>(count[i]);
      const double a = static_cast<double>(correct[i]) / static_cast<double>(count[i]);
      h.counts[conf_cell(c) * acc_bins + detail::equal_width_index(a, acc_bins)] += count[i];
    }
  }
  return h;
}

}  // namespace aslp
