#pragma once

#include <span>
#include <string>
#include <vector>

#include "hsl/mask.hpp"

namespace hsl {

// The six evaluation numbers plus the raw counts backing them, so reports
// can be micro-aggregated across images.
struct MetricsReport {
  double pixel_iou = 0, pixel_rec = 0, pixel_pre = 0;
  double lesion_iou = 0, lesion_rec = 0, lesion_pre = 0;

  long long pixel_tp = 0, pixel_fp = 0, pixel_fn = 0;
  long long lesion_n_true = 0, lesion_n_pred = 0;
  long long lesion_n_matched_true = 0, lesion_n_matched_pred = 0;

  // Recomputes the six fractions from the counts. Empty-denominator
  // convention: 1.0 when both sides are empty, 0.0 when exactly one is.
  static MetricsReport from_counts(long long tp, long long fp, long long fn,
                                   long long n_true, long long n_pred,
                                   long long n_matched_true, long long n_matched_pred);

  static std::string csv_header();
  std::string csv_row() const;
  std::string to_json() const;
};

struct PixelTriple {
  double iou = 0, rec = 0, pre = 0;
};

PixelTriple pixel_metrics(const LabelMask& pred, const LabelMask& truth);
PixelTriple lesion_metrics(const LabelMask& pred, const LabelMask& truth,
                           int connectivity = 8, const MatchRule& rule = {});

MetricsReport compute_metrics(const LabelMask& pred, const LabelMask& truth,
                              int connectivity = 8, const MatchRule& rule = {});

// Micro-aggregation: counts are summed across images and the fractions are
// recomputed from the sums.
MetricsReport aggregate(std::span<const MetricsReport> reports);

// Per-image fraction averaging, kept behind its own entry point for
// sensitivity checks.
MetricsReport aggregate_macro(std::span<const MetricsReport> reports);

}  // namespace hsl
