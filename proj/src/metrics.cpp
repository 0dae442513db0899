#include "hsl/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "json.hpp"

namespace hsl {

namespace {

double ratio(long long num, long long den, bool both_empty) {
  if (den == 0) return both_empty ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

MetricsReport MetricsReport::from_counts(long long tp, long long fp, long long fn,
                                         long long n_true, long long n_pred,
                                         long long n_matched_true, long long n_matched_pred) {
  MetricsReport r;
  r.pixel_tp = tp;
  r.pixel_fp = fp;
  r.pixel_fn = fn;
  r.lesion_n_true = n_true;
  r.lesion_n_pred = n_pred;
  r.lesion_n_matched_true = n_matched_true;
  r.lesion_n_matched_pred = n_matched_pred;

  const bool px_both_empty = (tp + fn == 0) && (tp + fp == 0);
  r.pixel_iou = ratio(tp, tp + fp + fn, px_both_empty);
  r.pixel_rec = ratio(tp, tp + fn, px_both_empty);
  r.pixel_pre = ratio(tp, tp + fp, px_both_empty);

  const bool ls_both_empty = (n_true == 0) && (n_pred == 0);
  // min of the two directional matched counts keeps iou <= min(rec, pre).
  const long long m = std::min(n_matched_true, n_matched_pred);
  r.lesion_iou = ratio(m, n_true + n_pred - m, ls_both_empty);
  r.lesion_rec = ratio(n_matched_true, n_true, ls_both_empty);
  r.lesion_pre = ratio(n_matched_pred, n_pred, ls_both_empty);
  return r;
}

std::string MetricsReport::csv_header() {
  return "pixel_iou,pixel_rec,pixel_pre,lesion_iou,lesion_rec,lesion_pre,"
         "pixel_tp,pixel_fp,pixel_fn,lesion_n_true,lesion_n_pred,"
         "lesion_n_matched_true,lesion_n_matched_pred";
}

std::string MetricsReport::csv_row() const {
  std::string s;
  s += fmt(pixel_iou) + "," + fmt(pixel_rec) + "," + fmt(pixel_pre) + ",";
  s += fmt(lesion_iou) + "," + fmt(lesion_rec) + "," + fmt(lesion_pre) + ",";
  s += std::to_string(pixel_tp) + "," + std::to_string(pixel_fp) + "," + std::to_string(pixel_fn) + ",";
  s += std::to_string(lesion_n_true) + "," + std::to_string(lesion_n_pred) + ",";
  s += std::to_string(lesion_n_matched_true) + "," + std::to_string(lesion_n_matched_pred);
  return s;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["pixel_iou"] = pixel_iou;
  j["pixel_rec"] = pixel_rec;
  j["pixel_pre"] = pixel_pre;
  j["lesion_iou"] = lesion_iou;
  j["lesion_rec"] = lesion_rec;
  j["lesion_pre"] = lesion_pre;
  j["pixel_tp"] = pixel_tp;
  j["pixel_fp"] = pixel_fp;
  j["pixel_fn"] = pixel_fn;
  j["lesion_n_true"] = lesion_n_true;
  j["lesion_n_pred"] = lesion_n_pred;
  j["lesion_n_matched_true"] = lesion_n_matched_true;
  j["lesion_n_matched_pred"] = lesion_n_matched_pred;
  return j.dump();
}

MetricsReport compute_metrics(const LabelMask& pred, const LabelMask& truth,
                              int connectivity, const MatchRule& rule) {
  if (!pred.same_dims(truth))
    throw ContractError("compute_metrics: mask dimensions disagree");
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0, t = truth.bits[i] != 0;
    tp += (p && t) ? 1 : 0;
    fp += (p && !t) ? 1 : 0;
    fn += (!p && t) ? 1 : 0;
  }
  const LesionSet ts = label_components(truth, connectivity);
  const LesionSet ps = label_components(pred, connectivity);
  const MatchResult mr = match_lesions(ts, ps, rule);
  return MetricsReport::from_counts(tp, fp, fn, mr.n_true, mr.n_pred, mr.n_matched_true,
                                    mr.n_matched_pred);
}

PixelTriple pixel_metrics(const LabelMask& pred, const LabelMask& truth) {
  const MetricsReport r = compute_metrics(pred, truth);
  return {r.pixel_iou, r.pixel_rec, r.pixel_pre};
}

PixelTriple lesion_metrics(const LabelMask& pred, const LabelMask& truth, int connectivity,
                           const MatchRule& rule) {
  const MetricsReport r = compute_metrics(pred, truth, connectivity, rule);
  return {r.lesion_iou, r.lesion_rec, r.lesion_pre};
}

MetricsReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("aggregate: empty report list");
  long long tp = 0, fp = 0, fn = 0, nt = 0, np = 0, mt = 0, mp = 0;
  for (const auto& r : reports) {
    tp += r.pixel_tp;
    fp += r.pixel_fp;
    fn += r.pixel_fn;
    nt += r.lesion_n_true;
    np += r.lesion_n_pred;
    mt += r.lesion_n_matched_true;
    mp += r.lesion_n_matched_pred;
  }
  return MetricsReport::from_counts(tp, fp, fn, nt, np, mt, mp);
}

MetricsReport aggregate_macro(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("aggregate_macro: empty report list");
  MetricsReport out;
  const double inv = 1.0 / static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.pixel_iou += r.pixel_iou * inv;
    out.pixel_rec += r.pixel_rec * inv;
    out.pixel_pre += r.pixel_pre * inv;
    out.lesion_iou += r.lesion_iou * inv;
    out.lesion_rec += r.lesion_rec * inv;
    out.lesion_pre += r.lesion_pre * inv;
    out.pixel_tp += r.pixel_tp;
    out.pixel_fp += r.pixel_fp;
    out.pixel_fn += r.pixel_fn;
    out.lesion_n_true += r.lesion_n_true;
    out.lesion_n_pred += r.lesion_n_pred;
    out.lesion_n_matched_true += r.lesion_n_matched_true;
    out.lesion_n_matched_pred += r.lesion_n_matched_pred;
  }
  return out;
}

}  // namespace hsl
