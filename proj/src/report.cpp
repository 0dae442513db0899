#include "hsl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace hsl {

std::vector<EpochRecord> parse_epoch_log_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("epoch log: empty file");
  if (line != epoch_log_header())
    throw ParseError("epoch log: unexpected header '" + line + "'");
  std::vector<EpochRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EpochRecord r;
    double vals[9];
    std::istringstream ls(line);
    std::string field;
    int i = 0;
    while (std::getline(ls, field, ',')) {
      if (i >= 9) break;
      try {
        vals[i] = std::stod(field);
      } catch (const std::exception&) {
        throw ParseError("epoch log: bad number '" + field + "' on line " + std::to_string(line_no));
      }
      ++i;
    }
    if (i != 9)
      throw ParseError("epoch log: expected 9 fields on line " + std::to_string(line_no));
    r.stage = static_cast<int>(vals[0]);
    r.epoch = static_cast<int>(vals[1]);
    r.train_loss = vals[2];
    r.validation.pixel_iou = vals[3];
    r.validation.pixel_rec = vals[4];
    r.validation.pixel_pre = vals[5];
    r.validation.lesion_iou = vals[6];
    r.validation.lesion_rec = vals[7];
    r.validation.lesion_pre = vals[8];
    out.push_back(r);
  }
  return out;
}

namespace {

struct Series {
  std::string label;
  std::vector<double> xs, ys;
};

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// One chart panel with axes, tick labels, and a polyline per series.
void render_panel(std::string& svg, double ox, double oy, double w, double h,
                  const std::string& title, const std::vector<Series>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double x : s.xs) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    for (double y : s.ys) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad_y = 0.05 * (ymax - ymin);
  ymin -= pad_y;
  ymax += pad_y;

  auto px = [&](double x) { return ox + (x - xmin) / (xmax - xmin) * w; };
  auto py = [&](double y) { return oy + h - (y - ymin) / (ymax - ymin) * h; };

  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                "stroke=\"#444\"/>\n",
                ox, oy, w, h);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\">%s</text>\n",
                ox + w / 2, oy - 8, title.c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%s</text>\n",
                ox - 4, py(ymax - pad_y) + 4, fmt1(ymax - pad_y).c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%s</text>\n",
                ox - 4, py(ymin + pad_y) + 4, fmt1(ymin + pad_y).c_str());
  svg += buf;

  int color = 0;
  double legend_y = oy + 14;
  for (const auto& s : series) {
    std::string points;
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      char pbuf[64];
      std::snprintf(pbuf, sizeof(pbuf), "%.2f,%.2f ", px(s.xs[i]), py(s.ys[i]));
      points += pbuf;
    }
    const char* col = kColors[color % 4];
    std::snprintf(buf, sizeof(buf),
                  "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\" points=\"%s\"/>\n",
                  col, points.c_str());
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" fill=\"%s\">%s</text>\n", ox + w - 70,
                  legend_y, col, s.label.c_str());
    svg += buf;
    legend_y += 12;
    ++color;
  }
}

}  // namespace

std::string render_curves_svg(const std::vector<EpochRecord>& log) {
  std::map<int, Series> loss_by_stage, iou_by_stage;
  for (const auto& r : log) {
    auto& ls = loss_by_stage[r.stage];
    ls.label = "stage " + std::to_string(r.stage);
    ls.xs.push_back(r.epoch);
    ls.ys.push_back(r.train_loss);
    auto& is = iou_by_stage[r.stage];
    is.label = "stage " + std::to_string(r.stage);
    is.xs.push_back(r.epoch);
    is.ys.push_back(r.validation.pixel_iou);
  }
  std::vector<Series> loss_series, iou_series;
  for (auto& [_, s] : loss_by_stage) loss_series.push_back(std::move(s));
  for (auto& [_, s] : iou_by_stage) iou_series.push_back(std::move(s));

  std::string svg =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"320\" "
      "viewBox=\"0 0 760 320\">\n"
      "<rect width=\"760\" height=\"320\" fill=\"white\"/>\n";
  render_panel(svg, 50, 40, 300, 240, "training loss", loss_series);
  render_panel(svg, 420, 40, 300, 240, "validation pixel IoU", iou_series);
  svg += "</svg>\n";
  return svg;
}

std::string summary_table(const std::vector<EpochRecord>& log) {
  std::map<int, const EpochRecord*> best;
  for (const auto& r : log) {
    auto it = best.find(r.stage);
    if (it == best.end() || r.validation.pixel_iou > it->second->validation.pixel_iou)
      best[r.stage] = &r;
  }
  std::string out =
      "stage  best_epoch  train_loss   px_iou  px_rec  px_pre  ls_iou  ls_rec  ls_pre\n";
  for (const auto& [stage, r] : best) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%5d  %10d  %10.4f   %6.4f  %6.4f  %6.4f  %6.4f  %6.4f  %6.4f\n",
                  stage, r->epoch, r->train_loss, r->validation.pixel_iou, r->validation.pixel_rec,
                  r->validation.pixel_pre, r->validation.lesion_iou, r->validation.lesion_rec,
                  r->validation.lesion_pre);
    out += buf;
  }
  return out;
}

}  // namespace hsl
