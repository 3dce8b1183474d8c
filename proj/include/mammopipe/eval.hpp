#pragma once
// Classifier evaluation: confusion counts, TPR/FPR, one-vs-rest ROC curves
// and AUC, plus CSV / aligned-text / SVG report writers.
//
// ROC construction groups tied scores into a single step and accumulates the
// trapezoid area in integer units of 1/(2*pos*neg). That makes the curve AUC
// agree with the Mann-Whitney pair statistic (ties worth 1/2) exactly, not
// just approximately.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mammopipe::eval {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

// Predicted positive iff score >= threshold.
inline ConfusionCounts confusion(const std::vector<double>& scores,
                                 const std::vector<int>& labels,
                                 double threshold) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("confusion: scores/labels length mismatch");
  if (scores.empty())
    throw std::invalid_argument("confusion: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred && !truth) ++c.fp;
    else if (!pred && truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// A rate with a degenerate marker instead of a division by zero: an empty
// denominator yields value 0 and degenerate = true.
struct Rate {
  double value = 0.0;
  bool degenerate = false;
};

inline Rate tpr(const ConfusionCounts& c) {
  const std::size_t denom = c.tp + c.fn;
  if (denom == 0) return {0.0, true};
  return {static_cast<double>(c.tp) / static_cast<double>(denom), false};
}

inline Rate fpr(const ConfusionCounts& c) {
  const std::size_t denom = c.tn + c.fp;
  if (denom == 0) return {0.0, true};
  return {static_cast<double>(c.fp) / static_cast<double>(denom), false};
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // fpr and tpr both non-decreasing
  double auc = 0.0;
};

// Threshold sweep over the distinct scores (descending) plus +/-infinity
// sentinels, so the curve always starts at (0,0) and ends at (1,1).
inline RocCurve roc_curve(const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_curve: scores/labels length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l != 0 ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument(
        "roc_curve: needs at least one positive and one negative label");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.points.push_back(
      {0.0, 0.0, std::numeric_limits<double>::infinity()});

  // Integer accumulation: area2 counts twice the area in 1/(pos*neg) units.
  std::size_t tp = 0, fp = 0;
  std::uint64_t area2 = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double s = scores[idx[i]];
    std::size_t tp_step = 0, fp_step = 0;
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] != 0 ? tp_step : fp_step)++;
      ++i;
    }
    area2 += static_cast<std::uint64_t>(fp_step) * (2 * tp + tp_step);
    tp += tp_step;
    fp += fp_step;
    curve.points.push_back({static_cast<double>(fp) / neg,
                            static_cast<double>(tp) / pos, s});
  }
  curve.points.push_back(
      {1.0, 1.0, -std::numeric_limits<double>::infinity()});
  curve.auc = static_cast<double>(area2) /
              (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

// ---------------------------------------------------------------------------
// One-vs-rest reports

struct ClassRoc {
  std::string name;
  bool valid = false;   // false when the class is absent (or universal)
  std::string note;
  RocCurve curve;
};

struct OneVsRestReport {
  std::vector<ClassRoc> classes;
};

// `preds` holds one probability vector per sample; class c uses column c as
// the positive-class score against binarized labels.
inline OneVsRestReport one_vs_rest_report(
    const std::vector<std::vector<double>>& preds,
    const std::vector<int>& labels,
    const std::vector<std::string>& class_names) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("one_vs_rest: preds/labels length mismatch");
  if (preds.empty())
    throw std::invalid_argument("one_vs_rest: empty input");
  for (const auto& p : preds)
    if (p.size() != class_names.size())
      throw std::invalid_argument(
          "one_vs_rest: prediction vector length does not match class count");

  OneVsRestReport report;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    ClassRoc entry;
    entry.name = class_names[c];
    std::vector<double> scores(preds.size());
    std::vector<int> bin(preds.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      scores[i] = preds[i][c];
      bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
      pos += bin[i];
    }
    if (pos == 0 || pos == preds.size()) {
      entry.valid = false;
      entry.note = pos == 0 ? "class absent from labels"
                            : "class covers every label";
    } else {
      entry.curve = roc_curve(scores, bin);
      entry.valid = true;
    }
    report.classes.push_back(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report files

inline void write_roc_csv(const std::filesystem::path& path,
                          const OneVsRestReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "class,threshold,fpr,tpr\n";
  char buf[256];
  for (const auto& cls : report.classes) {
    if (!cls.valid) continue;
    for (const auto& p : cls.curve.points) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g\n",
                    cls.name.c_str(), p.threshold, p.fpr, p.tpr);
      os << buf;
    }
  }
}

// AUC comparison across data conditions; one row per class, one column per
// condition. Cells may be missing (negative) when a class was absent.
struct AucTable {
  std::vector<std::string> class_names;            // rows
  std::vector<std::string> condition_names;        // columns
  std::vector<std::vector<double>> values;         // [row][col], <0 = n/a
};

inline void write_auc_csv(const std::filesystem::path& path,
                          const AucTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "class";
  for (const auto& c : table.condition_names) os << "," << c;
  os << "\n";
  char buf[64];
  for (std::size_t r = 0; r < table.class_names.size(); ++r) {
    os << table.class_names[r];
    for (std::size_t c = 0; c < table.condition_names.size(); ++c) {
      if (table.values[r][c] < 0.0) {
        os << ",n/a";
      } else {
        std::snprintf(buf, sizeof buf, ",%.6f", table.values[r][c]);
        os << buf;
      }
    }
    os << "\n";
  }
}

inline void write_auc_text(const std::filesystem::path& path,
                           const AucTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  std::size_t name_w = 5;
  for (const auto& n : table.class_names) name_w = std::max(name_w, n.size());
  std::vector<std::size_t> col_w;
  for (const auto& c : table.condition_names)
    col_w.push_back(std::max<std::size_t>(c.size(), 8));

  os << std::string(name_w, ' ');
  for (std::size_t c = 0; c < table.condition_names.size(); ++c)
    os << "  " << std::string(col_w[c] - table.condition_names[c].size(), ' ')
       << table.condition_names[c];
  os << "\n";
  char buf[64];
  for (std::size_t r = 0; r < table.class_names.size(); ++r) {
    os << table.class_names[r]
       << std::string(name_w - table.class_names[r].size(), ' ');
    for (std::size_t c = 0; c < table.condition_names.size(); ++c) {
      std::string cell = "n/a";
      if (table.values[r][c] >= 0.0) {
        std::snprintf(buf, sizeof buf, "%.4f", table.values[r][c]);
        cell = buf;
      }
      os << "  " << std::string(col_w[c] - cell.size(), ' ') << cell;
    }
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// SVG plots

struct SvgSeries {
  std::string label;
  const RocCurve* curve = nullptr;
  bool dashed = false;  // dashed = original data, solid = preprocessed
};

// Self-contained single-plot SVG: unit ROC square, grid, diagonal, legend.
inline void write_roc_svg(const std::filesystem::path& path,
                          const std::string& title,
                          const std::vector<SvgSeries>& series) {
  const double W = 640, H = 480;
  const double ml = 60, mr = 20, mt = 40, mb = 50;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double fpr) { return ml + fpr * pw; };
  auto py = [&](double tpr) { return mt + (1.0 - tpr) * ph; };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
        "height=\"480\" viewBox=\"0 0 640 480\">\n"
     << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  os << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";

  for (int i = 0; i <= 10; i += 2) {
    double t = i / 10.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#dddddd\"/>\n",
                  px(t), py(0), px(t), py(1));
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#dddddd\"/>\n",
                  px(0), py(t), px(1), py(t));
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"11\">%.1f</text>\n",
                  px(t), py(0) + 18, t);
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" "
                  "font-family=\"sans-serif\" font-size=\"11\">%.1f</text>\n",
                  px(0) - 6, py(t) + 4, t);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"#999999\" stroke-dasharray=\"2,4\"/>\n",
                px(0), py(0), px(1), py(1));
  os << buf;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                "fill=\"none\" stroke=\"black\"/>\n",
                ml, mt, pw, ph);
  os << buf;
  os << "<text x=\"320\" y=\"470\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"13\">False Positive "
        "Rate</text>\n";
  os << "<text x=\"16\" y=\"240\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"13\" "
        "transform=\"rotate(-90 16 240)\">True Positive Rate</text>\n";

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (!series[s].curve) continue;
    os << "<polyline fill=\"none\" stroke=\"" << kColors[s % 4]
       << "\" stroke-width=\"1.8\"";
    if (series[s].dashed) os << " stroke-dasharray=\"6,4\"";
    os << " points=\"";
    for (const auto& p : series[s].curve->points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p.fpr), py(p.tpr));
      os << buf;
    }
    os << "\"/>\n";
    double ly = mt + 18 + 18 * static_cast<double>(s);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"%s\" stroke-width=\"1.8\"%s/>\n",
                  ml + pw - 180, ly, ml + pw - 150, ly, kColors[s % 4],
                  series[s].dashed ? " stroke-dasharray=\"6,4\"" : "");
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"12\">%s (AUC %.3f)</text>\n",
                  ml + pw - 144, ly + 4, series[s].label.c_str(),
                  series[s].curve->auc);
    os << buf;
  }
  os << "</svg>\n";
}

}  // namespace mammopipe::eval
