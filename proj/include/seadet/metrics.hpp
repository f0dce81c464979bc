#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seadet/box.hpp"
#include "seadet/common.hpp"

namespace seadet {

// ---- confusion matrix ----

// (C+1) x (C+1) counts; row = ground-truth class, column = predicted class.
// Index C is the background bucket for unmatched detections / ground truths.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int classes = 0)
      : num_classes(classes),
        counts(static_cast<std::size_t>((classes + 1) * (classes + 1)), 0) {}

  int background() const { return num_classes; }
  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt * (num_classes + 1) + pred)];
  }
  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt * (num_classes + 1) + pred)];
  }

  std::int64_t total_ground_truths() const {
    std::int64_t n = 0;
    for (int g = 0; g < num_classes; ++g)
      for (int p = 0; p <= num_classes; ++p) n += at(g, p);
    return n;
  }
  std::int64_t total_detections() const {
    std::int64_t n = 0;
    for (int p = 0; p < num_classes; ++p)
      for (int g = 0; g <= num_classes; ++g) n += at(g, p);
    return n;
  }
};

// Greedy confidence-ordered matching, class-agnostic: each detection takes the
// best-overlap unmatched ground truth at IoU >= threshold; the class pair is
// what lands in the matrix. Leftover detections hit the background row,
// leftover ground truths the background column.
inline ConfusionMatrix confusion_matrix(const std::vector<std::vector<Detection>>& preds,
                                        const std::vector<std::vector<GroundTruthBox>>& gts,
                                        int num_classes, Real iou_threshold) {
  check(preds.size() == gts.size(), "confusion_matrix: image count mismatch");
  ConfusionMatrix m(num_classes);
  for (std::size_t img = 0; img < preds.size(); ++img) {
    std::vector<int> order(preds[img].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return preds[img][static_cast<std::size_t>(a)].score >
             preds[img][static_cast<std::size_t>(b)].score;
    });
    std::vector<bool> taken(gts[img].size(), false);
    for (int oi : order) {
      const Detection& d = preds[img][static_cast<std::size_t>(oi)];
      check(d.class_id >= 0 && d.class_id < num_classes, "confusion_matrix: class id out of range");
      int best_g = -1;
      Real best_iou = 0;
      for (std::size_t g = 0; g < gts[img].size(); ++g) {
        if (taken[g]) continue;
        const Real ov = iou(d.box, gts[img][g].box);
        if (ov >= iou_threshold && ov > best_iou) {
          best_iou = ov;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        taken[static_cast<std::size_t>(best_g)] = true;
        m.at(gts[img][static_cast<std::size_t>(best_g)].class_id, d.class_id)++;
      } else {
        m.at(m.background(), d.class_id)++;
      }
    }
    for (std::size_t g = 0; g < gts[img].size(); ++g)
      if (!taken[g]) m.at(gts[img][g].class_id, m.background())++;
  }
  return m;
}

// ---- scalar rates ----

struct DetectionRates {
  std::optional<double> tpr, fpr, tnr, fnr, precision, recall;
};

// Rates from raw counts. A zero denominator leaves the rate unset instead of
// faking a 0. `strict_precision` switches precision's denominator from
// TP+FP to TP+FN for byte-compatible comparison against reports that use the
// recall-style form.
inline DetectionRates detection_rates(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                                      std::int64_t fn, bool strict_precision = false) {
  check(tp >= 0 && fp >= 0 && tn >= 0 && fn >= 0, "detection_rates: counts must be nonnegative");
  DetectionRates r;
  auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.tpr = ratio(tp, tp + fn);
  r.fpr = ratio(fp, fp + tn);
  r.tnr = ratio(tn, fp + tn);
  r.fnr = ratio(fn, tp + fn);
  r.recall = r.tpr;
  r.precision = strict_precision ? ratio(tp, tp + fn) : ratio(tp, tp + fp);
  return r;
}

// ---- average precision ----

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct ClassAP {
  int class_id = 0;
  double ap = 0;
  std::int64_t num_ground_truths = 0;
  std::vector<PrPoint> curve;  // in descending-confidence order
};

struct APResult {
  std::vector<ClassAP> per_class;
  double map = 0;  // mean over classes with at least one ground truth
};

namespace detail {

// area under the precision-recall points with the running-max envelope
// (all-points interpolation, no trapezoids)
inline double envelope_area(std::vector<PrPoint> pts) {
  if (pts.empty()) return 0;
  std::stable_sort(pts.begin(), pts.end(),
                   [](const PrPoint& a, const PrPoint& b) { return a.recall < b.recall; });
  for (std::size_t i = pts.size() - 1; i-- > 0;)
    pts[i].precision = std::max(pts[i].precision, pts[i + 1].precision);
  double area = 0, prev_r = 0;
  for (const PrPoint& p : pts) {
    area += (p.recall - prev_r) * p.precision;
    prev_r = p.recall;
  }
  return area;
}

}  // namespace detail

inline APResult average_precision_map(const std::vector<std::vector<Detection>>& preds,
                                      const std::vector<std::vector<GroundTruthBox>>& gts,
                                      int num_classes, Real iou_threshold) {
  check(preds.size() == gts.size(), "average_precision_map: image count mismatch");
  APResult res;
  double ap_sum = 0;
  int ap_classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    ClassAP ca;
    ca.class_id = c;
    struct Det {
      std::size_t image;
      std::size_t index;
      Real score;
    };
    std::vector<Det> dets;
    for (std::size_t img = 0; img < preds.size(); ++img) {
      for (std::size_t i = 0; i < preds[img].size(); ++i)
        if (preds[img][i].class_id == c) dets.push_back({img, i, preds[img][i].score});
      for (const auto& g : gts[img])
        if (g.class_id == c) ++ca.num_ground_truths;
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(gts.size());
    for (std::size_t img = 0; img < gts.size(); ++img) taken[img].resize(gts[img].size(), false);
    std::int64_t tp = 0, fp = 0;
    for (std::size_t di = 0; di < dets.size(); ++di) {
      const Det& d = dets[di];
      const Detection& det = preds[d.image][d.index];
      int best_g = -1;
      Real best_iou = 0;
      for (std::size_t g = 0; g < gts[d.image].size(); ++g) {
        if (gts[d.image][g].class_id != c || taken[d.image][g]) continue;
        const Real ov = iou(det.box, gts[d.image][g].box);
        if (ov >= iou_threshold && ov > best_iou) {
          best_iou = ov;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        taken[d.image][static_cast<std::size_t>(best_g)] = true;
        ++tp;
      } else {
        ++fp;
      }
      // a PR point exists only where a confidence cutoff can sit, i.e. after
      // the last detection of a tied-score group
      const bool group_end = di + 1 == dets.size() || dets[di + 1].score != d.score;
      if (group_end && ca.num_ground_truths > 0)
        ca.curve.push_back({static_cast<double>(tp) / static_cast<double>(ca.num_ground_truths),
                            static_cast<double>(tp) / static_cast<double>(tp + fp)});
    }
    ca.ap = ca.num_ground_truths > 0 ? detail::envelope_area(ca.curve) : 0.0;
    if (ca.num_ground_truths > 0) {
      ap_sum += ca.ap;
      ++ap_classes;
    }
    res.per_class.push_back(std::move(ca));
  }
  res.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  return res;
}

// ---- k-fold protocol ----

// Seeded shuffle, then contiguous chunks; the first n % k folds get the extra
// element. Disjoint and covering by construction.
inline std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed) {
  check(k >= 2, "kfold_split: k must be at least 2");
  check(k <= n, "kfold_split: k must not exceed the item count");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = n / k + (f < n % k ? 1 : 0);
    for (int i = 0; i < size; ++i) folds[static_cast<std::size_t>(f)].push_back(idx[pos++]);
  }
  return folds;
}

// 1-decimal display that matches reported tables: values are cut at the first
// decimal (never rounded up), with a tiny nudge so exact decimals like 98.6
// stored as 98.59999... still print as 98.6.
inline std::string truncate_1dp(double v) {
  const double t = std::floor(v * 10.0 + 1e-9) / 10.0;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << t;
  return os.str();
}

struct FoldSummary {
  double mean = 0;
  double stddev = 0;  // population
  std::string display;  // "<mean> ± <std>" at 1 decimal
};

inline FoldSummary summarize_fold_scores(const std::vector<double>& scores) {
  check(!scores.empty(), "summarize_fold_scores: empty score list");
  FoldSummary s;
  for (double v : scores) s.mean += v;
  s.mean /= static_cast<double>(scores.size());
  double var = 0;
  for (double v : scores) var += (v - s.mean) * (v - s.mean);
  var /= static_cast<double>(scores.size());
  s.stddev = std::sqrt(var);
  s.display = truncate_1dp(s.mean) + " ± " + truncate_1dp(s.stddev);
  return s;
}

// ---- report emitters ----

inline void write_csv(std::ostream& os, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  auto field = [](const std::string& f) {
    if (f.find_first_of(",\"\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char ch : f) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  };
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << field(cells[i]);
    os << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

inline std::string format_aligned_table(const std::vector<std::string>& header,
                                        const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  auto widen = [&](const std::vector<std::string>& cells) {
    check(cells.size() == header.size(), "format_aligned_table: ragged row");
    for (std::size_t i = 0; i < cells.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  widen(header);
  for (const auto& r : rows) widen(r);
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      os << cells[i] << std::string(width[i] - cells[i].size(), ' ');
      os << (i + 1 < cells.size() ? "  " : "");
    }
    os << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t wd : width) total += wd + 2;
  os << std::string(total > 2 ? total - 2 : total, '-') << "\n";
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace seadet
