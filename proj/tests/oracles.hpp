#pragma once

// Independent reference implementations used only by tests. Deliberately
// written in the most literal way possible (quadruple loops, no shared code
// with the library) so they can serve as oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "seadet/anchors.hpp"
#include "seadet/tensor.hpp"

namespace oracle {

using seadet::Tensor;

// depthwise conv, zero padding (d-1)/2, out = (h-1)/stride + 1
inline Tensor depthwise_conv(const Tensor& x, const Tensor& k, int stride) {
  const int h = x.extent(0), w = x.extent(1), c = x.extent(2), d = k.extent(0);
  const int pad = (d - 1) / 2;
  const int oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  Tensor out({oh, ow, c});
  for (int y = 0; y < oh; ++y)
    for (int xx = 0; xx < ow; ++xx)
      for (int cc = 0; cc < c; ++cc) {
        double acc = 0;
        for (int ky = 0; ky < d; ++ky)
          for (int kx = 0; kx < d; ++kx) {
            const int iy = y * stride + ky - pad;
            const int ix = xx * stride + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            acc += x.at(iy, ix, cc) * k.at(ky, kx, cc);
          }
        out.at(y, xx, cc) = acc;
      }
  return out;
}

// transposed conv with kernel {d, d, cin, cout}: every input pixel stamps a
// d x d x cout patch into the output at (y*stride, x*stride)
inline Tensor transposed_conv(const Tensor& x, const Tensor& k, int stride) {
  const int h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const int d = k.extent(0), cout = k.extent(3);
  Tensor out({(h - 1) * stride + d, (w - 1) * stride + d, cout});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ky = 0; ky < d; ++ky)
        for (int kx = 0; kx < d; ++kx)
          for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
              out.at(y * stride + ky, xx * stride + kx, co) +=
                  x.at(y, xx, ci) *
                  k[(((static_cast<std::int64_t>(ky) * d + kx) * cin) + ci) * cout + co];
  return out;
}

inline Tensor softmax_rows(const Tensor& x, std::int64_t rows, std::int64_t cols) {
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (std::int64_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(x[r * cols + j]));
    double z = 0;
    for (std::int64_t j = 0; j < cols; ++j) z += std::exp(x[r * cols + j] - mx);
    for (std::int64_t j = 0; j < cols; ++j) out[r * cols + j] = std::exp(x[r * cols + j] - mx) / z;
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// Average precision the slow way: for EVERY distinct confidence cutoff,
// re-run greedy matching from scratch on the detections at or above the
// cutoff, record one (recall, precision) point, then integrate the
// running-max envelope stepwise. One class at a time.
inline double brute_force_ap(const std::vector<std::vector<seadet::Detection>>& preds,
                             const std::vector<std::vector<seadet::GroundTruthBox>>& gts,
                             int class_id, double iou_threshold) {
  std::int64_t num_gt = 0;
  for (const auto& image : gts)
    for (const auto& g : image) num_gt += g.class_id == class_id;
  if (num_gt == 0) return 0.0;

  std::vector<double> cutoffs;
  for (const auto& image : preds)
    for (const auto& d : image)
      if (d.class_id == class_id) cutoffs.push_back(d.score);
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

  struct Point {
    double recall, precision;
  };
  std::vector<Point> pts;
  for (double cutoff : cutoffs) {
    std::int64_t tp = 0, fp = 0;
    for (std::size_t img = 0; img < preds.size(); ++img) {
      std::vector<const seadet::Detection*> kept;
      for (const auto& d : preds[img])
        if (d.class_id == class_id && d.score >= cutoff) kept.push_back(&d);
      std::stable_sort(kept.begin(), kept.end(),
                       [](const seadet::Detection* a, const seadet::Detection* b) {
                         return a->score > b->score;
                       });
      std::vector<bool> taken(gts[img].size(), false);
      for (const seadet::Detection* d : kept) {
        int best_g = -1;
        double best_iou = 0;
        for (std::size_t g = 0; g < gts[img].size(); ++g) {
          if (gts[img][g].class_id != class_id || taken[g]) continue;
          const double ov = seadet::iou(d->box, gts[img][g].box);
          if (ov >= iou_threshold && ov > best_iou) {
            best_iou = ov;
            best_g = static_cast<int>(g);
          }
        }
        if (best_g >= 0) {
          taken[static_cast<std::size_t>(best_g)] = true;
          ++tp;
        } else {
          ++fp;
        }
      }
    }
    pts.push_back({static_cast<double>(tp) / static_cast<double>(num_gt),
                   tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0});
  }

  std::stable_sort(pts.begin(), pts.end(),
                   [](const Point& a, const Point& b) { return a.recall < b.recall; });
  for (std::size_t i = pts.size(); i-- > 1;)
    pts[i - 1].precision = std::max(pts[i - 1].precision, pts[i].precision);
  double area = 0, prev = 0;
  for (const Point& p : pts) {
    area += (p.recall - prev) * p.precision;
    prev = p.recall;
  }
  return area;
}

// Best clustering objective over every assignment of n boxes to at most k
// clusters, with centroids derived from the assignment by the same elementwise
// median rule the library uses. Feasible for n <= 8, k <= 2 (k^n assignments).
inline double exhaustive_partition_optimum(const std::vector<seadet::AnchorShape>& boxes, int k) {
  const int n = static_cast<int>(boxes.size());
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    return m % 2 ? v[m / 2] : (v[m / 2 - 1] + v[m / 2]) / 2;
  };
  std::int64_t total = 1;
  for (int i = 0; i < n; ++i) total *= k;
  double best = std::numeric_limits<double>::infinity();
  for (std::int64_t code = 0; code < total; ++code) {
    std::int64_t c = code;
    std::vector<int> assign(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      assign[static_cast<std::size_t>(i)] = static_cast<int>(c % k);
      c /= k;
    }
    std::vector<seadet::AnchorShape> centroids;
    for (int cl = 0; cl < k; ++cl) {
      std::vector<double> ws, hs;
      for (int i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == cl) {
          ws.push_back(boxes[static_cast<std::size_t>(i)].width);
          hs.push_back(boxes[static_cast<std::size_t>(i)].height);
        }
      if (!ws.empty()) centroids.push_back({median(ws), median(hs)});
    }
    best = std::min(best, static_cast<double>(seadet::clustering_objective(boxes, centroids)));
  }
  return best;
}

}  // namespace oracle
