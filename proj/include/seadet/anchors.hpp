#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seadet/box.hpp"
#include "seadet/common.hpp"

namespace seadet {

struct AnchorShape {
  Real width = 0;
  Real height = 0;

  void validate() const { check(width > 0 && height > 0, "anchor shape extents must be positive"); }
};

struct AnchorConfig {
  std::vector<Real> aspect_ratios;                    // height / width, ascending
  std::vector<Real> scales;                           // ascending, merged
  std::vector<Real> templates{32, 64, 128, 256, 512};  // ascending snap grid
  Real merge_threshold = 1.25;

  void validate() const {
    check(!templates.empty(), "anchor config needs at least one template size");
    for (std::size_t i = 0; i < templates.size(); ++i) {
      check(templates[i] > 0, "template sizes must be positive");
      check(i == 0 || templates[i] > templates[i - 1], "template sizes must be strictly increasing");
    }
    check(merge_threshold > 1, "merge threshold must exceed 1");
    for (std::size_t i = 1; i < scales.size(); ++i)
      check(scales[i] >= scales[i - 1], "scales must be sorted ascending");
    for (Real a : aspect_ratios) check(a > 0, "aspect ratios must be positive");
    for (Real s : scales) check(s > 0, "scales must be positive");
  }
};

// 1 - IoU of the two shapes laid co-centered (shape-only comparison).
inline Real shape_jaccard_distance(const AnchorShape& a, const AnchorShape& b) {
  a.validate();
  b.validate();
  const Box ba = Box::center_size(0, 0, a.width, a.height);
  const Box bb = Box::center_size(0, 0, b.width, b.height);
  return Real(1) - iou(ba, bb);
}

struct ClusterOptions {
  int restarts = 10;
  int max_iterations = 100;
  bool median_update = true;  // false -> elementwise mean
};

inline Real clustering_objective(const std::vector<AnchorShape>& boxes,
                                 const std::vector<AnchorShape>& centroids) {
  Real total = 0;
  for (const auto& b : boxes) {
    Real best = std::numeric_limits<Real>::infinity();
    for (const auto& c : centroids) best = std::min(best, shape_jaccard_distance(b, c));
    total += best;
  }
  return total;
}

namespace detail {

inline Real median(std::vector<Real> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

// centroid update from an assignment; empty clusters keep their previous value
inline void update_centroids(const std::vector<AnchorShape>& boxes, const std::vector<int>& assign,
                             int k, std::vector<AnchorShape>& centroids,
                             const ClusterOptions& opt) {
  for (int c = 0; c < k; ++c) {
    std::vector<Real> ws, hs;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (assign[i] == c) {
        ws.push_back(boxes[i].width);
        hs.push_back(boxes[i].height);
      }
    if (ws.empty()) continue;
    AnchorShape& ctr = centroids[static_cast<std::size_t>(c)];
    if (opt.median_update) {
      ctr = {median(ws), median(hs)};
    } else {
      Real sw = 0, sh = 0;
      for (std::size_t i = 0; i < ws.size(); ++i) {
        sw += ws[i];
        sh += hs[i];
      }
      ctr = {sw / static_cast<Real>(ws.size()), sh / static_cast<Real>(hs.size())};
    }
  }
}

// Single-box reassignment polish after Lloyd convergence. Lloyd alone can park
// in a local optimum even on tiny inputs; trying every one-box move (and
// keeping strict improvements of the true objective) reliably reaches the
// global optimum there. Quadratic, so bounded to small instances — large ones
// rely on the restarts.
inline void refine_by_single_moves(const std::vector<AnchorShape>& boxes, int k,
                                   std::vector<AnchorShape>& centroids,
                                   const ClusterOptions& opt) {
  const std::size_t n = boxes.size();
  if (n > 64 || k < 2) return;
  std::vector<int> assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Real best_d = std::numeric_limits<Real>::infinity();
    for (int c = 0; c < k; ++c) {
      const Real d = shape_jaccard_distance(boxes[i], centroids[static_cast<std::size_t>(c)]);
      if (d < best_d) {
        best_d = d;
        assign[i] = c;
      }
    }
  }
  Real best_obj = clustering_objective(boxes, centroids);
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int original = assign[i];
      for (int c = 0; c < k; ++c) {
        if (c == original) continue;
        assign[i] = c;
        std::vector<AnchorShape> trial = centroids;
        update_centroids(boxes, assign, k, trial, opt);
        const Real obj = clustering_objective(boxes, trial);
        if (obj < best_obj) {
          best_obj = obj;
          centroids = trial;
          improved = true;
          break;  // keep the move; re-scan from the new state
        }
        assign[i] = original;
      }
    }
    if (!improved) break;
  }
}

// Every assignment of n boxes to k clusters (k^n of them, caller bounds the
// blowup), scored by the true objective with rule-derived centroids. Empty
// clusters duplicate the first centroid so the result always has k entries.
inline std::vector<AnchorShape> exhaustive_cluster(const std::vector<AnchorShape>& boxes, int k,
                                                   const ClusterOptions& opt) {
  const std::size_t n = boxes.size();
  std::vector<int> assign(n, 0);
  std::vector<AnchorShape> best;
  Real best_obj = std::numeric_limits<Real>::infinity();
  while (true) {
    std::vector<AnchorShape> centroids;
    for (int c = 0; c < k; ++c) {
      std::vector<int> members;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) members.push_back(static_cast<int>(i));
      if (members.empty()) continue;
      std::vector<AnchorShape> dummy(1);
      std::vector<int> zero(members.size(), 0);
      std::vector<AnchorShape> sub;
      for (int m : members) sub.push_back(boxes[static_cast<std::size_t>(m)]);
      update_centroids(sub, zero, 1, dummy, opt);
      centroids.push_back(dummy[0]);
    }
    const Real obj = clustering_objective(boxes, centroids);
    if (obj < best_obj) {
      best_obj = obj;
      best = centroids;
    }
    // odometer step over base-k digits
    std::size_t pos = 0;
    while (pos < n && ++assign[pos] == k) assign[pos++] = 0;
    if (pos == n) break;
  }
  while (static_cast<int>(best.size()) < k) best.push_back(best[0]);
  return best;
}

inline std::vector<AnchorShape> kmeans_once(const std::vector<AnchorShape>& boxes, int k,
                                            Rng& rng, const ClusterOptions& opt,
                                            int first_centroid = -1) {
  const int n = static_cast<int>(boxes.size());
  std::vector<AnchorShape> centroids;
  const int c0 = first_centroid >= 0 ? first_centroid : rng.uniform_int(0, n - 1);
  centroids.push_back(boxes[static_cast<std::size_t>(c0)]);
  while (static_cast<int>(centroids.size()) < k) {
    // farthest-point: the box whose nearest chosen centroid is farthest away
    int best_i = 0;
    Real best_d = -1;
    for (int i = 0; i < n; ++i) {
      Real d = std::numeric_limits<Real>::infinity();
      for (const auto& c : centroids)
        d = std::min(d, shape_jaccard_distance(boxes[static_cast<std::size_t>(i)], c));
      if (d > best_d) {
        best_d = d;
        best_i = i;
      }
    }
    centroids.push_back(boxes[static_cast<std::size_t>(best_i)]);
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best_c = 0;
      Real best_d = std::numeric_limits<Real>::infinity();
      for (int c = 0; c < k; ++c) {
        const Real d = shape_jaccard_distance(boxes[static_cast<std::size_t>(i)],
                                              centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best_c = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best_c) {
        assign[static_cast<std::size_t>(i)] = best_c;
        changed = true;
      }
    }
    if (!changed) break;
    update_centroids(boxes, assign, k, centroids, opt);
  }
  refine_by_single_moves(boxes, k, centroids, opt);
  return centroids;
}

}  // namespace detail

// Seeded k-means under the co-centered Jaccard distance; best of `restarts`
// independent runs (ties keep the earliest restart).
inline std::vector<AnchorShape> cluster_anchor_shapes(const std::vector<AnchorShape>& boxes,
                                                      int k, std::uint64_t seed,
                                                      const ClusterOptions& opt = {}) {
  check(!boxes.empty(), "cluster_anchor_shapes: empty input");
  check(k >= 1 && k <= static_cast<int>(boxes.size()),
        "cluster_anchor_shapes: k must be in [1, number of boxes]");
  for (const auto& b : boxes) b.validate();

  // Tiny instances get solved exactly: restarted Lloyd iterations can stall in
  // local optima even at n <= 8, and the small-instance optimum is a contract.
  Real assignments = 1;
  for (std::size_t i = 0; i < boxes.size() && assignments <= 4096; ++i)
    assignments *= static_cast<Real>(k);
  if (assignments <= 4096) return detail::exhaustive_cluster(boxes, k, opt);

  std::vector<AnchorShape> best;
  Real best_obj = std::numeric_limits<Real>::infinity();
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    // early restarts sweep every distinct starting box; later ones draw randomly
    const int first = r < static_cast<int>(boxes.size()) ? r : -1;
    std::vector<AnchorShape> c = detail::kmeans_once(boxes, k, rng, opt, first);
    const Real obj = clustering_objective(boxes, c);
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(c);
    }
  }
  return best;
}

// Collapse runs of similar scales: scanning left to right, successive values
// whose ratio to the run's base stays under the threshold join the run, and
// each run is replaced by the mean of its members. Repeats until no two
// adjacent outputs violate the threshold, so the means stay means of the
// original members.
inline std::vector<Real> merge_scales(const std::vector<Real>& scales, Real threshold) {
  check(threshold > 1, "merge threshold must exceed 1");
  for (std::size_t i = 1; i < scales.size(); ++i)
    check(scales[i] >= scales[i - 1], "merge_scales: input must be sorted ascending");
  for (Real s : scales) check(s > 0, "merge_scales: scales must be positive");

  struct Run {
    Real sum;
    std::int64_t count;
    Real value() const { return sum / static_cast<Real>(count); }
  };
  std::vector<Run> runs;
  runs.reserve(scales.size());
  for (Real s : scales) runs.push_back({s, 1});

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<Run> next;
    std::size_t i = 0;
    while (i < runs.size()) {
      Run cur = runs[i];
      const Real base = cur.value();
      std::size_t j = i + 1;
      while (j < runs.size() && runs[j].value() / base < threshold) {
        cur.sum += runs[j].sum;
        cur.count += runs[j].count;
        ++j;
        changed = true;
      }
      next.push_back(cur);
      i = j;
    }
    runs = std::move(next);
  }

  std::vector<Real> out;
  out.reserve(runs.size());
  for (const Run& r : runs) out.push_back(r.value());
  return out;
}

// Full hyperparameter search: cluster shapes, read aspect ratio h/w off each
// centroid, snap the larger side to the nearest template (ties take the
// smaller one), express scale relative to the snapped template, then merge.
inline AnchorConfig compute_anchor_hyperparameters(const std::vector<AnchorShape>& boxes, int k,
                                                   std::vector<Real> templates,
                                                   Real merge_threshold, std::uint64_t seed,
                                                   const ClusterOptions& opt = {}) {
  AnchorConfig cfg;
  cfg.templates = std::move(templates);
  cfg.merge_threshold = merge_threshold;
  cfg.scales.clear();
  cfg.validate();

  const std::vector<AnchorShape> centroids = cluster_anchor_shapes(boxes, k, seed, opt);
  std::vector<Real> raw_scales;
  for (const auto& c : centroids) {
    cfg.aspect_ratios.push_back(c.height / c.width);
    const Real s = std::max(c.width, c.height);
    Real best_t = cfg.templates[0];
    for (Real t : cfg.templates)
      if (std::abs(t - s) < std::abs(best_t - s)) best_t = t;
    raw_scales.push_back(s / best_t);
  }
  std::sort(cfg.aspect_ratios.begin(), cfg.aspect_ratios.end());
  std::sort(raw_scales.begin(), raw_scales.end());
  cfg.scales = merge_scales(raw_scales, merge_threshold);
  cfg.validate();
  return cfg;
}

// ---- config file round trip ----

inline void write_anchor_config(std::ostream& os, const AnchorConfig& cfg) {
  cfg.validate();
  os.precision(17);
  os << "anchors v1\n";
  os << "merge_threshold " << cfg.merge_threshold << "\n";
  os << "templates";
  for (Real t : cfg.templates) os << ' ' << t;
  os << "\naspect_ratios";
  for (Real a : cfg.aspect_ratios) os << ' ' << a;
  os << "\nscales";
  for (Real s : cfg.scales) os << ' ' << s;
  os << "\n";
}

inline AnchorConfig read_anchor_config(std::istream& is) {
  std::string line;
  data_check(static_cast<bool>(std::getline(is, line)) && line == "anchors v1",
             "unrecognized anchor config header");
  AnchorConfig cfg;
  cfg.templates.clear();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::vector<Real> vals;
    Real v;
    while (ls >> v) vals.push_back(v);
    if (key == "merge_threshold") {
      check(vals.size() == 1, "merge_threshold takes one value");
      cfg.merge_threshold = vals[0];
    } else if (key == "templates") {
      cfg.templates = vals;
    } else if (key == "aspect_ratios") {
      cfg.aspect_ratios = vals;
    } else if (key == "scales") {
      cfg.scales = vals;
    } else {
      throw DataError("unknown anchor config key: " + key);
    }
  }
  cfg.validate();
  return cfg;
}

inline void save_anchor_config(const std::string& path, const AnchorConfig& cfg) {
  std::ofstream f(path);
  data_check(f.good(), "cannot open for writing: " + path);
  write_anchor_config(f, cfg);
  data_check(f.good(), "write failed: " + path);
}

inline AnchorConfig load_anchor_config(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw DataError("cannot open anchor config: " + path);
  return read_anchor_config(f);
}

}  // namespace seadet
