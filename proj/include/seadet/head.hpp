#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/box.hpp"
#include "seadet/ops.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

// ---------------------------------------------------------------------------
// anchor grids

struct AnchorGridConfig {
  std::vector<Real> scales = {1.0};
  std::vector<Real> aspect_ratios = {1.0};  // h/w
  Real base_factor = 4.0;                   // anchor base size = base_factor * level stride

  int per_cell() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
  void validate() const {
    check(!scales.empty() && !aspect_ratios.empty(), "anchor grid: needs scales and aspects");
    for (Real s : scales) check(s > 0, "anchor grid: scales must be positive");
    for (Real a : aspect_ratios) check(a > 0, "anchor grid: aspect ratios must be positive");
    check(base_factor > 0, "anchor grid: base factor must be positive");
  }
};

struct LevelExtent {
  int height = 0;
  int width = 0;
  int stride = 0;
};

// Unit-space center/size anchors, flat order: level-major, then row-major
// cells, then scale-major/aspect-minor per cell. This matches a head output
// laid out as {H, W, A*K} viewed as an (H*W*A) x K matrix.
inline std::vector<Box> generate_anchor_grid(const std::vector<LevelExtent>& levels,
                                             int image_w, int image_h,
                                             const AnchorGridConfig& cfg) {
  cfg.validate();
  check(image_w > 0 && image_h > 0, "anchor grid: image extents must be positive");
  check(!levels.empty(), "anchor grid: needs at least one level");
  std::vector<Box> anchors;
  for (const auto& lv : levels) {
    check(lv.height > 0 && lv.width > 0 && lv.stride > 0, "anchor grid: bad level extent");
    for (int y = 0; y < lv.height; ++y)
      for (int x = 0; x < lv.width; ++x)
        for (Real s : cfg.scales)
          for (Real ar : cfg.aspect_ratios) {
            const Real size_px = cfg.base_factor * static_cast<Real>(lv.stride) * s;
            const Real w = size_px / std::sqrt(ar) / static_cast<Real>(image_w);
            const Real h = size_px * std::sqrt(ar) / static_cast<Real>(image_h);
            const Real cx = (static_cast<Real>(x) + 0.5) / static_cast<Real>(lv.width);
            const Real cy = (static_cast<Real>(y) + 0.5) / static_cast<Real>(lv.height);
            anchors.push_back(Box::center_size(cx, cy, w, h, BoxSpace::unit));
          }
  }
  return anchors;
}

// ---------------------------------------------------------------------------
// anchor-to-target assignment

struct AssignmentThresholds {
  Real positive = 0.5;
  Real negative = 0.4;
  void validate() const {
    check(positive > negative, "assignment: positive threshold must exceed negative");
  }
};

struct AnchorAssignment {
  // per anchor: matched GT index when positive, kNegative, or kIgnored
  static constexpr int kNegative = -1;
  static constexpr int kIgnored = -2;
  std::vector<int> matched_gt;
  AssignmentThresholds thresholds;

  bool is_positive(std::size_t a) const { return matched_gt[a] >= 0; }
  bool is_negative(std::size_t a) const { return matched_gt[a] == kNegative; }
  bool is_ignored(std::size_t a) const { return matched_gt[a] == kIgnored; }
  int positives() const {
    int n = 0;
    for (int m : matched_gt) n += m >= 0;
    return n;
  }
};

// Positive iff best IoU >= thresholds.positive (matched to the argmax GT, ties
// to the lowest GT index); negative iff best IoU < thresholds.negative;
// ignored otherwise. Each GT additionally claims its argmax anchor as positive
// (requires nonzero overlap; competing claims go to the higher-IoU GT).
inline AnchorAssignment assign_anchors_to_targets(const std::vector<Box>& anchors,
                                                  const std::vector<GroundTruthBox>& gts,
                                                  AssignmentThresholds thresholds = {}) {
  check(!anchors.empty(), "assignment: anchors must be nonempty");
  thresholds.validate();
  AnchorAssignment out;
  out.thresholds = thresholds;
  out.matched_gt.assign(anchors.size(), AnchorAssignment::kNegative);
  if (gts.empty()) return out;

  std::vector<Real> best_iou_per_gt(gts.size(), 0.0);
  std::vector<std::size_t> best_anchor_per_gt(gts.size(), 0);
  std::vector<Real> claim_iou(anchors.size(), 0.0);

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    Real best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const Real v = iou(anchors[a], gts[g].box);
      if (v > best) {
        best = v;
        best_g = g;
      }
      if (v > best_iou_per_gt[g]) {
        best_iou_per_gt[g] = v;
        best_anchor_per_gt[g] = a;
      }
    }
    if (best >= thresholds.positive)
      out.matched_gt[a] = static_cast<int>(best_g);
    else if (best < thresholds.negative)
      out.matched_gt[a] = AnchorAssignment::kNegative;
    else
      out.matched_gt[a] = AnchorAssignment::kIgnored;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (best_iou_per_gt[g] <= 0.0) continue;  // nothing overlaps this GT
    const std::size_t a = best_anchor_per_gt[g];
    if (best_iou_per_gt[g] > claim_iou[a]) {
      claim_iou[a] = best_iou_per_gt[g];
      out.matched_gt[a] = static_cast<int>(g);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

struct LossWeights {
  Real alpha_box = 1.0;
  Real beta_reg = 0.0;
  void validate() const {
    check(std::isfinite(alpha_box) && std::isfinite(beta_reg) && alpha_box >= 0 && beta_reg >= 0,
          "loss weights: must be finite and nonnegative");
  }
};

struct FocalParams {
  Real alpha_t = 0.25;
  Real gamma = 2.0;
  void validate() const {
    check(alpha_t > 0 && alpha_t <= 1, "focal: alpha_t must be in (0, 1]");
    check(gamma >= 0, "focal: gamma must be nonnegative");
  }
};

inline constexpr Real kProbEps = 1e-12;

// Mean over rows of -log(probability at the target class). `probs` is an
// {N, C} tensor of per-row distributions; rows must sum to 1 within 1e-6.
inline Var loss_classification_ce(Tape& tape, Var probs, const std::vector<int>& target_class) {
  const Tensor& p = tape.value(probs);
  check(p.rank() == 2, "ce loss: {N, C} probabilities expected");
  const std::int64_t n = p.extent(0), c = p.extent(1);
  check(static_cast<std::int64_t>(target_class.size()) == n, "ce loss: one target per row");
  for (std::int64_t i = 0; i < n; ++i) {
    Real row = 0;
    for (std::int64_t j = 0; j < c; ++j) row += p[i * c + j];
    if (!std::isfinite(row)) throw NumericError("ce loss: non-finite probabilities");
    check(std::abs(row - 1.0) <= 1e-6, "ce loss: prediction row does not sum to 1");
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    check(target_class[static_cast<std::size_t>(i)] >= 0 &&
              target_class[static_cast<std::size_t>(i)] < c,
          "ce loss: target class out of range");
    idx[static_cast<std::size_t>(i)] = i * c + target_class[static_cast<std::size_t>(i)];
  }
  Var p_true = gather_flat(probs, std::move(idx));
  return cmul(mean(vlog(p_true, kProbEps)), Real(-1));
}

// Mean of -alpha_t * (1 - p_t)^gamma * log(p_t) over entries of `p_t`.
inline Var loss_focal(Tape& tape, Var p_t, FocalParams params = {}) {
  params.validate();
  const Tensor& p = tape.value(p_t);
  check(p.numel() > 0, "focal loss: needs at least one probability");
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    if (!std::isfinite(p[i])) throw NumericError("focal loss: non-finite probabilities");
    check(p[i] >= 0 && p[i] <= 1, "focal loss: probabilities must lie in [0, 1]");
  }
  Var modulator = pow_const(cadd(cmul(p_t, Real(-1)), Real(1)), params.gamma);
  Var weighted = mul(modulator, vlog(p_t, kProbEps));
  return cmul(mean(weighted), -params.alpha_t);
}

// Mean over positive anchors of the component-summed smooth-L1 penalty.
// `predicted` is a {P, 4} Var; `target` the matching constant offsets.
inline Var loss_box_smooth_l1(Tape& tape, Var predicted, const Tensor& target) {
  // copy the row count out before recording ops: tape storage may reallocate
  const int rows = tape.value(predicted).extent(0);
  check(tape.value(predicted).rank() == 2 && tape.value(predicted).extent(1) == 4,
        "box loss: {P, 4} offsets expected");
  check(tape.value(predicted).same_shape(target), "box loss: prediction/target shape mismatch");
  if (rows == 0) return tape.constant(Tensor::scalar(0));
  Var diff = sub(predicted, tape.constant(target));
  return cmul(sum(smooth_l1(diff)), Real(1) / static_cast<Real>(rows));
}

// Mean squared entry over the given weight tensors. Callers pass the model's
// weight set; shape parameters (the swish betas) stay out of it.
inline Real loss_regularization(const std::vector<const Parameter*>& weights) {
  Real sum_sq = 0;
  std::int64_t count = 0;
  for (const Parameter* w : weights) {
    check(w != nullptr, "regularization: null parameter");
    sum_sq += static_cast<Real>((w->value.data() * w->value.data()).sum());
    count += w->value.numel();
  }
  if (count == 0) return 0;
  return sum_sq / static_cast<Real>(count);
}

inline Real loss_total(Real l_cls, Real l_box, const std::vector<const Parameter*>& weights,
                       LossWeights w) {
  w.validate();
  check(std::isfinite(l_cls) && std::isfinite(l_box), "total loss: components must be finite");
  return l_cls + w.alpha_box * l_box + w.beta_reg * loss_regularization(weights);
}

// ---------------------------------------------------------------------------
// decoding

// Offsets are additive in unit center/size space; anchors and outputs share
// flat ordering. `probs` is {N, C+1} with the background column last; `offsets`
// is {N, 4} as (dcx, dcy, dw, dh).
inline std::vector<Detection> decode_and_nms(const Tensor& probs, const Tensor& offsets,
                                             const std::vector<Box>& anchors,
                                             Real confidence_threshold = 0.25,
                                             Real nms_iou_threshold = 0.5) {
  check(probs.rank() == 2 && offsets.rank() == 2 && offsets.extent(1) == 4,
        "decode: {N, C+1} probs and {N, 4} offsets expected");
  check(probs.extent(0) == static_cast<std::int64_t>(anchors.size()) &&
            offsets.extent(0) == probs.extent(0),
        "decode: anchors must align with head outputs");
  check(probs.extent(1) >= 2, "decode: needs at least one class plus background");
  const std::int64_t n = probs.extent(0);
  const std::int64_t num_classes = probs.extent(1) - 1;

  struct Candidate {
    Real score;
    int class_id;
    std::int64_t anchor;
    Box box;
  };
  std::vector<Candidate> cands;
  for (std::int64_t i = 0; i < n; ++i) {
    const Box& a = anchors[static_cast<std::size_t>(i)];
    const Real cx = a.cx() + offsets[i * 4 + 0];
    const Real cy = a.cy() + offsets[i * 4 + 1];
    const Real w = std::max<Real>(a.w() + offsets[i * 4 + 2], 1e-6);
    const Real h = std::max<Real>(a.h() + offsets[i * 4 + 3], 1e-6);
    const Box b = Box::center_size(cx, cy, w, h, BoxSpace::unit);
    for (std::int64_t c = 0; c < num_classes; ++c) {
      const Real score = probs[i * probs.extent(1) + c];
      if (score < confidence_threshold) continue;
      cands.push_back({score, static_cast<int>(c), i, b});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.class_id != y.class_id) return x.class_id < y.class_id;
    return x.anchor < y.anchor;
  });

  std::vector<Detection> kept;
  for (const Candidate& c : cands) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != c.class_id) continue;
      if (iou(k.box, c.box) > nms_iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back({c.class_id, c.score, c.box});
  }
  return kept;  // already in descending score order
}

}  // namespace seadet
