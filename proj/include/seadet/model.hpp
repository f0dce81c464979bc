#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/backbone.hpp"
#include "seadet/box.hpp"
#include "seadet/fusion.hpp"
#include "seadet/head.hpp"
#include "seadet/ops.hpp"

namespace seadet {

struct DetectorConfig {
  int image_w = 64;
  int image_h = 64;
  int num_classes = 6;
  std::string classification_loss = "focal";  // "focal" or "ce"
  BackboneConfig backbone = BackboneConfig::toy();
  FusionConfig fusion;
  AnchorGridConfig anchor_grid;
  AssignmentThresholds assignment;
  FocalParams focal;
  Real confidence_threshold = 0.25;
  Real nms_iou_threshold = 0.5;

  void validate() const {
    check(image_w > 0 && image_h > 0, "detector: image extents must be positive");
    check(num_classes >= 1, "detector: needs at least one class");
    check(classification_loss == "focal" || classification_loss == "ce",
          "detector: classification loss must be 'focal' or 'ce'");
    backbone.validate();
    fusion.validate();
    anchor_grid.validate();
    assignment.validate();
    focal.validate();
  }
};

struct DetectorOutput {
  Var class_probs;   // {N, C+1}, softmaxed, background last
  Var box_offsets;   // {N, 4}
  Var finest_fused;  // finest fusion concat (explanation target)
};

struct LossBreakdown {
  Var total;        // classification + alpha_box * box, on the tape
  Real cls = 0;
  Real box = 0;
  int positives = 0;
  int counted = 0;
};

// Full detector: backbone pyramid -> top-down fusion -> per-level heads
// emitting class distributions and additive box offsets per anchor.
struct Detector {
  struct HeadLevel {
    Parameter stem, stem_bias;
    Parameter cls, cls_bias;
    Parameter box, box_bias;
  };

  DetectorConfig config;
  Backbone backbone;
  BiSkFpn fusion;
  std::vector<HeadLevel> head_levels;
  std::vector<LevelExtent> level_extents;
  std::vector<Box> anchor_boxes;

  Detector() = default;
  Detector(DetectorConfig cfg, Rng& rng) : config(std::move(cfg)) {
    config.validate();
    backbone = Backbone(config.backbone, rng);

    std::vector<int> channels;
    for (int tap : config.backbone.taps)
      channels.push_back(config.backbone.blocks[static_cast<std::size_t>(tap)].out_channels);
    fusion = BiSkFpn(config.fusion, channels, rng);

    int h = config.image_h, w = config.image_w;
    std::size_t tap_i = 0;
    for (std::size_t i = 0; i < config.backbone.blocks.size(); ++i) {
      const int s = config.backbone.blocks[i].stride;
      h = (h - 1) / s + 1;
      w = (w - 1) / s + 1;
      if (tap_i < config.backbone.taps.size() &&
          config.backbone.taps[tap_i] == static_cast<int>(i)) {
        level_extents.push_back({h, w, config.backbone.cumulative_stride(static_cast<int>(i))});
        ++tap_i;
      }
    }
    anchor_boxes =
        generate_anchor_grid(level_extents, config.image_w, config.image_h, config.anchor_grid);

    const int b = config.fusion.channel_budget;
    const int a = config.anchor_grid.per_cell();
    const int cp1 = config.num_classes + 1;
    for (std::size_t j = 0; j < level_extents.size(); ++j) {
      const std::string pfx = "head.level" + std::to_string(j);
      HeadLevel lv;
      lv.stem = Parameter(pfx + ".stem", random_normal<Real>({b, b}, rng, std::sqrt(2.0 / b)));
      lv.stem_bias = Parameter(pfx + ".stem_bias", Tensor({b}));
      lv.cls = Parameter(pfx + ".cls", random_normal<Real>({b, a * cp1}, rng, 0.01));
      Tensor cls_bias({a * cp1});
      // start near an all-background prior so early losses are small and stable
      for (int slot = 0; slot < a; ++slot)
        cls_bias[slot * cp1 + config.num_classes] = std::log(9.0 * config.num_classes);
      lv.cls_bias = Parameter(pfx + ".cls_bias", std::move(cls_bias));
      lv.box = Parameter(pfx + ".box", random_normal<Real>({b, a * 4}, rng, 0.01));
      lv.box_bias = Parameter(pfx + ".box_bias", Tensor({a * 4}));
      head_levels.push_back(std::move(lv));
    }
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = backbone.parameters();
    for (Parameter* p : fusion.parameters()) out.push_back(p);
    for (auto& lv : head_levels) {
      out.push_back(&lv.stem);
      out.push_back(&lv.stem_bias);
      out.push_back(&lv.cls);
      out.push_back(&lv.cls_bias);
      out.push_back(&lv.box);
      out.push_back(&lv.box_bias);
    }
    return out;
  }

  static bool is_shape_parameter(const Parameter& p) {
    const std::string suffix = ".beta";
    return p.name.size() >= suffix.size() &&
           p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  // everything that counts as a weight: decayed, regularized, checkpointed
  std::vector<Parameter*> weight_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : parameters())
      if (!is_shape_parameter(*p)) out.push_back(p);
    return out;
  }

  const std::vector<Box>& anchors() const { return anchor_boxes; }

  DetectorOutput forward(Tape& tape, Var image) {
    const Tensor& img = tape.value(image);
    check(img.rank() == 3 && img.extent(0) == config.image_h && img.extent(1) == config.image_w,
          "detector: image does not match the configured input extent");
    std::vector<Var> pyramid = backbone.forward(tape, image);
    FusionResult fused = fusion.forward(tape, pyramid);

    const int a = config.anchor_grid.per_cell();
    const int cp1 = config.num_classes + 1;
    std::vector<Var> cls_parts, box_parts;
    for (std::size_t j = 0; j < head_levels.size(); ++j) {
      HeadLevel& lv = head_levels[j];
      Var f = fused.maps[j];
      Var s = relu(add_channel_bias(pointwise_conv(f, tape.parameter(lv.stem)),
                                    tape.parameter(lv.stem_bias)));
      Var cls = add_channel_bias(pointwise_conv(s, tape.parameter(lv.cls)),
                                 tape.parameter(lv.cls_bias));
      Var box = add_channel_bias(pointwise_conv(s, tape.parameter(lv.box)),
                                 tape.parameter(lv.box_bias));
      const Tensor& ct = tape.value(cls);
      const std::int64_t rows = ct.extent(0) * ct.extent(1) * a;
      cls_parts.push_back(reshape(cls, {static_cast<int>(rows), cp1}));
      box_parts.push_back(reshape(box, {static_cast<int>(rows), 4}));
    }
    DetectorOutput out;
    out.class_probs = softmax_lastdim(concat_rows(cls_parts));
    out.box_offsets = concat_rows(box_parts);
    out.finest_fused = fused.fused;
    check(tape.value(out.class_probs).extent(0) ==
              static_cast<std::int64_t>(anchor_boxes.size()),
          "detector: anchor grid does not align with head outputs");
    return out;
  }

  LossBreakdown loss(Tape& tape, Var image, const std::vector<GroundTruthBox>& gts) {
    DetectorOutput out = forward(tape, image);
    return loss_from_output(tape, out, gts);
  }

  LossBreakdown loss_from_output(Tape& tape, const DetectorOutput& out,
                                 const std::vector<GroundTruthBox>& gts) {
    const int cp1 = config.num_classes + 1;
    AnchorAssignment assign = assign_anchors_to_targets(anchor_boxes, gts, config.assignment);

    std::vector<std::int64_t> counted_rows;
    std::vector<int> target_class;
    std::vector<std::int64_t> positive_rows;
    std::vector<int> positive_gt;
    for (std::size_t i = 0; i < anchor_boxes.size(); ++i) {
      if (assign.is_ignored(i)) continue;
      counted_rows.push_back(static_cast<std::int64_t>(i));
      if (assign.is_positive(i)) {
        const int g = assign.matched_gt[i];
        target_class.push_back(gts[static_cast<std::size_t>(g)].class_id);
        positive_rows.push_back(static_cast<std::int64_t>(i));
        positive_gt.push_back(g);
      } else {
        target_class.push_back(config.num_classes);  // background
      }
    }

    LossBreakdown lb;
    lb.positives = static_cast<int>(positive_rows.size());
    lb.counted = static_cast<int>(counted_rows.size());
    check(lb.counted > 0, "detector loss: no counted anchors");

    Var cls_loss;
    if (config.classification_loss == "ce") {
      Var counted_probs = gather_rows(out.class_probs, counted_rows);
      cls_loss = loss_classification_ce(tape, counted_probs, target_class);
    } else {
      std::vector<std::int64_t> flat(counted_rows.size());
      for (std::size_t k = 0; k < counted_rows.size(); ++k)
        flat[k] = counted_rows[k] * cp1 + target_class[k];
      Var p_t = gather_flat(out.class_probs, std::move(flat));
      cls_loss = loss_focal(tape, p_t, config.focal);
    }

    Var box_loss;
    if (positive_rows.empty()) {
      box_loss = tape.constant(Tensor::scalar(0));
    } else {
      Tensor targets({static_cast<int>(positive_rows.size()), 4});
      for (std::size_t k = 0; k < positive_rows.size(); ++k) {
        const Box& a = anchor_boxes[static_cast<std::size_t>(positive_rows[k])];
        const Box g = convert_box(gts[static_cast<std::size_t>(positive_gt[k])].box,
                                  BoxRepr::center_size);
        targets[static_cast<std::int64_t>(k) * 4 + 0] = g.cx() - a.cx();
        targets[static_cast<std::int64_t>(k) * 4 + 1] = g.cy() - a.cy();
        targets[static_cast<std::int64_t>(k) * 4 + 2] = g.w() - a.w();
        targets[static_cast<std::int64_t>(k) * 4 + 3] = g.h() - a.h();
      }
      Var predicted = gather_rows(out.box_offsets, positive_rows);
      box_loss = loss_box_smooth_l1(tape, predicted, targets);
    }

    lb.cls = tape.value(cls_loss)[0];
    lb.box = tape.value(box_loss)[0];
    lb.total = add(cls_loss, cmul(box_loss, loss_weights.alpha_box));
    return lb;
  }

  LossWeights loss_weights;  // alpha_box scales the box term; beta_reg reported via loss_total

  std::vector<Detection> detect(const Tensor& image) {
    Tape tape;
    tape.set_grad_enabled(false);
    DetectorOutput out = forward(tape, tape.constant(image));
    return decode_and_nms(tape.value(out.class_probs), tape.value(out.box_offsets), anchor_boxes,
                          config.confidence_threshold, config.nms_iou_threshold);
  }
};

}  // namespace seadet
