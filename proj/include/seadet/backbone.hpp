#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "seadet/autodiff.hpp"
#include "seadet/ops.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

// Inverted-bottleneck block: depthwise conv -> pointwise expansion (K*T
// channels) -> swish with a trainable beta -> pointwise projection to T'
// channels -> shortcut iff shapes allow -> relu.
struct MBConvSpec {
  int in_channels = 0;      // K
  int kernel_size = 3;      // D
  int expansion = 4;        // T
  int out_channels = 0;     // T'
  int stride = 1;

  void validate() const {
    check(in_channels > 0 && kernel_size > 0 && expansion > 0 && out_channels > 0,
          "mbconv: channel, kernel and expansion sizes must be positive");
    check(stride == 1 || stride == 2, "mbconv: stride must be 1 or 2");
  }
  bool has_shortcut() const { return in_channels == out_channels && stride == 1; }
};

struct BackboneConfig {
  Real alpha = 1.0;              // resolution scaling factor
  std::vector<MBConvSpec> blocks;
  std::vector<int> taps;         // block indices (after which the level is tapped)

  void validate() const {
    check(alpha > 0, "backbone: alpha must be positive");
    check(!blocks.empty(), "backbone: needs at least one block");
    for (const auto& b : blocks) b.validate();
    for (std::size_t i = 1; i < blocks.size(); ++i)
      check(blocks[i].in_channels == blocks[i - 1].out_channels,
            "backbone: adjacent block channels must chain");
    check(!taps.empty(), "backbone: needs at least one tap");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      check(taps[i] >= 0 && taps[i] < static_cast<int>(blocks.size()), "backbone: tap out of range");
      check(i == 0 || taps[i] > taps[i - 1], "backbone: taps must be strictly deeper");
    }
  }

  // cumulative downsampling rate after block `index`
  int cumulative_stride(int index) const {
    int r = 1;
    for (int i = 0; i <= index; ++i) r *= blocks[static_cast<std::size_t>(i)].stride;
    return r;
  }

  // Toy-scale default: three taps at rates 8/16/32 with channels 8/16/32.
  static BackboneConfig toy(int image_channels = 3) {
    BackboneConfig cfg;
    cfg.blocks = {
        {image_channels, 3, 4, 8, 2},
        {8, 3, 4, 8, 2},
        {8, 3, 4, 8, 2},   // tap: rate 8
        {8, 3, 4, 16, 2},  // tap: rate 16
        {16, 3, 4, 32, 2}, // tap: rate 32
    };
    cfg.taps = {2, 3, 4};
    return cfg;
  }
};

// feature extent for the shorter side S at downsampling rate R
inline int compute_feature_resolution(Real alpha, int s, int r) {
  check(alpha > 0 && s > 0 && r > 0, "compute_feature_resolution: inputs must be positive");
  return static_cast<int>(std::ceil(alpha * static_cast<Real>(s) / static_cast<Real>(r)));
}

// Weights for one block, registered on a tape per forward call.
struct MBConvLayer {
  MBConvSpec spec;
  Parameter depthwise;    // {D, D, K}
  Parameter expand;       // {K, K*T}
  Parameter expand_bias;  // {K*T}
  Parameter project;      // {K*T, T'}
  Parameter project_bias; // {T'}
  Parameter beta;         // {1}, swish shape

  MBConvLayer() = default;
  MBConvLayer(const MBConvSpec& sp, const std::string& name, Rng& rng) : spec(sp) {
    spec.validate();
    const int k = spec.in_channels, d = spec.kernel_size;
    const int ke = k * spec.expansion, tp = spec.out_channels;
    // he-style fan-in scaling keeps activations in range without normalization
    depthwise = Parameter(name + ".depthwise",
                          random_normal<Real>({d, d, k}, rng, std::sqrt(2.0 / (d * d))));
    expand = Parameter(name + ".expand", random_normal<Real>({k, ke}, rng, std::sqrt(2.0 / k)));
    expand_bias = Parameter(name + ".expand_bias", Tensor({ke}));
    project = Parameter(name + ".project", random_normal<Real>({ke, tp}, rng, std::sqrt(2.0 / ke)));
    project_bias = Parameter(name + ".project_bias", Tensor({tp}));
    beta = Parameter(name + ".beta", Tensor::scalar(1.0));
  }

  std::vector<Parameter*> parameters() {
    return {&depthwise, &expand, &expand_bias, &project, &project_bias, &beta};
  }

  Var forward(Tape& tape, Var x) {
    const Tensor& in = tape.value(x);
    check(in.rank() == 3 && in.extent(2) == spec.in_channels,
          "mbconv: input channels must equal the block's in_channels");
    Var h = depthwise_conv(x, tape.parameter(depthwise), spec.stride);
    h = pointwise_conv(h, tape.parameter(expand));
    h = add_channel_bias(h, tape.parameter(expand_bias));
    h = swish(h, tape.parameter(beta));
    h = pointwise_conv(h, tape.parameter(project));
    h = add_channel_bias(h, tape.parameter(project_bias));
    if (spec.has_shortcut()) h = add(h, x);
    return relu(h);
  }
};

struct Backbone {
  BackboneConfig config;
  std::vector<MBConvLayer> layers;

  Backbone() = default;
  Backbone(BackboneConfig cfg, Rng& rng) : config(std::move(cfg)) {
    config.validate();
    for (std::size_t i = 0; i < config.blocks.size(); ++i)
      layers.emplace_back(config.blocks[i], "backbone.block" + std::to_string(i), rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers)
      for (Parameter* p : l.parameters()) out.push_back(p);
    return out;
  }

  // tapped pyramid, finest level first
  std::vector<Var> forward(Tape& tape, Var image) {
    const Tensor& in = tape.value(image);
    check(in.rank() == 3, "backbone: {H, W, C} image expected");
    const int deepest = config.cumulative_stride(config.taps.back());
    check(in.extent(0) >= deepest && in.extent(1) >= deepest,
          "backbone: image too small for the deepest tap");
    std::vector<Var> pyramid;
    Var h = image;
    std::size_t tap_i = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(tape, h);
      if (tap_i < config.taps.size() && config.taps[tap_i] == static_cast<int>(i)) {
        pyramid.push_back(h);
        ++tap_i;
      }
    }
    return pyramid;
  }
};

}  // namespace seadet
