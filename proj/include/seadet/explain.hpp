#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seadet/image.hpp"
#include "seadet/model.hpp"
#include "seadet/tensor.hpp"

namespace seadet {

struct Heatmap {
  int class_id = 0;
  Tensor values;  // {H, W}, normalized to [0, 1]
};

// Channel-weighted class activation map, before upsampling/normalization.
// mode "gradcam": alpha_k = spatial mean of the gradient over channel k.
// mode "gradcam++": per-pixel second-order weights
//   w_ij = g_ij^2 / (2 g_ij^2 + (sum_ab A_ab) g_ij^3), alpha_k = sum_ij w_ij relu(g_ij),
// both followed by relu(sum_k alpha_k A_k).
inline Tensor compose_heatmap(const Tensor& activations, const Tensor& gradients,
                              const std::string& mode = "gradcam") {
  check(activations.rank() == 3 && activations.shape() == gradients.shape(),
        "heatmap: {H, W, K} activations and matching gradients expected");
  check(mode == "gradcam" || mode == "gradcam++", "heatmap: unknown mode " + mode);
  const int h = activations.extent(0), w = activations.extent(1), k = activations.extent(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  std::vector<Real> alpha(static_cast<std::size_t>(k), 0.0);
  for (int c = 0; c < k; ++c) {
    if (mode == "gradcam") {
      Real s = 0;
      for (std::int64_t p = 0; p < hw; ++p) s += gradients[p * k + c];
      alpha[static_cast<std::size_t>(c)] = s / static_cast<Real>(hw);
    } else {
      Real a_sum = 0;
      for (std::int64_t p = 0; p < hw; ++p) a_sum += activations[p * k + c];
      Real acc = 0;
      for (std::int64_t p = 0; p < hw; ++p) {
        const Real g = gradients[p * k + c];
        const Real denom = 2 * g * g + a_sum * g * g * g;
        if (denom != 0) acc += (g * g / denom) * std::max<Real>(g, 0);
      }
      alpha[static_cast<std::size_t>(c)] = acc;
    }
  }

  Tensor map({h, w});
  for (std::int64_t p = 0; p < hw; ++p) {
    Real s = 0;
    for (int c = 0; c < k; ++c) s += alpha[static_cast<std::size_t>(c)] * activations[p * k + c];
    map[p] = std::max<Real>(s, 0);
  }
  return map;
}

// Bilinear resize of an {H, W} grid; samples at (i + 0.5) * in/out - 0.5 with
// edge clamping (half-pixel centers, no corner alignment).
inline Tensor bilinear_upsample(const Tensor& src, int out_h, int out_w) {
  check(src.rank() == 2, "bilinear: {H, W} grid expected");
  check(out_h >= 1 && out_w >= 1, "bilinear: output extents must be positive");
  const int h = src.extent(0), w = src.extent(1);
  Tensor out({out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    const Real fy = std::clamp<Real>(
        (static_cast<Real>(i) + 0.5) * static_cast<Real>(h) / static_cast<Real>(out_h) - 0.5,
        0, static_cast<Real>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const Real ty = fy - static_cast<Real>(y0);
    for (int j = 0; j < out_w; ++j) {
      const Real fx = std::clamp<Real>(
          (static_cast<Real>(j) + 0.5) * static_cast<Real>(w) / static_cast<Real>(out_w) - 0.5,
          0, static_cast<Real>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const Real tx = fx - static_cast<Real>(x0);
      out[static_cast<std::int64_t>(i) * out_w + j] =
          (1 - ty) * ((1 - tx) * src[static_cast<std::int64_t>(y0) * w + x0] +
                      tx * src[static_cast<std::int64_t>(y0) * w + x1]) +
          ty * ((1 - tx) * src[static_cast<std::int64_t>(y1) * w + x0] +
                tx * src[static_cast<std::int64_t>(y1) * w + x1]);
    }
  }
  return out;
}

// Divide by the max; an identically-zero map stays zero.
inline void normalize_heatmap(Tensor& map) {
  Real mx = 0;
  for (std::int64_t i = 0; i < map.numel(); ++i) mx = std::max(mx, map[i]);
  if (mx > 0)
    for (std::int64_t i = 0; i < map.numel(); ++i) map[i] /= mx;
}

// Class-specific heatmap over the finest fused feature map. The class score
// is the best pre-suppression probability for `class_id` over all anchors;
// its gradient against the fused activations drives the channel weights.
inline Heatmap gradcam_heatmap(Detector& model, const Tensor& image, int class_id,
                               const std::string& mode = "gradcam") {
  check(class_id >= 0 && class_id < model.config.num_classes, "heatmap: class id out of range");
  for (Parameter* p : model.parameters()) p->reset_gradient();

  Tape tape;
  DetectorOutput out = model.forward(tape, tape.constant(image));
  const int cp1 = model.config.num_classes + 1;
  std::int64_t best = 0;
  {
    const Tensor& probs = tape.value(out.class_probs);
    Real best_p = -1;
    for (std::int64_t i = 0; i < probs.extent(0); ++i) {
      const Real p = probs[i * cp1 + class_id];
      if (p > best_p) {
        best_p = p;
        best = i;
      }
    }
  }
  Var score = sum(gather_flat(out.class_probs, {best * cp1 + class_id}));
  tape.backward(score);

  Tensor activations = tape.value(out.finest_fused);
  Tensor gradients = tape.grad(out.finest_fused);
  for (Parameter* p : model.parameters()) p->reset_gradient();

  Tensor map = compose_heatmap(activations, gradients, mode);
  map = bilinear_upsample(map, model.config.image_h, model.config.image_w);
  normalize_heatmap(map);
  return {class_id, std::move(map)};
}

inline std::filesystem::path heatmap_filename(const std::filesystem::path& image_path,
                                              int class_id) {
  return image_path.stem().string() + "_" + std::to_string(class_id) + ".pgm";
}

inline void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& hm) {
  const int h = hm.values.extent(0), w = hm.values.extent(1);
  ImageU8 img = ImageU8::filled(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(y, x, 0) = static_cast<std::uint8_t>(
          std::lround(255.0 * std::clamp<Real>(hm.values[static_cast<std::int64_t>(y) * w + x], 0, 1)));
  write_pnm(path, img);
}

// Composite for quick inspection: the image dimmed, red channel lifted by the
// heatmap.
inline void write_heatmap_overlay(const std::filesystem::path& path, const Tensor& image,
                                  const Heatmap& hm) {
  check(image.rank() == 3 && image.extent(2) == 3, "overlay: {H, W, 3} image expected");
  check(image.extent(0) == hm.values.extent(0) && image.extent(1) == hm.values.extent(1),
        "overlay: heatmap extents must match the image");
  const int h = image.extent(0), w = image.extent(1);
  ImageU8 img = ImageU8::filled(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Real heat = hm.values[static_cast<std::int64_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) {
        Real v = 0.6 * image[(static_cast<std::int64_t>(y) * w + x) * 3 + c];
        if (c == 0) v += 0.4 * heat + 0.2 * heat * heat;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp<Real>(v, 0, 1)));
      }
    }
  write_pnm(path, img);
}

}  // namespace seadet
